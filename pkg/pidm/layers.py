"""
Created on 2026-10-18

@author: wf

Parameter storage and the transformer building blocks shared by the
backbone, the perceiver resampler and the image decoder.
"""

import logging
import zlib
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np

from pidm import tensor as T
from pidm.tensor import Tensor, resolve_dtype

logger = logging.getLogger(__name__)

INIT_STD = 0.02


class ParamStore:
    """
    named trainable tensors with seeded GPT-2 style initialization

    Each parameter draws from its own generator seeded by (seed, crc32(name)),
    so initial values do not depend on creation order.
    """

    def __init__(self, seed: int = 0, dtype: str = "f32"):
        self.seed = seed
        self.dtype = resolve_dtype(dtype)
        self.params: Dict[str, Tensor] = {}

    def _rng(self, name: str) -> np.random.Generator:
        return np.random.default_rng([self.seed, zlib.crc32(name.encode("utf-8"))])

    def _add(self, name: str, data: np.ndarray) -> Tensor:
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name}")
        param = Tensor.parameter(data, name=name, dtype=self.dtype)
        self.params[name] = param
        return param

    def normal(self, name: str, shape: Tuple[int, ...], std: float = INIT_STD) -> Tensor:
        """
        truncated normal: draws beyond two standard deviations are redrawn
        """
        rng = self._rng(name)
        values = rng.standard_normal(shape)
        outside = np.abs(values) > 2.0
        while np.any(outside):
            values[outside] = rng.standard_normal(int(outside.sum()))
            outside = np.abs(values) > 2.0
        return self._add(name, values * std)

    def zeros(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self._add(name, np.zeros(shape))

    def ones(self, name: str, shape: Tuple[int, ...]) -> Tensor:
        return self._add(name, np.ones(shape))

    @staticmethod
    def decays(name: str) -> bool:
        """
        weight decay applies to weight matrices only
        """
        return name.endswith(".weight")

    def names(self) -> List[str]:
        return sorted(self.params)

    def named(self) -> Dict[str, Tensor]:
        return {name: self.params[name] for name in self.names()}

    def trainable(self, frozen_prefixes: Iterable[str] = ()) -> Dict[str, Tensor]:
        """
        the parameters not under any of the frozen prefixes
        """
        prefixes = tuple(frozen_prefixes)
        return {
            name: param
            for name, param in self.named().items()
            if not (prefixes and name.startswith(prefixes))
        }

    def count(self) -> int:
        return int(sum(p.data.size for p in self.params.values()))

    def load_arrays(self, arrays: Dict[str, np.ndarray]):
        """
        overwrite parameter values in place, names and shapes must match
        """
        missing = sorted(set(self.params) - set(arrays))
        extra = sorted(set(arrays) - set(self.params))
        if missing or extra:
            raise ValueError(f"parameter names differ: missing {missing}, unexpected {extra}")
        for name, array in arrays.items():
            param = self.params[name]
            if array.shape != param.shape:
                raise ValueError(f"{name}: shape {array.shape} != {param.shape}")
            param.data[...] = array.astype(self.dtype, copy=False)


class Linear:
    """
    affine map x @ weight + bias over the last dim
    """

    def __init__(self, store: ParamStore, name: str, d_in: int, d_out: int, zero: bool = False):
        self.name = name
        if zero:
            self.weight = store.zeros(f"{name}.weight", (d_in, d_out))
        else:
            self.weight = store.normal(f"{name}.weight", (d_in, d_out))
        self.bias = store.zeros(f"{name}.bias", (d_out,))

    def __call__(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias


class LayerNorm:
    def __init__(self, store: ParamStore, name: str, dim: int):
        self.scale = store.ones(f"{name}.scale", (dim,))
        self.shift = store.zeros(f"{name}.shift", (dim,))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.scale, self.shift)


class MLP:
    """
    position-wise feed forward fc1 -> gelu -> fc2
    """

    def __init__(self, store: ParamStore, name: str, dim: int, ratio: int = 4):
        self.fc1 = Linear(store, f"{name}.fc1", dim, dim * ratio)
        self.fc2 = Linear(store, f"{name}.fc2", dim * ratio, dim)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(T.gelu(self.fc1(x)))


class Attention:
    """
    multi-head scaled dot-product attention with separate q, k, v and
    output projections

    mask is a boolean [queries, keys] matrix, True where a query may attend
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int):
        if dim % heads != 0:
            raise ValueError(f"{name}: dim {dim} not divisible by {heads} heads")
        self.heads = heads
        self.head_dim = dim // heads
        self.q = Linear(store, f"{name}.q", dim, dim)
        self.k = Linear(store, f"{name}.k", dim, dim)
        self.v = Linear(store, f"{name}.v", dim, dim)
        self.o = Linear(store, f"{name}.o", dim, dim)

    def _split(self, x: Tensor) -> Tensor:
        batch, length, _dim = x.shape
        return x.reshape(batch, length, self.heads, self.head_dim).transpose(0, 2, 1, 3)

    def __call__(
        self, x: Tensor, context: Optional[Tensor] = None, mask: Optional[np.ndarray] = None
    ) -> Tensor:
        if context is None:
            context = x
        batch, length, dim = x.shape
        q = self._split(self.q(x))
        k = self._split(self.k(context))
        v = self._split(self.v(context))
        scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(self.head_dim))
        if mask is not None:
            scores = T.masked_fill(scores, ~np.asarray(mask, dtype=bool))
        weights = T.softmax(scores)
        out = (weights @ v).transpose(0, 2, 1, 3).reshape(batch, length, dim)
        return self.o(out)


class TransformerBlock:
    """
    pre-layer-norm block: x + attn(ln1(x)), then x + mlp(ln2(x))
    """

    def __init__(self, store: ParamStore, name: str, dim: int, heads: int, mlp_ratio: int = 4):
        self.ln1 = LayerNorm(store, f"{name}.ln1", dim)
        self.attn = Attention(store, f"{name}.attn", dim, heads)
        self.ln2 = LayerNorm(store, f"{name}.ln2", dim)
        self.mlp = MLP(store, f"{name}.mlp", dim, mlp_ratio)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        x = x + self.attn(self.ln1(x), mask=mask)
        x = x + self.mlp(self.ln2(x))
        return x


class Transformer:
    """
    a stack of pre-LN blocks followed by a final layer norm
    """

    def __init__(
        self,
        store: ParamStore,
        name: str,
        dim: int,
        layers: int,
        heads: int,
        mlp_ratio: int = 4,
        final_norm: str = "ln_f",
    ):
        self.blocks = [
            TransformerBlock(store, f"{name}.blocks.{i}", dim, heads, mlp_ratio)
            for i in range(layers)
        ]
        self.ln_f = LayerNorm(store, f"{name}.{final_norm}", dim)

    def __call__(self, x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
        for block in self.blocks:
            x = block(x, mask=mask)
        return self.ln_f(x)


def sincos_1d(dim: int, positions: np.ndarray) -> np.ndarray:
    if dim % 2 != 0:
        raise ValueError(f"sin-cos encoding needs an even dim, got {dim}")
    omega = np.arange(dim // 2, dtype=np.float64) / (dim / 2.0)
    omega = 1.0 / 10000**omega
    angles = np.outer(positions.reshape(-1), omega)
    return np.concatenate([np.sin(angles), np.cos(angles)], axis=1)


def sincos_2d(dim: int, grid: int) -> np.ndarray:
    """
    fixed 2D sine-cosine position encoding for a grid x grid patch layout

    Returns:
        np.ndarray: [grid*grid, dim], row-major over (row, col)
    """
    if dim % 4 != 0:
        raise ValueError(f"2D sin-cos encoding needs dim divisible by 4, got {dim}")
    rows, cols = np.meshgrid(np.arange(grid), np.arange(grid), indexing="ij")
    emb_rows = sincos_1d(dim // 2, rows.astype(np.float64))
    emb_cols = sincos_1d(dim // 2, cols.astype(np.float64))
    return np.concatenate([emb_rows, emb_cols], axis=1)
