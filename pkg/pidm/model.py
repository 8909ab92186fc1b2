"""
Created on 2026-10-18

@author: wf

The predictive inverse dynamics network: input tokenizers, perceiver
resampler, masked multi-modal backbone with foresight [FRS] and action
[INV] readout tokens, and the action and image readout decoders.
"""

import dataclasses
import logging
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from pidm import tensor as T
from pidm.data import MODES, Batch
from pidm.layers import (
    MLP,
    Attention,
    LayerNorm,
    Linear,
    ParamStore,
    Transformer,
    sincos_2d,
)
from pidm.sim import VOCABULARY
from pidm.tensor import Tensor
from pidm.yamlable import ConfigError, lod_storable

logger = logging.getLogger(__name__)

GOAL, IMG, STATE, FRS, INV = "GOAL", "IMG", "STATE", "FRS", "INV"
INPUT_GROUPS = (GOAL, IMG, STATE)
READOUT_GROUPS = (FRS, INV)
FROZEN_PREFIXES = ("patch_embed", "patch_pos", "language.embed")


class TokenizeError(ValueError):
    """
    a window that cannot be turned into tokens
    """


@lod_storable
class ModelConfig:
    """
    architecture and regime of the network
    """

    embed_dim: int = 64
    layers: int = 4
    heads: int = 4
    resampler_latents: int = 4
    resampler_layers: int = 2
    resampler_heads: int = 4
    resampler_dim: int = 64
    decoder_layers: int = 2
    decoder_heads: int = 4
    decoder_dim: int = 64
    patch_size: int = 8
    image_size: int = 32
    history: int = 7
    chunk: int = 3
    arm_dim: int = 2
    state_dim: int = 4
    vocab_size: int = len(VOCABULARY)
    mode: str = "finetune"
    preset: str = "toy"
    mlp_ratio: int = 4
    dtype: str = "f32"

    @property
    def grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def patches(self) -> int:
        return self.grid * self.grid

    @property
    def width(self) -> int:
        """
        tokens per timestep W = 2k + 4 + n
        """
        return 2 * self.resampler_latents + 4 + self.chunk

    @property
    def tokens(self) -> int:
        return self.history * self.width

    def validate(self) -> "ModelConfig":
        problems = []
        for dim_name, heads_name in (
            ("embed_dim", "heads"),
            ("resampler_dim", "resampler_heads"),
            ("decoder_dim", "decoder_heads"),
        ):
            dim, heads = getattr(self, dim_name), getattr(self, heads_name)
            if heads < 1 or dim % heads != 0:
                problems.append(f"{dim_name} {dim} not divisible by {heads_name} {heads}")
        if self.chunk < 1:
            problems.append(f"chunk {self.chunk} < 1")
        if self.history < 1:
            problems.append(f"history {self.history} < 1")
        if self.patch_size < 1 or self.image_size % self.patch_size != 0:
            problems.append(f"patch_size {self.patch_size} does not divide image_size {self.image_size}")
        elif self.resampler_latents < 1 or self.resampler_latents >= self.patches:
            problems.append(f"resampler_latents {self.resampler_latents} must be in [1, {self.patches})")
        if self.decoder_dim % 4 != 0:
            problems.append(f"decoder_dim {self.decoder_dim} not divisible by 4")
        if self.arm_dim != 2:
            problems.append(f"arm_dim {self.arm_dim} must be 2 for the planar end effector")
        if self.state_dim < 3:
            problems.append(f"state_dim {self.state_dim} must hold arm state plus gripper one-hot")
        if self.vocab_size < len(VOCABULARY):
            problems.append(f"vocab_size {self.vocab_size} < vocabulary of {len(VOCABULARY)} words")
        if self.mode not in MODES:
            problems.append(f"mode {self.mode} not in {MODES}")
        if self.dtype not in ("f32", "f64"):
            problems.append(f"dtype {self.dtype} not in f32/f64")
        if problems:
            raise ConfigError("invalid model config: " + "; ".join(problems))
        return self


class TokenLayout:
    """
    per-timestep token groups GOAL, IMG (view-major), STATE, FRS (one per
    view), INV (one per chunk slot), repeated for m timesteps
    """

    def __init__(self, latents: int, chunk: int, history: int):
        self.k = latents
        self.n = chunk
        self.m = history
        self.width = 2 * latents + 4 + chunk
        sizes = [(GOAL, 1), (IMG, 2 * latents), (STATE, 1), (FRS, 2), (INV, chunk)]
        self.starts: Dict[str, int] = {}
        self.slots: List[Tuple[str, int]] = []
        for group, size in sizes:
            self.starts[group] = len(self.slots)
            self.slots.extend((group, i) for i in range(size))

    @classmethod
    def of(cls, config: ModelConfig) -> "TokenLayout":
        return cls(config.resampler_latents, config.chunk, config.history)

    @property
    def size(self) -> int:
        return self.m * self.width

    def index(self, t: int, group: str, slot: int = 0) -> int:
        return t * self.width + self.starts[group] + slot

    def describe(self, index: int) -> Tuple[int, str, int]:
        """
        (timestep, group, slot) of a sequence position
        """
        t, offset = divmod(index, self.width)
        group, slot = self.slots[offset]
        return t, group, slot

    def group_slice(self, group: str) -> slice:
        start = self.starts[group]
        size = {GOAL: 1, IMG: 2 * self.k, STATE: 1, FRS: 2, INV: self.n}[group]
        return slice(start, start + size)


def build_mask(config: ModelConfig, detach_frs: bool = False) -> np.ndarray:
    """
    the boolean [m*W, m*W] attendability matrix, True where query may attend key

    input tokens attend input tokens of earlier or equal timesteps
    (finetune) or of the same timestep (pretrain); FRS_t attends the inputs
    it may see plus itself; INV_t additionally attends both FRS_t unless
    detach_frs
    """
    layout = TokenLayout.of(config)
    codes = {GOAL: 0, IMG: 1, STATE: 2, FRS: 3, INV: 4}
    described = [layout.describe(i) for i in range(layout.size)]
    step = np.array([d[0] for d in described])
    group = np.array([codes[d[1]] for d in described])
    is_input = group <= codes[STATE]
    q_step, k_step = step[:, None], step[None, :]
    if config.mode == "pretrain":
        visible_step = q_step == k_step
    else:
        visible_step = k_step <= q_step
    sees_inputs = visible_step & is_input[None, :]
    mask = sees_inputs.copy()
    if not detach_frs:
        inv_rows = group == codes[INV]
        frs_cols = group == codes[FRS]
        mask |= inv_rows[:, None] & frs_cols[None, :] & (q_step == k_step)
    np.fill_diagonal(mask, True)
    return mask


def patchify(images: np.ndarray, patch: int) -> np.ndarray:
    """
    [N, H, W, 3] -> [N, P, patch*patch*3], patches row-major
    """
    count, height, width, channels = images.shape
    grid_h, grid_w = height // patch, width // patch
    x = images.reshape(count, grid_h, patch, grid_w, patch, channels)
    x = x.transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(count, grid_h * grid_w, patch * patch * channels)


def encode_instruction(text: str) -> List[int]:
    """
    token ids (index in VOCABULARY + 1) of the instruction words
    """
    words = text.split()
    unknown = [w for w in words if w not in VOCABULARY]
    if unknown:
        raise TokenizeError(f"unknown instruction word(s): {', '.join(unknown)}")
    if not words:
        raise TokenizeError("empty instruction")
    return [VOCABULARY.index(w) + 1 for w in words]


class PerceiverResampler:
    """
    k learnable latents cross-attend to the patch tokens concatenated with
    the latents themselves
    """

    def __init__(self, store: ParamStore, name: str, config: ModelConfig):
        dim = config.resampler_dim
        self.latents = store.normal(f"{name}.latents", (config.resampler_latents, dim))
        self.layers = []
        for i in range(config.resampler_layers):
            prefix = f"{name}.layers.{i}"
            self.layers.append(
                (
                    LayerNorm(store, f"{prefix}.ln_media", dim),
                    LayerNorm(store, f"{prefix}.ln_latents", dim),
                    Attention(store, f"{prefix}.attn", dim, config.resampler_heads),
                    LayerNorm(store, f"{prefix}.ln_ff", dim),
                    MLP(store, f"{prefix}.mlp", dim, config.mlp_ratio),
                )
            )
        self.ln_out = LayerNorm(store, f"{name}.ln_out", dim)
        self.proj = Linear(store, f"{name}.proj", dim, config.embed_dim)

    def __call__(self, patch_tokens: Tensor) -> Tensor:
        """
        [N, P, resampler_dim] -> [N, k, embed_dim]
        """
        count = patch_tokens.shape[0]
        zeros = Tensor(np.zeros((count, 1, 1)), dtype=patch_tokens.dtype)
        latents = zeros + self.latents
        for ln_media, ln_latents, attn, ln_ff, mlp in self.layers:
            normed = ln_latents(latents)
            context = T.concat([ln_media(patch_tokens), normed], axis=1)
            latents = latents + attn(normed, context=context)
            latents = latents + mlp(ln_ff(latents))
        return self.proj(self.ln_out(latents))


class Model:
    """
    the network with its parameters

    Attributes:
        config(ModelConfig): architecture and mode
        store(ParamStore): all trainable tensors
        layout(TokenLayout): sequence layout
    """

    def __init__(self, config: ModelConfig, seed: int = 0, detach_frs: bool = False):
        self.config = config.validate()
        self.detach_frs = detach_frs
        self.layout = TokenLayout.of(config)
        store = ParamStore(seed, config.dtype)
        self.store = store
        d = config.embed_dim
        patch_dim = config.patch_size * config.patch_size * 3
        self.patch_embed = Linear(store, "patch_embed", patch_dim, config.resampler_dim)
        self.patch_pos = store.normal("patch_pos.embed", (config.patches, config.resampler_dim))
        self.resampler = PerceiverResampler(store, "resampler", config)
        self.view_embed = store.normal("view_embed.embed", (2, d))
        arm_state_dim = config.state_dim - 2
        self.state_arm = Linear(store, "state.arm", arm_state_dim, d)
        self.state_gripper = Linear(store, "state.gripper", 2, d)
        self.state_out = Linear(store, "state.out", 2 * d, d)
        self.language_embed = store.normal("language.embed.table", (config.vocab_size + 1, d))
        self.language_proj = Linear(store, "language.proj", d, d)
        self.frs_tokens = store.normal("readout.frs.embed", (2, d))
        self.inv_tokens = store.normal("readout.inv.embed", (config.chunk, d))
        self.timestep_embed = store.normal("timestep_embed.embed", (config.history, d))
        self.backbone = Transformer(store, "backbone", d, config.layers, config.heads, config.mlp_ratio)
        self.action_fc1 = Linear(store, "action_decoder.fc1", d, d)
        self.action_fc2 = Linear(store, "action_decoder.fc2", d, d)
        self.action_arm = Linear(store, "action_decoder.arm", d, config.arm_dim)
        self.action_gripper = Linear(store, "action_decoder.gripper", d, 1)
        dd = config.decoder_dim
        self.image_proj = Linear(store, "image_decoder.proj", d, dd)
        self.mask_token = store.normal("image_decoder.mask_token", (1, dd))
        self.image_decoder = Transformer(
            store,
            "image_decoder",
            dd,
            config.decoder_layers,
            config.decoder_heads,
            config.mlp_ratio,
            final_norm="ln_out",
        )
        self.image_head = Linear(store, "image_decoder.head", dd, patch_dim)
        self.decoder_pos = sincos_2d(dd, config.grid).astype(store.dtype)
        self._masks: Dict[Tuple[str, bool], np.ndarray] = {}
        logger.debug(f"model {config.preset}/{config.mode}: {store.count()} parameters")

    @property
    def params(self) -> Dict[str, Tensor]:
        return self.store.named()

    @property
    def mask(self) -> np.ndarray:
        key = (self.config.mode, self.detach_frs)
        if key not in self._masks:
            self._masks[key] = build_mask(self.config, self.detach_frs)
        return self._masks[key]

    def with_mode(self, mode: str) -> "Model":
        """
        switch the regime in place (pretrain checkpoints are finetuned)
        """
        self.config = dataclasses.replace(self.config, mode=mode).validate()
        return self

    def _const(self, array: np.ndarray) -> Tensor:
        return Tensor(array, dtype=self.store.dtype)

    # tokenizers

    def tokenize_state(self, states: np.ndarray) -> Tensor:
        """
        [..., state_dim] -> [..., d]: arm state and gripper one-hot through
        separate linear layers, concatenated, then a final linear layer
        """
        states = self._const(states)
        arm = self.state_arm(states[..., : self.config.state_dim - 2])
        gripper = self.state_gripper(states[..., self.config.state_dim - 2 :])
        return self.state_out(T.concat([arm, gripper], axis=-1))

    def tokenize_language(self, instructions: Sequence[str]) -> Tensor:
        """
        mean-pooled word embeddings through a linear layer -> [B, d]
        """
        encoded = [encode_instruction(text) for text in instructions]
        longest = max(len(ids) for ids in encoded)
        ids = np.zeros((len(encoded), longest), dtype=np.int64)
        weights = np.zeros((len(encoded), longest, 1))
        for row, word_ids in enumerate(encoded):
            ids[row, : len(word_ids)] = word_ids
            weights[row, : len(word_ids)] = 1.0 / len(word_ids)
        pooled = (T.embedding(self.language_embed, ids) * self._const(weights)).sum(axis=1)
        return self.language_proj(pooled)

    def tokenize_images(self, images: np.ndarray) -> Tensor:
        """
        u8 [B, m, 2, H, W, 3] -> [B, m, 2k, d]
        """
        batch, m = images.shape[:2]
        cfg = self.config
        flat = images.reshape((-1,) + images.shape[3:]).astype(np.float64) / 255.0
        patches = self._const(patchify(flat, cfg.patch_size))
        tokens = self.patch_embed(patches) + self.patch_pos
        latents = self.resampler(tokens)
        latents = latents.reshape(batch, m, 2, cfg.resampler_latents, cfg.embed_dim)
        latents = latents + self.view_embed.reshape(1, 1, 2, 1, cfg.embed_dim)
        return latents.reshape(batch, m, 2 * cfg.resampler_latents, cfg.embed_dim)

    def goal_token(self, batch: Batch) -> Tensor:
        """
        [B, d]: language in finetune mode, encoded goal state in pretrain mode
        """
        if self.config.mode == "pretrain":
            if batch.goal_states is None:
                raise TokenizeError("pretrain window without goal state")
            return self.tokenize_state(batch.goal_states)
        if batch.instructions is None or any(text is None for text in batch.instructions):
            raise TokenizeError("finetune window without instruction")
        return self.tokenize_language(batch.instructions)

    def tokenize(self, batch: Batch) -> Tensor:
        """
        the embedded token sequence [B, m*W, d]
        """
        cfg = self.config
        if batch.mode != cfg.mode:
            raise TokenizeError(f"window mode {batch.mode} does not match model mode {cfg.mode}")
        size, m, d = batch.size, cfg.history, cfg.embed_dim
        if batch.images.shape[1] != m:
            raise TokenizeError(f"window history {batch.images.shape[1]} != model history {m}")
        zeros = self._const(np.zeros((size, m, 1, 1)))
        goal = zeros + self.goal_token(batch).reshape(size, 1, 1, d)
        images = self.tokenize_images(batch.images)
        state = self.tokenize_state(batch.states).reshape(size, m, 1, d)
        frs = zeros + self.frs_tokens
        inv = zeros + self.inv_tokens
        tokens = T.concat([goal, images, state, frs, inv], axis=2)
        tokens = tokens + self.timestep_embed.reshape(1, m, 1, d)
        return tokens.reshape(size, m * cfg.width, d)

    # backbone

    def encode(self, tokens: Tensor) -> Tuple[Tensor, Tensor]:
        """
        run the masked backbone

        Returns:
            tuple: FRS latents [B, m, 2, d] and INV latents [B, m, n, d]
        """
        cfg = self.config
        out = self.backbone(tokens, mask=self.mask)
        out = out.reshape(tokens.shape[0], cfg.history, cfg.width, cfg.embed_dim)
        frs = out[:, :, self.layout.group_slice(FRS)]
        inv = out[:, :, self.layout.group_slice(INV)]
        return frs, inv

    def forward(self, batch: Batch) -> Tuple[Tensor, Tensor]:
        return self.encode(self.tokenize(batch))

    # readout decoders

    def decode_actions(self, action_latents: Tensor) -> Tuple[Tensor, Tensor]:
        """
        [B, m, n, d] -> arm [B, m, n, arm_dim] in [-1,1], gripper [B, m, n, 1] in [0,1]
        """
        trunk = T.relu(self.action_fc2(T.relu(self.action_fc1(action_latents))))
        return T.tanh(self.action_arm(trunk)), T.sigmoid(self.action_gripper(trunk))

    def decode_image(self, foresight_latents: Tensor) -> Tensor:
        """
        [..., d] one latent per view -> [..., H, W, 3] predicted pixels

        the latent is followed by P shared mask tokens carrying fixed
        sin-cos positions; each mask token output becomes one patch
        """
        cfg = self.config
        lead = foresight_latents.shape[:-1]
        count = int(np.prod(lead))
        latent = self.image_proj(foresight_latents.reshape(count, 1, cfg.embed_dim))
        zeros = self._const(np.zeros((count, 1, 1)))
        masks = zeros + (self.mask_token + self._const(self.decoder_pos))
        out = self.image_decoder(T.concat([latent, masks], axis=1))
        patches = self.image_head(out[:, 1:])
        p, g = cfg.patch_size, cfg.grid
        image = patches.reshape(count, g, g, p, p, 3).transpose(0, 1, 3, 2, 4, 5)
        return image.reshape(lead + (cfg.image_size, cfg.image_size, 3))

    def trainable(self, freeze_encoders: bool = False) -> Dict[str, Tensor]:
        return self.store.trainable(FROZEN_PREFIXES if freeze_encoders else ())
