"""
Created on 2026-10-18

@author: wf

AdamW with cosine decay, the pretrain/finetune training loop, loss logs
and the .ckpt checkpoint format.
"""

import csv
import dataclasses
import logging
import math
import os
import struct
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import orjson

from pidm.data import MODES, Batch, Trajectory, batch_iter, window_index
from pidm.layers import ParamStore
from pidm.model import Model, ModelConfig
from pidm.objective import LossTerms, compute_losses
from pidm.progress import progressbar
from pidm.tensor import NonFiniteError, backward
from pidm.yamlable import ConfigError, lod_storable

logger = logging.getLogger(__name__)

CKPT_MAGIC = b"PIDC"
CKPT_VERSION = 1
DTYPE_TAGS = {np.dtype("<f4"): 0, np.dtype("<f8"): 1}
TAG_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
LOG_COLUMNS = ["epoch", "l_fore", "l_arm", "l_gripper", "l_inv", "total", "lr"]

ARCHITECTURE_LABELS = {
    "embed_dim": "embed dim",
    "layers": "backbone layers",
    "heads": "backbone heads",
    "resampler_latents": "resampler latents",
    "resampler_layers": "resampler layers",
    "resampler_heads": "resampler heads",
    "resampler_dim": "resampler dim",
    "decoder_layers": "image decoder layers",
    "decoder_heads": "image decoder heads",
    "decoder_dim": "image decoder dim",
    "patch_size": "patch size",
    "image_size": "image size",
    "history": "history length",
    "chunk": "chunk length",
    "arm_dim": "arm dim",
    "state_dim": "state dim",
    "vocab_size": "vocab size",
    "mlp_ratio": "mlp ratio",
}


class TrainingDivergedError(RuntimeError):
    """
    the loss or a gradient became non-finite
    """

    def __init__(self, step: int, detail: str):
        super().__init__(f"training diverged at step {step}: {detail}")
        self.step = step


class CheckpointError(ValueError):
    """
    unreadable checkpoint or architecture mismatch
    """


@lod_storable
class TrainConfig:
    """
    optimization regime of one training run
    """

    mode: str = "finetune"
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    total_steps: int = 0
    seed: int = 0
    freeze_encoders: bool = False
    freeze_after_steps: int = 0
    no_fore: bool = False
    no_inv: bool = False
    detach_frs: bool = False
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    grad_clip: float = 1.0
    loss_last_only: bool = False
    save_epochs: List[int] = field(default_factory=list)

    def validate(self) -> "TrainConfig":
        problems = []
        if self.mode not in MODES:
            problems.append(f"mode {self.mode} not in {MODES}")
        if not self.lr > 0:
            problems.append(f"peak lr {self.lr} must be > 0")
        if self.epochs < 1:
            problems.append(f"epochs {self.epochs} < 1")
        if self.batch_size < 1:
            problems.append(f"batch_size {self.batch_size} < 1")
        if self.no_fore and self.no_inv:
            problems.append("no_fore and no_inv together leave no loss")
        if problems:
            raise ConfigError("invalid train config: " + "; ".join(problems))
        return self


@lod_storable
class ExperimentConfig:
    """
    a model architecture with its pretrain and finetune regimes
    """

    model: ModelConfig = field(default_factory=ModelConfig)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(mode="pretrain", lr=1e-4, epochs=30))
    finetune: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        """
        load one of the shipped presets tiny, toy or paper
        """
        preset_file = resources.files("pidm").joinpath("resources", "presets", f"{name}.yaml")
        if not preset_file.is_file():
            raise ConfigError(f"unknown preset {name}: expected tiny, toy or paper")
        return cls.from_yaml(preset_file.read_text(encoding="utf-8"))

    def for_mode(self, mode: str) -> Tuple[ModelConfig, TrainConfig]:
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode}")
        train_config = self.pretrain if mode == "pretrain" else self.finetune
        train_config = dataclasses.replace(train_config, mode=mode).validate()
        model_config = dataclasses.replace(self.model, mode=mode).validate()
        return model_config, train_config


def cosine_lr(step: int, total_steps: int, peak: float) -> float:
    """
    peak * 0.5 * (1 + cos(pi * step / total_steps)), 0 beyond total_steps
    """
    if total_steps < 1:
        raise ValueError(f"total_steps must be >= 1, got {total_steps}")
    if step >= total_steps:
        return 0.0
    return peak * 0.5 * (1.0 + math.cos(math.pi * max(step, 0) / total_steps))


@dataclass
class AdamState:
    """
    first and second moments per parameter and the number of steps taken
    """

    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0


def adamw_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    betas: Tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.01,
    decays: Callable[[str], bool] = ParamStore.decays,
) -> Tuple[Dict[str, np.ndarray], AdamState]:
    """
    one bias-corrected AdamW update with decoupled weight decay

    Returns:
        tuple: the updated parameter arrays and optimizer state
    """
    beta1, beta2 = betas
    t = state.step + 1
    new_params, new_m, new_v = {}, dict(state.m), dict(state.v)
    for name, param in params.items():
        grad = grads[name]
        if grad.shape != param.shape:
            raise ValueError(f"gradient shape {grad.shape} != parameter shape {param.shape} for {name}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {name}")
        m = state.m.get(name, np.zeros_like(param))
        v = state.v.get(name, np.zeros_like(param))
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        updated = param
        if weight_decay and decays(name):
            updated = updated - lr * weight_decay * updated
        updated = updated - lr * m_hat / (np.sqrt(v_hat) + eps)
        new_params[name] = updated.astype(param.dtype, copy=False)
        new_m[name] = m.astype(param.dtype, copy=False)
        new_v[name] = v.astype(param.dtype, copy=False)
    return new_params, AdamState(new_m, new_v, t)


def clip_global_norm(grads: Dict[str, np.ndarray], max_norm: float) -> float:
    """
    scale grads in place to global norm max_norm if above it

    Returns:
        float: the norm before clipping
    """
    norm = math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for name in grads:
            grads[name] = grads[name] * np.asarray(scale, dtype=grads[name].dtype)
    return norm


@dataclass
class Checkpoint:
    """
    model and train configuration, step count, parameters and optimizer moments
    """

    model_config: ModelConfig
    train_config: TrainConfig
    step: int
    params: Dict[str, np.ndarray]
    optimizer: AdamState = field(default_factory=AdamState)
    epoch: int = 0

    def config_text(self) -> bytes:
        return orjson.dumps(
            {
                "model": dataclasses.asdict(self.model_config),
                "train": dataclasses.asdict(self.train_config),
                "step": self.step,
                "epoch": self.epoch,
            },
            option=orjson.OPT_SORT_KEYS,
        )

    def tensors(self) -> Dict[str, np.ndarray]:
        named = dict(self.params)
        for name, array in self.optimizer.m.items():
            named[f"optim/m/{name}"] = array
        for name, array in self.optimizer.v.items():
            named[f"optim/v/{name}"] = array
        return {name: named[name] for name in sorted(named)}

    def model(self, mode: Optional[str] = None) -> Model:
        """
        a Model carrying these parameters
        """
        config = self.model_config
        if mode is not None:
            config = dataclasses.replace(config, mode=mode)
        model = Model(config, seed=self.train_config.seed, detach_frs=self.train_config.detach_frs)
        model.store.load_arrays(self.params)
        return model


def checkpoint_bytes(ckpt: Checkpoint) -> bytes:
    config = ckpt.config_text()
    tensors = ckpt.tensors()
    parts = [CKPT_MAGIC, struct.pack("<II", CKPT_VERSION, len(config)), config, struct.pack("<I", len(tensors))]
    for name, array in tensors.items():
        encoded = name.encode("utf-8")
        dtype = array.dtype.newbyteorder("<")
        if dtype not in DTYPE_TAGS:
            raise CheckpointError(f"unsupported dtype {array.dtype} for tensor {name}")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<BB", DTYPE_TAGS[dtype], array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        parts.append(np.ascontiguousarray(array, dtype=dtype).tobytes())
    return b"".join(parts)


def save_checkpoint(ckpt: Checkpoint, path: str):
    with open(path, "wb") as file:
        file.write(checkpoint_bytes(ckpt))
    logger.info(f"saved checkpoint step {ckpt.step} to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    """
    read a .ckpt file

    Raises:
        CheckpointError: for a malformed or truncated file
    """
    try:
        with open(path, "rb") as file:
            raw = file.read()
    except FileNotFoundError as ex:
        raise CheckpointError(f"no checkpoint at {path}") from ex
    offset = 0

    def take(size: int, what: str) -> bytes:
        nonlocal offset
        if offset + size > len(raw):
            raise CheckpointError(f"{path}: truncated {what} at byte offset {offset}")
        chunk = raw[offset : offset + size]
        offset += size
        return chunk

    if take(4, "magic") != CKPT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    version, config_len = struct.unpack("<II", take(8, "preamble"))
    if version != CKPT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    config = orjson.loads(take(config_len, "config"))
    (count,) = struct.unpack("<I", take(4, "tensor count"))
    params, moments_m, moments_v = {}, {}, {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "tensor name length"))
        name = take(name_len, "tensor name").decode("utf-8")
        tag, rank = struct.unpack("<BB", take(2, f"{name} dtype"))
        if tag not in TAG_DTYPES:
            raise CheckpointError(f"{path}: unknown dtype tag {tag} for {name}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank, f"{name} dims"))
        dtype = TAG_DTYPES[tag]
        size = int(np.prod(dims)) * dtype.itemsize
        array = np.frombuffer(take(size, f"{name} payload"), dtype=dtype).reshape(dims)
        array = array.astype(dtype.newbyteorder("="))
        if name.startswith("optim/m/"):
            moments_m[name[len("optim/m/") :]] = array
        elif name.startswith("optim/v/"):
            moments_v[name[len("optim/v/") :]] = array
        else:
            params[name] = array
    try:
        model_config = ModelConfig.from_dict_strict(config["model"])
        train_config = TrainConfig.from_dict_strict(config["train"])
    except (KeyError, ConfigError) as ex:
        raise CheckpointError(f"{path}: bad config section: {ex}") from ex
    return Checkpoint(
        model_config,
        train_config,
        int(config.get("step", 0)),
        params,
        AdamState(moments_m, moments_v, int(config.get("step", 0))),
        int(config.get("epoch", 0)),
    )


def check_compatible(expected: ModelConfig, found: ModelConfig):
    """
    raise CheckpointError listing every differing architecture field
    """
    differing = [
        f"{label} {getattr(found, name)} != {getattr(expected, name)}"
        for name, label in ARCHITECTURE_LABELS.items()
        if getattr(found, name) != getattr(expected, name)
    ]
    if differing:
        raise CheckpointError("architecture mismatch: " + ", ".join(differing))


def epoch_checkpoint_path(path: str, epoch: int) -> str:
    stem, ext = os.path.splitext(path)
    return f"{stem}.epoch{epoch}{ext or '.ckpt'}"


class Trainer:
    """
    owns the model, the optimizer state and the step counter
    """

    def __init__(
        self,
        model_config: ModelConfig,
        train_config: TrainConfig,
        init: Optional[Checkpoint] = None,
        total_steps: int = 0,
    ):
        self.model_config = model_config.validate()
        self.train_config = train_config.validate()
        if model_config.mode != train_config.mode:
            raise ConfigError(f"model mode {model_config.mode} != train mode {train_config.mode}")
        self.model = Model(model_config, seed=train_config.seed, detach_frs=train_config.detach_frs)
        if init is not None:
            check_compatible(model_config, init.model_config)
            self.model.store.load_arrays(init.params)
        self.optimizer = AdamState()
        self.step_count = 0
        self.total_steps = total_steps
        self.last_grads: Dict[str, np.ndarray] = {}

    def lr(self) -> float:
        """
        the scheduled rate, constant peak when no step budget is set
        """
        if self.total_steps < 1:
            return self.train_config.lr
        return cosine_lr(self.step_count, self.total_steps, self.train_config.lr)

    def frozen(self) -> bool:
        cfg = self.train_config
        return cfg.freeze_encoders and self.step_count >= cfg.freeze_after_steps

    def train_step(self, batch: Batch, lr: Optional[float] = None) -> LossTerms:
        """
        forward, backward and one AdamW update on batch
        """
        cfg = self.train_config
        if lr is None:
            lr = self.lr()
        try:
            losses = compute_losses(self.model, batch, no_fore=cfg.no_fore, no_inv=cfg.no_inv)
        except NonFiniteError as ex:
            raise TrainingDivergedError(self.step_count, str(ex)) from ex
        if not math.isfinite(losses.total.item()):
            raise TrainingDivergedError(self.step_count, "loss is NaN")
        trainable = self.model.trainable(freeze_encoders=self.frozen())
        grads = backward(losses.total, trainable)
        clip_global_norm(grads, cfg.grad_clip)
        self.last_grads = grads
        arrays = {name: param.data for name, param in trainable.items()}
        try:
            updated, self.optimizer = adamw_step(
                arrays,
                grads,
                self.optimizer,
                lr,
                betas=(cfg.beta1, cfg.beta2),
                eps=cfg.eps,
                weight_decay=cfg.weight_decay,
            )
        except NonFiniteError as ex:
            raise TrainingDivergedError(self.step_count, str(ex)) from ex
        for name, array in updated.items():
            trainable[name].data[...] = array
        self.step_count += 1
        return losses

    def checkpoint(self, epoch: int = 0) -> Checkpoint:
        params = {name: param.data.copy() for name, param in self.model.params.items()}
        return Checkpoint(
            self.model_config,
            self.train_config,
            self.step_count,
            params,
            AdamState(
                {k: v.copy() for k, v in self.optimizer.m.items()},
                {k: v.copy() for k, v in self.optimizer.v.items()},
                self.optimizer.step,
            ),
            epoch,
        )


@dataclass
class EpochLog:
    epoch: int
    l_fore: Optional[float]
    l_arm: float
    l_gripper: float
    l_inv: float
    total: float
    lr: float

    def row(self) -> List[str]:
        def fmt(value: Optional[float]) -> str:
            return "" if value is None else repr(float(value))

        return [
            str(self.epoch),
            fmt(self.l_fore),
            fmt(self.l_arm),
            fmt(self.l_gripper),
            fmt(self.l_inv),
            fmt(self.total),
            fmt(self.lr),
        ]


@dataclass
class FitResult:
    checkpoint: Checkpoint
    epochs: List[EpochLog]
    trajectories: int
    windows: int


def write_loss_log(path: str, result: FitResult, header: Dict[str, object]):
    """
    CSV loss log preceded by a # comment line with the run header
    """
    with open(path, "w", newline="") as file:
        comment = " ".join(f"{key}={value}" for key, value in header.items())
        file.write(f"# {comment}\n")
        writer = csv.writer(file, lineterminator="\n")
        writer.writerow(LOG_COLUMNS)
        for epoch in result.epochs:
            writer.writerow(epoch.row())


def fit(
    trajectories: Sequence[Trajectory],
    model_config: ModelConfig,
    train_config: TrainConfig,
    init: Optional[Checkpoint] = None,
    ckpt_path: Optional[str] = None,
    with_progress: bool = False,
) -> FitResult:
    """
    train on the windows of trajectories for the configured epochs

    Args:
        trajectories: the split for train_config.mode
        model_config: architecture (mode must match)
        train_config: regime
        init: checkpoint to start from
        ckpt_path: base path for the per-epoch checkpoints in save_epochs
        with_progress: show a tqdm progress bar

    Returns:
        FitResult: final checkpoint and per-epoch loss means
    """
    cfg = train_config.validate()
    m, n = model_config.history, model_config.chunk
    windows = len(window_index(trajectories, n, cfg.mode))
    if windows == 0:
        raise ValueError(f"no {cfg.mode} windows in {len(trajectories)} trajectories")
    batches_per_epoch = math.ceil(windows / cfg.batch_size)
    total_steps = cfg.total_steps if cfg.total_steps > 0 else cfg.epochs * batches_per_epoch
    trainer = Trainer(model_config, cfg, init=init, total_steps=total_steps)
    logger.info(
        f"{cfg.mode}: {len(trajectories)} trajectories, {windows} windows, "
        f"{total_steps} steps, {trainer.model.store.count()} parameters"
    )
    bar = progressbar(total_steps, desc=cfg.mode, unit="step", with_progress=with_progress)
    epochs: List[EpochLog] = []
    for epoch in range(1, cfg.epochs + 1):
        if trainer.step_count >= total_steps:
            break
        sums: Dict[str, float] = {}
        count = 0
        first_lr = trainer.lr()
        for batch in batch_iter(
            trajectories, cfg.mode, cfg.batch_size, cfg.seed, m, n, epoch=epoch, loss_last_only=cfg.loss_last_only
        ):
            losses = trainer.train_step(batch)
            for key, value in losses.values().items():
                if value is not None:
                    sums[key] = sums.get(key, 0.0) + value
            count += 1
            bar.update()
            if trainer.step_count >= total_steps:
                break
        means = {key: value / count for key, value in sums.items()}
        log = EpochLog(
            epoch,
            means.get("l_fore"),
            means["l_arm"],
            means["l_gripper"],
            means["l_inv"],
            means["total"],
            first_lr,
        )
        epochs.append(log)
        bar.set_postfix(total=f"{log.total:.4f}")
        logger.info(f"epoch {epoch}: total {log.total:.6f} l_inv {log.l_inv:.6f} lr {first_lr:.3g}")
        if ckpt_path and epoch in cfg.save_epochs:
            save_checkpoint(trainer.checkpoint(epoch), epoch_checkpoint_path(ckpt_path, epoch))
    bar.close()
    final = trainer.checkpoint(epochs[-1].epoch if epochs else 0)
    return FitResult(final, epochs, len(trajectories), windows)
