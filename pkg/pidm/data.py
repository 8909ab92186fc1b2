"""
Created on 2026-10-18

@author: wf

Trajectory persistence, dataset manifests and splits, window sampling
and batching.
"""

import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
import orjson

from pidm.yamlable import lod_storable

logger = logging.getLogger(__name__)

MAGIC = b"PIDM"
FORMAT_VERSION = 1
VIEWS = 2
MODES = ("pretrain", "finetune")
MANIFEST_NAME = "manifest.yaml"


class TrajectoryFormatError(ValueError):
    """
    a .traj file that does not follow the format
    """


class WindowError(ValueError):
    """
    a window request outside the valid focus range
    """


class DatasetError(ValueError):
    """
    an unusable dataset, split or batching request
    """


@dataclass(eq=False)
class Trajectory:
    """
    one recorded episode (l, o_t, s_t, a_t) for t in 0..T-1

    Attributes:
        task(str): task family or "play"
        instruction(str): instruction text, None for play data
        seed(int): the reset seed
        images(np.ndarray): u8 [T, 2, H, W, 3]
        states(np.ndarray): f32 [T, state_dim]
        actions(np.ndarray): f32 [T, action_dim]
        stages(list): stage events {"step", "stage"}
    """

    task: str
    instruction: Optional[str]
    seed: int
    images: np.ndarray
    states: np.ndarray
    actions: np.ndarray
    stages: List[dict] = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_size(self) -> int:
        return int(self.images.shape[2])

    def header(self) -> dict:
        return {
            "task": self.task,
            "instruction": self.instruction,
            "T": self.length,
            "views": int(self.images.shape[1]),
            "H": int(self.images.shape[2]),
            "W": int(self.images.shape[3]),
            "state_dim": int(self.states.shape[1]),
            "action_dim": int(self.actions.shape[1]),
            "seed": self.seed,
            "stages": self.stages,
        }

    def equals(self, other: "Trajectory") -> bool:
        """
        bitwise equality of header and all blocks
        """
        return (
            self.header() == other.header()
            and self.images.tobytes() == other.images.tobytes()
            and self.states.astype("<f4").tobytes() == other.states.astype("<f4").tobytes()
            and self.actions.astype("<f4").tobytes() == other.actions.astype("<f4").tobytes()
        )


def to_bytes(traj: Trajectory) -> bytes:
    header = orjson.dumps(traj.header(), option=orjson.OPT_SORT_KEYS)
    parts = [
        MAGIC,
        struct.pack("<II", FORMAT_VERSION, len(header)),
        header,
        np.ascontiguousarray(traj.images, dtype=np.uint8).tobytes(),
        np.ascontiguousarray(traj.states, dtype="<f4").tobytes(),
        np.ascontiguousarray(traj.actions, dtype="<f4").tobytes(),
    ]
    return b"".join(parts)


def write_trajectory(traj: Trajectory, path: str):
    """
    write traj to path in the .traj format
    """
    if traj.length < 1:
        raise TrajectoryFormatError(f"{path}: refusing to write a trajectory with T=0")
    with open(path, "wb") as file:
        file.write(to_bytes(traj))


def from_bytes(raw: bytes, source: str = "<bytes>") -> Trajectory:
    """
    parse the .traj format

    Raises:
        TrajectoryFormatError: naming the section and byte offset of the defect
    """
    offset = 0

    def take(size: int, section: str) -> bytes:
        nonlocal offset
        if offset + size > len(raw):
            raise TrajectoryFormatError(
                f"{source}: truncated {section} section at byte offset {offset}: "
                f"need {size} bytes, {len(raw) - offset} available"
            )
        chunk = raw[offset : offset + size]
        offset += size
        return chunk

    magic = take(4, "magic")
    if magic != MAGIC:
        raise TrajectoryFormatError(f"{source}: bad magic {magic!r} at byte offset 0")
    version, header_len = struct.unpack("<II", take(8, "preamble"))
    if version != FORMAT_VERSION:
        raise TrajectoryFormatError(
            f"{source}: unsupported version {version} at byte offset 4, expected {FORMAT_VERSION}"
        )
    header_offset = offset
    try:
        header = orjson.loads(take(header_len, "header"))
    except orjson.JSONDecodeError as ex:
        raise TrajectoryFormatError(f"{source}: malformed header at byte offset {header_offset}: {ex}") from ex
    try:
        length = int(header["T"])
        views, height, width = int(header["views"]), int(header["H"]), int(header["W"])
        state_dim, action_dim = int(header["state_dim"]), int(header["action_dim"])
    except (KeyError, TypeError, ValueError) as ex:
        raise TrajectoryFormatError(f"{source}: header at byte offset {header_offset} lacks field {ex}") from ex
    if length < 1:
        raise TrajectoryFormatError(f"{source}: header at byte offset {header_offset} declares T={length}")
    if views != VIEWS:
        raise TrajectoryFormatError(f"{source}: header declares {views} views, expected {VIEWS}")
    image_shape = (length, views, height, width, 3)
    images = np.frombuffer(take(int(np.prod(image_shape)), "images"), dtype=np.uint8).reshape(image_shape)
    states = np.frombuffer(take(length * state_dim * 4, "states"), dtype="<f4").reshape(length, state_dim)
    actions = np.frombuffer(take(length * action_dim * 4, "actions"), dtype="<f4").reshape(length, action_dim)
    if offset != len(raw):
        raise TrajectoryFormatError(
            f"{source}: {len(raw) - offset} trailing bytes after actions at byte offset {offset}"
        )
    return Trajectory(
        task=header.get("task", ""),
        instruction=header.get("instruction"),
        seed=int(header.get("seed", 0)),
        images=images.copy(),
        states=states.astype(np.float32),
        actions=actions.astype(np.float32),
        stages=list(header.get("stages", [])),
    )


def read_trajectory(path: str) -> Trajectory:
    with open(path, "rb") as file:
        raw = file.read()
    return from_bytes(raw, source=path)


@lod_storable
class ManifestEntry:
    """
    one trajectory file of a dataset directory
    """

    path: str
    split: str
    task: str
    instruction: Optional[str] = None
    length: int = 0


@lod_storable
class DatasetManifest:
    """
    the files of a dataset directory and their split membership
    """

    entries: List[ManifestEntry] = field(default_factory=list)
    seed: int = 0
    image_size: int = 32

    def paths(self, split: str) -> List[str]:
        return [entry.path for entry in self.entries if entry.split == split]

    def save(self, directory: str):
        self.save_to_yaml_file(os.path.join(directory, MANIFEST_NAME))

    @classmethod
    def load(cls, directory: str) -> "DatasetManifest":
        path = os.path.join(directory, MANIFEST_NAME)
        if not os.path.isfile(path):
            raise DatasetError(f"no {MANIFEST_NAME} in {directory}")
        return cls.load_from_yaml_file(path)


def subsample(items: Sequence, fraction: Optional[float], seed: int) -> list:
    """
    select floor(fraction*N) whole items with a seeded choice, keeping their order
    """
    if fraction is None:
        return list(items)
    if not 0.0 < fraction <= 1.0:
        raise DatasetError(f"fraction {fraction} outside (0, 1]")
    count = math.floor(fraction * len(items) + 1e-9)
    if count == 0:
        raise DatasetError(f"fraction {fraction} of {len(items)} trajectories selects none")
    chosen = np.random.default_rng(seed).permutation(len(items))[:count]
    return [items[i] for i in sorted(chosen)]


@dataclass
class DatasetSplit:
    """
    D1 (pretrain, play) and D2 (finetune, demos) of a dataset directory
    """

    pretrain: List[Trajectory]
    finetune: List[Trajectory]
    fraction: Optional[float] = None
    pretrain_paths: List[str] = field(default_factory=list)
    finetune_paths: List[str] = field(default_factory=list)

    @classmethod
    def load(
        cls,
        directory: str,
        fraction: Optional[float] = None,
        seed: int = 0,
        mode: Optional[str] = None,
    ) -> "DatasetSplit":
        """
        read the manifest and the trajectories it lists

        Args:
            directory: the dataset directory
            fraction: subsample ratio applied to the split of mode
            seed: subsampling seed
            mode: load only this split if given
        """
        manifest = DatasetManifest.load(directory)
        pretrain_paths = manifest.paths("pretrain")
        finetune_paths = manifest.paths("finetune")
        overlap = set(pretrain_paths) & set(finetune_paths)
        if overlap:
            raise DatasetError(f"files in both splits: {', '.join(sorted(overlap))}")
        if fraction is not None:
            if mode == "pretrain":
                pretrain_paths = subsample(pretrain_paths, fraction, seed)
            else:
                finetune_paths = subsample(finetune_paths, fraction, seed)

        def read_all(paths: List[str]) -> List[Trajectory]:
            return [read_trajectory(os.path.join(directory, p)) for p in paths]

        pretrain = read_all(pretrain_paths) if mode in (None, "pretrain") else []
        finetune = read_all(finetune_paths) if mode in (None, "finetune") else []
        logger.info(
            f"loaded {len(pretrain)} pretrain / {len(finetune)} finetune trajectories from {directory}"
        )
        return cls(pretrain, finetune, fraction, pretrain_paths, finetune_paths)

    def for_mode(self, mode: str) -> List[Trajectory]:
        if mode not in MODES:
            raise DatasetError(f"unknown mode {mode}: expected pretrain or finetune")
        return self.pretrain if mode == "pretrain" else self.finetune


@dataclass(eq=False)
class TrainingWindow:
    """
    history slice h_t ending at focus step t with its goal and targets
    """

    focus: int
    mode: str
    indices: np.ndarray
    images: np.ndarray
    states: np.ndarray
    goal_state: Optional[np.ndarray]
    instruction: Optional[str]
    target_images: np.ndarray
    target_actions: np.ndarray
    valid: np.ndarray


def focus_range(length: int, n: int, mode: str) -> range:
    """
    the valid focus steps t for a trajectory of the given length
    """
    if mode == "finetune":
        return range(0, length - n)
    if mode == "pretrain":
        return range(0, length - n - 1)
    raise WindowError(f"unknown mode {mode}: expected pretrain or finetune")


def sample_window(
    traj: Trajectory,
    t: int,
    m: int,
    n: int,
    mode: str,
    loss_last_only: bool = False,
) -> TrainingWindow:
    """
    cut the window with focus t out of traj

    history indices are max(0, t-m+1+i) so early windows repeat frame 0
    """
    length = traj.length
    valid_range = focus_range(length, n, mode)
    if t not in valid_range:
        raise WindowError(
            f"focus {t} outside valid range [0, {valid_range.stop - 1}] for T={length}, n={n}, {mode}"
        )
    if mode == "finetune" and traj.instruction is None:
        raise WindowError(f"finetune window needs an instruction, {traj.task} seed {traj.seed} has none")
    indices = np.maximum(0, t - (m - 1) + np.arange(m))
    horizon = n if mode == "finetune" else n + 1
    valid = indices + horizon <= length - 1
    if loss_last_only:
        valid[:-1] = False
    image_shape = traj.images.shape[1:]
    target_images = np.zeros((m,) + image_shape, dtype=np.uint8)
    target_actions = np.zeros((m, n, traj.actions.shape[1]), dtype=np.float32)
    for i, tau in enumerate(indices):
        if tau + n <= length - 1:
            target_images[i] = traj.images[tau + n]
            target_actions[i] = traj.actions[tau : tau + n]
    return TrainingWindow(
        focus=t,
        mode=mode,
        indices=indices,
        images=traj.images[indices],
        states=traj.states[indices],
        goal_state=traj.states[t + n + 1] if mode == "pretrain" else None,
        instruction=traj.instruction if mode == "finetune" else None,
        target_images=target_images,
        target_actions=target_actions,
        valid=valid,
    )


@dataclass(eq=False)
class Batch:
    """
    stacked windows, leading dim B
    """

    mode: str
    images: np.ndarray
    states: np.ndarray
    goal_states: Optional[np.ndarray]
    instructions: Optional[List[str]]
    target_images: np.ndarray
    target_actions: np.ndarray
    valid: np.ndarray
    sources: List[Tuple[int, int]] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.images.shape[0])

    @classmethod
    def stack(cls, windows: Sequence[TrainingWindow], sources: Sequence[Tuple[int, int]] = ()) -> "Batch":
        mode = windows[0].mode
        return cls(
            mode=mode,
            images=np.stack([w.images for w in windows]),
            states=np.stack([w.states for w in windows]),
            goal_states=np.stack([w.goal_state for w in windows]) if mode == "pretrain" else None,
            instructions=[w.instruction for w in windows] if mode == "finetune" else None,
            target_images=np.stack([w.target_images for w in windows]),
            target_actions=np.stack([w.target_actions for w in windows]),
            valid=np.stack([w.valid for w in windows]),
            sources=list(sources),
        )


def window_index(trajectories: Sequence[Trajectory], n: int, mode: str) -> List[Tuple[int, int]]:
    """
    all valid (trajectory, focus) pairs; trajectories shorter than n+2 are skipped
    """
    pairs = []
    for i, traj in enumerate(trajectories):
        if traj.length < n + 2:
            logger.warning(f"skipping {traj.task} seed {traj.seed}: T={traj.length} < {n + 2}")
            continue
        if mode == "finetune" and traj.instruction is None:
            raise DatasetError(f"finetune split holds {traj.task} seed {traj.seed} without instruction")
        pairs.extend((i, t) for t in focus_range(traj.length, n, mode))
    return pairs


def batch_iter(
    trajectories: Sequence[Trajectory],
    mode: str,
    batch_size: int,
    seed: int,
    m: int,
    n: int,
    epoch: int = 0,
    loss_last_only: bool = False,
) -> Iterator[Batch]:
    """
    one epoch of batches over a seeded shuffle of all valid windows;
    the final short batch is emitted
    """
    if batch_size < 1:
        raise DatasetError(f"batch size must be >= 1, got {batch_size}")
    pairs = window_index(trajectories, n, mode)
    if not pairs:
        raise DatasetError(f"no valid {mode} windows in {len(trajectories)} trajectories")
    order = np.random.default_rng([seed, epoch]).permutation(len(pairs))
    for start in range(0, len(order), batch_size):
        chunk = [pairs[j] for j in order[start : start + batch_size]]
        windows = [sample_window(trajectories[i], t, m, n, mode, loss_last_only) for i, t in chunk]
        yield Batch.stack(windows, chunk)
