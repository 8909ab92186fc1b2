"""
Created on 2026-10-18

@author: wf

Closed-loop inference with action chunking and temporal ensembling, and
the success rate, Score and Avg. Len. evaluation protocols.
"""

import hashlib
import logging
import os
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Deque, List, Optional, Sequence, Tuple

import numpy as np
import orjson

from pidm.data import Batch
from pidm.model import Model
from pidm.sim import (
    EPISODE_CAP,
    IMAGE_SIZE,
    Action,
    SimState,
    TaskSpec,
    expert_action,
    render_views,
    reset,
    reset_playground,
    step,
)
from pidm.tensor import no_grad
from pidm.yamlable import lod_storable

logger = logging.getLogger(__name__)

ENSEMBLE_DECAY = 0.1
CHAIN_LENGTH = 5
BLOCK_FAMILIES = ("pick-place", "stack", "push-to-zone")


class PolicyError(RuntimeError):
    """
    a checkpoint or configuration that cannot act
    """


class ReportError(RuntimeError):
    """
    evaluation metrics that fail their consistency check
    """


def temporal_ensemble(
    values: Sequence,
    ages: Sequence[int],
    decay: float = ENSEMBLE_DECAY,
    oldest_favored: bool = False,
) -> np.ndarray:
    """
    weighted average of the predictions covering the current step

    Args:
        values: one prediction (scalar or vector) per covering chunk
        ages: steps since each chunk was emitted, 0 for the newest
        decay: weight exp(-decay * age)
        oldest_favored: weight by exp(-decay * (max_age - age)) instead

    Returns:
        np.ndarray: sum(w * v) / sum(w)
    """
    if len(values) == 0:
        raise PolicyError("temporal ensemble over an empty set of predictions")
    if len(values) != len(ages):
        raise PolicyError(f"{len(values)} values but {len(ages)} ages")
    ages = np.asarray(ages, dtype=np.float64)
    if oldest_favored:
        ages = ages.max() - ages
    weights = np.exp(-decay * ages)
    values = np.asarray(values, dtype=np.float64)
    weights = weights.reshape((-1,) + (1,) * (values.ndim - 1))
    return (weights * values).sum(axis=0) / weights.sum()


@dataclass
class ChunkBuffer:
    """
    the last n predicted chunks with the step they were emitted at
    """

    depth: int
    chunks: Deque[Tuple[int, np.ndarray, np.ndarray]] = field(default_factory=deque)

    def push(self, emitted: int, arm: np.ndarray, gripper: np.ndarray):
        """
        arm [n, arm_dim], gripper [n] probabilities
        """
        self.chunks.append((emitted, arm, gripper))
        while len(self.chunks) > self.depth:
            self.chunks.popleft()

    def covering(self, t: int) -> Tuple[List[np.ndarray], List[float], List[int]]:
        """
        the arm values, gripper probabilities and ages of all chunks predicting step t
        """
        arms, grips, ages = [], [], []
        for emitted, arm, gripper in self.chunks:
            age = t - emitted
            if 0 <= age < arm.shape[0]:
                arms.append(arm[age])
                grips.append(float(gripper[age]))
                ages.append(age)
        return arms, grips, ages


class Policy:
    """
    something that maps the current state and rendered views to an action
    """

    def reset(self, task: TaskSpec, state: SimState):
        pass

    def act(self, state: SimState, images: np.ndarray, t: int) -> Action:
        raise NotImplementedError


class ExpertPolicy(Policy):
    """
    the scripted expert, for harness sanity checks
    """

    def reset(self, task: TaskSpec, state: SimState):
        self.task = task
        self.start = state

    def act(self, state: SimState, images: np.ndarray, t: int) -> Action:
        return expert_action(state, self.task, self.start)


class ModelPolicy(Policy):
    """
    a finetuned model acting on its last m observations

    Attributes:
        model(Model): the network, finetune mode
        ensemble(bool): temporal ensemble instead of first action only
    """

    def __init__(
        self,
        model: Model,
        ensemble: bool = True,
        decay: float = ENSEMBLE_DECAY,
        oldest_favored: bool = False,
    ):
        if model.config.mode != "finetune":
            raise PolicyError(
                "checkpoint was trained in pretrain mode and has no language conditioning; "
                "finetune it before evaluation"
            )
        self.model = model
        self.ensemble = ensemble
        self.decay = decay
        self.oldest_favored = oldest_favored
        self.instruction: Optional[str] = None
        self.history: Deque[Tuple[np.ndarray, np.ndarray]] = deque(maxlen=model.config.history)
        self.buffer = ChunkBuffer(model.config.chunk)

    def reset(self, task: TaskSpec, state: SimState):
        self.instruction = task.instruction
        self.history.clear()
        self.buffer = ChunkBuffer(self.model.config.chunk)

    def _batch(self) -> Batch:
        cfg = self.model.config
        frames = list(self.history)
        frames = [frames[0]] * (cfg.history - len(frames)) + frames
        images = np.stack([f[0] for f in frames])[None]
        states = np.stack([f[1] for f in frames])[None]
        n = cfg.chunk
        return Batch(
            mode="finetune",
            images=images,
            states=states,
            goal_states=None,
            instructions=[self.instruction],
            target_images=np.zeros_like(images),
            target_actions=np.zeros((1, cfg.history, n, cfg.arm_dim + 1), dtype=np.float32),
            valid=np.ones((1, cfg.history), dtype=bool),
        )

    def predict_chunk(self) -> Tuple[np.ndarray, np.ndarray]:
        """
        the chunk decoded at the latest timestep: arm [n, arm_dim], gripper [n]
        """
        with no_grad():
            _frs, inv = self.model.forward(self._batch())
            arm, gripper = self.model.decode_actions(inv)
        return arm.data[0, -1], gripper.data[0, -1, :, 0]

    def act(self, state: SimState, images: np.ndarray, t: int) -> Action:
        self.history.append((images, state.vector()))
        arm, gripper = self.predict_chunk()
        if self.ensemble:
            self.buffer.push(t, arm, gripper)
            arms, grips, ages = self.buffer.covering(t)
            arm_value = temporal_ensemble(arms, ages, self.decay, self.oldest_favored)
            grip_prob = float(temporal_ensemble(grips, ages, self.decay, self.oldest_favored))
        else:
            arm_value, grip_prob = arm[0], float(gripper[0])
        return Action(tuple(float(v) for v in arm_value), 1.0 if grip_prob >= 0.5 else 0.0)


def write_ppm(path: str, image: np.ndarray):
    """
    binary P6 portable pixmap
    """
    height, width = image.shape[:2]
    with open(path, "wb") as file:
        file.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        file.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


@dataclass
class EpisodeResult:
    task: str
    seed: int
    success: bool
    score: int
    steps: int
    final_state: Optional[SimState] = None


def run_episode(
    task: TaskSpec,
    policy: Policy,
    seed: int,
    cap: int = EPISODE_CAP,
    state: Optional[SimState] = None,
    image_size: int = IMAGE_SIZE,
    frames_dir: Optional[str] = None,
) -> EpisodeResult:
    """
    act until the task succeeds or cap steps are taken

    the score counts the stages satisfied at any step
    """
    if state is None:
        state = reset(task, seed)
    start = state
    policy.reset(task, state)
    reached = set()
    success = False
    t = 0
    for t in range(cap + 1):
        reached.update(task.satisfied(state, start))
        if task.success(state, start):
            success = True
            break
        if t == cap:
            break
        images = render_views(state, image_size)
        if frames_dir is not None:
            for view in range(images.shape[0]):
                write_ppm(os.path.join(frames_dir, f"frame_{t:05d}_view{view}.ppm"), images[view])
        state = step(state, policy.act(state, images, t))
    return EpisodeResult(task.family, seed, success, len(reached), t, state)


@lod_storable
class TaskResult:
    """
    success rate, mean Score and mean steps of one task family
    """

    task: str
    episodes: int
    success_rate: float
    mean_score: float
    full_score: int
    mean_steps: float


@lod_storable
class SequenceResult:
    """
    five-task chain evaluation
    """

    chains: int
    position_success: List[float] = field(default_factory=list)
    avg_len: float = 0.0
    completed: List[int] = field(default_factory=list)
    tasks: List[List[str]] = field(default_factory=list)


@lod_storable
class EvalReport:
    """
    per-task results, optional sequence results and the run fingerprint
    """

    tasks: List[TaskResult] = field(default_factory=list)
    sequences: Optional[SequenceResult] = None
    seed: int = 0
    episodes: int = 0
    policy: str = "ensemble"
    fingerprint: str = ""

    def to_json(self) -> bytes:
        return orjson.dumps(asdict(self), option=orjson.OPT_SORT_KEYS | orjson.OPT_INDENT_2)

    def save(self, path: str):
        with open(path, "wb") as file:
            file.write(self.to_json())


def fingerprint(text: bytes) -> str:
    return hashlib.sha256(text).hexdigest()[:16]


def eval_threads() -> int:
    """
    the PIDM_THREADS cap on parallel episodes, default 1
    """
    raw = os.environ.get("PIDM_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        logger.warning(f"ignoring invalid PIDM_THREADS={raw}")
        return 1


def parallel_map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, items))


def eval_benchmark(
    tasks: Sequence[TaskSpec],
    policy_factory: Callable[[], Policy],
    episodes: int,
    seed: int,
    cap: int = EPISODE_CAP,
    image_size: int = IMAGE_SIZE,
    frames_dir: Optional[str] = None,
    threads: Optional[int] = None,
) -> List[TaskResult]:
    """
    K seeded episodes per task; episode i of a task resets with seed+i

    frames of the first episode per task go to frames_dir/<family>
    """
    if episodes < 1:
        raise ValueError(f"episodes must be >= 1, got {episodes}")
    threads = eval_threads() if threads is None else threads
    results = []
    for task in tasks:
        task_frames = None
        if frames_dir is not None:
            task_frames = os.path.join(frames_dir, task.family)
            os.makedirs(task_frames, exist_ok=True)

        def one(i: int) -> EpisodeResult:
            frames = task_frames if i == 0 else None
            result = run_episode(task, policy_factory(), seed + i, cap, image_size=image_size, frames_dir=frames)
            result.final_state = None
            return result

        outcomes = sorted(parallel_map(one, list(range(episodes)), threads), key=lambda r: r.seed)
        results.append(
            TaskResult(
                task=task.family,
                episodes=episodes,
                success_rate=sum(r.success for r in outcomes) / episodes,
                mean_score=sum(r.score for r in outcomes) / episodes,
                full_score=task.full_score,
                mean_steps=sum(r.steps for r in outcomes) / episodes,
            )
        )
        logger.info(f"{task.family}: SR {results[-1].success_rate:.2f} score {results[-1].mean_score:.2f}")
    return results


def sample_chain(rng: np.random.Generator, drawer_open: bool, length: int = CHAIN_LENGTH) -> List[str]:
    """
    a chain of task families that is solvable in sequence: drawer tasks
    toggle its state, the button is pressed at most once and at most one
    block task occurs
    """
    chain = []
    pressed = False
    block_done = False
    for _ in range(length):
        candidates = ["close-drawer" if drawer_open else "open-drawer"]
        if not pressed:
            candidates.append("press-button")
        if not block_done:
            candidates.extend(BLOCK_FAMILIES)
        family = candidates[int(rng.integers(len(candidates)))]
        if family in ("open-drawer", "close-drawer"):
            drawer_open = not drawer_open
        elif family == "press-button":
            pressed = True
        else:
            block_done = True
        chain.append(family)
    return chain


def chain_scenes(count: int, seed: int) -> List[Tuple[SimState, List[str]]]:
    """
    chain i runs in the playground reset with seed+i
    """
    scenes = []
    for i in range(count):
        state = reset_playground(seed + i)
        drawer = state.find("drawer")
        chain = sample_chain(np.random.default_rng([seed + i, 2]), drawer.fraction >= 0.5)
        scenes.append((state, chain))
    return scenes


def avg_len_recount(completed: Sequence[int], length: int = CHAIN_LENGTH) -> float:
    """
    Avg. Len. as the sum over positions of the fraction of chains reaching them
    """
    if not completed:
        return 0.0
    counts = np.asarray(completed)
    return float(sum(np.mean(counts >= position) for position in range(1, length + 1)))


def summarize_chains(completed: Sequence[int], tasks: Sequence[List[str]] = ()) -> SequenceResult:
    """
    per-position success rates and Avg. Len. from the completed counts
    """
    chains = len(completed)
    counts = np.asarray(completed, dtype=np.int64)
    position_success = [
        float(np.mean(counts >= position)) if chains else 0.0 for position in range(1, CHAIN_LENGTH + 1)
    ]
    avg_len = float(counts.mean()) if chains else 0.0
    recount = avg_len_recount(completed)
    if abs(avg_len - recount) > 1e-9:
        raise ReportError(f"Avg. Len. {avg_len} disagrees with recount {recount}")
    return SequenceResult(chains, position_success, avg_len, [int(c) for c in completed], [list(t) for t in tasks])


def eval_sequences(
    chains: int,
    policy_factory: Callable[[], Policy],
    seed: int,
    cap: int = EPISODE_CAP,
    image_size: int = IMAGE_SIZE,
    threads: Optional[int] = None,
) -> SequenceResult:
    """
    run chains of five tasks without resets in between; a chain stops at
    its first failure
    """
    threads = eval_threads() if threads is None else threads
    scenes = chain_scenes(chains, seed)

    def one(item: Tuple[int, Tuple[SimState, List[str]]]) -> int:
        i, (state, families) = item
        policy = policy_factory()
        done = 0
        for family in families:
            result = run_episode(TaskSpec.of(family), policy, seed + i, cap, state=state, image_size=image_size)
            if not result.success:
                break
            state = result.final_state
            done += 1
        return done

    completed = parallel_map(one, list(enumerate(scenes)), threads)
    result = summarize_chains(completed, [families for _state, families in scenes])
    logger.info(f"{chains} chains: Avg. Len. {result.avg_len:.3f}")
    return result
