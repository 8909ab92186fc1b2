"""
Created on 2026-10-18

@author: wf

Deterministic 2D tabletop world: scenes, dynamics, two-view rasterization,
scripted expert demonstrations and language-free play data.
"""

import copy
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np
import orjson

from pidm.data import Trajectory
from pidm.palette import PALETTE, Palette

logger = logging.getLogger(__name__)

MAX_STEP = 0.05
GRASP_RADIUS = 0.04
ON_RADIUS = 0.05
BUTTON_RADIUS = 0.035
BLOCK_SIDE = 0.06
PAD_SIDE = 0.12
DRAWER_WIDTH = 0.16
DRAWER_DEPTH = 0.10
HANDLE_SIDE = 0.03
DRAWER_TRAVEL = 0.2
DRAWER_AXIS = (0.0, -1.0)
HAND_WINDOW = 0.25
EPISODE_CAP = 120
PLAY_HORIZON = 60
IMAGE_SIZE = 32
WAYPOINT_TOLERANCE = 0.01
PUSH_STANDOFF = 0.06
PUSH_CONTACT = 0.01

Vec = Tuple[float, float]

FAMILIES = (
    "pick-place",
    "stack",
    "press-button",
    "open-drawer",
    "close-drawer",
    "push-to-zone",
)

INSTRUCTIONS = {
    "pick-place": "pick the red block and place it on the blue pad",
    "stack": "stack the red block on the green block",
    "press-button": "press the yellow button",
    "open-drawer": "open the drawer",
    "close-drawer": "close the drawer",
    "push-to-zone": "push the green block into the blue zone",
}

VOCABULARY = sorted({word for text in INSTRUCTIONS.values() for word in text.split()})


class ExpertError(RuntimeError):
    """
    the scripted expert met a state it has no phase for
    """


@dataclass
class SimObject:
    """
    a block, pad, button or drawer

    for a drawer position is the cabinet front anchor and
    fraction the opening in [0,1]
    """

    id: int
    kind: str
    position: Vec
    color: str
    lit: bool = False
    fraction: float = 0.0

    @property
    def handle(self) -> Vec:
        return (
            self.position[0] + self.fraction * DRAWER_TRAVEL * DRAWER_AXIS[0],
            self.position[1] + self.fraction * DRAWER_TRAVEL * DRAWER_AXIS[1],
        )


@dataclass
class SimState:
    """
    the world at one tick

    held names a grasped block, handle a grasped drawer
    """

    ee: Vec
    gripper: int = 0
    held: Optional[int] = None
    handle: Optional[int] = None
    objects: List[SimObject] = field(default_factory=list)
    step_count: int = 0

    def find(self, kind: str, color: Optional[str] = None) -> Optional[SimObject]:
        for obj in self.objects:
            if obj.kind == kind and (color is None or obj.color == color):
                return obj
        return None

    def by_id(self, obj_id: int) -> SimObject:
        return next(obj for obj in self.objects if obj.id == obj_id)

    def to_bytes(self) -> bytes:
        return orjson.dumps(asdict(self), option=orjson.OPT_SORT_KEYS)

    def vector(self) -> np.ndarray:
        """
        robot state s_t = (x, y, open, closed)
        """
        return np.array(
            [self.ee[0], self.ee[1], 1.0 - self.gripper, float(self.gripper)],
            dtype=np.float32,
        )


@dataclass
class Action:
    arm: Vec = (0.0, 0.0)
    gripper: float = 0.0

    def clamped(self) -> "Action":
        arm = tuple(float(np.clip(a, -1.0, 1.0)) for a in self.arm)
        return Action(arm, float(np.clip(self.gripper, 0.0, 1.0)))

    def vector(self) -> np.ndarray:
        return np.array([self.arm[0], self.arm[1], self.gripper], dtype=np.float32)

    @classmethod
    def from_vector(cls, values) -> "Action":
        return cls((float(values[0]), float(values[1])), float(values[2]))


def _dist(a: Vec, b: Vec) -> float:
    return float(np.hypot(a[0] - b[0], a[1] - b[1]))


def _vec(a) -> Vec:
    return (float(a[0]), float(a[1]))


def _clip01(p) -> Vec:
    return _vec(np.clip(np.asarray(p, dtype=np.float64), 0.0, 1.0))


def _unit(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    norm = np.hypot(v[0], v[1])
    if norm == 0.0:
        return np.zeros(2)
    return v / norm


# task definitions


def _block_on(state: SimState, color: str, kind: str, target_color: str) -> bool:
    block = state.find("block", color)
    target = state.find(kind, target_color)
    if block is None or target is None:
        return False
    return state.held != block.id and _dist(block.position, target.position) <= ON_RADIUS


def _holding(state: SimState, color: str) -> bool:
    block = state.find("block", color)
    return block is not None and state.held == block.id


def _drawer_fraction(state: SimState) -> float:
    drawer = state.find("drawer")
    return drawer.fraction if drawer is not None else 0.0


def _drawer_grasped(state: SimState) -> bool:
    drawer = state.find("drawer")
    return drawer is not None and state.handle == drawer.id


StagePredicate = Callable[[SimState, SimState], bool]


@dataclass
class Stage:
    name: str
    predicate: StagePredicate


@dataclass
class TaskSpec:
    """
    a task family with its instruction, cumulative stage predicates and
    success predicate; predicates see the current and the reset state
    """

    family: str
    instruction: str
    stages: List[Stage]

    @property
    def full_score(self) -> int:
        return len(self.stages)

    def success(self, state: SimState, start: SimState) -> bool:
        return self.stages[-1].predicate(state, start)

    def satisfied(self, state: SimState, start: SimState) -> List[str]:
        return [stage.name for stage in self.stages if stage.predicate(state, start)]

    @classmethod
    def of(cls, family: str) -> "TaskSpec":
        if family not in TASKS:
            raise ValueError(f"unknown task family {family}: expected one of {', '.join(FAMILIES)}")
        return TASKS[family]


def _push_moved(state: SimState, start: SimState) -> bool:
    now = state.find("block", "green")
    then = start.find("block", "green")
    return now is not None and then is not None and _dist(now.position, then.position) > 0.02


def _in_zone(state: SimState, _start: SimState) -> bool:
    return _block_on(state, "green", "pad", "blue")


TASKS: Dict[str, TaskSpec] = {
    "pick-place": TaskSpec(
        "pick-place",
        INSTRUCTIONS["pick-place"],
        [
            Stage("grasp", lambda s, _: _holding(s, "red") or _block_on(s, "red", "pad", "blue")),
            Stage("place", lambda s, _: _block_on(s, "red", "pad", "blue")),
        ],
    ),
    "stack": TaskSpec(
        "stack",
        INSTRUCTIONS["stack"],
        [
            Stage("grasp", lambda s, _: _holding(s, "red") or _block_on(s, "red", "block", "green")),
            Stage("stack", lambda s, _: _block_on(s, "red", "block", "green")),
        ],
    ),
    "press-button": TaskSpec(
        "press-button",
        INSTRUCTIONS["press-button"],
        [
            Stage(
                "reach",
                lambda s, _: s.find("button") is not None
                and (s.find("button").lit or _dist(s.ee, s.find("button").position) <= GRASP_RADIUS),
            ),
            Stage("press", lambda s, _: s.find("button") is not None and s.find("button").lit),
        ],
    ),
    "open-drawer": TaskSpec(
        "open-drawer",
        INSTRUCTIONS["open-drawer"],
        [
            Stage("grasp", lambda s, _: _drawer_grasped(s) or _drawer_fraction(s) >= 0.8),
            Stage("open", lambda s, _: s.find("drawer") is not None and _drawer_fraction(s) >= 0.8),
        ],
    ),
    "close-drawer": TaskSpec(
        "close-drawer",
        INSTRUCTIONS["close-drawer"],
        [
            Stage("grasp", lambda s, _: _drawer_grasped(s) or _drawer_fraction(s) <= 0.2),
            Stage("close", lambda s, _: s.find("drawer") is not None and _drawer_fraction(s) <= 0.2),
        ],
    ),
    "push-to-zone": TaskSpec(
        "push-to-zone",
        INSTRUCTIONS["push-to-zone"],
        [
            Stage("contact", lambda s, start: _push_moved(s, start) or _in_zone(s, start)),
            Stage("zone", _in_zone),
        ],
    ),
}


# scenes


class _Placer:
    """
    seeded rejection sampling of object positions with a minimum separation
    """

    def __init__(self, rng: np.random.Generator, min_sep: float = 0.15):
        self.rng = rng
        self.min_sep = min_sep
        self.placed: List[Vec] = []

    def sample(self, low: Vec, high: Vec, min_sep: Optional[float] = None) -> Vec:
        sep = self.min_sep if min_sep is None else min_sep
        for _attempt in range(1000):
            p = _vec(self.rng.uniform(low, high))
            if all(_dist(p, q) >= sep for q in self.placed):
                self.placed.append(p)
                return p
        raise RuntimeError(f"could not place an object in {low}..{high} with separation {sep}")


def _scene(objects: List[Tuple[str, Vec, str]], ee: Vec, fraction: float = 0.0) -> SimState:
    sim_objects = [
        SimObject(i, kind, pos, color, fraction=fraction if kind == "drawer" else 0.0)
        for i, (kind, pos, color) in enumerate(objects)
    ]
    return SimState(ee=ee, objects=sim_objects)


def reset(task: TaskSpec, seed: int) -> SimState:
    """
    the task-specific scene for the given seed
    """
    rng = np.random.default_rng(seed)
    placer = _Placer(rng)
    family = task.family
    if family == "pick-place":
        block = placer.sample((0.1, 0.1), (0.9, 0.9))
        pad = placer.sample((0.1, 0.1), (0.9, 0.9))
        objects = [("block", block, "red"), ("pad", pad, "blue")]
        fraction = 0.0
    elif family == "stack":
        red = placer.sample((0.1, 0.1), (0.9, 0.9))
        green = placer.sample((0.1, 0.1), (0.9, 0.9))
        objects = [("block", red, "red"), ("block", green, "green")]
        fraction = 0.0
    elif family == "press-button":
        objects = [("button", placer.sample((0.1, 0.1), (0.9, 0.9)), "yellow")]
        fraction = 0.0
    elif family in ("open-drawer", "close-drawer"):
        anchor = _vec(rng.uniform((0.3, 0.6), (0.7, 0.8)))
        if family == "open-drawer":
            fraction = float(rng.uniform(0.0, 0.1))
        else:
            fraction = float(rng.uniform(0.9, 1.0))
        drawer = SimObject(0, "drawer", anchor, "brown", fraction=fraction)
        placer.placed.append(drawer.handle)
        objects = [("drawer", anchor, "brown")]
    elif family == "push-to-zone":
        green = placer.sample((0.2, 0.2), (0.8, 0.8))
        zone = placer.sample((0.2, 0.2), (0.8, 0.8), min_sep=0.25)
        objects = [("block", green, "green"), ("pad", zone, "blue")]
        fraction = 0.0
    else:
        raise ValueError(f"unknown task family {family}")
    ee = placer.sample((0.1, 0.1), (0.9, 0.9))
    return _scene(objects, ee, fraction)


def _segment_distance(p: Vec, a: Vec, b: Vec) -> float:
    pa = np.subtract(p, a)
    ba = np.subtract(b, a)
    h = float(np.clip(np.dot(pa, ba) / max(np.dot(ba, ba), 1e-12), 0.0, 1.0))
    return float(np.hypot(*(pa - h * ba)))


def reset_playground(seed: int, family: Optional[str] = None) -> SimState:
    """
    the shared scene: red and green blocks, blue pad, yellow button and a
    drawer; the drawer starts closed for open-drawer and open for
    close-drawer, else at random
    """
    rng = np.random.default_rng(seed)
    anchor = _vec(rng.uniform((0.72, 0.78), (0.85, 0.85)))
    if family == "open-drawer":
        is_open = False
    elif family == "close-drawer":
        is_open = True
    else:
        is_open = bool(rng.integers(0, 2))
    fraction = float(rng.uniform(0.9, 1.0) if is_open else rng.uniform(0.0, 0.1))
    while True:
        placer = _Placer(rng, min_sep=0.18)
        red = placer.sample((0.1, 0.1), (0.6, 0.9))
        green = placer.sample((0.15, 0.15), (0.55, 0.85))
        pad = placer.sample((0.15, 0.15), (0.55, 0.85))
        button = placer.sample((0.1, 0.1), (0.6, 0.9))
        push_dir = _unit(np.subtract(pad, green))
        push_start = _vec(np.asarray(green) - 0.1 * push_dir)
        if all(_segment_distance(p, push_start, pad) > 0.1 for p in (red, button)):
            break
    ee = _vec(rng.uniform((0.1, 0.1), (0.9, 0.9)))
    objects = [
        ("drawer", anchor, "brown"),
        ("pad", pad, "blue"),
        ("button", button, "yellow"),
        ("block", red, "red"),
        ("block", green, "green"),
    ]
    return _scene(objects, ee, fraction)


# dynamics


def step(state: SimState, action: Action) -> SimState:
    """
    advance one tick; all inputs are clamped so step is total
    """
    action = action.clamped()
    nxt = copy.deepcopy(state)
    old_ee = np.asarray(state.ee)
    new_ee = np.clip(old_ee + MAX_STEP * np.asarray(action.arm), 0.0, 1.0)
    delta = new_ee - old_ee
    nxt.ee = _vec(new_ee)
    was_closed = state.gripper == 1
    closed = action.gripper >= 0.5
    nxt.gripper = int(closed)

    if nxt.held is not None:
        nxt.by_id(nxt.held).position = nxt.ee
    if nxt.handle is not None:
        drawer = nxt.by_id(nxt.handle)
        along = float(np.dot(delta, DRAWER_AXIS)) / DRAWER_TRAVEL
        drawer.fraction = float(np.clip(drawer.fraction + along, 0.0, 1.0))

    if was_closed and closed and nxt.held is None and nxt.handle is None and np.any(delta != 0.0):
        for obj in nxt.objects:
            if obj.kind == "block" and _dist(obj.position, nxt.ee) < GRASP_RADIUS:
                away = _unit(np.subtract(obj.position, nxt.ee))
                if not np.any(away):
                    away = _unit(delta)
                obj.position = _clip01(new_ee + GRASP_RADIUS * away)

    if not was_closed and closed:
        blocks = [
            (_dist(obj.position, nxt.ee), obj.id)
            for obj in nxt.objects
            if obj.kind == "block" and _dist(obj.position, nxt.ee) <= GRASP_RADIUS
        ]
        if blocks:
            nxt.held = min(blocks)[1]
            nxt.by_id(nxt.held).position = nxt.ee
        else:
            handles = [
                (_dist(obj.handle, nxt.ee), obj.id)
                for obj in nxt.objects
                if obj.kind == "drawer" and _dist(obj.handle, nxt.ee) <= GRASP_RADIUS
            ]
            if handles:
                nxt.handle = min(handles)[1]
    elif was_closed and not closed:
        nxt.held = None
        nxt.handle = None

    if closed:
        for obj in nxt.objects:
            if obj.kind == "button" and _dist(obj.position, nxt.ee) <= GRASP_RADIUS:
                obj.lit = True
    nxt.step_count = state.step_count + 1
    return nxt


# rendering


def _view_extent(state: SimState, view: str) -> Tuple[float, float, float]:
    if view == "base":
        return 0.0, 0.0, 1.0
    if view == "hand":
        half = HAND_WINDOW / 2
        cx, cy = np.clip(state.ee, half, 1.0 - half)
        return float(cx - half), float(cy - half), HAND_WINDOW
    raise ValueError(f"unknown view {view}: expected base or hand")


def render(
    state: SimState,
    view: str,
    image_size: int = IMAGE_SIZE,
    palette: Palette = PALETTE,
    crosshair: bool = True,
) -> np.ndarray:
    """
    rasterize the state into an [image_size, image_size, 3] u8 image

    row 0 is the top of the view (largest y)
    """
    x0, y0, extent = _view_extent(state, view)
    pixel = extent / image_size
    centers = (np.arange(image_size) + 0.5) * pixel
    px = (x0 + centers)[None, :]
    py = (y0 + extent - centers)[:, None]
    image = np.empty((image_size, image_size, 3), dtype=np.uint8)
    image[...] = palette.background_rgb()

    def rect(center: Vec, half_w: float, half_h: float) -> np.ndarray:
        return (np.abs(px - center[0]) <= half_w) & (np.abs(py - center[1]) <= half_h)

    for drawer in (o for o in state.objects if o.kind == "drawer"):
        ax, ay = drawer.position
        half = DRAWER_WIDTH / 2
        image[rect((ax, ay + DRAWER_DEPTH / 2), half, DRAWER_DEPTH / 2)] = palette.rgb("brown")
        hx, hy = drawer.handle
        if drawer.fraction > 0:
            tray = (np.abs(px - ax) <= half) & (py >= hy) & (py <= ay)
            image[tray] = palette.rgb("grey")
        image[rect((hx, hy), HANDLE_SIDE / 2, HANDLE_SIDE / 2)] = palette.rgb("white")
    for pad in (o for o in state.objects if o.kind == "pad"):
        image[rect(pad.position, PAD_SIDE / 2, PAD_SIDE / 2)] = palette.rgb(pad.color)
    for button in (o for o in state.objects if o.kind == "button"):
        disc = (px - button.position[0]) ** 2 + (py - button.position[1]) ** 2 <= BUTTON_RADIUS**2
        color = palette.rgb(button.color) if button.lit else palette.shade(button.color, 0.5)
        image[disc] = color
    blocks = sorted((o for o in state.objects if o.kind == "block"), key=lambda o: o.id)
    held = [o for o in blocks if o.id == state.held]
    for block in [o for o in blocks if o.id != state.held] + held:
        image[rect(block.position, BLOCK_SIDE / 2, BLOCK_SIDE / 2)] = palette.rgb(block.color)
    if crosshair:
        ex, ey = state.ee
        arm = 0.03
        cross = ((np.abs(px - ex) <= pixel / 2) & (np.abs(py - ey) <= arm)) | (
            (np.abs(py - ey) <= pixel / 2) & (np.abs(px - ex) <= arm)
        )
        image[cross] = palette.rgb("red") if state.gripper == 1 else palette.rgb("white")
    return image


def render_views(state: SimState, image_size: int = IMAGE_SIZE) -> np.ndarray:
    """
    both views stacked as [2, H, W, 3]: view 0 hand, view 1 base
    """
    return np.stack([render(state, "hand", image_size), render(state, "base", image_size)])


# scripted expert


def _toward(ee: Vec, target: Vec) -> Vec:
    return _vec(np.clip((np.asarray(target) - np.asarray(ee)) / MAX_STEP, -1.0, 1.0))


def _approach(state: SimState, target: Vec) -> Action:
    """
    reach target with an open gripper, then close
    """
    if state.gripper == 1:
        return Action(_toward(state.ee, target), 0.0)
    if _dist(state.ee, target) <= WAYPOINT_TOLERANCE:
        return Action((0.0, 0.0), 1.0)
    return Action(_toward(state.ee, target), 0.0)


def _require(obj: Optional[SimObject], what: str) -> SimObject:
    if obj is None:
        raise ExpertError(f"scene has no {what}")
    return obj


def _transport(state: SimState, block: SimObject, target: Vec) -> Action:
    if state.held == block.id:
        if _dist(state.ee, target) <= WAYPOINT_TOLERANCE:
            return Action((0.0, 0.0), 0.0)
        return Action(_toward(state.ee, target), 1.0)
    return _approach(state, block.position)


def _push(state: SimState, block: SimObject, zone: SimObject) -> Action:
    b = np.asarray(block.position)
    direction = _unit(np.asarray(zone.position) - b)
    staging = _vec(b - PUSH_STANDOFF * direction)
    contact = _vec(b - PUSH_CONTACT * direction)
    if state.gripper == 1:
        rel = np.asarray(state.ee) - b
        along = float(np.dot(-rel, direction))
        perp = abs(float(rel[0] * direction[1] - rel[1] * direction[0]))
        in_position = (
            state.held is None
            and along > 0
            and perp <= WAYPOINT_TOLERANCE
            and _dist(state.ee, contact) <= PUSH_STANDOFF
        )
        if in_position:
            return Action(_toward(state.ee, contact), 1.0)
        return Action(_toward(state.ee, staging), 0.0)
    return _approach(state, staging)


def expert_action(state: SimState, task: TaskSpec, start: Optional[SimState] = None) -> Action:
    """
    the scripted phase machine's action for the current state
    """
    if start is None:
        start = state
    if task.success(state, start):
        return Action((0.0, 0.0), 0.0)
    family = task.family
    if family == "pick-place":
        block = _require(state.find("block", "red"), "red block")
        pad = _require(state.find("pad", "blue"), "blue pad")
        return _transport(state, block, pad.position)
    if family == "stack":
        block = _require(state.find("block", "red"), "red block")
        base = _require(state.find("block", "green"), "green block")
        return _transport(state, block, base.position)
    if family == "press-button":
        button = _require(state.find("button"), "button")
        return _approach(state, button.position)
    if family in ("open-drawer", "close-drawer"):
        drawer = _require(state.find("drawer"), "drawer")
        if state.handle == drawer.id:
            goal = 1.0 if family == "open-drawer" else 0.0
            target = (
                drawer.position[0] + goal * DRAWER_TRAVEL * DRAWER_AXIS[0],
                drawer.position[1] + goal * DRAWER_TRAVEL * DRAWER_AXIS[1],
            )
            return Action(_toward(state.ee, target), 1.0)
        if state.held is not None:
            return Action((0.0, 0.0), 0.0)
        return _approach(state, drawer.handle)
    if family == "push-to-zone":
        block = _require(state.find("block", "green"), "green block")
        zone = _require(state.find("pad", "blue"), "blue zone")
        if state.held is not None:
            return Action((0.0, 0.0), 0.0)
        return _push(state, block, zone)
    raise ExpertError(f"no expert phases for task family {family}")


# recording


@dataclass
class Recorder:
    """
    collects (o_t, s_t, a_t) per step into a Trajectory
    """

    image_size: int = IMAGE_SIZE
    images: List[np.ndarray] = field(default_factory=list)
    states: List[np.ndarray] = field(default_factory=list)
    actions: List[np.ndarray] = field(default_factory=list)

    def record(self, state: SimState, action: Action):
        self.images.append(render_views(state, self.image_size))
        self.states.append(state.vector())
        self.actions.append(action.clamped().vector())

    def trajectory(self, task: str, instruction: Optional[str], seed: int, stages: list) -> Trajectory:
        return Trajectory(
            task=task,
            instruction=instruction,
            seed=int(seed),
            images=np.stack(self.images),
            states=np.stack(self.states),
            actions=np.stack(self.actions),
            stages=stages,
        )


def run_expert(task: TaskSpec, state: SimState, cap: int = EPISODE_CAP, recorder: Optional[Recorder] = None):
    """
    roll the expert out from state until success or cap

    Returns:
        tuple: final state, success flag, stage event log
    """
    start = state
    events = []
    reached = set()
    for t in range(cap + 1):
        for name in task.satisfied(state, start):
            if name not in reached:
                reached.add(name)
                events.append({"step": t, "stage": name})
        action = expert_action(state, task, start)
        done = task.success(state, start)
        if recorder is not None:
            recorder.record(state, action)
        if done or t == cap:
            return state, done, events
        state = step(state, action)
    return state, False, events


def gen_demos(
    task: TaskSpec,
    count: int,
    seed: int,
    scene: str = "task",
    image_size: int = IMAGE_SIZE,
) -> List[Trajectory]:
    """
    expert demonstrations with instructions and stage annotations

    demo i uses reset seed seed+i
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    demos = []
    for i in range(count):
        demo_seed = seed + i
        if scene == "playground":
            state = reset_playground(demo_seed, task.family)
        elif scene == "task":
            state = reset(task, demo_seed)
        else:
            raise ValueError(f"unknown scene {scene}: expected task or playground")
        recorder = Recorder(image_size)
        _final, success, events = run_expert(task, state, recorder=recorder)
        if not success:
            raise ExpertError(f"expert failed {task.family} for seed {demo_seed}")
        demos.append(recorder.trajectory(task.family, task.instruction, demo_seed, events))
    logger.info(f"generated {count} {task.family} demos from seed {seed}")
    return demos


class PlaySampler:
    """
    seeded primitive sampler for task-agnostic exploration

    primitives: random waypoint, grasp attempt, drawer jiggle and button tap
    """

    def __init__(self, rng: np.random.Generator, noise: float = 0.1):
        self.rng = rng
        self.noise = noise
        self.plan: List[Tuple[Optional[Vec], float]] = []

    def _move(self, target: Vec, gripper: float, steps: int = 25):
        self.plan.extend([(target, gripper)] * steps)

    def _hold(self, gripper: float):
        self.plan.append((None, gripper))

    def _random_point(self) -> Vec:
        return _vec(self.rng.uniform(0.05, 0.95, size=2))

    def _new_primitive(self, state: SimState):
        kind = self.rng.choice(["waypoint", "grasp", "jiggle", "press"])
        if kind == "waypoint":
            self._move(self._random_point(), float(self.rng.integers(0, 2)), steps=12)
        elif kind == "grasp":
            blocks = [o for o in state.objects if o.kind == "block"]
            if blocks:
                block = blocks[int(self.rng.integers(len(blocks)))]
                self._move(block.position, 0.0, steps=15)
                self._hold(1.0)
                self._move(self._random_point(), 1.0, steps=10)
                self._hold(0.0)
            else:
                self._move(self._random_point(), 0.0, steps=12)
        elif kind == "jiggle":
            drawer = state.find("drawer")
            if drawer is not None:
                self._move(drawer.handle, 0.0, steps=15)
                self._hold(1.0)
                shift = float(self.rng.uniform(-0.15, 0.15))
                target = (drawer.handle[0], float(np.clip(drawer.handle[1] + shift, 0.0, 1.0)))
                self._move(target, 1.0, steps=5)
                self._hold(0.0)
            else:
                self._move(self._random_point(), 0.0, steps=12)
        else:
            button = state.find("button")
            if button is not None:
                self._move(button.position, 0.0, steps=15)
                self._hold(1.0)
                self._hold(0.0)
            else:
                self._move(self._random_point(), 0.0, steps=12)

    def action(self, state: SimState) -> Action:
        while True:
            if not self.plan:
                self._new_primitive(state)
            target, gripper = self.plan[0]
            if target is not None and _dist(state.ee, target) <= WAYPOINT_TOLERANCE:
                # target reached, skip the rest of this move
                while self.plan and self.plan[0] == (target, gripper):
                    self.plan.pop(0)
                continue
            self.plan.pop(0)
            if target is None:
                return Action((0.0, 0.0), gripper)
            arm = np.asarray(_toward(state.ee, target)) + self.rng.normal(0.0, self.noise, size=2)
            return Action(_vec(arm), gripper).clamped()


def gen_play(
    count: int,
    horizon: int = PLAY_HORIZON,
    seed: int = 0,
    image_size: int = IMAGE_SIZE,
) -> List[Trajectory]:
    """
    language-free play trajectories in the playground scene

    play trajectory i uses seed seed+i for both scene and sampler
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    play = []
    for i in range(count):
        play_seed = seed + i
        state = reset_playground(play_seed)
        sampler = PlaySampler(np.random.default_rng([play_seed, 1]))
        recorder = Recorder(image_size)
        for t in range(horizon):
            action = sampler.action(state)
            recorder.record(state, action)
            if t < horizon - 1:
                state = step(state, action)
        play.append(recorder.trajectory("play", None, play_seed, []))
    logger.info(f"generated {count} play trajectories of horizon {horizon} from seed {seed}")
    return play
