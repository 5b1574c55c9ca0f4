"""Deterministic 2D tabletop simulator with a static and a zooming gripper camera.

The table is the unit square.  The gripper moves in (x, y) above it and in
height z; the gripper camera sees a square window of half-width
``fov_k * z`` centred on the gripper, so apparent object size scales with
``1 / z``.  Everything here is a pure function of its inputs.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from importlib import resources
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .mask import (BinaryMask, ColorSpec, PositionFilter, StateLatents, hsv_to_rgb,
                   segment)
from .store import MAX_FRAMES, MAX_STEP, Action, Dataset, Grip, Mode, Trajectory

VARIANTS = ("A", "B", "C", "D")
TRAIN_VARIANTS = ("A", "B", "C")


class GenerationError(RuntimeError):
    """The scripted expert could not solve a scenario within the frame cap."""


# ---------------------------------------------------------------------------
# scenario config

@dataclass(frozen=True)
class ObjectDef:
    object_id: str
    kind: str
    color: str
    shape: str
    size: Tuple[float, float]
    state: str = "free"
    axis: Optional[str] = None
    travel: float = 0.0
    static_region: Optional[Tuple[float, float, float, float]] = None


@dataclass(frozen=True)
class TaskSpec:
    task_label: str
    target_object_id: str
    kind: str
    axis: Optional[str] = None
    distance: float = 0.0
    min_z: float = 0.0
    state: Optional[str] = None
    task_class: str = ""
    instructions: Tuple[str, ...] = ()


@dataclass(frozen=True)
class Scenario:
    static_size: int
    gripper_size: int
    fov_k: float
    world: Dict[str, float]
    bin: Tuple[float, float, float]
    home: Tuple[float, float, float]
    neutral: Tuple[float, float, float]
    colors: Dict[str, Tuple[float, float, float]]
    color_specs: Dict[str, ColorSpec]
    objects: Dict[str, ObjectDef]
    layouts: Dict[str, Dict[str, Tuple[float, float]]]
    tasks: Dict[str, TaskSpec]

    def w(self, key: str) -> float:
        return self.world[key]


def _floats(text: str) -> Tuple[float, ...]:
    return tuple(float(v) for v in text.split(","))


def parse_scenario(text: str) -> Scenario:
    cp = configparser.ConfigParser(inline_comment_prefixes=None)
    cp.read_string(text)
    colors, specs, objects, layouts, tasks = {}, {}, {}, {}, {}
    for sec in cp.sections():
        body = cp[sec]
        if sec.startswith("color."):
            name = sec.split(".", 1)[1]
            colors[name] = _floats(body["hsv"])
            if "hue" in body:
                specs[name] = ColorSpec(_floats(body["hue"]), _floats(body["sat"]),
                                        _floats(body["val"]))
        elif sec.startswith("object."):
            oid = sec.split(".", 1)[1]
            region = _floats(body["static_region"]) if "static_region" in body else None
            objects[oid] = ObjectDef(oid, body["kind"], body["color"], body["shape"],
                                     _floats(body["size"]), body.get("state", "free"),
                                     body.get("axis"), float(body.get("travel", 0.0)), region)
        elif sec.startswith("variant."):
            layouts[sec.split(".", 1)[1]] = {k: _floats(v) for k, v in body.items()}
        elif sec.startswith("task."):
            label = sec.split(".", 1)[1]
            instr = tuple(s.strip() for s in body.get("instructions", "").splitlines() if s.strip())
            tasks[label] = TaskSpec(label, body["object"], body["kind"], body.get("axis"),
                                    float(body.get("distance", 0.0)),
                                    float(body.get("min_z", 0.0)), body.get("state"),
                                    body.get("class", ""), instr)
    poses = ("bin", "home", "neutral")
    world = {k: float(v) for k, v in cp["world"].items() if k not in poses}
    cam = cp["camera"]
    return Scenario(int(cam["static_size"]), int(cam["gripper_size"]), float(cam["fov_k"]),
                    world, *(_floats(cp["world"][k]) for k in poses),
                    colors, specs, objects, layouts, tasks)


@lru_cache(maxsize=None)
def default_scenario() -> Scenario:
    text = resources.files("maskseek.data").joinpath("scenario.ini").read_text("utf-8")
    return parse_scenario(text)


# ---------------------------------------------------------------------------
# state

@dataclass(frozen=True)
class SceneObject:
    object_id: str
    color: Tuple[float, float, float]
    shape: str
    size: Tuple[float, float]
    pose: Tuple[float, float]
    state: str = "free"
    kind: str = "block"
    z: float = 0.0
    home: Tuple[float, float] = (0.0, 0.0)
    axis: Optional[str] = None
    track: Tuple[float, float] = (0.0, 1.0)


@dataclass(frozen=True)
class SimState:
    objects: Tuple[SceneObject, ...]
    gripper_pose: Tuple[float, float, float]
    gripper_closed: bool = False
    held_object: Optional[str] = None
    env_variant: str = "A"
    step_count: int = 0
    seed: int = 0

    def obj(self, object_id: str) -> SceneObject:
        for o in self.objects:
            if o.object_id == object_id:
                return o
        raise KeyError(object_id)


def _half(o: SceneObject, scale: float = 1.0) -> Tuple[float, float]:
    return o.size[0] * scale / 2.0, o.size[1] * scale / 2.0


def _overlaps(a: SceneObject, b: SceneObject, margin: float) -> bool:
    ax, ay = _half(a)
    bx, by = _half(b)
    return (abs(a.pose[0] - b.pose[0]) < ax + bx + margin and
            abs(a.pose[1] - b.pose[1]) < ay + by + margin)


def reset(env_variant: str, seed: int, scenario: Optional[Scenario] = None) -> SimState:
    """Variant layout with seeded jitter and a seeded starting gripper pose."""
    sc = scenario or default_scenario()
    if env_variant not in sc.layouts:
        raise ValueError(f"unknown environment variant {env_variant!r}")
    rng = np.random.default_rng([seed, VARIANTS.index(env_variant) if env_variant in VARIANTS else 99])
    jit = sc.w("jitter")
    bx, by, bh = sc.bin
    bin_obj = SceneObject("_bin", (0, 0, 0), "rect", (2 * bh, 2 * bh), (bx, by), kind="bin")
    for _attempt in range(200):
        objs: List[SceneObject] = []
        ok = True
        for oid, (x, y) in sc.layouts[env_variant].items():
            d = sc.objects[oid]
            if d.kind == "handle":
                # handles sit at the start of their track; jitter across it only
                off = rng.uniform(-0.03, 0.03)
                if d.axis == "x":
                    y += off
                    track = (x, x + d.travel)
                else:
                    x += off
                    track = (y, y + d.travel)
            else:
                x += rng.uniform(-jit, jit)
                y += rng.uniform(-jit, jit)
                track = (0.0, 1.0)
            o = SceneObject(oid, sc.colors[d.color], d.shape, d.size, (x, y), d.state,
                            d.kind, 0.0, (x, y), d.axis, track)
            if any(_overlaps(o, p, 0.02) for p in objs) or _overlaps(o, bin_obj, 0.01):
                ok = False
                break
            objs.append(o)
        if ok:
            break
    else:  # pragma: no cover - layouts in the shipped config always fit
        raise GenerationError(f"could not place objects for variant {env_variant}")
    hx, hy, hz = sc.home
    hj = sc.w("home_jitter")
    gx = hx + rng.uniform(-hj, hj)
    gy = hy + rng.uniform(-hj, hj)
    gz = min(hz + rng.uniform(-hj, hj), sc.w("z_max"))
    return SimState(tuple(objs), (gx, gy, gz), False, None, env_variant, 0, seed)


def neutral(state: SimState, scenario: Optional[Scenario] = None) -> SimState:
    """Gripper centred above the table at maximum height, open."""
    sc = scenario or default_scenario()
    return replace(state, gripper_pose=tuple(sc.neutral), gripper_closed=False,
                   held_object=None)


# ---------------------------------------------------------------------------
# rendering

def _paint(img, xs, ys, o: SceneObject, rgb, scale: float = 1.0, center=None):
    cx, cy = center if center is not None else o.pose
    hx, hy = _half(o, scale)
    if o.shape == "disc":
        inside = (xs[None, :] - cx) ** 2 + (ys[:, None] - cy) ** 2 <= hx * hx
    else:
        inside = (np.abs(xs[None, :] - cx) <= hx) & (np.abs(ys[:, None] - cy) <= hy)
    img[inside] = rgb


def _object_rgb(o: SceneObject) -> Tuple[int, int, int]:
    h, s, v = o.color
    if o.kind == "toggle":
        v = min(1.0, v + 0.25) if o.state == "on" else v
    return hsv_to_rgb(h, s, v)


def _draw_scene(xs: np.ndarray, ys: np.ndarray, state: SimState, sc: Scenario,
                held_scale: float, held_center: Tuple[float, float]) -> np.ndarray:
    img = np.empty((len(ys), len(xs), 3), dtype=np.uint8)
    img[:] = hsv_to_rgb(*sc.colors["floor"])
    on_table = ((xs[None, :] >= 0) & (xs[None, :] <= 1) & (ys[:, None] >= 0) & (ys[:, None] <= 1))
    img[on_table] = hsv_to_rgb(*sc.colors["table"])
    bx, by, bh = sc.bin
    bin_obj = SceneObject("_bin", sc.colors["bin"], "rect", (2 * bh, 2 * bh), (bx, by), kind="bin")
    _paint(img, xs, ys, bin_obj, hsv_to_rgb(*sc.colors["bin"]))
    held = None
    for o in state.objects:
        if o.object_id == state.held_object:
            held = o
            continue
        _paint(img, xs, ys, o, _object_rgb(o))
    if held is not None:
        _paint(img, xs, ys, held, _object_rgb(held), held_scale, held_center)
    return img


def _static_axes(sc: Scenario):
    n = sc.static_size
    centers = (np.arange(n) + 0.5) / n
    return centers, 1.0 - centers


def render_static(state: SimState, scenario: Optional[Scenario] = None) -> np.ndarray:
    """Top-down RGB view of the whole table; row 0 is the far (y = 1) edge."""
    sc = scenario or default_scenario()
    xs, ys = _static_axes(sc)
    gx, gy, _ = state.gripper_pose
    # lifted objects look bigger from above
    scale = 1.0 + 2.0 * state.obj(state.held_object).z if state.held_object else 1.0
    return _draw_scene(xs, ys, state, sc, scale, (gx, gy))


def gripper_half_width(z: float, scenario: Optional[Scenario] = None) -> float:
    sc = scenario or default_scenario()
    return sc.fov_k * z


def _gripper_axes(state: SimState, sc: Scenario):
    n = sc.gripper_size
    gx, gy, gz = state.gripper_pose
    h = sc.fov_k * gz
    u = (np.arange(n) + 0.5) / n * 2.0 - 1.0
    return gx + u * h, gy - u * h


def render_gripper(state: SimState, scenario: Optional[Scenario] = None) -> np.ndarray:
    sc = scenario or default_scenario()
    xs, ys = _gripper_axes(state, sc)
    gx, gy, gz = state.gripper_pose
    # a held object hangs just below the camera and keeps its grasp-height size
    return _draw_scene(xs, ys, state, sc, gz / sc.w("grasp_z"), (gx, gy))


def world_to_static_px(x: float, y: float, scenario: Optional[Scenario] = None) -> Tuple[int, int]:
    sc = scenario or default_scenario()
    n = sc.static_size
    return int(math.floor((1.0 - y) * n)), int(math.floor(x * n))


# ---------------------------------------------------------------------------
# segmentation of the target object

def object_filters(object_id: str, scenario: Optional[Scenario] = None
                   ) -> Tuple[ColorSpec, PositionFilter, PositionFilter]:
    sc = scenario or default_scenario()
    d = sc.objects[object_id]
    spec = sc.color_specs[d.color]
    static_filter = PositionFilter(min_area=2)
    if d.static_region is not None:
        x0, y0, x1, y1 = d.static_region
        n = sc.static_size
        r0 = int(math.floor((1.0 - y1) * n))
        r1 = int(math.ceil((1.0 - y0) * n))
        static_filter = PositionFilter((r0, int(math.floor(x0 * n)), r1, int(math.ceil(x1 * n))),
                                       min_area=2)
    gripper_filter = PositionFilter(min_area=2)
    return spec, static_filter, gripper_filter


def observe(state: SimState, object_id: str, scenario: Optional[Scenario] = None) -> StateLatents:
    """Render both cameras and segment the object of interest."""
    sc = scenario or default_scenario()
    spec, sf, gf = object_filters(object_id, sc)
    return StateLatents(segment(render_static(state, sc), spec, sf),
                        segment(render_gripper(state, sc), spec, gf))


# ---------------------------------------------------------------------------
# dynamics

def _clip(v, lo, hi):
    return min(hi, max(lo, v))


def _step_toward(cur: float, target: float, cap: float) -> float:
    return cur + _clip(target - cur, -cap, cap)


def _disc_hits_box(px, py, r, o: SceneObject) -> bool:
    hx, hy = _half(o)
    dx = max(abs(px - o.pose[0]) - hx, 0.0)
    dy = max(abs(py - o.pose[1]) - hy, 0.0)
    return dx * dx + dy * dy < r * r


def _clamp_object(o: SceneObject) -> SceneObject:
    hx, hy = _half(o)
    x = _clip(o.pose[0], hx, 1.0 - hx)
    y = _clip(o.pose[1], hy, 1.0 - hy)
    return replace(o, pose=(x, y))


def apply_action(state: SimState, action: Action, scenario: Optional[Scenario] = None) -> SimState:
    sc = scenario or default_scenario()
    step = sc.w("step")
    gx, gy, gz = state.gripper_pose
    if action.mode is Mode.ABSOLUTE:
        nx = _step_toward(gx, action.dx, step)
        ny = _step_toward(gy, action.dy, step)
        nz = _step_toward(gz, action.dz, step)
    else:
        if max(abs(action.dx), abs(action.dy), abs(action.dz)) > MAX_STEP + 1e-12:
            raise ValueError("relative action exceeds the step bound")
        nx, ny, nz = gx + action.dx, gy + action.dy, gz + action.dz
    nx = _clip(nx, 0.0, 1.0)
    ny = _clip(ny, 0.0, 1.0)
    nz = _clip(nz, sc.w("z_min"), sc.w("z_max"))
    ddx, ddy = nx - gx, ny - gy

    objects = list(state.objects)
    held = state.held_object
    closed = state.gripper_closed

    # pushing: a low gripper drags whatever it overlaps after the move
    if nz <= sc.w("contact_z") and (ddx or ddy):
        r = sc.w("gripper_radius")
        for i, o in enumerate(objects):
            if o.object_id == held or o.kind not in ("block", "handle"):
                continue
            if not _disc_hits_box(nx, ny, r, o):
                continue
            if o.kind == "handle":
                lo, hi = o.track
                if o.axis == "x":
                    pose = (_clip(o.pose[0] + ddx, lo, hi), o.pose[1])
                else:
                    pose = (o.pose[0], _clip(o.pose[1] + ddy, lo, hi))
                objects[i] = replace(o, pose=pose)
            else:
                objects[i] = _clamp_object(replace(o, pose=(o.pose[0] + ddx, o.pose[1] + ddy)))

    if action.gripper is Grip.CLOSE and held is None:
        # an empty gripper closes (again) on every Close: grasp or press whatever is below
        closed = True
        if nz <= sc.w("grasp_z"):
            best, best_d = None, None
            for i, o in enumerate(objects):
                d = math.hypot(o.pose[0] - nx, o.pose[1] - ny)
                if o.kind == "block" and _disc_hits_box(nx, ny, sc.w("grasp_radius"), o):
                    if best_d is None or d < best_d:
                        best, best_d = i, d
                elif o.kind == "toggle" and d <= _half(o)[0] + sc.w("gripper_radius"):
                    objects[i] = replace(o, state="off" if o.state == "on" else "on")
            if best is not None:
                held = objects[best].object_id
                objects[best] = replace(objects[best], state="grasped")
    elif action.gripper is Grip.OPEN and closed:
        closed = False
        if held is not None:
            i = next(j for j, o in enumerate(objects) if o.object_id == held)
            objects[i] = _clamp_object(replace(objects[i], state="free", z=0.0, pose=(nx, ny)))
            held = None

    if held is not None:
        i = next(j for j, o in enumerate(objects) if o.object_id == held)
        objects[i] = replace(objects[i], pose=(nx, ny), z=nz)

    return replace(state, objects=tuple(objects), gripper_pose=(nx, ny, nz),
                   gripper_closed=closed, held_object=held, step_count=state.step_count + 1)


# ---------------------------------------------------------------------------
# tasks

def task_success(state: SimState, task: TaskSpec, scenario: Optional[Scenario] = None) -> bool:
    sc = scenario or default_scenario()
    o = state.obj(task.target_object_id)
    if task.kind == "displace":
        k = 0 if task.axis == "x" else 1
        moved = o.pose[k] - o.home[k]
        return moved <= task.distance if task.distance < 0 else moved >= task.distance
    if task.kind == "lift":
        return state.held_object == o.object_id and o.z >= task.min_z
    if task.kind == "toggle":
        return o.state == task.state
    if task.kind == "place":
        bx, by, bh = sc.bin
        return (state.held_object != o.object_id and o.z == 0.0 and
                abs(o.pose[0] - bx) <= bh and abs(o.pose[1] - by) <= bh)
    raise ValueError(f"unknown predicate kind {task.kind!r}")


def _rel(dx=0.0, dy=0.0, dz=0.0, grip=Grip.HOLD) -> Action:
    return Action(Mode.RELATIVE, _clip(dx, -MAX_STEP, MAX_STEP), _clip(dy, -MAX_STEP, MAX_STEP),
                  _clip(dz, -MAX_STEP, MAX_STEP), grip)


APPROACH_RADIUS = 0.2
GLIDE_STEP = 0.02


def _goto(state: SimState, target: Tuple[float, float], z_goal: float,
          jitter: Tuple[float, float], sc: Scenario, grip=Grip.HOLD) -> Optional[Action]:
    """Absolute approach from afar, then a straight relative glide onto the target.

    The glide aligns and descends together, so demonstrations contain the target
    at many offsets and heights. Returns ``None`` once the gripper sits at the target.
    """
    gx, gy, gz = state.gripper_pose
    ex, ey, ez = target[0] - gx, target[1] - gy, z_goal - gz
    if math.hypot(ex, ey) > APPROACH_RADIUS:
        return Action(Mode.ABSOLUTE, target[0] + jitter[0], target[1] + jitter[1],
                      sc.w("travel_z"), grip)
    if math.hypot(ex, ey) > 1e-9:
        # stay above contact height until aligned so the glide never drags anything
        ez = max(z_goal, sc.w("contact_z") + 0.01) - gz
    n = math.ceil(max(abs(ex), abs(ey), abs(ez)) / GLIDE_STEP - 1e-9)
    if n == 0 or max(abs(ex), abs(ey), abs(ez)) < 1e-9:
        return None
    return _rel(ex / n, ey / n, ez / n, grip)


def expert_policy(state: SimState, task: TaskSpec, jitter: Tuple[float, float] = (0.0, 0.0),
                  scenario: Optional[Scenario] = None) -> Action:
    """Stateless waypoint controller; ``jitter`` perturbs the absolute approach target."""
    sc = scenario or default_scenario()
    o = state.obj(task.target_object_id)
    gx, gy, gz = state.gripper_pose
    low = sc.w("z_min")
    hx, hy = _half(o)
    r = sc.w("gripper_radius")

    if task.kind in ("lift", "place"):
        if state.held_object == o.object_id:
            if task.kind == "lift":
                return _rel(0, 0, MAX_STEP, Grip.HOLD)
            bx, by, _ = sc.bin
            if gz < sc.w("carry_z") - 1e-9 and math.hypot(bx - gx, by - gy) > 0.004:
                return _rel(0, 0, sc.w("carry_z") - gz, Grip.HOLD)
            if math.hypot(bx - gx, by - gy) > 0.004:
                return Action(Mode.ABSOLUTE, bx, by, sc.w("carry_z"), Grip.HOLD)
            return _rel(0, 0, 0, Grip.OPEN)
        if state.gripper_closed:
            return _rel(0, 0, MAX_STEP, Grip.OPEN)
        act = _goto(state, o.pose, low, jitter, sc)
        return act if act is not None else _rel(0, 0, 0, Grip.CLOSE)

    if task.kind == "toggle":
        if state.gripper_closed:
            return _rel(0, 0, MAX_STEP, Grip.OPEN)
        act = _goto(state, o.pose, low, jitter, sc)
        return act if act is not None else _rel(0, 0, 0, Grip.CLOSE)

    if task.kind == "displace":
        k = 0 if task.axis == "x" else 1
        sign = 1.0 if task.distance > 0 else -1.0
        half = (hx, hy)[k]
        contact = list(o.pose)
        contact[k] -= sign * (half + r + 0.025)
        if state.gripper_closed:
            return _rel(0, 0, MAX_STEP, Grip.OPEN)
        g = (gx, gy)
        behind = sign * (o.pose[k] - g[k]) > 0
        across = abs(g[1 - k] - o.pose[1 - k]) < (hy, hx)[k]
        if gz <= sc.w("contact_z") and behind and across and \
                sign * (o.pose[k] - g[k]) < half + r + 0.03:
            push = [0.0, 0.0]
            push[k] = sign * MAX_STEP
            push[1 - k] = o.pose[1 - k] - g[1 - k]
            return _rel(push[0], push[1], 0.0)
        if gz <= sc.w("contact_z") and not (behind and across):
            return _rel(0, 0, MAX_STEP)
        act = _goto(state, tuple(contact), low, jitter, sc)
        return act if act is not None else _rel(*(sign * MAX_STEP if j == k else 0.0 for j in range(2)))

    raise ValueError(f"unknown task kind {task.kind!r}")


# ---------------------------------------------------------------------------
# demonstrations

@dataclass
class Rollout:
    initial: SimState
    states: List[SimState]
    actions: List[Action]
    success: bool


def rollout_expert(state: SimState, task: TaskSpec, jitter=(0.0, 0.0), max_frames: int = MAX_FRAMES,
                   scenario: Optional[Scenario] = None) -> Rollout:
    sc = scenario or default_scenario()
    states, actions = [], []
    cur = state
    for _ in range(max_frames):
        if task_success(cur, task, sc):
            break
        act = expert_policy(cur, task, jitter, sc)
        states.append(cur)
        actions.append(act)
        cur = apply_action(cur, act, sc)
    ok = task_success(cur, task, sc) and len(actions) > 0
    return Rollout(state, states, actions, ok)


def episode_seed(seed: int, variant: str, task_index: int, rollout: int, attempt: int) -> int:
    ss = np.random.SeedSequence([seed, VARIANTS.index(variant), task_index, rollout, attempt])
    return int(ss.generate_state(1, np.uint32)[0])


def expert_jitter(ep_seed: int, scenario: Optional[Scenario] = None) -> Tuple[float, float]:
    sc = scenario or default_scenario()
    rng = np.random.default_rng([ep_seed, 7])
    j = sc.w("jitter")
    return float(rng.uniform(-j, j)), float(rng.uniform(-j, j))


def solved_episode(variant: str, task: TaskSpec, seed: int, task_index: int, rollout: int,
                   scenario: Optional[Scenario] = None, attempts: int = 20) -> Tuple[int, Rollout]:
    """First attempt whose expert rollout succeeds within the frame cap."""
    sc = scenario or default_scenario()
    for attempt in range(attempts):
        ep = episode_seed(seed, variant, task_index, rollout, attempt)
        ro = rollout_expert(reset(variant, ep, sc), task, expert_jitter(ep, sc), MAX_FRAMES, sc)
        if ro.success:
            return ep, ro
    raise GenerationError(f"expert failed {task.task_label} in {variant} after {attempts} attempts")


def generate_demos(variants: Sequence[str] = TRAIN_VARIANTS, tasks: Optional[Sequence[str]] = None,
                   per_task: int = 17, seed: int = 0,
                   scenario: Optional[Scenario] = None) -> Dataset:
    """Expert demonstrations for every (variant, task, rollout)."""
    sc = scenario or default_scenario()
    if per_task < 1:
        raise ValueError("per_task must be >= 1")
    bad = [v for v in variants if v not in TRAIN_VARIANTS]
    if bad:
        raise ValueError(f"variants {bad} are reserved for evaluation")
    labels = list(sc.tasks) if tasks is None else list(tasks)
    unknown = [t for t in labels if t not in sc.tasks]
    if unknown:
        raise ValueError(f"unknown tasks {unknown}")
    order = list(sc.tasks)
    ds = Dataset()
    for v in variants:
        for label in labels:
            ti = order.index(label)
            task = sc.tasks[label]
            for r in range(per_task):
                ep, ro = solved_episode(v, task, seed, ti, r, sc)
                instr = task.instructions[(r + ti) % len(task.instructions)] \
                    if task.instructions else label
                frames = [(observe(s, task.target_object_id, sc), a)
                          for s, a in zip(ro.states, ro.actions)]
                ds.add(Trajectory(label, instr, v, frames, ep))
    return ds


def replay_masks(traj: Trajectory, scenario: Optional[Scenario] = None) -> List[StateLatents]:
    """Re-run a stored trajectory's actions from its stored initial state."""
    sc = scenario or default_scenario()
    task = sc.tasks[traj.task_label]
    state = reset(traj.env_variant, traj.episode_seed, sc)
    out = []
    for _, act in traj.frames:
        out.append(observe(state, task.target_object_id, sc))
        state = apply_action(state, act, sc)
    return out


def replay_final_state(traj: Trajectory, scenario: Optional[Scenario] = None) -> SimState:
    sc = scenario or default_scenario()
    state = reset(traj.env_variant, traj.episode_seed, sc)
    for _, act in traj.frames:
        state = apply_action(state, act, sc)
    return state
