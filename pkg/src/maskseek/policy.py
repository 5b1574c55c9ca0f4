"""Online search-based policy: global search, re-search trigger, switching, cloning."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np

from .lang import TaskResolver, UnknownTaskError
from .mask import BinaryMask, MaskDimensionError, StateLatents, sim_zs
from .store import (MAX_STEP, Action, Dataset, Mode, Trajectory, filter_by_task,
                    strided_frames, subsample)


class NoDemonstrationsError(LookupError):
    """The search pool for the requested task is empty."""


class StepBudgetExhausted(RuntimeError):
    """The episode used up ``max_steps`` without finishing."""


@dataclass(frozen=True)
class PolicyConfig:
    alpha: float = 0.9
    sigma_threshold: float = 0.03
    empty_gripper_threshold: float = 0.003
    stride: int = 4
    rel_mode_threshold: float = 0.5
    subset_fraction: float = 0.08
    max_steps: int = 180
    subset_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        for name in ("sigma_threshold", "empty_gripper_threshold", "rel_mode_threshold"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not 0.0 < self.subset_fraction <= 1.0:
            raise ValueError("subset_fraction must lie in (0, 1]")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True)
class SearchHit:
    traj_ref: int
    frame_index: int
    score: float


@dataclass
class PursuedTrajectory:
    traj_ref: int
    cursor: int
    score_at_selection: float


@dataclass
class SimilarityHistory:
    scores: List[float] = field(default_factory=list)
    sigma_prev: float = 0.0

    def clear(self) -> None:
        self.scores.clear()
        self.sigma_prev = 0.0


# ---------------------------------------------------------------------------
# search

class SearchIndex:
    """Packed masks of every strided frame of a pool, in (trajectory, frame) order."""

    def __init__(self, pool: Sequence[Trajectory], stride: int):
        if not pool:
            raise NoDemonstrationsError("search pool is empty")
        self.pool = list(pool)
        self.stride = stride
        refs, static, gripper = [], [], []
        for ti, traj in enumerate(self.pool):
            for fi, latents in strided_frames(traj, stride):
                refs.append((ti, fi))
                static.append(latents.static_mask)
                gripper.append(latents.gripper_mask)
        self.static_shape = static[0].shape
        self.gripper_shape = gripper[0].shape
        if any(m.shape != self.static_shape for m in static) or \
                any(m.shape != self.gripper_shape for m in gripper):
            raise MaskDimensionError("pool trajectories disagree on camera resolutions")
        self.refs = np.asarray(refs, dtype=np.int64)
        # word-major layout: a query only touches the rows of its nonzero words
        self.static_words = np.ascontiguousarray(np.stack([m.words for m in static]).T)
        self.gripper_words = np.ascontiguousarray(np.stack([m.words for m in gripper]).T)
        self.static_pop = np.array([m.popcount for m in static], dtype=np.float64)
        self.gripper_pop = np.array([m.popcount for m in gripper], dtype=np.float64)

    def __len__(self):
        return len(self.refs)

    def _pair_scores(self, words, pops, query: BinaryMask, lo: int, hi: int) -> np.ndarray:
        nz = np.flatnonzero(query.words)
        inter = np.bitwise_count(words[nz, lo:hi] & query.words[nz, None]).sum(axis=0,
                                                                               dtype=np.int64)
        pa = float(query.popcount)
        pb = pops[lo:hi]
        total = pa + pb
        dice = np.where(total > 0, (2.0 * inter) / np.where(total > 0, total, 1.0), 0.0)
        hi_pop = np.maximum(pa, pb)
        size = np.where(hi_pop > 0, np.minimum(pa, pb) / np.where(hi_pop > 0, hi_pop, 1.0), 0.0)
        return dice * size

    def scores(self, z: StateLatents, alpha: float, lo: int = 0, hi: Optional[int] = None) -> np.ndarray:
        if z.static_mask.shape != self.static_shape or z.gripper_mask.shape != self.gripper_shape:
            raise MaskDimensionError("observation resolution differs from the dataset cameras")
        hi = len(self) if hi is None else hi
        g = self._pair_scores(self.gripper_words, self.gripper_pop, z.gripper_mask, lo, hi)
        s = self._pair_scores(self.static_words, self.static_pop, z.static_mask, lo, hi)
        return alpha * g + (1.0 - alpha) * s

    def search(self, z: StateLatents, alpha: float, workers: int = 1) -> SearchHit:
        n = len(self)
        if workers <= 1 or n < 2 * workers:
            scores = self.scores(z, alpha)
        else:
            bounds = np.linspace(0, n, workers + 1).astype(int)
            with ThreadPoolExecutor(max_workers=workers) as ex:
                parts = list(ex.map(lambda b: self.scores(z, alpha, b[0], b[1]),
                                    zip(bounds[:-1], bounds[1:])))
            scores = np.concatenate(parts)
        best = int(np.argmax(scores))  # first maximum = lowest (trajectory, frame)
        ti, fi = self.refs[best]
        return SearchHit(int(ti), int(fi), float(scores[best]))


PoolLike = Union[SearchIndex, Sequence[Trajectory]]


def global_search(pool: PoolLike, z: StateLatents, config: PolicyConfig,
                  workers: Optional[int] = None) -> SearchHit:
    """Best strided frame by ``sim_zs``; ties go to the lowest (trajectory, frame)."""
    if not isinstance(pool, SearchIndex):
        pool = SearchIndex(pool, config.stride)
    elif pool.stride != config.stride:
        pool = SearchIndex(pool.pool, config.stride)
    return pool.search(z, config.alpha, config.workers if workers is None else workers)


# ---------------------------------------------------------------------------
# trigger and mode rules

def should_research(history: SimilarityHistory, gripper_empty: bool,
                    config: PolicyConfig) -> bool:
    """Fire when the population std of the tracked scores grew by more than the threshold."""
    if not history.scores:
        raise ValueError("similarity history is empty")
    sigma = float(np.std(history.scores))
    threshold = config.empty_gripper_threshold if gripper_empty else config.sigma_threshold
    fire = (sigma - history.sigma_prev) > threshold
    history.sigma_prev = sigma
    return fire


def action_mode(z_gripper: BinaryMask, current_score: float, config: PolicyConfig) -> Mode:
    if z_gripper.popcount > 0 and current_score > config.rel_mode_threshold:
        return Mode.RELATIVE
    return Mode.ABSOLUTE


def _clip(v: float) -> float:
    return min(MAX_STEP, max(-MAX_STEP, v))


def convert_action(action: Action, mode: Mode,
                   pose: Optional[Tuple[float, float, float]]) -> Action:
    """Re-express ``action`` in ``mode`` relative to the live gripper pose.

    Without a pose the action is returned untouched.
    """
    if action.mode is mode or pose is None:
        return action
    x, y, z = pose
    if mode is Mode.RELATIVE:
        return Action(Mode.RELATIVE, _clip(action.dx - x), _clip(action.dy - y),
                      _clip(action.dz - z), action.gripper)
    return Action(Mode.ABSOLUTE, x + action.dx, y + action.dy, z + action.dz, action.gripper)


# ---------------------------------------------------------------------------
# the policy

SearchFn = Callable[[PoolLike, StateLatents, PolicyConfig], SearchHit]


class SearchPolicy:
    """Clones demonstration actions from the most similar dataset state.

    One instance drives one episode at a time; call :meth:`begin_task` before
    the first :meth:`step`.
    """

    def __init__(self, config: PolicyConfig = PolicyConfig(), resolver=None,
                 search_fn: Optional[SearchFn] = None):
        self.config = config
        self.resolver = resolver
        self._resolver_source = None
        self.search_fn = search_fn
        self.task_label: Optional[str] = None
        self.pool: List[Trajectory] = []
        self.index: Optional[SearchIndex] = None
        self._reset_episode()

    def _reset_episode(self) -> None:
        self.pursued: Optional[PursuedTrajectory] = None
        self.history = SimilarityHistory()
        self.current_score = 0.0
        self.relative_latched = False
        self.steps = 0
        self.n_searches = 0
        self.n_switches = 0

    def _ensure_resolver(self, dataset: Dataset):
        # a resolver passed to the constructor is used as-is
        if self.resolver is not None and self._resolver_source is None:
            return self.resolver
        if self._resolver_source is not dataset:
            self.resolver = TaskResolver.fit([t.instruction for t in dataset],
                                             [t.task_label for t in dataset])
            self._resolver_source = dataset
        return self.resolver

    def begin_task(self, instruction: str, dataset: Dataset) -> str:
        resolver = self._ensure_resolver(dataset)
        label = resolver.resolve_known(instruction)
        subset = filter_by_task(dataset, label)
        if not subset:
            raise NoDemonstrationsError(f"no demonstrations for task {label!r}")
        pool = subsample(Dataset(subset), self.config.subset_fraction, per_variant=True,
                         seed=self.config.subset_seed).trajectories
        self.task_label = label
        self.pool = pool
        self.index = SearchIndex(pool, self.config.stride)
        self._reset_episode()
        return label

    def _search(self, obs: StateLatents) -> SearchHit:
        self.n_searches += 1
        if self.search_fn is not None:
            hit = self.search_fn(self.index, obs, self.config)
        else:
            hit = self.index.search(obs, self.config.alpha, self.config.workers)
        self.history.clear()
        self.relative_latched = False
        return hit

    def _adopt(self, hit: SearchHit) -> None:
        if self.pursued is not None and (hit.traj_ref, hit.frame_index) != \
                (self.pursued.traj_ref, self.pursued.cursor):
            self.n_switches += 1
        self.pursued = PursuedTrajectory(hit.traj_ref, hit.frame_index, hit.score)
        self.current_score = hit.score

    def step(self, observation: StateLatents,
             gripper_pose: Optional[Tuple[float, float, float]] = None) -> Action:
        if self.index is None:
            raise RuntimeError("begin_task must be called before step")
        if self.steps >= self.config.max_steps:
            raise StepBudgetExhausted(f"step budget of {self.config.max_steps} exhausted")
        self.steps += 1
        if self.pursued is None:
            self._adopt(self._search(observation))
        else:
            traj = self.pool[self.pursued.traj_ref]
            if self.pursued.cursor >= len(traj):
                self._adopt(self._search(observation))
            else:
                expected = traj.frames[self.pursued.cursor][0]
                score = sim_zs(observation, expected, self.config.alpha)
                self.history.scores.append(score)
                self.current_score = score
                empty = observation.gripper_mask.popcount == 0
                if should_research(self.history, empty, self.config):
                    hit = self._search(observation)
                    if hit.score > self.pursued.score_at_selection:
                        self._adopt(hit)

        traj = self.pool[self.pursued.traj_ref]
        action = traj.frames[self.pursued.cursor][1]
        self.pursued.cursor += 1
        if not self.relative_latched and \
                action_mode(observation.gripper_mask, self.current_score, self.config) is Mode.RELATIVE:
            self.relative_latched = True
        mode = Mode.RELATIVE if self.relative_latched else Mode.ABSOLUTE
        return convert_action(action, mode, gripper_pose)
