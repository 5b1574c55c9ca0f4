"""Evaluation protocols, the search benchmark, clustering reports and report files."""

from __future__ import annotations

import configparser
import csv
import math
import time
from collections import Counter
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import simenv
from .lang import (InvalidInstructionError, UnknownTaskError, ari, embed_many,
                   kmeans, nmi, pca_2d, silhouette)
from .mask import BinaryMask, StateLatents
from .policy import PolicyConfig, SearchIndex, SearchPolicy, StepBudgetExhausted
from .store import MAX_FRAMES, Action, Dataset, Grip, Mode, Trajectory

# steps-to-success milestone reported next to the success rate
STEP_MILESTONE = 125


class EvalConfigError(ValueError):
    """The evaluation cannot run with the given dataset or environment."""


@dataclass
class EpisodeRecord:
    task_label: str
    instruction: str
    resolved_label: Optional[str]
    success: bool
    steps: int

    @property
    def resolver_miss(self) -> bool:
        return self.resolved_label != self.task_label


@dataclass
class EvalReport:
    setting: str
    episodes: List[EpisodeRecord] = field(default_factory=list)
    config_snapshot: Dict[str, object] = field(default_factory=dict)

    @property
    def per_task(self) -> Dict[str, Tuple[int, int]]:
        """task label -> (rollouts, successes), in first-seen order."""
        out: Dict[str, List[int]] = {}
        for ep in self.episodes:
            row = out.setdefault(ep.task_label, [0, 0])
            row[0] += 1
            row[1] += ep.success
        return {k: (v[0], v[1]) for k, v in out.items()}

    @property
    def rollouts(self) -> int:
        return len(self.episodes)

    @property
    def successes(self) -> int:
        return sum(ep.success for ep in self.episodes)

    @property
    def overall_success_rate(self) -> Optional[float]:
        """``None`` when no episode ran: the rate is undefined."""
        return self.successes / self.rollouts if self.episodes else None

    @property
    def success_steps(self) -> List[int]:
        return [ep.steps for ep in self.episodes if ep.success]

    @property
    def resolver_misses(self) -> int:
        return sum(ep.resolver_miss for ep in self.episodes)

    def step_histogram(self, bin_width: int = 10) -> List[Tuple[int, int, int]]:
        """(low, high, count) bins of steps-to-success, ``low < steps <= high``."""
        steps = self.success_steps
        if not steps:
            return []
        top = max(steps)
        return [(lo, lo + bin_width, sum(lo < s <= lo + bin_width for s in steps))
                for lo in range(0, top, bin_width)]

    def fraction_solved_within(self, steps: int = STEP_MILESTONE) -> Optional[float]:
        """Share of successful episodes that needed at most ``steps`` steps."""
        done = self.success_steps
        if not done:
            return None
        return sum(s <= steps for s in done) / len(done)


def _config_snapshot(config: PolicyConfig, **extra) -> Dict[str, object]:
    snap: Dict[str, object] = dict(asdict(config))
    snap.update(extra)
    return snap


def _held_out_variant(dataset: Dataset, env_variant: str, sc: simenv.Scenario) -> None:
    if env_variant not in sc.layouts:
        raise EvalConfigError(f"environment variant {env_variant!r} is not in the scenario")
    seen = {t.env_variant for t in dataset}
    if env_variant in seen:
        raise EvalConfigError(f"dataset already contains demonstrations from {env_variant!r}")


def _run_episode(policy: Optional[SearchPolicy], expert_task: Optional[simenv.TaskSpec],
                 state: simenv.SimState, task: simenv.TaskSpec, max_steps: int,
                 sc: simenv.Scenario) -> Tuple[bool, int]:
    """Drive one episode; returns (success, steps used)."""
    steps = 0
    while steps < max_steps:
        if expert_task is not None:
            action = simenv.expert_policy(state, expert_task, scenario=sc)
        else:
            obs = simenv.observe(state, task.target_object_id, sc)
            try:
                action = policy.step(obs, state.gripper_pose)
            except StepBudgetExhausted:
                break
        state = simenv.apply_action(state, action, sc)
        steps += 1
        if simenv.task_success(state, task, sc):
            return True, steps
    return False, steps


def eval_first_setting(dataset: Dataset, config: PolicyConfig = PolicyConfig(),
                       rollouts_per_task: int = 10, seed: int = 0, env_variant: str = "D",
                       tasks: Optional[Sequence[str]] = None, agent: str = "search",
                       search_fn=None, scenario: Optional[simenv.Scenario] = None) -> EvalReport:
    """Every task from initial states of unseen expert demonstrations in ``env_variant``.

    ``agent="expert"`` swaps the search policy for the scripted expert, which
    makes a useful sanity check of the harness itself.
    """
    sc = scenario or simenv.default_scenario()
    if agent not in ("search", "expert"):
        raise EvalConfigError(f"unknown agent {agent!r}")
    _held_out_variant(dataset, env_variant, sc)
    labels = list(sc.tasks) if tasks is None else list(tasks)
    order = list(sc.tasks)
    policy = SearchPolicy(config, search_fn=search_fn) if agent == "search" else None
    report = EvalReport("first", config_snapshot=_config_snapshot(
        config, seed=seed, env_variant=env_variant, rollouts_per_task=rollouts_per_task,
        agent=agent))
    for label in labels:
        if label not in sc.tasks:
            raise EvalConfigError(f"unknown task {label!r}")
        task = sc.tasks[label]
        for r in range(rollouts_per_task):
            try:
                _, held_out = simenv.solved_episode(env_variant, task, seed, order.index(label),
                                                    r, sc)
            except simenv.GenerationError as exc:
                raise EvalConfigError(f"no held-out demonstration: {exc}") from exc
            instruction = task.instructions[r % len(task.instructions)] if task.instructions \
                else label
            if policy is not None:
                resolved = policy.begin_task(instruction, dataset)
                if resolved != label:
                    report.episodes.append(EpisodeRecord(label, instruction, resolved, False, 0))
                    continue
            ok, steps = _run_episode(policy, task if policy is None else None,
                                     held_out.initial, task, config.max_steps, sc)
            report.episodes.append(EpisodeRecord(label, instruction, label, ok, steps))
    return report


def eval_second_setting(dataset: Dataset, config: PolicyConfig = PolicyConfig(),
                        n_instructions: int = 80, seed: int = 0, env_variant: str = "D",
                        tasks: Optional[Sequence[str]] = None, search_fn=None,
                        scenario: Optional[simenv.Scenario] = None) -> EvalReport:
    """Instruction-driven episodes from the neutral pose.

    Tasks come round-robin in a reshuffled order each round, so every task gets
    the same share of episodes; the phrasing is drawn at random. Instructions
    the resolver maps to the wrong task (or cannot map at all) count as
    failures and are recorded as resolver misses.
    """
    sc = scenario or simenv.default_scenario()
    if n_instructions < 0:
        raise EvalConfigError("n_instructions must be >= 0")
    _held_out_variant(dataset, env_variant, sc)
    labels = list(sc.tasks) if tasks is None else list(tasks)
    for label in labels:
        if label not in sc.tasks:
            raise EvalConfigError(f"unknown task {label!r}")
    rng = np.random.default_rng([seed, 2])
    policy = SearchPolicy(config, search_fn=search_fn)
    report = EvalReport("second", config_snapshot=_config_snapshot(
        config, seed=seed, env_variant=env_variant, n_instructions=n_instructions))
    schedule: List[str] = []
    while len(schedule) < n_instructions:
        schedule.extend(labels[i] for i in rng.permutation(len(labels)))
    for e, label in enumerate(schedule[:n_instructions]):
        task = sc.tasks[label]
        phrasings = task.instructions or (label,)
        instruction = phrasings[int(rng.integers(len(phrasings)))]
        state = simenv.neutral(simenv.reset(env_variant, int(
            np.random.SeedSequence([seed, e]).generate_state(1, np.uint32)[0]), sc), sc)
        try:
            resolved = policy.begin_task(instruction, dataset)
        except (UnknownTaskError, InvalidInstructionError):
            report.episodes.append(EpisodeRecord(label, instruction, None, False, 0))
            continue
        if resolved != label:
            # the policy would chase the wrong object; the episode cannot succeed
            report.episodes.append(EpisodeRecord(label, instruction, resolved, False, 0))
            continue
        ok, steps = _run_episode(policy, None, state, task, config.max_steps, sc)
        report.episodes.append(EpisodeRecord(label, instruction, resolved, ok, steps))
    return report


# ---------------------------------------------------------------------------
# search benchmark

@dataclass
class BenchReport:
    pool_size: int
    frames_per_traj: int
    stride: int
    frames_scanned: int
    repeats: int
    threads: int
    min_us: float
    median_us: float
    p95_us: float
    threads_consistent: bool
    hits: List[Tuple[int, int, float]]
    latencies_us: List[float]


def _blob_bank(rng: np.random.Generator, n: int, size: int) -> List[BinaryMask]:
    """Random axis-aligned blobs, roughly what segmentation yields."""
    bank = []
    for _ in range(n):
        bits = np.zeros((size, size), dtype=bool)
        for _ in range(int(rng.integers(0, 3))):
            h, w = rng.integers(2, size // 3, size=2)
            r, c = rng.integers(0, size - h), rng.integers(0, size - w)
            bits[r:r + h, c:c + w] = True
        bank.append(BinaryMask(bits))
    return bank


def synthetic_pool(pool_size: int, frames_per_traj: int, seed: int = 0,
                   static_size: int = 128, gripper_size: int = 64,
                   bank_size: int = 256) -> List[Trajectory]:
    """Trajectories whose frames are drawn from a bank of random blob masks."""
    if not 1 <= frames_per_traj <= MAX_FRAMES:
        raise ValueError(f"frames_per_traj must lie in [1, {MAX_FRAMES}]")
    rng = np.random.default_rng(seed)
    static = _blob_bank(rng, bank_size, static_size)
    gripper = _blob_bank(rng, bank_size, gripper_size)
    hold = Action(Mode.RELATIVE, 0.0, 0.0, 0.0, Grip.HOLD)
    pool = []
    for _ in range(pool_size):
        si = rng.integers(0, bank_size, size=frames_per_traj)
        gi = rng.integers(0, bank_size, size=frames_per_traj)
        frames = [(StateLatents(static[a], gripper[b]), hold) for a, b in zip(si, gi)]
        pool.append(Trajectory("bench", "bench", "A", frames))
    return pool


def bench_search(pool_size: int = 200, frames_per_traj: int = 64, stride: int = 4,
                 repeats: int = 200, threads: int = 1, seed: int = 0) -> BenchReport:
    """Time global search over a synthetic pool and cross-check thread counts."""
    if repeats < 1:
        raise ValueError("empty benchmark: repeats must be >= 1")
    if pool_size < 1 or threads < 1:
        raise ValueError("pool_size and threads must be >= 1")
    pool = synthetic_pool(pool_size, frames_per_traj, seed)
    index = SearchIndex(pool, stride)
    rng = np.random.default_rng([seed, 1])
    queries = [StateLatents(a, b) for a, b in zip(_blob_bank(rng, repeats, 128),
                                                  _blob_bank(rng, repeats, 64))]
    alpha = PolicyConfig().alpha
    index.search(queries[0], alpha, threads)  # warm-up
    times, hits = [], []
    for z in queries:
        t0 = time.perf_counter_ns()
        hit = index.search(z, alpha, threads)
        times.append((time.perf_counter_ns() - t0) / 1000.0)
        hits.append((hit.traj_ref, hit.frame_index, hit.score))
    other = 1 if threads > 1 else 2
    consistent = all((h.traj_ref, h.frame_index, h.score) == hits[i]
                     for i, h in enumerate(index.search(z, alpha, other) for z in queries))
    t = np.array(times)
    return BenchReport(pool_size, frames_per_traj, stride, len(index), repeats, threads,
                       float(t.min()), float(np.median(t)), float(np.percentile(t, 95)),
                       consistent, hits, times)


# ---------------------------------------------------------------------------
# clustering report

@dataclass
class ClusterReport:
    k: int
    seed: int
    n_instructions: int
    n_tasks: int
    silhouette: float
    ari: float
    nmi: float
    cluster_counts: List[int]
    instructions: List[str]
    true_labels: List[str]
    predicted: List[int]
    projection: np.ndarray


def load_templates(path=None) -> Tuple[List[str], List[str]]:
    """(instructions, task labels) from a template file; the shipped corpus by default."""
    cp = configparser.ConfigParser(interpolation=None)
    if path is None:
        text = resources.files("maskseek.data").joinpath("task_templates.ini").read_text()
    else:
        text = Path(path).read_text()
    cp.read_string(text)
    instructions, labels = [], []
    for sec in cp.sections():
        if not sec.startswith("task."):
            continue
        for line in cp[sec].get("instructions", "").splitlines():
            if line.strip():
                instructions.append(line.strip())
                labels.append(sec.split(".", 1)[1])
    if not instructions:
        raise ValueError("template file defines no instructions")
    return instructions, labels


def cluster_instructions(instructions: Sequence[str], labels: Sequence[str], k: Optional[int] = None,
                         seed: int = 0) -> ClusterReport:
    x = embed_many(instructions)
    k = len(set(labels)) if k is None else k
    cl = kmeans(x, k, seed=seed)
    sil = silhouette(x, cl.labels) if len(set(cl.labels.tolist())) > 1 else float("nan")
    counts = np.bincount(cl.labels, minlength=k).tolist()
    return ClusterReport(k, seed, len(instructions), len(set(labels)), sil, ari(labels, cl.labels),
                         nmi(labels, cl.labels), counts, list(instructions), list(labels),
                         cl.labels.tolist(), pca_2d(x))


# ---------------------------------------------------------------------------
# report files

def _fmt(v) -> str:
    if v is None:
        return "undefined"
    if isinstance(v, float):
        return "nan" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def _sibling(path: Path, suffix: str) -> Path:
    return path.with_name(f"{path.stem}_{suffix}")


def write_eval_report(report: EvalReport, path, figures: bool = True) -> List[Path]:
    """Per-task CSV at ``path`` plus episode CSV, summary and figures beside it."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    written = [path]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["task_label", "rollouts", "successes", "success_rate"])
        for label, (n, s) in report.per_task.items():
            w.writerow([label, n, s, _fmt(s / n)])
        w.writerow(["overall", report.rollouts, report.successes,
                    _fmt(report.overall_success_rate)])
    episodes = _sibling(path, "episodes.csv")
    with episodes.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "task_label", "instruction", "resolved_label", "success", "steps"])
        for i, ep in enumerate(report.episodes):
            w.writerow([i, ep.task_label, ep.instruction, ep.resolved_label or "",
                        int(ep.success), ep.steps])
    written.append(episodes)
    summary = _sibling(path, "summary.txt")
    summary.write_text(format_eval_summary(report))
    written.append(summary)
    if figures and report.episodes:
        from . import plotting
        written += plotting.eval_figures(report, path)
    return written


def format_eval_summary(report: EvalReport) -> str:
    lines = [f"setting: {report.setting}",
             f"episodes: {report.rollouts}",
             f"successes: {report.successes}",
             f"overall_success_rate: {_fmt(report.overall_success_rate)}",
             f"resolver_misses: {report.resolver_misses}",
             f"fraction_solved_within_{STEP_MILESTONE}: "
             f"{_fmt(report.fraction_solved_within(STEP_MILESTONE))}",
             "step_histogram:"]
    lines += [f"  ({lo}, {hi}]: {n}" for lo, hi, n in report.step_histogram()]
    lines.append("config:")
    lines += [f"  {k}: {v}" for k, v in report.config_snapshot.items()]
    return "\n".join(lines) + "\n"


def write_bench_report(report: BenchReport, path, figures: bool = True) -> List[Path]:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["pool_size", "frames_per_traj", "stride", "frames_scanned", "repeats",
                    "threads", "min_us", "median_us", "p95_us", "threads_consistent"])
        w.writerow([report.pool_size, report.frames_per_traj, report.stride, report.frames_scanned,
                    report.repeats, report.threads, f"{report.min_us:.1f}",
                    f"{report.median_us:.1f}", f"{report.p95_us:.1f}",
                    int(report.threads_consistent)])
    written = [path]
    if figures:
        from . import plotting
        written.append(plotting.bench_figure(report, path))
    return written


def write_cluster_report(report: ClusterReport, path, figures: bool = True) -> List[Path]:
    """Metrics CSV, per-cluster counts, 2D projection CSV and a scatter figure."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for name in ("k", "seed", "n_instructions", "n_tasks", "silhouette", "ari", "nmi"):
            w.writerow([name, _fmt(getattr(report, name))])
    counts = _sibling(path, "clusters.csv")
    with counts.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cluster", "size", "majority_task"])
        for j, n in enumerate(report.cluster_counts):
            members = [t for t, p in zip(report.true_labels, report.predicted) if p == j]
            top = Counter(members).most_common(1)[0][0] if members else ""
            w.writerow([j, n, top])
    proj = _sibling(path, "projection.csv")
    with proj.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["instruction", "task_label", "cluster", "pc1", "pc2"])
        for text, lab, c, (x, y) in zip(report.instructions, report.true_labels,
                                        report.predicted, report.projection):
            w.writerow([text, lab, c, f"{x:.6f}", f"{y:.6f}"])
    written = [path, counts, proj]
    if figures:
        from . import plotting
        written.append(plotting.cluster_figure(report, path))
    return written
