"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``. The end-to-end
criteria generate the reference dataset (408 trajectories) once per session.
"""

import math
import struct
import time
import zlib

import numpy as np
import pytest

from maskseek.harness import bench_search, cluster_instructions, eval_first_setting, \
    eval_second_setting, load_templates
from maskseek.lang import ari, nmi, silhouette
from maskseek.mask import BinaryMask, StateLatents, dice, sim_zs, size_coef, weighted_dice
from maskseek.policy import PolicyConfig, global_search
from maskseek.simenv import default_scenario, generate_demos, replay_masks
from maskseek.store import (MAGIC, ChecksumMismatchError, RunLengthFormatError,
                            TruncatedDatasetError, datasets_equal, dumps_dataset, loads_dataset)

from factories import random_dataset, random_mask, random_trajectory
from oracles import brute_force_search, oracle_search_fn, sim_zs_sets

REFERENCE = PolicyConfig()  # alpha 0.9, stride 4, 8% subset, thresholds 0.03 / 0.003, 180 steps
ROLLOUTS = 10
FIRST_TARGET = 0.60
SECOND_TARGET = 0.50


@pytest.fixture
def verdict(capsys):
    def report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail
    return report


@pytest.fixture(scope="module")
def reference():
    t0 = time.perf_counter()
    dataset = generate_demos(per_task=17, seed=0)
    gen_s = time.perf_counter() - t0
    return dataset, gen_s


@pytest.fixture(scope="module")
def first_report(reference):
    dataset, _ = reference
    t0 = time.perf_counter()
    report = eval_first_setting(dataset, REFERENCE, ROLLOUTS, seed=0)
    return report, time.perf_counter() - t0


def test_criterion_1_similarity_math(verdict):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    n_pairs = 10_000
    failures = []
    for i in range(n_pairs):
        w, h = int(rng.integers(1, 24)), int(rng.integers(1, 24))
        a, b = random_mask(rng, w, h), random_mask(rng, w, h)
        ga, gb = random_mask(rng, 6, 6), random_mask(rng, 6, 6)
        d, s, wd = dice(a, b), size_coef(a, b), weighted_dice(a, b)
        if d != dice(b, a) or s != size_coef(b, a) or wd != weighted_dice(b, a):
            failures.append((i, "symmetry"))
        if not (0.0 <= wd <= d <= 1.0 and 0.0 <= s <= 1.0):
            failures.append((i, "bounds"))
        if a.popcount and (dice(a, a) != 1.0 or weighted_dice(a, a) != 1.0):
            failures.append((i, "identity"))
        # monotonicity: adding a pixel of A to B never lowers dice, one outside A never raises it
        grow_in = np.flatnonzero(a.bits.ravel() & ~b.bits.ravel())
        grow_out = np.flatnonzero(~a.bits.ravel() & ~b.bits.ravel())
        for pool, sign in ((grow_in, 1), (grow_out, -1)):
            if len(pool):
                flat = b.bits.ravel().copy()
                flat[pool[int(rng.integers(len(pool)))]] = True
                d2 = dice(a, BinaryMask.from_flat(flat, w, h))
                if sign * (d2 - d) < -1e-15:
                    failures.append((i, "monotonicity"))
        alpha = float(rng.uniform())
        z, st = StateLatents(a, ga), StateLatents(b, gb)
        expect = alpha * weighted_dice(ga, gb) + (1 - alpha) * weighted_dice(a, b)
        if abs(sim_zs(z, st, alpha) - expect) > 1e-12:
            failures.append((i, "alpha weighting"))
        if i % 20 == 0 and abs(sim_zs(z, st, alpha) - sim_zs_sets(z, st, alpha)) > 1e-12:
            failures.append((i, "set oracle"))
    elapsed = time.perf_counter() - t0
    verdict(1, not failures and elapsed < 10.0,
            f"{n_pairs} pairs, {len(failures)} violations, {elapsed:.2f} s")


def test_criterion_2_search_oracle(verdict):
    rng = np.random.default_rng(2)
    cfg = PolicyConfig(stride=1)
    n_pools, mismatches, ties = 100, 0, 0
    for p in range(n_pools):
        palette = None
        if p % 2:
            # repeated states force exact ties between trajectories and frames
            palette = [StateLatents(random_mask(rng, 12, 12), random_mask(rng, 6, 6))
                       for _ in range(int(rng.integers(1, 4)))]
        pool = [random_trajectory(rng, int(rng.integers(1, 65)), (12, 12), (6, 6), palette=palette)
                for _ in range(int(rng.integers(1, 21)))]
        queries = [StateLatents(random_mask(rng, 12, 12), random_mask(rng, 6, 6))]
        if palette:
            queries.append(palette[0])
        for z in queries:
            hit = global_search(pool, z, cfg)
            ref = brute_force_search(pool, z, cfg.alpha)
            mismatches += (hit.traj_ref, hit.frame_index, hit.score) != ref
            n_best = sum(sim_zs_sets(z, f[0], cfg.alpha) == ref[2] for t in pool for f in t.frames)
            ties += n_best > 1
    verdict(2, mismatches == 0,
            f"{n_pools} pools, {mismatches} mismatches, {ties} queries with tied maxima")


def test_criterion_3_replay(verdict, reference):
    dataset, _ = reference
    bad = sum(any(r != f[0] for r, f in zip(replay_masks(t), t.frames)) for t in dataset)
    verdict(3, len(dataset) >= 400 and bad == 0,
            f"{len(dataset)} trajectories replayed, {bad} mismatches")


def test_criterion_4_zero_shot(verdict, reference, first_report):
    dataset, gen_s = reference
    first, first_s = first_report
    t0 = time.perf_counter()
    second = eval_second_setting(dataset, REFERENCE, ROLLOUTS * len(default_scenario().tasks),
                                 seed=0)
    second_s = time.perf_counter() - t0
    oracle = eval_first_setting(dataset, REFERENCE, ROLLOUTS, seed=0, search_fn=oracle_search_fn)
    same = oracle.episodes == first.episodes
    runtime = gen_s + first_s + second_s
    r1, r2 = first.overall_success_rate, second.overall_success_rate
    ok = r1 >= FIRST_TARGET and r2 >= SECOND_TARGET and runtime < 600 and same
    verdict(4, ok, f"first {r1:.1%} (>= {FIRST_TARGET:.0%}) over {first.rollouts} episodes, "
                   f"second {r2:.1%} (>= {SECOND_TARGET:.0%}) over {second.rollouts}, "
                   f"solved within 125 steps {second.fraction_solved_within():.1%}, "
                   f"runtime {runtime:.0f} s, brute-force search substitution identical: {same}")


def test_criterion_5_sensitivity(verdict, reference, first_report):
    dataset, _ = reference
    base, _ = first_report
    sc = default_scenario()
    grasp = [lab for lab, t in sc.tasks.items() if t.task_class == "grasp"]

    def grasp_rate(report):
        n = sum(report.per_task[lab][0] for lab in grasp)
        return sum(report.per_task[lab][1] for lab in grasp) / n

    static_only = eval_first_setting(dataset, PolicyConfig(alpha=0.0), ROLLOUTS, seed=0)
    no_research = eval_first_setting(dataset, PolicyConfig(sigma_threshold=math.inf,
                                                           empty_gripper_threshold=math.inf),
                                     ROLLOUTS, seed=0)
    g_base, g_static = grasp_rate(base), grasp_rate(static_only)
    o_base, o_never = base.overall_success_rate, no_research.overall_success_rate
    verdict(5, g_static < g_base and o_never < o_base,
            f"grasp class {g_base:.1%} -> {g_static:.1%} with alpha 0, "
            f"overall {o_base:.1%} -> {o_never:.1%} without re-search")


def test_criterion_6_clustering(verdict):
    instr, labels = load_templates()
    k = len(set(labels))
    r = cluster_instructions(instr, labels, k=k, seed=0)
    fixtures = [
        (silhouette([0.0, 1.0, 10.0, 11.0], [0, 0, 1, 1]), (19 / 21 + 17 / 19) / 2),
        (silhouette([0.0, 1.0, 5.0], [0, 0, 1]), (0.8 + 0.75) / 3),
        (ari([0, 0, 1, 1], [0, 0, 1, 2]), 4 / 7),
        (ari([0, 0, 0, 1, 1, 1], [0, 0, 1, 1, 2, 2]), 8 / 33),
        (ari([0, 0, 1, 1], [0, 1, 0, 1]), -0.5),
        (nmi([0, 0, 1, 1], [0, 0, 1, 2]), 0.8),
        (nmi([0, 0, 1, 1], [0, 1, 0, 1]), 0.0),
    ]
    worst = max(abs(got - want) for got, want in fixtures)
    ok = r.ari == 1.0 and r.nmi == 1.0 and r.silhouette > 0.9 and worst <= 1e-9
    verdict(6, ok, f"k={k}: ARI {r.ari}, NMI {r.nmi}, silhouette {r.silhouette:.4f}; "
                   f"fixture error {worst:.1e}")


def test_criterion_7_latency(verdict):
    r = bench_search(pool_size=200, frames_per_traj=64, stride=4, repeats=200, threads=1, seed=0)
    ok = r.median_us <= 5000.0 and r.frames_scanned == 200 * 16 and r.threads_consistent \
        and len(r.latencies_us) == r.repeats
    verdict(7, ok, f"{r.frames_scanned} frames: min {r.min_us / 1000:.2f} ms, "
                   f"median {r.median_us / 1000:.2f} ms, p95 {r.p95_us / 1000:.2f} ms")


def _first_blob_offset(data):
    # header, first metadata line, then a u32 length before the first mask stream
    return data.index(b"\n", len(MAGIC)) + 1 + 4


def _recrc(body):
    return body + struct.pack("<I", zlib.crc32(body) & 0xFFFFFFFF)


def _expect(cls, data):
    try:
        loads_dataset(data)
    except cls:
        return True
    except Exception:
        return False
    return False


def test_criterion_8_format(verdict):
    rng = np.random.default_rng(8)
    roundtrips = sum(datasets_equal(loads_dataset(dumps_dataset(ds)), ds)
                     for ds in (random_dataset(rng, max_frames=20) for _ in range(100)))
    cases = []
    for j in range(7):
        data = dumps_dataset(random_dataset(rng, n_traj=3, max_frames=10))
        # cut inside the first record so the tail is always incomplete
        cut = _first_blob_offset(data) + 2 + j * 3
        cases.append(("truncation", TruncatedDatasetError, data[:cut]))
    for j in range(7):
        data = bytearray(dumps_dataset(random_dataset(rng, n_traj=2, max_frames=10)))
        pos = len(data) - 1 - j if j < 4 else _first_blob_offset(data) + j - 4
        data[pos] ^= 0x5A
        cases.append(("bad crc", ChecksumMismatchError, bytes(data)))
    for j in range(6):
        data = bytearray(dumps_dataset(random_dataset(rng, n_traj=2, max_frames=10)))
        off = _first_blob_offset(data)
        (first_run,) = struct.unpack_from("<I", data, off)
        struct.pack_into("<I", data, off, first_run + 1 + j)
        cases.append(("bad run sum", RunLengthFormatError, _recrc(bytes(data[:-4]))))
    wrong = [kind for kind, cls, data in cases if not _expect(cls, data)]
    verdict(8, roundtrips == 100 and len(cases) == 20 and not wrong,
            f"{roundtrips}/100 round-trips, {len(cases) - len(wrong)}/{len(cases)} corrupted "
            f"files rejected with the right error")
