import math

import numpy as np
import pytest

from maskseek.lang import TaskResolver, UnknownTaskError
from maskseek.mask import BinaryMask, MaskDimensionError, StateLatents
from maskseek.policy import (NoDemonstrationsError, PolicyConfig, SearchHit, SearchIndex,
                             SearchPolicy, SimilarityHistory, StepBudgetExhausted, action_mode,
                             convert_action, global_search, should_research)
from maskseek.store import MAX_STEP, Action, Dataset, Grip, Mode, Trajectory

from factories import random_mask, random_trajectory
from oracles import brute_force_search


def random_pool(rng, static=(12, 12), gripper=(6, 6)):
    n_traj = int(rng.integers(1, 21))
    palette = None
    if rng.random() < 0.5:
        # a small palette of repeated states produces exact score ties
        palette = [StateLatents(random_mask(rng, *static), random_mask(rng, *gripper))
                   for _ in range(int(rng.integers(1, 5)))]
    return [random_trajectory(rng, int(rng.integers(1, 65)), static, gripper, palette=palette)
            for _ in range(n_traj)], palette


class TestSearch:
    def test_matches_brute_force_stride_one(self):
        rng = np.random.default_rng(0)
        cfg = PolicyConfig(stride=1)
        for _ in range(25):
            pool, palette = random_pool(rng)
            for _ in range(3):
                if palette is not None and rng.random() < 0.5:
                    z = palette[int(rng.integers(0, len(palette)))]
                else:
                    z = StateLatents(random_mask(rng, 12, 12), random_mask(rng, 6, 6))
                hit = global_search(pool, z, cfg)
                ti, fi, score = brute_force_search(pool, z, cfg.alpha)
                assert (hit.traj_ref, hit.frame_index, hit.score) == (ti, fi, score)

    def test_matches_brute_force_with_stride(self):
        rng = np.random.default_rng(1)
        for stride in (2, 4, 7):
            cfg = PolicyConfig(stride=stride, alpha=0.6)
            pool, _ = random_pool(rng)
            z = StateLatents(random_mask(rng, 12, 12), random_mask(rng, 6, 6))
            hit = global_search(pool, z, cfg)
            assert (hit.traj_ref, hit.frame_index, hit.score) == \
                brute_force_search(pool, z, cfg.alpha, stride)
            assert hit.frame_index % stride == 0

    def test_tie_goes_to_first(self):
        rng = np.random.default_rng(2)
        same = StateLatents(random_mask(rng, 8, 8, 0.3), random_mask(rng, 4, 4, 0.5))
        act = Action(Mode.RELATIVE, 0, 0, 0)
        pool = [Trajectory("t", "i", "A", [(same, act)] * 5) for _ in range(3)]
        hit = global_search(pool, same, PolicyConfig(stride=1))
        assert (hit.traj_ref, hit.frame_index) == (0, 0)
        assert hit.score == pytest.approx(1.0)

    def test_threads_agree(self):
        rng = np.random.default_rng(3)
        pool, _ = random_pool(rng)
        index = SearchIndex(pool, 1)
        for _ in range(10):
            z = StateLatents(random_mask(rng, 12, 12), random_mask(rng, 6, 6))
            assert index.search(z, 0.9, workers=1) == index.search(z, 0.9, workers=3)

    def test_index_reused_or_rebuilt_for_stride(self):
        rng = np.random.default_rng(4)
        pool, _ = random_pool(rng)
        z = StateLatents(random_mask(rng, 12, 12), random_mask(rng, 6, 6))
        index = SearchIndex(pool, 1)
        assert global_search(index, z, PolicyConfig(stride=3)) == \
            global_search(pool, z, PolicyConfig(stride=3))

    def test_empty_pool(self):
        z = StateLatents(BinaryMask.zeros(4, 4), BinaryMask.zeros(2, 2))
        with pytest.raises(NoDemonstrationsError):
            global_search([], z, PolicyConfig())

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(5)
        pool = [random_trajectory(rng, 3)]
        z = StateLatents(BinaryMask.zeros(15, 16), BinaryMask.zeros(8, 8))
        with pytest.raises(MaskDimensionError):
            global_search(pool, z, PolicyConfig())


class TestTrigger:
    def test_fires_on_std_jump(self):
        cfg = PolicyConfig()
        h = SimilarityHistory([0.5, 0.5])
        assert not should_research(h, False, cfg)
        h.scores.append(0.6)
        # population std of (0.5, 0.5, 0.6) is 0.0471 > 0.03
        assert should_research(h, False, cfg)
        assert h.sigma_prev == pytest.approx(math.sqrt(2 / 9) * 0.1)

    def test_difference_not_level(self):
        cfg = PolicyConfig()
        h = SimilarityHistory([0.0, 0.2], sigma_prev=0.09)
        # sigma is 0.1 but it grew by only 0.01
        assert not should_research(h, False, cfg)

    def test_empty_gripper_threshold(self):
        cfg = PolicyConfig()
        h = SimilarityHistory([0.10, 0.11])   # sigma = 0.005
        assert should_research(h, True, cfg)
        h = SimilarityHistory([0.10, 0.11])
        assert not should_research(h, False, cfg)

    def test_never_with_infinite_threshold(self):
        cfg = PolicyConfig(sigma_threshold=math.inf, empty_gripper_threshold=math.inf)
        h = SimilarityHistory([0.0, 1.0])
        assert not should_research(h, False, cfg) and not should_research(h, True, cfg)

    def test_empty_history(self):
        with pytest.raises(ValueError):
            should_research(SimilarityHistory(), False, PolicyConfig())


class TestModeAndConversion:
    def test_action_mode(self):
        cfg = PolicyConfig()
        full = BinaryMask.ones(4, 4)
        assert action_mode(full, 0.51, cfg) is Mode.RELATIVE
        assert action_mode(full, 0.5, cfg) is Mode.ABSOLUTE
        assert action_mode(BinaryMask.zeros(4, 4), 0.9, cfg) is Mode.ABSOLUTE

    def test_absolute_to_relative_clips(self):
        a = Action(Mode.ABSOLUTE, 0.52, 0.1, 0.30, Grip.CLOSE)
        r = convert_action(a, Mode.RELATIVE, (0.50, 0.50, 0.30))
        assert r.mode is Mode.RELATIVE and r.gripper is Grip.CLOSE
        assert (r.dx, r.dy, r.dz) == pytest.approx((0.02, -MAX_STEP, 0.0))

    def test_relative_to_absolute(self):
        a = Action(Mode.RELATIVE, 0.01, -0.02, 0.03)
        r = convert_action(a, Mode.ABSOLUTE, (0.4, 0.5, 0.2))
        assert (r.dx, r.dy, r.dz) == pytest.approx((0.41, 0.48, 0.23))

    def test_same_mode_or_no_pose_untouched(self):
        a = Action(Mode.ABSOLUTE, 0.9, 0.9, 0.3)
        assert convert_action(a, Mode.ABSOLUTE, (0, 0, 0)) is a
        assert convert_action(a, Mode.RELATIVE, None) is a


class TestConfig:
    @pytest.mark.parametrize("kw", [dict(alpha=1.5), dict(alpha=-0.1), dict(stride=0),
                                    dict(max_steps=0), dict(subset_fraction=0.0),
                                    dict(sigma_threshold=-1.0), dict(workers=0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            PolicyConfig(**kw)


# ---------------------------------------------------------------------------
# the online loop with a scripted search


def distinct_states(n):
    states = []
    for k in range(n):
        s = np.zeros((8, 8), dtype=bool)
        s[k, :] = True
        g = np.zeros((4, 4), dtype=bool)
        g[k % 4, :] = True
        states.append(StateLatents(BinaryMask(s), BinaryMask(g)))
    return states


STATES = distinct_states(8)
BLANK = StateLatents(BinaryMask.zeros(8, 8), BinaryMask.zeros(4, 4))


def marked_action(ti, fi):
    return Action(Mode.ABSOLUTE, 0.1 * ti, 0.01 * fi, 0.3)


def toy_dataset(lengths=(5, 5)):
    trajs = [Trajectory("push", "push the block", "A",
                        [(STATES[fi], marked_action(ti, fi)) for fi in range(n)])
             for ti, n in enumerate(lengths)]
    return Dataset(trajs)


def scripted(hits):
    queue = list(hits)
    calls = []

    def fn(index, obs, config):
        calls.append(obs)
        return queue.pop(0)
    fn.calls = calls
    return fn


def policy(hits, **kw):
    opts = dict(subset_fraction=1.0, sigma_threshold=0.0, empty_gripper_threshold=0.0)
    opts.update(kw)
    cfg = PolicyConfig(**opts)
    fn = scripted(hits)
    p = SearchPolicy(cfg, search_fn=fn)
    p.begin_task("push the block", toy_dataset())
    return p, fn


class TestSearchPolicy:
    def test_first_step_searches_and_clones(self):
        p, fn = policy([SearchHit(1, 2, 0.4)])
        assert p.step(STATES[2]) == marked_action(1, 2)
        assert p.step(STATES[3]) == marked_action(1, 3)
        assert len(fn.calls) == 1

    def test_switch_only_on_better_score(self):
        p, fn = policy([SearchHit(0, 0, 0.4), SearchHit(1, 3, 0.3), SearchHit(1, 2, 0.9)])
        assert p.step(STATES[0]) == marked_action(0, 0)
        assert p.step(STATES[1]) == marked_action(0, 1)      # tracked, sigma 0
        assert p.step(BLANK) == marked_action(0, 2)          # sigma jumps, 0.3 < 0.4 kept
        assert len(fn.calls) == 2 and p.n_switches == 0
        assert p.step(STATES[3]) == marked_action(0, 3)      # history restarted
        assert p.step(BLANK) == marked_action(1, 2)          # 0.9 > 0.4 adopted
        assert len(fn.calls) == 3 and p.n_switches == 1

    def test_exhaustion_adopts_unconditionally(self):
        p, fn = policy([SearchHit(0, 3, 0.9), SearchHit(1, 0, 0.1)])
        p.step(STATES[3])
        p.step(STATES[4])
        assert p.step(STATES[0]) == marked_action(1, 0)
        assert len(fn.calls) == 2

    def test_relative_mode_latches_until_search(self):
        p, _ = policy([SearchHit(0, 0, 0.9), SearchHit(0, 0, 0.95)], rel_mode_threshold=0.5)
        pose = (0.5, 0.5, 0.3)
        a = p.step(STATES[0], pose)                          # score 0.9 > 0.5
        assert a.mode is Mode.RELATIVE
        assert (a.dx, a.dy, a.dz) == pytest.approx((-MAX_STEP, -MAX_STEP, 0.0))
        assert p.step(STATES[1], pose).mode is Mode.RELATIVE
        b = p.step(BLANK, pose)                               # search fires, latch cleared
        assert b.mode is Mode.ABSOLUTE and b == marked_action(0, 0)
        p2, _ = policy([SearchHit(0, 0, 0.9)], sigma_threshold=1.0, empty_gripper_threshold=1.0)
        assert p2.step(STATES[0], pose).mode is Mode.RELATIVE
        # a poor match afterwards keeps the latched relative mode
        assert p2.step(STATES[5], pose).mode is Mode.RELATIVE

    def test_step_budget(self):
        p, _ = policy([SearchHit(0, 0, 0.5)], max_steps=2, sigma_threshold=1.0)
        p.step(STATES[0])
        p.step(STATES[1])
        with pytest.raises(StepBudgetExhausted):
            p.step(STATES[2])

    def test_step_before_begin(self):
        with pytest.raises(RuntimeError):
            SearchPolicy().step(STATES[0])

    def test_unknown_instruction(self):
        p = SearchPolicy(PolicyConfig(subset_fraction=1.0))
        with pytest.raises(UnknownTaskError):
            p.begin_task("xyzzy plugh", toy_dataset())

    def test_no_demonstrations(self):
        resolver = TaskResolver.fit(["open the drawer"], ["open_drawer"])
        p = SearchPolicy(PolicyConfig(), resolver=resolver)
        with pytest.raises(NoDemonstrationsError):
            p.begin_task("open the drawer", toy_dataset())

    def test_real_search_runs_end_to_end(self):
        p = SearchPolicy(PolicyConfig(subset_fraction=1.0, stride=1))
        assert p.begin_task("Push the block!", toy_dataset()) == "push"
        assert p.step(STATES[3]) == marked_action(0, 3)
