"""Fictitious play, the flow metric, tolerance schedules, exploitability."""

import numpy as np
import pytest

from mfglat import (CostSpec, Discretization, InitialMeasure, ProblemSpec,
                    SplitDynamics, build_level_sets)
from mfglat.errors import UsageError
from mfglat.fixedpoint import (exploitability, fictitious_play,
                               l1_flow_distance, tolerance_schedule_run)
from mfglat.transport import Flow, constant_initial_flow, discretize_initial


def coupled_scalar(theta=0.5):
    """Small crowd-averse problem that converges in a handful of iterations."""
    from mfglat.examples import GaussianKernel, convolve_with_measure
    kern = GaussianKernel(0.1)

    def coupling(t, x, mu):
        pts = np.asarray(x)[:, 0] if np.ndim(x) == 2 else np.asarray(x)
        return theta * convolve_with_measure(kern, mu, pts)

    dyn = SplitDynamics(dim_d=1, dim_r=1, a1=lambda t, x: -0.5 * x,
                        b1=lambda t, x: np.ones_like(x))
    costs = CostSpec(ell0=lambda t, a, x: 0.5 * np.sum(a * a, axis=-1),
                     coupling_f=coupling,
                     terminal_g=lambda x, mu: np.zeros(np.shape(x)[0]))
    init = InitialMeasure(
        density=lambda x: np.full(np.shape(x)[0], 1.0 / 0.2),
        support_box=np.array([[-0.1, 0.1]]))
    return ProblemSpec(dynamics=dyn, costs=costs, initial=init, horizon=1.0,
                       label="small-crowd")


@pytest.fixture(scope="module")
def small():
    prob = coupled_scalar()
    disc = Discretization(n_t=8, n_s=40, horizon=1.0, epsilon=0.05)
    ls = build_level_sets(prob, disc)
    return prob, disc, ls


class TestFlowDistance:
    def test_identical_flows(self, small):
        _, _, ls = small
        f = Flow([np.full(n, 1.0 / n) for n in ls.sizes()])
        assert l1_flow_distance(f, f) == 0.0

    def test_single_swap_hand_value(self):
        # two time slices; at one of them 0.3 mass moves between two atoms:
        # (1/2) * (|0.3| + |-0.3|) = 0.3
        a = Flow([np.array([0.5, 0.5]), np.array([0.7, 0.3])])
        b = Flow([np.array([0.5, 0.5]), np.array([0.4, 0.6])])
        assert l1_flow_distance(a, b) == pytest.approx(0.3, abs=1e-15)

    def test_bounded_by_two(self, small):
        _, _, ls = small
        rng = np.random.default_rng(11)
        mk = lambda: Flow([(lambda w: w / w.sum())(rng.random(n) + 1e-12)
                           for n in ls.sizes()])
        for _ in range(20):
            assert l1_flow_distance(mk(), mk()) <= 2.0 + 1e-12

    def test_mismatched_levels_rejected(self, small):
        _, _, ls = small
        f = Flow([np.full(n, 1.0 / n) for n in ls.sizes()])
        g = Flow(f.marginals[:-1])
        with pytest.raises(UsageError):
            l1_flow_distance(f, g)


class TestFictitiousPlay:
    def test_uncoupled_game_picard_two_iterations(self, small):
        # no coupling: br is the same flow no matter the input, so plain
        # best-response iteration sees e = 0 at the second comparison
        prob = coupled_scalar(theta=0.0)
        _, disc, _ = small
        ls = build_level_sets(prob, disc)
        m0 = discretize_initial(prob, disc, ls)
        rep = fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                              delta=1e-15, picard=True)
        assert rep.converged
        assert rep.stages[0].iterations == 2
        assert rep.error_trace[-1] == 0.0

    def test_uncoupled_game_harmonic_averaging_tail(self, small):
        # under fictitious-play averaging a constant best response gives
        # e_n = e_1 / n exactly: the averaged flow walks toward the fixed
        # best response with harmonic steps
        prob = coupled_scalar(theta=0.0)
        _, disc, _ = small
        ls = build_level_sets(prob, disc)
        m0 = discretize_initial(prob, disc, ls)
        rep = fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                              delta=1e-9, max_iters=40)
        trace = rep.error_trace
        ns = np.arange(1, len(trace) + 1)
        np.testing.assert_allclose(trace * ns, trace[0], rtol=1e-9)

    def test_huge_delta_one_iteration(self, small):
        prob, disc, ls = small
        m0 = discretize_initial(prob, disc, ls)
        rep = fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                              delta=10.0)
        assert rep.converged and rep.stages[0].iterations == 1

    def test_cap_reports_nonconvergence(self, small):
        prob, disc, ls = small
        m0 = discretize_initial(prob, disc, ls)
        rep = fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                              delta=1e-12, max_iters=2)
        assert not rep.converged
        assert len(rep.error_trace) == 2

    def test_averages_stay_probability_vectors(self, small):
        prob, disc, ls = small
        m0 = discretize_initial(prob, disc, ls)
        rep = fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                              delta=1e-3)
        assert rep.converged
        for m in rep.final_flow.marginals:
            assert abs(m.sum() - 1.0) <= 1e-12
            assert (m >= 0).all()

    def test_stopping_contract(self, small):
        # converged => the returned flow's own residual is below delta
        prob, disc, ls = small
        delta = 1e-3
        m0 = discretize_initial(prob, disc, ls)
        rep = fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                              delta=delta)
        assert rep.converged
        assert exploitability(rep.final_flow, prob, disc, ls) <= delta

    def test_error_trace_deterministic(self, small):
        prob, disc, ls = small
        m0 = discretize_initial(prob, disc, ls)
        reps = [fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                                delta=1e-4) for _ in range(2)]
        np.testing.assert_array_equal(reps[0].error_trace, reps[1].error_trace)


class TestToleranceSchedule:
    def test_warm_start_never_worse_at_equal_delta(self, small):
        prob, disc, ls = small
        rep = tolerance_schedule_run(prob, disc, ls, deltas=(0.1, 0.1))
        assert rep.converged
        first, second = rep.stages
        assert second.iterations <= first.iterations

    def test_stage_errors_meet_their_deltas(self, small):
        prob, disc, ls = small
        deltas = (0.1, 0.01, 0.001)
        rep = tolerance_schedule_run(prob, disc, ls, deltas=deltas)
        assert rep.converged
        for stage, delta in zip(rep.stages, deltas):
            assert stage.delta == delta
            assert stage.final_error <= delta
        assert len(rep.error_trace) == sum(s.iterations for s in rep.stages)

    def test_abort_propagates(self, small):
        prob, disc, ls = small
        rep = tolerance_schedule_run(prob, disc, ls, deltas=(0.5, 1e-13),
                                     max_iters=3)
        assert not rep.converged
        assert len(rep.stages) == 2  # second stage present but incomplete

    def test_rejects_bad_deltas(self, small):
        prob, disc, ls = small
        with pytest.raises(UsageError):
            tolerance_schedule_run(prob, disc, ls, deltas=())
        with pytest.raises(UsageError):
            tolerance_schedule_run(prob, disc, ls, deltas=(0.1, -0.5))


class TestExploitability:
    def test_nonnegative(self, small):
        prob, disc, ls = small
        f = Flow([np.full(n, 1.0 / n) for n in ls.sizes()])
        assert exploitability(f, prob, disc, ls) >= 0.0

    def test_picard_fixed_point_is_unexploitable(self, small):
        # when plain best-response iteration happens to converge (the
        # uncoupled game; coupled ones may cycle), its limit is an exact
        # discrete equilibrium under a fresh sweep
        prob = coupled_scalar(theta=0.0)
        _, disc, _ = small
        ls = build_level_sets(prob, disc)
        m0 = discretize_initial(prob, disc, ls)
        rep = fictitious_play(prob, disc, ls, constant_initial_flow(ls, m0),
                              delta=1e-11, picard=True)
        assert rep.converged
        assert exploitability(rep.final_flow, prob, disc, ls) <= 1e-10
