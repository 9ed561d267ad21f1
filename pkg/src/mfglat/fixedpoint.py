"""Averaged fixed-point iteration on marginal flows.

One round against the running average M̄ computes the best response
M = br(M̄), the residual e = d(M, M̄) in the time-averaged L1 metric, and
(unless e already meets the tolerance) the next average
M̄ <- (n M̄ + M) / (n + 1), renormalized per step against float drift.  The
returned flow is the M̄ whose residual passed the check, so a converged run
certifies exploitability(final_flow) <= delta by construction.  A tolerance
schedule chains stages, each warm-started from the previous stage's output.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError
from .hjb import StepCache, backward_sweep
from .lattice import LevelSets
from .problem import Discretization, ProblemSpec
from .transport import Flow, constant_initial_flow, discretize_initial, forward_push

DEFAULT_DELTAS = (0.1, 0.01, 0.001)
MAX_ITERS = 500


def l1_flow_distance(flow_a, flow_b) -> float:
    """(1 / (n_t + 1)) sum_k sum_x |a_k(x) - b_k(x)|."""
    ma = getattr(flow_a, "marginals", flow_a)
    mb = getattr(flow_b, "marginals", flow_b)
    if len(ma) != len(mb):
        raise UsageError("flows with different numbers of time steps")
    total = 0.0
    for a, b in zip(ma, mb):
        if a.shape != b.shape:
            raise UsageError("flows on mismatched level sets")
        total += float(np.abs(a - b).sum())
    return total / len(ma)


@dataclass
class StageResult:
    delta: float
    iterations: int
    final_error: float


@dataclass
class FPReport:
    stages: list
    error_trace: np.ndarray
    converged: bool
    final_flow: Flow
    saturation_max: float = 0.0

    @property
    def br_calls(self) -> int:
        return len(self.error_trace)


def fictitious_play(problem: ProblemSpec, disc: Discretization,
                    level_sets: LevelSets, initial: Flow, delta: float,
                    max_iters: int = MAX_ITERS, m0_vec: np.ndarray | None = None,
                    picard: bool = False,
                    cache: StepCache | None = None) -> FPReport:
    """Run one tolerance stage; see the module docstring for the loop."""
    if delta <= 0:
        raise UsageError("delta must be positive")
    if m0_vec is None:
        m0_vec = discretize_initial(problem, disc, level_sets)
    if cache is None:
        cache = StepCache()
    mbar = initial.copy()
    trace = []
    sat_max = 0.0
    converged = False
    n = 1
    while n <= max_iters:
        policy, kernel = backward_sweep(mbar, level_sets, problem, disc,
                                        cache=cache)
        sat_max = max(sat_max, float(policy.saturation_per_step.max(initial=0.0)))
        m_new = forward_push(m0_vec, kernel)
        e = l1_flow_distance(m_new, mbar)
        trace.append(e)
        if e <= delta:
            converged = True
            break
        if picard:
            mbar = m_new
        else:
            merged = []
            for a, b in zip(mbar.marginals, m_new.marginals):
                m = (n * a + b) / (n + 1)
                merged.append(m / m.sum())
            mbar = Flow(merged)
        n += 1
    stage = StageResult(delta=delta, iterations=len(trace),
                        final_error=trace[-1] if trace else float("nan"))
    return FPReport(stages=[stage], error_trace=np.asarray(trace),
                    converged=converged, final_flow=mbar,
                    saturation_max=sat_max)


def tolerance_schedule_run(problem: ProblemSpec, disc: Discretization,
                           level_sets: LevelSets,
                           deltas=DEFAULT_DELTAS, max_iters: int = MAX_ITERS,
                           initial: Flow | None = None,
                           picard: bool = False) -> FPReport:
    """Chain stages over a decreasing tolerance schedule, warm-starting each.

    The first stage starts from the time-constant flow M_k = m0 unless an
    initial flow is given.  A stage that exhausts max_iters aborts the
    remaining stages and the report comes back non-converged.
    """
    if len(deltas) == 0 or any(d <= 0 for d in deltas):
        raise UsageError("deltas must be a nonempty positive sequence")
    m0_vec = discretize_initial(problem, disc, level_sets)
    flow = initial if initial is not None else constant_initial_flow(level_sets, m0_vec)
    stages = []
    traces = []
    sat_max = 0.0
    converged = True
    cache = StepCache()
    for delta in deltas:
        rep = fictitious_play(problem, disc, level_sets, flow, delta,
                              max_iters=max_iters, m0_vec=m0_vec, picard=picard,
                              cache=cache)
        stages.extend(rep.stages)
        traces.append(rep.error_trace)
        sat_max = max(sat_max, rep.saturation_max)
        flow = rep.final_flow
        if not rep.converged:
            converged = False
            break
    return FPReport(stages=stages, error_trace=np.concatenate(traces),
                    converged=converged, final_flow=flow,
                    saturation_max=sat_max)


def exploitability(flow: Flow, problem: ProblemSpec, disc: Discretization,
                   level_sets: LevelSets, m0_vec: np.ndarray | None = None) -> float:
    """Distance from a flow to its own best response; zero iff equilibrium."""
    if m0_vec is None:
        m0_vec = discretize_initial(problem, disc, level_sets)
    _, kernel = backward_sweep(flow, level_sets, problem, disc)
    br = forward_push(m0_vec, kernel)
    return l1_flow_distance(br, flow)
