"""Entropy-regularized backward dynamic programming on the level sets.

Each step solves, per node x of S_k,

    V_k(x) = -eps log sum_{y1} exp(-c(y1)/eps),
    c(y1)  = dt (ell0(t_k, a(k, x, y1), x) + f(t_k, x, M_k)) + I[V_{k+1}(y1, .)](y2target),

with I the Q1 interpolation over the y2 cell corners, and the Gibbs weights
p(y1) = exp(-c(y1)/eps) / Z as the induced policy.  eps == 0 degenerates to
a plain minimum with first-lexicographic tie break.  Values are stored per
step; policies and transition kernels are regenerated on demand through the
same candidate machinery the sweep used, so they are bit-identical to what
the sweep saw without holding O(|S_k| * |S1|) floats alive for every k.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import _fast
from .errors import NumericError, UsageError
from .lattice import LevelSets, StepGeometry, flat_parts
from .problem import DiscreteMeasure, Discretization, ProblemSpec

SATURATION_FRACTION = 0.95   # controls with |a|_inf >= 0.95 * bound count as saturated
CHUNK = 65536


def gibbs_step(costs, epsilon: float):
    """Value and Gibbs weights of one candidate cost vector.

    Returns (value, probs) with value = -eps log sum exp(-c/eps), evaluated
    with a max shift, sub-1e-300 terms flushed to zero and the remainder
    renormalized.  eps == 0 returns the minimum and a point mass on the
    first minimizer.
    """
    c = np.asarray(costs, dtype=float)
    if c.ndim != 1 or c.size == 0:
        raise UsageError("gibbs_step wants a nonempty cost vector")
    if not np.all(np.isfinite(c)):
        raise NumericError("non-finite candidate cost")
    if epsilon < 0:
        raise UsageError("epsilon must be >= 0")
    if epsilon == 0.0:
        w = int(np.argmin(c))
        probs = np.zeros_like(c)
        probs[w] = 1.0
        return float(c[w]), probs
    cmin = float(c.min())
    e = np.exp(-(c - cmin) / epsilon)
    e[e < _fast.UNDERFLOW_FLUSH] = 0.0
    z = float(e.sum())
    return cmin - epsilon * math.log(z), e / z


def node_measure(level_sets: LevelSets, k: int, weights: np.ndarray) -> DiscreteMeasure:
    """The marginal `weights` on S_k as a measure on R^d."""
    tab = level_sets.tables[k]
    return DiscreteMeasure(atoms=tab.coords(level_sets.dx), weights=weights,
                           lattice_idx=tab.idx, dx=level_sets.dx)


@dataclass
class SaturationReport:
    threshold: float      # |a|_inf at which a control counts as saturated
    per_step: np.ndarray  # max over nodes of the saturated Gibbs mass, per k
    max_share: float

    def __str__(self):
        return (f"saturation: max share {self.max_share:.3e} "
                f"at |a| >= {self.threshold:g}")


class StepCache:
    """Flow-independent per-step arrays, shared across backward sweeps.

    Geometry, candidate blocks and the running control cost depend only on
    (problem, disc, level_sets); within a fixed-point loop every best
    response reuses them.  Blocks are cached only while the level sets stay
    small enough to afford it (the budget counts candidate floats).
    """

    def __init__(self, block_budget: float = 2e7):
        self.geos: dict = {}
        self.blocks: dict = {}
        self.budget = block_budget
        self.spent = 0.0


class ValuePolicy:
    """Backward-sweep output: values per level set plus regenerable policies."""

    def __init__(self, problem: ProblemSpec, disc: Discretization,
                 level_sets: LevelSets, marginals: Sequence[np.ndarray],
                 values: list, saturation_per_step: np.ndarray,
                 cache: StepCache | None = None):
        self.problem = problem
        self.disc = disc
        self.level_sets = level_sets
        self.marginals = list(marginals)
        self.values = values          # kept by reference: the sweep fills it
        self.saturation_per_step = saturation_per_step
        self.epsilon = disc.epsilon
        self.cache = cache if cache is not None else StepCache()
        self._fvals: dict = {}
        self._vboxes: dict = {}

    def geometry(self, k: int) -> StepGeometry:
        geos = self.cache.geos
        if k not in geos:
            geos[k] = StepGeometry(self.problem, self.disc,
                                   self.level_sets.tables[k], k)
        return geos[k]

    def _step_block(self, k: int, sel):
        """Candidate block + static pieces for (k, sel), cached when affordable.

        Returns (blk, flat_base, corner_steps, ell) with ell the running
        control cost ell0(t_k, alpha, x) — everything here is independent of
        the flow, so it survives across best-response calls.
        """
        key = None
        if isinstance(sel, slice):
            key = (k, sel.start, sel.stop)
            hit = self.cache.blocks.get(key)
            if hit is not None:
                return hit
        geo = self.geometry(k)
        blk = geo.block(sel)
        nxt = self.level_sets.tables[k + 1]
        flat_base, corner_steps = flat_parts(blk, nxt.origin, nxt.strides)
        coords = self.level_sets.tables[k].idx[sel] * self.level_sets.dx
        dt = self.disc.dt
        ell = np.asarray(self.problem.costs.ell0(k * dt, blk.alpha,
                                                 coords[:, None, :]), dtype=float)
        entry = (blk, np.ascontiguousarray(flat_base), corner_steps,
                 np.ascontiguousarray(ell))
        if key is not None:
            cost = blk.valid.size * 4.0
            if self.cache.spent + cost <= self.cache.budget:
                self.cache.blocks[key] = entry
                self.cache.spent += cost
        return entry

    def coupling_values(self, k: int) -> np.ndarray:
        if k not in self._fvals:
            ls = self.level_sets
            mu = node_measure(ls, k, self.marginals[k])
            vals = self.problem.costs.coupling_f(k * self.disc.dt,
                                                 ls.coords(k), mu)
            self._fvals[k] = np.asarray(vals, dtype=float)
        return self._fvals[k]

    def policy_block(self, k: int, sel, want_probs: bool = True,
                     probs_buf: np.ndarray | None = None):
        """Recompute the sweep's candidate block at step k for chosen nodes.

        Returns (block, flat_base, corner_steps, value, saturated_share,
        probs); probs is meaningful only when want_probs.
        """
        ls = self.level_sets
        nxt = ls.tables[k + 1]
        blk, flat_base, corner_steps, ell = self._step_block(k, sel)
        fv = self.coupling_values(k)[sel]
        dt = self.disc.dt
        cost_pre = np.where(blk.valid, dt * (ell + fv[:, None]), np.inf)
        if k + 1 not in self._vboxes:
            self._vboxes[k + 1] = nxt.value_box(self.values[k + 1])
        v_box = self._vboxes[k + 1]
        nc, nw = cost_pre.shape
        value = np.empty(nc)
        sat = np.empty(nc)
        if want_probs:
            probs = probs_buf[:nc, :nw] if probs_buf is not None \
                else np.empty((nc, nw))
        else:
            probs = np.empty((1, 1))
        err = _fast.gibbs_reduce(
            np.ascontiguousarray(cost_pre), np.ascontiguousarray(blk.alpha_inf),
            np.ascontiguousarray(blk.valid), np.ascontiguousarray(flat_base),
            np.ascontiguousarray(blk.frac), blk.shared_y2, corner_steps,
            v_box, self.epsilon, SATURATION_FRACTION * self.disc.control_bound,
            want_probs, value, sat, probs)
        _raise_kernel_error(err, k)
        return blk, flat_base, corner_steps, value, sat, probs


def _raise_kernel_error(err: int, k: int):
    if err == 0:
        return
    if err == 1:
        raise RuntimeError(f"internal: empty candidate row at step {k}")
    if err == 2:
        raise RuntimeError(f"internal: stencil corner missing from S_{k + 1}")
    raise NumericError(f"non-finite cost while sweeping step {k}")


def backward_sweep(flow, level_sets: LevelSets, problem: ProblemSpec,
                   disc: Discretization, chunk: int = CHUNK,
                   cache: StepCache | None = None):
    """Solve the backward recursion against the flow's marginals.

    Returns (ValuePolicy, TransitionKernel).  The terminal condition is
    exact: V_{n_t} = terminal_g(., M_{n_t}).
    """
    from .transport import TransitionKernel  # local: transport composes hjb

    marginals = getattr(flow, "marginals", flow)
    if len(marginals) != disc.n_t + 1 or len(level_sets) != disc.n_t + 1:
        raise UsageError("flow / level sets length mismatch with n_t")
    for k in range(disc.n_t + 1):
        if len(marginals[k]) != len(level_sets.tables[k]):
            raise UsageError(f"marginal at k={k} does not live on S_k")

    n_t = disc.n_t
    mu_T = node_measure(level_sets, n_t, marginals[n_t])
    v_term = np.asarray(problem.costs.terminal_g(level_sets.coords(n_t), mu_T),
                        dtype=float)
    if not np.all(np.isfinite(v_term)):
        raise NumericError("non-finite terminal cost")

    values = [None] * (n_t + 1)
    values[n_t] = v_term
    sat_per_step = np.zeros(n_t)
    vp = ValuePolicy(problem, disc, level_sets, marginals, values, sat_per_step,
                     cache=cache)
    for k in range(n_t - 1, -1, -1):
        n = len(level_sets.tables[k])
        vk = np.empty(n)
        worst = 0.0
        for i0 in range(0, n, chunk):
            sel = slice(i0, min(i0 + chunk, n))
            _, _, _, value, sat, _ = vp.policy_block(k, sel, want_probs=False)
            vk[sel] = value
            worst = max(worst, float(sat.max()))
        vp.values[k] = vk
        vp.saturation_per_step[k] = worst
    return vp, TransitionKernel(vp)


def saturation_report(policy: ValuePolicy) -> SaturationReport:
    """Share of Gibbs mass sitting on near-bound controls, per step and overall."""
    per = policy.saturation_per_step
    return SaturationReport(
        threshold=SATURATION_FRACTION * policy.disc.control_bound,
        per_step=per.copy(),
        max_share=float(per.max()) if per.size else 0.0,
    )


def corner_expand(blk, corner_steps: np.ndarray):
    """Dense corner weights and flat offsets for a candidate block.

    Returns (wgts, offs): wgts has shape (nc, Wy2, 2^q) in the canonical
    corner order, offs the matching flat-index offsets.
    """
    q = blk.frac.shape[2]
    codes = list(itertools.product((0, 1), repeat=q))
    wgts = np.ones(blk.frac.shape[:2] + (len(codes),))
    offs = np.zeros(len(codes), dtype=np.int64)
    for ci, bits in enumerate(codes):
        for b, bit in enumerate(bits):
            if bit:
                wgts[:, :, ci] *= blk.frac[:, :, b]
                offs[ci] += corner_steps[b]
            else:
                wgts[:, :, ci] *= 1.0 - blk.frac[:, :, b]
    return wgts, offs


def _grid_axes(box: np.ndarray, step: float):
    axes = []
    for lo, hi in box:
        n = int(round((hi - lo) / step))
        axes.append(lo + step * np.arange(n + 1))
    return axes


def _grid_interp(axes, vals_grid, pts):
    """Multilinear interpolation on a tensor grid, d in {1, 2}; pts clamped."""
    d = len(axes)
    if d == 1:
        return np.interp(pts[:, 0], axes[0], vals_grid)
    x0, x1 = axes
    s0, s1 = x0[1] - x0[0], x1[1] - x1[0]
    u0 = np.clip((pts[:, 0] - x0[0]) / s0, 0.0, len(x0) - 1.0)
    u1 = np.clip((pts[:, 1] - x1[0]) / s1, 0.0, len(x1) - 1.0)
    b0 = np.minimum(u0.astype(np.int64), len(x0) - 2)
    b1 = np.minimum(u1.astype(np.int64), len(x1) - 2)
    f0, f1 = u0 - b0, u1 - b1
    v = vals_grid
    return ((1 - f0) * (1 - f1) * v[b0, b1] + (1 - f0) * f1 * v[b0, b1 + 1]
            + f0 * (1 - f1) * v[b0 + 1, b1] + f0 * f1 * v[b0 + 1, b1 + 1])


def semidiscrete_values(problem: ProblemSpec, measure_flow: Sequence[DiscreteMeasure],
                        xs: np.ndarray, n_t: int, control_grid: np.ndarray,
                        aux_box: np.ndarray, aux_step: float,
                        control_chunk: int = 128) -> np.ndarray:
    """Time-discrete, space-continuous reference values at the points xs.

    Backward recursion over a dense auxiliary tensor grid on aux_box with
    continuous states and the given finite control grid; expectations are
    replaced by exact evaluation (the dynamics are deterministic), and the
    next-step value is read off by multilinear interpolation.  Targets
    leaving aux_box are clamped, so pick a box the admissible flow cannot
    exit.  Guardrails: d <= 2, n_t <= 30, |control_grid| <= 1000.
    """
    d = problem.dynamics.dim_d
    r = problem.dynamics.dim_r
    if d > 2:
        raise UsageError("the reference recursion supports d <= 2")
    if n_t > 30:
        raise UsageError("the reference recursion supports n_t <= 30")
    ctrl = np.asarray(control_grid, dtype=float)
    if ctrl.ndim == 1:
        ctrl = ctrl[:, None]
    if ctrl.shape[0] > 1000:
        raise UsageError("control grid capped at 1000 points")
    if len(measure_flow) != n_t + 1:
        raise UsageError("measure flow must have n_t + 1 entries")

    dt = problem.horizon / n_t
    axes = _grid_axes(np.atleast_2d(aux_box), aux_step)
    grids = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)     # (n, d)
    n = pts.shape[0]

    v = np.asarray(problem.costs.terminal_g(pts, measure_flow[n_t]), dtype=float)
    v = v.reshape([len(a) for a in axes])
    for k in range(n_t - 1, -1, -1):
        t = k * dt
        a1, a2, b1, b2 = problem.dynamics.eval_all(t, pts)
        drift = np.concatenate([a1, a2], axis=1)            # (n, d)
        bmat = np.concatenate([b1, b2], axis=1)             # (n, d, r)
        fvals = np.asarray(problem.costs.coupling_f(t, pts, measure_flow[k]),
                           dtype=float)
        best = np.full(n, np.inf)
        for c0 in range(0, ctrl.shape[0], control_chunk):
            cc = ctrl[c0:c0 + control_chunk]                # (mc, r)
            move = np.einsum("ndr,mr->nmd", bmat, cc)
            targets = pts[:, None, :] + dt * (drift[:, None, :] + move)
            flat = targets.reshape(-1, d)
            v_next = _grid_interp(axes, v, flat).reshape(n, cc.shape[0])
            run = np.asarray(problem.costs.ell0(t, cc[None, :, :], pts[:, None, :]),
                             dtype=float)
            total = dt * (run + fvals[:, None]) + v_next
            best = np.minimum(best, total.min(axis=1))
        v = best.reshape([len(a) for a in axes])

    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    return _grid_interp(axes, v, xs)


def semidiscrete_value(problem: ProblemSpec, measure_flow, x0, n_t: int,
                       control_grid, aux_box, aux_step: float) -> float:
    """Reference value at a single starting point; see semidiscrete_values."""
    out = semidiscrete_values(problem, measure_flow, np.atleast_2d(x0),
                              n_t, control_grid, aux_box, aux_step)
    return float(out[0])
