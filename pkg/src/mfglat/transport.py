"""Measure transport along the scheme's transition kernels.

The kernel of step k is P_k(x, (y1, c)) = p_k(x, y1) * beta_c(y2target),
with p_k the Gibbs weights of the backward sweep and beta the Q1 corner
weights.  Kernels are never stored globally: `TransitionKernel` regenerates
row blocks from the swept values on demand (bit-identical, same code path)
and pushes mass forward with a fixed-scan-order scatter, so results do not
depend on chunking or thread counts.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import _fast
from .errors import CoverageError, UsageError
from .hjb import CHUNK, ValuePolicy, backward_sweep, corner_expand, _raise_kernel_error
from .lattice import LevelSets
from .problem import Discretization, ProblemSpec

COVERAGE_FLOOR = 0.99   # minimum share of m0 the cells of S_0 must capture
_GL_NODES = 5


@dataclass
class Flow:
    """Time-indexed marginals, entry k living on S_k."""

    marginals: list

    @property
    def n_steps(self) -> int:
        return len(self.marginals) - 1

    def copy(self) -> "Flow":
        return Flow([m.copy() for m in self.marginals])


def uniform_flow(level_sets: LevelSets) -> Flow:
    return Flow([np.full(n, 1.0 / n) for n in level_sets.sizes()])


def constant_initial_flow(level_sets: LevelSets, m0_vec: np.ndarray) -> Flow:
    """The time-constant flow M_k = m0 for all k, restricted to each S_k.

    When S_0 is contained in every S_k (true whenever staying put is
    admissible on S_0) the restriction is exact; otherwise the surviving
    mass is renormalized.
    """
    marginals = []
    src = level_sets.tables[0]
    for k in range(len(level_sets)):
        tab = level_sets.tables[k]
        pos = tab.pos_of(src.idx)
        inside = pos >= 0
        w = np.zeros(len(tab))
        w[pos[inside]] = m0_vec[inside]
        total = w.sum()
        if total <= 0:
            raise UsageError(f"S_0 and S_{k} share no mass; cannot seed a flow")
        marginals.append(w / total)
    return Flow(marginals)


def discretize_initial(problem: ProblemSpec, disc: Discretization,
                       level_sets: LevelSets) -> np.ndarray:
    """Cell masses m0(E(x)) on S_0, renormalized to total exactly one.

    Each cell is clipped to the support box and integrated with a 5-point
    Gauss-Legendre rule per axis.  Raises CoverageError when the captured
    mass falls below 0.99 — that means S_0 misses real mass of m0.
    """
    tab = level_sets.tables[0]
    dx = disc.dx
    box = problem.initial.support_box
    centers = tab.coords(dx)                               # (n, d)
    lo = np.maximum(centers - dx / 2, box[:, 0])
    hi = np.minimum(centers + dx / 2, box[:, 1])
    width = np.maximum(hi - lo, 0.0)

    nodes, weights = leggauss(_GL_NODES)
    d = centers.shape[1]
    mid, half = 0.5 * (lo + hi), 0.5 * width
    mass = np.zeros(len(tab))
    pts = np.empty_like(centers)
    for combo in itertools.product(range(_GL_NODES), repeat=d):
        w = np.ones(len(tab))
        for a, ci in enumerate(combo):
            pts[:, a] = mid[:, a] + half[:, a] * nodes[ci]
            w = w * (half[:, a] * weights[ci])
        mass += w * np.asarray(problem.initial.density(pts), dtype=float)

    total = float(mass.sum())
    if total < COVERAGE_FLOOR:
        raise CoverageError(
            f"cells of S_0 capture only {total:.6f} of the initial mass"
        )
    if np.any(mass < 0):
        mass = np.maximum(mass, 0.0)
    vec = mass / mass.sum()
    # push the renormalization residual (an ulp or two) into the heaviest
    # cell so the result is a probability vector with sum exactly 1.0
    vec[np.argmax(vec)] += 1.0 - vec.sum()
    return vec


class TransitionKernel:
    """Row-lazy view of the kernels P_k induced by a swept ValuePolicy."""

    def __init__(self, policy: ValuePolicy):
        self.policy = policy

    @property
    def n_steps(self) -> int:
        return self.policy.disc.n_t

    def push_step(self, k: int, m_k: np.ndarray, chunk: int = CHUNK) -> np.ndarray:
        """One forward step m_{k+1} = m_k P_k, fixed accumulation order."""
        vp = self.policy
        ls = vp.level_sets
        nxt = ls.tables[k + 1]
        n = len(ls.tables[k])
        if len(m_k) != n:
            raise UsageError(f"marginal of length {len(m_k)} pushed at k={k} "
                             f"where |S_k| = {n}")
        out = np.zeros(len(nxt))
        buf = np.empty((min(chunk, n), vp.geometry(k).n_cand))
        for i0 in range(0, n, chunk):
            sel = slice(i0, min(i0 + chunk, n))
            blk, flat_base, steps, _, _, probs = vp.policy_block(
                k, sel, want_probs=True, probs_buf=buf)
            err = _fast.push_scatter(
                probs, np.ascontiguousarray(blk.valid),
                np.ascontiguousarray(flat_base),
                np.ascontiguousarray(blk.frac), blk.shared_y2, steps,
                nxt.pos_box, np.ascontiguousarray(m_k[sel]), out)
            _raise_kernel_error(err, k)
        return out

    def rows(self, k: int, positions) -> tuple:
        """Dense row view for selected source nodes.

        Returns (targets, vals): both (n_sel, W * 2^q); targets are row
        positions in S_{k+1}, -1 on dead slots, vals the matching
        probabilities.  Live entries of a row sum to one.
        """
        vp = self.policy
        nxt = vp.level_sets.tables[k + 1]
        blk, flat_base, steps, _, _, probs = vp.policy_block(k, positions,
                                                             want_probs=True)
        wgts, offs = corner_expand(blk, steps)
        vals = probs[:, :, None] * wgts                       # (nc, W, C)
        flats = flat_base[:, :, None] + offs[None, None, :]
        live = blk.valid[:, :, None] & (vals > 0.0)
        safe = np.clip(flats, 0, nxt.pos_box.shape[0] - 1)
        targets = np.where(live, nxt.pos_box[safe], -1)
        if np.any(live & (targets < 0)):
            raise RuntimeError(f"internal: kernel row target missing from S_{k + 1}")
        vals = np.where(live, vals, 0.0)
        nc = vals.shape[0]
        return targets.reshape(nc, -1), vals.reshape(nc, -1)

    def materialize(self, k: int, max_entries: int = 5_000_000):
        """The full kernel of step k as a scipy CSR matrix (small problems)."""
        from scipy.sparse import csr_matrix

        ls = self.policy.level_sets
        n, m = len(ls.tables[k]), len(ls.tables[k + 1])
        geo = self.policy.geometry(k)
        if n * geo.n_cand * 2 ** self.policy.problem.dynamics.dim_q > max_entries:
            raise UsageError(f"kernel at step {k} too large to materialize")
        targets, vals = self.rows(k, slice(0, n))
        rows = np.repeat(np.arange(n), targets.shape[1])
        live = targets.reshape(-1) >= 0
        return csr_matrix(
            (vals.reshape(-1)[live], (rows[live], targets.reshape(-1)[live])),
            shape=(n, m))


def forward_push(m0_vec: np.ndarray, kernel: TransitionKernel) -> Flow:
    """Push the discretized initial mass through all steps."""
    marginals = [np.asarray(m0_vec, dtype=float)]
    for k in range(kernel.n_steps):
        marginals.append(kernel.push_step(k, marginals[-1]))
    return Flow(marginals)


def best_response(flow, problem: ProblemSpec, disc: Discretization,
                  level_sets: LevelSets, m0_vec: np.ndarray | None = None) -> Flow:
    """Marginal flow induced by the optimal policy against `flow`."""
    _, kernel = backward_sweep(flow, level_sets, problem, disc)
    if m0_vec is None:
        m0_vec = discretize_initial(problem, disc, level_sets)
    return forward_push(m0_vec, kernel)
