"""Post-solve diagnostics: transport distance, path sampling, containment.

Sampling uses one counter-based Philox stream per path, keyed by
(seed, path index), so path i is reproducible in isolation and the set of
paths is independent of chunking or worker count.  The generator name to
quote in reports is "philox4x64".
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import wasserstein_distance

from .errors import UsageError
from .problem import DiscreteMeasure

RNG_ALGORITHM = "philox4x64"
_NORM_TOL = 1e-9


@dataclass
class SampledPath:
    index: int
    times: np.ndarray    # (n_t + 1,)
    states: np.ndarray   # (n_t + 1, d)


def wasserstein1_1d(mu: DiscreteMeasure, nu: DiscreteMeasure) -> float:
    """d_1 between two normalized measures on R (CDF-difference integral)."""
    a = np.asarray(mu.atoms, dtype=float).reshape(-1)
    b = np.asarray(nu.atoms, dtype=float).reshape(-1)
    if mu.atoms.ndim > 1 and mu.atoms.shape[-1] != 1:
        raise UsageError("wasserstein1_1d is one-dimensional")
    for m in (mu, nu):
        if abs(m.total_mass - 1.0) > _NORM_TOL:
            raise UsageError(f"measure mass {m.total_mass!r} is not 1")
        if np.any(m.weights < 0):
            raise UsageError("negative weights")
    return float(wasserstein_distance(a, b, mu.weights, nu.weights))


def sample_states(kernel, m0_vec: np.ndarray, count: int, seed: int):
    """Vectorized path sampling; returns (times, states, positions).

    states is (count, n_t + 1, d), positions the matching row indices into
    each S_k.  Path i consumes n_t + 1 uniforms from its own
    Philox(key=(seed, i)) stream: one for the initial node, one per step.
    """
    vp = kernel.policy
    ls = vp.level_sets
    n_t = kernel.n_steps
    times = vp.disc.times()
    d = ls.tables[0].idx.shape[1]
    if count < 0:
        raise UsageError("count must be >= 0")
    if count == 0:
        return times, np.zeros((0, n_t + 1, d)), np.zeros((0, n_t + 1), dtype=np.int64)

    uniforms = np.empty((count, n_t + 1))
    for i in range(count):
        gen = np.random.Generator(np.random.Philox(key=[seed, i]))
        uniforms[i] = gen.random(n_t + 1)

    positions = np.empty((count, n_t + 1), dtype=np.int64)
    cdf0 = np.cumsum(m0_vec)
    positions[:, 0] = np.minimum(
        np.searchsorted(cdf0, uniforms[:, 0], side="right"), len(m0_vec) - 1)

    for k in range(n_t):
        cur = positions[:, k]
        nodes, inverse = np.unique(cur, return_inverse=True)
        targets, vals = kernel.rows(k, nodes)
        cdf = np.cumsum(vals, axis=1)
        width = vals.shape[1]
        live_any = vals > 0
        last_live = width - 1 - np.argmax(live_any[:, ::-1], axis=1)
        nxt = np.empty(count, dtype=np.int64)
        for g in range(len(nodes)):
            mask = inverse == g
            cols = np.searchsorted(cdf[g], uniforms[mask, k + 1], side="right")
            cols = np.minimum(cols, last_live[g])
            dead = ~live_any[g, cols]
            if np.any(dead):
                cols[dead] = last_live[g]
            nxt[mask] = targets[g, cols]
        if np.any(nxt < 0):
            raise RuntimeError("internal: sampled a dead kernel slot")
        positions[:, k + 1] = nxt

    states = np.empty((count, n_t + 1, d))
    for k in range(n_t + 1):
        states[:, k, :] = ls.tables[k].idx[positions[:, k]] * ls.dx
    return times, states, positions


def sample_trajectories(kernel, m0_vec: np.ndarray, count: int, seed: int) -> list:
    """Sampled paths as objects; see sample_states for the mechanics."""
    times, states, _ = sample_states(kernel, m0_vec, count, seed)
    return [SampledPath(index=i, times=times, states=states[i])
            for i in range(count)]


def path_bounds_check(paths, level_sets) -> bool:
    """True iff every sampled state is a node of its S_k."""
    dx = level_sets.dx
    for path in paths:
        states = np.atleast_2d(path.states)
        for k in range(states.shape[0]):
            idx = np.rint(states[k] / dx).astype(np.int64)
            if np.max(np.abs(states[k] / dx - idx)) > 1e-6:
                return False
            if not level_sets.contains(k, idx):
                return False
    return True
