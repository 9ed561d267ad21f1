"""Sequential numba kernels for the per-step inner loops.

Everything here is deliberately single-threaded (no prange, no fastmath):
accumulation order is fixed by the loops, so results are bit-reproducible
regardless of how many threads the caller thinks it enabled.

Corner convention: a y2 cell has 2^q corners enumerated by code in
[0, 2^q); axis b of the corner is bit (q-1-b) of the code, i.e. the last
axis toggles fastest, matching itertools.product((0, 1), repeat=q).

Error codes returned by the kernels: 0 ok, 1 empty candidate row,
2 stencil corner missing from the next level set, 3 non-finite cost.
"""

import numpy as np
from numba import njit

UNDERFLOW_FLUSH = 1e-300


@njit(cache=True)
def gibbs_reduce(cost_pre, alpha_inf, valid, flat_base, frac, shared_y2,
                 corner_steps, v_box, eps, sat_threshold, want_probs,
                 out_value, out_sat, out_probs):
    nc, nw = cost_pre.shape
    q = corner_steps.shape[0]
    n_corners = 1 << q
    vol = v_box.shape[0]
    cost = np.empty(nw)
    for i in range(nc):
        cmin = np.inf
        argmin = -1
        for w in range(nw):
            if not valid[i, w]:
                cost[w] = np.inf
                continue
            row = 0 if shared_y2 else w
            acc = 0.0
            fb = flat_base[i, w]
            for code in range(n_corners):
                wgt = 1.0
                off = 0
                for b in range(q):
                    if (code >> (q - 1 - b)) & 1:
                        wgt *= frac[i, row, b]
                        off += corner_steps[b]
                    else:
                        wgt *= 1.0 - frac[i, row, b]
                if wgt > 0.0:
                    fl = fb + off
                    if fl < 0 or fl >= vol:
                        return 2
                    v = v_box[fl]
                    if np.isnan(v):
                        return 2
                    acc += wgt * v
            c = cost_pre[i, w] + acc
            if np.isnan(c) or c == -np.inf:
                return 3
            cost[w] = c
            if c < cmin:
                cmin = c
                argmin = w
        if argmin < 0:
            return 1

        if eps == 0.0:
            out_value[i] = cmin
            out_sat[i] = 1.0 if alpha_inf[i, argmin] >= sat_threshold else 0.0
            if want_probs:
                for w in range(nw):
                    out_probs[i, w] = 1.0 if w == argmin else 0.0
        else:
            z = 0.0
            for w in range(nw):
                if cost[w] == np.inf:
                    cost[w] = 0.0
                    continue
                e = np.exp(-(cost[w] - cmin) / eps)
                if e < UNDERFLOW_FLUSH:
                    e = 0.0
                cost[w] = e
                z += e
            out_value[i] = cmin - eps * np.log(z)
            sat = 0.0
            for w in range(nw):
                p = cost[w] / z
                if want_probs:
                    out_probs[i, w] = p
                if p > 0.0 and alpha_inf[i, w] >= sat_threshold:
                    sat += p
            out_sat[i] = sat
    return 0


@njit(cache=True)
def push_scatter(probs, valid, flat_base, frac, shared_y2, corner_steps,
                 pos_box, mass, out_mass):
    """out_mass[target] += mass[i] * probs[i, w] * corner weight, scan order."""
    nc, nw = probs.shape
    q = corner_steps.shape[0]
    n_corners = 1 << q
    vol = pos_box.shape[0]
    for i in range(nc):
        mi = mass[i]
        if mi == 0.0:
            continue
        for w in range(nw):
            if not valid[i, w]:
                continue
            pw = probs[i, w]
            if pw == 0.0:
                continue
            row = 0 if shared_y2 else w
            fb = flat_base[i, w]
            for code in range(n_corners):
                wgt = 1.0
                off = 0
                for b in range(q):
                    if (code >> (q - 1 - b)) & 1:
                        wgt *= frac[i, row, b]
                        off += corner_steps[b]
                    else:
                        wgt *= 1.0 - frac[i, row, b]
                if wgt > 0.0:
                    fl = fb + off
                    if fl < 0 or fl >= vol:
                        return 2
                    pos = pos_box[fl]
                    if pos < 0:
                        return 2
                    out_mass[pos] += mi * pw * wgt
    return 0
