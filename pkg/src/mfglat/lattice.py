"""Lattice geometry: reachable targets, Q1 weights, level sets.

The scheme lives on the uniform lattice G = (dx Z)^d.  One time step maps a
node x = (x1, x2) to a target pair (y1, y2target(y1)): y1 ranges over the
lattice points reachable with |control|_inf <= control_bound, and the x2
image

    y2target = x2 + dt (A2 + B2 a(k, x, y1))

is spread over its cell corners with Q1 hat weights.  `StepGeometry` is the
single code path that enumerates candidates for a time step; the backward
sweep, the forward push, kernel dumps and path sampling all consume its
blocks, which keeps their supports and floating-point values consistent by
construction.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, UsageError
from .problem import Discretization, ProblemSpec

# Relative slack for the exact |alpha| <= control_bound filter: admits
# candidates whose control sits on the bound up to float rounding, never
# meaningfully more.
_FILTER_SLACK = 1e-12
# Candidate windows wider than this indicate a degenerate configuration.
_MAX_WINDOW = 4096


@dataclass(frozen=True)
class LatticePoint:
    """A node i*dx of the lattice; identity is the integer index alone."""

    idx: tuple
    dx: float = field(compare=False)

    @property
    def coords(self) -> np.ndarray:
        return np.asarray(self.idx, dtype=float) * self.dx

    def split(self, dim_r: int):
        c = self.coords
        return c[:dim_r], c[dim_r:]


def q1_weights(z, dx: float) -> list:
    """Cell corners of z with their Q1 hat weights, positive weights only.

    Returns [(corner index tuple, weight)] in lexicographic corner order.
    A z lying exactly on a node yields the single pair (node, 1.0).  The
    empty z (zero-dimensional x2 block) yields [((), 1.0)].
    """
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.size == 0:
        return [((), 1.0)]
    u = z / dx
    base = np.floor(u).astype(np.int64)
    frac = u - base
    out = []
    for bits in itertools.product((0, 1), repeat=z.size):
        w = 1.0
        for b, bit in enumerate(bits):
            w *= frac[b] if bit else 1.0 - frac[b]
        if w > 0.0:
            out.append((tuple(int(i) for i in base + np.asarray(bits)), float(w)))
    return out


def interpolate(values: Mapping, z, dx: float) -> float:
    """Q1 interpolation of a node->value map at the point z."""
    total = 0.0
    for corner, w in q1_weights(z, dx):
        if corner not in values:
            raise UsageError(f"interpolation stencil corner {corner} missing from values")
        total += w * values[corner]
    return total


class NodeTable:
    """A finite set of lattice nodes with O(1) membership lookup.

    Nodes are kept lexicographically sorted; `pos` maps a node's integer
    index vector to its row (or -1).  The lookup is a dense int32 array
    over the set's bounding box, so boxes are expected to be within a
    small constant factor of the set size.
    """

    __slots__ = ("idx", "origin", "shape", "strides", "pos_box", "own_flats")

    def __init__(self, idx: np.ndarray):
        idx = np.asarray(idx, dtype=np.int64)
        if idx.ndim != 2:
            raise UsageError("NodeTable wants an (n, d) index array")
        self.origin = idx.min(axis=0)
        self.shape = idx.max(axis=0) - self.origin + 1
        strides = np.ones(idx.shape[1], dtype=np.int64)
        for a in range(idx.shape[1] - 2, -1, -1):
            strides[a] = strides[a + 1] * self.shape[a + 1]
        self.strides = strides
        flats = (idx - self.origin) @ strides
        order = np.argsort(flats, kind="stable")
        flats = flats[order]
        if np.any(flats[1:] == flats[:-1]):
            raise UsageError("duplicate nodes")
        self.idx = np.ascontiguousarray(idx[order])
        vol = int(np.prod(self.shape))
        pos = np.full(vol, -1, dtype=np.int32)
        pos[flats] = np.arange(len(flats), dtype=np.int32)
        self.pos_box = pos
        self.own_flats = flats

    def __len__(self) -> int:
        return self.idx.shape[0]

    @property
    def volume(self) -> int:
        return int(np.prod(self.shape))

    def coords(self, dx: float) -> np.ndarray:
        return self.idx * dx

    def flat_of(self, idx: np.ndarray) -> np.ndarray:
        """Flat box offsets of index vectors; -1 where outside the box."""
        rel = np.asarray(idx, dtype=np.int64) - self.origin
        inside = np.all((rel >= 0) & (rel < self.shape), axis=-1)
        flat = rel @ self.strides
        return np.where(inside, flat, -1)

    def pos_of(self, idx: np.ndarray) -> np.ndarray:
        """Row positions of index vectors; -1 for non-members."""
        flat = self.flat_of(idx)
        out = np.full(flat.shape, -1, dtype=np.int32)
        ok = flat >= 0
        out[ok] = self.pos_box[flat[ok]]
        return out

    def value_box(self, values: np.ndarray, fill=np.nan) -> np.ndarray:
        """Dense box array carrying `values` at member nodes, `fill` elsewhere."""
        box = np.full(self.volume, fill, dtype=float)
        box[self.own_flats] = values
        return box


class LevelSets:
    """The nested supports S_0, ..., S_{n_t} of the scheme."""

    def __init__(self, tables: Sequence[NodeTable], dx: float, dim_r: int):
        self.tables = list(tables)
        self.dx = dx
        self.dim_r = dim_r
        radius = 0.0
        for tab in self.tables:
            far = np.maximum(np.abs(tab.origin), np.abs(tab.origin + tab.shape - 1))
            radius = max(radius, float(far.max()) * dx)
        self.bounding_radius = radius

    def __len__(self) -> int:
        return len(self.tables)

    def sizes(self) -> list:
        return [len(t) for t in self.tables]

    def coords(self, k: int) -> np.ndarray:
        return self.tables[k].coords(self.dx)

    def points(self, k: int) -> Iterator[LatticePoint]:
        for row in self.tables[k].idx:
            yield LatticePoint(tuple(int(i) for i in row), self.dx)

    def contains(self, k: int, idx) -> bool:
        arr = np.asarray(idx, dtype=np.int64).reshape(1, -1)
        return int(self.tables[k].pos_of(arr)[0]) >= 0


@dataclass
class CandidateBlock:
    """Per-node candidate arrays for one time step, one node chunk.

    Shapes: nc nodes, W candidate slots (some invalid), r control dims,
    q = d - r image dims.  `frac`/`flat_y2` have a singleton candidate axis
    when the image does not depend on the chosen target (B2 == 0 on the
    chunk).
    """

    node_pos: np.ndarray      # (nc,) row positions in the source table
    j: np.ndarray             # (nc, W, r) target y1 indices
    valid: np.ndarray         # (nc, W) admissibility mask
    alpha: np.ndarray         # (nc, W, r) controls
    alpha_inf: np.ndarray     # (nc, W) sup norm of the control
    base: np.ndarray          # (nc, Wy2, q) floor corner of the y2 image
    frac: np.ndarray          # (nc, Wy2, q) fractional cell position
    shared_y2: bool           # True when Wy2 == 1

    @property
    def n_nodes(self) -> int:
        return self.j.shape[0]

    @property
    def n_cand(self) -> int:
        return self.j.shape[1]


class StepGeometry:
    """Candidate enumeration for the step k -> k+1 over a node table.

    Evaluates the dynamics once on the whole table at construction; blocks
    of candidate arrays are then materialized per node selection.  The
    enumeration window per node is the bounding box of the admissible
    targets (widened by one slot per side against float rounding); the
    exact |alpha|_inf <= control_bound filter is applied on top.
    """

    def __init__(self, problem: ProblemSpec, disc: Discretization,
                 table: NodeTable, k: int):
        self.problem = problem
        self.disc = disc
        self.table = table
        self.k = k
        self.t = k * disc.dt
        dyn = problem.dynamics
        self.r, self.q = dyn.dim_r, dyn.dim_q
        dt, dx, cb = disc.dt, disc.dx, disc.control_bound

        x = table.coords(dx)
        a1, a2, b1, b2 = dyn.eval_all(self.t, x)
        if self.r == 1:
            self.binv = 1.0 / b1
        else:
            self.binv = np.linalg.inv(b1)
        self.a1, self.a2, self.b2 = a1, a2, b2
        rowsum1 = np.abs(b1).sum(axis=2)
        center = x[:, : self.r] + dt * a1
        halfw = dt * cb * rowsum1
        self.lo = np.floor((center - halfw) / dx).astype(np.int64)
        self.hi = np.ceil((center + halfw) / dx).astype(np.int64)
        widths = (self.hi - self.lo).max(axis=0) + 1
        if np.any(widths > _MAX_WINDOW) or np.prod(widths) > _MAX_WINDOW:
            raise ConfigurationError(
                f"candidate window {tuple(int(w) for w in widths)} too large; "
                "control_bound * dt / dx is out of the supported range"
            )
        self.widths = tuple(int(w) for w in widths)
        grids = np.meshgrid(*[np.arange(w, dtype=np.int64) for w in self.widths],
                            indexing="ij")
        self.offsets = np.stack([g.ravel() for g in grids], axis=-1)  # (W, r)
        self.n_cand = self.offsets.shape[0]
        self.b2_zero = bool(np.all(b2 == 0.0)) if self.q else True
        self.slack = _FILTER_SLACK * max(1.0, cb)

        # Envelope of next-step targets, used to size the build scatter box.
        nb_lo = np.empty(dyn.dim_d, dtype=np.int64)
        nb_hi = np.empty(dyn.dim_d, dtype=np.int64)
        nb_lo[: self.r] = self.lo.min(axis=0)
        nb_hi[: self.r] = self.hi.max(axis=0)
        if self.q:
            rowsum2 = np.abs(b2).sum(axis=2)
            img_lo = x[:, self.r:] + dt * (a2 - cb * rowsum2)
            img_hi = x[:, self.r:] + dt * (a2 + cb * rowsum2)
            nb_lo[self.r:] = np.floor(img_lo / dx).astype(np.int64).min(axis=0) - 1
            nb_hi[self.r:] = np.floor(img_hi / dx).astype(np.int64).max(axis=0) + 2
        self.next_bounds = (nb_lo, nb_hi)

    def block(self, sel) -> CandidateBlock:
        """Candidate arrays for the selected rows (a slice or index array)."""
        disc, dx, dt = self.disc, self.disc.dx, self.disc.dt
        r, q = self.r, self.q
        idx = self.table.idx[sel]
        if isinstance(sel, slice):
            node_pos = np.arange(*sel.indices(len(self.table)), dtype=np.int64)
        else:
            node_pos = np.asarray(sel, dtype=np.int64)
        x = idx * dx
        lo = self.lo[sel]
        j = lo[:, None, :] + self.offsets[None, :, :]          # (nc, W, r)
        valid = np.all(j <= self.hi[sel][:, None, :], axis=2)

        rhs = (j * dx - x[:, None, :r]) / dt - self.a1[sel][:, None, :]
        if r == 1:
            alpha = self.binv[sel] * rhs
        else:
            alpha = np.einsum("nij,nwj->nwi", self.binv[sel], rhs)
        alpha_inf = np.abs(alpha).max(axis=2)
        valid &= alpha_inf <= disc.control_bound + self.slack

        if q == 0:
            nc = j.shape[0]
            base = np.zeros((nc, 1, 0), dtype=np.int64)
            frac = np.zeros((nc, 1, 0))
            shared = True
        elif self.b2_zero:
            img = x[:, None, r:] + dt * self.a2[sel][:, None, :]      # (nc, 1, q)
            u = img / dx
            base = np.floor(u).astype(np.int64)
            frac = u - base
            shared = True
        else:
            drift = self.a2[sel][:, None, :] \
                + np.einsum("nqj,nwj->nwq", self.b2[sel], alpha)
            img = x[:, None, r:] + dt * drift                         # (nc, W, q)
            u = img / dx
            base = np.floor(u).astype(np.int64)
            frac = u - base
            shared = False
        return CandidateBlock(node_pos=node_pos, j=j, valid=valid, alpha=alpha,
                              alpha_inf=alpha_inf, base=base, frac=frac,
                              shared_y2=shared)


def flat_parts(blk: CandidateBlock, origin: np.ndarray, strides: np.ndarray):
    """Flat box offsets of (y1, floor corner) targets plus corner strides.

    Returns (flat_base, corner_steps): flat_base[(i, w)] addresses the target
    with all-zero corner bits in a box with the given origin/strides;
    corner_steps[b] is the offset of bit b of the y2 corner.  Entries for
    invalid candidates are unspecified — consumers must mask first.
    """
    r = blk.j.shape[2]
    y1 = np.einsum("nwr,r->nw", blk.j - origin[:r], strides[:r])
    if blk.base.shape[2]:
        y2 = np.einsum("nwq,q->nw", blk.base - origin[r:], strides[r:])
        flat = y1 + (y2 if not blk.shared_y2 else y2[:, :1])
    else:
        flat = y1
    return flat, strides[r:].copy()


def build_s0(problem: ProblemSpec, disc: Discretization) -> NodeTable:
    """Nodes whose cells overlap the interior of the m0 support box.

    Per axis, the open cell (x - dx/2, x + dx/2) must overlap the open
    support interval; cells touching the support only on a face carry no
    mass and are dropped.
    """
    dx = disc.dx
    ranges = []
    for lo, hi in problem.initial.support_box:
        i_min = int(np.floor(lo / dx - 0.5)) + 1
        i_max = int(np.ceil(hi / dx + 0.5)) - 1
        if i_min > i_max:
            raise ConfigurationError("m0 support box thinner than one cell")
        ranges.append(np.arange(i_min, i_max + 1, dtype=np.int64))
    grids = np.meshgrid(*ranges, indexing="ij")
    idx = np.stack([g.ravel() for g in grids], axis=-1)
    return NodeTable(idx)


def build_level_sets(problem: ProblemSpec, disc: Discretization,
                     max_nodes_per_level: int = 5_000_000,
                     chunk: int = 65536) -> LevelSets:
    """Forward-propagate the supports S_0 subset ... subset box over all steps."""
    tables = [build_s0(problem, disc)]
    for k in range(disc.n_t):
        geo = StepGeometry(problem, disc, tables[k], k)
        nb_lo, nb_hi = geo.next_bounds
        shape = nb_hi - nb_lo + 1
        vol = int(np.prod(shape))
        if vol > 64 * max_nodes_per_level:
            raise ConfigurationError(f"scatter box at step {k} has volume {vol}")
        strides = np.ones_like(shape)
        for a in range(len(shape) - 2, -1, -1):
            strides[a] = strides[a + 1] * shape[a + 1]
        hit = np.zeros(vol, dtype=bool)

        n = len(tables[k])
        for i0 in range(0, n, chunk):
            blk = geo.block(slice(i0, min(i0 + chunk, n)))
            flat, steps = flat_parts(blk, nb_lo, strides)
            q = blk.base.shape[2]
            for bits in itertools.product((0, 1), repeat=q):
                mask = blk.valid.copy()
                off = 0
                for b, bit in enumerate(bits):
                    if bit:
                        mask &= blk.frac[:, :, b] > 0.0
                        off += int(steps[b])
                targets = flat[mask] + off
                if targets.size and (targets.min() < 0 or targets.max() >= vol):
                    raise RuntimeError("internal: scatter target left the forecast box")
                hit[targets] = True

        flats = np.flatnonzero(hit)
        if flats.size == 0:
            raise RuntimeError(f"internal: empty level set at step {k + 1} "
                               "despite an admissible configuration")
        if flats.size > max_nodes_per_level:
            raise ConfigurationError(
                f"|S_{k + 1}| = {flats.size} exceeds the cap {max_nodes_per_level}"
            )
        idx = np.empty((flats.size, len(shape)), dtype=np.int64)
        rem = flats
        for a in range(len(shape)):
            idx[:, a] = rem // strides[a] + nb_lo[a]
            rem = rem % strides[a]
        tables.append(NodeTable(idx))
    return LevelSets(tables, disc.dx, problem.dynamics.dim_r)


class LatticeDynamics:
    """Pointwise views of the discrete control map, for inspection and tests."""

    def __init__(self, problem: ProblemSpec, disc: Discretization):
        self.problem = problem
        self.disc = disc

    def _point(self, x) -> np.ndarray:
        if isinstance(x, LatticePoint):
            return x.coords
        return np.asarray(x, dtype=float)

    def control_for_target(self, k: int, x, y1) -> np.ndarray:
        """The unique control a with x1 + dt (A1 + B1 a) == y1."""
        dyn, disc = self.problem.dynamics, self.disc
        xc = np.atleast_2d(self._point(x))
        y1c = np.asarray(y1, dtype=float).reshape(-1)
        t = k * disc.dt
        a1, _, b1, _ = dyn.eval_all(t, xc)
        rhs = (y1c - xc[0, : dyn.dim_r]) / disc.dt - a1[0]
        if dyn.dim_r == 1:
            return rhs / b1[0, 0, 0]
        return np.linalg.solve(b1[0], rhs)

    def image_y2(self, k: int, x, y1) -> np.ndarray:
        """x2 + dt (A2 + B2 a(k, x, y1)); empty when r == d."""
        dyn, disc = self.problem.dynamics, self.disc
        xc = np.atleast_2d(self._point(x))
        t = k * disc.dt
        if dyn.dim_q == 0:
            return np.zeros(0)
        a = self.control_for_target(k, x, y1)
        _, a2, _, b2 = dyn.eval_all(t, xc)
        return xc[0, dyn.dim_r:] + disc.dt * (a2[0] + b2[0] @ a)

    def reachable_controls(self, k: int, x) -> list:
        """[(y1 index tuple, control vector)] over the admissible targets."""
        if isinstance(x, LatticePoint):
            idx = np.asarray(x.idx, dtype=np.int64)
        else:
            idx = np.asarray(x, dtype=np.int64)
        table = NodeTable(idx.reshape(1, -1))
        geo = StepGeometry(self.problem, self.disc, table, k)
        blk = geo.block(slice(0, 1))
        out = []
        for w in range(blk.n_cand):
            if blk.valid[0, w]:
                out.append((tuple(int(i) for i in blk.j[0, w]),
                            blk.alpha[0, w].copy()))
        return out
