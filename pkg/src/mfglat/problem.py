"""Problem and discretization data, feasibility checks.

State space is R^d with a designated split x = (x1, x2), x1 in R^r,
x2 in R^(d-r).  Dynamics are control-affine,

    dγ/dt = A(t, γ) + B(t, γ) a,      |a|_inf <= control_bound,

with A = (A1, A2) and B = (B1, B2) split the same way and B1(t, x)
invertible.  Running cost ell0(t, a, x) + coupling_f(t, x, mu), terminal
cost terminal_g(x, mu), initial distribution m0.

Vectorization contract (used throughout the package): the dynamics
callables take an (n, d) coordinate block and return (n, r), (n, d-r),
(n, r, r), (n, d-r, r) respectively; ell0 broadcasts over leading axes
(controls of shape (..., r) against states of shape (..., d)); coupling_f,
terminal_g and the m0 density map (n, d) -> (n,).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ConfigurationError, UsageError

DET_FLOOR = 1e-10          # below this, B1 counts as singular
MASS_RTOL = 1e-6           # accepted deviation of m0 from unit mass
_BOX_SAMPLES = 32          # per-axis sampling of the working box


@dataclass(eq=False)
class DiscreteMeasure:
    """Finitely supported measure: atom coordinates plus weights.

    ``atoms`` is (m,) for measures on the line and (m, d) otherwise.
    Weights are not forced to sum to one here; normalization requirements
    live with the operations that need them.

    ``lattice_idx``/``dx`` are optional hints set when the atoms are lattice
    nodes i*dx; consumers (the Gaussian coupling, mainly) may use them to
    group atoms by integer coordinate instead of sorting floats.  They never
    change values, only the route taken to compute them.
    """

    atoms: np.ndarray
    weights: np.ndarray
    lattice_idx: np.ndarray | None = None
    dx: float | None = None

    def __post_init__(self):
        self.atoms = np.asarray(self.atoms, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.atoms.shape[0] != self.weights.shape[0]:
            raise UsageError(
                f"{self.atoms.shape[0]} atoms vs {self.weights.shape[0]} weights"
            )

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())


@dataclass(frozen=True)
class SplitDynamics:
    """Control-affine drift in split form.

    a2/b2 may be None when dim_r == dim_d (no x2 block).
    """

    dim_d: int
    dim_r: int
    a1: Callable
    b1: Callable
    a2: Callable | None = None
    b2: Callable | None = None

    def __post_init__(self):
        if not (1 <= self.dim_r <= self.dim_d):
            raise ConfigurationError(f"need 1 <= r <= d, got r={self.dim_r}, d={self.dim_d}")
        if self.dim_r < self.dim_d and (self.a2 is None or self.b2 is None):
            raise ConfigurationError("a2/b2 required when r < d")

    @property
    def dim_q(self) -> int:
        return self.dim_d - self.dim_r

    def eval_all(self, t: float, x: np.ndarray):
        """Evaluate (a1, a2, b1, b2) at time t on an (n, d) block.

        Zero-width pieces come back as empty arrays so downstream code can
        stay shape-generic.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = x.shape[0]
        r, q = self.dim_r, self.dim_q
        a1 = np.asarray(self.a1(t, x), dtype=float).reshape(n, r)
        b1 = np.asarray(self.b1(t, x), dtype=float).reshape(n, r, r)
        if q == 0:
            a2 = np.zeros((n, 0))
            b2 = np.zeros((n, 0, r))
        else:
            a2 = np.asarray(self.a2(t, x), dtype=float).reshape(n, q)
            b2 = np.asarray(self.b2(t, x), dtype=float).reshape(n, q, r)
        return a1, a2, b1, b2


@dataclass(frozen=True)
class CostSpec:
    """Running cost ell0 + coupling_f, terminal cost terminal_g.

    growth_p is metadata only (coercivity exponent of ell0 in the control);
    nothing numerical consumes it.
    """

    ell0: Callable
    coupling_f: Callable
    terminal_g: Callable
    growth_p: float = 2.0


@dataclass(frozen=True)
class InitialMeasure:
    """Density of m0 together with the box that carries its support."""

    density: Callable
    support_box: np.ndarray  # (d, 2) rows of (lo, hi)

    def __post_init__(self):
        box = np.atleast_2d(np.asarray(self.support_box, dtype=float))
        object.__setattr__(self, "support_box", box)
        if box.ndim != 2 or box.shape[1] != 2 or np.any(box[:, 0] >= box[:, 1]):
            raise ConfigurationError(f"support_box must be (d, 2) with lo < hi, got {box!r}")


@dataclass(frozen=True)
class ProblemSpec:
    dynamics: SplitDynamics
    costs: CostSpec
    initial: InitialMeasure
    horizon: float
    label: str = ""

    def __post_init__(self):
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        if self.initial.support_box.shape[0] != self.dynamics.dim_d:
            raise ConfigurationError("support_box dimension does not match dynamics")


@dataclass(frozen=True)
class Discretization:
    """Grid and regularization parameters.

    dt = horizon / n_t, dx = 1 / n_s.  interp_radius is fixed at 1 (the
    scheme interpolates with the Q1 hat basis); the field exists so config
    files can state it explicitly.
    """

    n_t: int
    n_s: int
    horizon: float
    epsilon: float
    control_bound: float = 4.0
    interp_radius: int = 1
    c_k_estimate: float | None = None

    def __post_init__(self):
        if self.n_t < 1 or self.n_s < 1:
            raise ConfigurationError("n_t and n_s must be positive integers")
        if self.horizon <= 0:
            raise ConfigurationError("horizon must be positive")
        if self.epsilon < 0:
            raise ConfigurationError("epsilon must be >= 0")
        if self.control_bound <= 0:
            raise ConfigurationError("control_bound must be positive")
        if self.interp_radius != 1:
            raise ConfigurationError("only the Q1 stencil (interp_radius == 1) is implemented")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_t

    @property
    def dx(self) -> float:
        return 1.0 / self.n_s

    def times(self) -> np.ndarray:
        return np.arange(self.n_t + 1) * self.dt


@dataclass
class ValidationReport:
    ok: bool
    errors: list          # (category, message) pairs
    c_k_estimate: float
    min_abs_det_b1: float
    ratio: float          # dx / dt
    ratio_bound: float    # min(1, control_bound / c_K)
    max_admissible_dx: float
    m0_mass: float
    working_box: np.ndarray          # (d, 2) box reached at the final time
    set_size_forecast: list          # per-k upper estimate of |S_k|

    def summary(self) -> str:
        lines = []
        status = "OK" if self.ok else "REJECTED"
        lines.append(f"validation: {status}")
        lines.append(
            f"  grid ratio dx/dt = {self.ratio:.6g} "
            f"(bound min(1, C/c_K) = {self.ratio_bound:.6g}, "
            f"max admissible dx = {self.max_admissible_dx:.6g})"
        )
        lines.append(f"  c_K estimate = {self.c_k_estimate:.6g}, "
                     f"min |det B1| = {self.min_abs_det_b1:.3g}")
        lines.append(f"  m0 mass on support box = {self.m0_mass:.9f}")
        lines.append(f"  forecast |S_k|: k=0 -> {self.set_size_forecast[0]}, "
                     f"k={len(self.set_size_forecast) - 1} -> {self.set_size_forecast[-1]}")
        for cat, msg in self.errors:
            lines.append(f"  [{cat}] {msg}")
        return "\n".join(lines)


def _box_lattice(box: np.ndarray, per_axis: int) -> np.ndarray:
    """Tensor sample of a box, per_axis points per axis, as an (n, d) block."""
    axes = [np.linspace(lo, hi, per_axis) for lo, hi in box]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def forecast_working_boxes(problem: ProblemSpec, disc: Discretization,
                           per_axis: int = _BOX_SAMPLES) -> list:
    """Per-step boxes that contain the reachable lattice sets.

    Starting from the m0 support box, each step maps sampled states through
    the extreme admissible drifts and keeps the per-axis envelope; x2 axes
    gain one dx of interpolation spill.  This is an estimate (sampling the
    box rather than optimizing over it), meant for validation diagnostics
    and |S_k| forecasts, not a certified enclosure.
    """
    dyn = problem.dynamics
    r = dyn.dim_r
    dt, dx, cbound = disc.dt, disc.dx, disc.control_bound
    box = problem.initial.support_box.astype(float).copy()
    boxes = [box.copy()]
    for k in range(disc.n_t):
        t = k * dt
        x = _box_lattice(box, per_axis)
        a1, a2, b1, b2 = dyn.eval_all(t, x)
        reach1 = np.abs(b1).sum(axis=2) * cbound            # (n, r)
        lo1 = (x[:, :r] + dt * (a1 - reach1)).min(axis=0)
        hi1 = (x[:, :r] + dt * (a1 + reach1)).max(axis=0)
        new = np.empty_like(box)
        new[:r, 0], new[:r, 1] = lo1, hi1
        if dyn.dim_q:
            reach2 = np.abs(b2).sum(axis=2) * cbound        # (n, q)
            lo2 = (x[:, r:] + dt * (a2 - reach2)).min(axis=0) - dx
            hi2 = (x[:, r:] + dt * (a2 + reach2)).max(axis=0) + dx
            new[r:, 0], new[r:, 1] = lo2, hi2
        box = new
        boxes.append(box.copy())
    return boxes


def _lattice_count(box: np.ndarray, dx: float) -> int:
    counts = np.floor(box[:, 1] / dx + 1e-12) - np.ceil(box[:, 0] / dx - 1e-12) + 1
    return int(np.prod(np.maximum(counts, 0)))


def m0_mass_estimate(problem: ProblemSpec, per_axis: int = 256) -> float:
    """Gauss-Legendre estimate of the m0 mass over its support box."""
    box = problem.initial.support_box
    nodes, weights = leggauss(per_axis)
    axes_x, axes_w = [], []
    for lo, hi in box:
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        axes_x.append(mid + half * nodes)
        axes_w.append(half * weights)
    grids = np.meshgrid(*axes_x, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wgrids = np.meshgrid(*axes_w, indexing="ij")
    w = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    dens = np.asarray(problem.initial.density(pts), dtype=float)
    return float(np.dot(w, dens))


def validate(problem: ProblemSpec, disc: Discretization) -> ValidationReport:
    """Feasibility gate for a (problem, discretization) pair.

    Checks, in order: horizon consistency, B1 invertibility on a sampled
    working box, the grid-ratio condition dx/dt <= min(1, C/c_K), and m0
    normalization.  Pure: no state is mutated, nothing is raised for
    ordinary rejections — inspect the report.
    """
    errors = []
    if not math.isclose(disc.horizon, problem.horizon, rel_tol=0, abs_tol=1e-12):
        errors.append(("config", f"discretization horizon {disc.horizon} "
                                 f"!= problem horizon {problem.horizon}"))

    boxes = forecast_working_boxes(problem, disc)
    final_box = boxes[-1]

    # c_K and invertibility, sampled over the largest box and the time grid
    n_knots = min(disc.n_t + 1, 33)
    knots = np.linspace(0.0, disc.horizon, n_knots)
    x = _box_lattice(final_box, _BOX_SAMPLES)
    c_k = 0.0
    min_det = math.inf
    for t in knots:
        b1 = np.asarray(problem.dynamics.b1(t, x), dtype=float)
        b1 = b1.reshape(x.shape[0], problem.dynamics.dim_r, problem.dynamics.dim_r)
        det = np.abs(np.linalg.det(b1))
        min_det = min(min_det, float(det.min()))
        if float(det.min()) < DET_FLOOR:
            continue
        inv = np.linalg.inv(b1)
        c_k = max(c_k, float(np.abs(inv).sum(axis=2).max()))
    if min_det < DET_FLOOR:
        errors.append(("structural",
                       f"B1 is singular on the working box: min |det| = {min_det:.3g}"))
        c_k = math.inf

    ratio = disc.dx / disc.dt
    bound = min(1.0, disc.control_bound / c_k) if c_k > 0 else 1.0
    max_dx = disc.dt * bound
    if ratio > bound:
        errors.append(("config",
                       f"grid ratio dx/dt = {ratio:.6g} exceeds min(1, C/c_K) = {bound:.6g}; "
                       f"max admissible dx at this dt is {max_dx:.6g}"))

    mass = m0_mass_estimate(problem)
    if not math.isclose(mass, 1.0, rel_tol=MASS_RTOL, abs_tol=MASS_RTOL):
        errors.append(("config", f"m0 mass over its support box is {mass:.9f}, not 1"))
    dens_floor = float(np.min(problem.initial.density(_box_lattice(problem.initial.support_box, 16))))
    if dens_floor < 0:
        errors.append(("structural", f"m0 density is negative somewhere ({dens_floor:.3g})"))

    forecast = [_lattice_count(b, disc.dx) for b in boxes]
    return ValidationReport(
        ok=not errors,
        errors=errors,
        c_k_estimate=c_k,
        min_abs_det_b1=min_det,
        ratio=ratio,
        ratio_bound=bound,
        max_admissible_dx=max_dx,
        m0_mass=mass,
        working_box=final_box,
        set_size_forecast=forecast,
    )


def monotonicity_check(coupling: Callable, mu: DiscreteMeasure,
                       nu: DiscreteMeasure) -> float:
    """sum_x (coupling(x, mu) - coupling(x, nu)) (mu - nu)(x).

    Both measures must share the same atom list.  A nonnegative value is
    the discrete Lasry-Lions monotonicity certificate for the pair.
    """
    if mu.atoms.shape != nu.atoms.shape or not np.array_equal(mu.atoms, nu.atoms):
        raise UsageError("monotonicity_check needs measures on a common atom list")
    diff_phi = np.asarray(coupling(mu.atoms, mu), dtype=float) \
        - np.asarray(coupling(mu.atoms, nu), dtype=float)
    return float(np.dot(diff_phi, mu.weights - nu.weights))
