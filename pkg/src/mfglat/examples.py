"""Benchmark problems and the Gaussian coupling they share.

Both examples couple agents through a mollified density (rho_sigma * mu)
evaluated along one coordinate axis; example1 is scalar with a stiff
attracting drift, example2 is a velocity/position chain (integrator) where
only the position enters the costs.  `custom1d` builds scalar problems from
expression strings for quick CLI experiments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad
from scipy.signal import fftconvolve

from .errors import ConfigurationError, UsageError
from .problem import CostSpec, DiscreteMeasure, InitialMeasure, ProblemSpec, SplitDynamics

_DIRECT_LIMIT = 50_000_000   # max evaluation-matrix size before grouping
_ONLATTICE_TOL = 1e-6


@dataclass(frozen=True)
class GaussianKernel:
    """rho_sigma(z) = exp(-z^2 / (2 sigma^2)) / (sqrt(2 pi) sigma)."""

    sigma: float

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigurationError("sigma must be positive")

    def __call__(self, z):
        s = self.sigma
        return np.exp(-np.square(z) / (2 * s * s)) / (math.sqrt(2 * math.pi) * s)


def _grouped_conv(kernel, eval_pts, eval_inverse, atom_pts, atom_weights):
    if eval_pts.size * atom_pts.size > _DIRECT_LIMIT:
        raise UsageError("convolution grid too large even after grouping")
    mat = kernel(eval_pts[:, None] - atom_pts[None, :])
    vals = np.einsum("ea,a->e", mat, atom_weights)
    return vals[eval_inverse]


def convolve_with_measure(kernel, mu: DiscreteMeasure, x):
    """(kernel * mu)(x) = sum_y kernel(x - y) mu(y) for a measure on R.

    Point-mass convolution: no cell-width factor.  When both the atoms and
    the evaluation points sit on a common lattice (mu carries lattice
    hints), atoms are grouped by integer coordinate and the kernel matrix
    is evaluated on the two distinct ranges only; values are identical to
    the direct sum up to summation order.
    """
    atoms = np.asarray(mu.atoms, dtype=float).reshape(-1)
    x_arr = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.isscalar(x) or np.ndim(x) == 0

    out = None
    if mu.lattice_idx is not None and mu.dx:
        ai = np.asarray(mu.lattice_idx, dtype=np.int64).reshape(-1)
        u = x_arr / mu.dx
        xi = np.rint(u).astype(np.int64)
        if np.max(np.abs(u - xi), initial=0.0) <= _ONLATTICE_TOL:
            amin = ai.min()
            aw = np.bincount(ai - amin, weights=mu.weights)
            emin = xi.min()
            ne = int(xi.max() - emin + 1)
            na = aw.size
            if ne * na <= _DIRECT_LIMIT:
                # every difference x_e - y_a is (emin - amin + i - j) dx:
                # one kernel vector over the offset range, then a convolution
                offs = (emin - amin + np.arange(1 - na, ne)) * mu.dx
                kv = kernel(offs)
                if ne * na <= 4096:
                    conv = np.convolve(kv, aw, mode="valid")
                else:
                    conv = fftconvolve(kv, aw, mode="valid")
                out = conv[xi - emin]
    if out is None:
        if x_arr.size * atoms.size <= _DIRECT_LIMIT:
            mat = kernel(x_arr[:, None] - atoms[None, :])
            out = np.einsum("ea,a->e", mat, mu.weights)
        else:
            ua, inv_a = np.unique(atoms, return_inverse=True)
            aw = np.bincount(inv_a, weights=mu.weights)
            ux, inv_x = np.unique(x_arr, return_inverse=True)
            out = _grouped_conv(kernel, ux, inv_x, ua, aw)
    return float(out[0]) if scalar else out


def _project_measure(mu: DiscreteMeasure, axis: int) -> DiscreteMeasure:
    atoms = mu.atoms[:, axis] if mu.atoms.ndim == 2 else mu.atoms
    li = mu.lattice_idx
    if li is not None and np.ndim(li) == 2:
        li = li[:, axis]
    return DiscreteMeasure(atoms=atoms, weights=mu.weights,
                           lattice_idx=li, dx=mu.dx)


def gaussian_coupling(theta: float, sigma: float, axis: int):
    """f(t, x, mu) = theta (rho_sigma * proj_axis mu)(x[axis])."""
    kern = GaussianKernel(sigma)

    def f(t, x, mu):
        x = np.asarray(x, dtype=float)
        pts = x[..., axis] if x.ndim == 2 else x
        if theta == 0.0:
            return np.zeros(np.shape(pts))
        return theta * convolve_with_measure(kern, _project_measure(mu, axis), pts)

    return f


def _quadratic_control_cost(a):
    a = np.asarray(a, dtype=float)
    return 0.5 * np.sum(np.square(a), axis=-1)


def example1(theta1: float = 1.0, theta2: float = 0.0,
             sigma: float = 0.03) -> ProblemSpec:
    """Scalar state, drift -2x - sin(x), unit control coefficient.

    ell = |a|^2/2 + theta1 (rho_sigma * mu)(x), g = theta2 (rho_sigma * mu)(x),
    m0 proportional to exp(-x^2/0.04) truncated to [-1, 1].
    """
    dyn = SplitDynamics(
        dim_d=1, dim_r=1,
        a1=lambda t, x: -2.0 * x[:, :1] - np.sin(x[:, :1]),
        b1=lambda t, x: np.ones((x.shape[0], 1, 1)),
    )
    z_norm, _ = quad(lambda s: math.exp(-s * s / 0.04), -1.0, 1.0,
                     epsabs=1e-12, epsrel=1e-12)
    f = gaussian_coupling(theta1, sigma, axis=0)
    g = gaussian_coupling(theta2, sigma, axis=0)

    def density(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))[:, 0]
        return np.where(np.abs(x) <= 1.0, np.exp(-np.square(x) / 0.04) / z_norm, 0.0)

    costs = CostSpec(
        ell0=lambda t, a, x: _quadratic_control_cost(a),
        coupling_f=f,
        terminal_g=lambda x, mu: g(0.0, x, mu),
    )
    initial = InitialMeasure(density=density, support_box=np.array([[-1.0, 1.0]]))
    return ProblemSpec(dynamics=dyn, costs=costs, initial=initial,
                       horizon=1.0, label="example1")


def example2(theta1: float = 1.0, theta2: float = 1.0,
             sigma: float = 0.03) -> ProblemSpec:
    """Velocity/position chain: x1 is velocity (controlled), x2 integrates it.

    ell = |a|^2/2 + (x2 - 0.3)^2 + theta1 (rho_sigma * mu_2)(x2),
    g = theta2 (rho_sigma * mu_2)(x2) with mu_2 the position marginal;
    m0 = uniform on [-0.02, 0.02] x truncated Gaussian exp(-y^2/0.001).
    """
    dyn = SplitDynamics(
        dim_d=2, dim_r=1,
        a1=lambda t, x: np.zeros((x.shape[0], 1)),
        b1=lambda t, x: np.ones((x.shape[0], 1, 1)),
        a2=lambda t, x: x[:, :1],
        b2=lambda t, x: np.zeros((x.shape[0], 1, 1)),
    )
    z_norm, _ = quad(lambda s: math.exp(-s * s / 0.001), -1.0, 1.0,
                     epsabs=1e-13, epsrel=1e-12)
    f = gaussian_coupling(theta1, sigma, axis=1)
    g = gaussian_coupling(theta2, sigma, axis=1)

    def ell0(t, a, x):
        x = np.asarray(x, dtype=float)
        return _quadratic_control_cost(a) + np.square(x[..., 1] - 0.3)

    def density(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        vel = np.where(np.abs(x[:, 0]) <= 0.02, 25.0, 0.0)
        pos = np.where(np.abs(x[:, 1]) <= 1.0,
                       np.exp(-np.square(x[:, 1]) / 0.001) / z_norm, 0.0)
        return vel * pos

    costs = CostSpec(
        ell0=ell0,
        coupling_f=f,
        terminal_g=lambda x, mu: g(0.0, x, mu),
    )
    initial = InitialMeasure(density=density,
                             support_box=np.array([[-0.02, 0.02], [-1.0, 1.0]]))
    return ProblemSpec(dynamics=dyn, costs=costs, initial=initial,
                       horizon=1.0, label="example2")


_EXPR_NAMES = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp,
    "log": np.log, "sqrt": np.sqrt, "abs": np.abs, "tanh": np.tanh,
    "pi": math.pi, "e": math.e, "minimum": np.minimum, "maximum": np.maximum,
    "where": np.where, "sign": np.sign,
}


def _compile_expr(expr: str, variables: tuple):
    code = compile(expr, f"<expr {expr!r}>", "eval")

    def fn(**kw):
        ns = dict(_EXPR_NAMES)
        ns.update({v: kw[v] for v in variables})
        return eval(code, {"__builtins__": {}}, ns)

    return fn


def custom1d(drift: str = "-x", b1: str = "1", ell0: str = "0.5*a**2",
             terminal: str = "0", density: str = "1",
             support=(-1.0, 1.0), horizon: float = 1.0,
             theta1: float = 0.0, theta2: float = 0.0,
             sigma: float = 0.03) -> ProblemSpec:
    """Scalar problem from expression strings (variables: x, t, a).

    The density expression is normalized automatically over the support
    interval; theta1/theta2 add the same Gaussian couplings the benchmark
    examples use.  Expressions are evaluated with numpy semantics in a
    namespace of math functions only.
    """
    drift_fn = _compile_expr(drift, ("t", "x"))
    b1_fn = _compile_expr(b1, ("t", "x"))
    ell_fn = _compile_expr(ell0, ("t", "a", "x"))
    term_fn = _compile_expr(terminal, ("x",))
    dens_fn = _compile_expr(density, ("x",))
    lo, hi = float(support[0]), float(support[1])
    z_norm, _ = quad(lambda s: float(np.asarray(dens_fn(x=s), dtype=float)),
                     lo, hi, epsabs=1e-12, epsrel=1e-12)
    if not z_norm > 0:
        raise ConfigurationError("density integrates to a non-positive value")

    dyn = SplitDynamics(
        dim_d=1, dim_r=1,
        a1=lambda t, x: np.broadcast_to(
            np.asarray(drift_fn(t=t, x=x[:, 0]), dtype=float), (x.shape[0],)
        ).reshape(-1, 1),
        b1=lambda t, x: np.broadcast_to(
            np.asarray(b1_fn(t=t, x=x[:, 0]), dtype=float), (x.shape[0],)
        ).reshape(-1, 1, 1),
    )
    f = gaussian_coupling(theta1, sigma, axis=0)
    g = gaussian_coupling(theta2, sigma, axis=0)

    def cost(t, a, x):
        a = np.asarray(a, dtype=float)[..., 0]
        xx = np.asarray(x, dtype=float)[..., 0]
        return np.asarray(ell_fn(t=t, a=a, x=xx), dtype=float)

    def terminal_total(x, mu):
        xx = np.atleast_2d(np.asarray(x, dtype=float))[:, 0]
        base = np.broadcast_to(np.asarray(term_fn(x=xx), dtype=float), xx.shape)
        return base + g(0.0, np.atleast_2d(x), mu)

    def dens(x):
        xx = np.atleast_2d(np.asarray(x, dtype=float))[:, 0]
        raw = np.broadcast_to(np.asarray(dens_fn(x=xx), dtype=float), xx.shape)
        return np.where((xx >= lo) & (xx <= hi), raw / z_norm, 0.0)

    costs = CostSpec(ell0=cost, coupling_f=f, terminal_g=terminal_total)
    initial = InitialMeasure(density=dens, support_box=np.array([[lo, hi]]))
    return ProblemSpec(dynamics=dyn, costs=costs, initial=initial,
                       horizon=float(horizon), label="custom1d")


REGISTRY = {"example1": example1, "example2": example2, "custom1d": custom1d}


def build_problem(spec: dict) -> ProblemSpec:
    """Instantiate a registry problem from a config mapping."""
    if "name" not in spec:
        raise ConfigurationError("problem section needs a 'name'")
    name = spec["name"]
    if name not in REGISTRY:
        raise ConfigurationError(
            f"unknown problem {name!r}; known: {sorted(REGISTRY)}")
    params = {k: v for k, v in spec.items() if k != "name"}
    try:
        return REGISTRY[name](**params)
    except TypeError as exc:
        raise ConfigurationError(f"bad parameters for {name}: {exc}") from None
