"""Special functions and integration primitives.

Everything here is a pure function of its inputs. The hypergeometric
routine and the integrators are vectorized: integrands receive numpy
arrays and must return arrays of the same leading shape.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.stats import qmc

__all__ = [
    "HypergeomParams",
    "QuadratureSpec",
    "IntegrationResult",
    "hyp2f1_series",
    "gauss_fg",
    "interference_slope",
    "integrate_1d",
    "integrate_hypercube",
]

_SERIES_TOL = 1e-14
_SERIES_CAP = 10_000
# Beyond this the Pfaff-mapped argument is close enough to 1 that the
# plain series needs O(1/(1-z)) terms; switch to the 1-z expansion.
_PFAFF_SWITCH = 0.5


@dataclass(frozen=True)
class HypergeomParams:
    """Path-loss exponent and (nonnegative) argument of the interference functional."""

    alpha: float
    theta: float

    def __post_init__(self):
        _check_alpha(self.alpha)
        if not math.isfinite(self.theta) or self.theta < 0:
            raise ValueError(f"theta must be finite and >= 0, got {self.theta!r}")


@dataclass(frozen=True)
class QuadratureSpec:
    """Tolerances and budgets shared by every integrator in the package.

    ``qmc_points`` is the number of scrambled Sobol points per
    randomization used for cubes of dimension three and up; ``qmc_seed``
    fixes the scrambling so results are reproducible.
    """

    rel_tol: float = 1e-7
    abs_tol: float = 1e-9
    max_evals: int = 200_000
    qmc_points: int = 1 << 16
    qmc_randomizations: int = 8
    qmc_seed: int = 12345

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("rel_tol and abs_tol must be positive")
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")
        n = self.qmc_points
        if n < 4096 or n & (n - 1):
            raise ValueError(f"qmc_points must be a power of two >= 4096, got {n}")
        if self.qmc_randomizations < 2:
            raise ValueError("qmc_randomizations must be >= 2")


class IntegrationResult(NamedTuple):
    value: float
    error: float
    converged: bool = True
    n_evals: int = 0


def _check_alpha(alpha):
    if not math.isfinite(alpha) or alpha <= 2:
        raise ValueError(f"path-loss exponent must be finite and > 2, got {alpha!r}")


def hyp2f1_series(a, b, c, z, tol=_SERIES_TOL, cap=_SERIES_CAP):
    """Sum the Gauss series for 2F1(a, b; c; z) elementwise, |z| < 1.

    Stops once every term is below ``tol`` relative to its partial sum.
    Returns ``(values, converged)``.
    """
    z = np.asarray(z, dtype=float)
    term = np.ones_like(z)
    total = np.ones_like(z)
    for k in range(cap):
        term = term * ((a + k) * (b + k) / ((c + k) * (k + 1))) * z
        total = total + term
        if np.all(np.abs(term) <= tol * np.abs(total)):
            return total, True
    return total, False


def gauss_fg(alpha, theta):
    """F_G(alpha, theta) = 2F1(1, 1 - 2/alpha; 2 - 2/alpha; -theta) for theta >= 0.

    The Pfaff transformation maps -theta to z = theta / (1 + theta) in
    [0, 1), giving ``(1 + theta)^-1 * 2F1(1, 1; 2 - 2/alpha; z)``. That
    series is summed directly for z <= 1/2; above that the 1 - z
    connection formula is used (c - a - b = -2/alpha is never an integer
    for alpha > 2), so both branches converge geometrically with ratio
    at most 1/2.

    Accepts scalars or arrays; returns the same shape (a float for
    scalar input).
    """
    _check_alpha(alpha)
    th = np.asarray(theta, dtype=float)
    if not np.all(np.isfinite(th)) or np.any(th < 0):
        raise ValueError("theta must be finite and >= 0")
    scalar = th.ndim == 0
    th = np.atleast_1d(th)

    d = 2.0 / alpha
    c = 2.0 - d
    z = th / (1.0 + th)
    out = np.empty_like(th)

    near = z <= _PFAFF_SWITCH
    if near.any():
        s, ok = hyp2f1_series(1.0, 1.0, c, z[near])
        if not ok:
            raise ArithmeticError("2F1 series did not converge")
        out[near] = s / (1.0 + th[near])
    far = ~near
    if far.any():
        w = 1.0 / (1.0 + th[far])  # 1 - z
        g = math.gamma
        s1, ok1 = hyp2f1_series(1.0, 1.0, 1.0 + d, w)
        s2, ok2 = hyp2f1_series(c - 1.0, c - 1.0, 1.0 - d, w)
        if not (ok1 and ok2):
            raise ArithmeticError("2F1 connection series did not converge")
        t1 = g(c) * g(-d) / g(c - 1.0) ** 2 * s1
        t2 = w ** (-d) * g(c) * g(d) * s2
        out[far] = (t1 + t2) * w
    return float(out[0]) if scalar else out


def interference_slope(alpha, theta):
    """c(theta) = 1 + 2 theta F_G(alpha, theta) / (alpha - 2).

    The exponent A(theta, u) of the Laplace functionals is ``u * c(theta)``.
    """
    th = np.asarray(theta, dtype=float)
    out = 1.0 + 2.0 * th * gauss_fg(alpha, th) / (alpha - 2.0)
    return float(out) if out.ndim == 0 else out


# --- 1-D adaptive Gauss-Kronrod (7/15) -------------------------------------

# QUADPACK qk15 abscissae and weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_KR_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KR_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
_G_WEIGHTS = np.zeros(15)
_G_WEIGHTS[[1, 3, 5, 7, 9, 11, 13]] = np.concatenate([_WG[:-1], _WG[::-1]])


def _gk15(f, lo, hi):
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[:, None] + half[:, None] * _KR_NODES[None, :]
    fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(fx)):
        raise FloatingPointError("integrand returned non-finite values")
    kron = half * (fx @ _KR_WEIGHTS)
    gauss = half * (fx @ _G_WEIGHTS)
    return kron, np.abs(kron - gauss)


def integrate_1d(f: Callable[[np.ndarray], np.ndarray], a: float, b: float,
                 spec: QuadratureSpec = QuadratureSpec()) -> IntegrationResult:
    """Globally adaptive 15-point Gauss-Kronrod quadrature of ``f`` over [a, b].

    ``b`` may be ``np.inf``; the half-line is then mapped onto [0, 1) with
    ``x = a + s / (1 - s)``, ``dx = ds / (1 - s)^2``. Kronrod nodes are
    interior, so the endpoint ``s = 1`` is never evaluated.

    Every interval whose error exceeds its length-proportional share of
    ``max(abs_tol, rel_tol * |I|)`` is bisected; all new intervals are
    evaluated in a single vectorized call. When ``max_evals`` runs out the
    best estimate is returned with ``converged=False``.
    """
    if not (math.isfinite(a) and b > a):
        raise ValueError(f"bad interval [{a}, {b}]")
    if math.isinf(b):
        def g(s):
            return f(a + s / (1.0 - s)) / (1.0 - s) ** 2
        lo_end, hi_end = 0.0, 1.0
    else:
        g = f
        lo_end, hi_end = float(a), float(b)
    width = hi_end - lo_end

    lo = np.array([lo_end])
    hi = np.array([hi_end])
    val, err = _gk15(g, lo, hi)
    n_evals = 15
    done_val = 0.0
    done_err = 0.0
    while True:
        total = done_val + val.sum()
        total_err = done_err + err.sum()
        target = max(spec.abs_tol, spec.rel_tol * abs(total))
        if total_err <= target:
            return IntegrationResult(float(total), float(total_err), True, n_evals)
        split = err > target * (hi - lo) / width
        if not split.any():
            # local criterion met everywhere but the sum is not; refine the worst
            split = err >= err.max()
        if n_evals + 30 * int(split.sum()) > spec.max_evals:
            return IntegrationResult(float(total), float(total_err), False, n_evals)
        keep = ~split
        done_val += val[keep].sum()
        done_err += err[keep].sum()
        lo_s, hi_s = lo[split], hi[split]
        mid = 0.5 * (lo_s + hi_s)
        lo = np.concatenate([lo_s, mid])
        hi = np.concatenate([mid, hi_s])
        val, err = _gk15(g, lo, hi)
        n_evals += 15 * lo.size


# --- hypercube --------------------------------------------------------------

def _graded_panels(levels: int = 24) -> np.ndarray:
    # Geometric grading toward 0, where the integrands behave like t^(alpha/2).
    inner = 2.0 ** -np.arange(levels, 0, -1, dtype=float)
    return np.concatenate([[0.0], inner, [1.0]])


def _composite_gl(order: int, panels: np.ndarray):
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = panels[:-1], panels[1:]
    half = 0.5 * (hi - lo)
    nodes = (0.5 * (hi + lo))[:, None] + half[:, None] * x[None, :]
    weights = half[:, None] * w[None, :]
    return nodes.ravel(), weights.ravel()


def _tensor_rule(f, d, order, panels):
    x, w = _composite_gl(order, panels)
    if d == 1:
        pts = x[:, None]
        wts = w
    else:
        g = np.meshgrid(*([x] * d), indexing="ij")
        pts = np.stack([gi.ravel() for gi in g], axis=1)
        wg = np.meshgrid(*([w] * d), indexing="ij")
        wts = np.prod(np.stack([wi.ravel() for wi in wg], axis=1), axis=1)
    fx = np.asarray(f(pts), dtype=float)
    if not np.all(np.isfinite(fx)):
        raise FloatingPointError("integrand returned non-finite values")
    return float(np.dot(wts, fx)), pts.shape[0]


def integrate_hypercube(f: Callable[[np.ndarray], np.ndarray], d: int,
                        spec: QuadratureSpec = QuadratureSpec()) -> IntegrationResult:
    """Integrate ``f`` over the unit cube [0, 1]^d.

    ``f`` receives an ``(n, d)`` array of points and returns ``n`` values.

    d <= 2: tensor Gauss-Legendre on panels graded geometrically toward
    the origin, run at two orders; the difference is the error estimate.

    d >= 3: ``qmc_randomizations`` independently scrambled Sobol point sets
    of ``qmc_points`` each; the value is the mean of the replicate means and
    the error is their empirical standard error. Never flagged unconverged,
    since there is nothing to refine.
    """
    if d < 1:
        raise ValueError("dimension must be >= 1")
    if d <= 2:
        panels = _graded_panels()
        coarse, n1 = _tensor_rule(f, d, 10, panels)
        fine, n2 = _tensor_rule(f, d, 16, panels)
        err = abs(fine - coarse)
        target = max(spec.abs_tol, spec.rel_tol * abs(fine))
        return IntegrationResult(fine, err, err <= target, n1 + n2)

    seeds = np.random.SeedSequence(spec.qmc_seed).spawn(spec.qmc_randomizations)
    means = np.empty(spec.qmc_randomizations)
    m = int(round(math.log2(spec.qmc_points)))
    for i, ss in enumerate(seeds):
        # 52 bits: the default 30-bit points carry an O(2^-31) bias per coordinate
        sobol = qmc.Sobol(d, scramble=True, bits=52, seed=np.random.default_rng(ss))
        pts = sobol.random_base2(m)
        fx = np.asarray(f(pts), dtype=float)
        if not np.all(np.isfinite(fx)):
            raise FloatingPointError("integrand returned non-finite values")
        means[i] = fx.mean()
    se = float(means.std(ddof=1) / math.sqrt(means.size))
    return IntegrationResult(float(means.mean()), se, True, means.size * spec.qmc_points)
