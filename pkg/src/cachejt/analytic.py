"""Closed-form approximation of the successful transmission probability.

Notation follows the code, not the physics: ``c(theta)`` is
:func:`~cachejt.numerics.interference_slope`, and every Laplace exponent
has the form ``u * c(theta)``. Because the exponent is linear in ``u``,
each inner integral over ``u`` collapses exactly::

    int_0^inf exp(-u c) u^(M-1) / Gamma(M) du = c^(-M)

which removes one dimension (and the half-line) from every term. The
unreduced integrals live in ``tests/oracles.py`` as cross-checks.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.special import comb

from .model import ContentCatalog, NetworkParams, PlacementVector, StpResult
from .numerics import (
    IntegrationResult,
    QuadratureSpec,
    integrate_1d,
    integrate_hypercube,
    interference_slope,
)

__all__ = [
    "CoopTermTable",
    "QnInterpolant",
    "binomial_weights",
    "q_n0",
    "r_m1",
    "r_m2",
    "coop_terms",
    "q_n_a",
    "build_interpolant",
    "stp_a",
    "INTERPOLATE_ABOVE",
]

# Catalogs larger than this go through the shared interpolant.
INTERPOLATE_ABOVE = 32
DEFAULT_GRID = 201


def binomial_weights(t: float, m_coop: int) -> np.ndarray:
    """Pr[C_n = m] for m = 0..M when each of the M nearest BSs caches the file w.p. ``t``."""
    m = np.arange(m_coop + 1)
    return comb(m_coop, m) * t ** m * (1.0 - t) ** (m_coop - m)


def _alternating_sum(theta_unit, m, m_coop, alpha):
    """sum_{j=1}^m (-1)^(j+1) C(m, j) c(j * theta_unit)^(-M), elementwise.

    Terms are accumulated in extended precision; the binomial
    coefficients grow with m and the signs alternate.
    """
    acc = np.zeros(np.shape(theta_unit), dtype=np.longdouble)
    for j in range(1, m + 1):
        term = math.comb(m, j) * interference_slope(alpha, j * theta_unit) ** (-m_coop)
        acc += (1 if j % 2 else -1) * term.astype(np.longdouble)
    return acc.astype(float)


def _power_sum(t, alpha):
    # sum_i t_i^(-alpha/2); t_i == 0 gives inf, so the interference argument -> 0.
    with np.errstate(divide="ignore"):
        return np.sum(t ** (-alpha / 2.0), axis=1)


def r_m1(m: int, params: NetworkParams, spec: QuadratureSpec = QuadratureSpec()) -> IntegrationResult:
    """Serving set of size m that excludes the M-th nearest BS of the cluster.

    Zero when m == M (that configuration cannot occur). Otherwise an
    integral over the m-cube of squared distance ratios t_i = r_i^2 / r_M^2.
    """
    big_m, tau, alpha = params.m_coop, params.tau, params.alpha
    if not 1 <= m <= big_m:
        raise ValueError(f"need 1 <= m <= M, got m={m}, M={big_m}")
    if m == big_m:
        return IntegrationResult(0.0, 0.0, True, 0)

    def f(t):
        return _alternating_sum(tau / _power_sum(t, alpha), m, big_m, alpha)

    return integrate_hypercube(f, m, spec)


def r_m2(m: int, params: NetworkParams, spec: QuadratureSpec = QuadratureSpec()) -> IntegrationResult:
    """Serving set of size m that includes the M-th nearest BS (t = 1 for that one)."""
    big_m, tau, alpha = params.m_coop, params.tau, params.alpha
    if not 1 <= m <= big_m:
        raise ValueError(f"need 1 <= m <= M, got m={m}, M={big_m}")
    if m == 1:
        return IntegrationResult(interference_slope(alpha, tau) ** (-big_m), 0.0, True, 1)

    def f(t):
        return _alternating_sum(tau / (1.0 + _power_sum(t, alpha)), m, big_m, alpha)

    return integrate_hypercube(f, m - 1, spec)


@dataclass(frozen=True)
class CoopTermTable:
    """Conditional success probabilities given C_n = m, m = 1..M.

    Arrays are indexed 0..M-1 for m = 1..M.
    """

    m_coop: int
    tau: float
    alpha: float
    q_c: np.ndarray
    r1: np.ndarray
    r2: np.ndarray
    error_estimates: np.ndarray
    converged: bool = True

    def qc(self, m: int) -> float:
        """q^a_{c,m} for 1-based m."""
        return float(self.q_c[m - 1])


@functools.lru_cache(maxsize=256)
def _coop_terms_cached(m_coop, tau, alpha, spec):
    params = NetworkParams(alpha=alpha, m_coop=m_coop, tau=tau)
    r1, r2, err, ok = [], [], [], True
    for m in range(1, m_coop + 1):
        a = r_m1(m, params, spec)
        b = r_m2(m, params, spec)
        r1.append(a.value)
        r2.append(b.value)
        w = m / m_coop
        err.append((1 - w) * a.error + w * b.error)
        ok = ok and a.converged and b.converged
    r1 = np.array(r1)
    r2 = np.array(r2)
    w = np.arange(1, m_coop + 1) / m_coop
    q_c = (1.0 - w) * r1 + w * r2
    arrays = [r1, r2, q_c, np.array(err)]
    for arr in arrays:
        arr.setflags(write=False)
    return CoopTermTable(m_coop, tau, alpha, q_c, r1, r2, arrays[3], ok)


def coop_terms(params: NetworkParams, spec: QuadratureSpec = QuadratureSpec()) -> CoopTermTable:
    """Tabulate q^a_{c,m} = (1 - m/M) R_{m,1} + (m/M) R_{m,2} for m = 1..M.

    Depends only on (M, tau, alpha); results are memoized on those values.
    """
    return _coop_terms_cached(params.m_coop, float(params.tau), float(params.alpha), spec)


def q_n0(t_n: float, params: NetworkParams, spec: QuadratureSpec = QuadratureSpec()) -> IntegrationResult:
    """Success probability when none of the M nearest BSs caches the file.

    With v = u_M / u_0 the u_0 integral is a gamma integral, leaving::

        q = int_0^1 M v^(M-1) T / (T * C(v))^(M+1) dv,
        C(v) = c(tau) + v (1/T - 1) c(tau v^(-alpha/2)).
    """
    if not (0.0 < t_n <= 1.0):
        raise ValueError(f"q_n0 needs 0 < t_n <= 1, got {t_n}")
    big_m, tau, alpha = params.m_coop, params.tau, params.alpha
    c_tau = interference_slope(alpha, tau)

    def f(v):
        tc = t_n * c_tau + v * (1.0 - t_n) * interference_slope(alpha, tau * v ** (-alpha / 2.0))
        return big_m * v ** (big_m - 1) * t_n / tc ** (big_m + 1)

    return integrate_1d(f, 0.0, 1.0, spec)


def q_n_a(t_n: float, table: CoopTermTable, params: NetworkParams,
          spec: QuadratureSpec = QuadratureSpec(), *, with_error: bool = False):
    """Conditional success probability of a file cached with probability ``t_n``.

    Mixes the no-cooperation branch and the tabulated cooperative terms
    with the binomial law of C_n. A file that no BS caches (``t_n == 0``)
    cannot be delivered, so the result is exactly 0 there.
    """
    if not (0.0 <= t_n <= 1.0):
        raise ValueError(f"caching probability must lie in [0, 1], got {t_n}")
    if table.m_coop != params.m_coop:
        raise ValueError("coop table was built for a different M")
    if t_n == 0.0:
        return (0.0, 0.0) if with_error else 0.0
    w = binomial_weights(t_n, params.m_coop)
    value = float(np.dot(w[1:], table.q_c))
    err = float(np.dot(w[1:], table.error_estimates))
    if w[0] > 0.0:
        r = q_n0(t_n, params, spec)
        value += w[0] * r.value
        err += w[0] * r.error
    value = min(max(value, 0.0), 1.0)
    return (value, err) if with_error else value


@dataclass(frozen=True)
class QnInterpolant:
    """q^a_n as a function of T alone, tabulated on ``grid`` with monotone cubic interpolation."""

    grid: np.ndarray
    values: np.ndarray
    max_check_error: float

    def __post_init__(self):
        object.__setattr__(self, "_pchip", PchipInterpolator(self.grid, self.values))

    def __call__(self, t):
        out = np.clip(self._pchip(np.asarray(t, dtype=float)), 0.0, 1.0)
        return float(out) if out.ndim == 0 else out

    def derivative(self, t):
        return self._pchip.derivative()(np.asarray(t, dtype=float))


def _q_profile(grid, table, params, spec):
    return np.array([q_n_a(float(t), table, params, spec) for t in grid])


@functools.lru_cache(maxsize=64)
def _interpolant_cached(m_coop, tau, alpha, spec, grid_points):
    params = NetworkParams(alpha=alpha, m_coop=m_coop, tau=tau)
    table = coop_terms(params, spec)
    grid = np.linspace(0.0, 1.0, grid_points)
    values = _q_profile(grid, table, params, spec)
    # spot-check interpolation at a handful of midpoints, densest near T = 0
    mids = 0.5 * (grid[:-1] + grid[1:])
    probe = mids[np.unique(np.geomspace(1, mids.size, 12).astype(int) - 1)]
    exact = _q_profile(probe, table, params, spec)
    interp = PchipInterpolator(grid, values)(probe)
    for a in (grid, values):
        a.setflags(write=False)
    return QnInterpolant(grid, values, float(np.max(np.abs(interp - exact))))


def build_interpolant(params: NetworkParams, spec: QuadratureSpec = QuadratureSpec(),
                      grid_points: int = DEFAULT_GRID) -> QnInterpolant:
    """Shared q^a_n(T) profile for (M, tau, alpha); memoized."""
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    return _interpolant_cached(params.m_coop, float(params.tau), float(params.alpha), spec, int(grid_points))


def stp_a(placement: PlacementVector, catalog: ContentCatalog, params: NetworkParams,
          spec: QuadratureSpec = QuadratureSpec(), *, interpolate: bool | None = None) -> StpResult:
    """Popularity-weighted analytic STP of ``placement``.

    ``interpolate=None`` picks the shared interpolant for catalogs larger
    than :data:`INTERPOLATE_ABOVE` and exact per-file evaluation otherwise.
    """
    placement.require_valid()
    if placement.n_files != catalog.n_files:
        raise ValueError("placement and catalog sizes differ")
    a = catalog.popularity
    t = placement.t
    if interpolate is None:
        interpolate = catalog.n_files > INTERPOLATE_ABOVE

    if interpolate:
        interp = build_interpolant(params, spec)
        per_file = interp(t)
        per_file[t == 0.0] = 0.0
        per_err = np.full(t.size, interp.max_check_error)
        per_err[t == 0.0] = 0.0
        converged = coop_terms(params, spec).converged
    else:
        table = coop_terms(params, spec)
        per_file = np.empty(t.size)
        per_err = np.empty(t.size)
        memo = {}
        for i, ti in enumerate(t):
            if ti not in memo:
                memo[ti] = q_n_a(float(ti), table, params, spec, with_error=True)
            per_file[i], per_err[i] = memo[ti]
        converged = table.converged

    total = float(np.sum(a.astype(np.longdouble) * per_file.astype(np.longdouble)))
    return StpResult(
        aggregate=min(max(total, 0.0), 1.0),
        per_file=per_file,
        engine="analytic",
        error=float(np.dot(a, per_err)),
        per_file_error=per_err,
        converged=converged,
    )
