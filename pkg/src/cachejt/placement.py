"""Optimal and baseline content placement.

The analytic objective is separable, ``sum_n a_n f(T_n)``, with one
profile ``f`` shared by every file. The primary solver exploits this: for
a multiplier ``nu`` each coordinate independently maximizes
``a_n f(T) - nu T`` on [0, 1], and ``nu`` is bisected until the cache
budget is met. A projected-gradient ascent with restarts runs as a
fallback and as a polish, and the better objective wins.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .analytic import CoopTermTable, QnInterpolant, build_interpolant, coop_terms, stp_a
from .model import ContentCatalog, NetworkParams, PlacementVector, SUM_TOL
from .numerics import QuadratureSpec

__all__ = [
    "OptimizerConfig",
    "OptimizationReport",
    "project_capped_simplex",
    "baseline_mpc",
    "baseline_udc",
    "baseline_iidc",
    "iidc_marginals_exact",
    "optimize_placement",
    "BASELINES",
]

log = logging.getLogger(__name__)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class OptimizerConfig:
    grid_points: int = 201
    dual_tol: float = 1e-8
    max_iter: int = 500
    multistart: int = 4
    seed: int = 0
    scan_points: int = 2001

    def __post_init__(self):
        if self.grid_points < 21:
            raise ValueError("grid_points must be >= 21")
        if not self.dual_tol > 0:
            raise ValueError("dual_tol must be > 0")
        if self.max_iter < 1 or self.multistart < 0:
            raise ValueError("bad iteration settings")


@dataclass(frozen=True)
class OptimizationReport:
    t_star: PlacementVector
    objective: float
    method: str
    kkt_residual: float
    iterations: int
    converged: bool = True
    candidates: Optional[dict] = None


def project_capped_simplex(v, k: float, tol: float = 1e-10) -> np.ndarray:
    """Euclidean projection of ``v`` onto {x : 0 <= x <= 1, sum(x) = k}.

    The solution is ``clip(v - mu, 0, 1)``; ``mu`` is bracketed and bisected,
    then snapped exactly using the free coordinates of the final bracket.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("v must be 1-D")
    if not (0.0 <= k <= v.size):
        raise ValueError(f"k={k} outside [0, {v.size}]")

    def total(mu):
        return np.clip(v - mu, 0.0, 1.0).sum()

    lo, hi = float(v.min()) - 1.0, float(v.max())
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        s = total(mid)
        if abs(s - k) <= tol * 1e-2:
            lo = hi = mid
            break
        if s > k:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * max(1.0, abs(mid)):
            break
    mu = 0.5 * (lo + hi)
    x = np.clip(v - mu, 0.0, 1.0)
    free = (v - mu > 0.0) & (v - mu < 1.0)
    if free.any():
        mu2 = mu + (x.sum() - k) / free.sum()
        x2 = np.clip(v - mu2, 0.0, 1.0)
        if abs(x2.sum() - k) <= abs(x.sum() - k):
            x = x2
    if abs(x.sum() - k) > tol:
        raise ArithmeticError(f"projection missed the budget by {x.sum() - k:.3g}")
    return x


def _require_feasible_k(n_files: int, k: int) -> None:
    if int(k) != k or k < 1:
        raise ValueError(f"cache size must be a positive integer, got {k}")
    if k >= n_files:
        raise ValueError(f"infeasible: need K < N, got K={k}, N={n_files}")


def baseline_mpc(catalog: ContentCatalog, k: int) -> PlacementVector:
    """Most popular caching: every BS stores the K most popular files."""
    _require_feasible_k(catalog.n_files, k)
    t = np.zeros(catalog.n_files)
    t[np.argsort(-catalog.popularity, kind="stable")[:k]] = 1.0
    return PlacementVector(t, k)


def baseline_udc(catalog: ContentCatalog, k: int) -> PlacementVector:
    """Uniform caching: T_n = K/N."""
    _require_feasible_k(catalog.n_files, k)
    return PlacementVector(np.full(catalog.n_files, k / catalog.n_files), k)


def _iidc_marginals_mc(popularity: np.ndarray, k: int, draws: int, seed: int, batch: int = 50_000) -> np.ndarray:
    # Exponential race: the K smallest E_i / a_i are a popularity-weighted
    # draw without replacement, in order.
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    n = popularity.size
    counts = np.zeros(n, dtype=np.int64)
    with np.errstate(divide="ignore"):
        inv = 1.0 / popularity
    done = 0
    while done < draws:
        b = min(batch, draws - done)
        keys = rng.standard_exponential((b, n)) * inv
        picked = np.argpartition(keys, k - 1, axis=1)[:, :k]
        counts += np.bincount(picked.ravel(), minlength=n)
        done += b
    return counts / draws


def iidc_marginals_exact(popularity, k: int) -> np.ndarray:
    """Inclusion probabilities of weighted sampling without replacement, by enumeration.

    Exponential in N; meant for small catalogs and tests.
    """
    from itertools import permutations

    a = np.asarray(popularity, dtype=float)
    n = a.size
    out = np.zeros(n)
    for seq in permutations(range(n), k):
        p, left = 1.0, 1.0
        for i in seq:
            p *= a[i] / left
            left -= a[i]
        out[list(seq)] += p
    return out


def baseline_iidc(catalog: ContentCatalog, k: int, draws: int = 1_000_000, seed: int = 0) -> PlacementVector:
    """I.i.d. popularity-weighted caching.

    Each cache is filled by drawing K distinct files, each draw proportional
    to popularity among the files not yet chosen. Marginals are estimated
    from ``draws`` simulated caches and projected back onto the feasible set.
    """
    _require_feasible_k(catalog.n_files, k)
    raw = _iidc_marginals_mc(np.asarray(catalog.popularity), k, draws, seed)
    return PlacementVector(project_capped_simplex(raw, k), k)


BASELINES: dict[str, Callable[..., PlacementVector]] = {
    "mpc": baseline_mpc,
    "iidc": baseline_iidc,
    "udc": baseline_udc,
}


# --- optimizer ----------------------------------------------------------------


class _Profile:
    """f(T) and a finite-difference slope, both from the shared interpolant."""

    def __init__(self, interp: QnInterpolant, scan_points: int):
        self.interp = interp
        self.scan = np.linspace(0.0, 1.0, scan_points)
        self.scan_vals = interp(self.scan)

    def __call__(self, t):
        return self.interp(t)

    def slope(self, t, h=1e-6):
        t = np.asarray(t, dtype=float)
        lo = np.clip(t - h, 0.0, 1.0)
        hi = np.clip(t + h, 0.0, 1.0)
        return (self.interp(hi) - self.interp(lo)) / (hi - lo)


def _coordinate_argmax(profile: _Profile, a: np.ndarray, nu: float) -> np.ndarray:
    """argmax_{T in [0,1]} a_n f(T) - nu T for every n: grid scan then golden section."""
    grid = profile.scan
    vals = a[:, None] * profile.scan_vals[None, :] - nu * grid[None, :]
    best = np.argmax(vals, axis=1)  # first maximizer -> smallest T on ties
    step = grid[1] - grid[0]
    lo = np.clip(grid[best] - step, 0.0, 1.0)
    hi = np.clip(grid[best] + step, 0.0, 1.0)

    def g(t):
        return a * profile(t) - nu * t

    x1 = hi - _GOLDEN * (hi - lo)
    x2 = lo + _GOLDEN * (hi - lo)
    g1, g2 = g(x1), g(x2)
    for _ in range(40):
        left = g1 >= g2
        hi = np.where(left, x2, hi)
        lo = np.where(left, lo, x1)
        x2n = np.where(left, x1, lo + _GOLDEN * (hi - lo))
        x1n = np.where(left, hi - _GOLDEN * (hi - lo), x2)
        x1, x2 = x1n, x2n
        g1, g2 = g(x1), g(x2)
    refined = 0.5 * (lo + hi)
    # keep the grid point if refinement did not help (e.g. endpoint optima)
    use_grid = g(grid[best]) >= g(refined)
    return np.where(use_grid, grid[best], refined)


def _dual_bisection(profile, a, k, cfg):
    n = a.size
    nu_lo = 0.0
    t_lo = _coordinate_argmax(profile, a, nu_lo)
    slope_max = float(np.max(np.diff(profile.scan_vals) / np.diff(profile.scan)))
    nu_hi = max(float(a.max()) * slope_max * 2.0, 1e-12)
    t_hi = _coordinate_argmax(profile, a, nu_hi)
    it = 0
    while t_hi.sum() > k and it < 60:
        nu_hi *= 2.0
        t_hi = _coordinate_argmax(profile, a, nu_hi)
        it += 1
    if t_lo.sum() < k:
        # f has interior maxima below 1 everywhere; nu = 0 cannot fill the cache
        t_lo = np.ones(n)
    iterations = 0
    while iterations < cfg.max_iter:
        iterations += 1
        nu = 0.5 * (nu_lo + nu_hi)
        t = _coordinate_argmax(profile, a, nu)
        s = t.sum()
        if abs(s - k) <= cfg.dual_tol:
            return t, nu, iterations, True
        if s > k:
            nu_lo, t_lo = nu, t
        else:
            nu_hi, t_hi = nu, t
        if nu_hi - nu_lo <= 1e-15 * max(nu_hi, 1e-300):
            break
    # Duality gap: the budget falls inside a jump. Raise coordinates from the
    # under-full side toward the over-full side by ascending index.
    t = t_hi.copy()
    need = k - t.sum()
    for i in range(n):
        if need <= 0:
            break
        room = max(t_lo[i] - t[i], 0.0)
        add = min(room, need)
        t[i] += add
        need -= add
    t = project_capped_simplex(t, k)
    return t, 0.5 * (nu_lo + nu_hi), iterations, False


def _objective(profile, a, t):
    return float(np.dot(a, profile(t)))


def _projected_gradient(profile, a, k, t0, cfg):
    t = project_capped_simplex(t0, k)
    obj = _objective(profile, a, t)
    step = 1.0 / max(float(a.max()), 1e-12)
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        grad = a * profile.slope(t)
        accepted = False
        s = step
        for _ in range(40):
            cand = project_capped_simplex(t + s * grad, k)
            c_obj = _objective(profile, a, cand)
            if c_obj >= obj + 1e-4 * np.dot(grad, cand - t):
                accepted = True
                break
            s *= 0.5
        if not accepted or np.max(np.abs(cand - t)) < 1e-10:
            converged = True
            break
        if c_obj - obj < 1e-15:
            t, obj = cand, max(obj, c_obj)
            converged = True
            break
        t, obj = cand, c_obj
        step = min(s * 2.0, 1e3 / max(float(a.max()), 1e-12))
    return t, obj, it, converged


def _kkt_residual(profile, a, t):
    grad = a * profile.slope(t)
    eps = 1e-9
    free = (t > eps) & (t < 1 - eps)
    at0 = t <= eps
    at1 = t >= 1 - eps

    def worst(nu):
        r = 0.0
        if free.any():
            r = max(r, float(np.max(np.abs(grad[free] - nu))))
        if at0.any():
            r = max(r, float(np.max(grad[at0] - nu)))
        if at1.any():
            r = max(r, float(np.max(nu - grad[at1])))
        return max(r, 0.0)

    res = minimize_scalar(worst, bounds=(float(grad.min()), float(grad.max()) + 1e-300),
                          method="bounded", options={"xatol": 1e-14})
    return min(worst(res.x), worst(float(np.median(grad))))


def _canonical_order(profile, a, t):
    """Sort T to follow popularity order when that does not lose objective."""
    order = np.argsort(-a, kind="stable")
    s = np.empty_like(t)
    s[order] = np.sort(t)[::-1]
    return s if _objective(profile, a, s) >= _objective(profile, a, t) - 1e-12 else t


def optimize_placement(catalog: ContentCatalog, params: NetworkParams,
                       table: Optional[CoopTermTable] = None,
                       cfg: OptimizerConfig = OptimizerConfig(),
                       spec: QuadratureSpec = QuadratureSpec(),
                       k: Optional[int] = None) -> OptimizationReport:
    """Maximize the analytic STP over the capped simplex {0 <= T <= 1, sum T = K}.

    ``k`` is the cache size (required). ``table`` may be passed to reuse an
    already computed cooperation table; it must match ``params``.
    """
    if k is None:
        raise ValueError("cache size k is required")
    _require_feasible_k(catalog.n_files, k)
    if table is None:
        table = coop_terms(params, spec)
    if table.m_coop != params.m_coop or not math.isclose(table.tau, params.tau) \
            or not math.isclose(table.alpha, params.alpha):
        raise ValueError("coop table does not match params")

    a = np.asarray(catalog.popularity, dtype=float)
    profile = _Profile(build_interpolant(params, spec, cfg.grid_points), cfg.scan_points)

    t_dual, _, it_dual, dual_ok = _dual_bisection(profile, a, k, cfg)
    cands = {"dual": (t_dual, it_dual, dual_ok)}
    t_pol, _, it_pol, ok_pol = _projected_gradient(profile, a, k, t_dual, cfg)
    cands["dual+pgd"] = (t_pol, it_dual + it_pol, dual_ok and ok_pol)

    rng = np.random.default_rng(cfg.seed)
    starts = [baseline_udc(catalog, k).t, baseline_mpc(catalog, k).t]
    starts += [rng.random(a.size) for _ in range(cfg.multistart)]
    for i, s in enumerate(starts):
        t_s, _, it_s, ok_s = _projected_gradient(profile, a, k, s, cfg)
        cands[f"pgd[{i}]"] = (t_s, it_s, ok_s)

    scored = {}
    for name, (t, it, ok) in cands.items():
        t = _canonical_order(profile, a, t)
        t = project_capped_simplex(np.clip(t, 0.0, 1.0), k)
        pv = PlacementVector(t, k)
        scored[name] = (stp_a(pv, catalog, params, spec).aggregate, pv, it, ok)
    best_name = max(scored, key=lambda nm: (scored[nm][0], nm.startswith("dual")))
    obj, pv, it, ok = scored[best_name]
    if abs(pv.t.sum() - k) > SUM_TOL:
        raise ArithmeticError("optimizer returned an infeasible placement")
    method = "dual-bisection" if best_name.startswith("dual") else "projected-gradient"
    return OptimizationReport(
        t_star=pv,
        objective=obj,
        method=method,
        kkt_residual=_kkt_residual(profile, a, pv.t),
        iterations=it,
        converged=ok,
        candidates={nm: v[0] for nm, v in scored.items()},
    )
