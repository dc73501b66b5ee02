"""Network, catalog and placement types plus the popularity law."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "NetworkParams",
    "ContentCatalog",
    "PlacementVector",
    "Violation",
    "StpResult",
    "zipf_popularity",
    "validate_placement",
    "db_to_linear",
    "linear_to_db",
    "SUM_TOL",
]

# Tolerance on sum(T) == K.
SUM_TOL = 1e-9


def db_to_linear(x_db):
    out = 10.0 ** (np.asarray(x_db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


def linear_to_db(x):
    out = 10.0 * np.log10(np.asarray(x, dtype=float))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class NetworkParams:
    """Physical constants of the cellular network.

    ``p_b`` is carried for completeness; it cancels from the SIR and no
    computation reads it.
    """

    lambda_b: float = 0.01
    alpha: float = 4.0
    m_coop: int = 3
    tau: float = 1.0
    p_b: float = 1.0

    def __post_init__(self):
        if not self.lambda_b > 0:
            raise ValueError(f"lambda_b must be > 0, got {self.lambda_b}")
        if not (math.isfinite(self.alpha) and self.alpha > 2):
            raise ValueError(f"alpha must be > 2, got {self.alpha}")
        if int(self.m_coop) != self.m_coop or self.m_coop < 1:
            raise ValueError(f"m_coop must be a positive integer, got {self.m_coop}")
        object.__setattr__(self, "m_coop", int(self.m_coop))
        if not (math.isfinite(self.tau) and self.tau > 0):
            raise ValueError(f"tau must be > 0, got {self.tau}")

    @classmethod
    def from_db(cls, tau_db: float, **kw) -> "NetworkParams":
        return cls(tau=db_to_linear(tau_db), **kw)

    @classmethod
    def from_rate(cls, rate: float, **kw) -> "NetworkParams":
        """Build from a rate threshold r in bps/Hz, tau = 2^r - 1."""
        return cls(tau=2.0 ** rate - 1.0, **kw)

    @property
    def tau_db(self) -> float:
        return linear_to_db(self.tau)


def zipf_popularity(n_files: int, gamma: float) -> np.ndarray:
    """Zipf request probabilities a_n = n^-gamma / sum_k k^-gamma, n = 1..N.

    The normalizer uses ``math.fsum`` so that large catalogs with small
    exponents still sum to one to machine precision.
    """
    if int(n_files) != n_files or n_files < 1:
        raise ValueError(f"n_files must be a positive integer, got {n_files}")
    if not (math.isfinite(gamma) and gamma >= 0):
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    w = np.arange(1, int(n_files) + 1, dtype=float) ** (-float(gamma))
    return w / math.fsum(w)


@dataclass(frozen=True)
class ContentCatalog:
    n_files: int
    gamma_zipf: float
    popularity: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        a = zipf_popularity(self.n_files, self.gamma_zipf)
        a.setflags(write=False)
        object.__setattr__(self, "n_files", int(self.n_files))
        object.__setattr__(self, "popularity", a)


@dataclass(frozen=True)
class PlacementVector:
    """Per-file caching probabilities ``t`` together with the target cache size ``k_cache``.

    Construction does not enforce feasibility; optimizer iterates may be
    infeasible for a while. Use :func:`validate_placement` or
    :meth:`require_valid`.
    """

    t: np.ndarray
    k_cache: int

    def __post_init__(self):
        t = np.array(self.t, dtype=float)
        if t.ndim != 1 or t.size < 1:
            raise ValueError("placement must be a non-empty 1-D vector")
        t.setflags(write=False)
        object.__setattr__(self, "t", t)
        if int(self.k_cache) != self.k_cache or self.k_cache < 1:
            raise ValueError(f"k_cache must be a positive integer, got {self.k_cache}")
        object.__setattr__(self, "k_cache", int(self.k_cache))

    @property
    def n_files(self) -> int:
        return self.t.size

    def require_valid(self) -> "PlacementVector":
        problems = validate_placement(self)
        if problems:
            raise ValueError("invalid placement: " + "; ".join(map(str, problems)))
        return self

    def __eq__(self, other):
        if not isinstance(other, PlacementVector):
            return NotImplemented
        return self.k_cache == other.k_cache and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.k_cache, self.t.tobytes()))


@dataclass(frozen=True)
class Violation:
    kind: str  # "box", "sum" or "size"
    index: Optional[int]
    magnitude: float

    def __str__(self):
        where = f" at index {self.index}" if self.index is not None else ""
        return f"{self.kind} violation{where} of {self.magnitude:.3g}"


def validate_placement(p: PlacementVector, sum_tol: float = SUM_TOL) -> list[Violation]:
    """Check 0 <= T_n <= 1, sum T_n == K and K < N.

    Returns an empty list when the placement is feasible. Box violations
    carry the 1-based file index and the distance outside [0, 1].
    """
    out = []
    t = p.t
    for i in np.flatnonzero((t < 0) | (t > 1)):
        out.append(Violation("box", int(i) + 1, float(max(-t[i], t[i] - 1.0))))
    gap = math.fsum(t) - p.k_cache
    if abs(gap) > sum_tol:
        out.append(Violation("sum", None, float(abs(gap))))
    if p.k_cache >= t.size:
        out.append(Violation("size", None, float(p.k_cache - t.size + 1)))
    return out


@dataclass(frozen=True)
class StpResult:
    """Per-file and aggregate successful transmission probability.

    ``engine`` is ``"analytic"`` or ``"montecarlo"``. For the analytic
    engine ``error`` is the propagated integration error; for Monte Carlo
    it is the standard error of the aggregate, and ``ci_low``/``ci_high``
    bound the 95% confidence interval.
    """

    aggregate: float
    per_file: np.ndarray
    engine: str
    error: float = 0.0
    per_file_error: Optional[np.ndarray] = None
    ci_low: Optional[float] = None
    ci_high: Optional[float] = None
    per_file_ci: Optional[np.ndarray] = None
    n_realizations: int = 0
    exhausted: int = 0
    converged: bool = True
    cn_counts: Optional[np.ndarray] = None

    @property
    def ci_halfwidth(self) -> float:
        if self.ci_low is None or self.ci_high is None:
            return 0.0
        return 0.5 * (self.ci_high - self.ci_low)
