"""Monte Carlo estimate of the successful transmission probability.

Each realization drops a PPP of base stations in a square window centred
on the typical user at the origin, fills every cache with K distinct
files, draws Rayleigh fading, and applies the cooperation policy:

* all M cluster members cache the file: the whole cluster transmits;
* some do: those transmit and the rest of the cluster stays silent;
* none do: the nearest caching BS outside the cluster serves alone and
  the whole cluster stays silent.

BSs outside the cluster are always active interferers.

Random streams are counter based: realization ``i`` draws from
``Philox(key=f(seed), counter=[0, 0, i, 0])``, so results do not depend on
how realizations are split between workers.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from .model import ContentCatalog, NetworkParams, PlacementVector, StpResult

__all__ = [
    "SimConfig",
    "Realization",
    "realization_rng",
    "sample_ppp",
    "sample_cache",
    "simulate_realization",
    "estimate_stp",
    "estimate_stp_sweep",
    "wilson_interval",
]

log = logging.getLogger(__name__)

Z95 = 1.959963984540054
_NEAR = 64  # BSs sorted and given fading/caches up front
_BLOCK = 250  # realizations per work unit; fixed so reductions are order independent


@dataclass(frozen=True)
class SimConfig:
    window_side: float = 1000.0
    n_realizations: int = 100_000
    seed: int = 0
    per_file_conditioning: bool = True

    def __post_init__(self):
        if not self.window_side > 0:
            raise ValueError("window_side must be > 0")
        if int(self.n_realizations) != self.n_realizations or self.n_realizations < 1:
            raise ValueError("n_realizations must be a positive integer")
        if self.seed < 0:
            raise ValueError("seed must be nonnegative")

    def check_density(self, params: NetworkParams) -> None:
        expected = params.lambda_b * self.window_side ** 2
        if expected < 10 * params.m_coop:
            warnings.warn(
                f"expected {expected:.1f} BSs in the window is below 10*M; cluster undersampled",
                RuntimeWarning,
                stacklevel=2,
            )


def _stream_key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed)).generate_state(2, np.uint64)


def realization_rng(seed: int, index: int, _key=None) -> np.random.Generator:
    """Counter-based generator for realization ``index`` under master ``seed``."""
    key = _stream_key(seed) if _key is None else _key
    return np.random.Generator(np.random.Philox(key=key, counter=[0, 0, int(index), 0]))


def sample_ppp(lam: float, window_side: float, rng: np.random.Generator) -> np.ndarray:
    """Homogeneous PPP of intensity ``lam`` on the square of side ``window_side`` centred at 0."""
    if not lam > 0:
        raise ValueError("intensity must be > 0")
    n = rng.poisson(lam * window_side * window_side)
    return (rng.random((n, 2)) - 0.5) * window_side


def _cache_edges(placement: PlacementVector) -> np.ndarray:
    edges = np.concatenate([[0.0], np.cumsum(placement.t)])
    edges *= placement.k_cache / edges[-1]
    return edges


def _caches_from_offsets(edges: np.ndarray, offsets: np.ndarray, k: int) -> np.ndarray:
    # Segment i is [edges[i], edges[i+1]); empty segments are never hit.
    pts = offsets[:, None] + np.arange(k)[None, :]
    idx = np.searchsorted(edges, pts, side="right") - 1
    return np.minimum(idx, edges.size - 2)


def sample_cache(placement: PlacementVector, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
    """Draw K distinct files (0-based) with inclusion probabilities ``placement.t``.

    Systematic sampling: the files are laid out as consecutive segments
    of length T_n covering [0, K) and one uniform offset U picks the
    segments containing U, U+1, ..., U+K-1. Since every T_n <= 1 the K
    picks are distinct, and file n is picked with probability T_n.

    Returns shape ``(K,)`` or ``(size, K)``.
    """
    placement.require_valid()
    edges = _cache_edges(placement)
    if size is None:
        return _caches_from_offsets(edges, np.array([rng.random()]), placement.k_cache)[0]
    return _caches_from_offsets(edges, rng.random(size), placement.k_cache)


class _Network:
    """One drop of BSs, fading and caches around the origin.

    Interferer powers and cache offsets are drawn for every BS; complex
    signal fading is drawn lazily along the distance order, so it only
    costs anything for the near BSs.
    """

    def __init__(self, params, sim, edges, k, rng):
        self.params = params
        self.edges = edges
        self.k = k
        self.rng = rng
        self.points = sample_ppp(params.lambda_b, sim.window_side, rng)
        n = self.points.shape[0]
        self.n = n
        self.interferer_power = rng.standard_exponential(n)
        self.cache_offsets = rng.random(n)
        d2 = np.einsum("ij,ij->i", self.points, self.points)
        self.d2 = d2
        if params.alpha == 4.0:
            self.gain = 1.0 / (d2 * d2)
        else:
            self.gain = d2 ** (-params.alpha / 2.0)
        self.interference_all = self.gain * self.interferer_power
        self.order = np.empty(0, dtype=np.intp)
        self.h = np.empty(0, dtype=complex)
        self.caches = np.empty((0, k), dtype=np.intp)
        self._full = False
        self.extend(min(n, max(_NEAR, params.m_coop + 1)))

    def extend(self, upto: int) -> None:
        upto = min(upto, self.n)
        if upto <= self.order.size:
            return
        if upto >= self.n:
            idx = np.argsort(self.d2, kind="stable")
            self._full = True
        else:
            idx = np.argpartition(self.d2, upto - 1)[:upto]
            idx = idx[np.argsort(self.d2[idx], kind="stable")]
        new = idx[self.order.size:]
        h = (self.rng.standard_normal(new.size) + 1j * self.rng.standard_normal(new.size)) / math.sqrt(2.0)
        self.order = idx
        self.h = np.concatenate([self.h, h])
        self.caches = np.concatenate([self.caches, _caches_from_offsets(self.edges, self.cache_offsets[new], self.k)])

    def cluster_interference(self, m: int) -> float:
        mask = self.interference_all.copy()
        mask[self.order[:m]] = 0.0
        return float(mask.sum())

    def outcomes(self, files: np.ndarray, cacheable: np.ndarray):
        """SIR, C_n, case and serving positions (into ``order``) for each requested file."""
        m = self.params.m_coop
        nf = files.size
        sir = np.zeros(nf)
        case = np.zeros(nf, dtype=np.int8)
        exhausted = np.zeros(nf, dtype=bool)
        serving_pos = np.full(nf, -1, dtype=np.intp)
        if self.n < m:
            return sir, np.zeros(nf, dtype=np.intp), case, exhausted | cacheable[files], serving_pos

        i_c = self.cluster_interference(m)
        cl_caches = self.caches[:m]
        hits = (cl_caches[:, :, None] == files[None, None, :]).any(axis=1)  # (m, nf)
        c_n = hits.sum(axis=0)
        amp_each = np.sqrt(self.gain[self.order[:m]]) * np.abs(self.h[:m])
        amp = amp_each @ hits
        coop = c_n > 0
        sir[coop] = amp[coop] ** 2 / i_c
        case[coop] = np.where(c_n[coop] == m, 1, 2)

        todo = np.flatnonzero(~coop & cacheable[files])
        case[~coop] = 3
        while todo.size:
            rows = self.caches[m:]
            found = (rows[:, :, None] == files[todo][None, None, :]).any(axis=1)  # (rows, todo)
            has = found.any(axis=0)
            first = np.argmax(found, axis=0) + m
            for j, ok, pos in zip(todo, has, first):
                if ok:
                    b = self.order[pos]
                    signal = self.gain[b] * abs(self.h[pos]) ** 2
                    sir[j] = signal / (i_c - self.interference_all[b])
                    serving_pos[j] = pos
            todo = todo[~has]
            if todo.size:
                if self._full:
                    exhausted[todo] = True
                    break
                self.extend(4 * self.order.size)
        return sir, c_n, case, exhausted, serving_pos


@dataclass
class Realization:
    """One sampled network viewed from a user requesting ``requested_file``.

    Indices in ``cluster``, ``coop_set`` and ``serving`` refer to rows of
    ``bs_points``. ``fading`` holds the complex link coefficients of the
    BSs for which they were drawn (the near ones), keyed by BS index.
    Files are 0-based.
    """

    bs_points: np.ndarray
    cache_offsets: np.ndarray
    placement: PlacementVector
    requested_file: int
    cluster: np.ndarray
    coop_set: np.ndarray
    serving: np.ndarray
    fading: dict
    case: int
    sir: float
    exhausted: bool = False

    @property
    def c_n(self) -> int:
        return int(self.coop_set.size)

    @property
    def caches(self) -> np.ndarray:
        """(n_bs, K) array of cached files for every BS."""
        return _caches_from_offsets(_cache_edges(self.placement), self.cache_offsets, self.placement.k_cache)

    def success(self, tau: float) -> bool:
        return self.sir >= tau


def simulate_realization(params: NetworkParams, sim: SimConfig, placement: PlacementVector,
                         requested_file: int, rng: np.random.Generator) -> Realization:
    """Sample one network and evaluate the SIR of a request for ``requested_file`` (0-based)."""
    placement.require_valid()
    if not 0 <= requested_file < placement.n_files:
        raise ValueError("requested_file out of range")
    net = _Network(params, sim, _cache_edges(placement), placement.k_cache, rng)
    if net.n < params.m_coop:
        raise ValueError(f"only {net.n} BSs in the window, need at least M={params.m_coop}")
    files = np.array([requested_file])
    sir, c_n, case, exhausted, serving_pos = net.outcomes(files, placement.t > 0)
    m = params.m_coop
    cluster = net.order[:m]
    in_cluster = (net.caches[:m] == requested_file).any(axis=1)
    coop_set = cluster[in_cluster]
    if case[0] == 3:
        serving = net.order[serving_pos[:1]] if serving_pos[0] >= 0 else np.empty(0, dtype=np.intp)
    else:
        serving = coop_set
    return Realization(
        bs_points=net.points,
        cache_offsets=net.cache_offsets,
        placement=placement,
        requested_file=requested_file,
        cluster=cluster,
        coop_set=coop_set,
        serving=serving,
        fading=dict(zip(net.order.tolist(), net.h.tolist())),
        case=int(case[0]),
        sir=float(sir[0]),
        exhausted=bool(exhausted[0]),
    )


def wilson_interval(successes, trials, z: float = Z95):
    """Wilson score interval, elementwise."""
    s = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        p = s / n
        denom = 1.0 + z * z / n
        centre = (p + z * z / (2 * n)) / denom
        half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    lo = np.where(n > 0, centre - half, 0.0)
    hi = np.where(n > 0, centre + half, 1.0)
    return np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)


@dataclass
class _BlockTally:
    successes: np.ndarray  # (n_tau, N) int
    requests: np.ndarray  # (N,) int
    y_sum: np.ndarray  # (n_tau,)
    y_sq: np.ndarray  # (n_tau,)
    cn_counts: np.ndarray  # (N, M+1)
    exhausted: int
    trace: list = field(default_factory=list)


def _run_block(params, sim, placement, popularity, taus, start, stop, trace):
    key = _stream_key(sim.seed)
    n_files = placement.n_files
    m = params.m_coop
    edges = _cache_edges(placement)
    cacheable = placement.t > 0
    all_files = np.arange(n_files)
    cum_pop = np.cumsum(popularity)
    n_tau = taus.size
    successes = np.zeros((n_tau, n_files), dtype=np.int64)
    requests = np.zeros(n_files, dtype=np.int64)
    y = np.zeros((stop - start, n_tau))
    cn_counts = np.zeros((n_files, m + 1), dtype=np.int64)
    exhausted_total = 0
    records = []
    for r in range(start, stop):
        rng = realization_rng(sim.seed, r, key)
        if sim.per_file_conditioning:
            files = all_files
        else:
            files = np.array([min(int(np.searchsorted(cum_pop, rng.random(), side="right")), n_files - 1)])
        net = _Network(params, sim, edges, placement.k_cache, rng)
        sir, c_n, case, exhausted, _ = net.outcomes(files, cacheable)
        ok = sir[None, :] >= taus[:, None]  # (n_tau, nf)
        successes[:, files] += ok
        requests[files] += 1
        np.add.at(cn_counts, (files, np.minimum(c_n, m)), 1)
        exhausted_total += int(exhausted.sum())
        if sim.per_file_conditioning:
            y[r - start] = ok @ popularity
        else:
            y[r - start] = ok[:, 0]
        if trace:
            for j, f in enumerate(files):
                records.append({
                    "realization": r, "file": int(f) + 1, "c_n": int(c_n[j]), "case": int(case[j]),
                    "sir": float(sir[j]), "success": [bool(b) for b in ok[:, j]],
                })
    return _BlockTally(successes, requests, y.sum(axis=0), (y * y).sum(axis=0), cn_counts, exhausted_total, records)


def _blocks(n: int) -> list[tuple[int, int]]:
    return [(s, min(s + _BLOCK, n)) for s in range(0, n, _BLOCK)]


def estimate_stp_sweep(params: NetworkParams, sim: SimConfig, placement: PlacementVector,
                       catalog: ContentCatalog, taus: Sequence[float], *, workers: int = 1,
                       trace_path=None) -> list[StpResult]:
    """Monte Carlo STP at several SIR thresholds from the same realizations.

    Results are bit-identical for any ``workers``: work is cut into fixed
    blocks and reduced in block order.
    """
    placement.require_valid()
    if placement.n_files != catalog.n_files:
        raise ValueError("placement and catalog sizes differ")
    sim.check_density(params)
    taus = np.asarray(list(taus), dtype=float)
    pop = np.asarray(catalog.popularity)
    blocks = _blocks(sim.n_realizations)
    trace = trace_path is not None
    args = [(params, sim, placement, pop, taus, s, e, trace) for s, e in blocks]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            tallies = list(ex.map(_run_block, *zip(*args)))
    else:
        tallies = [_run_block(*a) for a in args]

    successes = sum(t.successes for t in tallies)
    requests = sum(t.requests for t in tallies)
    cn_counts = sum(t.cn_counts for t in tallies)
    exhausted = sum(t.exhausted for t in tallies)
    y_sum = np.zeros(taus.size)
    y_sq = np.zeros(taus.size)
    for t in tallies:
        y_sum += t.y_sum
        y_sq += t.y_sq
    if trace:
        with open(trace_path, "w", encoding="utf-8", newline="\n") as fh:
            for t in tallies:
                for rec in t.trace:
                    fh.write(json.dumps(rec) + "\n")
    if exhausted:
        log.warning("%d requests found no caching BS inside the window", exhausted)

    n = sim.n_realizations
    out = []
    for k in range(taus.size):
        with np.errstate(invalid="ignore", divide="ignore"):
            per_file = np.where(requests > 0, successes[k] / np.maximum(requests, 1), 0.0)
        lo_f, hi_f = wilson_interval(successes[k], requests)
        mean = y_sum[k] / n
        var = max(y_sq[k] / n - mean * mean, 0.0) * n / max(n - 1, 1)
        se = math.sqrt(var / n)
        if sim.per_file_conditioning:
            lo, hi = max(mean - Z95 * se, 0.0), min(mean + Z95 * se, 1.0)
        else:
            lo, hi = (float(v) for v in wilson_interval(y_sum[k], n))
        out.append(StpResult(
            aggregate=float(mean),
            per_file=per_file,
            engine="montecarlo",
            error=se,
            per_file_error=np.sqrt(per_file * (1 - per_file) / np.maximum(requests, 1)),
            ci_low=float(lo),
            ci_high=float(hi),
            per_file_ci=np.stack([lo_f, hi_f], axis=1),
            n_realizations=n,
            exhausted=int(exhausted),
            cn_counts=cn_counts,
        ))
    return out


def estimate_stp(params: NetworkParams, sim: SimConfig, placement: PlacementVector,
                 catalog: ContentCatalog, *, workers: int = 1, trace_path=None) -> StpResult:
    """Monte Carlo STP at ``params.tau``.

    With ``sim.per_file_conditioning`` every realization is scored for
    every file and the aggregate is the popularity-weighted mix; its
    interval is a normal interval on the per-realization mix. Otherwise
    one request per realization is drawn from the popularity law and the
    aggregate gets a Wilson interval. Per-file intervals are Wilson in
    both modes.
    """
    return estimate_stp_sweep(params, sim, placement, catalog, [params.tau],
                              workers=workers, trace_path=trace_path)[0]
