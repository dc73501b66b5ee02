"""Experiment configuration: JSON documents, bundled presets, dotted overrides."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .model import ContentCatalog, NetworkParams, PlacementVector, db_to_linear, validate_placement
from .numerics import QuadratureSpec
from .placement import OptimizerConfig
from .simulator import SimConfig

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "DEFAULTS",
    "SWEEP_AXES",
    "STRATEGIES",
    "bundled_names",
    "load_config",
    "apply_override",
]

SWEEP_AXES = ("tau_db", "m_coop", "gamma", "k_cache")
STRATEGIES = ("explicit", "optimal", "mpc", "iidc", "udc")
ENGINES = ("analytic", "montecarlo", "both")

# Baseline network: alpha 4, lambda_b 0.01, M 3, N 100, K 25, tau 0 dB, gamma 0.8.
DEFAULTS: dict[str, Any] = {
    "name": "defaults",
    "description": "",
    "network": {"lambda_b": 0.01, "alpha": 4.0, "m_coop": 3, "tau_db": 0.0, "p_b": 1.0},
    "catalog": {"n_files": 100, "gamma_zipf": 0.8},
    "cache_k": 25,
    "placement": {"source": "optimal", "t": None, "iidc_draws": 1_000_000, "iidc_seed": 0},
    "strategies": None,
    "sweep": None,
    "series": None,
    "engine": "analytic",
    "sim": {"window_side": 1000.0, "n_realizations": 100_000, "seed": 0, "per_file_conditioning": True},
    "quadrature": {},
    "optimizer": {},
    "output_path": None,
}


class ConfigError(ValueError):
    """Validation failure; the message starts with the offending field path."""


def _merge(base: dict, over: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, val in over.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"{where}: unknown field")
        if isinstance(base[key], dict) and isinstance(val, dict) and key not in ("quadrature", "optimizer"):
            out[key] = _merge(base[key], val, where + ".")
        else:
            out[key] = val
    return out


@dataclass(frozen=True)
class Axis:
    name: str
    values: tuple

    @classmethod
    def parse(cls, raw, path: str) -> Optional["Axis"]:
        if raw is None:
            return None
        if not isinstance(raw, dict) or set(raw) != {"axis", "values"}:
            raise ConfigError(f"{path}: expected {{'axis': ..., 'values': [...]}}")
        if raw["axis"] not in SWEEP_AXES:
            raise ConfigError(f"{path}.axis: must be one of {SWEEP_AXES}, got {raw['axis']!r}")
        vals = raw["values"]
        if not isinstance(vals, list) or not vals:
            raise ConfigError(f"{path}.values: must be a non-empty list")
        return cls(raw["axis"], tuple(vals))


@dataclass(frozen=True)
class ExperimentConfig:
    """A validated experiment.

    ``sweep`` is the single swept axis; ``series`` optionally repeats the
    sweep for a few values of a second parameter (one curve per value).
    ``strategies`` lists placement sources to run side by side; when
    absent the single ``placement.source`` is used.
    """

    raw: dict = field(repr=False)
    name: str
    network: dict
    catalog: dict
    cache_k: int
    placement_source: str
    explicit_t: Optional[tuple]
    iidc_draws: int
    iidc_seed: int
    strategies: tuple
    sweep: Optional[Axis]
    series: Optional[Axis]
    engine: str
    sim: SimConfig
    quadrature: QuadratureSpec
    optimizer: OptimizerConfig
    output_path: Optional[str]

    def cell_params(self, overrides: dict) -> tuple[NetworkParams, ContentCatalog, int]:
        """Network, catalog and K for one sweep cell."""
        net = dict(self.network)
        cat = dict(self.catalog)
        k = self.cache_k
        for axis, val in overrides.items():
            if axis == "tau_db":
                net["tau_db"] = val
            elif axis == "m_coop":
                net["m_coop"] = val
            elif axis == "gamma":
                cat["gamma_zipf"] = val
            elif axis == "k_cache":
                k = val
        tau = db_to_linear(net["tau_db"])
        params = NetworkParams(lambda_b=net["lambda_b"], alpha=net["alpha"], m_coop=net["m_coop"],
                               tau=tau, p_b=net["p_b"])
        return params, ContentCatalog(cat["n_files"], cat["gamma_zipf"]), int(k)

    def cells(self) -> list[dict]:
        """Sweep cells in output order: series value outer, sweep value inner."""
        outer = [{}] if self.series is None else [{self.series.name: v} for v in self.series.values]
        inner = [{}] if self.sweep is None else [{self.sweep.name: v} for v in self.sweep.values]
        return [{**o, **i} for o in outer for i in inner]


def _build(path: str, factory, kwargs):
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def from_dict(doc: dict) -> ExperimentConfig:
    d = _merge(DEFAULTS, doc)
    net = d["network"]
    for key in ("lambda_b", "alpha", "tau_db", "p_b"):
        if not isinstance(net[key], (int, float)) or isinstance(net[key], bool):
            raise ConfigError(f"network.{key}: must be a number")
    _build("network", NetworkParams, dict(lambda_b=net["lambda_b"], alpha=net["alpha"],
                                          m_coop=net["m_coop"], tau=db_to_linear(net["tau_db"]), p_b=net["p_b"]))
    cat = d["catalog"]
    _build("catalog", ContentCatalog, dict(n_files=cat["n_files"], gamma_zipf=cat["gamma_zipf"]))
    k = d["cache_k"]
    if not isinstance(k, int) or isinstance(k, bool) or k < 1:
        raise ConfigError("cache_k: must be a positive integer")
    if k >= cat["n_files"]:
        raise ConfigError(f"cache_k: need K < N, got K={k}, N={cat['n_files']}")

    pl = d["placement"]
    source = pl["source"]
    if source not in STRATEGIES:
        raise ConfigError(f"placement.source: must be one of {STRATEGIES}, got {source!r}")
    explicit = None
    if source == "explicit":
        if not isinstance(pl["t"], list):
            raise ConfigError("placement.t: required list for source 'explicit'")
        if len(pl["t"]) != cat["n_files"]:
            raise ConfigError(f"placement.t: length {len(pl['t'])} != catalog.n_files {cat['n_files']}")
        bad = validate_placement(PlacementVector(pl["t"], k))
        if bad:
            raise ConfigError("placement.t: " + "; ".join(map(str, bad)))
        explicit = tuple(float(x) for x in pl["t"])

    strategies = d["strategies"]
    if strategies is None:
        strategies = (source,)
    else:
        if not isinstance(strategies, list) or not strategies:
            raise ConfigError("strategies: must be a non-empty list")
        for i, s in enumerate(strategies):
            if s not in STRATEGIES or s == "explicit":
                raise ConfigError(f"strategies[{i}]: must be one of optimal, mpc, iidc, udc")
        strategies = tuple(strategies)

    sweep = Axis.parse(d["sweep"], "sweep")
    series = Axis.parse(d["series"], "series")
    if sweep is None and series is not None:
        raise ConfigError("series: requires a sweep axis")
    if sweep is not None and series is not None and sweep.name == series.name:
        raise ConfigError("series.axis: must differ from sweep.axis")
    if explicit is not None:
        for ax in (sweep, series):
            if ax is not None and ax.name == "k_cache":
                raise ConfigError(f"{'sweep' if ax is sweep else 'series'}.axis: k_cache sweep needs a computed placement")

    if d["engine"] not in ENGINES:
        raise ConfigError(f"engine: must be one of {ENGINES}, got {d['engine']!r}")
    sim = _build("sim", SimConfig, d["sim"])
    quad = _build("quadrature", QuadratureSpec, d["quadrature"])
    opt = _build("optimizer", OptimizerConfig, d["optimizer"])

    cfg = ExperimentConfig(
        raw=d, name=d["name"], network=net, catalog=cat, cache_k=k, placement_source=source,
        explicit_t=explicit, iidc_draws=int(pl["iidc_draws"]), iidc_seed=int(pl["iidc_seed"]),
        strategies=strategies, sweep=sweep, series=series, engine=d["engine"], sim=sim,
        quadrature=quad, optimizer=opt, output_path=d["output_path"],
    )
    for cell in cfg.cells():
        where = ", ".join(f"{a}={v}" for a, v in cell.items())
        try:
            params, catalog, kk = cfg.cell_params(cell)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"sweep ({where}): {exc}") from None
        if kk >= catalog.n_files or kk < 1:
            raise ConfigError(f"sweep ({where}): need 1 <= K < N")
    return cfg


def bundled_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("cachejt.configs").iterdir() if p.name.endswith(".json"))


def _read_document(ref: str) -> dict:
    path = Path(ref)
    if path.is_file():
        text = path.read_text(encoding="utf-8")
    else:
        res = resources.files("cachejt.configs").joinpath(f"{ref}.json")
        if not res.is_file():
            raise ConfigError(f"config: no file {ref!r} and no bundled config of that name "
                              f"(bundled: {', '.join(bundled_names())})")
        text = res.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be an object")
    return doc


def _set_path(doc: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = doc
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {p} is not a section")
    node[parts[-1]] = value


def apply_override(doc: dict, dotted: str, text: str) -> None:
    """Set ``doc[a][b] = value`` for ``dotted='a.b'``; ``text`` is parsed as JSON when possible."""
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    _set_path(doc, dotted, value)


def load_config(ref: Optional[str] = None, overrides: Optional[list[tuple[str, str]]] = None) -> ExperimentConfig:
    """Load a config file or bundled preset (``ref``), apply dotted overrides, validate."""
    doc = _read_document(ref) if ref else {}
    doc = copy.deepcopy(doc)
    doc.pop("$comment", None)
    for dotted, text in overrides or []:
        apply_override(doc, dotted, text)
    return from_dict(doc)
