"""Command-line experiment runner.

    cachejt sweep --config fig2 --out fig2.csv
    cachejt compare --config defaults --sim.n_realizations 20000
    cachejt optimize --config fig4 --threads 4

Any config field can be overridden with a dotted flag, e.g.
``--network.tau_db 3`` or ``--sweep.values "[0, 5, 10]"``.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from .analytic import stp_a
from .config import ConfigError, ExperimentConfig, bundled_names, load_config
from .model import PlacementVector, StpResult
from .placement import baseline_iidc, baseline_mpc, baseline_udc, optimize_placement
from .simulator import estimate_stp_sweep

log = logging.getLogger("cachejt")

COMMANDS = ("analytic", "simulate", "optimize", "compare", "sweep")
EXIT_OK, EXIT_CONFIG, EXIT_ASSERT = 0, 2, 3
BASELINE_NAMES = ("mpc", "iidc", "udc")


def fmt(value) -> str:
    """Decimal text for CSV cells: ints verbatim, floats at 12 significant digits."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return "%.12g" % float(value)
    return str(value)


def write_csv(header: list[str], rows: list[list], out) -> None:
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([fmt(v) for v in r])


def read_csv(path) -> tuple[list[str], list[dict]]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    with open(path, newline="", encoding="utf-8") as fh:
        header = next(csv.reader(fh))
    return header, rows


class Runner:
    """Evaluates a config cell by cell; placements are computed once per cell and strategy."""

    def __init__(self, cfg: ExperimentConfig, threads: int = 1, trace: Optional[str] = None):
        self.cfg = cfg
        self.threads = max(1, int(threads))
        self.trace = trace
        self._trace_count = 0

    # -- placements --------------------------------------------------------
    def placement(self, strategy: str, cell: dict) -> PlacementVector:
        cfg = self.cfg
        params, catalog, k = cfg.cell_params(cell)
        if strategy == "explicit":
            return PlacementVector(cfg.explicit_t, k).require_valid()
        if strategy == "mpc":
            return baseline_mpc(catalog, k)
        if strategy == "udc":
            return baseline_udc(catalog, k)
        if strategy == "iidc":
            return baseline_iidc(catalog, k, draws=cfg.iidc_draws, seed=cfg.iidc_seed)
        if strategy == "optimal":
            return self.optimize(cell).t_star
        raise ValueError(strategy)

    def optimize(self, cell: dict):
        params, catalog, k = self.cfg.cell_params(cell)
        return optimize_placement(catalog, params, cfg=self.cfg.optimizer, spec=self.cfg.quadrature, k=k)

    def _pmap(self, fn, items):
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=self.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(x) for x in items]

    # -- engines -------------------------------------------------------------
    def jobs(self, strategies) -> list[tuple[dict, str]]:
        return [(cell, s) for cell in self.cfg.cells() for s in strategies]

    def analytic(self, jobs, placements) -> list[Optional[StpResult]]:
        def one(i):
            cell, _ = jobs[i]
            params, catalog, _k = self.cfg.cell_params(cell)
            try:
                res = stp_a(placements[i], catalog, params, self.cfg.quadrature)
            except (ArithmeticError, FloatingPointError) as exc:
                log.warning("analytic cell %s failed: %s", cell, exc)
                return None
            if not res.converged:
                log.warning("analytic cell %s: integration did not converge (error %.2g)", cell, res.error)
            return res

        return self._pmap(one, list(range(len(jobs))))

    def montecarlo(self, jobs, placements) -> list[StpResult]:
        # Jobs that differ only in tau share realizations.
        groups: dict = {}
        for i, (cell, _) in enumerate(jobs):
            params, catalog, k = self.cfg.cell_params(cell)
            key = (replace(params, tau=1.0), catalog.n_files, catalog.gamma_zipf, placements[i])
            groups.setdefault(key, []).append(i)
        out: list = [None] * len(jobs)
        for key, idx in groups.items():
            params0, _, _, placement = key
            _, catalog, _ = self.cfg.cell_params(jobs[idx[0]][0])
            taus = [self.cfg.cell_params(jobs[i][0])[0].tau for i in idx]
            uniq = sorted(set(taus))
            results = estimate_stp_sweep(replace(params0, tau=uniq[0]), self.cfg.sim, placement, catalog, uniq,
                                         workers=self.threads, trace_path=self._next_trace())
            by_tau = dict(zip(uniq, results))
            for i, t in zip(idx, taus):
                out[i] = by_tau[t]
        return out

    def _next_trace(self):
        if self.trace is None:
            return None
        p = Path(self.trace)
        self._trace_count += 1
        if self._trace_count == 1:
            return str(p)
        return str(p.with_name(f"{p.stem}-{self._trace_count}{p.suffix}"))

    # -- tables ----------------------------------------------------------------
    def axis_columns(self) -> list[str]:
        cols = []
        if self.cfg.sweep is not None:
            cols.append(self.cfg.sweep.name)
        if self.cfg.series is not None:
            cols.append(self.cfg.series.name)
        return cols

    def axis_values(self, cell: dict) -> list:
        return [cell[c] for c in self.axis_columns()]

    def table(self, engine: str, strategies=None, force_strategy_column=False):
        cfg = self.cfg
        strategies = tuple(strategies or cfg.strategies)
        jobs = self.jobs(strategies)
        placements = self._pmap(lambda j: self.placement(j[1], j[0]), jobs)
        an = self.analytic(jobs, placements) if engine in ("analytic", "both") else None
        mc = self.montecarlo(jobs, placements) if engine in ("montecarlo", "both") else None

        show_strategy = force_strategy_column or len(strategies) > 1 or cfg.raw.get("strategies") is not None
        header = self.axis_columns() + (["strategy"] if show_strategy else [])
        if engine == "analytic":
            header += ["stp_analytic", "analytic_err"]
        elif engine == "montecarlo":
            header += ["stp_mc", "mc_se", "mc_ci"]
        else:
            header += ["stp_analytic", "stp_mc", "mc_ci"]
        rows = []
        for i, (cell, strat) in enumerate(jobs):
            row = self.axis_values(cell) + ([strat] if show_strategy else [])
            a = an[i] if an is not None else None
            m = mc[i] if mc is not None else None
            a_val = a.aggregate if a is not None else float("nan")
            if engine == "analytic":
                row += [a_val, a.error if a is not None else float("nan")]
            elif engine == "montecarlo":
                row += [m.aggregate, m.error, m.ci_halfwidth]
            else:
                row += [a_val, m.aggregate, m.ci_halfwidth]
            rows.append(row)
        return header, rows, jobs, an, mc


def _emit(header, rows, out_path: Optional[str]) -> None:
    if out_path in (None, "-"):
        buf = io.StringIO()
        write_csv(header, rows, buf)
        sys.stdout.write(buf.getvalue())
        return
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", encoding="utf-8", newline="") as fh:
        write_csv(header, rows, fh)
    log.info("wrote %s (%d rows)", out_path, len(rows))


def cmd_table(runner: Runner, engine: str, out: Optional[str]) -> int:
    header, rows, *_ = runner.table(engine)
    _emit(header, rows, out)
    return EXIT_OK


def cmd_optimize(runner: Runner, out: Optional[str]) -> int:
    cells = runner.cfg.cells()
    reports = runner._pmap(runner.optimize, cells)
    header = runner.axis_columns() + ["n", "t_star"]
    rows = []
    for cell, rep in zip(cells, reports):
        log.info("%s: objective %.6f via %s, kkt residual %.2g", cell or "defaults", rep.objective,
                 rep.method, rep.kkt_residual)
        for n, t in enumerate(rep.t_star.t, start=1):
            rows.append(runner.axis_values(cell) + [n, float(t)])
    _emit(header, rows, out)
    return EXIT_OK


def cmd_compare(runner: Runner, out: Optional[str]) -> int:
    strategies = ("optimal",) + BASELINE_NAMES
    header, rows, jobs, an, mc = runner.table("both", strategies, force_strategy_column=True)
    _emit(header, rows, out)
    status = EXIT_OK
    for cell in runner.cfg.cells():
        idx = {s: i for i, (c, s) in enumerate(jobs) if c == cell}
        opt_a, opt_m = an[idx["optimal"]], mc[idx["optimal"]]
        where = f" [{', '.join(f'{k}={v}' for k, v in cell.items())}]" if cell else ""
        for b in BASELINE_NAMES:
            ba, bm = an[idx[b]], mc[idx[b]]
            if opt_a is None or ba is None:
                print(f"FAIL{where}: analytic value missing for optimal or {b}", file=sys.stderr)
                status = EXIT_ASSERT
                continue
            if opt_a.aggregate < ba.aggregate - 1e-9:
                print(f"FAIL{where}: analytic optimal {opt_a.aggregate:.6f} < {b} {ba.aggregate:.6f}",
                      file=sys.stderr)
                status = EXIT_ASSERT
            overlap = not (opt_m.ci_low > bm.ci_high or bm.ci_low > opt_m.ci_high)
            if opt_m.aggregate >= bm.aggregate:
                note = "MC agrees" + (" (CIs overlap)" if overlap else "")
            else:
                note = "MC reversed, CIs overlap" if overlap else "MC reversed outside CIs"
            print(f"optimal vs {b}{where}: analytic {opt_a.aggregate:.6f} vs {ba.aggregate:.6f}; "
                  f"MC {opt_m.aggregate:.4f}±{opt_m.ci_halfwidth:.4f} vs {bm.aggregate:.4f}±{bm.ci_halfwidth:.4f}; "
                  f"{note}", file=sys.stderr)
    return status


def _split_overrides(extra: list[str]) -> list[tuple[str, str]]:
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or len(tok) == 2:
            raise ConfigError(f"unrecognized argument {tok!r}")
        name = tok[2:]
        if "=" in name:
            key, val = name.split("=", 1)
            out.append((key, val))
            i += 1
            continue
        if i + 1 >= len(extra):
            raise ConfigError(f"{name}: missing value")
        out.append((name, extra[i + 1]))
        i += 2
    return out


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cachejt", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help=f"JSON file or bundled name ({', '.join(bundled_names())})")
    p.add_argument("--seed", type=int, help="master seed for the Monte Carlo streams")
    p.add_argument("--out", help="output CSV path ('-' for stdout)")
    p.add_argument("--threads", type=int, default=1, help="worker count (results do not depend on it)")
    p.add_argument("--trace", nargs="?", const="trace.jsonl", default=None,
                   help="dump per-realization records as JSON lines")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _split_overrides(extra)
        if args.seed is not None:
            overrides.append(("sim.seed", str(args.seed)))
        cfg = load_config(args.config, overrides)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out if args.out is not None else cfg.output_path
    runner = Runner(cfg, threads=args.threads, trace=args.trace)
    if args.command == "analytic":
        return cmd_table(runner, "analytic", out)
    if args.command == "simulate":
        return cmd_table(runner, "montecarlo", out)
    if args.command == "sweep":
        return cmd_table(runner, cfg.engine, out)
    if args.command == "optimize":
        return cmd_optimize(runner, out)
    return cmd_compare(runner, out)


if __name__ == "__main__":
    sys.exit(main())
