"""Command line entry point: ``sediment-lab {run|sweep|check|plot}``.

Exit codes: 0 success, 1 configuration or input error, 2 collision event
(``run``) or any failed acceptance check (``check`` exits 1).
"""

from __future__ import annotations

import argparse
import csv
import io
import math
import os
import sys
import warnings
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load, manifest_lines, validate


def _log(args, msg):
    if not args.quiet:
        print(msg, file=sys.stderr)


def _threads(args):
    n = args.threads
    if n is None and os.environ.get("SEDIMENT_LAB_THREADS"):
        try:
            n = int(os.environ["SEDIMENT_LAB_THREADS"])
        except ValueError as err:
            raise ConfigError("SEDIMENT_LAB_THREADS must be an integer") from err
    if n is None:
        return
    if n < 1:
        raise ConfigError("--threads must be positive")
    import numba

    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def _config(args) -> ExperimentConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out = args.out
    validate(cfg)
    return cfg


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


def _table(rows, columns, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if c not in r else (repr(float(r[c])) if isinstance(r[c], float) else r[c]) for c in columns])
    return buf.getvalue()


def _cell_header(cfg, res) -> list:
    from ..dynamics import ScenarioParams
    from .recipes import STOKES

    extra = {"N": res.N, "lambda": repr(res.lam), "dt": repr(res.dt), "n_steps": res.n_steps}
    if cfg.scenario.family in STOKES:
        p = ScenarioParams(N=res.N, gamma_N=cfg.scenario.gamma, lambda_N=res.lam)
        extra["R"] = repr(p.radius)
        extra["kappa"] = repr(p.kappa)
        extra["stokes_number"] = repr(p.stokes_number)
    for k, v in res.admissibility.items():
        extra[f"admissibility_{k}"] = v if isinstance(v, bool) else repr(float(v))
    if math.isfinite(res.W2_0):
        extra["W2_0"] = repr(res.W2_0)
    return manifest_lines(cfg, extra)


def _timeseries_text(cfg, res) -> str:
    from .recipes import TIMESERIES_COLUMNS

    order = list(TIMESERIES_COLUMNS[cfg.scenario.family])
    if "W2" in res.record.columns:
        order.append("W2")
    return res.record.to_csv(_cell_header(cfg, res), order)


def _events_text(cfg, res) -> str:
    e = res.event
    row = {"time": e.time, "i": int(e.pair[0]), "j": int(e.pair[1]), "distance": e.distance}
    return _table([row], ["time", "i", "j", "distance"], _cell_header(cfg, res))


def cmd_run(args) -> int:
    from .recipes import cell_seeds, run_cell

    cfg = _config(args)
    _threads(args)
    cells = cfg.lambdas()
    if len(cells) > 1:
        _log(args, f"run: {len(cells)} sweep cells configured; running the first (use 'sweep' for all)")
    N, lam = cells[0]
    res = run_cell(cfg, N, lam, cell_seeds(cfg.seed, len(cells))[0])
    out = Path(cfg.out)
    _write(out / "timeseries.csv", _timeseries_text(cfg, res))
    if res.metrics:
        cols = ["t"] + [c for c in ("W2", "eta_bar", "fluid_l2") if c in res.metrics[0]]
        _write(out / "metrics.csv", _table(res.metrics, cols, _cell_header(cfg, res)))
    if res.event is not None:
        _write(out / "events.csv", _events_text(cfg, res))
        print(f"collision at t = {res.event.time:.6g} between {res.event.pair} "
              f"(distance {res.event.distance:.3g})", file=sys.stderr)
        return 2
    _log(args, f"run: N = {N}, lambda = {lam:.4g}, {res.n_steps} steps in {res.wall:.1f}s -> {out}")
    return 0


def cmd_sweep(args) -> int:
    from .recipes import TABLE_COLUMNS, convergence_rows, sweep, sweep_fits

    cfg = _config(args)
    _threads(args)
    results = sweep(cfg, workers=args.workers)
    out = Path(cfg.out)
    rows = convergence_rows(cfg, results)
    fits = sweep_fits(rows, cfg.scenario.T)
    header = manifest_lines(cfg, {f"fit_{k}": repr(v) for k, v in fits.items()})
    _write(out / "convergence_table.csv", _table(rows, TABLE_COLUMNS, header))
    _write(out / "fits.csv", _table([{"name": k, "value": v} for k, v in fits.items()], ["name", "value"], header))
    failures = 0
    for k, res in enumerate(results):
        if isinstance(res, Exception):
            failures += 1
            _log(args, f"cell {k}: {type(res).__name__}: {res}")
            continue
        _write(out / "cells" / f"cell_{k:03d}_timeseries.csv", _timeseries_text(cfg, res))
        if res.event is not None:
            _write(out / "cells" / f"cell_{k:03d}_events.csv", _events_text(cfg, res))
    _log(args, f"sweep: {len(results)} cells, {failures} failed -> {out}")
    return 0


def cmd_check(args) -> int:
    from .acceptance import run_quick_suite

    _threads(args)
    failed = []
    for res in run_quick_suite():
        print(res.line(), flush=True)
        if not res.passed:
            failed.append(f"criterion {res.number} ({res.name})")
    if failed:
        print("failed: " + "; ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_plot(args) -> int:
    from .plotting import DEFAULT_FIGURES, PlotError, figures_for, plot_columns, read_csv

    if not args.csv:
        raise ConfigError("plot needs at least one CSV path")
    out = Path(args.out or ".")
    try:
        jobs = []
        for path in args.csv:
            cols = read_csv(path)
            if args.y:
                x, y = args.x or "t", args.y
                svg = plot_columns(cols, x, y, args.logx, args.logy, args.group, path)
                jobs.append((out / f"{Path(path).stem}_{y}_vs_{x}.svg", svg))
                continue
            # default figures without data (d_min of a single sphere) are skipped
            drawn = 0
            for x, y, lx, ly, group in DEFAULT_FIGURES[figures_for(cols)]:
                try:
                    svg = plot_columns(cols, x, y, lx, ly, group, path)
                except PlotError as err:
                    _log(args, f"plot: skipping {y} vs {x}: {err}")
                    continue
                jobs.append((out / f"{Path(path).stem}_{y}_vs_{x}.svg", svg))
                drawn += 1
            if not drawn:
                raise PlotError(f"{path}: none of the default figures has plottable data")
    except PlotError as err:
        raise ConfigError(str(err)) from err
    for path, svg in jobs:
        _write(path, svg)
        _log(args, f"plot: wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment TOML file")
    common.add_argument("--out", help="output directory (overrides the config)")
    common.add_argument("--seed", type=int, help="master seed, unsigned 64-bit (overrides the config)")
    common.add_argument("--threads", type=int, help="numba worker threads (fallback: SEDIMENT_LAB_THREADS)")
    common.add_argument("--quiet", action="store_true", help="suppress progress messages")

    parser = argparse.ArgumentParser(prog="sediment-lab", description="Inertial sedimentation experiments.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="run one scenario and write timeseries.csv")
    p = sub.add_parser("sweep", parents=[common], help="run every (N, lambda) cell and write convergence_table.csv")
    p.add_argument("--workers", type=int, default=1, help="worker processes for the cells")
    sub.add_parser("check", parents=[common], help="reduced-scale acceptance checks")
    p = sub.add_parser("plot", parents=[common], help="SVG line plots from output CSV files")
    p.add_argument("csv", nargs="*", help="timeseries.csv or convergence_table.csv files")
    p.add_argument("--x", help="x column (with --y)")
    p.add_argument("--y", help="y column; replaces the default figures")
    p.add_argument("--group", help="column splitting the data into series")
    p.add_argument("--logx", action="store_true")
    p.add_argument("--logy", action="store_true")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "check": cmd_check, "plot": cmd_plot}


def main(argv=None) -> int:
    # an old system TBB only disables one numba threading layer; the others work
    warnings.filterwarnings("ignore", message="The TBB threading layer")
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
