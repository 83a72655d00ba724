"""Command-line interface.

Verbs:
  run       one closed-loop scenario; prints its indices, saves the record
  sweep     the full controller x neighbor-count grid with paired seeds
  emit      plot-ready columnar data from saved records or sweep summaries
  validate  structural invariant suite on the desk-scale preset

Exit codes: 0 success, 1 validation failure, 2 configuration error,
3 solver failure, 4 integration failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import __version__
from ._backend import BACKEND
from .errors import (ConfigError, IntegrationFailureError,
                     InvalidArgumentError, ScenarioError, SolverFailureError)
from .harness import (PLOT_KINDS, ScenarioConfig, SweepSpec, SweepResult,
                      desk_scale_config, emit_plot_data, load_config,
                      run_closed_loop, run_sweep, validate_invariants)
from .metrics import (load_record, position_error_at_end, save_record,
                      total_input)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_INTEGRATION = 4


def _add_override_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML scenario file")
    p.add_argument("--desk", action="store_true",
                   help="start from the desk-scale preset")
    p.add_argument("--controller", choices=("cent", "fd", "is"))
    p.add_argument("--n-sat", type=int, dest="n_sat")
    p.add_argument("--n-deorbit", type=int, dest="n_deorbit")
    p.add_argument("--neighbors", type=int, dest="neighbor_count")
    p.add_argument("--horizon", type=int)
    p.add_argument("--ts", type=float)
    p.add_argument("--loops", type=int, dest="n_loops")
    p.add_argument("--seed", type=int)
    p.add_argument("--u-max", type=float, dest="u_max")
    p.add_argument("--mass", type=float)
    p.add_argument("--altitude", type=float, help="orbit altitude in m")
    p.add_argument("--out", type=Path, help="output directory")


def _config_from_args(args) -> ScenarioConfig:
    if args.config is not None:
        cfg = load_config(args.config)
    elif args.desk:
        cfg = desk_scale_config()
    else:
        cfg = ScenarioConfig()
    overrides = {}
    for name in ("controller", "n_sat", "n_deorbit", "neighbor_count",
                 "horizon", "ts", "n_loops", "seed", "u_max", "mass",
                 "altitude"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if args.out is not None:
        overrides["output_dir"] = str(args.out)
    if overrides:
        try:
            cfg = cfg.replace(**overrides)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _cmd_run(args) -> int:
    cfg = _config_from_args(args)
    rec = run_closed_loop(cfg)
    out_dir = cfg.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    record_path = out_dir / (
        f"run_{cfg.controller}_p{cfg.neighbor_count}_seed{cfg.seed}.npz")
    save_record(rec, record_path)
    stats = position_error_at_end(rec)
    print(f"controller={cfg.controller} survivors={rec.n_sat} "
          f"deorbited={list(rec.deorbited)}")
    print(f"position error mu_sim = {stats.mu_sim:.6f} km "
          f"(max {stats.max_err:.6f} km)")
    print(f"total input = {total_input(rec):.6f} m/s")
    print(f"total solve time = {float(rec.solve_times.sum()):.3f} s")
    print(f"record saved to {record_path}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    base = _config_from_args(args)
    spec = SweepSpec(
        neighbor_counts=tuple(int(v) for v in args.neighbor_counts.split(",")),
        controllers=tuple(args.controllers.split(",")),
        n_scenarios=args.scenarios, base_seed=args.base_seed)
    verbose = print if not args.quiet else None
    if args.no_cache:
        cache_dir = None
    else:
        cache_dir = args.cache_dir or base.resolved_output_dir() / "sweep_cache"
    result = run_sweep(spec, base, progress=verbose, cache_dir=cache_dir)
    out_dir = base.resolved_output_dir()
    out_dir.mkdir(parents=True, exist_ok=True)
    summary_path = out_dir / "sweep_summary.json"
    summary_path.write_text(sweep_to_json(result))
    emit_plot_data(result, "error-vs-neighbors",
                   out_dir / "error_vs_neighbors.txt")
    for controller, p, stats in result.table_rows():
        print(f"{controller:>4} p={p:<2} "
              f"pos_err={stats.position_error_mean:9.3f} "
              f"+/- {stats.position_error_std:7.3f} km  "
              f"input={stats.total_input_mean:8.3f} m/s  "
              f"solve={stats.solve_time_total:8.2f} s")
    print(f"summary saved to {summary_path}")
    return EXIT_OK


def sweep_to_json(result: SweepResult) -> str:
    payload = {}
    for (controller, p), stats in result.cells.items():
        payload.setdefault(controller, {})[str(p)] = dataclasses.asdict(stats)
    per_run = {}
    for (controller, p), idxs in result.indices.items():
        per_run.setdefault(controller, {})[str(p)] = [
            dataclasses.asdict(ri) for ri in idxs]
    return json.dumps({"cells": payload, "runs": per_run}, indent=2)


def _cmd_emit(args) -> int:
    if args.kind == "error-vs-neighbors":
        if args.sweep is None:
            raise ConfigError("emit error-vs-neighbors needs --sweep FILE")
        result = sweep_from_json(Path(args.sweep).read_text())
        source = result
    else:
        if args.record is None:
            raise ConfigError(f"emit {args.kind} needs --record FILE")
        source = load_record(args.record)
    path = emit_plot_data(source, args.kind, args.out)
    print(f"wrote {path}")
    return EXIT_OK


def sweep_from_json(text: str) -> SweepResult:
    from .metrics import BatchStats, RunIndices
    obj = json.loads(text)
    cells = {}
    for controller, by_p in obj["cells"].items():
        for p, stats in by_p.items():
            cells[(controller, int(p))] = BatchStats(**stats)
    indices = {}
    for controller, by_p in obj.get("runs", {}).items():
        for p, rows in by_p.items():
            indices[(controller, int(p))] = [RunIndices(**row) for row in rows]
    return SweepResult(cells=cells, indices=indices)


def _cmd_validate(args) -> int:
    results = validate_invariants(n_loops=args.loops)
    all_ok = True
    for check in results:
        flag = "PASS" if check.passed else "FAIL"
        print(f"[{flag}] {check.name}: {check.detail}")
        all_ok &= check.passed
    return EXIT_OK if all_ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ringmpc",
        description="Closed-loop MPC reconfiguration of a satellite ring")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__} (backend {BACKEND})")
    sub = parser.add_subparsers(dest="verb", required=True)

    p_run = sub.add_parser("run", help="run one scenario")
    _add_override_args(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run the batch grid")
    _add_override_args(p_sweep)
    p_sweep.add_argument("--neighbor-counts", default="2,4,6,8,10")
    p_sweep.add_argument("--controllers", default="cent,fd,is")
    p_sweep.add_argument("--scenarios", type=int, default=10)
    p_sweep.add_argument("--base-seed", type=int, default=0)
    p_sweep.add_argument("--quiet", action="store_true")
    p_sweep.add_argument("--cache-dir", type=Path,
                         help="per-run result cache (default: "
                              "<out>/sweep_cache); finished runs are "
                              "reused on restart")
    p_sweep.add_argument("--no-cache", action="store_true",
                         help="recompute every run and skip the cache")
    p_sweep.set_defaults(func=_cmd_sweep)

    p_emit = sub.add_parser("emit", help="write plot data files")
    p_emit.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p_emit.add_argument("--record", type=Path,
                        help="saved run record (.npz) for per-run kinds")
    p_emit.add_argument("--sweep", type=Path,
                        help="sweep_summary.json for error-vs-neighbors")
    p_emit.add_argument("--out", type=Path, required=True)
    p_emit.set_defaults(func=_cmd_emit)

    p_val = sub.add_parser("validate", help="run the invariant suite")
    p_val.add_argument("--loops", type=int, default=24)
    p_val.set_defaults(func=_cmd_validate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, InvalidArgumentError, ScenarioError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverFailureError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except IntegrationFailureError as exc:
        print(f"integration failure: {exc}", file=sys.stderr)
        return EXIT_INTEGRATION


if __name__ == "__main__":
    sys.exit(main())
