"""Command-line harness: solve / sweep / compare / archive / report.

Writes plot-ready delimited outputs (solution, error, heatmap, schedule CSVs
and a JSON report). Data files are deterministic given the config and legacy
archive; wallclock numbers are quarantined to report.json and schedule.csv.
Figures are rendered on request (`--figures` or the `report` subcommand).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
import time
from pathlib import Path

import numpy as np

from .archive import ArchiveError, ArchiveHeader, compatibility_warnings, read_archive, write_archive
from .config import ConfigError, ExperimentConfig, default_config, load_config, render_config
from .gp_emulator import Hyperparameters, IllConditionedError, ResidualDataset
from .gparareal import run_gparareal
from .integrators import BlowUpError, SolverSpec, TimeMesh, propagate
from .ode_models import build_system
from .parareal import ConvergenceReport, SolutionTable, run_parareal
from .runtime import Executor, PhaseClock, predict_times

__all__ = ["main"]


def _fmt(x: float) -> str:
    # repr round-trips float64 exactly; CSVs stay deterministic
    return repr(float(x))


def _build_system(config: ExperimentConfig):
    return build_system(
        config.system, config.params, config.u0, t0=config.t0, t_end=config.tmax
    )


def _build_solvers(config: ExperimentConfig):
    fine = SolverSpec(config.fine_order, config.nf, role="fine")
    coarse = SolverSpec(config.coarse_order, config.ng, role="coarse")
    return fine, coarse


def _executor(config: ExperimentConfig) -> Executor:
    return Executor(config.workers, config.executor)


def _archive_header(config: ExperimentConfig, thetas) -> ArchiveHeader:
    dim = 2 if config.system == "fhn" else 3
    return ArchiveHeader(
        system=config.system,
        dimension=dim,
        fine_order=config.fine_order,
        coarse_order=config.coarse_order,
        fine_steps_per_slice=config.nf // config.slices,
        coarse_steps_per_slice=config.ng // config.slices,
        slice_width=(config.tmax - config.t0) / config.slices,
        sigma2=tuple(t.sigma2 for t in thetas) if thetas else None,
        ell2=tuple(t.ell2 for t in thetas) if thetas else None,
    )


def _load_legacy(config: ExperimentConfig):
    """Read the archive named by legacy_in; retag rows as legacy for this run.

    Returns (dataset, init_hyperparameters, warnings). Compatibility
    mismatches other than dimension are warnings, not errors.
    """
    if not config.legacy_in:
        return None, None, []
    header, stored = read_archive(config.legacy_in)
    dim = 2 if config.system == "fhn" else 3
    notes = compatibility_warnings(
        header,
        system=config.system,
        dimension=dim,
        fine_order=config.fine_order,
        coarse_order=config.coarse_order,
        fine_steps_per_slice=config.nf // config.slices,
        coarse_steps_per_slice=config.ng // config.slices,
        slice_width=(config.tmax - config.t0) / config.slices,
    )
    legacy = ResidualDataset(stored.dimension)
    for x, y in zip(stored.inputs, stored.outputs):
        legacy.append(x, y, "legacy")
    return legacy, header.hyperparameters(), notes


def _write_solution_csv(path: Path, table: SolutionTable) -> None:
    dim = table.states.shape[1]
    lines = ["t," + ",".join(f"u{i + 1}" for i in range(dim))]
    for t, row in zip(table.mesh.nodes, table.states):
        lines.append(_fmt(t) + "," + ",".join(_fmt(v) for v in row))
    path.write_text("\n".join(lines) + "\n")


def _write_schedule_csv(path: Path, events) -> None:
    lines = ["iteration,slice,phase,start,end"]
    for ev in events:
        lines.append(
            f"{ev.iteration},{ev.slice_index},{ev.phase},{ev.start!r},{ev.end!r}"
        )
    path.write_text("\n".join(lines) + "\n")


def _report_dict(report: ConvergenceReport, config: ExperimentConfig) -> dict:
    out = {
        "algorithm": report.algorithm,
        "outcome": report.outcome,
        "iterations": report.n_iterations,
        "slices": report.n_slices,
        "tolerance": report.tolerance,
        "frontier_history": report.frontier_history,
        "error_history": report.error_history,
        "timings": report.timings.as_dict(),
        "workers": report.workers,
        "warnings": report.warnings,
        "blow_up": {
            "iteration": report.blow_up_iteration,
            "slice": report.blow_up_slice,
        },
        "config": dataclasses.asdict(config),
    }
    if report.cost_model is not None:
        model = report.cost_model
        t_serial, t_para, s_para = predict_times(model)
        measured = t_serial / report.timings.total if report.timings.total > 0 else None
        out["cost_model"] = {
            "t_fine_median": model.t_fine,
            "t_coarse_median": model.t_coarse,
            "slices": model.n_slices,
            "iterations": model.n_iterations,
        }
        out["speedup"] = {
            "predicted_serial_seconds": t_serial,
            "predicted_parallel_seconds": t_para,
            "predicted": s_para,
            "measured_estimate": measured,
        }
    if report.hyperparameters is not None:
        out["hyperparameters"] = [
            {"sigma2": t.sigma2, "ell2": t.ell2} for t in report.hyperparameters
        ]
        out["dataset_rows"] = report.dataset_rows
        out["legacy_rows"] = report.legacy_rows
        out["refine_variances"] = report.refine_variances
    return out


def _timed_fine_solve(system, fine, mesh):
    """Serial fine reference with per-slice instrumentation."""
    clock = PhaseClock()
    nodes = mesh.nodes
    states = np.full((mesh.n_slices + 1, system.dimension), np.nan)
    states[0] = system.u0
    outcome = "converged"
    blow_slice = None
    with clock.phase("fine"):
        for j in range(mesh.n_slices):
            start = clock.now()
            try:
                states[j + 1] = propagate(system, fine, states[j], nodes[j], nodes[j + 1])
            except BlowUpError as err:
                err.slice_index = j
                outcome = "blow_up"
                blow_slice = j
                break
            clock.record_fine(0, j, start, clock.now())
    report = ConvergenceReport(
        algorithm="fine",
        outcome=outcome,
        n_iterations=0,
        n_slices=mesh.n_slices,
        tolerance=0.0,
        frontier_history=[],
        error_history=[],
        timings=clock.summary(),
        workers=1,
        blow_up_slice=blow_slice,
        blow_up_iteration=0 if blow_slice is not None else None,
        schedule=clock.events,
    )
    return SolutionTable(mesh, states), report


def _run_algorithm(config: ExperimentConfig, mode: str):
    """Run one algorithm per the config; returns (table, report, dataset|None)."""
    system = _build_system(config)
    fine, coarse = _build_solvers(config)
    mesh = TimeMesh.for_system(system, config.slices)
    if mode == "fine":
        table, report = _timed_fine_solve(system, fine, mesh)
        return table, report, None
    executor = _executor(config)
    if mode == "parareal":
        table, report = run_parareal(system, fine, coarse, mesh, config.tol, executor)
        return table, report, None
    legacy, init_thetas, notes = _load_legacy(config)
    table, report, dataset = run_gparareal(
        system, fine, coarse, mesh, config.tol, executor,
        legacy=legacy, init_hyperparameters=init_thetas,
    )
    report.warnings.extend(notes)
    return table, report, dataset


def cmd_solve(config: ExperimentConfig, figures: bool = False) -> int:
    config = config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table, report, dataset = _run_algorithm(config, config.mode)
    _write_solution_csv(out_dir / "solution.csv", table)
    _write_schedule_csv(out_dir / "schedule.csv", report.schedule)
    (out_dir / "report.json").write_text(
        json.dumps(_report_dict(report, config), indent=2) + "\n"
    )
    if config.legacy_out and dataset is not None:
        write_archive(
            config.legacy_out, dataset, _archive_header(config, report.hyperparameters)
        )
    for note in report.warnings:
        print(f"warning: {note}", file=sys.stderr)
    print(
        f"{report.algorithm}: {report.outcome} after {report.n_iterations} "
        f"iterations -> {out_dir}"
    )
    return 0 if report.outcome != "blow_up" else 1


def _sweep_cell(args):
    """One heatmap cell: both algorithms at a single initial value.

    Module-level so process pools can pickle it; runs serially inside.
    """
    config_dict, u0, legacy_payload = args
    config = ExperimentConfig(**config_dict)
    cell_config = dataclasses.replace(
        config, u0=tuple(u0), workers=1, executor="serial",
        legacy_in=None, legacy_out=None,
    )
    system = _build_system(cell_config)
    fine, coarse = _build_solvers(cell_config)
    mesh = TimeMesh.for_system(system, cell_config.slices)
    executor = Executor(1, "serial")
    results = []
    _, para_report = run_parareal(system, fine, coarse, mesh, cell_config.tol, executor)
    results.append(("parareal", para_report.n_iterations, para_report.outcome))
    legacy = None
    init_thetas = None
    if legacy_payload is not None:
        xs, ys, sigma2, ell2 = legacy_payload
        legacy = ResidualDataset.from_arrays(xs, ys, "legacy")
        if sigma2 is not None:
            init_thetas = [Hyperparameters(s, l) for s, l in zip(sigma2, ell2)]
    try:
        _, gp_report, _ = run_gparareal(
            system, fine, coarse, mesh, cell_config.tol, executor,
            legacy=legacy, init_hyperparameters=init_thetas,
        )
        results.append(("gparareal", gp_report.n_iterations, gp_report.outcome))
    except IllConditionedError as exc:
        # a per-cell failure mode like blow-up; the sweep must not abort
        results.append(("gparareal", getattr(exc, "iteration", 0), "ill_conditioned"))
    return tuple(u0), results


def cmd_sweep(config: ExperimentConfig, figures: bool = False) -> int:
    config = config.validate()
    if config.grid_count is None:
        raise ConfigError("grid: sweep requires grid_min, grid_max, grid_count")
    if len(config.grid_count) != 2 or config.system != "fhn":
        raise ConfigError("grid: sweeps are defined for 2-dimensional grids (fhn)")
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    legacy_payload = None
    if config.legacy_in:
        legacy, init_thetas, notes = _load_legacy(config)
        for note in notes:
            print(f"warning: {note}", file=sys.stderr)
        sigma2 = tuple(t.sigma2 for t in init_thetas) if init_thetas else None
        ell2 = tuple(t.ell2 for t in init_thetas) if init_thetas else None
        legacy_payload = (legacy.inputs, legacy.outputs, sigma2, ell2)

    axes = [
        np.linspace(lo, hi, n)
        for lo, hi, n in zip(config.grid_min, config.grid_max, config.grid_count)
    ]
    cells = [(float(a), float(b)) for a in axes[0] for b in axes[1]]
    config_dict = dataclasses.asdict(config)
    tasks = [(config_dict, cell, legacy_payload) for cell in cells]
    t0 = time.perf_counter()
    outcomes = _executor(config).map(_sweep_cell, tasks)
    elapsed = time.perf_counter() - t0

    lines = ["u01,u02,algorithm,k,status"]
    for (u01, u02), results in outcomes:
        for algorithm, k, status in results:
            lines.append(f"{_fmt(u01)},{_fmt(u02)},{algorithm},{k},{status}")
    (out_dir / "heatmap.csv").write_text("\n".join(lines) + "\n")
    summary = {
        "cells": len(cells),
        "grid_count": list(config.grid_count),
        "wallclock_seconds": elapsed,
        "config": dataclasses.asdict(config),
    }
    (out_dir / "sweep_report.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"sweep: {len(cells)} cells x 2 algorithms -> {out_dir}")
    return 0


def cmd_compare(config: ExperimentConfig, figures: bool = False) -> int:
    """Error table of each algorithm against the serial fine reference."""
    config = config.validate()
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    fine_table, fine_report, _ = _run_algorithm(config, "fine")
    if fine_report.outcome == "blow_up":
        print("error: serial fine reference blew up", file=sys.stderr)
        return 1
    reference = fine_table.states

    columns: list[tuple[str, np.ndarray]] = []
    reports = {"fine": fine_report}
    para_table, para_report, _ = _run_algorithm(config, "parareal")
    reports["parareal"] = para_report
    columns.append(("parareal", para_table.states))
    no_legacy = dataclasses.replace(config, legacy_in=None)
    gp_table, gp_report, _ = _run_algorithm(no_legacy, "gparareal")
    reports["gparareal"] = gp_report
    columns.append(("gparareal", gp_table.states))
    if config.legacy_in:
        leg_table, leg_report, _ = _run_algorithm(config, "gparareal")
        reports["gparareal_legacy"] = leg_report
        columns.append(("gparareal_legacy", leg_table.states))

    names = [name for name, _ in columns]
    lines = ["t," + ",".join(names)]
    nodes = fine_table.mesh.nodes
    for row_index, t in enumerate(nodes):
        errs = []
        for _, states in columns:
            diff = np.abs(states[row_index] - reference[row_index])
            errs.append(_fmt(np.max(diff)))
        lines.append(_fmt(t) + "," + ",".join(errs))
    (out_dir / "errors.csv").write_text("\n".join(lines) + "\n")

    payload = {
        name: {"outcome": rep.outcome, "iterations": rep.n_iterations}
        for name, rep in reports.items()
    }
    payload["config"] = dataclasses.asdict(config)
    (out_dir / "compare_report.json").write_text(json.dumps(payload, indent=2) + "\n")
    for name, rep in reports.items():
        for note in rep.warnings:
            print(f"warning [{name}]: {note}", file=sys.stderr)
    print(f"compare: errors vs serial fine for {names} -> {out_dir}")
    return 0 if all(r.outcome != "blow_up" for r in reports.values()) else 1


def cmd_archive_info(path: str) -> int:
    header, dataset = read_archive(path)
    print(f"archive {path}")
    print(f"  version: {header.version}")
    print(f"  system: {header.system} (dimension {header.dimension})")
    print(f"  fine: RK{header.fine_order}, {header.fine_steps_per_slice} steps/slice")
    print(f"  coarse: RK{header.coarse_order}, {header.coarse_steps_per_slice} steps/slice")
    print(f"  slice width: {header.slice_width}")
    if header.sigma2 is not None:
        print(f"  sigma2: {list(header.sigma2)}")
        print(f"  ell2: {list(header.ell2)}")
    print(
        f"  rows: {len(dataset)} "
        f"(acquisition {dataset.count('acquisition')}, legacy {dataset.count('legacy')})"
    )
    return 0


def cmd_archive_merge(out_path: str, in_paths: list[str]) -> int:
    """Concatenate archives; earlier files win on duplicate inputs."""
    header0, merged = read_archive(in_paths[0])
    for path in in_paths[1:]:
        header, dataset = read_archive(path)
        if header.dimension != header0.dimension:
            raise ArchiveError(
                f"{path}: dimension {header.dimension} != {header0.dimension}"
            )
        for x, y, tag in zip(dataset.inputs, dataset.outputs, dataset.provenance):
            merged.append(x, y, tag)
    write_archive(out_path, merged, header0)
    print(f"merged {len(in_paths)} archives ({len(merged)} rows) -> {out_path}")
    return 0


def _resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    """defaults < config file < explicit flags."""
    file_system = None
    if args.config:
        file_system = parse_system_key(Path(args.config).read_text())
    system = args.system or file_system or "fhn"
    config = default_config(system)
    if args.config:
        config = load_config(args.config, base=config)
    updates: dict[str, object] = {}
    for key in ("system", "t0", "tmax", "slices", "nf", "ng", "fine_order",
                "coarse_order", "tol", "workers", "mode", "executor",
                "legacy_in", "legacy_out", "out_dir"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = value
    for key in ("u0", "params", "grid_min", "grid_max"):
        value = getattr(args, key, None)
        if value is not None:
            updates[key] = tuple(float(tok) for tok in value.split(","))
    if getattr(args, "grid_count", None) is not None:
        updates["grid_count"] = tuple(int(tok) for tok in args.grid_count.split(","))
    return dataclasses.replace(config, **updates)


def parse_system_key(text: str) -> str | None:
    for line in text.splitlines():
        key, _, value = line.partition("=")
        if key.strip() == "system":
            return value.strip()
    return None


def _add_run_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key/value config file")
    parser.add_argument("--system", choices=("fhn", "rossler"))
    parser.add_argument("--params", help="comma-separated system parameters")
    parser.add_argument("--u0", help="comma-separated initial state")
    parser.add_argument("--t0", type=float)
    parser.add_argument("--tmax", type=float)
    parser.add_argument("--slices", type=int)
    parser.add_argument("--nf", type=int, help="total fine steps over the window")
    parser.add_argument("--ng", type=int, help="total coarse steps over the window")
    parser.add_argument("--fine-order", dest="fine_order", type=int, choices=(1, 2, 4))
    parser.add_argument("--coarse-order", dest="coarse_order", type=int, choices=(1, 2, 4))
    parser.add_argument("--tol", type=float)
    parser.add_argument("--workers", type=int)
    parser.add_argument("--executor", choices=("serial", "thread", "process"))
    parser.add_argument("--mode", choices=("fine", "parareal", "gparareal"))
    parser.add_argument("--legacy-in", dest="legacy_in")
    parser.add_argument("--legacy-out", dest="legacy_out")
    parser.add_argument("--out-dir", dest="out_dir")
    parser.add_argument("--grid-min", dest="grid_min", help="sweep grid lower corner")
    parser.add_argument("--grid-max", dest="grid_max", help="sweep grid upper corner")
    parser.add_argument("--grid-count", dest="grid_count", help="sweep grid cell counts")
    parser.add_argument("--figures", action="store_true",
                        help="also render matplotlib figures into out_dir")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="gparareal",
        description="Time-parallel ODE solving with parareal and GParareal.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    for name, descr in (
        ("solve", "run one algorithm, write solution/report/schedule"),
        ("sweep", "initial-value heatmap over a grid, both algorithms"),
        ("compare", "error table of each algorithm vs the serial fine solution"),
    ):
        p = sub.add_parser(name, help=descr)
        _add_run_flags(p)

    p_arch = sub.add_parser("archive", help="inspect or merge residual archives")
    arch_sub = p_arch.add_subparsers(dest="archive_command", required=True)
    p_info = arch_sub.add_parser("info", help="print header and row counts")
    p_info.add_argument("path")
    p_merge = arch_sub.add_parser("merge", help="merge archives (first wins on duplicates)")
    p_merge.add_argument("-o", "--out", required=True)
    p_merge.add_argument("paths", nargs="+")

    p_rep = sub.add_parser("report", help="render figures from a run directory")
    p_rep.add_argument("out_dir")

    p_cfg = sub.add_parser("print-config", help="print the resolved configuration")
    _add_run_flags(p_cfg)

    args = parser.parse_args(argv)
    try:
        if args.command == "archive":
            if args.archive_command == "info":
                return cmd_archive_info(args.path)
            return cmd_archive_merge(args.out, args.paths)
        if args.command == "report":
            from .report import render_all

            written = render_all(args.out_dir)
            print(f"rendered {len(written)} figures -> {args.out_dir}")
            return 0
        config = _resolve_config(args)
        if args.command == "print-config":
            sys.stdout.write(render_config(config))
            return 0
        handler = {"solve": cmd_solve, "sweep": cmd_sweep, "compare": cmd_compare}[args.command]
        status = handler(config, figures=args.figures)
        if args.figures:
            from .report import render_all

            render_all(config.out_dir)
        return status
    except (ConfigError, ArchiveError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
