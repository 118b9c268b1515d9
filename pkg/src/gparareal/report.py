"""Figure rendering for run directories: solution, convergence, error,
heatmap and schedule plots next to the CSVs they are drawn from."""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = ["render_all"]

_STATUS_COLORS = {"converged": None, "blow_up": "black", "exhausted": "dimgray"}


def _read_csv(path: Path) -> tuple[list[str], list[list[str]]]:
    with path.open() as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


def render_solution(out_dir: Path) -> Path | None:
    path = out_dir / "solution.csv"
    if not path.exists():
        return None
    header, rows = _read_csv(path)
    data = np.array([[float(v) for v in row] for row in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, name in enumerate(header[1:], start=1):
        ax.plot(data[:, 0], data[:, i], marker=".", lw=1, label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("state")
    ax.legend(frameon=False)
    fig.tight_layout()
    target = out_dir / "solution.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    return target


def render_convergence(out_dir: Path) -> Path | None:
    path = out_dir / "report.json"
    if not path.exists():
        return None
    payload = json.loads(path.read_text())
    errors = payload.get("error_history") or []
    if not errors:
        return None
    fig, ax = plt.subplots(figsize=(6, 4))
    ks = np.arange(1, len(errors) + 1)
    ax.semilogy(ks, np.maximum(errors, 1e-300), marker="o",
                label=payload.get("algorithm", "run"))
    tol = payload.get("tolerance")
    if tol:
        ax.axhline(tol, color="gray", ls="--", lw=1, label=f"tolerance {tol:g}")
    ax.set_xlabel("iteration k")
    ax.set_ylabel("max successive-iterate error")
    ax.legend(frameon=False)
    fig.tight_layout()
    target = out_dir / "convergence.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    return target


def render_errors(out_dir: Path) -> Path | None:
    path = out_dir / "errors.csv"
    if not path.exists():
        return None
    header, rows = _read_csv(path)
    data = np.array([[float(v) for v in row] for row in rows])
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, name in enumerate(header[1:], start=1):
        ax.semilogy(data[:, 0], np.maximum(data[:, i], 1e-300), marker=".",
                    lw=1, label=name)
    ax.set_xlabel("t")
    ax.set_ylabel("max abs error vs serial fine")
    ax.legend(frameon=False)
    fig.tight_layout()
    target = out_dir / "errors.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    return target


def render_heatmap(out_dir: Path) -> Path | None:
    path = out_dir / "heatmap.csv"
    if not path.exists():
        return None
    _, rows = _read_csv(path)
    by_alg: dict[str, dict[tuple[float, float], tuple[int, str]]] = {}
    for u01, u02, algorithm, k, status in rows:
        by_alg.setdefault(algorithm, {})[(float(u01), float(u02))] = (int(k), status)
    algorithms = sorted(by_alg)
    fig, axes = plt.subplots(1, len(algorithms), figsize=(6 * len(algorithms), 5),
                             squeeze=False)
    all_k = [k for cells in by_alg.values()
             for k, status in cells.values() if status == "converged"]
    vmax = max(all_k) if all_k else 1
    mappable = None
    for ax, algorithm in zip(axes[0], algorithms):
        cells = by_alg[algorithm]
        xs = sorted({p[0] for p in cells})
        ys = sorted({p[1] for p in cells})
        grid = np.full((len(ys), len(xs)), np.nan)
        for (x, y), (k, status) in cells.items():
            if status == "converged":
                grid[ys.index(y), xs.index(x)] = k
        cmap = plt.get_cmap("viridis").copy()
        cmap.set_bad("black")
        extent = (min(xs), max(xs), min(ys), max(ys)) if len(xs) > 1 else None
        mappable = ax.imshow(grid, origin="lower", cmap=cmap, vmin=1, vmax=vmax,
                             extent=extent, aspect="auto")
        ax.set_title(algorithm)
        ax.set_xlabel("u0[0]")
        ax.set_ylabel("u0[1]")
    if mappable is not None:
        fig.colorbar(mappable, ax=list(axes[0]), label="iterations to converge")
    target = out_dir / "heatmap.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    return target


def render_schedule(out_dir: Path) -> Path | None:
    path = out_dir / "schedule.csv"
    if not path.exists():
        return None
    _, rows = _read_csv(path)
    if not rows:
        return None
    colors = {"coarse": "goldenrod", "fine": "steelblue",
              "emulator_optimize": "firebrick", "emulator_condition": "salmon"}
    fig, ax = plt.subplots(figsize=(8, 4.5))
    seen = set()
    for iteration, slice_index, phase, start, end in rows:
        lane = int(slice_index) if int(slice_index) >= 0 else -1
        label = phase if phase not in seen else None
        seen.add(phase)
        ax.barh(lane, float(end) - float(start), left=float(start), height=0.8,
                color=colors.get(phase, "gray"), label=label)
    ax.set_xlabel("wallclock since run start [s]")
    ax.set_ylabel("slice (-1: serial phases)")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    target = out_dir / "schedule.png"
    fig.savefig(target, dpi=150)
    plt.close(fig)
    return target


def render_all(out_dir: str | Path) -> list[Path]:
    """Render every figure whose source file exists in out_dir."""
    out_dir = Path(out_dir)
    written = []
    for renderer in (render_solution, render_convergence, render_errors,
                     render_heatmap, render_schedule):
        target = renderer(out_dir)
        if target is not None:
            written.append(target)
    return written
