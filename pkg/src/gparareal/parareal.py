"""Classic parareal: coarse serial sweep, parallel fine propagation,
serial predictor-corrector, sliding convergence frontier.

Update rule (iteration k >= 1, slices j past the frontier):

    U^k_{j+1} = G(U^k_j) + F(U^{k-1}_j) - G(U^{k-1}_j)

with the coarse values G(U^{k-1}_j) cached from the sweep that produced the
previous iterate, never recomputed. The frontier advances at least one slice
per iteration: the first unconverged node receives the exactly
fine-propagated value by direct copy (no floating-point cancellation), then
a forward scan freezes every further node whose successive-iterate
difference is below tolerance. Frozen nodes are never touched again.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .gp_emulator import Hyperparameters
from .integrators import BlowUpError, SolverSpec, TimeMesh, propagate
from .ode_models import OdeSystem
from .runtime import CostModel, Executor, PhaseClock, PhaseTimings, ScheduleEvent

__all__ = [
    "ConvergenceReport",
    "SolutionTable",
    "check_convergence",
    "run_parareal",
]


@dataclass
class SolutionTable:
    """Converged (or partial) solution values at the mesh nodes."""

    mesh: TimeMesh
    states: np.ndarray  # (n_slices + 1, d); NaN rows mark nodes never reached

    def __post_init__(self):
        expected = (self.mesh.n_slices + 1, self.states.shape[1])
        if self.states.shape != expected:
            raise ValueError(f"states shape {self.states.shape}, expected {expected}")


@dataclass
class ConvergenceReport:
    """Per-run diagnostics: iteration counts, frontier and error histories,
    phase timings, and the measured per-slice cost model."""

    algorithm: str
    outcome: str  # "converged" | "blow_up" | "exhausted"
    n_iterations: int
    n_slices: int
    tolerance: float
    frontier_history: list[int]
    error_history: list[float]
    timings: PhaseTimings
    workers: int
    cost_model: CostModel | None = None
    blow_up_iteration: int | None = None
    blow_up_slice: int | None = None
    warnings: list[str] = field(default_factory=list)
    schedule: list[ScheduleEvent] = field(default_factory=list, repr=False)
    # gparareal extras
    hyperparameters: list[Hyperparameters] | None = None
    dataset_rows: int | None = None
    legacy_rows: int | None = None
    refine_variances: list[list[float]] | None = None

    @property
    def converged(self) -> bool:
        return self.outcome == "converged"

    @property
    def final_frontier(self) -> int:
        return self.frontier_history[-1] if self.frontier_history else 0


def check_convergence(
    current: np.ndarray,
    previous: np.ndarray,
    tol: float,
    frontier: int,
) -> int:
    """Advance the converged frontier by scanning successive-iterate diffs.

    Returns the largest node index n >= frontier such that every node in
    (frontier, n] satisfies max_i |current_i - previous_i| < tol. The scan
    stops at the first violation; the frontier never retreats.
    """
    if current.shape != previous.shape:
        raise ValueError(f"iterate shapes differ: {current.shape} vs {previous.shape}")
    last = current.shape[0] - 1
    i = frontier
    while i < last and np.max(np.abs(current[i + 1] - previous[i + 1])) < tol:
        i += 1
    return i


def _scan_error(current: np.ndarray, previous: np.ndarray, frontier: int) -> float:
    """Max successive-iterate difference over nodes past the forced frontier."""
    if frontier + 1 >= current.shape[0]:
        return 0.0
    return float(np.max(np.abs(current[frontier + 1:] - previous[frontier + 1:])))


def _fine_slice_task(args):
    """Propagate one slice with the fine solver; module-level for pickling."""
    system, spec, u, t_start, t_end, slice_index, iteration, wall0 = args
    start = time.time() - wall0
    try:
        out = propagate(system, spec, u, t_start, t_end)
    except BlowUpError as err:
        err.slice_index = slice_index
        err.iteration = iteration
        raise
    return out, slice_index, start, time.time() - wall0


def _fine_batch(system, fine, states, nodes, frontier, iteration, executor, clock):
    """Run fine propagations for slices frontier..J-1 in parallel.

    Returns a dict slice_index -> propagated state. Results are assembled by
    index, so they are identical for any worker count.
    """
    n_slices = nodes.shape[0] - 1
    tasks = [
        (system, fine, states[j], nodes[j], nodes[j + 1], j, iteration, clock.wall0)
        for j in range(frontier, n_slices)
    ]
    t0 = time.perf_counter()
    results = executor.map(_fine_slice_task, tasks)
    clock.add_fine_wall(time.perf_counter() - t0)
    out = {}
    for state, j, start, end in results:
        clock.record_fine(iteration, j, start, end)
        out[j] = state
    return out


def _coarse_step(system, coarse, u, t_start, t_end, slice_index, iteration, clock):
    start = clock.now()
    try:
        out = propagate(system, coarse, u, t_start, t_end)
    except BlowUpError as err:
        err.slice_index = slice_index
        err.iteration = iteration
        raise
    clock.record_coarse(iteration, slice_index, start, clock.now())
    return out


def _validate_run(system, fine, coarse, mesh, tol):
    if tol < 0:
        raise ValueError(f"tolerance must be >= 0, got {tol}")
    if (mesh.t0, mesh.t_end) != (system.t0, system.t_end):
        raise ValueError(
            f"mesh window [{mesh.t0}, {mesh.t_end}] differs from system window "
            f"[{system.t0}, {system.t_end}]"
        )
    fine.steps_per_slice(mesh.n_slices)
    coarse.steps_per_slice(mesh.n_slices)


def run_parareal(
    system: OdeSystem,
    fine: SolverSpec,
    coarse: SolverSpec,
    mesh: TimeMesh,
    tol: float,
    executor: Executor | None = None,
    max_iterations: int | None = None,
) -> tuple[SolutionTable, ConvergenceReport]:
    """Solve the IVP with parareal.

    Iteration 0 is the serial coarse sweep; each later iteration runs the
    fine solver in parallel on unconverged slices only, applies the serial
    predictor-corrector, and advances the frontier. Stops when the frontier
    reaches the last node; with tol = 0 that takes exactly n_slices
    iterations and reproduces the serial fine solution bitwise.

    On solver blow-up the partial table (NaN where never computed) and the
    report are still returned, with outcome "blow_up" and the failing
    slice/iteration recorded.
    """
    _validate_run(system, fine, coarse, mesh, tol)
    exec_ = executor or Executor(1, "serial")
    n_slices, dim = mesh.n_slices, system.dimension
    nodes = mesh.nodes
    clock = PhaseClock()

    u_prev = np.full((n_slices + 1, dim), np.nan)
    u_prev[0] = system.u0
    g_prev = np.full((n_slices, dim), np.nan)
    frontier_hist: list[int] = []
    err_hist: list[float] = []
    outcome = "exhausted"
    k_done = 0
    blow_slice = blow_iter = None
    kmax = n_slices if max_iterations is None else min(max_iterations, n_slices)

    try:
        for j in range(n_slices):
            g = _coarse_step(system, coarse, u_prev[j], nodes[j], nodes[j + 1], j, 0, clock)
            g_prev[j] = g
            u_prev[j + 1] = g

        frontier = 0
        for k in range(1, kmax + 1):
            k_done = k
            fine_vals = _fine_batch(system, fine, u_prev, nodes, frontier, k, exec_, clock)

            u_curr = u_prev.copy()
            g_curr = g_prev.copy()
            forced = frontier + 1
            u_curr[forced] = fine_vals[frontier]
            for j in range(forced, n_slices):
                g = _coarse_step(system, coarse, u_curr[j], nodes[j], nodes[j + 1], j, k, clock)
                g_curr[j] = g
                u_curr[j + 1] = g + (fine_vals[j] - g_prev[j])

            err_hist.append(_scan_error(u_curr, u_prev, forced))
            new_frontier = check_convergence(u_curr, u_prev, tol, forced)
            frontier_hist.append(new_frontier)
            u_prev, g_prev = u_curr, g_curr
            if forced == n_slices:
                outcome = "exhausted" if k == n_slices else "converged"
                break
            if new_frontier == n_slices:
                outcome = "converged"
                break
            frontier = new_frontier
    except BlowUpError as err:
        outcome = "blow_up"
        blow_slice = err.slice_index
        blow_iter = err.iteration if err.iteration is not None else k_done

    report = ConvergenceReport(
        algorithm="parareal",
        outcome=outcome,
        n_iterations=k_done,
        n_slices=n_slices,
        tolerance=tol,
        frontier_history=frontier_hist,
        error_history=err_hist,
        timings=clock.summary(),
        workers=exec_.workers,
        cost_model=_cost_model(clock, n_slices, k_done),
        blow_up_iteration=blow_iter,
        blow_up_slice=blow_slice,
        schedule=clock.events,
    )
    return SolutionTable(mesh, u_prev), report


def _cost_model(clock: PhaseClock, n_slices: int, k: int) -> CostModel | None:
    if not clock.fine_durations or not clock.coarse_durations or k == 0:
        return None
    t_fine = max(float(np.median(clock.fine_durations)), 1e-9)
    t_coarse = max(float(np.median(clock.coarse_durations)), 1e-9)
    return CostModel(t_fine, t_coarse, n_slices, k)
