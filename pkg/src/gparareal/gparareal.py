"""GParareal: parareal's slice structure with the correction term inferred
by a GP emulator of the fine-minus-coarse residual.

Per iteration k >= 1: fine-propagate the previous iterates on unconverged
slices in parallel; append one dataset row per fine run,

    x = V^{k-1}_j,   y = F(V^{k-1}_j) - G(V^{k-1}_j),

reusing the coarse values cached from the sweep that produced V^{k-1} (each
row therefore costs exactly one fine run); re-optimize hyperparameters
(warm-started) and re-condition the emulator on acquisition plus any legacy
rows; advance the frontier by one with the exactly fine-propagated value;
then refine serially with the posterior mean,

    V^k_{j+1} = posterior_mean(V^k_j) + G(V^k_j),

and run the same convergence scan as parareal. The refinement uses
current-iteration values, unlike parareal's previous-iteration correction.
"""

from __future__ import annotations

import numpy as np

from .gp_emulator import (
    GpEmulator,
    Hyperparameters,
    IllConditionedError,
    ResidualDataset,
    optimize_hyperparameters,
)
from .integrators import BlowUpError, SolverSpec, TimeMesh, propagate
from .ode_models import OdeSystem
from .parareal import (
    ConvergenceReport,
    SolutionTable,
    _coarse_step,
    _cost_model,
    _fine_batch,
    _scan_error,
    _validate_run,
    check_convergence,
)
from .runtime import Executor, PhaseClock

__all__ = ["run_gparareal", "refine_sweep", "merge_legacy"]


def merge_legacy(acquisition: ResidualDataset, legacy: ResidualDataset | None) -> ResidualDataset:
    """Concatenate acquisition with legacy rows, keeping acquisition on
    duplicate inputs; provenance tags are preserved."""
    merged = acquisition.copy()
    if legacy is None:
        return merged
    if legacy.dimension != acquisition.dimension:
        raise ValueError(
            f"legacy dimension {legacy.dimension} does not match "
            f"acquisition dimension {acquisition.dimension}"
        )
    for x, y, tag in zip(legacy.inputs, legacy.outputs, legacy.provenance):
        merged.append(x, y, tag)
    return merged


def refine_sweep(
    emulator: GpEmulator,
    system: OdeSystem,
    coarse: SolverSpec,
    mesh: TimeMesh,
    frontier: int,
    states: np.ndarray,
    clock: PhaseClock | None = None,
    iteration: int | None = None,
):
    """Serial refinement from the frontier node onward.

    Starting from the known value states[frontier], computes

        V_{j+1} = posterior_mean(V_j) + G(V_j),   j = frontier..J-1,

    returning (refined copy of states, per-slice coarse predictions, per-node
    posterior variances). The coarse predictions are the cache reused for the
    next iteration's residual rows; the variances are diagnostics only and
    are not propagated. Deterministic serial recursion.
    """
    n_slices = mesh.n_slices
    nodes = mesh.nodes
    refined = states.copy()
    g_cache = np.full((n_slices, states.shape[1]), np.nan)
    variances: list[float] = []
    own_clock = clock or PhaseClock()
    it = 0 if iteration is None else iteration
    for j in range(frontier, n_slices):
        g = _coarse_step(system, coarse, refined[j], nodes[j], nodes[j + 1], j, it, own_clock)
        mean, var = emulator.predict(refined[j])
        refined[j + 1] = mean + g
        g_cache[j] = g
        variances.append(float(np.max(var)))
    return refined, g_cache, variances


def run_gparareal(
    system: OdeSystem,
    fine: SolverSpec,
    coarse: SolverSpec,
    mesh: TimeMesh,
    tol: float,
    executor: Executor | None = None,
    legacy: ResidualDataset | None = None,
    init_hyperparameters: list[Hyperparameters] | None = None,
    max_iterations: int | None = None,
) -> tuple[SolutionTable, ConvergenceReport, ResidualDataset]:
    """Solve the IVP with GParareal, optionally warm-started with legacy data.

    Returns the solution table, the convergence report (including final
    hyperparameters, dataset sizes and per-iteration posterior-variance
    diagnostics), and the accumulated acquisition dataset, reusable as
    legacy data for future runs of the same system/solver pair.

    Raises
    ------
    IllConditionedError
        If the emulator cannot be conditioned even at maximum jitter.
    """
    _validate_run(system, fine, coarse, mesh, tol)
    if legacy is not None and legacy.dimension != system.dimension:
        raise ValueError(
            f"legacy dimension {legacy.dimension} does not match system "
            f"dimension {system.dimension}"
        )
    exec_ = executor or Executor(1, "serial")
    n_slices, dim = mesh.n_slices, system.dimension
    nodes = mesh.nodes
    clock = PhaseClock()

    acquisition = ResidualDataset(dim)
    thetas = (
        list(init_hyperparameters)
        if init_hyperparameters is not None
        else [Hyperparameters(1.0, 1.0)] * dim
    )
    if len(thetas) != dim:
        raise ValueError(f"need {dim} initial hyperparameter pairs, got {len(thetas)}")

    v_prev = np.full((n_slices + 1, dim), np.nan)
    v_prev[0] = system.u0
    g_prev = np.full((n_slices, dim), np.nan)
    frontier_hist: list[int] = []
    err_hist: list[float] = []
    variance_hist: list[list[float]] = []
    run_warnings: list[str] = []
    outcome = "exhausted"
    k_done = 0
    blow_slice = blow_iter = None
    kmax = n_slices if max_iterations is None else min(max_iterations, n_slices)
    use_legacy = legacy is not None and len(legacy) > 0

    try:
        for j in range(n_slices):
            g = _coarse_step(system, coarse, v_prev[j], nodes[j], nodes[j + 1], j, 0, clock)
            g_prev[j] = g
            v_prev[j + 1] = g

        frontier = 0
        for k in range(1, kmax + 1):
            k_done = k
            fine_vals = _fine_batch(system, fine, v_prev, nodes, frontier, k, exec_, clock)

            for j in range(frontier, n_slices):
                acquisition.append(v_prev[j], fine_vals[j] - g_prev[j])
            train = merge_legacy(acquisition, legacy) if use_legacy else acquisition

            with clock.phase("emulator_optimize", iteration=k):
                thetas, flags = optimize_hyperparameters(train, init=thetas)
            if not all(flags):
                dims = [i for i, ok in enumerate(flags) if not ok]
                run_warnings.append(
                    f"iteration {k}: optimizer reported no success for output "
                    f"dimensions {dims}; kept best iterate seen"
                )
            with clock.phase("emulator_condition", iteration=k):
                try:
                    emulator = GpEmulator.condition(train, thetas)
                except IllConditionedError as err:
                    err.iteration = k
                    raise

            v_curr = v_prev.copy()
            forced = frontier + 1
            v_curr[forced] = fine_vals[frontier]
            if forced < n_slices:
                v_curr, g_curr, variances = refine_sweep(
                    emulator, system, coarse, mesh, forced, v_curr,
                    clock=clock, iteration=k,
                )
            else:
                g_curr, variances = g_prev.copy(), []
            variance_hist.append(variances)

            err_hist.append(_scan_error(v_curr, v_prev, forced))
            new_frontier = check_convergence(v_curr, v_prev, tol, forced)
            frontier_hist.append(new_frontier)
            v_prev, g_prev = v_curr, g_curr
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
        algorithm="gparareal",
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
        warnings=run_warnings,
        hyperparameters=list(thetas),
        dataset_rows=len(acquisition),
        legacy_rows=len(legacy) if legacy is not None else 0,
        refine_variances=variance_hist,
        schedule=clock.events,
    )
    return SolutionTable(mesh, v_prev), report, acquisition
