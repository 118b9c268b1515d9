import numpy as np
import pytest

from gparareal.integrators import SolverSpec, TimeMesh, serial_fine_solve
from gparareal.ode_models import OdeSystem, make_fhn
from gparareal.parareal import check_convergence, run_parareal
from gparareal.runtime import Executor


def small_fhn():
    """Desk-small FHN problem: J=8 over [0,8], cheap fine solver."""
    sys = make_fhn(t_end=8.0)
    fine = SolverSpec(4, 1600, "fine")
    coarse = SolverSpec(2, 32, "coarse")
    mesh = TimeMesh.for_system(sys, 8)
    return sys, fine, coarse, mesh


def diffs_to_matrices(diffs):
    """Build iterate matrices whose successive differences at nodes 1..n are
    the given values (node 0 pinned at zero difference)."""
    prev = np.zeros((len(diffs) + 1, 1))
    curr = prev.copy()
    for i, d in enumerate(diffs, start=1):
        curr[i, 0] = d
    return curr, prev


def test_check_convergence_stops_at_first_violation():
    curr, prev = diffs_to_matrices([1e-7, 1e-7, 1e-3, 1e-8])
    assert check_convergence(curr, prev, 1e-6, 0) == 2


def test_check_convergence_all_zero_diffs():
    curr, prev = diffs_to_matrices([0.0, 0.0, 0.0, 0.0])
    assert check_convergence(curr, prev, 1e-6, 0) == 4


def test_check_convergence_componentwise_max():
    # a slice converges only if every component is below tolerance
    prev = np.zeros((3, 2))
    curr = np.zeros((3, 2))
    curr[1] = [1e-9, 1e-3]
    assert check_convergence(curr, prev, 1e-6, 0) == 0
    curr[1] = [1e-9, 1e-9]
    curr[2] = [1e-9, 1e-7]
    assert check_convergence(curr, prev, 1e-6, 0) == 2


def test_check_convergence_never_retreats():
    curr, prev = diffs_to_matrices([1e-3, 1e-3])
    assert check_convergence(curr, prev, 1e-6, 1) == 1


def test_zero_tolerance_never_advances_by_scan():
    curr, prev = diffs_to_matrices([0.0, 0.0])
    assert check_convergence(curr, prev, 0.0, 0) == 0


def test_identical_solvers_converge_first_iteration_bitwise():
    sys, fine, _, mesh = small_fhn()
    table, report = run_parareal(sys, fine, fine, mesh, 1e-6)
    assert report.outcome == "converged"
    assert report.n_iterations == 1
    assert np.array_equal(table.states, serial_fine_solve(sys, fine, mesh))


def test_frontier_rows_equal_serial_fine_bitwise():
    sys, fine, coarse, mesh = small_fhn()
    reference = serial_fine_solve(sys, fine, mesh)
    for k in range(1, 5):
        table, report = run_parareal(sys, fine, coarse, mesh, 1e-6, max_iterations=k)
        assert report.n_iterations == k
        assert np.array_equal(table.states[: k + 1], reference[: k + 1]), (
            f"rows 0..{k} diverge from the serial fine solution"
        )


def test_zero_tolerance_exhausts_to_serial_fine_bitwise():
    sys, fine, coarse, mesh = small_fhn()
    table, report = run_parareal(sys, fine, coarse, mesh, 0.0)
    assert report.outcome == "exhausted"
    assert report.n_iterations == mesh.n_slices
    assert np.array_equal(table.states, serial_fine_solve(sys, fine, mesh))


def test_frontier_history_monotone():
    sys, fine, coarse, mesh = small_fhn()
    _, report = run_parareal(sys, fine, coarse, mesh, 1e-6)
    hist = report.frontier_history
    assert all(a <= b for a, b in zip(hist, hist[1:]))
    assert hist[-1] == mesh.n_slices
    assert all(e >= 0 for e in report.error_history)


def test_worker_count_independence_bitwise():
    sys, fine, coarse, mesh = small_fhn()
    tables = {}
    reports = {}
    for workers, mode in ((1, "serial"), (2, "thread"), (40, "thread")):
        table, report = run_parareal(
            sys, fine, coarse, mesh, 1e-6, Executor(workers, mode)
        )
        tables[workers] = table.states
        reports[workers] = report
    assert np.array_equal(tables[1], tables[2])
    assert np.array_equal(tables[1], tables[40])
    assert len({r.n_iterations for r in reports.values()}) == 1
    assert len({tuple(r.frontier_history) for r in reports.values()}) == 1


def test_converged_slices_frozen():
    sys, fine, coarse, mesh = small_fhn()
    previous = None
    for k in range(1, 6):
        table, report = run_parareal(sys, fine, coarse, mesh, 1e-6, max_iterations=k)
        frontier = report.final_frontier
        if previous is not None:
            prev_states, prev_frontier = previous
            upto = min(prev_frontier, frontier) + 1
            assert np.array_equal(table.states[:upto], prev_states[:upto])
        previous = (table.states, frontier)
        if report.outcome == "converged":
            break


def test_blow_up_reported_with_partial_table():
    # far-out initial value overflows the coarse RK2 sweep immediately
    sys = make_fhn(u0=(8.0, 8.0), t_end=8.0)
    fine = SolverSpec(4, 1600, "fine")
    coarse = SolverSpec(2, 32, "coarse")
    mesh = TimeMesh.for_system(sys, 8)
    table, report = run_parareal(sys, fine, coarse, mesh, 1e-6)
    assert report.outcome == "blow_up"
    assert report.blow_up_slice is not None
    assert report.blow_up_iteration is not None
    assert np.array_equal(table.states[0], sys.u0)
    assert np.isnan(table.states[-1]).all()


def test_solution_row_zero_is_initial_value_exactly():
    sys, fine, coarse, mesh = small_fhn()
    table, _ = run_parareal(sys, fine, coarse, mesh, 1e-6)
    assert np.array_equal(table.states[0], sys.u0)


def test_negative_tolerance_rejected():
    sys, fine, coarse, mesh = small_fhn()
    with pytest.raises(ValueError, match="tolerance"):
        run_parareal(sys, fine, coarse, mesh, -1.0)


def test_mesh_window_must_match_system():
    sys, fine, coarse, _ = small_fhn()
    with pytest.raises(ValueError, match="window"):
        run_parareal(sys, fine, coarse, TimeMesh(0.0, 4.0, 8), 1e-6)


def test_schedule_fine_tasks_start_after_consumed_data_exists():
    sys, fine, coarse, mesh = small_fhn()
    _, report = run_parareal(sys, fine, coarse, mesh, 1e-6)
    by_iter_fine = {}
    by_iter_serial_end = {}
    for ev in report.schedule:
        if ev.phase == "fine":
            by_iter_fine.setdefault(ev.iteration, []).append(ev)
        else:
            prev = by_iter_serial_end.get(ev.iteration, 0.0)
            by_iter_serial_end[ev.iteration] = max(prev, ev.end)
    assert by_iter_fine, "no fine events recorded"
    for iteration, events in by_iter_fine.items():
        upstream = by_iter_serial_end.get(iteration - 1, 0.0)
        assert min(e.start for e in events) >= upstream - 1e-9


def test_parareal_report_has_zero_emulator_phases():
    sys, fine, coarse, mesh = small_fhn()
    _, report = run_parareal(sys, fine, coarse, mesh, 1e-6)
    assert report.timings.emulator_condition == 0.0
    assert report.timings.emulator_optimize == 0.0
    parts = report.timings
    total_parts = (parts.coarse + parts.fine + parts.emulator_condition
                   + parts.emulator_optimize + parts.overhead)
    assert total_parts == pytest.approx(parts.total, rel=0.05)
