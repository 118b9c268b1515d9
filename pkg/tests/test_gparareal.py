import numpy as np
import pytest

from gparareal.gp_emulator import GpEmulator, Hyperparameters, ResidualDataset
from gparareal.gparareal import merge_legacy, refine_sweep, run_gparareal
from gparareal.integrators import SolverSpec, TimeMesh, propagate, serial_fine_solve
from gparareal.ode_models import make_fhn
from gparareal.parareal import run_parareal
from gparareal.runtime import Executor


def small_fhn():
    sys = make_fhn(t_end=8.0)
    fine = SolverSpec(4, 1600, "fine")
    coarse = SolverSpec(2, 32, "coarse")
    mesh = TimeMesh.for_system(sys, 8)
    return sys, fine, coarse, mesh


def test_identical_solvers_zero_residuals_converge_first_iteration():
    sys, fine, _, mesh = small_fhn()
    table, report, dataset = run_gparareal(sys, fine, fine, mesh, 1e-6)
    assert report.outcome == "converged"
    assert report.n_iterations == 1
    assert np.array_equal(table.states, serial_fine_solve(sys, fine, mesh))
    assert np.all(dataset.outputs == 0.0)


def test_refine_sweep_interpolates_training_point():
    # with one training row (x*, F(x*) - G(x*)), refining from x* gives F(x*)
    sys, fine, coarse, mesh = small_fhn()
    nodes = mesh.nodes
    x_star = sys.u0
    f_val = propagate(sys, fine, x_star, nodes[0], nodes[1])
    g_val = propagate(sys, coarse, x_star, nodes[0], nodes[1])
    ds = ResidualDataset(2)
    ds.append(x_star, f_val - g_val)
    em = GpEmulator.condition(ds, [Hyperparameters(1.0, 1.0)] * 2)
    states = np.full((mesh.n_slices + 1, 2), np.nan)
    states[0] = x_star
    refined, g_cache, variances = refine_sweep(em, sys, coarse, mesh, 0, states)
    assert np.allclose(refined[1], f_val, atol=1e-6)
    assert np.array_equal(g_cache[0], g_val)
    assert len(variances) == mesh.n_slices


def test_refine_sweep_zero_mean_reduces_to_coarse_sweep():
    # zero residual data -> weights are exactly zero -> sweep is pure coarse
    sys, _, coarse, mesh = small_fhn()
    ds = ResidualDataset(2)
    ds.append(sys.u0, np.zeros(2))
    ds.append(sys.u0 + 0.5, np.zeros(2))
    em = GpEmulator.condition(ds, [Hyperparameters(1.0, 1.0)] * 2)
    states = np.full((mesh.n_slices + 1, 2), np.nan)
    states[0] = sys.u0
    refined, _, _ = refine_sweep(em, sys, coarse, mesh, 0, states)
    nodes = mesh.nodes
    expected = sys.u0
    for j in range(mesh.n_slices):
        expected = propagate(sys, coarse, expected, nodes[j], nodes[j + 1])
        assert np.array_equal(refined[j + 1], expected)


def test_refine_sweep_deterministic():
    sys, fine, coarse, mesh = small_fhn()
    ds = ResidualDataset(2)
    ds.append(sys.u0, np.array([0.01, -0.02]))
    em = GpEmulator.condition(ds, [Hyperparameters(1.0, 1.0)] * 2)
    states = np.full((mesh.n_slices + 1, 2), np.nan)
    states[0] = sys.u0
    first, _, _ = refine_sweep(em, sys, coarse, mesh, 0, states)
    second, _, _ = refine_sweep(em, sys, coarse, mesh, 0, states)
    assert np.array_equal(first, second)


def test_merge_legacy_empty_is_identity():
    acq = ResidualDataset.from_arrays([[1.0, 2.0]], [[0.1, 0.2]])
    merged = merge_legacy(acq, ResidualDataset(2))
    assert len(merged) == 1
    assert np.array_equal(merged.inputs, acq.inputs)
    merged_none = merge_legacy(acq, None)
    assert len(merged_none) == 1


def test_merge_legacy_disjoint_sums_rows():
    acq = ResidualDataset.from_arrays([[0.0, 0.0], [1.0, 1.0]], [[0.1, 0.1]] * 2)
    leg = ResidualDataset.from_arrays([[2.0, 2.0], [3.0, 3.0]], [[0.2, 0.2]] * 2, "legacy")
    merged = merge_legacy(acq, leg)
    assert len(merged) == 4
    assert merged.count("acquisition") == 2
    assert merged.count("legacy") == 2


def test_merge_legacy_duplicate_keeps_acquisition_row():
    acq = ResidualDataset.from_arrays([[0.0, 0.0]], [[0.1, 0.1]])
    leg = ResidualDataset.from_arrays([[0.0, 0.0], [3.0, 3.0]], [[9.0, 9.0], [0.2, 0.2]], "legacy")
    merged = merge_legacy(acq, leg)
    assert len(merged) == 2
    row = np.where((merged.inputs == [0.0, 0.0]).all(axis=1))[0][0]
    assert merged.outputs[row, 0] == 0.1
    assert merged.provenance[row] == "acquisition"


def test_merge_legacy_dimension_mismatch():
    acq = ResidualDataset(2)
    acq.append([0.0, 0.0], [0.1, 0.1])
    with pytest.raises(ValueError, match="dimension"):
        merge_legacy(acq, ResidualDataset(3))


def test_frontier_rows_equal_serial_fine_bitwise():
    sys, fine, coarse, mesh = small_fhn()
    reference = serial_fine_solve(sys, fine, mesh)
    for k in range(1, 5):
        table, report, _ = run_gparareal(sys, fine, coarse, mesh, 1e-6, max_iterations=k)
        assert report.n_iterations == k
        assert np.array_equal(table.states[: k + 1], reference[: k + 1])


def test_zero_tolerance_exhausts_to_serial_fine_bitwise():
    sys, fine, coarse, mesh = small_fhn()
    table, report, _ = run_gparareal(sys, fine, coarse, mesh, 0.0)
    assert report.outcome == "exhausted"
    assert report.n_iterations == mesh.n_slices
    assert np.array_equal(table.states, serial_fine_solve(sys, fine, mesh))


def test_dataset_grows_one_row_per_fine_run():
    sys, fine, coarse, mesh = small_fhn()
    _, report, dataset = run_gparareal(sys, fine, coarse, mesh, 1e-6)
    frontiers = [0] + report.frontier_history[:-1]
    expected = sum(mesh.n_slices - f for f in frontiers)
    assert len(dataset) == expected
    assert dataset.count("acquisition") == len(dataset)


def test_deterministic_across_runs_and_workers():
    sys, fine, coarse, mesh = small_fhn()
    results = []
    for workers, mode in ((1, "serial"), (1, "thread"), (4, "thread"), (40, "thread")):
        table, report, dataset = run_gparareal(
            sys, fine, coarse, mesh, 1e-6, Executor(workers, mode)
        )
        results.append((table.states, report.n_iterations, dataset.inputs))
    base_states, base_k, base_inputs = results[0]
    for states, k, inputs in results[1:]:
        assert np.array_equal(states, base_states)
        assert k == base_k
        assert np.array_equal(inputs, base_inputs)


def test_legacy_data_changes_nothing_but_the_data():
    # conditioning on acquisition + legacy == conditioning on one concatenated
    # dataset; same emulator, bitwise
    rng = np.random.default_rng(61)
    X = rng.uniform(-1, 1, size=(12, 2))
    Y = 0.01 * rng.normal(size=(12, 2))
    acq = ResidualDataset.from_arrays(X[:7], Y[:7])
    leg = ResidualDataset.from_arrays(X[7:], Y[7:], "legacy")
    merged = merge_legacy(acq, leg)
    flat = ResidualDataset(2)
    for x, y in zip(X, Y):
        flat.append(x, y)
    thetas = [Hyperparameters(1.0, 1.0)] * 2
    em_merged = GpEmulator.condition(merged, thetas)
    em_flat = GpEmulator.condition(flat, thetas)
    for i in range(2):
        assert np.array_equal(em_merged.chols[i], em_flat.chols[i])
        assert np.array_equal(em_merged.weights[i], em_flat.weights[i])


def test_legacy_row_order_does_not_change_predictions():
    rng = np.random.default_rng(67)
    X = rng.uniform(-1, 1, size=(10, 2))
    Y = 0.05 * rng.normal(size=(10, 2))
    order = rng.permutation(10)
    ds_a = ResidualDataset.from_arrays(X, Y, "legacy")
    ds_b = ResidualDataset.from_arrays(X[order], Y[order], "legacy")
    thetas = [Hyperparameters(1.0, 1.0)] * 2
    em_a = GpEmulator.condition(ds_a, thetas)
    em_b = GpEmulator.condition(ds_b, thetas)
    for _ in range(10):
        x = rng.uniform(-1, 1, size=2)
        mean_a, var_a = em_a.predict(x)
        mean_b, var_b = em_b.predict(x)
        assert np.allclose(mean_a, mean_b, atol=1e-10)
        assert np.allclose(var_a, var_b, atol=1e-10)


def test_legacy_accelerates_small_problem():
    sys, fine, coarse, mesh = small_fhn()
    _, report_src, acq = run_gparareal(sys, fine, coarse, mesh, 1e-6)
    legacy = ResidualDataset(2)
    for x, y in zip(acq.inputs, acq.outputs):
        legacy.append(x, y, "legacy")
    shifted = make_fhn(u0=(-0.9, 0.9), t_end=8.0)
    _, rep_no, _ = run_gparareal(shifted, fine, coarse, mesh, 1e-6)
    _, rep_leg, _ = run_gparareal(
        shifted, fine, coarse, mesh, 1e-6,
        legacy=legacy, init_hyperparameters=report_src.hyperparameters,
    )
    assert rep_leg.n_iterations <= rep_no.n_iterations
    assert rep_leg.legacy_rows == len(legacy)


def test_legacy_dimension_mismatch_rejected():
    sys, fine, coarse, mesh = small_fhn()
    with pytest.raises(ValueError, match="dimension"):
        run_gparareal(sys, fine, coarse, mesh, 1e-6, legacy=ResidualDataset(3))


def test_blow_up_reported():
    sys = make_fhn(u0=(8.0, 8.0), t_end=8.0)
    fine = SolverSpec(4, 1600, "fine")
    coarse = SolverSpec(2, 32, "coarse")
    mesh = TimeMesh.for_system(sys, 8)
    table, report, dataset = run_gparareal(sys, fine, coarse, mesh, 1e-6)
    assert report.outcome == "blow_up"
    assert report.blow_up_slice is not None


def test_report_carries_emulator_diagnostics():
    sys, fine, coarse, mesh = small_fhn()
    _, report, dataset = run_gparareal(sys, fine, coarse, mesh, 1e-6)
    assert report.algorithm == "gparareal"
    assert len(report.hyperparameters) == 2
    assert report.dataset_rows == len(dataset)
    assert report.timings.emulator_optimize > 0.0
    assert report.timings.emulator_condition > 0.0
    assert len(report.refine_variances) == report.n_iterations
    assert all(v >= 0.0 for row in report.refine_variances for v in row)


def test_gparareal_not_slower_than_parareal_in_iterations():
    sys, fine, coarse, mesh = small_fhn()
    _, para = run_parareal(sys, fine, coarse, mesh, 1e-6)
    _, gpar, _ = run_gparareal(sys, fine, coarse, mesh, 1e-6)
    assert gpar.n_iterations <= para.n_iterations
