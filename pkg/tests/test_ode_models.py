import numpy as np
import pytest

from gparareal.integrators import SolverSpec, TimeMesh, propagate, serial_fine_solve
from gparareal.ode_models import (
    OdeSystem,
    autonomize,
    autonomized_system,
    build_system,
    make_fhn,
    make_rossler,
)


def test_fhn_rhs_at_origin():
    # u1' = 3*(0 - 0 + 0) = 0, u2' = -(0 - 0.2 + 0)/3 = 0.2/3
    sys = make_fhn(0.2, 0.2, 3.0)
    du = sys.rhs(np.array([0.0, 0.0]))
    assert du[0] == 0.0
    assert du[1] == pytest.approx(0.2 / 3.0, rel=1e-15)


def test_fhn_rhs_hand_evaluated():
    # at (-1, 1): u1' = 3*(-1 + 1/3 + 1) = 1, u2' = -(-1 - 0.2 + 0.2)/3 = 1/3
    sys = make_fhn(0.2, 0.2, 3.0)
    du = sys.rhs(np.array([-1.0, 1.0]))
    assert du[0] == pytest.approx(1.0, rel=1e-14)
    assert du[1] == pytest.approx(1.0 / 3.0, rel=1e-14)


def test_fhn_dimension_contract():
    sys = make_fhn(0.7, 0.8, 12.5, u0=(0.1, -0.3))
    assert sys.dimension == 2
    assert sys.rhs(sys.u0).shape == (2,)


def test_fhn_rejects_zero_c():
    with pytest.raises(ValueError, match="c"):
        make_fhn(0.2, 0.2, 0.0)


def test_rossler_rhs_hand_evaluated():
    # at (0, -6.78, 0.02): (6.78 - 0.02, -1.356, 0.2 + 0.02*(-5.7))
    sys = make_rossler(0.2, 0.2, 5.7)
    du = sys.rhs(np.array([0.0, -6.78, 0.02]))
    assert du[0] == pytest.approx(6.76, rel=1e-14)
    assert du[1] == pytest.approx(-1.356, rel=1e-14)
    assert du[2] == pytest.approx(0.2 + 0.02 * -5.7, rel=1e-14)


def test_rossler_rhs_at_origin_only_constant_term():
    sys = make_rossler(0.2, 0.2, 5.7)
    du = sys.rhs(np.zeros(3))
    assert du[0] == 0.0 and du[1] == 0.0
    assert du[2] == 0.2


def test_rossler_dimension_contract():
    sys = make_rossler()
    assert sys.dimension == 3
    assert sys.rhs(sys.u0).shape == (3,)


def test_rhs_is_deterministic_pure_function():
    for sys in (make_fhn(), make_rossler()):
        state = sys.u0 + 0.125
        first = sys.rhs(state)
        for _ in range(5):
            assert np.array_equal(sys.rhs(state), first)


def test_autonomize_clock_derivative():
    rhs = autonomize(lambda t, u: np.array([t]), dim=1)
    out = rhs(np.array([2.0, 5.0]))
    assert out.tolist() == [1.0, 2.0]


def test_autonomize_clock_decouples_bitwise():
    # time-independent field: dropping the clock reproduces the plain solve
    def plain(u):
        return np.array([-0.5 * u[0] + 0.1 * u[0] ** 2])

    base = OdeSystem("decay", 1, plain, 0.0, 2.0, np.array([0.8]))
    aug = autonomized_system("decay_aug", lambda t, u: plain(u), 1, [0.8], 0.0, 2.0)
    spec = SolverSpec(4, 64)
    mesh_b = TimeMesh.for_system(base, 4)
    mesh_a = TimeMesh.for_system(aug, 4)
    states_b = serial_fine_solve(base, spec, mesh_b)
    states_a = serial_fine_solve(aug, spec, mesh_a)
    assert np.array_equal(states_a[:, 1:], states_b)


def test_autonomize_integrates_cosine_exactly():
    # u' = cos(t) over [0, pi/2] -> u(pi/2) = sin(pi/2) = 1
    aug = autonomized_system(
        "cosine", lambda t, u: np.array([np.cos(t)]), 1, [0.0], 0.0, np.pi / 2
    )
    spec = SolverSpec(4, 200)
    value = propagate(aug, spec, aug.u0, aug.t0, aug.t_end)
    assert value[0] == pytest.approx(np.pi / 2, rel=1e-12)  # the clock
    assert value[1] == pytest.approx(1.0, abs=1e-8)


def test_build_system_labels_and_overrides():
    sys = build_system("fhn")
    assert sys.label == "fhn" and sys.dimension == 2
    sys = build_system("rossler", params=(0.1, 0.1, 14.0), u0=(1.0, 1.0, 1.0), t_end=10.0)
    assert sys.dimension == 3 and sys.t_end == 10.0
    du = sys.rhs(np.array([0.0, 0.0, 0.0]))
    assert du[2] == pytest.approx(0.1)
    with pytest.raises(ValueError, match="unknown system"):
        build_system("lorenz")


def test_system_validation():
    with pytest.raises(ValueError, match="t_end"):
        make_fhn(t0=1.0, t_end=1.0)
    with pytest.raises(ValueError, match="u0"):
        make_fhn(u0=(1.0, 2.0, 3.0))
