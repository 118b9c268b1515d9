"""Fixed-step explicit Runge-Kutta propagators used as coarse and fine solvers.

Orders 1 (Euler), 2 (explicit midpoint) and 4 (classic RK4) over autonomous
systems. The step size is derived once from (window, steps_total) and reused
for every slice, so concatenating slice propagations is bitwise identical to
one propagation over the union: there is no per-call re-derivation of h.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import NUMBA_AVAILABLE, njit
from .ode_models import OdeSystem, ParamRhs

__all__ = [
    "SolverSpec",
    "TimeMesh",
    "BlowUpError",
    "propagate",
    "serial_fine_solve",
]

_ORDERS = (1, 2, 4)


class BlowUpError(RuntimeError):
    """A non-finite state appeared during integration.

    Carries the zero-based step index within the failing propagation; the
    slice index and iteration are attached by the caller that knows them.
    """

    def __init__(self, step_index: int, slice_index: int | None = None,
                 iteration: int | None = None):
        super().__init__(step_index, slice_index, iteration)
        self.step_index = step_index
        self.slice_index = slice_index
        self.iteration = iteration

    def __str__(self) -> str:
        where = f"step {self.step_index}"
        if self.slice_index is not None:
            where += f", slice {self.slice_index}"
        if self.iteration is not None:
            where += f", iteration {self.iteration}"
        return f"integration blew up (non-finite state) at {where}"


@dataclass(frozen=True)
class SolverSpec:
    """One-step RK propagator: order, total step count, role.

    steps_total counts steps over the whole window [t0, t_end]; it must be
    divisible by the mesh slice count so each slice gets whole steps.
    """

    order: int
    steps_total: int
    role: str = "fine"

    def __post_init__(self):
        if self.order not in _ORDERS:
            raise ValueError(f"order must be one of {_ORDERS}, got {self.order}")
        if self.steps_total < 1:
            raise ValueError(f"steps_total must be positive, got {self.steps_total}")
        if self.role not in ("fine", "coarse"):
            raise ValueError(f"role must be 'fine' or 'coarse', got {self.role!r}")

    def step_size(self, system: OdeSystem) -> float:
        return (system.t_end - system.t0) / self.steps_total

    def steps_per_slice(self, n_slices: int) -> int:
        if self.steps_total % n_slices != 0:
            raise ValueError(
                f"{self.role} steps_total={self.steps_total} not divisible by "
                f"{n_slices} slices"
            )
        return self.steps_total // n_slices


@dataclass(frozen=True)
class TimeMesh:
    """Uniform mesh t_j = t0 + j * delta, j = 0..n_slices."""

    t0: float
    t_end: float
    n_slices: int

    def __post_init__(self):
        if not self.t_end > self.t0:
            raise ValueError(f"need t_end > t0, got [{self.t0}, {self.t_end}]")
        if self.n_slices < 1:
            raise ValueError(f"n_slices must be positive, got {self.n_slices}")

    @property
    def delta(self) -> float:
        return (self.t_end - self.t0) / self.n_slices

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.delta * np.arange(self.n_slices + 1)

    @classmethod
    def for_system(cls, system: OdeSystem, n_slices: int) -> "TimeMesh":
        return cls(system.t0, system.t_end, n_slices)


# Compiled stepping loops. Each returns (state, blown_step) with
# blown_step = -1 on success, else the index of the first non-finite step.

@njit(cache=True, nogil=True)
def _euler_loop(rhs, p, u0, h, n):
    u = u0.copy()
    for i in range(n):
        u = u + h * rhs(u, p)
        if not np.isfinite(u).all():
            return u, i
    return u, -1


@njit(cache=True, nogil=True)
def _midpoint_loop(rhs, p, u0, h, n):
    u = u0.copy()
    for i in range(n):
        k1 = rhs(u, p)
        k2 = rhs(u + 0.5 * h * k1, p)
        u = u + h * k2
        if not np.isfinite(u).all():
            return u, i
    return u, -1


@njit(cache=True, nogil=True)
def _rk4_loop(rhs, p, u0, h, n):
    u = u0.copy()
    for i in range(n):
        k1 = rhs(u, p)
        k2 = rhs(u + 0.5 * h * k1, p)
        k3 = rhs(u + 0.5 * h * k2, p)
        k4 = rhs(u + h * k3, p)
        u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(u).all():
            return u, i
    return u, -1


_JIT_LOOPS = {1: _euler_loop, 2: _midpoint_loop, 4: _rk4_loop}


def _euler_loop_py(rhs, u0, h, n):
    u = u0.copy()
    for i in range(n):
        u = u + h * rhs(u)
        if not np.isfinite(u).all():
            return u, i
    return u, -1


def _midpoint_loop_py(rhs, u0, h, n):
    u = u0.copy()
    for i in range(n):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * h * k1)
        u = u + h * k2
        if not np.isfinite(u).all():
            return u, i
    return u, -1


def _rk4_loop_py(rhs, u0, h, n):
    u = u0.copy()
    for i in range(n):
        k1 = rhs(u)
        k2 = rhs(u + 0.5 * h * k1)
        k3 = rhs(u + 0.5 * h * k2)
        k4 = rhs(u + h * k3)
        u = u + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(u).all():
            return u, i
    return u, -1


_PY_LOOPS = {1: _euler_loop_py, 2: _midpoint_loop_py, 4: _rk4_loop_py}


def _step_count(t_start: float, t_end: float, h: float) -> int:
    raw = (t_end - t_start) / h
    n = int(round(raw))
    if n < 1 or abs(raw - n) > 1e-6 * max(1.0, raw):
        raise ValueError(
            f"[{t_start}, {t_end}] is not a whole number of steps of size {h} "
            f"(got {raw}); align steps_total with the slice count"
        )
    return n


def propagate(
    system: OdeSystem,
    spec: SolverSpec,
    u: np.ndarray,
    t_start: float,
    t_end: float,
) -> np.ndarray:
    """Advance state u from t_start to t_end with whole fixed-size RK steps.

    Deterministic pure function; safe for concurrent invocation. A non-finite
    input counts as an immediate blow-up at step 0, so heatmap sweeps record
    failed predictor states the same way as mid-integration overflow.

    Raises
    ------
    BlowUpError
        If any state component becomes non-finite.
    """
    if not t_end > t_start:
        raise ValueError(f"need t_end > t_start, got [{t_start}, {t_end}]")
    h = spec.step_size(system)
    n = _step_count(t_start, t_end, h)
    u = np.asarray(u, dtype=np.float64)
    if not np.isfinite(u).all():
        raise BlowUpError(0)
    rhs = system.rhs
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        if NUMBA_AVAILABLE and isinstance(rhs, ParamRhs):
            out, blown = _JIT_LOOPS[spec.order](rhs.kernel, rhs.params, u, h, n)
        else:
            out, blown = _PY_LOOPS[spec.order](rhs, u, h, n)
    if blown >= 0:
        raise BlowUpError(blown)
    return out


def serial_fine_solve(
    system: OdeSystem,
    fine: SolverSpec,
    mesh: TimeMesh,
) -> np.ndarray:
    """Sequential fine reference: U_0 = u0, U_{j+1} = F(U_j) over each slice.

    Ground truth for all accuracy comparisons. Equals a single propagate over
    the full window bitwise, since the step size is shared.

    Returns
    -------
    ndarray of shape (n_slices + 1, d).
    """
    fine.steps_per_slice(mesh.n_slices)
    nodes = mesh.nodes
    states = np.empty((mesh.n_slices + 1, system.dimension))
    states[0] = system.u0
    for j in range(mesh.n_slices):
        try:
            states[j + 1] = propagate(system, fine, states[j], nodes[j], nodes[j + 1])
        except BlowUpError as err:
            err.slice_index = j
            raise
    return states
