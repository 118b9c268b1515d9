"""Benchmark ODE systems and helpers for building autonomous vector fields.

All systems are stored in autonomous form: the right-hand side maps a state
in R^d to its derivative. Time-dependent vector fields are converted with
:func:`autonomize`, which prepends a clock component with unit derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._jit import njit

__all__ = [
    "OdeSystem",
    "ParamRhs",
    "AugmentedRhs",
    "make_fhn",
    "make_rossler",
    "autonomize",
    "autonomized_system",
    "build_system",
    "SYSTEM_LABELS",
]


@dataclass(frozen=True, eq=False)
class OdeSystem:
    """An autonomous initial value problem du/dt = rhs(u) on [t0, t_end].

    Attributes
    ----------
    label : str
        Identifier used by the CLI and legacy archives.
    dimension : int
        State dimension d.
    rhs : callable
        Vector field, maps a length-d ndarray to a length-d ndarray.
        Must be a pure function: safe to call concurrently.
    t0, t_end : float
        Integration window, t_end > t0.
    u0 : ndarray
        Initial state at t0.
    """

    label: str
    dimension: int
    rhs: Callable[[np.ndarray], np.ndarray]
    t0: float
    t_end: float
    u0: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError(f"dimension must be positive, got {self.dimension}")
        if not self.t_end > self.t0:
            raise ValueError(f"need t_end > t0, got [{self.t0}, {self.t_end}]")
        u0 = np.asarray(self.u0, dtype=np.float64)
        if u0.shape != (self.dimension,):
            raise ValueError(f"u0 has shape {u0.shape}, expected ({self.dimension},)")
        object.__setattr__(self, "u0", u0)

    @property
    def window(self) -> float:
        return self.t_end - self.t0


@dataclass(frozen=True, eq=False)
class ParamRhs:
    """Vector field f(u) = kernel(u, params).

    The kernel is a module-level (optionally numba-compiled) function, so the
    wrapper pickles cleanly for process pools and the integrator can hand the
    kernel/params pair to a compiled stepping loop.
    """

    kernel: Callable[[np.ndarray, np.ndarray], np.ndarray]
    params: np.ndarray

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.kernel(u, self.params)


@dataclass(frozen=True, eq=False)
class AugmentedRhs:
    """Autonomous form of a time-dependent field: state = (clock, u)."""

    rhs_t: Callable[[float, np.ndarray], np.ndarray]
    dim: int

    def __call__(self, state: np.ndarray) -> np.ndarray:
        out = np.empty(self.dim + 1)
        out[0] = 1.0
        out[1:] = self.rhs_t(state[0], state[1:])
        return out


@njit(cache=True, nogil=True)
def _fhn_kernel(u, p):
    a, b, c = p[0], p[1], p[2]
    out = np.empty(2)
    out[0] = c * (u[0] - u[0] ** 3 / 3.0 + u[1])
    out[1] = -(u[0] - a + b * u[1]) / c
    return out


@njit(cache=True, nogil=True)
def _rossler_kernel(u, p):
    ah, bh, ch = p[0], p[1], p[2]
    out = np.empty(3)
    out[0] = -u[1] - u[2]
    out[1] = u[0] + ah * u[1]
    out[2] = bh + u[2] * (u[0] - ch)
    return out


def make_fhn(
    a: float = 0.2,
    b: float = 0.2,
    c: float = 3.0,
    u0: Sequence[float] = (-1.0, 1.0),
    t0: float = 0.0,
    t_end: float = 40.0,
) -> OdeSystem:
    """FitzHugh-Nagumo oscillator.

    u1' = c (u1 - u1^3/3 + u2),  u2' = -(u1 - a + b u2) / c.

    Raises
    ------
    ValueError
        If c == 0 (the second equation divides by c).
    """
    if c == 0:
        raise ValueError("FitzHugh-Nagumo parameter c must be nonzero")
    params = np.array([a, b, c], dtype=np.float64)
    return OdeSystem(
        label="fhn",
        dimension=2,
        rhs=ParamRhs(_fhn_kernel, params),
        t0=t0,
        t_end=t_end,
        u0=np.asarray(u0, dtype=np.float64),
    )


def make_rossler(
    ah: float = 0.2,
    bh: float = 0.2,
    ch: float = 5.7,
    u0: Sequence[float] = (0.0, -6.78, 0.02),
    t0: float = 0.0,
    t_end: float = 340.0,
) -> OdeSystem:
    """Rossler system, chaotic at the default parameters.

    u1' = -u2 - u3,  u2' = u1 + ah u2,  u3' = bh + u3 (u1 - ch).
    """
    params = np.array([ah, bh, ch], dtype=np.float64)
    return OdeSystem(
        label="rossler",
        dimension=3,
        rhs=ParamRhs(_rossler_kernel, params),
        t0=t0,
        t_end=t_end,
        u0=np.asarray(u0, dtype=np.float64),
    )


def autonomize(rhs_t: Callable[[float, np.ndarray], np.ndarray], dim: int) -> AugmentedRhs:
    """Turn a time-dependent field (t, u) -> du into an autonomous one.

    The returned field acts on (dim + 1)-vectors whose component 0 is the
    clock (derivative exactly 1); components 1..dim evaluate rhs_t at
    (state[0], state[1:]). For a time-independent rhs_t the u-components of a
    fixed-step integration match the unaugmented integration bitwise, since
    the per-component arithmetic is identical.
    """
    return AugmentedRhs(rhs_t, dim)


def autonomized_system(
    label: str,
    rhs_t: Callable[[float, np.ndarray], np.ndarray],
    dim: int,
    u0: Sequence[float],
    t0: float,
    t_end: float,
) -> OdeSystem:
    """Build the (dim + 1)-dimensional autonomous system for a time-dependent field.

    The initial state gets the clock prepended: (t0, u0).
    """
    u0 = np.asarray(u0, dtype=np.float64)
    if u0.shape != (dim,):
        raise ValueError(f"u0 has shape {u0.shape}, expected ({dim},)")
    return OdeSystem(
        label=label,
        dimension=dim + 1,
        rhs=autonomize(rhs_t, dim),
        t0=t0,
        t_end=t_end,
        u0=np.concatenate(([t0], u0)),
    )


SYSTEM_LABELS = ("fhn", "rossler")

_SYSTEM_DEFAULTS = {
    "fhn": ((0.2, 0.2, 3.0), (-1.0, 1.0)),
    "rossler": ((0.2, 0.2, 5.7), (0.0, -6.78, 0.02)),
}


def build_system(
    label: str,
    params: Sequence[float] | None = None,
    u0: Sequence[float] | None = None,
    t0: float = 0.0,
    t_end: float | None = None,
) -> OdeSystem:
    """Construct a benchmark system by label with optional parameter overrides.

    Parameter order: fhn -> (a, b, c); rossler -> (ah, bh, ch).
    """
    if label not in _SYSTEM_DEFAULTS:
        raise ValueError(f"unknown system {label!r}; choose from {SYSTEM_LABELS}")
    default_params, default_u0 = _SYSTEM_DEFAULTS[label]
    params = tuple(default_params if params is None else params)
    u0 = tuple(default_u0 if u0 is None else u0)
    if len(params) != 3:
        raise ValueError(f"system {label!r} takes 3 parameters, got {len(params)}")
    if label == "fhn":
        if t_end is None:
            t_end = 40.0
        return make_fhn(*params, u0=u0, t0=t0, t_end=t_end)
    if t_end is None:
        t_end = 340.0
    return make_rossler(*params, u0=u0, t0=t0, t_end=t_end)
