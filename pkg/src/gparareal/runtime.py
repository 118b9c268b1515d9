"""Parallel execution contract, wallclock instrumentation, and the speedup model.

parallel_map is the single concurrency entry point: results are assembled by
task index, so outputs are bitwise independent of the worker count and of
scheduling order. Failures are surfaced only after every task has settled,
and deterministically (lowest failing task index wins).
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Callable, Iterable

__all__ = [
    "Executor",
    "parallel_map",
    "CostModel",
    "predict_times",
    "PhaseTimings",
    "PhaseClock",
    "ScheduleEvent",
]

_MODES = ("serial", "thread", "process")


class Executor:
    """Bounded-parallelism ordered map over independent tasks.

    mode "thread" suits numba-compiled tasks (kernels release the GIL);
    "process" needs picklable functions and arguments; "serial" runs inline.
    """

    def __init__(self, workers: int = 1, mode: str = "thread"):
        if workers < 1:
            raise ValueError(f"workers must be positive, got {workers}")
        if mode not in _MODES:
            raise ValueError(f"mode must be one of {_MODES}, got {mode!r}")
        self.workers = workers
        self.mode = mode

    def map(self, fn: Callable, items: Iterable) -> list:
        items = list(items)
        if not items:
            return []
        results: list = [None] * len(items)
        errors: list[tuple[int, BaseException]] = []
        if self.mode == "serial" or self.workers == 1 or len(items) == 1:
            for i, item in enumerate(items):
                try:
                    results[i] = fn(item)
                except Exception as exc:  # settle-all: keep going, raise later
                    errors.append((i, exc))
        else:
            pool_cls = ThreadPoolExecutor if self.mode == "thread" else ProcessPoolExecutor
            with pool_cls(max_workers=min(self.workers, len(items))) as pool:
                futures = [pool.submit(fn, item) for item in items]
                for i, fut in enumerate(futures):
                    try:
                        results[i] = fut.result()
                    except Exception as exc:
                        errors.append((i, exc))
        if errors:
            index, exc = min(errors, key=lambda e: e[0])
            exc.task_index = index
            raise exc
        return results


def parallel_map(fn: Callable, items: Iterable, workers: int = 1, mode: str = "thread") -> list:
    """Run fn over items with bounded concurrency; results in item order."""
    return Executor(workers, mode).map(fn, items)


@dataclass(frozen=True)
class CostModel:
    """Measured per-slice solver costs feeding the analytic wallclock model.

    t_fine and t_coarse are median wallclock seconds of one fine/coarse slice
    run; n_slices is the mesh slice count J and n_iterations the observed k.
    """

    t_fine: float
    t_coarse: float
    n_slices: int
    n_iterations: int

    def __post_init__(self):
        # t_coarse = 0 is the vanishing-coarse-cost limit (speedup J/k)
        if self.t_fine <= 0 or self.t_coarse < 0:
            raise ValueError("per-slice costs must be positive")
        if self.n_slices < 1 or self.n_iterations < 0:
            raise ValueError("invalid slice/iteration counts")


def predict_times(model: CostModel) -> tuple[float, float, float]:
    """Analytic (T_serial, T_parallel, speedup) for a J-processor run.

    T_serial = J * t_fine.
    T_parallel = k * t_fine + (k + 1) * (J - k/2) * t_coarse, the worst-case
    wallclock of the initial coarse sweep plus k rounds of one parallel fine
    batch and a shrinking serial predictor sweep.
    Speedup = T_serial / T_parallel; decreasing in k for fixed costs.
    """
    j, k = model.n_slices, model.n_iterations
    t_serial = j * model.t_fine
    t_parallel = k * model.t_fine + (k + 1) * (j - k / 2.0) * model.t_coarse
    return t_serial, t_parallel, t_serial / t_parallel


@dataclass
class PhaseTimings:
    """Wallclock seconds per run phase; overhead is the unattributed remainder."""

    coarse: float = 0.0
    fine: float = 0.0
    emulator_condition: float = 0.0
    emulator_optimize: float = 0.0
    overhead: float = 0.0
    total: float = 0.0

    def as_dict(self) -> dict[str, float]:
        return {
            "coarse": self.coarse,
            "fine": self.fine,
            "emulator_condition": self.emulator_condition,
            "emulator_optimize": self.emulator_optimize,
            "overhead": self.overhead,
            "total": self.total,
        }


@dataclass(frozen=True)
class ScheduleEvent:
    """One timed task for Gantt rendering; times are seconds since run start."""

    iteration: int
    slice_index: int
    phase: str
    start: float
    end: float


class PhaseClock:
    """Accumulates per-phase wallclock and a schedule log during one run.

    Uses the wall clock (time.time) for event timestamps so events recorded
    inside worker processes share an origin with the parent.
    """

    def __init__(self):
        self._wall0 = time.time()
        self._perf0 = time.perf_counter()
        self._acc: dict[str, float] = {}
        self.events: list[ScheduleEvent] = []
        self.fine_durations: list[float] = []
        self.coarse_durations: list[float] = []

    @property
    def wall0(self) -> float:
        return self._wall0

    def now(self) -> float:
        return time.time() - self._wall0

    def add(self, phase: str, seconds: float) -> None:
        self._acc[phase] = self._acc.get(phase, 0.0) + seconds

    @contextmanager
    def phase(self, name: str, iteration: int | None = None, slice_index: int = -1):
        """Accumulate the enclosed wallclock under `name`; log an event if
        an iteration is given."""
        start = self.now()
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - t0)
            if iteration is not None:
                self.record_event(iteration, slice_index, name, start, self.now())

    def record_event(self, iteration: int, slice_index: int, phase: str,
                     start: float, end: float) -> None:
        self.events.append(ScheduleEvent(iteration, slice_index, phase, start, end))

    def record_coarse(self, iteration: int, slice_index: int,
                      start: float, end: float) -> None:
        self.add("coarse", end - start)
        self.coarse_durations.append(end - start)
        self.record_event(iteration, slice_index, "coarse", start, end)

    def record_fine(self, iteration: int, slice_index: int,
                    start: float, end: float) -> None:
        self.fine_durations.append(end - start)
        self.record_event(iteration, slice_index, "fine", start, end)

    def add_fine_wall(self, seconds: float) -> None:
        # elapsed wallclock of the parallel fine batch, not the sum of tasks
        self.add("fine", seconds)

    def summary(self) -> PhaseTimings:
        total = time.perf_counter() - self._perf0
        coarse = self._acc.get("coarse", 0.0)
        fine = self._acc.get("fine", 0.0)
        cond = self._acc.get("emulator_condition", 0.0)
        opt = self._acc.get("emulator_optimize", 0.0)
        overhead = max(total - coarse - fine - cond - opt, 0.0)
        return PhaseTimings(coarse, fine, cond, opt, overhead, total)
