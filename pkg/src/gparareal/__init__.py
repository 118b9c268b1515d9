"""Time-parallel ODE solving: parareal and GParareal.

Parareal iterates a coarse/fine predictor-corrector over time slices;
GParareal replaces the correction term with the posterior mean of a
Gaussian-process emulator trained on fine-minus-coarse residuals, which can
cut iterations and reuse residual archives from earlier runs.
"""

from .gp_emulator import (
    GpEmulator,
    Hyperparameters,
    IllConditionedError,
    ResidualDataset,
    kernel_eval,
    log_marginal_likelihood,
    log_marginal_likelihood_grad,
    optimize_hyperparameters,
)
from .gparareal import merge_legacy, refine_sweep, run_gparareal
from .integrators import BlowUpError, SolverSpec, TimeMesh, propagate, serial_fine_solve
from .ode_models import (
    OdeSystem,
    autonomize,
    autonomized_system,
    build_system,
    make_fhn,
    make_rossler,
)
from .parareal import ConvergenceReport, SolutionTable, check_convergence, run_parareal
from .runtime import (
    CostModel,
    Executor,
    PhaseClock,
    PhaseTimings,
    ScheduleEvent,
    parallel_map,
    predict_times,
)

__version__ = "0.1.0"

__all__ = [
    "OdeSystem",
    "make_fhn",
    "make_rossler",
    "autonomize",
    "autonomized_system",
    "build_system",
    "SolverSpec",
    "TimeMesh",
    "BlowUpError",
    "propagate",
    "serial_fine_solve",
    "Hyperparameters",
    "ResidualDataset",
    "GpEmulator",
    "IllConditionedError",
    "kernel_eval",
    "log_marginal_likelihood",
    "log_marginal_likelihood_grad",
    "optimize_hyperparameters",
    "ConvergenceReport",
    "SolutionTable",
    "check_convergence",
    "run_parareal",
    "run_gparareal",
    "refine_sweep",
    "merge_legacy",
    "CostModel",
    "Executor",
    "PhaseClock",
    "PhaseTimings",
    "ScheduleEvent",
    "parallel_map",
    "predict_times",
    "__version__",
]
