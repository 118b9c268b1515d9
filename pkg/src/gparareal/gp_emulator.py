"""Zero-mean Gaussian-process regression on noise-free residual data.

One independent scalar GP per output dimension, all sharing the same input
set in R^d, each with an isotropic squared-exponential kernel

    kappa(x, x') = sigma2 * exp(-||x - x'||^2 / (2 * ell2)).

Hyperparameters are optimized in log space by maximizing the log marginal
likelihood with an analytic gradient; conditioning uses a jittered Cholesky
factorization with escalation on failure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, solve_triangular
from scipy.optimize import minimize
from scipy.spatial.distance import cdist

__all__ = [
    "Hyperparameters",
    "ResidualDataset",
    "GpEmulator",
    "IllConditionedError",
    "kernel_eval",
    "log_marginal_likelihood",
    "optimize_hyperparameters",
    "JITTER_START",
    "JITTER_MAX",
]

# Relative nugget on the Gram diagonal: start value, escalation factor, cap.
JITTER_START = 1e-10
JITTER_GROWTH = 10.0
JITTER_MAX = 1e-4

# Bounds and fixed multistart grid for (log sigma2, log ell2).
_LOG_BOUNDS = (-20.0, 20.0)
_MULTISTART = ((-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0))


class IllConditionedError(RuntimeError):
    """Gram matrix not factorizable even at the maximum jitter."""

    def __init__(self, output_dim: int, n_rows: int):
        super().__init__(output_dim, n_rows)
        self.output_dim = output_dim
        self.n_rows = n_rows

    def __str__(self) -> str:
        return (
            f"Gram matrix for output dimension {self.output_dim} "
            f"({self.n_rows} rows) is not positive definite even with "
            f"relative jitter {JITTER_MAX}"
        )


@dataclass(frozen=True)
class Hyperparameters:
    """SE-kernel hyperparameters: output scale sigma2 and input scale ell2."""

    sigma2: float
    ell2: float

    def __post_init__(self):
        for name, value in (("sigma2", self.sigma2), ("ell2", self.ell2)):
            if not (math.isfinite(value) and value > 0):
                raise ValueError(f"{name} must be finite and positive, got {value}")

    def log_vector(self) -> np.ndarray:
        return np.array([math.log(self.sigma2), math.log(self.ell2)])

    @classmethod
    def from_log(cls, v: Sequence[float]) -> "Hyperparameters":
        return cls(math.exp(v[0]), math.exp(v[1]))


def _row_key(row: np.ndarray) -> bytes:
    # +0.0 collapses -0.0 onto +0.0 so numerically equal rows share a key
    return (np.asarray(row, dtype=np.float64) + 0.0).tobytes()


class ResidualDataset:
    """Paired rows (x, y = fine(x) - coarse(x)) with provenance tags.

    Input rows are unique: appending a row whose input equals an existing one
    (as floats) is dropped, keeping the first occurrence. Duplicate inputs
    with noise-free outputs would make the Gram matrix singular.
    """

    def __init__(self, dimension: int):
        if dimension < 1:
            raise ValueError(f"dimension must be positive, got {dimension}")
        self._dimension = dimension
        self._inputs: list[np.ndarray] = []
        self._outputs: list[np.ndarray] = []
        self._provenance: list[str] = []
        self._seen: set[bytes] = set()

    @property
    def dimension(self) -> int:
        return self._dimension

    @property
    def n_rows(self) -> int:
        return len(self._inputs)

    def __len__(self) -> int:
        return len(self._inputs)

    @property
    def inputs(self) -> np.ndarray:
        if not self._inputs:
            return np.empty((0, self._dimension))
        return np.vstack(self._inputs)

    @property
    def outputs(self) -> np.ndarray:
        if not self._outputs:
            return np.empty((0, self._dimension))
        return np.vstack(self._outputs)

    @property
    def provenance(self) -> tuple[str, ...]:
        return tuple(self._provenance)

    def append(self, x: np.ndarray, y: np.ndarray, provenance: str = "acquisition") -> bool:
        """Add one row; returns False if the input duplicates an earlier row."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        y = np.asarray(y, dtype=np.float64).reshape(-1)
        if x.shape != (self._dimension,) or y.shape != (self._dimension,):
            raise ValueError(
                f"row shapes {x.shape}/{y.shape} do not match dimension {self._dimension}"
            )
        if not (np.isfinite(x).all() and np.isfinite(y).all()):
            raise ValueError("dataset rows must be finite")
        key = _row_key(x)
        if key in self._seen:
            return False
        self._seen.add(key)
        self._inputs.append(x)
        self._outputs.append(y)
        self._provenance.append(provenance)
        return True

    def extend(self, xs, ys, provenance: str = "acquisition") -> int:
        """Append several rows; returns the number actually added."""
        added = 0
        for x, y in zip(xs, ys):
            added += self.append(x, y, provenance)
        return added

    @classmethod
    def from_arrays(cls, xs, ys, provenance="acquisition") -> "ResidualDataset":
        xs = np.atleast_2d(np.asarray(xs, dtype=np.float64))
        ys = np.atleast_2d(np.asarray(ys, dtype=np.float64))
        if xs.shape != ys.shape:
            raise ValueError(f"inputs {xs.shape} and outputs {ys.shape} differ in shape")
        ds = cls(xs.shape[1])
        if isinstance(provenance, str):
            provenance = [provenance] * xs.shape[0]
        for x, y, tag in zip(xs, ys, provenance):
            ds.append(x, y, tag)
        return ds

    def copy(self) -> "ResidualDataset":
        ds = ResidualDataset(self._dimension)
        for x, y, tag in zip(self._inputs, self._outputs, self._provenance):
            ds.append(x, y, tag)
        return ds

    def count(self, provenance: str) -> int:
        return sum(1 for tag in self._provenance if tag == provenance)


def kernel_eval(theta: Hyperparameters, x: np.ndarray, xp: np.ndarray) -> float:
    """Isotropic SE covariance between two points in R^d."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    xp = np.asarray(xp, dtype=np.float64).reshape(-1)
    d2 = float(np.sum((x - xp) ** 2))
    return theta.sigma2 * math.exp(-d2 / (2.0 * theta.ell2))


def _sq_dists(xs: np.ndarray, zs: np.ndarray | None = None) -> np.ndarray:
    if zs is None:
        zs = xs
    return cdist(xs, zs, metric="sqeuclidean")


def _gram(d2: np.ndarray, sigma2: float, ell2: float, jitter_rel: float) -> np.ndarray:
    # K = sigma2 * (R + jitter_rel * I); the nugget scales with sigma2
    k = np.exp(-d2 / (2.0 * ell2))
    k[np.diag_indices_from(k)] += jitter_rel
    return sigma2 * k


def _lml_and_grad(
    d2: np.ndarray,
    y: np.ndarray,
    log_theta: np.ndarray,
    jitter_rel: float,
) -> tuple[float, np.ndarray]:
    """Log marginal likelihood and its gradient in (log sigma2, log ell2).

    lml = -1/2 y^T K^-1 y - 1/2 log det K - n/2 log 2pi with the jittered K.
    dK/d(log sigma2) = K exactly, because the nugget is relative, giving
    grad = 1/2 (y^T alpha - n); dK/d(log ell2) = sigma2 R . d2 / (2 ell2).
    Returns (-inf, zeros) when the factorization fails, which steers the
    optimizer away from degenerate regions.
    """
    n = y.shape[0]
    sigma2, ell2 = math.exp(log_theta[0]), math.exp(log_theta[1])
    gram = _gram(d2, sigma2, ell2, jitter_rel)
    try:
        factor = cho_factor(gram, lower=True, check_finite=False)
    except LinAlgError:
        return -np.inf, np.zeros(2)
    alpha = cho_solve(factor, y, check_finite=False)
    lml = (
        -0.5 * float(y @ alpha)
        - float(np.log(np.diag(factor[0])).sum())
        - 0.5 * n * math.log(2.0 * math.pi)
    )
    kinv = cho_solve(factor, np.eye(n), check_finite=False)
    outer_minus_kinv = np.outer(alpha, alpha) - kinv
    grad_s = 0.5 * (float(y @ alpha) - n)
    dk_dl = sigma2 * np.exp(-d2 / (2.0 * ell2)) * (d2 / (2.0 * ell2))
    grad_l = 0.5 * float(np.sum(outer_minus_kinv * dk_dl))
    return lml, np.array([grad_s, grad_l])


def log_marginal_likelihood(
    inputs: np.ndarray,
    y: np.ndarray,
    theta: Hyperparameters,
    jitter_rel: float = JITTER_START,
) -> float:
    """log N(y | 0, K(inputs, inputs)) for one output dimension."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if inputs.shape[0] == 0:
        raise ValueError("need at least one data row")
    if inputs.shape[0] != y.shape[0]:
        raise ValueError("inputs and outputs disagree in length")
    value, _ = _lml_and_grad(_sq_dists(inputs), y, theta.log_vector(), jitter_rel)
    if value == -np.inf:
        raise IllConditionedError(0, inputs.shape[0])
    return value


def log_marginal_likelihood_grad(
    inputs: np.ndarray,
    y: np.ndarray,
    theta: Hyperparameters,
    jitter_rel: float = JITTER_START,
) -> np.ndarray:
    """Gradient of the log marginal likelihood in (log sigma2, log ell2)."""
    inputs = np.atleast_2d(np.asarray(inputs, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    _, grad = _lml_and_grad(_sq_dists(inputs), y, theta.log_vector(), jitter_rel)
    return grad


def _data_driven_starts(d2: np.ndarray, y: np.ndarray) -> list[np.ndarray]:
    """Extra multistart points scaled to the data: output variance for
    sigma2, low/median quantiles of the pairwise squared distances for ell2.

    The low quantile matters: residual functions often vary on scales far
    below the data span, and from span-scale starts the optimizer can fall
    into the degenerate tiny-ell2 interpolation optimum instead.
    """
    n = d2.shape[0]
    if n < 2:
        return []
    off = d2[np.triu_indices(n, 1)]
    log_var = math.log(max(float(np.var(y)), 1e-12))
    starts = []
    for q in (0.05, 0.5):
        scale = max(float(np.quantile(off, q)), 1e-300)
        starts.append(np.array([log_var, math.log(scale)]))
    return starts


def _optimize_one(
    d2: np.ndarray,
    y: np.ndarray,
    init: Hyperparameters,
    jitter_rel: float,
) -> tuple[Hyperparameters, bool]:
    """Multistart L-BFGS-B over log hyperparameters for one output dimension.

    Candidates are the warm start, the fixed grid, and the data-driven
    starts; the best final value is kept, and the warm start itself is
    always a candidate, so the returned value never falls below the
    likelihood at init. Deterministic: fixed starts, deterministic
    optimizer, ties broken by candidate order.
    """

    def objective(v):
        value, grad = _lml_and_grad(d2, y, v, jitter_rel)
        if value == -np.inf:
            return 1e25, np.zeros(2)
        return -value, -grad

    starts = [np.asarray(init.log_vector())]
    starts.extend(np.array(pair) for pair in _MULTISTART)
    starts.extend(_data_driven_starts(d2, y))
    bounds = [_LOG_BOUNDS, _LOG_BOUNDS]
    best_v = starts[0]
    best_val, _ = _lml_and_grad(d2, y, best_v, jitter_rel)
    any_success = False
    for start in starts:
        res = minimize(
            objective,
            np.clip(start, *_LOG_BOUNDS),
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": 200},
        )
        any_success = any_success or bool(res.success)
        value = -res.fun
        if value > best_val:
            best_val, best_v = value, res.x
    return Hyperparameters.from_log(best_v), any_success


def optimize_hyperparameters(
    dataset: ResidualDataset,
    init: Sequence[Hyperparameters] | None = None,
    jitter_rel: float = JITTER_START,
) -> tuple[list[Hyperparameters], list[bool]]:
    """Maximize the marginal likelihood independently per output dimension.

    Returns the optimized hyperparameters and a per-dimension flag that is
    False when no optimizer run reported success (the best iterate seen is
    still returned).
    """
    if len(dataset) == 0:
        raise ValueError("cannot optimize hyperparameters on an empty dataset")
    d = dataset.dimension
    if init is None:
        init = [Hyperparameters(1.0, 1.0)] * d
    if len(init) != d:
        raise ValueError(f"need {d} initial hyperparameter pairs, got {len(init)}")
    d2 = _sq_dists(dataset.inputs)
    outputs = dataset.outputs
    thetas: list[Hyperparameters] = []
    flags: list[bool] = []
    for i in range(d):
        theta, ok = _optimize_one(d2, outputs[:, i], init[i], jitter_rel)
        thetas.append(theta)
        flags.append(ok)
    return thetas, flags


@dataclass(frozen=True, eq=False)
class GpEmulator:
    """Conditioned per-dimension GPs sharing one training input set.

    Immutable once built; prediction is read-only and safe to share across
    worker threads.
    """

    train_inputs: np.ndarray
    thetas: tuple[Hyperparameters, ...]
    chols: tuple[np.ndarray, ...]
    weights: tuple[np.ndarray, ...]
    jitters: tuple[float, ...]

    @property
    def dimension(self) -> int:
        return len(self.thetas)

    @property
    def n_train(self) -> int:
        return self.train_inputs.shape[0]

    @classmethod
    def condition(
        cls,
        dataset: ResidualDataset,
        thetas: Sequence[Hyperparameters],
        jitter_start: float = JITTER_START,
        jitter_max: float = JITTER_MAX,
    ) -> "GpEmulator":
        """Factorize the per-dimension Gram matrices and precompute weights.

        The relative jitter starts at jitter_start and escalates by 10x per
        Cholesky failure up to jitter_max, independently per output
        dimension.

        Raises
        ------
        ValueError
            Empty dataset, dimension mismatch, or duplicate input rows.
        IllConditionedError
            Factorization still fails at the maximum jitter.
        """
        if len(dataset) == 0:
            raise ValueError("cannot condition on an empty dataset")
        if len(thetas) != dataset.dimension:
            raise ValueError(
                f"need {dataset.dimension} hyperparameter pairs, got {len(thetas)}"
            )
        inputs = dataset.inputs
        keys = {_row_key(row) for row in inputs}
        if len(keys) != inputs.shape[0]:
            raise ValueError("duplicate input rows; deduplicate before conditioning")
        outputs = dataset.outputs
        d2 = _sq_dists(inputs)
        chols, weights, jitters = [], [], []
        for i, theta in enumerate(thetas):
            rel = jitter_start
            factor = None
            while True:
                gram = _gram(d2, theta.sigma2, theta.ell2, rel)
                try:
                    factor = cho_factor(gram, lower=True, check_finite=False)
                    break
                except LinAlgError:
                    if rel >= jitter_max or rel <= 0:
                        raise IllConditionedError(i, inputs.shape[0]) from None
                    rel = min(rel * JITTER_GROWTH, jitter_max)
            chols.append(factor[0])
            weights.append(cho_solve(factor, outputs[:, i], check_finite=False))
            jitters.append(rel)
        return cls(inputs, tuple(thetas), tuple(chols), tuple(weights), tuple(jitters))

    def predict(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Posterior mean and variance per output dimension at one point.

        mean_i = k_i(x, X) K_i^-1 y_i;
        var_i  = kappa_i(x, x) - k_i(x, X) K_i^-1 k_i(X, x), clamped to >= 0.
        """
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        d2 = np.sum((self.train_inputs - x) ** 2, axis=1)
        d = self.dimension
        mean = np.empty(d)
        var = np.empty(d)
        for i, theta in enumerate(self.thetas):
            k_star = theta.sigma2 * np.exp(-d2 / (2.0 * theta.ell2))
            mean[i] = float(k_star @ self.weights[i])
            v = solve_triangular(self.chols[i], k_star, lower=True, check_finite=False)
            var[i] = max(theta.sigma2 - float(v @ v), 0.0)
        return mean, var

    def predict_mean(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        d2 = np.sum((self.train_inputs - x) ** 2, axis=1)
        mean = np.empty(self.dimension)
        for i, theta in enumerate(self.thetas):
            k_star = theta.sigma2 * np.exp(-d2 / (2.0 * theta.ell2))
            mean[i] = float(k_star @ self.weights[i])
        return mean
