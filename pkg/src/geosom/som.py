"""Online self-organizing map on a rectangular lattice.

Training follows the usual competitive/cooperative loop: for each presented
observation find the best matching unit, then pull every neuron whose
lattice distance to it is below the current radius toward the observation:

    W_j <- W_j + theta(n) * exp(-xi^2 / (2 sigma(n)^2)) * (x - W_j)

with sigma(n) = sigma0 * exp(-n / G) and theta(n) = theta0 * exp(-n / G^2),
``n`` being the global presentation index.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from geosom import artifacts
from geosom.errors import DataError, NumericalError, ValidationError
from geosom.ingest import FeatureMatrix

logger = logging.getLogger(__name__)

DEFAULT_THETA0 = 0.57
DEFAULT_LATTICE = (18, 15)


@dataclass(frozen=True)
class Lattice:
    rows: int
    cols: int

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise ValidationError(f"lattice dimensions must be positive, got {self.rows}x{self.cols}")

    @property
    def size(self) -> int:
        return self.rows * self.cols

    @property
    def positions(self) -> np.ndarray:
        """Grid coordinates (row, col) per neuron, row-major."""
        r, c = np.divmod(np.arange(self.size), self.cols)
        return np.column_stack([r, c]).astype(float)

    def distances(self) -> np.ndarray:
        """Euclidean lattice distance between every pair of neurons."""
        pos = self.positions
        diff = pos[:, None, :] - pos[None, :, :]
        return np.sqrt(np.sum(diff**2, axis=-1))

    def are_neighbors(self, i: int, j: int) -> bool:
        """8-neighbourhood adjacency (Chebyshev distance 1)."""
        ri, ci = divmod(int(i), self.cols)
        rj, cj = divmod(int(j), self.cols)
        return max(abs(ri - rj), abs(ci - cj)) == 1


@dataclass(frozen=True)
class SomConfig:
    rows: int = DEFAULT_LATTICE[0]
    cols: int = DEFAULT_LATTICE[1]
    sigma0: float = 5.0
    theta0: float = DEFAULT_THETA0
    time_constant_G: float | None = None
    iterations: int = 10000
    seed: int = 0

    def __post_init__(self):
        Lattice(self.rows, self.cols)
        if not 0.0 <= self.theta0 <= 1.0:
            raise ValidationError(f"theta0 must lie in [0, 1], got {self.theta0}")
        if not self.sigma0 > 0:
            raise ValidationError(f"sigma0 must be positive, got {self.sigma0}")
        if self.sigma0 > max(self.rows, self.cols):
            raise ValidationError(f"sigma0={self.sigma0} exceeds the lattice extent {max(self.rows, self.cols)}")
        if self.iterations < 1:
            raise ValidationError("iterations must be >= 1")
        if self.time_constant_G is not None and not self.time_constant_G > 0:
            raise ValidationError("time_constant_G must be positive")

    @property
    def G(self) -> float:
        """Decay time constant; by default the radius reaches 1 at the last presentation."""
        if self.time_constant_G is not None:
            return float(self.time_constant_G)
        if self.sigma0 > 1.0:
            return self.iterations / math.log(self.sigma0)
        return float(self.iterations)

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "sigma0": float(self.sigma0),
            "theta0": float(self.theta0),
            "time_constant_G": None if self.time_constant_G is None else float(self.time_constant_G),
            "iterations": self.iterations,
            "seed": self.seed,
        }


@dataclass(frozen=True, eq=False)
class SomModel:
    lattice: Lattice
    weights: np.ndarray
    config: SomConfig
    feature_names: tuple[str, ...] = ()
    history: tuple[float, ...] = field(default=())

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.shape[0] != self.lattice.size:
            raise DataError(f"weights have {w.shape[0]} rows, lattice has {self.lattice.size} neurons")
        if not np.all(np.isfinite(w)):
            raise NumericalError("SOM weights contain non-finite values")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n_neurons(self) -> int:
        return self.lattice.size

    def to_dict(self) -> dict:
        return {
            "lattice": {"rows": self.lattice.rows, "cols": self.lattice.cols},
            "config": self.config.to_dict(),
            "feature_names": list(self.feature_names),
            "weights": self.weights.tolist(),
            "qe_history": [float(q) for q in self.history],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SomModel":
        lat = Lattice(d["lattice"]["rows"], d["lattice"]["cols"])
        return cls(
            lat,
            np.array(d["weights"], dtype=float).reshape(lat.size, -1),
            SomConfig(**d["config"]),
            tuple(d["feature_names"]),
            tuple(d["qe_history"]),
        )

    def save(self, path: str | Path) -> Path:
        return artifacts.write_json(path, "som_model", self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "SomModel":
        return cls.from_dict(artifacts.read_json(path, "som_model"))


def _values(X) -> np.ndarray:
    return X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)


def init_model(X: FeatureMatrix | np.ndarray, config: SomConfig) -> SomModel:
    """Initialise every neuron with a training row drawn uniformly (with replacement)."""
    values = _values(X)
    if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
        raise DataError("cannot initialise a SOM from an empty matrix")
    lattice = Lattice(config.rows, config.cols)
    if lattice.size > 2 * values.shape[0]:
        logger.warning("%d neurons for %d observations; many neurons will stay dead", lattice.size, values.shape[0])
    rng = np.random.default_rng(config.seed)
    picks = rng.integers(0, values.shape[0], size=lattice.size)
    names = X.feature_names if isinstance(X, FeatureMatrix) else ()
    return SomModel(lattice, values[picks].copy(), config, names)


def _check_dims(x: np.ndarray, weights: np.ndarray) -> None:
    if x.shape[-1] != weights.shape[1]:
        raise DataError(f"observation has {x.shape[-1]} features, SOM has {weights.shape[1]}")


def bmu(x, model: SomModel | np.ndarray) -> int:
    """Index of the nearest neuron; ties resolve to the lowest index."""
    weights = model.weights if isinstance(model, SomModel) else np.asarray(model, dtype=float)
    x = np.asarray(x, dtype=float)
    _check_dims(x, weights)
    return int(np.argmin(np.sum((weights - x) ** 2, axis=1)))


def bmus(X, model: SomModel | np.ndarray) -> np.ndarray:
    weights = model.weights if isinstance(model, SomModel) else np.asarray(model, dtype=float)
    values = _values(X)
    _check_dims(values, weights)
    return np.argmin(_sq_dists(values, weights), axis=1)


def _sq_dists(values: np.ndarray, weights: np.ndarray) -> np.ndarray:
    # explicit differences rather than the expanded quadratic form: exact zeros stay zero
    return np.sum((values[:, None, :] - weights[None, :, :]) ** 2, axis=-1)


def neighborhood(xi_distance, sigma: float):
    """Gaussian neighbourhood exp(-xi^2 / (2 sigma^2))."""
    xi2 = np.square(np.asarray(xi_distance, dtype=float))
    # xi == 0 must give 1 even once sigma**2 underflows
    with np.errstate(divide="ignore", invalid="ignore"):
        expo = np.where(xi2 == 0, 0.0, -xi2 / (2.0 * sigma**2))
    out = np.exp(expo)
    return float(out) if out.ndim == 0 else out


def decay(initial: float, n, tau: float):
    """initial * exp(-n / tau)."""
    return initial * np.exp(-np.asarray(n, dtype=float) / tau)


def weight_step(w: np.ndarray, x: np.ndarray, theta, lam) -> np.ndarray:
    """w + theta * lam * (x - w); ``theta`` and ``lam`` broadcast over rows of ``w``."""
    return w + np.multiply(theta, lam)[..., None] * (x - w)


def update_weights(weights: np.ndarray, x: np.ndarray, winner: int, lattice_dist: np.ndarray,
                   sigma: float, theta: float) -> np.ndarray:
    """Apply one presentation in place; only neurons with lattice distance < sigma move.

    Returns the indices of the updated neurons.
    """
    xi = lattice_dist[winner]
    active = np.flatnonzero(xi < sigma)
    weights[active] = weight_step(weights[active], x, theta, neighborhood(xi[active], sigma))
    return active


def train(X: FeatureMatrix | np.ndarray, config: SomConfig, model: SomModel | None = None) -> SomModel:
    """Online training for ``config.iterations`` presentations.

    Observations are visited in a freshly shuffled order every epoch. The
    quantisation error is appended to the history after each epoch.
    """
    values = _values(X)
    if model is None:
        model = init_model(X, config)
    _check_dims(values, model.weights)
    n_obs = values.shape[0]
    lattice = model.lattice
    dist = lattice.distances()
    weights = np.array(model.weights, dtype=float)
    G = config.G
    # separate stream from the one used for initialisation
    rng = np.random.default_rng([config.seed, 1])
    epochs = math.ceil(config.iterations / n_obs)
    history = []
    step = 0
    for epoch in range(epochs):
        order = rng.permutation(n_obs)
        for i in order:
            if step >= config.iterations:
                break
            sigma = config.sigma0 * math.exp(-step / G)
            theta = config.theta0 * math.exp(-step / G**2)
            x = values[i]
            winner = int(np.argmin(np.sum((weights - x) ** 2, axis=1)))
            touched = update_weights(weights, x, winner, dist, sigma, theta)
            if not np.all(np.isfinite(weights[touched])):
                raise NumericalError(
                    f"non-finite weights after presentation {step} (epoch {epoch}, observation {i}, "
                    f"sigma={sigma:.4g}, theta={theta:.4g})"
                )
            step += 1
        history.append(_qe(values, weights))
    names = X.feature_names if isinstance(X, FeatureMatrix) else model.feature_names
    return SomModel(lattice, weights, config, names, tuple(history))


def _qe(values: np.ndarray, weights: np.ndarray) -> float:
    d2 = _sq_dists(values, weights)
    return float(np.mean(np.sqrt(d2.min(axis=1))))


def quantization_error(X, model: SomModel | np.ndarray) -> float:
    """Mean Euclidean distance from each observation to its BMU."""
    weights = model.weights if isinstance(model, SomModel) else np.asarray(model, dtype=float)
    values = _values(X)
    _check_dims(values, weights)
    return _qe(values, weights)


def total_distortion(X, model: SomModel | np.ndarray) -> float:
    """Sum over neurons of squared distances to the observations in their Voronoi cell."""
    weights = model.weights if isinstance(model, SomModel) else np.asarray(model, dtype=float)
    values = _values(X)
    _check_dims(values, weights)
    return float(np.sum(_sq_dists(values, weights).min(axis=1)))


def topographic_error(X, model: SomModel) -> float:
    """Fraction of observations whose first and second BMUs are not lattice neighbours."""
    values = _values(X)
    _check_dims(values, model.weights)
    if model.n_neurons < 2:
        raise ValidationError("topographic error needs at least two neurons")
    d2 = _sq_dists(values, model.weights)
    # stable sort keeps the lowest-index convention on ties
    order = np.argsort(d2, axis=1, kind="stable")[:, :2]
    cols = model.lattice.cols
    r, c = np.divmod(order, cols)
    cheb = np.maximum(np.abs(r[:, 0] - r[:, 1]), np.abs(c[:, 0] - c[:, 1]))
    return float(np.mean(cheb != 1))

