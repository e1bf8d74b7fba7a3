"""Kernel PCA feature extraction and feature screening.

Centering is always applied in feature space (double-centred kernel matrix).
Eigenvalues stored on a :class:`KernelModel` are those of the centred kernel
matrix, i.e. ``n`` times the covariance eigenvalues.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist, pdist

from geosom import artifacts
from geosom.errors import DataError, NumericalError, ValidationError
from geosom.ingest import FeatureMatrix

logger = logging.getLogger(__name__)

GAUSSIAN = "gaussian"
LINEAR = "linear"

# relative threshold below which an eigenvalue counts as zero
EIG_RTOL = 1e-10
RIDGE_PENALTY = 1e-8


@dataclass(frozen=True)
class KernelSpec:
    kind: str = GAUSSIAN
    sigma: float = 1.0

    def __post_init__(self):
        if self.kind not in (GAUSSIAN, LINEAR):
            raise ValidationError(f"unknown kernel kind {self.kind!r}")
        if self.kind == GAUSSIAN and not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"gaussian bandwidth must be positive, got {self.sigma}")


def median_bandwidth(X: FeatureMatrix | np.ndarray) -> float:
    """Median pairwise Euclidean distance, used as the default Gaussian sigma."""
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    med = float(np.median(pdist(values)))
    if med <= 0:
        raise NumericalError("median pairwise distance is zero; cannot pick a bandwidth")
    return med


def kernel_value(xi, xj, spec: KernelSpec) -> float:
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape:
        raise ValidationError(f"vector length mismatch: {xi.shape} vs {xj.shape}")
    if spec.kind == LINEAR:
        return float(xi @ xj)
    d2 = float(np.sum((xi - xj) ** 2))
    return math.exp(-d2 / (2.0 * spec.sigma**2))


def kernel_matrix(A: np.ndarray, B: np.ndarray, spec: KernelSpec) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape[1] != B.shape[1]:
        raise ValidationError(f"column mismatch: {A.shape[1]} vs {B.shape[1]}")
    if spec.kind == LINEAR:
        return A @ B.T
    d2 = cdist(A, B, "sqeuclidean")
    return np.exp(-d2 / (2.0 * spec.sigma**2))


@dataclass(frozen=True)
class CenteringStats:
    row_means: np.ndarray
    grand_mean: float


def center_kernel(K: np.ndarray) -> tuple[np.ndarray, CenteringStats]:
    row_means = K.mean(axis=1)
    grand = float(row_means.mean())
    Kc = K - row_means[:, None] - row_means[None, :] + grand
    # remove rounding asymmetry
    Kc = 0.5 * (Kc + Kc.T)
    return Kc, CenteringStats(row_means, grand)


def build_centered_kernel(X: FeatureMatrix | np.ndarray, spec: KernelSpec) -> tuple[np.ndarray, CenteringStats]:
    values = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    K = kernel_matrix(values, values, spec)
    if not np.all(np.isfinite(K)):
        raise NumericalError("kernel matrix has non-finite entries")
    return center_kernel(K)


@dataclass(frozen=True, eq=False)
class KernelModel:
    spec: KernelSpec
    feature_names: tuple[str, ...]
    training_rows: np.ndarray
    centering: CenteringStats
    eigenvalues: np.ndarray  # retained, descending
    coefficients: np.ndarray  # k x n
    all_eigenvalues: np.ndarray = field(repr=False)

    @property
    def k(self) -> int:
        return len(self.eigenvalues)

    def to_dict(self) -> dict:
        return {
            "kernel": {"kind": self.spec.kind, "sigma": float(self.spec.sigma)},
            "feature_names": list(self.feature_names),
            "training_rows": self.training_rows.tolist(),
            "centering": {
                "row_means": self.centering.row_means.tolist(),
                "grand_mean": float(self.centering.grand_mean),
            },
            "eigenvalues": self.eigenvalues.tolist(),
            "all_eigenvalues": self.all_eigenvalues.tolist(),
            "coefficients": self.coefficients.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KernelModel":
        return cls(
            spec=KernelSpec(d["kernel"]["kind"], d["kernel"]["sigma"]),
            feature_names=tuple(d["feature_names"]),
            training_rows=np.array(d["training_rows"], dtype=float),
            centering=CenteringStats(np.array(d["centering"]["row_means"]), d["centering"]["grand_mean"]),
            eigenvalues=np.array(d["eigenvalues"], dtype=float),
            coefficients=np.array(d["coefficients"], dtype=float).reshape(len(d["eigenvalues"]), -1),
            all_eigenvalues=np.array(d["all_eigenvalues"], dtype=float),
        )

    def save(self, path: str | Path) -> Path:
        return artifacts.write_json(path, "kernel_model", self.to_dict())

    @classmethod
    def load(cls, path: str | Path) -> "KernelModel":
        return cls.from_dict(artifacts.read_json(path, "kernel_model"))


def _names_and_values(X) -> tuple[tuple[str, ...], np.ndarray]:
    if isinstance(X, FeatureMatrix):
        return X.feature_names, X.values
    values = np.asarray(X, dtype=float)
    return tuple(f"f{j}" for j in range(values.shape[1])), values


def fit_kpca(X: FeatureMatrix | np.ndarray, spec: KernelSpec, k: int) -> KernelModel:
    """Solve the centred-kernel eigenproblem and keep the top ``k`` components.

    Coefficients are scaled so each component has unit norm in feature space,
    ``a^T Kc a = 1``. Components with (numerically) zero eigenvalue get zero
    coefficients.
    """
    names, values = _names_and_values(X)
    n = values.shape[0]
    if not 1 <= k <= n - 1:
        raise ValidationError(f"k must be in [1, {n - 1}], got {k}")
    Kc, stats = build_centered_kernel(values, spec)
    evals, evecs = np.linalg.eigh(Kc)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    if evals[-1] < -1e-9 * max(1.0, abs(evals[0])):
        logger.warning("centred kernel has negative eigenvalue %.3g", evals[-1])
    evals = np.clip(evals, 0.0, None)
    lam_max = evals[0]
    zero = evals <= EIG_RTOL * lam_max if lam_max > 0 else np.ones_like(evals, dtype=bool)
    evals = np.where(zero, 0.0, evals)

    # fix eigenvector signs: largest-magnitude entry positive
    pivots = np.argmax(np.abs(evecs), axis=0)
    signs = np.sign(evecs[pivots, np.arange(n)])
    signs[signs == 0] = 1.0
    evecs = evecs * signs

    kept = evals[:k]
    coeffs = np.zeros((k, n))
    for c in range(k):
        if kept[c] > 0:
            coeffs[c] = evecs[:, c] / math.sqrt(kept[c])
    if np.any(kept == 0):
        logger.warning("%d retained component(s) have zero eigenvalue", int(np.sum(kept == 0)))
    return KernelModel(spec, names, values.copy(), stats, kept.copy(), coeffs, evals.copy())


def project(model: KernelModel, X_new: FeatureMatrix | np.ndarray) -> np.ndarray:
    """Scores of new rows on the retained components, ``n_new x k``."""
    names, values = _names_and_values(X_new)
    if values.shape[1] != model.training_rows.shape[1]:
        raise DataError(
            f"projected matrix has {values.shape[1]} columns, model was fit on {model.training_rows.shape[1]}"
        )
    if isinstance(X_new, FeatureMatrix) and names != model.feature_names:
        raise DataError("projected matrix feature names differ from the training features")
    K = kernel_matrix(values, model.training_rows, model.spec)
    stats = model.centering
    Kc = K - K.mean(axis=1, keepdims=True) - stats.row_means[None, :] + stats.grand_mean
    return Kc @ model.coefficients.T


def explained_variance_fractions(model: KernelModel) -> np.ndarray:
    total = float(np.sum(model.all_eigenvalues))
    if total <= 0:
        raise NumericalError("all eigenvalues are zero")
    return model.eigenvalues / total


def feature_weighted_variance(X: FeatureMatrix | np.ndarray, weights) -> np.ndarray:
    """Weighted per-feature variance ``sum(w^2 (x - xbar)^2) / sum(w^2)``.

    ``xbar`` is the mean under the same squared weights.
    """
    _, values = _names_and_values(X)
    w = np.asarray(weights, dtype=float)
    if w.shape != (values.shape[0],):
        raise ValidationError(f"need {values.shape[0]} weights, got {w.shape}")
    if np.any(~(w > 0)):
        raise ValidationError("weights must all be positive")
    w2 = w**2
    mean = (w2 @ values) / w2.sum()
    return (w2 @ (values - mean) ** 2) / w2.sum()


def leverage_weights(scores: np.ndarray) -> np.ndarray:
    """Per-row norm of kernel-PCA scores, rescaled to mean 1."""
    norms = np.linalg.norm(scores, axis=1)
    if norms.mean() <= 0:
        return np.ones(len(norms))
    w = norms / norms.mean()
    # a row sitting exactly on the feature-space mean would get weight 0
    return np.maximum(w, 1e-12)


@dataclass(frozen=True, eq=False)
class RelevanceResult:
    r2: np.ndarray
    ridge_flags: np.ndarray


def relevance_r2(X: FeatureMatrix | np.ndarray) -> RelevanceResult:
    """R^2 of regressing each feature on all the others (OLS with intercept).

    Rank-deficient designs fall back to ridge with a 1e-8 penalty; those
    features are flagged.
    """
    _, values = _names_and_values(X)
    n, m = values.shape
    if m < 2:
        raise ValidationError("relevance screening needs at least two features")
    if n <= m:
        raise ValidationError(f"need more rows than features for the regressions ({n} <= {m})")
    centered = values - values.mean(axis=0)
    r2 = np.zeros(m)
    flags = np.zeros(m, dtype=bool)
    for j in range(m):
        y = centered[:, j]
        A = np.delete(centered, j, axis=1)
        sst = float(y @ y)
        if sst <= 0:
            r2[j] = 0.0
            continue
        if np.linalg.matrix_rank(A) < A.shape[1]:
            flags[j] = True
            beta = np.linalg.solve(A.T @ A + RIDGE_PENALTY * np.eye(A.shape[1]), A.T @ y)
        else:
            beta = np.linalg.lstsq(A, y, rcond=None)[0]
        resid = y - A @ beta
        r2[j] = 1.0 - float(resid @ resid) / sst
    return RelevanceResult(np.clip(r2, 0.0, 1.0), flags)


def hopkins(X: FeatureMatrix | np.ndarray, sample_fraction: float = 0.1, seed: int = 0) -> float:
    """Hopkins clustering-tendency statistic.

    About 0.5 for spatially random data, approaching 1 for clustered data.
    """
    _, values = _names_and_values(X)
    n, d = values.shape
    if not 0 < sample_fraction < 1:
        raise ValidationError(f"sample_fraction must be in (0, 1), got {sample_fraction}")
    if n < 10:
        raise ValidationError(f"hopkins needs at least 10 rows, got {n}")
    rng = np.random.default_rng(seed)
    m = math.ceil(sample_fraction * n)
    idx = rng.choice(n, size=m, replace=False)
    lo, hi = values.min(axis=0), values.max(axis=0)
    synthetic = rng.uniform(lo, hi, size=(m, d))
    tree = cKDTree(values)
    u, _ = tree.query(synthetic, k=1)
    w, _ = tree.query(values[idx], k=2)
    u_sum, w_sum = float(np.sum(u)), float(np.sum(w[:, 1]))
    if u_sum + w_sum == 0:
        raise NumericalError("all points coincide; hopkins statistic undefined")
    return u_sum / (u_sum + w_sum)


@dataclass(frozen=True, eq=False)
class FeatureScoreReport:
    feature_names: tuple[str, ...]
    weighted_variance: np.ndarray
    r2_relevance: np.ndarray
    score: np.ndarray
    selected: np.ndarray
    ridge_flags: np.ndarray | None = None
    fractions: np.ndarray | None = None

    @property
    def selected_names(self) -> list[str]:
        """Selected features, best score first."""
        order = _rank(self.feature_names, self.score)
        return [self.feature_names[i] for i in order if self.selected[i]]

    def write_csv(self, path: str | Path) -> Path:
        flags = self.ridge_flags if self.ridge_flags is not None else np.zeros(len(self.feature_names), bool)
        order = _rank(self.feature_names, self.score)
        rows = [
            [
                rank + 1,
                self.feature_names[i],
                float(self.weighted_variance[i]),
                float(self.r2_relevance[i]),
                float(self.score[i]),
                int(self.selected[i]),
                int(flags[i]),
            ]
            for rank, i in enumerate(order)
        ]
        footer = []
        if self.fractions is not None:
            footer.append("explained_variance_fractions=" + ";".join(repr(float(f)) for f in self.fractions))
        return artifacts.write_csv(
            path,
            "feature_scores",
            ["rank", "feature", "weighted_variance", "r2_relevance", "score", "selected", "ridge_fallback"],
            rows,
            footer,
        )


def _rank(names: Sequence[str], score: np.ndarray) -> list[int]:
    # descending score, ties by name ascending
    return sorted(range(len(names)), key=lambda i: (-float(score[i]), names[i]))


def select_features(
    feature_names: Sequence[str],
    weighted_variances,
    r2_scores,
    count: int = 21,
    fractions=None,
    ridge_flags=None,
) -> FeatureScoreReport:
    """Mark the ``count`` best features.

    score = 0.5 * weighted_variance / max(weighted_variance) + 0.5 * (1 - R^2),
    so high spread and low redundancy rank first. Ties go to the
    alphabetically first name.
    """
    names = tuple(feature_names)
    wv = np.asarray(weighted_variances, dtype=float)
    r2 = np.asarray(r2_scores, dtype=float)
    m = len(names)
    if wv.shape != (m,) or r2.shape != (m,):
        raise ValidationError("score arrays must match the number of features")
    if not 1 <= count <= m:
        raise ValidationError(f"count must be in [1, {m}], got {count}")
    top = wv.max()
    norm_wv = wv / top if top > 0 else np.zeros(m)
    score = 0.5 * norm_wv + 0.5 * (1.0 - r2)
    selected = np.zeros(m, dtype=bool)
    selected[_rank(names, score)[:count]] = True
    return FeatureScoreReport(
        names,
        wv,
        r2,
        score,
        selected,
        None if ridge_flags is None else np.asarray(ridge_flags, dtype=bool),
        None if fractions is None else np.asarray(fractions, dtype=float),
    )


def screen_features(X: FeatureMatrix, model: KernelModel, count: int) -> FeatureScoreReport:
    """Weighted variance + R^2 screening with leverage weights from ``model``."""
    weights = leverage_weights(project(model, X))
    wv = feature_weighted_variance(X, weights)
    rel = relevance_r2(X)
    return select_features(
        X.feature_names, wv, rel.r2, count, explained_variance_fractions(model), rel.ridge_flags
    )


def read_selected_features(path: str | Path) -> list[str]:
    header, rows, _ = artifacts.read_csv(path, "feature_scores")
    feat, sel = header.index("feature"), header.index("selected")
    return [r[feat] for r in rows if r[sel] == "1"]
