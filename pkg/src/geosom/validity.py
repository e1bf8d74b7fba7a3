"""Super-clustering of SOM neurons and cluster validity indices."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.cluster.hierarchy import linkage
from scipy.spatial.distance import cdist

from geosom import artifacts
from geosom.errors import DataError, DegenerateClusteringError, ValidationError
from geosom.ingest import FeatureMatrix
from geosom.som import SomModel, bmus

logger = logging.getLogger(__name__)


class IndexDisagreementWarning(UserWarning):
    """Silhouette and Davies-Bouldin pick different cluster counts."""


@dataclass(frozen=True, eq=False)
class SuperClustering:
    k_clusters: int
    neuron_labels: np.ndarray
    centroids: np.ndarray

    def relabel(self, mapping: Sequence[int]) -> "SuperClustering":
        mapping = np.asarray(mapping)
        new_centroids = np.empty_like(self.centroids)
        new_centroids[mapping] = self.centroids
        return SuperClustering(self.k_clusters, mapping[self.neuron_labels], new_centroids)


def cluster_centroids(points: np.ndarray, labels: np.ndarray, k: int) -> np.ndarray:
    return np.vstack([points[labels == c].mean(axis=0) for c in range(k)])


def ward_labels(points: np.ndarray, k: int) -> np.ndarray:
    """Cut a Ward dendrogram into exactly ``k`` groups.

    Labels are numbered by the lowest point index in each group.
    """
    n = len(points)
    if not 1 <= k <= n:
        raise ValidationError(f"k must be in [1, {n}], got {k}")
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n > 1 and k < n:
        Z = linkage(points, method="ward")
        # cluster id n + t is created by merge t
        members = {i: i for i in range(n)}
        for t in range(n - k):
            a, b = int(Z[t, 0]), int(Z[t, 1])
            ra, rb = find(members[a]), find(members[b])
            parent[max(ra, rb)] = min(ra, rb)
            members[n + t] = min(ra, rb)
    roots = np.array([find(i) for i in range(n)])
    _, first = np.unique(roots, return_index=True)
    remap = {roots[i]: lab for lab, i in enumerate(sorted(first))}
    return np.array([remap[r] for r in roots])


def _distinct_rows(points: np.ndarray) -> int:
    return len(np.unique(points, axis=0))


def supercluster(model: SomModel | np.ndarray, k: int) -> SuperClustering:
    """Group neuron weight vectors into ``k`` clusters by Ward-linkage agglomeration."""
    points = model.weights if isinstance(model, SomModel) else np.asarray(model, dtype=float)
    distinct = _distinct_rows(points)
    if not 2 <= k <= distinct:
        raise ValidationError(f"k must be in [2, {distinct}] (distinct neurons), got {k}")
    labels = ward_labels(points, k)
    return SuperClustering(k, labels, cluster_centroids(points, labels, k))


def _check_labels(points: np.ndarray, labels: np.ndarray) -> np.ndarray:
    labels = np.asarray(labels)
    if len(labels) != len(points):
        raise ValidationError("labels and points differ in length")
    return labels


def dbi(points, labels, centroids=None) -> float:
    """Davies-Bouldin index, mean over clusters of max_j (d_i + d_j) / D_ij.

    d_i is the mean Euclidean distance of cluster i's members to its centroid,
    D_ij the distance between centroids.
    """
    points = np.asarray(points, dtype=float)
    labels = _check_labels(points, labels)
    ids = np.unique(labels)
    if len(ids) < 2:
        raise ValidationError("Davies-Bouldin index needs at least two clusters")
    if centroids is None:
        cents = np.vstack([points[labels == c].mean(axis=0) for c in ids])
    else:
        cents = np.asarray(centroids, dtype=float)[ids]
    if all(np.sum(labels == c) == 1 for c in ids):
        raise DegenerateClusteringError("Davies-Bouldin index undefined when every cluster is a singleton")
    spread = np.array([np.linalg.norm(points[labels == c] - cents[i], axis=1).mean() for i, c in enumerate(ids)])
    sep = cdist(cents, cents)
    p = len(ids)
    total = 0.0
    for i in range(p):
        worst = 0.0
        for j in range(p):
            if i == j:
                continue
            if sep[i, j] == 0:
                raise DegenerateClusteringError(f"clusters {ids[i]} and {ids[j]} have coincident centroids")
            worst = max(worst, (spread[i] + spread[j]) / sep[i, j])
        total += worst
    return total / p


@dataclass(frozen=True, eq=False)
class SilhouetteResult:
    values: np.ndarray
    mean: float


def silhouette(points, labels) -> SilhouetteResult:
    """Per-point silhouette (b - a) / max(a, b); members of singleton clusters score 0."""
    points = np.asarray(points, dtype=float)
    labels = _check_labels(points, labels)
    ids = np.unique(labels)
    if len(ids) < 2:
        raise ValidationError("silhouette needs at least two clusters")
    D = cdist(points, points)
    masks = [labels == c for c in ids]
    sizes = np.array([m.sum() for m in masks])
    # per-point sum of distances to each cluster
    sums = np.column_stack([D[:, m].sum(axis=1) for m in masks])
    own = np.searchsorted(ids, labels)
    rows = np.arange(len(points))
    own_size = sizes[own]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = sums[rows, own] / (own_size - 1)
        means = sums / sizes
    means[rows, own] = np.inf
    b = means.min(axis=1)
    denom = np.maximum(a, b)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = np.where(denom > 0, (b - a) / denom, 0.0)
    s = np.where(own_size > 1, s, 0.0)
    return SilhouetteResult(s, float(s.mean()))


@dataclass(frozen=True)
class ValidityRow:
    k: int
    silhouette: float
    dbi: float


@dataclass(frozen=True)
class ValidityReport:
    rows: tuple[ValidityRow, ...]
    chosen_k: int

    @property
    def chosen(self) -> ValidityRow:
        return next(r for r in self.rows if r.k == self.chosen_k)

    def write_csv(self, path: str | Path) -> Path:
        return artifacts.write_csv(
            path,
            "validity_report",
            ["k", "silhouette", "dbi"],
            ([r.k, float(r.silhouette), float(r.dbi)] for r in self.rows),
            footer=[f"chosen_k={self.chosen_k}"],
        )

    @classmethod
    def read_csv(cls, path: str | Path) -> "ValidityReport":
        header, rows, footer = artifacts.read_csv(path, "validity_report")
        parsed = tuple(ValidityRow(int(r[0]), float(r[1]), float(r[2])) for r in rows)
        chosen = [ln for ln in footer if ln.startswith("chosen_k=")]
        if not chosen:
            raise DataError(f"{path}: missing chosen_k footer")
        return cls(parsed, int(chosen[0].split("=", 1)[1]))


def choose_k(rows: Iterable[ValidityRow | tuple]) -> ValidityReport:
    """Pick the k with the highest silhouette (smallest k on ties); warn if DBI disagrees."""
    rows = tuple(r if isinstance(r, ValidityRow) else ValidityRow(*r) for r in rows)
    if not rows:
        raise ValidationError("no candidate cluster counts")
    best_sil = max(rows, key=lambda r: (r.silhouette, -r.k))
    best_dbi = min(rows, key=lambda r: (r.dbi, r.k))
    if best_dbi.k != best_sil.k:
        warnings.warn(
            f"silhouette selects k={best_sil.k} but Davies-Bouldin prefers k={best_dbi.k}",
            IndexDisagreementWarning,
            stacklevel=2,
        )
    return ValidityReport(rows, best_sil.k)


def scan_k(model: SomModel | np.ndarray, k_min: int, k_max: int) -> ValidityReport:
    """Evaluate silhouette and DBI of the Ward super-clustering for each k in range."""
    points = model.weights if isinstance(model, SomModel) else np.asarray(model, dtype=float)
    distinct = _distinct_rows(points)
    if not 2 <= k_min <= k_max <= distinct:
        raise ValidationError(f"invalid k range [{k_min}, {k_max}] for {distinct} distinct neurons")
    rows = []
    for k in range(k_min, k_max + 1):
        sc = supercluster(points, k)
        rows.append(ValidityRow(k, silhouette(points, sc.neuron_labels).mean, dbi(points, sc.neuron_labels, sc.centroids)))
        logger.debug("k=%d silhouette=%.4f dbi=%.4f", k, rows[-1].silhouette, rows[-1].dbi)
    return choose_k(rows)


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    region_ids: tuple[str, ...]
    bmu: np.ndarray
    cluster: np.ndarray

    def counts(self, k: int) -> np.ndarray:
        return np.bincount(self.cluster, minlength=k)

    def as_dict(self) -> dict[str, int]:
        return {rid: int(c) for rid, c in zip(self.region_ids, self.cluster)}

    def write_csv(self, path: str | Path) -> Path:
        return artifacts.write_csv(
            path,
            "cluster_assignment",
            ["region_id", "bmu", "cluster_id"],
            ([rid, int(b), int(c)] for rid, b, c in zip(self.region_ids, self.bmu, self.cluster)),
        )

    @classmethod
    def read_csv(cls, path: str | Path) -> "ClusterAssignment":
        _, rows, _ = artifacts.read_csv(path, "cluster_assignment")
        return cls(
            tuple(r[0] for r in rows),
            np.array([int(r[1]) for r in rows], dtype=int),
            np.array([int(r[2]) for r in rows], dtype=int),
        )


def assign_regions(model: SomModel, clustering: SuperClustering, X: FeatureMatrix | np.ndarray,
                   region_ids: Sequence[str] | None = None) -> ClusterAssignment:
    """Map each region to its BMU and that neuron's super-cluster."""
    if len(clustering.neuron_labels) != model.n_neurons:
        raise ValidationError("clustering does not match the SOM's neuron count")
    if region_ids is None:
        if not isinstance(X, FeatureMatrix):
            raise ValidationError("region_ids required for a bare array")
        region_ids = X.row_ids
    winners = bmus(X, model)
    return ClusterAssignment(tuple(region_ids), winners, np.asarray(clustering.neuron_labels)[winners])
