"""Census ingestion: raw count tables, percentage features, z-scoring."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from geosom import artifacts
from geosom.errors import DataError, ValidationError

logger = logging.getLogger(__name__)

RAW_PERCENT = "raw_percent"
STANDARDIZED = "standardized"
POPULATION = "population"

_ZERO_STD = 1e-12


@dataclass(frozen=True)
class RawCensusRow:
    region_id: str
    region_name: str
    counts: Mapping[str, int]


@dataclass(frozen=True)
class RawCensusTable:
    rows: tuple[RawCensusRow, ...]
    column_order: tuple[str, ...]

    def __post_init__(self):
        seen: set[str] = set()
        for i, row in enumerate(self.rows):
            if not row.region_id:
                raise DataError(f"row {i}: empty region_id")
            if row.region_id in seen:
                raise DataError(f"duplicate region_id {row.region_id}")
            seen.add(row.region_id)
            for col in self.column_order:
                if col not in row.counts:
                    raise DataError(f"region {row.region_id}: no value for column {col}")
                if row.counts[col] < 0:
                    raise DataError(f"region {row.region_id}: negative count in {col}")

    @property
    def region_ids(self) -> list[str]:
        return [r.region_id for r in self.rows]

    def column(self, name: str) -> np.ndarray:
        if name not in self.column_order:
            raise DataError(f"unknown column {name!r}")
        return np.array([r.counts[name] for r in self.rows], dtype=np.int64)


@dataclass(frozen=True)
class DerivedFeature:
    name: str
    sources: tuple[str, ...]
    # None means "divide by the recipe's population column"
    denominator: str | None = None


@dataclass(frozen=True)
class FeatureRecipe:
    features: tuple[DerivedFeature, ...]
    population_column: str

    def __post_init__(self):
        names = [f.name for f in self.features]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValidationError(f"recipe defines duplicate feature names: {dupes}")
        if not self.features:
            raise ValidationError("recipe defines no features")

    def validate_against(self, raw: RawCensusTable) -> None:
        known = set(raw.column_order)
        if self.population_column not in known:
            raise DataError(f"population column {self.population_column!r} not in census table")
        for feat in self.features:
            missing = [c for c in feat.sources if c not in known]
            if feat.denominator is not None and feat.denominator not in known:
                missing.append(feat.denominator)
            if missing:
                raise DataError(f"feature {feat.name}: unknown source column(s) {missing}")


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    row_ids: tuple[str, ...]
    feature_names: tuple[str, ...]
    values: np.ndarray
    kind: str = RAW_PERCENT

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        if values.ndim != 2:
            raise DataError("feature values must be a 2-D matrix")
        n, m = values.shape
        if n < 2 or m < 1:
            raise DataError(f"feature matrix needs n >= 2 and m >= 1, got {n}x{m}")
        if len(self.row_ids) != n or len(self.feature_names) != m:
            raise DataError("row_ids / feature_names do not match matrix shape")
        if not np.all(np.isfinite(values)):
            raise DataError("feature matrix contains non-finite values")
        if self.kind not in (RAW_PERCENT, STANDARDIZED):
            raise DataError(f"unknown matrix kind {self.kind!r}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def select(self, names: Sequence[str]) -> "FeatureMatrix":
        idx = [self.feature_names.index(n) for n in names]
        return FeatureMatrix(self.row_ids, tuple(names), self.values[:, idx], self.kind)


@dataclass(frozen=True, eq=False)
class ScalingParams:
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    dropped: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if np.any(np.asarray(self.std) <= 0):
            raise DataError("scaling std must be positive for every retained feature")

    def inverse_transform(self, X: FeatureMatrix) -> FeatureMatrix:
        if X.feature_names != self.feature_names:
            raise DataError("feature names do not match the scaling parameters")
        return FeatureMatrix(X.row_ids, X.feature_names, X.values * self.std + self.mean, RAW_PERCENT)

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "mean": [float(v) for v in self.mean],
            "std": [float(v) for v in self.std],
            "dropped": list(self.dropped),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingParams":
        return cls(tuple(d["feature_names"]), np.array(d["mean"]), np.array(d["std"]), tuple(d["dropped"]))


def load_census(path: str | Path, id_column: str = "GEOGID", name_column: str = "GEOGDESC") -> RawCensusTable:
    """Read a comma-separated census extract with one row per region.

    Every column other than the id and name columns must hold non-negative
    integer counts. Errors name the offending line and column.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"census file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        for col in (id_column, name_column):
            if col not in header:
                raise DataError(f"{path}: missing column {col!r} in header")
        id_idx, name_idx = header.index(id_column), header.index(name_column)
        count_cols = [(i, h) for i, h in enumerate(header) if i not in (id_idx, name_idx)]

        rows: list[RawCensusRow] = []
        seen: dict[str, int] = {}
        for lineno, record in enumerate(reader, start=2):
            if not record or all(not c.strip() for c in record):
                continue
            if len(record) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} cells, found {len(record)}")
            rid = record[id_idx].strip()
            if not rid:
                raise DataError(f"{path}:{lineno}: empty {id_column}")
            if rid in seen:
                raise DataError(f"{path}:{lineno}: duplicate region_id {rid} (first seen on line {seen[rid]})")
            seen[rid] = lineno
            counts = {}
            for i, col in count_cols:
                cell = record[i].strip()
                try:
                    value = int(cell)
                except ValueError:
                    raise DataError(f"{path}:{lineno}: column {col}: non-integer count {cell!r}") from None
                if value < 0:
                    raise DataError(f"{path}:{lineno}: column {col}: negative count {value}")
                counts[col] = value
            rows.append(RawCensusRow(rid, record[name_idx].strip(), counts))
    if not rows:
        raise DataError(f"{path}: no data rows")
    return RawCensusTable(tuple(rows), tuple(h for _, h in count_cols))


def load_recipe(path: str | Path) -> FeatureRecipe:
    """Parse a recipe JSON document.

    Schema::

        {"population_column": "T1-1AGETT",
         "features": [{"name": "Age0-4", "sources": ["T1-1AGE0M", ...],
                       "denominator": "population" | "<column>"}, ...]}
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"recipe file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    return recipe_from_dict(doc)


def recipe_from_dict(doc: dict) -> FeatureRecipe:
    try:
        pop = doc["population_column"]
        feats = []
        for entry in doc["features"]:
            denom = entry.get("denominator", POPULATION)
            feats.append(
                DerivedFeature(
                    name=entry["name"],
                    sources=tuple(entry["sources"]),
                    denominator=None if denom == POPULATION else denom,
                )
            )
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed recipe: missing field {exc}") from exc
    return FeatureRecipe(tuple(feats), pop)


def derive_features(raw: RawCensusTable, recipe: FeatureRecipe) -> tuple[FeatureMatrix, np.ndarray]:
    """Turn raw counts into percentage features.

    Returns:
        The raw_percent matrix and the per-region population vector.
    """
    recipe.validate_against(raw)
    population = raw.column(recipe.population_column)
    cols = []
    for feat in recipe.features:
        denom = population if feat.denominator is None else raw.column(feat.denominator)
        bad = np.flatnonzero(denom <= 0)
        if bad.size:
            names = [raw.rows[i].region_id for i in bad]
            raise DataError(f"feature {feat.name}: non-positive denominator for region(s) {names}")
        numer = sum((raw.column(c) for c in feat.sources), start=np.zeros(len(raw.rows), dtype=np.int64))
        cols.append(100.0 * numer / denom)
    values = np.column_stack(cols)
    fm = FeatureMatrix(tuple(raw.region_ids), tuple(f.name for f in recipe.features), values, RAW_PERCENT)
    return fm, population


def standardize(X: FeatureMatrix) -> tuple[FeatureMatrix, ScalingParams]:
    """Z-score each column with the population (1/n) standard deviation.

    Columns whose std is below 1e-12 are dropped and listed in
    ``ScalingParams.dropped``.
    """
    values = X.values
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    keep = std >= _ZERO_STD
    dropped = tuple(name for name, k in zip(X.feature_names, keep) if not k)
    if dropped:
        logger.warning("dropping %d zero-variance feature(s): %s", len(dropped), ", ".join(dropped))
    if not keep.any():
        raise DataError("no informative features: every column is constant")
    names = tuple(name for name, k in zip(X.feature_names, keep) if k)
    z = (values[:, keep] - mean[keep]) / std[keep]
    params = ScalingParams(names, mean[keep], std[keep], dropped)
    return FeatureMatrix(X.row_ids, names, z, STANDARDIZED), params


def append_columns(X: FeatureMatrix, columns: Mapping[str, np.ndarray]) -> FeatureMatrix:
    """Append extra columns, z-scored, to a standardized matrix."""
    values = [X.values]
    names = list(X.feature_names)
    for name, col in columns.items():
        col = np.asarray(col, dtype=float)
        std = col.std()
        if std < _ZERO_STD:
            logger.warning("appended column %s is constant; skipped", name)
            continue
        values.append(((col - col.mean()) / std)[:, None])
        names.append(name)
    return FeatureMatrix(X.row_ids, tuple(names), np.hstack(values), X.kind)


def write_feature_matrix(path: str | Path, X: FeatureMatrix) -> Path:
    rows = ([rid, *map(float, vals)] for rid, vals in zip(X.row_ids, X.values))
    return artifacts.write_csv(path, f"feature_matrix/{X.kind}", ["region_id", *X.feature_names], rows)


def read_feature_matrix(path: str | Path, kind: str = STANDARDIZED) -> FeatureMatrix:
    header, rows, _ = artifacts.read_csv(path, f"feature_matrix/{kind}")
    try:
        values = [[float(c) for c in r[1:]] for r in rows]
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric cell ({exc})") from exc
    return FeatureMatrix(tuple(r[0] for r in rows), tuple(header[1:]), np.array(values), kind)
