"""Seeded synthetic datasets: Gaussian blobs and a small census with geometry.

The committed fixtures under ``geosom/data`` and ``tests/data`` were produced
by :func:`write_mini_census` and :func:`write_blobs`; regenerating them with the
same seed reproduces the files byte for byte.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from geosom import artifacts

POPULATION_COLUMN = "T1-1AGETT"

# (group, [(feature name, [raw columns])]) -- raw columns in a group partition the population
_GROUPS: list[tuple[str, list[tuple[str, list[str]]]]] = [
    ("age", [
        ("Age0-4", [f"T1-1AGE{i}M" for i in range(5)]),
        ("Age5-14", ["T1-1AGE5_14"]),
        ("Age15-24", ["T1-1AGE15_24"]),
        ("Age25-44", ["T1-1AGE25_44"]),
        ("Age45-64", ["T1-1AGE45_64"]),
        ("Age65+", ["T1-1AGE65P"]),
    ]),
    ("marital", [
        ("Single", ["T1-2SGL"]), ("Married", ["T1-2MAR"]), ("Separated", ["T1-2SEP"]),
        ("Divorced", ["T1-2DIV"]), ("Widowed", ["T1-2WID"]),
    ]),
    ("household", [
        ("HouseShare", ["T4-1HS"]), ("CoupleNoChild", ["T4-1CNC"]), ("CoupleWithChild", ["T4-1CWC"]),
        ("LoneParent", ["T4-1LP"]), ("OnePerson", ["T4-1OP"]), ("OtherHousehold", ["T4-1OTH"]),
    ]),
    ("education", [
        ("EduPrimary", ["T10-4PRI"]), ("EduLowerSecondary", ["T10-4LS"]),
        ("EduUpperSecondary", ["T10-4US"]), ("EduHigher", ["T10-4HD", "T10-4PD"]),
        (None, ["T10-4NS"]),
    ]),
    ("social_class", [
        ("ClassProfessional", ["T9-1PW"]), ("ClassManagerial", ["T9-1MT"]), ("ClassNonManual", ["T9-1NM"]),
        ("ClassSkilled", ["T9-1S"]), ("ClassSemiSkilled", ["T9-1SS"]), ("ClassUnskilled", ["T9-1US"]),
        ("ClassOther", ["T9-1OTH"]),
    ]),
    ("economic", [
        ("Employed", ["T8-1W"]), ("Unemployed", ["T8-1LFFJ", "T8-1STU"]), ("Student", ["T8-1S"]),
        ("HomeDuties", ["T8-1LAHF"]), ("Retired", ["T8-1R"]), ("UnableToWork", ["T8-1U"]),
        ("EconOther", ["T8-1O"]),
    ]),
    ("tenure", [
        ("OwnerMortgage", ["T6-3OMLH"]), ("OwnerOutright", ["T6-3OO"]), ("PrivateRent", ["T6-3RPL"]),
        ("SocialRent", ["T6-3RLA"]), ("RentFree", ["T6-3OFR"]), ("TenureNotStated", ["T6-3NS"]),
    ]),
    ("commute", [
        ("Foot", ["T11-1FW"]), ("Bicycle", ["T11-1BIW"]), ("Bus", ["T11-1BUW"]), ("Train", ["T11-1TDLW"]),
        ("CarDriver", ["T11-1CDW"]), ("CarPassenger", ["T11-1CPW"]), ("WorkFromHome", ["T11-1WMFHW"]),
        (None, ["T11-1OTHW"]),
    ]),
    ("health", [
        ("HealthVeryGood", ["T12-3VGT"]), ("HealthGood", ["T12-3GT"]), ("HealthFair", ["T12-3FT"]),
        ("HealthBad", ["T12-3BT"]), ("HealthVeryBad", ["T12-3VBT"]),
    ]),
]

N_REGION_TYPES = 4
CASE_RATES = (0.006, 0.0075, 0.0095, 0.0105)


def recipe_dict() -> dict:
    features = []
    for _, members in _GROUPS:
        for name, cols in members:
            if name is not None:
                features.append({"name": name, "sources": cols, "denominator": "population"})
    return {"population_column": POPULATION_COLUMN, "features": features}


def make_blobs(n: int = 300, m: int = 5, centers: int = 3, spread: float = 0.2,
               separation: float = 6.0, seed: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Equal-size isotropic Gaussian blobs with centres ``separation`` apart on random axes."""
    rng = np.random.default_rng(seed)
    # orthogonal directions keep the centres pairwise equidistant
    q, _ = np.linalg.qr(rng.normal(size=(m, m)))
    cents = separation / np.sqrt(2) * q[:, :centers].T
    labels = np.repeat(np.arange(centers), int(np.ceil(n / centers)))[:n]
    X = cents[labels] + spread * rng.normal(size=(n, m))
    return X, labels


def write_blobs(path: str | Path, **kwargs) -> Path:
    X, labels = make_blobs(**kwargs)
    path = Path(path)
    m = X.shape[1]
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["point_id", "label", *[f"x{j}" for j in range(m)]])
        for i, (row, lab) in enumerate(zip(X, labels)):
            w.writerow([f"p{i:03d}", int(lab), *[repr(float(v)) for v in row]])
    return path


def read_blobs(path: str | Path) -> tuple[list[str], np.ndarray, np.ndarray]:
    with Path(path).open(newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))[1:]
    ids = [r[0] for r in rows]
    labels = np.array([int(r[1]) for r in rows])
    X = np.array([[float(v) for v in r[2:]] for r in rows])
    return ids, X, labels


def _grid_types(rows: int, cols: int, rng: np.random.Generator) -> np.ndarray:
    # spatially coherent region types: nearest of a few random seeds, then light noise
    seeds = rng.uniform([0, 0], [rows, cols], size=(N_REGION_TYPES * 2, 2))
    seed_type = np.arange(len(seeds)) % N_REGION_TYPES
    rr, cc = np.meshgrid(np.arange(rows) + 0.5, np.arange(cols) + 0.5, indexing="ij")
    pts = np.column_stack([rr.ravel(), cc.ravel()])
    nearest = np.argmin(((pts[:, None, :] - seeds[None, :, :]) ** 2).sum(-1), axis=1)
    types = seed_type[nearest]
    flip = rng.random(len(types)) < 0.1
    types[flip] = rng.integers(0, N_REGION_TYPES, size=flip.sum())
    return types


def make_mini_census(grid: tuple[int, int] = (12, 10), seed: int = 2020) -> dict:
    """Build census counts, case counts and square region polygons.

    Returns a dict with keys ``census_header``, ``census_rows``, ``cases_rows``,
    ``geojson`` and ``recipe``.
    """
    rng = np.random.default_rng(seed)
    n_rows, n_cols = grid
    n = n_rows * n_cols
    types = _grid_types(n_rows, n_cols, rng)

    type_profiles = []
    for _ in range(N_REGION_TYPES):
        profile = []
        for _, members in _GROUPS:
            raw_cols = [c for _, cols in members for c in cols]
            profile.append(rng.dirichlet(np.full(len(raw_cols), 2.0)))
        type_profiles.append(profile)

    population = rng.integers(1500, 6000, size=n)
    raw_header = [c for _, members in _GROUPS for _, cols in members for c in cols]
    census_rows = []
    cases_rows = []
    for i in range(n):
        t = types[i]
        counts = []
        for g, _ in enumerate(_GROUPS):
            p = rng.dirichlet(80.0 * type_profiles[t][g])
            counts.extend(rng.multinomial(population[i], p).tolist())
        rid = f"E{2000 + i:05d}"
        census_rows.append([rid, f"Area {i + 1:03d}", int(population[i]), *counts])
        rate = CASE_RATES[t] * rng.uniform(0.85, 1.15)
        cases_rows.append([rid, int(rng.binomial(population[i], rate)), int(population[i])])

    lon0, lat0, dlon, dlat = -6.40, 53.25, 0.03, 0.02
    features = []
    for i in range(n):
        r, c = divmod(i, n_cols)
        x0, y0 = round(lon0 + c * dlon, 6), round(lat0 + r * dlat, 6)
        x1, y1 = round(x0 + dlon, 6), round(y0 + dlat, 6)
        ring = [[x0, y0], [x1, y0], [x1, y1], [x0, y1], [x0, y0]]
        features.append({
            "type": "Feature",
            "properties": {"GEOGID": census_rows[i][0], "GEOGDESC": census_rows[i][1]},
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    return {
        "census_header": ["GEOGID", "GEOGDESC", POPULATION_COLUMN, *raw_header],
        "census_rows": census_rows,
        "cases_rows": cases_rows,
        "geojson": {"type": "FeatureCollection", "features": features},
        "recipe": recipe_dict(),
        "region_types": types.tolist(),
    }


DEFAULT_CONFIG = {
    "paths": {
        "census": "census.csv",
        "recipe": "recipe.json",
        "cases": "cases.csv",
        "geometries": "regions.geojson",
        "output_dir": "out",
    },
    "ingest": {"id_column": "GEOGID", "name_column": "GEOGDESC", "geometry_id_property": "GEOGID"},
    "dimred": {"kernel": "gaussian", "sigma": None, "components": 10, "feature_count": 21, "hopkins_fraction": 0.1},
    "som": {"rows": 10, "cols": 8, "sigma0": 4.0, "theta0": 0.57, "iterations": 6000},
    "validity": {"k_min": 3, "k_max": 9},
    "include_outcome_features": True,
    "seed": 2020,
}


def write_mini_census(directory: str | Path, seed: int = 2020) -> dict[str, Path]:
    """Write census.csv, recipe.json, cases.csv, regions.geojson and config.json."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    data = make_mini_census(seed=seed)
    paths = {name: d / fname for name, fname in [
        ("census", "census.csv"), ("recipe", "recipe.json"), ("cases", "cases.csv"),
        ("geometries", "regions.geojson"), ("config", "config.json"),
    ]}
    with paths["census"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(data["census_header"])
        w.writerows(data["census_rows"])
    with paths["cases"].open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["region_id", "cases", "population"])
        w.writerows(data["cases_rows"])
    paths["recipe"].write_text(json.dumps(data["recipe"], indent=1) + "\n", encoding="utf-8")
    paths["geometries"].write_text(json.dumps(data["geojson"], separators=(",", ":")) + "\n", encoding="utf-8")
    paths["config"].write_text(artifacts.dumps_json(DEFAULT_CONFIG), encoding="utf-8")
    return paths
