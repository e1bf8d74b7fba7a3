"""End-to-end orchestration: ingest -> reduce -> train -> validate -> report -> render.

Every phase reads its inputs from, and writes its outputs to, the configured
output directory, so phases can be rerun individually.
"""

from __future__ import annotations

import copy
import json
import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from geosom import __version__, artifacts, dimred, geo, ingest, som, validity
from geosom.errors import DataError, GeosomError, ValidationError

logger = logging.getLogger(__name__)

PHASES = ("ingest", "reduce", "train", "validate", "report", "render")

FILES = {
    "features_raw": "features_raw.csv",
    "features": "features.csv",
    "scaling": "scaling.json",
    "kpca_model": "kpca_model.json",
    "feature_scores": "feature_scores.csv",
    "reduced": "reduced.csv",
    "hopkins": "hopkins.json",
    "som_model": "som_model.json",
    "validity": "validity.csv",
    "superclusters": "superclusters.json",
    "assignment": "assignment.csv",
    "summary": "cluster_summary.csv",
    "geojson": "clusters.geojson",
    "svg": "clusters.svg",
    "manifest": "manifest.json",
}

PHASE_OUTPUTS = {
    "ingest": ("features_raw", "features", "scaling"),
    "reduce": ("kpca_model", "feature_scores", "reduced", "hopkins"),
    "train": ("som_model",),
    "validate": ("validity", "superclusters", "assignment"),
    "report": ("summary",),
    "render": ("geojson", "svg"),
}

DEFAULTS: dict[str, Any] = {
    "paths": {"census": None, "recipe": None, "cases": None, "geometries": None, "output_dir": "out"},
    "ingest": {"id_column": "GEOGID", "name_column": "GEOGDESC", "geometry_id_property": "GEOGID"},
    "dimred": {"kernel": "gaussian", "sigma": None, "components": 10, "feature_count": 21,
               "hopkins_fraction": 0.1},
    "som": {"rows": som.DEFAULT_LATTICE[0], "cols": som.DEFAULT_LATTICE[1], "sigma0": 5.0,
            "theta0": som.DEFAULT_THETA0, "time_constant_G": None, "iterations": 10000},
    "validity": {"k_min": 3, "k_max": 9},
    "include_outcome_features": True,
    "seed": 0,
}


def _merge(base: dict, extra: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in extra.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = value
    return out


@dataclass
class PipelineConfig:
    paths: dict
    ingest: dict
    dimred: dict
    som: dict
    validity: dict
    include_outcome_features: bool
    seed: int
    base_dir: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, doc: dict, base_dir: str | Path = ".") -> "PipelineConfig":
        unknown = set(doc) - set(DEFAULTS) - {"format_version", "kind"}
        if unknown:
            raise ValidationError(f"unknown config section(s): {sorted(unknown)}")
        merged = _merge(DEFAULTS, doc)
        return cls(
            paths=merged["paths"],
            ingest=merged["ingest"],
            dimred=merged["dimred"],
            som=merged["som"],
            validity=merged["validity"],
            include_outcome_features=bool(merged["include_outcome_features"]),
            seed=int(merged["seed"]),
            base_dir=Path(base_dir).resolve(),
        )

    @classmethod
    def load(cls, path: str | Path, overrides: dict | None = None) -> "PipelineConfig":
        path = Path(path)
        if not path.exists():
            raise ValidationError(f"config file not found: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(_merge(doc, overrides or {}), path.parent)

    def snapshot(self) -> dict:
        return {
            "paths": dict(self.paths),
            "ingest": dict(self.ingest),
            "dimred": dict(self.dimred),
            "som": dict(self.som),
            "validity": dict(self.validity),
            "include_outcome_features": self.include_outcome_features,
            "seed": self.seed,
        }

    def path(self, key: str) -> Path:
        value = self.paths.get(key)
        if value is None:
            raise ValidationError(f"config has no paths.{key}")
        p = Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> Path:
        return self.path("output_dir")

    def artifact(self, name: str) -> Path:
        return self.output_dir / FILES[name]

    def som_config(self) -> som.SomConfig:
        s = self.som
        return som.SomConfig(
            rows=int(s["rows"]),
            cols=int(s["cols"]),
            sigma0=float(s["sigma0"]),
            theta0=float(s["theta0"]),
            time_constant_G=None if s.get("time_constant_G") is None else float(s["time_constant_G"]),
            iterations=int(s["iterations"]),
            seed=int(s.get("seed", self.seed)),
        )

    def kernel_spec(self, X: ingest.FeatureMatrix) -> dimred.KernelSpec:
        kind = self.dimred["kernel"]
        if kind == dimred.LINEAR:
            return dimred.KernelSpec(dimred.LINEAR)
        sigma = self.dimred.get("sigma")
        return dimred.KernelSpec(kind, float(sigma) if sigma is not None else dimred.median_bandwidth(X))

    def validate(self, phases=PHASES) -> None:
        """Check ranges and input paths before any work is done."""
        scfg = self.som_config()
        n_neurons = scfg.rows * scfg.cols
        k_min, k_max = int(self.validity["k_min"]), int(self.validity["k_max"])
        if k_min < 2 or k_min > k_max:
            raise ValidationError(f"invalid cluster range [{k_min}, {k_max}]")
        if k_max > n_neurons:
            raise ValidationError(f"k_max={k_max} exceeds the neuron count {n_neurons}")
        d = self.dimred
        if int(d["components"]) < 1:
            raise ValidationError("dimred.components must be >= 1")
        if int(d["feature_count"]) < 1:
            raise ValidationError("dimred.feature_count must be >= 1")
        if not 0 < float(d["hopkins_fraction"]) < 1:
            raise ValidationError("dimred.hopkins_fraction must be in (0, 1)")
        dimred.KernelSpec(d["kernel"], 1.0 if d.get("sigma") is None else float(d["sigma"]))
        needed = {
            "ingest": ("census", "recipe"),
            "reduce": ("cases",) if self.include_outcome_features else (),
            "report": ("cases",),
            "render": ("geometries",),
        }
        for phase in phases:
            for key in needed.get(phase, ()):
                if not self.path(key).exists():
                    raise ValidationError(f"paths.{key} does not exist: {self.path(key)}")


# ---------------------------------------------------------------- phases


def phase_ingest(cfg: PipelineConfig) -> dict:
    raw = ingest.load_census(cfg.path("census"), cfg.ingest["id_column"], cfg.ingest["name_column"])
    recipe = ingest.load_recipe(cfg.path("recipe"))
    pct, population = ingest.derive_features(raw, recipe)
    z, scaling = ingest.standardize(pct)
    ingest.write_feature_matrix(cfg.artifact("features_raw"), pct)
    ingest.write_feature_matrix(cfg.artifact("features"), z)
    artifacts.write_json(
        cfg.artifact("scaling"),
        "scaling",
        {**scaling.to_dict(), "population": {rid: int(p) for rid, p in zip(pct.row_ids, population)}},
    )
    return {"regions": len(z.row_ids), "features": len(z.feature_names), "dropped": list(scaling.dropped)}


def phase_reduce(cfg: PipelineConfig) -> dict:
    X = ingest.read_feature_matrix(cfg.artifact("features"))
    spec = cfg.kernel_spec(X)
    k = min(int(cfg.dimred["components"]), len(X.row_ids) - 1)
    model = dimred.fit_kpca(X, spec, k)
    model.save(cfg.artifact("kpca_model"))
    scores = dimred.project(model, X)

    fraction = float(cfg.dimred["hopkins_fraction"])
    h_before = dimred.hopkins(X, fraction, cfg.seed)
    h_after = dimred.hopkins(scores, fraction, cfg.seed)
    logger.info("hopkins before reduction %.3f, after %.3f", h_before, h_after)
    artifacts.write_json(cfg.artifact("hopkins"), "hopkins", {
        "before": h_before, "after": h_after, "sample_fraction": fraction, "seed": cfg.seed,
    })

    count = min(int(cfg.dimred["feature_count"]), len(X.feature_names))
    report = dimred.screen_features(X, model, count)
    report.write_csv(cfg.artifact("feature_scores"))
    reduced = X.select(report.selected_names)
    if cfg.include_outcome_features:
        cases = {r.region_id: r for r in geo.load_cases(cfg.path("cases"))}
        missing = [rid for rid in reduced.row_ids if rid not in cases]
        if missing:
            raise DataError(f"no case record for region(s) {missing}")
        reduced = ingest.append_columns(reduced, {
            "population": np.array([cases[r].population for r in reduced.row_ids], dtype=float),
            "cases": np.array([cases[r].cases for r in reduced.row_ids], dtype=float),
        })
    ingest.write_feature_matrix(cfg.artifact("reduced"), reduced)
    return {
        "kernel": spec.kind,
        "sigma": spec.sigma,
        "components": k,
        "hopkins_before": h_before,
        "hopkins_after": h_after,
        "selected": report.selected_names,
    }


def phase_train(cfg: PipelineConfig) -> dict:
    X = ingest.read_feature_matrix(cfg.artifact("reduced"))
    scfg = cfg.som_config()
    model = som.train(X, scfg)
    model.save(cfg.artifact("som_model"))
    return {
        "neurons": model.n_neurons,
        "quantization_error": som.quantization_error(X, model),
        "topographic_error": som.topographic_error(X, model),
    }


def phase_validate(cfg: PipelineConfig) -> dict:
    model = som.SomModel.load(cfg.artifact("som_model"))
    X = ingest.read_feature_matrix(cfg.artifact("reduced"))
    report = validity.scan_k(model, int(cfg.validity["k_min"]), int(cfg.validity["k_max"]))
    report.write_csv(cfg.artifact("validity"))
    clustering = validity.supercluster(model, report.chosen_k)
    artifacts.write_json(cfg.artifact("superclusters"), "superclusters", {
        "k_clusters": clustering.k_clusters,
        "neuron_labels": [int(v) for v in clustering.neuron_labels],
        "centroids": clustering.centroids.tolist(),
    })
    assignment = validity.assign_regions(model, clustering, X)
    assignment.write_csv(cfg.artifact("assignment"))
    return {"chosen_k": report.chosen_k, "silhouette": report.chosen.silhouette, "dbi": report.chosen.dbi}


def phase_report(cfg: PipelineConfig) -> dict:
    assignment = validity.ClusterAssignment.read_csv(cfg.artifact("assignment"))
    summaries = geo.aggregate_cases(assignment, geo.load_cases(cfg.path("cases")))
    geo.write_summary_csv(cfg.artifact("summary"), summaries)
    return {"clusters": [
        {"cluster_id": s.cluster_id, "cases": s.total_cases, "population": s.total_population, "rate": s.rate}
        for s in summaries
    ]}


def phase_render(cfg: PipelineConfig) -> dict:
    assignment = validity.ClusterAssignment.read_csv(cfg.artifact("assignment"))
    summaries = geo.read_summary_csv(cfg.artifact("summary"))
    geometries = geo.load_geometries(cfg.path("geometries"), cfg.ingest["geometry_id_property"])
    result = geo.render_choropleth(assignment, geometries, summaries, cfg.artifact("geojson"), cfg.artifact("svg"))
    return {"unjoined_regions": list(result.unjoined_regions),
            "unassigned_geometries": list(result.unassigned_geometries)}


PHASE_FUNCS: dict[str, Callable[[PipelineConfig], dict]] = {
    "ingest": phase_ingest,
    "reduce": phase_reduce,
    "train": phase_train,
    "validate": phase_validate,
    "report": phase_report,
    "render": phase_render,
}


# ---------------------------------------------------------------- manifest


@dataclass
class RunManifest:
    config: dict
    tool_version: str = __version__
    artifacts: dict[str, str] = field(default_factory=dict)
    wall_time: dict[str, float] = field(default_factory=dict)
    phase_results: dict[str, dict] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "tool_version": self.tool_version,
            "artifacts": dict(sorted(self.artifacts.items())),
            "wall_time_seconds": dict(self.wall_time),
            "phase_results": self.phase_results,
        }

    @classmethod
    def load_or_new(cls, path: Path, config: dict) -> "RunManifest":
        if not path.exists():
            return cls(config)
        doc = artifacts.read_json(path, "run_manifest")
        return cls(config, doc["tool_version"], doc["artifacts"], doc["wall_time_seconds"], doc["phase_results"])

    def save(self, path: Path) -> Path:
        return artifacts.write_json(path, "run_manifest", _jsonable(self.to_dict()))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, Path):
        return str(obj)
    return obj


class PhaseError(GeosomError):
    def __init__(self, phase: str, cause: Exception):
        super().__init__(f"phase {phase} failed: {cause}")
        self.phase = phase
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)


@contextmanager
def _phase_guard(cfg: PipelineConfig, phase: str):
    marker = cfg.output_dir / f"{phase}.failed"
    if marker.exists():
        marker.unlink()
    try:
        yield
    except Exception as exc:
        marker.write_text(f"{phase}: {type(exc).__name__}: {exc}\n", encoding="utf-8")
        raise PhaseError(phase, exc) from exc


def run_phase(cfg: PipelineConfig, phase: str, manifest: RunManifest | None = None) -> RunManifest:
    """Run one phase, then record its outputs' hashes in the manifest."""
    if phase not in PHASE_FUNCS:
        raise ValidationError(f"unknown phase {phase!r}")
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = cfg.artifact("manifest")
    if manifest is None:
        manifest = RunManifest.load_or_new(manifest_path, cfg.snapshot())
    start = time.perf_counter()
    with _phase_guard(cfg, phase):
        result = PHASE_FUNCS[phase](cfg)
    manifest.wall_time[phase] = round(time.perf_counter() - start, 6)
    manifest.phase_results[phase] = result
    for name in PHASE_OUTPUTS[phase]:
        manifest.artifacts[FILES[name]] = artifacts.sha256_file(cfg.artifact(name))
    manifest.save(manifest_path)
    return manifest


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    cfg.validate()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(cfg.snapshot())
    for phase in PHASES:
        logger.info("running phase %s", phase)
        run_phase(cfg, phase, manifest)
    return manifest
