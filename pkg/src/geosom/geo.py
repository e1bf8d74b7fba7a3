"""Case aggregation per cluster and choropleth output (GeoJSON + SVG)."""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from geosom import artifacts
from geosom.errors import DataError
from geosom.validity import ClusterAssignment

logger = logging.getLogger(__name__)

# Fixed categorical palette; index = cluster id. "unassigned" is drawn grey.
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#7f7f7f",
)
UNASSIGNED_COLOR = "#d9d9d9"


@dataclass(frozen=True)
class CaseRecord:
    region_id: str
    cases: int
    population: int

    def __post_init__(self):
        if self.cases < 0:
            raise DataError(f"region {self.region_id}: negative case count")
        if self.population <= 0:
            raise DataError(f"region {self.region_id}: population must be positive")
        if self.cases > self.population:
            raise DataError(f"region {self.region_id}: cases exceed population")


@dataclass(frozen=True)
class ClusterSummary:
    cluster_id: int
    total_cases: int
    total_population: int

    @property
    def rate(self) -> float:
        return self.total_cases / self.total_population


def load_cases(path: str | Path) -> list[CaseRecord]:
    """Read ``region_id,cases,population`` rows."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"cases file not found: {path}")
    with path.open(newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        need = {"region_id", "cases", "population"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: header must contain {sorted(need)}")
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                out.append(CaseRecord(row["region_id"].strip(), int(row["cases"]), int(row["population"])))
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    if not out:
        raise DataError(f"{path}: no data rows")
    return out


def aggregate_cases(assignment: ClusterAssignment, cases: Iterable[CaseRecord]) -> list[ClusterSummary]:
    """Sum cases and population over the regions of each cluster."""
    by_region: dict[str, CaseRecord] = {}
    dupes = set()
    for rec in cases:
        if rec.region_id in by_region:
            dupes.add(rec.region_id)
        by_region[rec.region_id] = rec
    assigned = set(assignment.region_ids)
    dupes &= assigned
    if dupes:
        raise DataError(f"duplicate case records for region(s) {sorted(dupes)}")
    missing = [rid for rid in assignment.region_ids if rid not in by_region]
    if missing:
        raise DataError(f"no case record for region(s) {missing}")
    totals: dict[int, list[int]] = {}
    for rid, cid in zip(assignment.region_ids, assignment.cluster):
        rec = by_region[rid]
        acc = totals.setdefault(int(cid), [0, 0])
        acc[0] += rec.cases
        acc[1] += rec.population
    return [ClusterSummary(cid, c, p) for cid, (c, p) in sorted(totals.items())]


def write_summary_csv(path: str | Path, summaries: Sequence[ClusterSummary]) -> Path:
    rows = (
        [f"Cluster {s.cluster_id + 1}", s.cluster_id, s.total_cases, s.total_population, float(s.rate), f"{s.rate:.4f}"]
        for s in summaries
    )
    return artifacts.write_csv(
        path,
        "cluster_summary",
        ["cluster", "cluster_id", "cases", "population", "rate", "rate_4dp"],
        rows,
    )


def read_summary_csv(path: str | Path) -> list[ClusterSummary]:
    _, rows, _ = artifacts.read_csv(path, "cluster_summary")
    return [ClusterSummary(int(r[1]), int(r[2]), int(r[3])) for r in rows]


@dataclass(frozen=True)
class RegionGeometry:
    region_id: str
    geometry: dict
    properties: dict

    @property
    def polygons(self) -> list[list[list[list[float]]]]:
        """Polygons as lists of rings, whatever the geometry type."""
        if self.geometry["type"] == "Polygon":
            return [self.geometry["coordinates"]]
        return list(self.geometry["coordinates"])


def _check_rings(polygons, where: str) -> None:
    for poly in polygons:
        for ring in poly:
            if len(ring) < 4 or list(ring[0]) != list(ring[-1]):
                raise DataError(f"{where}: polygon ring is not closed")


def load_geometries(path: str | Path, id_property: str) -> list[RegionGeometry]:
    """Read a GeoJSON FeatureCollection of Polygon/MultiPolygon features."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"geometry file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: malformed GeoJSON ({exc})") from exc
    return geometries_from_geojson(doc, id_property, str(path))


def geometries_from_geojson(doc: dict, id_property: str, where: str = "GeoJSON") -> list[RegionGeometry]:
    if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise DataError(f"{where}: not a GeoJSON FeatureCollection")
    out = []
    seen = set()
    for i, feat in enumerate(doc["features"]):
        props = feat.get("properties") or {}
        if id_property not in props:
            raise DataError(f"{where}: feature {i} has no {id_property!r} property")
        rid = str(props[id_property])
        if rid in seen:
            raise DataError(f"{where}: duplicate region id {rid}")
        seen.add(rid)
        geom = feat.get("geometry")
        if not isinstance(geom, dict) or geom.get("type") not in ("Polygon", "MultiPolygon"):
            raise DataError(f"{where}: feature {i} ({rid}) is not a Polygon or MultiPolygon")
        rg = RegionGeometry(rid, geom, dict(props))
        _check_rings(rg.polygons, f"{where}: feature {i} ({rid})")
        out.append(rg)
    return out


def dumps_geojson(doc: dict) -> str:
    return json.dumps(doc, separators=(",", ":"), allow_nan=False) + "\n"


def geometries_to_geojson(geometries: Sequence[RegionGeometry]) -> dict:
    return {
        "type": "FeatureCollection",
        "features": [
            {"type": "Feature", "properties": dict(g.properties), "geometry": copy.deepcopy(g.geometry)}
            for g in geometries
        ],
    }


@dataclass(frozen=True)
class RenderResult:
    geojson_path: Path
    svg_path: Path
    unjoined_regions: tuple[str, ...]
    unassigned_geometries: tuple[str, ...]


def choropleth_geojson(assignment: ClusterAssignment, geometries: Sequence[RegionGeometry],
                       summaries: Sequence[ClusterSummary]) -> tuple[dict, list[str], list[str]]:
    """Annotate geometries with cluster properties.

    Returns the FeatureCollection plus the assigned regions that lack a
    geometry and the geometries that lack an assignment.
    """
    summary = {s.cluster_id: s for s in summaries}
    cluster_of = assignment.as_dict()
    geom_ids = {g.region_id for g in geometries}
    features = []
    unassigned = []
    for g in geometries:
        props = dict(g.properties)
        cid = cluster_of.get(g.region_id)
        props["region_id"] = g.region_id
        if cid is None:
            unassigned.append(g.region_id)
            props.update(cluster_id=None, cluster_class="unassigned", cases=None, population=None, rate=None)
        else:
            s = summary.get(cid)
            props.update(
                cluster_id=cid,
                cluster_class=f"cluster-{cid + 1}",
                cases=None if s is None else s.total_cases,
                population=None if s is None else s.total_population,
                rate=None if s is None else s.rate,
            )
        features.append({"type": "Feature", "properties": props, "geometry": copy.deepcopy(g.geometry)})
    unjoined = [rid for rid in assignment.region_ids if rid not in geom_ids]
    for rid in unjoined:
        cid = cluster_of[rid]
        s = summary.get(cid)
        features.append({
            "type": "Feature",
            "properties": {
                "region_id": rid,
                "cluster_id": cid,
                "cluster_class": f"cluster-{cid + 1}",
                "cases": None if s is None else s.total_cases,
                "population": None if s is None else s.total_population,
                "rate": None if s is None else s.rate,
            },
            "geometry": None,
        })
    if unjoined:
        logger.warning("%d assigned region(s) have no geometry: %s", len(unjoined), ", ".join(unjoined))
    if unassigned:
        logger.warning("%d geometries have no cluster assignment", len(unassigned))
    return {"type": "FeatureCollection", "features": features}, unjoined, unassigned


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def choropleth_svg(assignment: ClusterAssignment, geometries: Sequence[RegionGeometry],
                   summaries: Sequence[ClusterSummary], width: int = 800) -> str:
    """Equirectangular SVG map, one ``<g>`` per cluster, with a legend."""
    cluster_of = assignment.as_dict()
    lons = [pt[0] for g in geometries for poly in g.polygons for ring in poly for pt in ring]
    lats = [pt[1] for g in geometries for poly in g.polygons for ring in poly for pt in ring]
    if not lons:
        raise DataError("no geometry to render")
    lon0, lon1, lat0, lat1 = min(lons), max(lons), min(lats), max(lats)
    kx = math.cos(math.radians(0.5 * (lat0 + lat1)))
    span_x = max((lon1 - lon0) * kx, 1e-12)
    span_y = max(lat1 - lat0, 1e-12)
    scale = width / span_x
    height = int(math.ceil(span_y * scale))
    legend_h = 22 * (len(summaries) + 2)
    total_h = height + legend_h

    def path_d(poly) -> str:
        parts = []
        for ring in poly:
            pts = [f"{_fmt((x - lon0) * kx * scale)},{_fmt((lat1 - y) * scale)}" for x, y, *_ in ring]
            parts.append("M" + " L".join(pts) + " Z")
        return " ".join(parts)

    groups: dict[object, list[RegionGeometry]] = {}
    for g in geometries:
        groups.setdefault(cluster_of.get(g.region_id), []).append(g)

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{total_h}" '
        f'viewBox="0 0 {width} {total_h}">',
    ]
    keys = sorted(k for k in groups if k is not None) + ([None] if None in groups else [])
    for key in keys:
        if key is None:
            gid, color = "unassigned", UNASSIGNED_COLOR
        else:
            gid, color = f"cluster-{key + 1}", PALETTE[key % len(PALETTE)]
        out.append(f'<g id="{gid}" fill="{color}" stroke="#333333" stroke-width="0.5">')
        for g in groups[key]:
            d = " ".join(path_d(poly) for poly in g.polygons)
            out.append(f'<path data-region="{escape(g.region_id, {chr(34): "&quot;"})}" d="{d}"/>')
        out.append("</g>")
    y = height + 18
    out.append('<g id="legend" font-family="sans-serif" font-size="12">')
    for s in summaries:
        color = PALETTE[s.cluster_id % len(PALETTE)]
        out.append(f'<rect x="10" y="{y - 11}" width="14" height="14" fill="{color}"/>')
        out.append(
            f'<text x="30" y="{y}">Cluster {s.cluster_id + 1}: {s.total_cases} cases / '
            f"{s.total_population} pop ({s.rate:.4f})</text>"
        )
        y += 22
    if None in groups:
        out.append(f'<rect x="10" y="{y - 11}" width="14" height="14" fill="{UNASSIGNED_COLOR}"/>')
        out.append(f'<text x="30" y="{y}">unassigned</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_choropleth(assignment: ClusterAssignment, geometries: Sequence[RegionGeometry],
                      summaries: Sequence[ClusterSummary], geojson_path: str | Path,
                      svg_path: str | Path) -> RenderResult:
    doc, unjoined, unassigned = choropleth_geojson(assignment, geometries, summaries)
    geojson_path, svg_path = Path(geojson_path), Path(svg_path)
    geojson_path.write_text(dumps_geojson(doc), encoding="utf-8")
    svg_path.write_text(choropleth_svg(assignment, geometries, summaries), encoding="utf-8")
    return RenderResult(geojson_path, svg_path, tuple(unjoined), tuple(unassigned))
