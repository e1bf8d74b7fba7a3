"""Versioned artifact files.

JSON artifacts carry a top-level ``format_version`` and ``kind``. CSV artifacts
start with a ``# format_version=X.Y kind=...`` comment line. Loaders reject an
unknown major version.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

from geosom.errors import DataError

FORMAT_VERSION = "1.0"


def _major(version: str) -> int:
    try:
        return int(str(version).split(".")[0])
    except ValueError as exc:
        raise DataError(f"unparseable format_version {version!r}") from exc


def check_version(version: str, where: str) -> None:
    if _major(version) != _major(FORMAT_VERSION):
        raise DataError(
            f"{where}: format_version {version} is not compatible with {FORMAT_VERSION}"
        )


def dumps_json(obj: Any) -> str:
    # sort_keys keeps byte output independent of dict construction order
    return json.dumps(obj, indent=1, sort_keys=True, allow_nan=False) + "\n"


def write_json(path: str | Path, kind: str, payload: dict) -> Path:
    path = Path(path)
    doc = {"format_version": FORMAT_VERSION, "kind": kind, **payload}
    path.write_text(dumps_json(doc), encoding="utf-8")
    return path


def read_json(path: str | Path, kind: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing artifact {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if "format_version" not in doc:
        raise DataError(f"{path}: no format_version field")
    check_version(doc["format_version"], str(path))
    if doc.get("kind") != kind:
        raise DataError(f"{path}: expected kind {kind!r}, found {doc.get('kind')!r}")
    return doc


def write_csv(
    path: str | Path,
    kind: str,
    header: Sequence[str],
    rows: Iterable[Sequence[Any]],
    footer: Sequence[str] = (),
) -> Path:
    path = Path(path)
    buf = io.StringIO()
    buf.write(f"# format_version={FORMAT_VERSION} kind={kind}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(v) for v in row])
    for line in footer:
        buf.write(f"# {line}\n")
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def read_csv(path: str | Path, kind: str) -> tuple[list[str], list[list[str]], list[str]]:
    """Return (header, rows, footer comment lines) of a versioned CSV artifact."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing artifact {path}")
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("# format_version="):
        raise DataError(f"{path}: missing format_version line")
    meta = dict(tok.split("=", 1) for tok in lines[0][2:].split())
    check_version(meta["format_version"], str(path))
    if meta.get("kind") != kind:
        raise DataError(f"{path}: expected kind {kind!r}, found {meta.get('kind')!r}")
    body = [ln for ln in lines[1:] if not ln.startswith("#")]
    footer = [ln[2:] for ln in lines[1:] if ln.startswith("#")]
    parsed = list(csv.reader(body))
    if not parsed:
        raise DataError(f"{path}: no header row")
    return parsed[0], parsed[1:], footer


def format_cell(value: Any) -> str:
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def sha256_file(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
