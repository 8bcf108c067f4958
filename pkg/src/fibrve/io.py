"""Files: microstructure documents, fiber/descriptor/result CSVs, micrograph import.

Microstructure document (JSON, ``schema_version`` 1)::

    {
      "schema_version": 1,
      "units": "normalized" | "um" | ...,
      "domain": {"lx": float, "ly": float, "periodic": bool},
      "fibers": [[x, y, r], ...],
      "provenance": {... seed, params, generator ...}
    }

Floats are written with ``repr`` so a save/load round trip is bit-exact.
All writes go to a temporary file in the target directory and are renamed
into place.
"""

from __future__ import annotations

import csv
import io as _io
import json
import math
import os
import tempfile
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .geometry import SCHEMA_VERSION, Domain, Microstructure

SUPPORTED_VERSIONS = (SCHEMA_VERSION,)


class FileFormatError(ValueError):
    """Malformed input file; ``where`` names the offending line, offset or field."""

    def __init__(self, message: str, path=None, where: str | None = None):
        loc = f"{path}" if path is not None else "<input>"
        if where:
            loc += f" ({where})"
        super().__init__(f"{loc}: {message}")
        self.path = path
        self.where = where


class SchemaVersionError(FileFormatError):
    pass


# atomic writes -------------------------------------------------------------------


def atomic_write(path, data: str | bytes) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, mode, **({} if mode == "wb" else {"newline": "", "encoding": "utf-8"})) as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def fmt(v) -> str:
    """Shortest round-trip text for numbers; other values via ``str``."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return "" if v is None else str(v)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], comments: Sequence[str] = ()) -> Path:
    buf = _io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return atomic_write(path, buf.getvalue())


def write_dict_rows(path, rows: Sequence[Mapping], header: Sequence[str] | None = None, comments=()) -> Path:
    if header is None:
        header = []
        for r in rows:
            for k in r:
                if k not in header:
                    header.append(k)
    return write_csv(path, header, ([r.get(k) for k in header] for r in rows), comments)


def read_csv_rows(path) -> tuple[list[str], list[list[str]], list[str]]:
    """``(header, rows, comment_lines)``; ``#`` lines are comments."""
    comments, lines = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for line in fh:
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                comments.append(s[1:].strip())
            else:
                lines.append(line)
    if not lines:
        raise FileFormatError("no header row", path)
    reader = list(csv.reader(lines))
    header = [h.strip() for h in reader[0]]
    return header, reader[1:], comments


# microstructure documents ------------------------------------------------------------


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def microstructure_to_dict(ms: Microstructure) -> dict:
    meta = dict(ms.meta)
    units = meta.pop("units", "normalized")
    meta.pop("schema_version", None)
    return {
        "schema_version": SCHEMA_VERSION,
        "units": units,
        "domain": {"lx": ms.domain.lx, "ly": ms.domain.ly, "periodic": ms.domain.periodic},
        "fibers": [[float(x), float(y), float(r)] for (x, y), r in zip(ms.centers, ms.radii)],
        "provenance": _jsonable(meta),
    }


def microstructure_from_dict(doc: dict, path=None) -> Microstructure:
    if not isinstance(doc, dict):
        raise FileFormatError("top level must be an object", path)
    if "schema_version" not in doc:
        raise SchemaVersionError("missing schema_version", path, "field schema_version")
    ver = doc["schema_version"]
    if ver not in SUPPORTED_VERSIONS:
        raise SchemaVersionError(
            f"unsupported schema_version {ver!r} (supported: {list(SUPPORTED_VERSIONS)})", path, "field schema_version"
        )
    for key in ("domain", "fibers"):
        if key not in doc:
            raise FileFormatError(f"missing field {key!r}", path, f"field {key}")
    dom = doc["domain"]
    try:
        domain = Domain(float(dom["lx"]), float(dom["ly"]), bool(dom.get("periodic", True)))
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"bad domain record: {exc}", path, "field domain") from exc
    fibers = doc["fibers"]
    arr = np.zeros((len(fibers), 3))
    for k, f in enumerate(fibers):
        if not isinstance(f, (list, tuple)) or len(f) != 3:
            raise FileFormatError("fiber must be [x, y, r]", path, f"fibers[{k}]")
        try:
            arr[k] = [float(v) for v in f]
        except (TypeError, ValueError) as exc:
            raise FileFormatError(f"non-numeric fiber entry: {exc}", path, f"fibers[{k}]") from exc
        if not np.all(np.isfinite(arr[k])) or arr[k, 2] <= 0:
            raise FileFormatError("fiber needs finite center and positive radius", path, f"fibers[{k}]")
    meta = dict(doc.get("provenance") or {})
    meta["units"] = doc.get("units", "normalized")
    return Microstructure(domain, arr[:, :2], arr[:, 2], meta)


def save_microstructure(ms: Microstructure, path) -> Path:
    text = json.dumps(microstructure_to_dict(ms), indent=1, allow_nan=False)
    return atomic_write(path, text + "\n")


def load_microstructure(path) -> Microstructure:
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FileFormatError(f"{exc.msg}", path, f"line {exc.lineno}, column {exc.colno}, offset {exc.pos}") from exc
    return microstructure_from_dict(doc, path)


# fiber CSVs ------------------------------------------------------------------------


def export_fibers_csv(ms: Microstructure, path) -> Path:
    """``x,y,r`` table; provenance as ``#`` lines (JSON on the ``meta`` line)."""
    doc = microstructure_to_dict(ms)
    comments = [
        f"schema_version: {SCHEMA_VERSION}",
        f"units: {doc['units']}",
        f"domain: {json.dumps(doc['domain'])}",
        f"meta: {json.dumps(doc['provenance'], sort_keys=True)}",
    ]
    return write_csv(path, ["x", "y", "r"], ([f.x, f.y, f.r] for f in ms.fibers), comments)


def import_fibers_csv(path) -> Microstructure:
    header, rows, comments = read_csv_rows(path)
    info = {}
    for c in comments:
        if ":" in c:
            k, v = c.split(":", 1)
            info[k.strip()] = v.strip()
    if [h.lower() for h in header[:3]] != ["x", "y", "r"]:
        raise FileFormatError(f"expected header x,y,r, got {','.join(header)}", path, "line 1")
    if "domain" not in info:
        raise FileFormatError("missing '# domain:' line", path)
    doc = {
        "schema_version": int(info.get("schema_version", SCHEMA_VERSION)),
        "units": info.get("units", "normalized"),
        "domain": json.loads(info["domain"]),
        "fibers": [_floats(r[:3], path, k + 2) for k, r in enumerate(rows)],
        "provenance": json.loads(info["meta"]) if "meta" in info else {},
    }
    return microstructure_from_dict(doc, path)


def _floats(cells, path, lineno):
    try:
        vals = [float(c) for c in cells]
    except ValueError as exc:
        raise FileFormatError(f"non-numeric value: {exc}", path, f"data row {lineno}") from exc
    if not all(math.isfinite(v) for v in vals):
        raise FileFormatError("non-finite value", path, f"data row {lineno}")
    return vals


def parse_column_map(spec: str | Mapping | None) -> dict:
    """``"x=X,y=Y,d=Feret"`` -> ``{"x": "X", "y": "Y", "d": "Feret"}``."""
    if spec is None:
        return {"x": "x", "y": "y", "d": "d"}
    if isinstance(spec, Mapping):
        out = {"x": "x", "y": "y", "d": "d"}
        out.update(spec)
        return out
    out = {"x": "x", "y": "y", "d": "d"}
    for part in spec.split(","):
        if not part.strip():
            continue
        if "=" not in part:
            raise ValueError(f"column mapping entries look like 'x=ColumnName', got {part!r}")
        k, v = part.split("=", 1)
        k = k.strip().lower()
        if k not in out:
            raise ValueError(f"unknown target column {k!r}; use x, y or d")
        out[k] = v.strip()
    return out


def read_micrograph_csv(path, columns=None) -> np.ndarray:
    """ImageJ-style table of centers and diameters -> ``(n, 3)`` array ``x, y, d``."""
    cmap = parse_column_map(columns)
    header, rows, _ = read_csv_rows(path)
    idx = {}
    for k in ("x", "y", "d"):
        if cmap[k] not in header:
            raise FileFormatError(f"column {cmap[k]!r} not found in header {header}", path, "header")
        idx[k] = header.index(cmap[k])
    out = np.zeros((len(rows), 3))
    for n, row in enumerate(rows):
        try:
            cells = [row[idx["x"]], row[idx["y"]], row[idx["d"]]]
        except IndexError:
            raise FileFormatError("row has too few columns", path, f"data row {n + 1}") from None
        out[n] = _floats(cells, path, n + 1)
        if out[n, 2] <= 0:
            raise FileFormatError("diameter must be positive", path, f"data row {n + 1}")
    return out


def ingest_micrograph(path, crop="auto", columns=None, units: str = "um") -> Microstructure:
    """Non-periodic microstructure from measured centers and diameters.

    ``crop`` is ``"auto"`` (inset by twice the largest diameter on every side
    of the fibers' bounding box), ``None`` (the bounding box itself) or a
    rectangle ``(x0, y0, x1, y1)`` in file coordinates. Coordinates are
    shifted so the window starts at the origin; fibers outside the window are
    kept (they matter for cropped-window statistics).
    """
    data = read_micrograph_csv(path, columns)
    if len(data) == 0:
        raise FileFormatError("no fibers in file", path)
    x, y, d = data.T
    r = 0.5 * d
    bx0, by0 = float(np.min(x - r)), float(np.min(y - r))
    bx1, by1 = float(np.max(x + r)), float(np.max(y + r))
    if crop is None:
        x0, y0, x1, y1 = bx0, by0, bx1, by1
    elif isinstance(crop, str):
        if crop != "auto":
            raise ValueError(f"crop must be 'auto', None or a rectangle, got {crop!r}")
        inset = 2.0 * float(np.max(d))
        x0, y0, x1, y1 = bx0 + inset, by0 + inset, bx1 - inset, by1 - inset
    else:
        x0, y0, x1, y1 = (float(v) for v in crop)
    if not (x1 > x0 and y1 > y0):
        raise ValueError(f"empty crop window ({x0}, {y0}, {x1}, {y1})")
    inside = (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
    if not np.any(inside):
        raise ValueError("no fiber centers inside the crop window")
    meta = {
        "source": str(path),
        "crop": [x0, y0, x1, y1],
        "units": units,
        "generator": "micrograph",
    }
    return Microstructure(Domain(x1 - x0, y1 - y0, periodic=False), np.stack([x - x0, y - y0], axis=1), r, meta)


def write_micrograph_csv(path, centers, diameters, comments=()) -> Path:
    rows = ([cx, cy, dd] for (cx, cy), dd in zip(np.asarray(centers), np.asarray(diameters)))
    return write_csv(path, ["x", "y", "d"], rows, comments)


# descriptor and result tables ----------------------------------------------------------


def write_k_csv(path, kf) -> Path:
    return write_csv(path, ["h", "K", "K_poisson"], zip(kf.h_values, kf.k_values, kf.poisson))


def write_g_csv(path, pdist) -> Path:
    return write_csv(path, ["h", "g"], zip(pdist.h_values, pdist.g_values))


def write_distribution_csv(path, dist) -> Path:
    e = dist.bin_edges
    return write_csv(path, ["bin_left", "bin_right", "density"], zip(e[:-1], e[1:], dist.density))


RESULT_FIELDS = (
    "source",
    "bc_mode",
    "nx",
    "ny",
    "E_x",
    "E_y",
    "E_z",
    "G_xy",
    "nu_xy",
    "nu_yx",
    "nu_xz",
    "nu_yz",
    "E_transverse",
    "vf",
    "grid_vf",
    "residual",
    "extrapolated",
    "method",
    "seconds",
)


def result_row(props, source: str = "") -> dict:
    row = {"source": source}
    row.update(props.as_row())
    for k in ("bc_mode", "nx", "ny", "vf", "grid_vf", "residual", "extrapolated", "method", "seconds"):
        row[k] = props.diagnostics.get(k)
    return row


def write_results_csv(path, rows: Sequence[Mapping]) -> Path:
    extra = [k for r in rows for k in r if k not in RESULT_FIELDS]
    header = list(RESULT_FIELDS) + list(dict.fromkeys(extra))
    return write_dict_rows(path, rows, header)


def write_manifest(path, manifest: Mapping) -> Path:
    return atomic_write(path, json.dumps(_jsonable(dict(manifest)), indent=1, sort_keys=True, default=str) + "\n")


def dump_field(path, field: np.ndarray) -> Path:
    """Flat binary grid: int32 header ``(nx, ny, ncomp)`` then float64 values, C order."""
    a = np.asarray(field, dtype=np.float64)
    if a.ndim == 2:
        a = a[:, :, None]
    if a.ndim != 3:
        raise ValueError("field must be (nx, ny) or (nx, ny, ncomp)")
    head = np.array(a.shape, dtype="<i4").tobytes()
    return atomic_write(path, head + np.ascontiguousarray(a).astype("<f8").tobytes())


def load_field(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < 12:
        raise FileFormatError("truncated header", path, "offset 0")
    nx, ny, nc = np.frombuffer(raw[:12], dtype="<i4")
    expected = 12 + 8 * int(nx) * int(ny) * int(nc)
    if len(raw) != expected:
        raise FileFormatError(f"expected {expected} bytes, found {len(raw)}", path, f"offset {len(raw)}")
    return np.frombuffer(raw[12:], dtype="<f8").reshape(int(nx), int(ny), int(nc)).copy()


def load_config(path) -> dict:
    import yaml

    with open(path, encoding="utf-8") as fh:
        try:
            doc = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            mark = getattr(exc, "problem_mark", None)
            where = f"line {mark.line + 1}, column {mark.column + 1}" if mark else None
            raise FileFormatError(f"invalid YAML: {exc}", path, where) from exc
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise FileFormatError("config must be a mapping", path)
    return doc
