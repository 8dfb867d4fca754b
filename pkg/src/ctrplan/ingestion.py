"""Labelled point-cloud loading, grid spacing and voxel boundary extraction."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

LABELS = ("skull", "target", "obstacle", "hemisphere")
UNIT_SCALES = {"m": 1.0, "mm": 1e-3}

_NEIGHBOURS = np.array(
    [[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=np.int64
)


class CloudFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledPointCloud:
    skull: np.ndarray
    target: np.ndarray
    obstacle: np.ndarray
    hemisphere: np.ndarray
    delta_mri: float
    unit_scale: float = 1.0

    def counts(self) -> dict:
        return {name: len(getattr(self, name)) for name in LABELS}

    def validate_plannable(self) -> None:
        missing = [name for name in LABELS if len(getattr(self, name)) == 0]
        if missing:
            raise CloudFormatError(f"empty point classes: {', '.join(missing)}")


def _dedup(points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if len(points) < 2:
        return points
    tree = cKDTree(points)
    keep = np.ones(len(points), dtype=bool)
    for i, j in sorted(tree.query_pairs(tol)):
        if keep[i]:
            keep[j] = False
    return points[keep]


def _read_rows(path: Path):
    """Yield (line_number, x, y, z, label) and return the declared unit (or None)."""
    text = path.read_text(encoding="utf-8")
    if not text.strip():
        raise CloudFormatError(f"{path}: empty file")
    if path.suffix.lower() == ".json" or text.lstrip().startswith("{"):
        doc = json.loads(text)
        pts = doc.get("points", [])
        if not pts:
            raise CloudFormatError(f"{path}: no points")
        rows = [(i + 1, p["x"], p["y"], p["z"], p["label"]) for i, p in enumerate(pts)]
        return rows, doc.get("unit")
    reader = csv.DictReader(text.splitlines())
    if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["x", "y", "z", "label"]:
        raise CloudFormatError(f"{path}: expected CSV header x,y,z,label")
    rows = [
        (lineno, r["x"], r["y"], r["z"], r["label"].strip())
        for lineno, r in enumerate(reader, start=2)
    ]
    if not rows:
        raise CloudFormatError(f"{path}: no points")
    return rows, None


def load_cloud(path, unit_scale: float | None = None) -> LabeledPointCloud:
    """Read a JSON or CSV labelled cloud and convert coordinates to meters.

    ``unit_scale`` overrides the JSON ``unit`` field; CSV input defaults to
    meters when no scale is given.
    """
    path = Path(path)
    rows, unit = _read_rows(path)
    if unit_scale is None:
        if unit is not None and unit not in UNIT_SCALES:
            raise CloudFormatError(f"{path}: unknown unit {unit!r}")
        unit_scale = UNIT_SCALES.get(unit, 1.0)
    buckets: dict[str, list] = {name: [] for name in LABELS}
    for lineno, x, y, z, label in rows:
        if label not in buckets:
            raise CloudFormatError(f"{path}:{lineno}: unknown label {label!r}")
        buckets[label].append((float(x), float(y), float(z)))
    arrays = {
        name: _dedup(np.asarray(pts, dtype=float).reshape(-1, 3) * unit_scale)
        for name, pts in buckets.items()
    }
    # grid spacing is measured on the target class, falling back to all voxels
    ref = arrays["target"]
    if len(ref) < 2:
        ref = _dedup(np.vstack([a for a in arrays.values() if len(a)]))
    delta = compute_delta_mri(ref) if len(ref) >= 2 else 1.0
    return LabeledPointCloud(delta_mri=delta, unit_scale=unit_scale, **arrays)


def save_cloud(path, cloud: LabeledPointCloud, unit: str = "m") -> None:
    scale = UNIT_SCALES[unit]
    pts = [
        {"x": float(x / scale), "y": float(y / scale), "z": float(z / scale), "label": name}
        for name in LABELS
        for x, y, z in getattr(cloud, name)
    ]
    Path(path).write_text(json.dumps({"unit": unit, "points": pts}))


def compute_delta_mri(points) -> float:
    """Smallest pairwise Euclidean distance."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    d, _ = cKDTree(pts).query(pts, k=2)
    return float(d[:, 1].min())


def grid_indices(points, spacing: float, origin=None) -> np.ndarray:
    """Integer lattice coordinates of points lying on a regular grid."""
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if origin is None:
        origin = pts.min(axis=0)
    return np.rint((pts - origin) / spacing).astype(np.int64)


def extract_boundary(points, spacing: float) -> np.ndarray:
    """Points missing at least one of their six axis neighbours."""
    if not spacing > 0:
        raise ValueError("spacing must be positive")
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    if len(pts) == 0:
        return pts
    idx = grid_indices(pts, spacing)
    occupied = {tuple(k) for k in idx.tolist()}
    on_boundary = np.zeros(len(pts), dtype=bool)
    for off in _NEIGHBOURS:
        nb = idx + off
        on_boundary |= np.fromiter(
            (tuple(k) not in occupied for k in nb.tolist()), dtype=bool, count=len(pts)
        )
    return pts[on_boundary]
