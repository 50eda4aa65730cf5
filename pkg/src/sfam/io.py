"""Readers and writers for tracks, skeletons, 3D shapes and reports.

Tracks are comma-separated text with the header ``frame,joint,x,y``, one
observation per row, 0-indexed and dense. 3D shapes use ``frame,joint,x,y,z``.
Skeletons are JSON documents::

    {"joints": 3, "bones": [{"parent": 0, "child": 1, "length": 2.0}, ...]}

with raw lengths in any unit; they are normalized to unit sum on load.
Floats are written with :func:`repr` so files round-trip exactly and repeated
runs produce identical bytes.
"""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .exceptions import ParseError, SchemaError, SkeletonError
from .model import MeasurementMatrix, ShapeSequence, Skeleton

TRACK_HEADER = ("frame", "joint", "x", "y")
SHAPE_HEADER = ("frame", "joint", "x", "y", "z")


def _fmt(x) -> str:
    return repr(float(x))


def _read_table(path, header):
    """Parse a dense ``frame,joint,<coords>`` table into ``(T, N, d)``."""
    path = Path(path)
    d = len(header) - 2
    rows = {}
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise ParseError("file is empty", 1)
        if tuple(c.strip().lower() for c in first) != header:
            raise ParseError(f"expected header {','.join(header)}, got {','.join(first)}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line)
            try:
                t, j = int(row[0]), int(row[1])
                coords = [float(c) for c in row[2:]]
            except ValueError:
                raise ParseError(f"non-numeric cell in {','.join(row)}", line) from None
            if t < 0 or j < 0:
                raise ParseError("frame and joint indices must be non-negative", line)
            if not all(math.isfinite(c) for c in coords):
                raise ParseError("missing or non-finite coordinate", line)
            if (t, j) in rows:
                raise ParseError(f"duplicate observation for frame {t}, joint {j}", line)
            rows[(t, j)] = coords
    if not rows:
        raise SchemaError(f"{path} contains no observations")
    T = max(t for t, _ in rows) + 1
    per_frame = [sorted(j for tt, j in rows if tt == t) for t in range(T)]
    N = max(len(js) for js in per_frame)
    for t, js in enumerate(per_frame):
        if js != list(range(N)):
            raise SchemaError(f"frame {t} has joints {js[:5]}{'...' if len(js) > 5 else ''}, "
                              f"expected 0..{N - 1}")
    out = np.empty((T, N, d))
    for (t, j), coords in rows.items():
        out[t, j] = coords
    return out


def _write_table(path, header, points):
    T, N, _ = points.shape
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for t in range(T):
            for j in range(N):
                fh.write(f"{t},{j}," + ",".join(_fmt(v) for v in points[t, j]) + "\n")


def load_tracks(path) -> MeasurementMatrix:
    """Read 2D tracks and register each frame to its centroid.

    Raises
    ------
    ParseError
        Malformed row, with its line number.
    SchemaError
        Joint count differs between frames or frames are missing.
    """
    return MeasurementMatrix.from_points(_read_table(path, TRACK_HEADER))


def save_tracks(path, W: MeasurementMatrix):
    """Write un-registered tracks (centroids added back)."""
    _write_table(path, TRACK_HEADER, W.to_points(with_centroids=True))


def load_shapes(path) -> ShapeSequence:
    return ShapeSequence.from_points(_read_table(path, SHAPE_HEADER))


def save_shapes(path, S: ShapeSequence):
    _write_table(path, SHAPE_HEADER, S.to_points())


def load_skeleton(path) -> Skeleton:
    """Read a JSON skeleton; raw lengths are normalized to unit sum."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None
    return skeleton_from_dict(doc)


def skeleton_from_dict(doc) -> Skeleton:
    if not isinstance(doc, dict) or "joints" not in doc or "bones" not in doc:
        raise SchemaError("skeleton needs 'joints' and 'bones' fields")
    triples = []
    for b, bone in enumerate(doc["bones"]):
        try:
            triples.append((int(bone["parent"]), int(bone["child"]), float(bone["length"])))
        except (KeyError, TypeError, ValueError):
            raise SchemaError(f"bone {b} needs integer parent/child and numeric length") from None
    bad = [b for b, (_, _, l) in enumerate(triples) if not l > 0]
    if bad:
        raise SkeletonError(f"non-positive lengths at bones {bad}")
    return Skeleton.from_raw(int(doc["joints"]), triples)


def skeleton_to_dict(skeleton: Skeleton, names=None) -> dict:
    doc = {"joints": skeleton.joint_count,
           "bones": [{"parent": b.parent, "child": b.child, "length": b.length}
                     for b in skeleton.bones]}
    if names is not None:
        doc["names"] = list(names)
    return doc


def save_skeleton(path, skeleton: Skeleton, names=None):
    write_json(path, skeleton_to_dict(skeleton, names))


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, exc.lineno) from None


def write_table(path, columns, rows):
    """Flat CSV for plotting, e.g. ``sigma,e3d``."""
    with Path(path).open("w", newline="") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(str(v) if isinstance(v, (int, np.integer)) else _fmt(v)
                              for v in row) + "\n")


def read_table(path):
    """Read a table written by :func:`write_table` as ``(columns, float array)``."""
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        columns = next(reader)
        rows = []
        for row in reader:
            try:
                rows.append([float(v) for v in row])
            except ValueError:
                raise ParseError(f"non-numeric cell in {','.join(row)}", reader.line_num) from None
    return columns, np.array(rows).reshape(-1, len(columns))
