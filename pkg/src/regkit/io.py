"""Point-cloud file readers and writers.

Supported: PLY (ASCII and binary little-endian, vertex element with
float32/float64 x,y,z and optional nx,ny,nz / curvature), OBJ vertex
lines, and CSV reference-point lists (x_mm, y_mm, z_mm).
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import EmptyCloud, ParseError

_PLY_DTYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def _parse_ply_header(raw: bytes):
    end = raw.find(b"end_header")
    if end < 0:
        raise ParseError("PLY header has no end_header line")
    newline = raw.find(b"\n", end)
    if newline < 0:
        raise ParseError("PLY header is truncated")
    header = raw[:newline].decode("ascii", errors="replace")
    body_offset = newline + 1

    lines = [ln.strip() for ln in header.splitlines() if ln.strip()]
    if not lines or lines[0] != "ply":
        raise ParseError("not a PLY file (missing 'ply' magic)")

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype_str or None for lists)])
    for line in lines[1:]:
        parts = line.split()
        if parts[0] == "comment":
            continue
        if parts[0] == "format":
            if len(parts) < 2:
                raise ParseError("malformed format line")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"malformed element line: {line}")
            try:
                count = int(parts[2])
            except ValueError as exc:
                raise ParseError(f"bad element count: {line}") from exc
            elements.append((parts[1], count, []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError("property before any element")
            if parts[1] == "list":
                elements[-1][2].append((parts[-1], None))
            else:
                if len(parts) != 3:
                    raise ParseError(f"malformed property line: {line}")
                dtype = _PLY_DTYPES.get(parts[1])
                if dtype is None:
                    raise ParseError(f"unsupported property type {parts[1]!r}")
                elements[-1][2].append((parts[2], dtype))
        elif parts[0] == "end_header":
            break
        else:
            raise ParseError(f"unrecognized header line: {line}")

    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, body_offset


def _cloud_from_columns(columns: dict, count: int, path) -> PointCloud:
    for axis in ("x", "y", "z"):
        if axis not in columns:
            raise ParseError(f"vertex element lacks {axis!r} property")
    if count == 0:
        raise EmptyCloud(f"{path}: zero vertices")
    points = np.column_stack([columns["x"], columns["y"], columns["z"]]).astype(np.float64)
    normals = None
    if all(k in columns for k in ("nx", "ny", "nz")):
        normals = np.column_stack([columns["nx"], columns["ny"], columns["nz"]]).astype(np.float64)
        lengths = np.linalg.norm(normals, axis=1)
        ok = lengths > 1e-12
        normals[ok] = normals[ok] / lengths[ok, None]
        normals[~ok] = np.nan
    curvatures = None
    if "curvature" in columns:
        curvatures = np.clip(np.asarray(columns["curvature"], dtype=np.float64), 0.0, None)
    return PointCloud(points, normals=normals, curvatures=curvatures, id=Path(path).stem)


def _read_ply_ascii(raw: bytes, elements, body_offset: int, path) -> PointCloud:
    text = raw[body_offset:].decode("ascii", errors="replace")
    rows = [ln for ln in text.splitlines() if ln.strip()]
    cursor = 0
    for name, count, props in elements:
        if name != "vertex":
            cursor += count
            continue
        if cursor + count > len(rows):
            raise ParseError(f"{path}: vertex data is truncated")
        names = [p[0] for p in props]
        if any(d is None for _, d in props):
            raise ParseError("list property inside vertex element is unsupported")
        data = np.empty((count, len(names)))
        for i in range(count):
            tokens = rows[cursor + i].split()
            if len(tokens) < len(names):
                raise ParseError(f"{path}: vertex row {i} has too few values")
            try:
                data[i] = [float(t) for t in tokens[: len(names)]]
            except ValueError as exc:
                raise ParseError(f"{path}: non-numeric vertex value in row {i}") from exc
        columns = {nm: data[:, j] for j, nm in enumerate(names)}
        return _cloud_from_columns(columns, count, path)
    raise ParseError(f"{path}: no vertex element")


def _read_ply_binary(raw: bytes, elements, body_offset: int, path) -> PointCloud:
    offset = body_offset
    for name, count, props in elements:
        if any(d is None for _, d in props):
            if name == "vertex":
                raise ParseError("list property inside vertex element is unsupported")
            raise ParseError(
                f"{path}: cannot skip binary element {name!r} with list properties"
            )
        dtype = np.dtype([(f"f{i}", "<" + d) for i, (_, d) in enumerate(props)])
        nbytes = dtype.itemsize * count
        if name != "vertex":
            offset += nbytes
            continue
        if offset + nbytes > len(raw):
            raise ParseError(f"{path}: binary vertex data is truncated")
        table = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        columns = {
            prop_name: table[f"f{i}"].astype(np.float64)
            for i, (prop_name, _) in enumerate(props)
        }
        return _cloud_from_columns(columns, count, path)
    raise ParseError(f"{path}: no vertex element")


def _read_obj(raw: bytes, path) -> PointCloud:
    points = []
    for lineno, line in enumerate(raw.decode("utf-8", errors="replace").splitlines(), 1):
        stripped = line.strip()
        if not stripped.startswith("v ") and stripped != "v":
            continue
        tokens = stripped.split()
        if len(tokens) < 4:
            raise ParseError(f"{path}:{lineno}: vertex line has fewer than 3 coordinates")
        try:
            points.append([float(tokens[1]), float(tokens[2]), float(tokens[3])])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: non-numeric vertex coordinate") from exc
    if not points:
        raise EmptyCloud(f"{path}: no vertices")
    return PointCloud(np.asarray(points), id=Path(path).stem)


def load_point_cloud(path, format: str | None = None) -> PointCloud:
    """Read a cloud from a PLY or OBJ file.

    ``format`` is one of "ply-ascii", "ply-binary-le", "obj", or None to
    detect from the file itself. OBJ faces are discarded; vertices are
    retained.
    """
    path = Path(path)
    raw = path.read_bytes()
    if format is None:
        format = "obj" if path.suffix.lower() == ".obj" else "ply"
    if format == "obj":
        return _read_obj(raw, path)

    fmt, elements, body_offset = _parse_ply_header(raw)
    if format == "ply-ascii" and fmt != "ascii":
        raise ParseError(f"{path}: expected ASCII PLY, file is {fmt}")
    if format == "ply-binary-le" and fmt != "binary_little_endian":
        raise ParseError(f"{path}: expected binary PLY, file is {fmt}")
    if fmt == "ascii":
        return _read_ply_ascii(raw, elements, body_offset, path)
    return _read_ply_binary(raw, elements, body_offset, path)


def save_point_cloud_ply(cloud: PointCloud, path) -> None:
    """Write an ASCII PLY with x,y,z and any normals/curvatures present."""
    path = Path(path)
    props = ["x", "y", "z"]
    columns = [cloud.points]
    if cloud.normals is not None:
        props += ["nx", "ny", "nz"]
        columns.append(np.nan_to_num(cloud.normals, nan=0.0))
    if cloud.curvatures is not None:
        props.append("curvature")
        columns.append(cloud.curvatures[:, None])
    data = np.column_stack(columns)

    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\n")
        fh.write(f"element vertex {len(cloud)}\n")
        for name in props:
            fh.write(f"property float64 {name}\n")
        fh.write("end_header\n")
        for row in data:
            fh.write(" ".join(f"{v:.10g}" for v in row) + "\n")


def load_reference_points(path) -> np.ndarray:
    """Read (N, 3) reference points from a CSV (x_mm,y_mm,z_mm) or PLY file."""
    path = Path(path)
    if path.suffix.lower() == ".ply":
        return load_point_cloud(path).points
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), 1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            try:
                values = [float(c) for c in cells[:3]]
            except ValueError:
                if lineno == 1:
                    continue  # header row
                raise ParseError(f"{path}:{lineno}: non-numeric coordinate")
            if len(values) < 3:
                raise ParseError(f"{path}:{lineno}: expected 3 coordinates")
            rows.append(values)
    if not rows:
        raise EmptyCloud(f"{path}: no reference points")
    return np.asarray(rows, dtype=np.float64)
