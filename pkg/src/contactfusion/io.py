"""ASCII PLY / OBJ readers and writers, plus the plain-text grid format.

Numbers are written with ``%.17g`` so values survive a round trip exactly.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .exceptions import MissingNormalsError, ParseError
from .geometry import OrientedPointSet, TriangleMesh

FLOAT_FMT = "%.17g"

_PLY_SCALARS = {
    "char", "uchar", "short", "ushort", "int", "uint", "float", "double",
    "int8", "uint8", "int16", "uint16", "int32", "uint32", "float32", "float64",
}


def _fmt(values):
    return " ".join(FLOAT_FMT % v for v in values)


def write_point_cloud(points: OrientedPointSet, path, scalars=None):
    """Write an oriented point set as ASCII PLY.

    ``scalars`` maps extra per-vertex property names to arrays of length n.
    """
    path = Path(path)
    scalars = dict(scalars or {})
    n = len(points)
    for name, values in scalars.items():
        if len(values) != n:
            raise ValueError(f"scalar property {name!r} has wrong length")
    lines = ["ply", "format ascii 1.0", f"element vertex {n}"]
    lines += [f"property double {c}" for c in ("x", "y", "z", "nx", "ny", "nz")]
    lines += [f"property double {name}" for name in scalars]
    lines.append("end_header")
    columns = [points.positions, points.normals] + [np.asarray(v, dtype=float)[:, None] for v in scalars.values()]
    table = np.hstack(columns) if n else np.zeros((0, 6 + len(scalars)))
    lines += [_fmt(row) for row in table]
    path.write_text("\n".join(lines) + "\n")


def write_mesh(mesh: TriangleMesh, path):
    path = Path(path)
    lines = ["ply", "format ascii 1.0", f"element vertex {len(mesh.vertices)}"]
    lines += [f"property double {c}" for c in ("x", "y", "z")]
    lines += [f"element face {len(mesh.faces)}", "property list uchar int vertex_indices", "end_header"]
    lines += [_fmt(v) for v in mesh.vertices]
    lines += ["3 " + " ".join(str(int(i)) for i in f) for f in mesh.faces]
    path.write_text("\n".join(lines) + "\n")


def _read_ply(path):
    """Return (vertex property names, vertex table, face list)."""
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "ply":
        raise ParseError("missing 'ply' magic", path, 1)
    elements = []
    lineno = 1
    header_done = False
    for lineno, raw in enumerate(lines[1:], start=2):
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) < 2 or tok[1] != "ascii":
                raise ParseError("only ASCII PLY is supported", path, lineno)
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise ParseError("malformed element line", path, lineno)
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise ParseError("property before any element", path, lineno)
            if tok[1] == "list":
                if len(tok) != 5:
                    raise ParseError("malformed list property", path, lineno)
                elements[-1]["props"].append(("list", tok[4]))
            else:
                if len(tok) != 3 or tok[1] not in _PLY_SCALARS:
                    raise ParseError(f"unsupported property type {tok[1:]!r}", path, lineno)
                elements[-1]["props"].append(("scalar", tok[2]))
        elif tok[0] == "end_header":
            header_done = True
            break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", path, lineno)
    if not header_done:
        raise ParseError("missing end_header", path, lineno)

    cursor = lineno
    vertex_names, vertex_rows, faces = [], [], []
    for el in elements:
        for _ in range(el["count"]):
            cursor += 1
            if cursor > len(lines):
                raise ParseError(f"unexpected end of file in element {el['name']!r}", path, cursor)
            tok = lines[cursor - 1].split()
            try:
                if el["name"] == "face":
                    count = int(tok[0])
                    if count != 3 or len(tok) < 4:
                        raise ParseError("only triangular faces are supported", path, cursor)
                    faces.append([int(t) for t in tok[1:4]])
                else:
                    row = [float(t) for t in tok]
                    if len(row) != len(el["props"]):
                        raise ParseError(
                            f"expected {len(el['props'])} values, got {len(row)}", path, cursor)
                    if el["name"] == "vertex":
                        vertex_rows.append(row)
            except ValueError as exc:
                if isinstance(exc, ParseError):
                    raise
                raise ParseError(f"bad number ({exc})", path, cursor) from None
        if el["name"] == "vertex":
            vertex_names = [name for _, name in el["props"]]
    table = np.array(vertex_rows, dtype=float).reshape(-1, len(vertex_names))
    return vertex_names, table, faces


def read_point_cloud(path, require_normals=True, return_scalars=False):
    names, table, _ = _read_ply(path)
    for c in ("x", "y", "z"):
        if c not in names:
            raise ParseError(f"vertex property {c!r} missing", path)
    pos = table[:, [names.index(c) for c in ("x", "y", "z")]]
    if all(c in names for c in ("nx", "ny", "nz")):
        nrm = table[:, [names.index(c) for c in ("nx", "ny", "nz")]]
    elif require_normals:
        raise MissingNormalsError("vertex normals (nx ny nz) requested but absent", path)
    else:
        nrm = np.tile([0.0, 0.0, 1.0], (len(pos), 1))
    cloud = OrientedPointSet(pos, nrm)
    if return_scalars:
        extra = {n: table[:, i] for i, n in enumerate(names) if n not in ("x", "y", "z", "nx", "ny", "nz")}
        return cloud, extra
    return cloud


def read_points(path):
    """Positions only, whether or not the file carries normals."""
    names, table, _ = _read_ply(path)
    return table[:, [names.index(c) for c in ("x", "y", "z")]]


def _read_obj(path):
    verts, faces = [], []
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        try:
            if tok[0] == "v":
                verts.append([float(t) for t in tok[1:4]])
                if len(verts[-1]) != 3:
                    raise ParseError("vertex needs 3 coordinates", path, lineno)
            elif tok[0] == "f":
                idx = [int(t.split("/")[0]) for t in tok[1:]]
                if len(idx) != 3:
                    raise ParseError("only triangular faces are supported", path, lineno)
                faces.append([i - 1 if i > 0 else len(verts) + i for i in idx])
        except ValueError as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad number ({exc})", path, lineno) from None
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces).reshape(-1, 3))


def read_mesh(path) -> TriangleMesh:
    path = Path(path)
    if path.suffix.lower() == ".obj":
        return _read_obj(path)
    names, table, faces = _read_ply(path)
    pos = table[:, [names.index(c) for c in ("x", "y", "z")]]
    return TriangleMesh(pos, np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_obj(mesh: TriangleMesh, path):
    lines = ["v " + _fmt(v) for v in mesh.vertices]
    lines += ["f " + " ".join(str(int(i) + 1) for i in f) for f in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def write_grid(path, grid, fields):
    """Structured-grid text file.

    Layout::

        # contactfusion-grid 1
        K <resolution>
        origin <x> <y> <z>
        spacing <h>
        fields <name> ...
        <one line per node, x-index slowest, z-index fastest>
    """
    names = list(fields)
    columns = [np.asarray(fields[n], dtype=float).reshape(-1) for n in names]
    for c in columns:
        if c.size != grid.n_nodes:
            raise ValueError("field size does not match the grid")
    lines = [
        "# contactfusion-grid 1",
        f"K {grid.resolution}",
        "origin " + _fmt(grid.origin),
        "spacing " + FLOAT_FMT % grid.spacing,
        "fields " + " ".join(names),
    ]
    table = np.column_stack(columns)
    lines += [_fmt(row) for row in table]
    Path(path).write_text("\n".join(lines) + "\n")


def read_grid(path):
    from .spsr.grid import VoxelGrid

    lines = Path(path).read_text().splitlines()
    header = {}
    body_start = None
    for i, raw in enumerate(lines):
        tok = raw.split()
        if not tok or tok[0].startswith("#"):
            continue
        if tok[0] in ("K", "origin", "spacing", "fields"):
            header[tok[0]] = tok[1:]
            if tok[0] == "fields":
                body_start = i + 1
                break
        else:
            raise ParseError(f"unexpected header keyword {tok[0]!r}", path, i + 1)
    if body_start is None or set(header) != {"K", "origin", "spacing", "fields"}:
        raise ParseError("incomplete grid header", path)
    grid = VoxelGrid(int(header["K"][0]), [float(v) for v in header["origin"]], float(header["spacing"][0]))
    data = np.loadtxt(lines[body_start:], ndmin=2)
    if data.shape != (grid.n_nodes, len(header["fields"])):
        raise ParseError("grid body has the wrong shape", path)
    return grid, {name: data[:, j].reshape(grid.shape) for j, name in enumerate(header["fields"])}
