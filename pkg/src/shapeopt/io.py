"""Mesh and result I/O: Gmsh MSH 2.2 ingest, legacy VTK, CSV histories.

Ingest is limited to the ASCII MSH 2.2 subset (2-node lines carrying a
physical tag as boundary marker, 3-node triangles). Round-trippable
storage uses a small versioned native text format, see
:func:`write_mesh_native` / :func:`parse_mesh_native`. All numbers are
written with 17 significant digits so outputs are bit-reproducible.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .errors import (MeshIntegrityError, MshParseError,
                     UnsupportedElementError, UnsupportedMshVersionError)
from .mesh import TriMesh

HISTORY_HEADER = ("outer_iter,inner_iter,J,constraint,penalty,multiplier,"
                  "tr_radius,step_norm,grad_norm,min_det_ratio")

NATIVE_FORMAT_VERSION = 1


def _fmt(x):
    return format(float(x), ".17g")


def parse_msh(text: str) -> TriMesh:
    """Parse a Gmsh MSH 2.2 ASCII document into a :class:`TriMesh`.

    Type-2 elements become triangles, type-1 elements boundary edges
    whose marker is the first physical tag. Node ids are renumbered
    contiguously preserving file order; a nonzero z coordinate is
    dropped with a warning.
    """
    lines = [ln.strip() for ln in text.splitlines()]
    lines = [ln for ln in lines if ln]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MshParseError("unexpected end of MSH document")
        line = lines[pos]
        pos += 1
        return line

    def expect(tag):
        line = take()
        if line != tag:
            raise MshParseError(f"expected {tag!r}, found {line!r}")

    expect("$MeshFormat")
    header = take().split()
    if not header or header[0] != "2.2":
        version = header[0] if header else "<missing>"
        raise UnsupportedMshVersionError(
            f"unsupported MSH version {version!r}; only 2.2 ASCII is accepted")
    if len(header) >= 2 and header[1] != "0":
        raise UnsupportedMshVersionError("binary MSH files are not supported")
    expect("$EndMeshFormat")

    expect("$Nodes")
    try:
        n_nodes = int(take())
    except ValueError as exc:
        raise MshParseError("node count is not an integer") from exc
    ids = []
    coords = []
    for _ in range(n_nodes):
        parts = take().split()
        if len(parts) < 4:
            raise MshParseError("node line needs 'id x y z'")
        try:
            nid = int(parts[0])
            x, y, z = (float(p) for p in parts[1:4])
        except ValueError as exc:
            raise MshParseError(f"malformed node line {parts!r}") from exc
        if z != 0.0:
            warnings.warn(f"node {nid} has nonzero z={z}; ignoring z",
                          stacklevel=2)
        ids.append(nid)
        coords.append((x, y))
    expect("$EndNodes")
    id_map = {nid: k for k, nid in enumerate(ids)}
    if len(id_map) != len(ids):
        raise MeshIntegrityError("duplicate node ids in $Nodes")

    expect("$Elements")
    try:
        n_elems = int(take())
    except ValueError as exc:
        raise MshParseError("element count is not an integer") from exc
    triangles = []
    edges = []
    markers = []
    for _ in range(n_elems):
        parts = take().split()
        if len(parts) < 3:
            raise MshParseError("element line too short")
        try:
            etype = int(parts[1])
            ntags = int(parts[2])
            tags = [int(t) for t in parts[3:3 + ntags]]
            nodes = [int(t) for t in parts[3 + ntags:]]
        except ValueError as exc:
            raise MshParseError(f"malformed element line {parts!r}") from exc
        try:
            local = [id_map[n] for n in nodes]
        except KeyError as exc:
            raise MeshIntegrityError(
                f"element references unknown node id {exc.args[0]}") from None
        if etype == 1:
            if len(local) != 2:
                raise MshParseError("type-1 element needs 2 nodes")
            edges.append(local)
            markers.append(tags[0] if tags else 0)
        elif etype == 2:
            if len(local) != 3:
                raise MshParseError("type-2 element needs 3 nodes")
            triangles.append(local)
        else:
            raise UnsupportedElementError(
                f"unsupported element type {etype}; only 1 (line) and "
                f"2 (triangle) are accepted")
    expect("$EndElements")

    return TriMesh(np.array(coords, dtype=float).reshape(-1, 2),
                   np.array(triangles, dtype=np.int64).reshape(-1, 3),
                   np.array(edges, dtype=np.int64).reshape(-1, 2),
                   np.array(markers, dtype=np.int64))


def write_vtk(mesh: TriMesh, point_fields=None, cell_fields=None) -> bytes:
    """Serialize a mesh as legacy ASCII VTK (DATASET UNSTRUCTURED_GRID).

    ``point_fields`` maps names to per-vertex scalars or 2-vectors
    (padded with z = 0); ``cell_fields`` maps names to per-triangle
    scalars. Fields are emitted in sorted name order and numbers with 17
    significant digits, so identical input gives byte-identical output.
    """
    point_fields = dict(point_fields or {})
    cell_fields = dict(cell_fields or {})
    nv, nt = mesh.n_vertices, mesh.n_triangles
    out = []
    out.append("# vtk DataFile Version 3.0")
    out.append("shapeopt mesh")
    out.append("ASCII")
    out.append("DATASET UNSTRUCTURED_GRID")
    out.append(f"POINTS {nv} double")
    for x, y in mesh.vertices:
        out.append(f"{_fmt(x)} {_fmt(y)} 0")
    out.append(f"CELLS {nt} {4 * nt}")
    for a, b, c in mesh.triangles:
        out.append(f"3 {a} {b} {c}")
    out.append(f"CELL_TYPES {nt}")
    out.extend(["5"] * nt)

    if point_fields:
        out.append(f"POINT_DATA {nv}")
        for name in sorted(point_fields):
            data = np.asarray(point_fields[name], dtype=float)
            if data.shape == (nv,):
                out.append(f"SCALARS {name} double 1")
                out.append("LOOKUP_TABLE default")
                out.extend(_fmt(v) for v in data)
            elif data.shape == (nv, 2):
                out.append(f"VECTORS {name} double")
                out.extend(f"{_fmt(vx)} {_fmt(vy)} 0" for vx, vy in data)
            else:
                raise ValueError(
                    f"point field {name!r} has shape {data.shape}, expected "
                    f"({nv},) or ({nv}, 2)")
    if cell_fields:
        out.append(f"CELL_DATA {nt}")
        for name in sorted(cell_fields):
            data = np.asarray(cell_fields[name], dtype=float)
            if data.shape != (nt,):
                raise ValueError(
                    f"cell field {name!r} has shape {data.shape}, expected "
                    f"({nt},)")
            out.append(f"SCALARS {name} double 1")
            out.append("LOOKUP_TABLE default")
            out.extend(_fmt(v) for v in data)
    return ("\n".join(out) + "\n").encode("ascii")


def write_history_csv(records) -> bytes:
    """Serialize convergence records as CSV (one row per accepted iterate).

    NaN objective values are written as the literal ``nan``.
    """
    out = [HISTORY_HEADER]
    for rec in records:
        row = (rec.outer_iter, rec.inner_iter, rec.objective, rec.constraint,
               rec.penalty, rec.multiplier, rec.tr_radius, rec.step_norm,
               rec.grad_norm, rec.min_det_ratio)
        cells = []
        for v in row:
            if isinstance(v, (int, np.integer)):
                cells.append(str(int(v)))
            elif isinstance(v, float) and math.isnan(v):
                cells.append("nan")
            else:
                cells.append(_fmt(v))
        out.append(",".join(cells))
    return ("\n".join(out) + "\n").encode("ascii")


def write_mesh_native(mesh: TriMesh) -> bytes:
    """Serialize a mesh in the native round-trip format (version 1).

    Layout::

        trimesh 1
        vertices <n>
        <x> <y>            (n lines, 17 significant digits)
        triangles <n>
        <a> <b> <c>
        edges <n>
        <a> <b> <marker>
    """
    out = [f"trimesh {NATIVE_FORMAT_VERSION}"]
    out.append(f"vertices {mesh.n_vertices}")
    out.extend(f"{_fmt(x)} {_fmt(y)}" for x, y in mesh.vertices)
    out.append(f"triangles {mesh.n_triangles}")
    out.extend(f"{a} {b} {c}" for a, b, c in mesh.triangles)
    out.append(f"edges {len(mesh.boundary_edges)}")
    out.extend(f"{a} {b} {m}" for (a, b), m in
               zip(mesh.boundary_edges, mesh.edge_markers))
    return ("\n".join(out) + "\n").encode("ascii")


def parse_mesh_native(data) -> TriMesh:
    """Parse the native format written by :func:`write_mesh_native`."""
    if isinstance(data, bytes):
        data = data.decode("ascii")
    lines = [ln.strip() for ln in data.splitlines() if ln.strip()]
    pos = 0

    def take():
        nonlocal pos
        if pos >= len(lines):
            raise MshParseError("unexpected end of native mesh document")
        line = lines[pos]
        pos += 1
        return line

    head = take().split()
    if len(head) != 2 or head[0] != "trimesh":
        raise MshParseError("not a native trimesh document")
    if int(head[1]) != NATIVE_FORMAT_VERSION:
        raise MshParseError(f"unsupported native format version {head[1]}")

    def section(name):
        parts = take().split()
        if len(parts) != 2 or parts[0] != name:
            raise MshParseError(f"expected '{name} <count>'")
        return int(parts[1])

    nv = section("vertices")
    vertices = np.array([[float(v) for v in take().split()] for _ in range(nv)],
                        dtype=float).reshape(-1, 2)
    nt = section("triangles")
    triangles = np.array([[int(v) for v in take().split()] for _ in range(nt)],
                         dtype=np.int64).reshape(-1, 3)
    ne = section("edges")
    rows = [[int(v) for v in take().split()] for _ in range(ne)]
    rows = np.array(rows, dtype=np.int64).reshape(-1, 3)
    return TriMesh(vertices, triangles, rows[:, :2], rows[:, 2])
