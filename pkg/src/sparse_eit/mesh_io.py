"""Mesh import/export: Gmsh ASCII v2.2 and a versioned native text dump."""
from __future__ import annotations

import io
from pathlib import Path

import numpy as np

from .mesh import MeshError, SimplicialMesh, boundary_facets_of

NATIVE_MAGIC = "sparse-eit-mesh"
NATIVE_VERSION = 1

# gmsh element type -> (topological dimension, vertex count)
_GMSH_TYPES = {15: (0, 1), 1: (1, 2), 2: (2, 3), 4: (3, 4)}


class MeshParseError(MeshError):
    def __init__(self, message, line=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if line is not None:
            where += f"{line}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.line = line


def _sections(lines, path):
    """Yield (name, first_line_number, body_lines) for each $Section."""
    i = 0
    while i < len(lines):
        text = lines[i].strip()
        if not text:
            i += 1
            continue
        if not text.startswith("$"):
            raise MeshParseError(f"expected a section header, found {text!r}", i + 1, path)
        name = text[1:]
        end = f"$End{name}"
        j = i + 1
        while j < len(lines) and lines[j].strip() != end:
            j += 1
        if j == len(lines):
            raise MeshParseError(f"section ${name} is not terminated by {end}", i + 1, path)
        yield name, i + 2, lines[i + 1:j]
        i = j + 1


def read_gmsh(path) -> SimplicialMesh:
    """Read a Gmsh ASCII v2.2 file.

    The highest-dimensional simplices present become the cells.  Boundary
    facets are always inferred from the cells; facets that also appear as
    tagged lower-dimensional elements take their first (physical) tag as
    marker, all others get marker 0.
    """
    path = Path(path)
    lines = path.read_text().splitlines()
    nodes = None
    elements = []
    seen_format = False
    for name, first, body in _sections(lines, path):
        if name == "MeshFormat":
            fields = body[0].split() if body else []
            if len(fields) < 2 or not fields[0].startswith("2"):
                raise MeshParseError("only Gmsh ASCII format 2.x is supported", first, path)
            if fields[1] != "0":
                raise MeshParseError("binary Gmsh files are not supported", first, path)
            seen_format = True
        elif name == "Nodes":
            try:
                count = int(body[0])
            except (IndexError, ValueError):
                raise MeshParseError("bad node count", first, path) from None
            if len(body) - 1 != count:
                raise MeshParseError(f"expected {count} nodes, found {len(body) - 1}", first, path)
            ids = np.empty(count, dtype=np.int64)
            coords = np.empty((count, 3))
            for k, line in enumerate(body[1:]):
                fields = line.split()
                try:
                    ids[k] = int(fields[0])
                    coords[k] = [float(v) for v in fields[1:4]]
                except (IndexError, ValueError):
                    raise MeshParseError(f"malformed node line {line!r}", first + 1 + k, path) from None
            nodes = (ids, coords)
        elif name == "Elements":
            try:
                count = int(body[0])
            except (IndexError, ValueError):
                raise MeshParseError("bad element count", first, path) from None
            if len(body) - 1 != count:
                raise MeshParseError(f"expected {count} elements, found {len(body) - 1}", first, path)
            for k, line in enumerate(body[1:]):
                lineno = first + 1 + k
                try:
                    fields = [int(v) for v in line.split()]
                    elem_id, etype, ntags = fields[:3]
                except ValueError:
                    raise MeshParseError(f"malformed element line {line!r}", lineno, path) from None
                if etype not in _GMSH_TYPES:
                    raise MeshParseError(f"element {elem_id}: unsupported element type {etype}", lineno, path)
                tdim, nv = _GMSH_TYPES[etype]
                tags = fields[3:3 + ntags]
                verts = fields[3 + ntags:]
                if len(verts) != nv:
                    raise MeshParseError(f"element {elem_id}: expected {nv} vertices, got {len(verts)}", lineno, path)
                elements.append((elem_id, tdim, tags[0] if tags else 0, verts, lineno))
    if not seen_format:
        raise MeshParseError("missing $MeshFormat section", None, path)
    if nodes is None:
        raise MeshParseError("missing $Nodes section", None, path)

    ids, coords = nodes
    index = {int(i): k for k, i in enumerate(ids)}
    top = max((e[1] for e in elements), default=0)
    if top not in (2, 3):
        if any(e[1] == top for e in elements):
            raise MeshParseError(f"mesh dimension {top} is not supported (need 2 or 3)", None, path)
        raise MeshParseError("empty cell list", None, path)

    def resolve(elem):
        elem_id, _, _, verts, lineno = elem
        try:
            return [index[v] for v in verts]
        except KeyError as exc:
            raise MeshParseError(f"element {elem_id} references undefined node {exc.args[0]}", lineno, path) from None

    cells = np.array([resolve(e) for e in elements if e[1] == top], dtype=np.int64)
    tagged = {tuple(sorted(resolve(e))): e[2] for e in elements if e[1] == top - 1}

    if top == 2:
        if not np.allclose(coords[:, 2], coords[0, 2]):
            raise MeshParseError("2D mesh with non-planar z coordinates", None, path)
        coords = coords[:, :2]
    # drop unreferenced nodes (e.g. geometry points)
    used = np.unique(cells)
    renumber = -np.ones(len(coords), dtype=np.int64)
    renumber[used] = np.arange(len(used))
    cells = renumber[cells]
    facets = boundary_facets_of(cells)
    markers = np.array(
        [tagged.get(tuple(sorted(used[f])), 0) for f in facets], dtype=np.int64
    )
    return SimplicialMesh(coords[used], cells, facets, markers)


def write_gmsh(mesh: SimplicialMesh, path) -> None:
    """Write cells plus marked boundary facets as Gmsh ASCII v2.2."""
    cell_type = 2 if mesh.dim == 2 else 4
    facet_type = 1 if mesh.dim == 2 else 2
    out = io.StringIO()
    out.write("$MeshFormat\n2.2 0 8\n$EndMeshFormat\n")
    out.write(f"$Nodes\n{mesh.n_vertices}\n")
    for k, x in enumerate(mesh.vertices):
        xyz = list(x) + [0.0] * (3 - mesh.dim)
        out.write(f"{k + 1} " + " ".join(repr(float(v)) for v in xyz) + "\n")
    out.write("$EndNodes\n")
    n = len(mesh.facets) + mesh.n_cells
    out.write(f"$Elements\n{n}\n")
    eid = 1
    for f, m in zip(mesh.facets, mesh.facet_markers):
        out.write(f"{eid} {facet_type} 2 {m} {m} " + " ".join(str(v + 1) for v in f) + "\n")
        eid += 1
    for c in mesh.cells:
        out.write(f"{eid} {cell_type} 2 0 0 " + " ".join(str(v + 1) for v in c) + "\n")
        eid += 1
    out.write("$EndElements\n")
    Path(path).write_text(out.getvalue())


def save_mesh(mesh: SimplicialMesh, path) -> None:
    """Native text dump: header line, sizes, then vertex/cell/facet blocks."""
    out = io.StringIO()
    out.write(f"{NATIVE_MAGIC} {NATIVE_VERSION}\n")
    out.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {len(mesh.facets)}\n")
    np.savetxt(out, mesh.vertices, fmt="%.17g")
    np.savetxt(out, mesh.cells, fmt="%d")
    np.savetxt(out, np.column_stack([mesh.facets, mesh.facet_markers]), fmt="%d")
    Path(path).write_text(out.getvalue())


def load_mesh(path) -> SimplicialMesh:
    path = Path(path)
    lines = path.read_text().splitlines()
    head = lines[0].split() if lines else []
    if len(head) != 2 or head[0] != NATIVE_MAGIC:
        raise MeshParseError("not a native mesh file", 1, path)
    if int(head[1]) != NATIVE_VERSION:
        raise MeshParseError(f"unsupported native mesh version {head[1]}", 1, path)
    dim, nv, nc, nf = (int(v) for v in lines[1].split())
    offset = 2

    def block(count, cols, dtype):
        nonlocal offset
        rows = lines[offset:offset + count]
        if len(rows) != count:
            raise MeshParseError("truncated file", offset + len(rows) + 1, path)
        data = np.loadtxt(rows, dtype=dtype, ndmin=2) if count else np.zeros((0, cols), dtype)
        offset += count
        return data.reshape(count, cols)

    vertices = block(nv, dim, float)
    cells = block(nc, dim + 1, np.int64)
    facets = block(nf, dim + 1, np.int64)
    return SimplicialMesh(vertices, cells, facets[:, :dim], facets[:, dim])
