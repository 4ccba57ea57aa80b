"""Legacy ASCII VTK unstructured grids with nodal point data."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .mesh import SimplicialMesh

# VTK cell type ids
_CELL_TYPE = {2: 5, 3: 10}  # triangle, tetrahedron
_NODES_PER_TYPE = {5: 3, 10: 4}


class VTKFormatError(ValueError):
    pass


def write_vtk(path, mesh: SimplicialMesh, point_data: dict, title: str = "sparse-eit") -> None:
    """Write ``mesh`` and named nodal fields (scalars, one value per vertex)."""
    n = mesh.n_vertices
    pts = mesh.vertices if mesh.dim == 3 else np.column_stack([mesh.vertices, np.zeros(n)])
    cells = mesh.cells
    lines = [
        "# vtk DataFile Version 3.0",
        title.replace("\n", " ")[:255],
        "ASCII",
        "DATASET UNSTRUCTURED_GRID",
        f"POINTS {n} double",
    ]
    lines += [" ".join(repr(float(v)) for v in p) for p in pts]
    k = cells.shape[1]
    lines.append(f"CELLS {len(cells)} {len(cells) * (k + 1)}")
    lines += [f"{k} " + " ".join(map(str, c)) for c in cells]
    lines.append(f"CELL_TYPES {len(cells)}")
    lines += [str(_CELL_TYPE[mesh.dim])] * len(cells)
    if point_data:
        lines.append(f"POINT_DATA {n}")
        for name, values in point_data.items():
            values = np.asarray(values, dtype=float)
            if values.shape != (n,):
                raise ValueError(f"field {name!r} has shape {values.shape}, expected ({n},)")
            if not name or any(ch.isspace() for ch in name):
                raise ValueError(f"invalid VTK field name {name!r}")
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
            lines += [repr(float(v)) for v in values]
    Path(path).write_text("\n".join(lines) + "\n")


def read_vtk(path):
    """Parse a file written by :func:`write_vtk`.

    Returns ``(points (N, 3), cells (C, k), point_data dict)``; raises
    VTKFormatError on structural problems.
    """
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile"):
        raise VTKFormatError("missing VTK header")
    if tokens[2].strip() != "ASCII" or tokens[3].strip() != "DATASET UNSTRUCTURED_GRID":
        raise VTKFormatError("only ASCII unstructured grids are supported")
    words = " ".join(tokens[4:]).split()
    pos = 0

    def take(count):
        nonlocal pos
        if pos + count > len(words):
            raise VTKFormatError("unexpected end of file")
        out = words[pos:pos + count]
        pos += count
        return out

    def expect(keyword):
        word = take(1)[0]
        if word != keyword:
            raise VTKFormatError(f"expected {keyword}, found {word}")

    expect("POINTS")
    n, _ = take(2)
    n = int(n)
    points = np.array(take(3 * n), dtype=float).reshape(n, 3)
    expect("CELLS")
    n_cells, size = map(int, take(2))
    raw = np.array(take(size), dtype=np.int64)
    k = int(raw[0]) if n_cells else 0
    if size != n_cells * (k + 1) or np.any(raw[:: k + 1] != k):
        raise VTKFormatError("mixed cell sizes are not supported")
    cells = raw.reshape(n_cells, k + 1)[:, 1:]
    if cells.size and (cells.min() < 0 or cells.max() >= n):
        raise VTKFormatError("cell references a point outside the POINTS block")
    expect("CELL_TYPES")
    types = np.array(take(int(take(1)[0])), dtype=int)
    if len(types) != n_cells or any(_NODES_PER_TYPE.get(t) != k for t in set(types.tolist())):
        raise VTKFormatError("cell types do not match the connectivity")
    data = {}
    if pos < len(words):
        expect("POINT_DATA")
        if int(take(1)[0]) != n:
            raise VTKFormatError("POINT_DATA size differs from the number of points")
        while pos < len(words):
            expect("SCALARS")
            name, _, ncomp = take(3)
            if ncomp != "1":
                raise VTKFormatError("only single-component scalars are supported")
            expect("LOOKUP_TABLE")
            take(1)
            data[name] = np.array(take(n), dtype=float)
    return points, cells, data
