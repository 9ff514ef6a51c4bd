"""Plain-text mesh format.

Layout::

    dim n_vertices n_cells n_facets
    x y z                      (n_vertices rows)
    i j k l                    (n_cells rows, 0-based vertex indices)
    i j k tag                  (n_facets rows, boundary facets)

with tag 0 = Dirichlet, 1 = Neumann, 2 = artificial outer boundary.
"""
from __future__ import annotations

import io
from pathlib import Path
from typing import Union

import numpy as np

from .mesh import Mesh, MeshError
from .tagging import TaggedMesh


def write_mesh(path: Union[str, Path], tagged: Union[TaggedMesh, Mesh]) -> None:
    if isinstance(tagged, Mesh):
        mesh, facets, tags = tagged, tagged.boundary_facets, np.zeros(len(tagged.boundary_facets), int)
    else:
        mesh, facets, tags = tagged.mesh, tagged.facets, tagged.facet_tags
    buf = io.StringIO()
    buf.write(f"{mesh.dim} {mesh.n_vertices} {mesh.n_cells} {len(facets)}\n")
    np.savetxt(buf, mesh.vertices, fmt="%.17g")
    np.savetxt(buf, mesh.cells, fmt="%d")
    np.savetxt(buf, np.column_stack([facets, tags]), fmt="%d")
    Path(path).write_text(buf.getvalue())


def read_mesh(path: Union[str, Path]) -> tuple[Mesh, np.ndarray, np.ndarray]:
    """Returns the mesh, the stored facets and their tags."""
    lines = Path(path).read_text().splitlines()
    try:
        dim, nv, nc, nf = (int(t) for t in lines[0].split())
    except (ValueError, IndexError) as exc:
        raise MeshError(f"bad mesh header in {path}") from exc
    if len(lines) < 1 + nv + nc + nf:
        raise MeshError(f"{path}: truncated file")
    body = lines[1:]
    v = np.loadtxt(body[:nv], ndmin=2)
    c = np.loadtxt(body[nv:nv + nc], dtype=np.int64, ndmin=2)
    f = np.loadtxt(body[nv + nc:nv + nc + nf], dtype=np.int64, ndmin=2) if nf else np.zeros((0, dim + 1), np.int64)
    if v.shape[1] != dim or c.shape[1] != dim + 1 or f.shape[1] != dim + 1:
        raise MeshError(f"{path}: column counts do not match dim={dim}")
    return Mesh(v, c), f[:, :dim], f[:, dim]
