"""Simplicial meshes and the geometric measures used throughout the package."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from itertools import combinations
from typing import Optional

import numpy as np


class MeshError(ValueError):
    """Raised for invalid or degenerate meshes."""


def simplex_volumes(points: np.ndarray, cells: np.ndarray) -> np.ndarray:
    """Signed volumes of the simplices ``points[cells]``."""
    d = points.shape[1]
    p = points[cells]
    jac = p[:, 1:, :] - p[:, :1, :]
    fact = 1.0 if d == 1 else (2.0 if d == 2 else 6.0)
    return np.linalg.det(jac) / fact


def local_edges(dim: int) -> np.ndarray:
    return np.array(list(combinations(range(dim + 1), 2)), dtype=np.int64)


def local_facets(dim: int) -> np.ndarray:
    # facet i is opposite to vertex i
    n = dim + 1
    return np.array([[j for j in range(n) if j != i] for i in range(n)], dtype=np.int64)


def boundary_facets_of(cells: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Facets adjacent to exactly one cell.

    Returns
    -------
    facets : (nf, dim) int array, vertex indices sorted within each row
    owner : (nf,) int array, index of the adjacent cell
    """
    lf = local_facets(dim)
    allf = np.sort(cells[:, lf].reshape(-1, dim), axis=1)
    owner = np.repeat(np.arange(len(cells)), dim + 1)
    _, idx, counts = np.unique(allf, axis=0, return_index=True, return_counts=True)
    once = idx[counts == 1]
    once.sort()
    return allf[once], owner[once]


@dataclass(frozen=True, eq=False)
class Mesh:
    """Simplicial mesh.

    ``vertices`` are physical coordinates. Meshes produced by
    :func:`build_half_ball_mesh` also carry the reference coordinates on the
    half cube together with the radius of the cube-to-ball map, so that later
    refinement keeps the curved boundary and the internal spheres exact.
    """

    vertices: np.ndarray
    cells: np.ndarray
    ref_vertices: Optional[np.ndarray] = None
    radius: Optional[float] = None
    sphere_levels: tuple = ()
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=float)
        c = np.ascontiguousarray(self.cells, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] not in (2, 3):
            raise MeshError("vertices must have shape (n, 2) or (n, 3)")
        if c.ndim != 2 or c.shape[1] != v.shape[1] + 1:
            raise MeshError("cells must have dim+1 columns")
        if c.size and (c.min() < 0 or c.max() >= len(v)):
            raise MeshError("cell vertex index out of range")
        v.setflags(write=False)
        c.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "cells", c)
        if self.ref_vertices is not None:
            r = np.ascontiguousarray(self.ref_vertices, dtype=float)
            r.setflags(write=False)
            object.__setattr__(self, "ref_vertices", r)

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    def volumes(self) -> np.ndarray:
        if "vol" not in self._cache:
            self._cache["vol"] = simplex_volumes(self.vertices, self.cells)
        return self._cache["vol"]

    def total_volume(self) -> float:
        return float(self.volumes().sum())

    def _boundary(self):
        if "bnd" not in self._cache:
            self._cache["bnd"] = boundary_facets_of(self.cells, self.dim)
        return self._cache["bnd"]

    @property
    def boundary_facets(self) -> np.ndarray:
        return self._boundary()[0]

    @property
    def facet_owner(self) -> np.ndarray:
        """Index of the cell adjacent to each boundary facet."""
        return self._boundary()[1]

    def centroids(self) -> np.ndarray:
        return self.vertices[self.cells].mean(axis=1)

    def edge_lengths(self) -> np.ndarray:
        """(n_cells, n_local_edges) edge lengths."""
        le = local_edges(self.dim)
        p = self.vertices[self.cells]
        return np.linalg.norm(p[:, le[:, 1]] - p[:, le[:, 0]], axis=2)

    def cell_diameters(self) -> np.ndarray:
        return self.edge_lengths().max(axis=1)

    def facet_measures(self, facets: np.ndarray) -> np.ndarray:
        p = self.vertices[facets]
        if self.dim == 2:
            return np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
        return 0.5 * np.linalg.norm(np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]), axis=1)

    def min_dihedral_angle(self) -> float:
        """Smallest interior angle (degrees): dihedral in 3D, corner angle in 2D."""
        p = self.vertices[self.cells]
        if self.dim == 2:
            angs = []
            for i in range(3):
                a = p[:, (i + 1) % 3] - p[:, i]
                b = p[:, (i + 2) % 3] - p[:, i]
                cosv = (a * b).sum(1) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
                angs.append(np.arccos(np.clip(cosv, -1, 1)))
            return float(np.degrees(np.min(angs)))
        # face normals; dihedral between faces i and j is pi - angle(n_i, n_j)
        normals = []
        for f in local_facets(3):
            a, b, c = p[:, f[0]], p[:, f[1]], p[:, f[2]]
            n = np.cross(b - a, c - a)
            normals.append(n / np.linalg.norm(n, axis=1, keepdims=True))
        best = np.inf
        for i, j in combinations(range(4), 2):
            ni = normals[i] * _outward_sign(p, i)[:, None]
            nj = normals[j] * _outward_sign(p, j)[:, None]
            cosv = np.clip((ni * nj).sum(1), -1, 1)
            best = min(best, float(np.min(np.pi - np.arccos(cosv))))
        return float(np.degrees(best))

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(self.vertices.tobytes())
        h.update(self.cells.tobytes())
        return h.hexdigest()[:16]

    def with_vertices(self, vertices: np.ndarray) -> "Mesh":
        return Mesh(vertices, self.cells)


def _outward_sign(p: np.ndarray, i: int) -> np.ndarray:
    # +1 where cross(b-a, c-a) of facet i points away from vertex i
    f = local_facets(3)[i]
    a, b, c = p[:, f[0]], p[:, f[1]], p[:, f[2]]
    n = np.cross(b - a, c - a)
    return -np.sign(((p[:, i] - a) * n).sum(1))


def submesh(mesh: Mesh, cell_mask: np.ndarray, radius: Optional[float] = None) -> tuple[Mesh, np.ndarray]:
    """Mesh made of the selected cells.

    Returns the new mesh and ``vmap`` with ``new_vertex i == old vertex vmap[i]``.
    When the parent carries reference coordinates and ``radius`` is given,
    the reference coordinates are rescaled so the cube-to-ball map of the
    child uses ``radius``.
    """
    cells = mesh.cells[np.asarray(cell_mask, dtype=bool)]
    if len(cells) == 0:
        raise MeshError("empty submesh")
    vmap, inv = np.unique(cells, return_inverse=True)
    new_cells = inv.reshape(cells.shape)
    ref = None
    if mesh.ref_vertices is not None and radius is not None:
        ref = mesh.ref_vertices[vmap] * (mesh.radius / radius)
    levels = tuple(l for l in mesh.sphere_levels if radius is None or l < radius)
    return Mesh(mesh.vertices[vmap], new_cells, ref_vertices=ref, radius=radius,
                sphere_levels=levels), vmap
