"""Boundary tagging: Dirichlet, Neumann patch, artificial outer boundary."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .mesh import Mesh, MeshError
from .patch import PatchSpec

DIRICHLET = 0
NEUMANN = 1
ARTIFICIAL = 2

MIN_PATCH_FACETS = 8
FLAT_TOL = 1e-12


class UnderResolvedPatch(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class TaggedMesh:
    """A mesh with one tag per boundary facet (aligned with ``mesh.boundary_facets``)."""

    mesh: Mesh
    facet_tags: np.ndarray
    epsilon: float = 0.0
    patch: Optional[PatchSpec] = None

    @property
    def facets(self) -> np.ndarray:
        return self.mesh.boundary_facets

    def facets_with(self, tag: int) -> np.ndarray:
        return self.facets[self.facet_tags == tag]

    def constrained_vertices(self) -> np.ndarray:
        """Vertices on at least one Dirichlet or artificial facet (junctions included)."""
        f = self.facets[self.facet_tags != NEUMANN]
        return np.unique(f)

    def neumann_area(self) -> float:
        f = self.facets_with(NEUMANN)
        return float(self.mesh.facet_measures(f).sum()) if len(f) else 0.0

    def counts(self) -> dict:
        return {
            "dirichlet": int(np.sum(self.facet_tags == DIRICHLET)),
            "neumann": int(np.sum(self.facet_tags == NEUMANN)),
            "artificial": int(np.sum(self.facet_tags == ARTIFICIAL)),
        }


def flat_facet_mask(mesh: Mesh) -> np.ndarray:
    f = mesh.boundary_facets
    scale = max(1.0, float(np.abs(mesh.vertices).max()))
    return np.all(np.abs(mesh.vertices[f][:, :, -1]) <= FLAT_TOL * scale, axis=1)


def tag_boundary(
    mesh: Mesh,
    patch: Optional[PatchSpec],
    epsilon: float,
    *,
    artificial_outer: bool = False,
    min_patch_facets: int = MIN_PATCH_FACETS,
) -> TaggedMesh:
    """Tag the boundary of a flat-bottomed mesh.

    Flat-face facets whose barycenter lies in ``epsilon * V`` become Neumann;
    the remaining flat facets are Dirichlet; curved facets are Dirichlet, or
    artificial (zero Dirichlet data of a truncated unbounded problem) when
    ``artificial_outer`` is set.
    """
    if epsilon < 0:
        raise MeshError("epsilon must be nonnegative")
    f = mesh.boundary_facets
    flat = flat_facet_mask(mesh)
    if not flat.any():
        raise MeshError("mesh has no facets in the hyperplane x_N = 0")
    tags = np.full(len(f), ARTIFICIAL if artificial_outer else DIRICHLET, dtype=np.int8)
    tags[flat] = DIRICHLET
    if epsilon > 0 and patch is not None:
        flat_pts = mesh.vertices[np.unique(f[flat])][:, :-1]
        face_radius = float(np.linalg.norm(flat_pts, axis=1).max())
        if epsilon * patch.circumradius() >= face_radius * (1 - 1e-12):
            raise MeshError(
                f"patch epsilon*V (circumradius {epsilon * patch.circumradius():.4g}) "
                f"overflows the flat face (radius {face_radius:.4g})"
            )
        bary = mesh.vertices[f[flat]].mean(axis=1)[:, :-1]
        inside = patch.contains(bary, scale=epsilon)
        idx = np.flatnonzero(flat)[inside]
        if len(idx) < min_patch_facets:
            raise UnderResolvedPatch(
                f"only {len(idx)} facets inside the scaled patch (epsilon={epsilon}); "
                f"need at least {min_patch_facets}"
            )
        tags[idx] = NEUMANN
    return TaggedMesh(mesh, tags, float(epsilon), patch)


def whole_flat_face(mesh: Mesh) -> TaggedMesh:
    """Neumann on the entire flat face, Dirichlet on the curved boundary."""
    tags = np.full(len(mesh.boundary_facets), DIRICHLET, dtype=np.int8)
    tags[flat_facet_mask(mesh)] = NEUMANN
    return TaggedMesh(mesh, tags, np.inf, None)
