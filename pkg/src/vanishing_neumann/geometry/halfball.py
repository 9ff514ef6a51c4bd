"""Half-ball meshes built on a reflected Kuhn grid of the half cube.

The reference domain is ``[-1, 1]^{N-1} x [0, 1]``. Each octant uses a Kuhn
triangulation mirrored so that every simplex is a monotone path away from
the origin; the triangulation is then symmetric under coordinate reflections
and never straddles the planes ``|x_i| = |x_j|``.  The radial map

    F(x) = R * x * |x|_inf / |x|_2

sends the cube shell ``|x|_inf = t`` onto the sphere of radius ``R t`` and
the bottom face onto the flat disk.  All refinement is done in reference
coordinates and pushed through ``F``, which keeps the outer sphere, every
requested internal sphere and every requested flat-face circle exact at the
vertices.
"""
from __future__ import annotations

from itertools import permutations
from typing import Callable, Iterable, Optional

import numpy as np

from .mesh import Mesh, MeshError, simplex_volumes
from .refine import red_refine, refine_to_size


def cube_to_ball(ref: np.ndarray, radius: float) -> np.ndarray:
    ref = np.asarray(ref, dtype=float)
    inf = np.abs(ref).max(axis=1)
    two = np.linalg.norm(ref, axis=1)
    scale = np.divide(inf, two, out=np.zeros_like(inf), where=two > 0)
    return radius * ref * scale[:, None]


def ball_to_cube(x: np.ndarray, radius: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    inf = np.abs(x).max(axis=1)
    two = np.linalg.norm(x, axis=1)
    scale = np.divide(two, inf, out=np.zeros_like(inf), where=inf > 0)
    return x * scale[:, None] / radius


def reference_nodes(spacing: float, levels: Iterable[float] = ()) -> np.ndarray:
    """1D node set on [0, 1]: a uniform ladder merged with required levels."""
    n = max(1, int(np.ceil(1.0 / spacing - 1e-9)))
    base = np.linspace(0.0, 1.0, n + 1)
    req = np.array(sorted({float(t) for t in levels if 0.0 < t < 1.0}))
    if len(req) == 0:
        return base
    h = 1.0 / n
    keep = np.ones(len(base), dtype=bool)
    for t in req:
        close = np.abs(base - t) < 0.35 * h
        close[0] = close[-1] = False
        keep &= ~close
    nodes = np.unique(np.concatenate([base[keep], req]))
    return nodes


def kuhn_half_cube(nodes: np.ndarray, dim: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Reflected Kuhn triangulation of ``[-1,1]^{dim-1} x [0,1]`` on a tensor grid."""
    sym = np.concatenate([-nodes[::-1], nodes[1:]])
    axes = [sym] * (dim - 1) + [nodes]
    shape = tuple(len(a) for a in axes)
    grids = np.meshgrid(*axes, indexing="ij")
    ref = np.stack([g.ravel() for g in grids], axis=1)

    lower = np.stack(
        np.meshgrid(*[np.arange(s - 1) for s in shape], indexing="ij"), axis=-1
    ).reshape(-1, dim)
    near = lower.copy()
    far = lower + 1
    for ax in range(dim):
        a = axes[ax]
        neg = (a[lower[:, ax]] + a[lower[:, ax] + 1]) < 0
        near[neg, ax] = lower[neg, ax] + 1
        far[neg, ax] = lower[neg, ax]
    strides = np.array([int(np.prod(shape[ax + 1:])) for ax in range(dim)])

    cells = []
    for perm in permutations(range(dim)):
        corner = near.copy()
        simplex = [corner @ strides]
        for ax in perm:
            corner = corner.copy()
            corner[:, ax] = far[:, ax]
            simplex.append(corner @ strides)
        cells.append(np.stack(simplex, axis=1))
    return ref, np.concatenate(cells)


def _mapped_midpoint(radius):
    def midpoint(ra, rb, pa, pb):
        rm = 0.5 * (ra + rb)
        return rm, cube_to_ball(rm, radius)
    return midpoint


def default_size_fn(radius: float, h_far: float, grading_ratio: float) -> Callable:
    h_min = h_far / grading_ratio

    def size(x):
        t = np.minimum(1.0, np.linalg.norm(x, axis=1) / (0.5 * radius))
        return h_min + (h_far - h_min) * t
    return size


def _finalize(ref, phys, cells, radius, levels) -> Mesh:
    sref = np.sign(simplex_volumes(ref, cells))
    if np.any(sref == 0):
        raise MeshError("degenerate reference simplex")
    cells = cells.copy()
    flip = sref < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()
    vol = simplex_volumes(phys, cells)
    mesh = Mesh(phys, cells, ref_vertices=ref, radius=radius, sphere_levels=tuple(levels))
    if np.any(vol <= 1e-14 * radius ** phys.shape[1]):
        bad = np.flatnonzero(vol <= 1e-14 * radius ** phys.shape[1])
        raise MeshError(
            f"{len(bad)} inverted or degenerate cells after mapping (first id {bad[0]}); "
            f"min dihedral {mesh.min_dihedral_angle():.3g} deg"
        )
    return mesh


def build_half_ball_mesh(
    radius: float,
    h_far: float,
    grading_ratio: float = 1.0,
    *,
    dim: int = 3,
    levels: Iterable[float] = (),
    size_fn: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    max_cells: int = 3_000_000,
) -> Mesh:
    """Graded simplicial mesh of the half ball ``{|x| < radius, x_N > 0}``.

    Parameters
    ----------
    radius : float
        Ball radius.
    h_far : float
        Target longest-edge length away from the origin.
    grading_ratio : float
        Ratio between ``h_far`` and the target size at the origin.
    dim : int
        Spatial dimension (3, or 2 for solver debugging).
    levels : iterable of float
        Physical radii that must appear as mesh-conforming spheres (and as
        circles in the flat face), e.g. truncation radii or a disk patch rim.
    size_fn : callable, optional
        Overrides the grading rule; maps (n, dim) points to target sizes.
    """
    if radius <= 0 or h_far <= 0:
        raise MeshError("radius and h_far must be positive")
    if h_far >= radius:
        raise MeshError(f"h_far={h_far} must be smaller than radius={radius}")
    if grading_ratio < 1:
        raise MeshError("grading_ratio must be >= 1")
    if dim not in (2, 3):
        raise MeshError("dim must be 2 or 3")
    levels = tuple(sorted({float(l) for l in levels if 0 < l < radius}))
    spacing = h_far / (radius * np.sqrt(dim))
    nodes = reference_nodes(spacing, [l / radius for l in levels])
    ref, cells = kuhn_half_cube(nodes, dim)
    phys = cube_to_ball(ref, radius)
    if size_fn is None:
        size_fn = default_size_fn(radius, h_far, grading_ratio)
    phys, cells, ref = refine_to_size(
        phys, cells, size_fn, _mapped_midpoint(radius), ref=ref, max_cells=max_cells
    )
    return _finalize(ref, phys, cells, radius, levels)


def refine_toward_origin(mesh: Mesh, factor: float, reach: Optional[float] = None) -> Mesh:
    """Longest-edge bisection of cells near the origin.

    Cells whose centroid lies within ``reach / factor`` of the origin are
    bisected until their longest edge has shrunk by ``factor``; conformity is
    restored by the bisection closure.  ``reach`` defaults to a quarter of the
    mesh extent.
    """
    if factor < 1:
        raise MeshError("factor must be >= 1")
    if factor == 1:
        return mesh
    extent = float(np.abs(mesh.vertices).max())
    reach = 0.25 * extent if reach is None else reach
    zone = reach / factor
    cent = mesh.centroids()
    diam = mesh.cell_diameters()
    near = np.linalg.norm(cent, axis=1) < zone + diam
    if not near.any():
        return mesh
    h_target = diam[near].max() / factor

    def size(x):
        out = np.full(len(x), np.inf)
        out[np.linalg.norm(x, axis=1) < zone] = h_target
        return out

    if mesh.ref_vertices is not None:
        midpoint = _mapped_midpoint(mesh.radius)
        ref = np.array(mesh.ref_vertices)
    else:
        def midpoint(ra, rb, pa, pb):
            return None, 0.5 * (pa + pb)
        ref = None
    phys = np.array(mesh.vertices)
    cells = np.array(mesh.cells)
    phys, cells, ref = refine_to_size(phys, cells, size, midpoint, ref=ref)
    if ref is not None:
        return _finalize(ref, phys, cells, mesh.radius, mesh.sphere_levels)
    vol = simplex_volumes(phys, cells)
    if np.any(vol < 1e-14):
        raise MeshError("refinement produced cells below volume 1e-14")
    return Mesh(phys, cells)


def uniform_refine(mesh: Mesh) -> Mesh:
    """Red refinement of every cell (halves the mesh size, 2^d children per cell)."""
    phys = np.array(mesh.vertices)
    cells = np.array(mesh.cells)
    ref = None if mesh.ref_vertices is None else np.array(mesh.ref_vertices)
    if ref is not None:
        midpoint = _mapped_midpoint(mesh.radius)
    else:
        def midpoint(ra, rb, pa, pb):
            return None, 0.5 * (pa + pb)
    phys, cells, ref = red_refine(phys, cells, midpoint, ref)
    if ref is not None:
        return _finalize(ref, phys, cells, mesh.radius, mesh.sphere_levels)
    return Mesh(phys, cells)
