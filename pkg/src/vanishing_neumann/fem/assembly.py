"""P1 stiffness, mass and boundary-load assembly on simplices."""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from ..geometry.mesh import Mesh, MeshError


def p1_gradients(mesh: Mesh) -> tuple[np.ndarray, np.ndarray]:
    """Barycentric gradients per cell.

    Returns
    -------
    grads : (nc, d+1, d) gradient of each local hat function
    vol : (nc,) cell volumes
    """
    p = mesh.vertices[mesh.cells]
    jac = p[:, 1:, :] - p[:, :1, :]  # rows are edge vectors
    vol = mesh.volumes()
    bad = np.flatnonzero(vol <= 0)
    if len(bad):
        raise MeshError(f"degenerate or inverted cell {bad[0]} (volume {vol[bad[0]]:.3e})")
    inv = np.linalg.inv(jac)  # columns are gradients of lambda_1..lambda_d
    g = np.transpose(inv, (0, 2, 1))
    g0 = -g.sum(axis=1, keepdims=True)
    return np.concatenate([g0, g], axis=1), vol


def _scatter(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    n = mesh.n_vertices
    k = mesh.cells.shape[1]
    rows = np.repeat(mesh.cells, k, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, k)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    return mat


def _as_mesh(mesh) -> Mesh:
    # a TaggedMesh carries its mesh; boundary tags do not enter the matrices
    return getattr(mesh, "mesh", mesh)


def assemble_stiffness(mesh: Mesh) -> sp.csr_matrix:
    """Global matrix of ``int grad u . grad v`` (accepts a Mesh or a TaggedMesh)."""
    mesh = _as_mesh(mesh)
    g, vol = p1_gradients(mesh)
    local = np.einsum("cid,cjd->cij", g, g) * vol[:, None, None]
    return _scatter(mesh, local)


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    """Consistent P1 mass matrix (accepts a Mesh or a TaggedMesh)."""
    mesh = _as_mesh(mesh)
    d = mesh.dim
    vol = mesh.volumes()
    if np.any(vol <= 0):
        bad = int(np.flatnonzero(vol <= 0)[0])
        raise MeshError(f"degenerate or inverted cell {bad}")
    ref = (np.ones((d + 1, d + 1)) + np.eye(d + 1)) / ((d + 1) * (d + 2))
    local = vol[:, None, None] * ref[None]
    return _scatter(mesh, local)


# 3-point (degree 2) rule on triangles, 2-point Gauss on segments
_TRI_RULE = (
    np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]]),
    np.full(3, 1 / 3),
)
_SEG_RULE = (
    np.array([[0.5 + 0.5 / np.sqrt(3), 0.5 - 0.5 / np.sqrt(3)],
              [0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)]]),
    np.full(2, 0.5),
)


def facet_rule(dim: int):
    return _TRI_RULE if dim == 3 else _SEG_RULE


def assemble_facet_load(
    mesh: Mesh, facets: np.ndarray, f: Callable[[np.ndarray], np.ndarray]
) -> np.ndarray:
    """Load vector ``b_i = int_F f phi_i`` over the given boundary facets."""
    b = np.zeros(mesh.n_vertices)
    if len(facets) == 0:
        return b
    bary, w = facet_rule(mesh.dim)
    pts = mesh.vertices[facets]  # (nf, d, d)
    meas = mesh.facet_measures(facets)
    for q in range(len(w)):
        xq = np.einsum("k,fkd->fd", bary[q], pts)
        fq = f(xq)
        contrib = (w[q] * meas * fq)[:, None] * bary[q][None, :]
        np.add.at(b, facets.ravel(), contrib.ravel())
    return b


def l2_mass_integral(mesh: Mesh, u: np.ndarray, mass: Optional[sp.spmatrix] = None) -> float:
    M = assemble_mass(mesh) if mass is None else mass
    return float(u @ (M @ u))
