"""Conforming longest-edge bisection of simplicial meshes.

Edges are compared by physical length with ties broken by the global edge
key, so every cell sharing an edge agrees on which edge is longest; this is
what keeps the closure loop conforming without explicit neighbour lists.
"""
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .mesh import local_edges

MidpointFn = Callable[
    [Optional[np.ndarray], Optional[np.ndarray], np.ndarray, np.ndarray],
    tuple[Optional[np.ndarray], np.ndarray],
]


def _longest_local_edge(phys, cells, le):
    a = np.minimum(cells[:, le[:, 0]], cells[:, le[:, 1]])
    b = np.maximum(cells[:, le[:, 0]], cells[:, le[:, 1]])
    lengths = np.linalg.norm(phys[b] - phys[a], axis=2)
    keys = (a.astype(np.int64) << 32) | b.astype(np.int64)
    top = lengths == lengths.max(axis=1, keepdims=True)
    return np.where(top, keys, -1).argmax(axis=1), keys


class _MidpointTable:
    """Sorted map edge-key -> midpoint vertex index."""

    def __init__(self):
        self.keys = np.empty(0, dtype=np.int64)
        self.mids = np.empty(0, dtype=np.int64)

    def lookup(self, keys: np.ndarray) -> np.ndarray:
        """Midpoint index for each key, -1 when absent."""
        if len(self.keys) == 0:
            return np.full(keys.shape, -1, dtype=np.int64)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        hit = self.keys[pos] == keys
        return np.where(hit, self.mids[pos], -1)

    def add(self, keys: np.ndarray, mids: np.ndarray):
        k = np.concatenate([self.keys, keys])
        m = np.concatenate([self.mids, mids])
        order = np.argsort(k, kind="stable")
        self.keys, self.mids = k[order], m[order]


def bisect(
    phys: np.ndarray,
    cells: np.ndarray,
    marked: np.ndarray,
    midpoint: MidpointFn,
    ref: Optional[np.ndarray] = None,
    max_rounds: int = 200,
):
    """Bisect every marked cell at least once and restore conformity.

    Parameters
    ----------
    phys : (nv, d) physical coordinates
    cells : (nc, d+1) vertex indices
    marked : (nc,) bool
    midpoint : callable ``(ref_a, ref_b, phys_a, phys_b) -> (ref_mid, phys_mid)``
        evaluated on the endpoint coordinates of the edges to split; the
        reference arguments and result are ``None`` for unmapped meshes.
    ref : optional (nv, d) reference coordinates, kept in sync.

    Returns
    -------
    phys, cells, ref
    """
    dim = phys.shape[1]
    le = local_edges(dim)
    nv = len(phys)
    table = _MidpointTable()
    all_phys = phys
    all_ref = ref

    def create(keys):
        nonlocal nv, all_phys, all_ref
        keys = np.unique(keys)
        ia = (keys >> 32).astype(np.int64)
        ib = (keys & 0xFFFFFFFF).astype(np.int64)
        if all_ref is None:
            r_mid, p_mid = midpoint(None, None, all_phys[ia], all_phys[ib])
        else:
            r_mid, p_mid = midpoint(all_ref[ia], all_ref[ib], all_phys[ia], all_phys[ib])
        mids = np.arange(nv, nv + len(keys), dtype=np.int64)
        nv += len(keys)
        all_phys = np.concatenate([all_phys, p_mid])
        if all_ref is not None:
            all_ref = np.concatenate([all_ref, r_mid])
        table.add(keys, mids)

    lidx, keys = _longest_local_edge(all_phys, cells, le)
    create(keys[np.flatnonzero(marked), lidx[marked]])

    for _ in range(max_rounds):
        lidx, keys = _longest_local_edge(all_phys, cells, le)
        hit = table.lookup(keys) >= 0
        active = np.flatnonzero(hit.any(axis=1))
        if len(active) == 0:
            break
        lk = keys[active, lidx[active]]
        missing = table.lookup(lk) < 0
        if missing.any():
            create(lk[missing])
        mid = table.lookup(lk)
        c = cells[active]
        i = le[lidx[active], 0]
        j = le[lidx[active], 1]
        rows = np.arange(len(active))
        child_a = c.copy()
        child_a[rows, j] = mid
        child_b = c.copy()
        child_b[rows, i] = mid
        keep = np.ones(len(cells), dtype=bool)
        keep[active] = False
        cells = np.concatenate([cells[keep], child_a, child_b])
    else:
        raise RuntimeError("bisection closure did not terminate")
    return all_phys, cells, all_ref


def refine_to_size(
    phys: np.ndarray,
    cells: np.ndarray,
    size_fn: Callable[[np.ndarray], np.ndarray],
    midpoint: MidpointFn,
    ref: Optional[np.ndarray] = None,
    max_sweeps: int = 60,
    max_cells: int = 3_000_000,
):
    """Bisect until every cell's longest edge is below ``size_fn(centroid)``."""
    dim = phys.shape[1]
    le = local_edges(dim)
    for _ in range(max_sweeps):
        p = phys[cells]
        longest = np.linalg.norm(p[:, le[:, 1]] - p[:, le[:, 0]], axis=2).max(axis=1)
        marked = longest > size_fn(p.mean(axis=1))
        if not marked.any():
            return phys, cells, ref
        if len(cells) > max_cells:
            raise RuntimeError(f"refinement exceeded {max_cells} cells")
        phys, cells, ref = bisect(phys, cells, marked, midpoint, ref)
    raise RuntimeError("size-driven refinement did not converge")


# children of a tetrahedron (0..3 vertices, 4..9 midpoints of edges 01 02 03 12 13 23);
# the interior octahedron is split along the 02-13 diagonal
_RED_3D = np.array([
    [0, 4, 5, 6], [4, 1, 7, 8], [5, 7, 2, 9], [6, 8, 9, 3],
    [4, 5, 6, 8], [4, 5, 7, 8], [5, 6, 8, 9], [5, 7, 8, 9],
])
# children of a triangle (0..2 vertices, 3..5 midpoints of edges 01 02 12)
_RED_2D = np.array([[0, 3, 4], [3, 1, 5], [4, 5, 2], [3, 5, 4]])


def red_refine(phys: np.ndarray, cells: np.ndarray, midpoint: MidpointFn,
               ref: Optional[np.ndarray] = None):
    """Split every edge at its midpoint (1 cell -> 2^d cells, mesh size halved)."""
    dim = phys.shape[1]
    pairs = np.array([(i, j) for i in range(dim + 1) for j in range(i + 1, dim + 1)])
    a = np.minimum(cells[:, pairs[:, 0]], cells[:, pairs[:, 1]]).astype(np.int64)
    b = np.maximum(cells[:, pairs[:, 0]], cells[:, pairs[:, 1]]).astype(np.int64)
    keys = (a << 32) | b
    uniq, inv = np.unique(keys, return_inverse=True)
    ia, ib = uniq >> 32, uniq & 0xFFFFFFFF
    if ref is None:
        r_mid, p_mid = midpoint(None, None, phys[ia], phys[ib])
    else:
        r_mid, p_mid = midpoint(ref[ia], ref[ib], phys[ia], phys[ib])
    mids = len(phys) + inv.reshape(keys.shape)
    local = np.concatenate([cells, mids], axis=1)
    pattern = _RED_3D if dim == 3 else _RED_2D
    children = local[:, pattern].reshape(-1, dim + 1)
    new_ref = None if ref is None else np.concatenate([ref, r_mid])
    return np.concatenate([phys, p_mid]), children, new_ref
