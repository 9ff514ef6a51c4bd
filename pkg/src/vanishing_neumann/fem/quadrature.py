"""Quadrature on half spheres and clipped half balls for P1 fields.

Sphere integrals use a product rule on the upper half sphere: Gauss-Legendre
in ``t = x_N`` on [0, 1] times the trapezoid rule in azimuth, which is exact
for polynomials whose degree is below both ``2 * n_polar`` and ``n_azimuth``.
Fields are evaluated by locating each node in the mesh and interpolating
linearly inside the containing cell.

Integrals over ``B_r^+`` take whole cells exactly and split the cells cut by
the sphere into ``n^d`` congruent sub-simplices, each weighted by its exact
volume fraction under a linearized level set of the sphere.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import permutations
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ..geometry.mesh import Mesh
from .assembly import p1_gradients


# ---------------------------------------------------------------------------
# half-sphere rule
# ---------------------------------------------------------------------------
@lru_cache(maxsize=16)
def half_sphere_rule(dim: int = 3, n_polar: int = 12, n_azimuth: int = 32):
    """Nodes on the unit half sphere ``{|x| = 1, x_N > 0}`` and weights.

    In two dimensions the half circle is parametrised by the angle in
    (0, pi) with Gauss-Legendre nodes.
    """
    if dim == 2:
        t, w = np.polynomial.legendre.leggauss(n_azimuth)
        th = 0.5 * np.pi * (t + 1)
        nodes = np.stack([np.cos(th), np.sin(th)], axis=1)
        return nodes, 0.5 * np.pi * w
    t, wt = np.polynomial.legendre.leggauss(n_polar)
    z = 0.5 * (t + 1)
    wz = 0.5 * wt
    phi = 2 * np.pi * np.arange(n_azimuth) / n_azimuth
    Z, P = np.meshgrid(z, phi, indexing="ij")
    s = np.sqrt(1 - Z ** 2)
    nodes = np.stack([s * np.cos(P), s * np.sin(P), Z], axis=-1).reshape(-1, 3)
    weights = np.repeat(wz, n_azimuth) * (2 * np.pi / n_azimuth)
    return nodes, weights


# ---------------------------------------------------------------------------
# point location
# ---------------------------------------------------------------------------
class PointLocator:
    """Find the cell containing each query point.

    Candidates come from a k-d tree on cell centroids; the containing cell is
    the candidate whose smallest barycentric coordinate is largest.  Points
    slightly outside the polyhedral mesh (e.g. on the exact curved sphere)
    fall back to the nearest candidate, i.e. linear extrapolation.
    """

    def __init__(self, mesh: Mesh, k: int = 24):
        self.mesh = mesh
        self.k = min(k, mesh.n_cells)
        p = mesh.vertices[mesh.cells]
        self._origin = p[:, 0]
        self._inv = np.linalg.inv(p[:, 1:] - p[:, :1])  # rows -> barycentric
        self._tree = cKDTree(p.mean(axis=1))
        self._grads = None

    def barycentric(self, cells: np.ndarray, x: np.ndarray) -> np.ndarray:
        y = np.einsum("nd,nde->ne", x - self._origin[cells], self._inv[cells])
        return np.column_stack([1 - y.sum(axis=1), y])

    def locate(self, x: np.ndarray):
        """Returns ``(cell, bary, inside)`` for each point."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, cand = self._tree.query(x, k=self.k)
        cand = np.atleast_2d(cand).reshape(len(x), -1)
        best = np.full(len(x), -np.inf)
        cell = np.zeros(len(x), dtype=np.int64)
        for j in range(cand.shape[1]):
            b = self.barycentric(cand[:, j], x).min(axis=1)
            better = b > best
            best[better] = b[better]
            cell[better] = cand[better, j]
        bary = self.barycentric(cell, x)
        return cell, bary, best >= -1e-10

    def interpolate(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        cell, bary, _ = self.locate(x)
        return np.einsum("nk,nk->n", bary, np.asarray(values)[self.mesh.cells[cell]])

    def gradient(self, values: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Piecewise-constant gradient of the P1 interpolant at ``x``."""
        cell, _, _ = self.locate(x)
        if self._grads is None:
            self._grads, _ = p1_gradients(self.mesh)
        g = self._grads
        return np.einsum("nkd,nk->nd", g[cell], np.asarray(values)[self.mesh.cells[cell]])


def sphere_integral(
    locator: PointLocator, values, r: float, weight=None, n_polar: int = 12, n_azimuth: int = 32
) -> float:
    """``int_{S_r^+} v * weight`` for a P1 field ``v`` (``weight`` on unit nodes)."""
    nodes, w = half_sphere_rule(locator.mesh.dim, n_polar, n_azimuth)
    v = locator.interpolate(values, r * nodes)
    if weight is not None:
        v = v * weight(nodes)
    return float(r ** (locator.mesh.dim - 1) * np.sum(w * v))


# ---------------------------------------------------------------------------
# clipped-ball integrals
# ---------------------------------------------------------------------------
@lru_cache(maxsize=8)
def subsimplices(dim: int, n: int) -> np.ndarray:
    """Barycentric vertices of ``n^dim`` congruent sub-simplices, shape (n^dim, dim+1, dim+1).

    The reference simplex is ``{1 >= y_1 >= ... >= y_d >= 0}``; the Kuhn
    triangulation of the ``n``-grid of the unit cube restricted to it
    subdivides it into ``n^dim`` simplices of equal volume.
    """
    grid = np.stack(np.meshgrid(*[np.arange(n)] * dim, indexing="ij"), -1).reshape(-1, dim)
    out = []
    for perm in permutations(range(dim)):
        corner = grid.astype(float)
        verts = [corner]
        for ax in perm:
            corner = corner.copy()
            corner[:, ax] += 1
            verts.append(corner)
        v = np.stack(verts, axis=1) / n  # (m, d+1, d)
        c = v.mean(axis=1)
        out.append(v[np.all(np.diff(c, axis=1) < 0, axis=1)])
    y = np.concatenate(out)
    # y_1 = l_1+...+l_d, y_2 = l_2+...+l_d, ...: barycentric coordinates
    lam = np.empty(y.shape[:2] + (dim + 1,))
    lam[..., 0] = 1 - y[..., 0]
    for i in range(dim - 1):
        lam[..., i + 1] = y[..., i] - y[..., i + 1]
    lam[..., dim] = y[..., dim - 1]
    return lam


def negative_fraction(f: np.ndarray) -> np.ndarray:
    """Volume fraction of ``{f < 0}`` for the linear interpolant of vertex values.

    ``f`` has shape (m, d+1).  Uses the truncated-power divided difference
    ``sum_i (-f_i)_+^d / prod_{j != i} (f_j - f_i)``, evaluated by cases so
    that near-equal vertex values do not cancel catastrophically.
    """
    m, k = f.shape
    d = k - 1
    fs = np.sort(f, axis=1)
    neg = (fs < 0).sum(axis=1)
    out = np.where(neg == k, 1.0, 0.0)

    def single(lo, rest):
        # fraction below zero when only ``lo`` is negative
        return np.prod(-lo[:, None] / (rest - lo[:, None]), axis=1)

    one = neg == 1
    if one.any():
        out[one] = single(fs[one, 0], fs[one, 1:])
    top = neg == d
    if top.any():
        g = -fs[top][:, ::-1]
        out[top] = 1 - single(g[:, 0], g[:, 1:])
    if d == 3:
        two = neg == 2
        if two.any():
            a, b, c, e = (fs[two, i] for i in range(4))

            def g(x):
                return -(x ** 3) / ((c - x) * (e - x))

            def dg(x):
                den = (c - x) * (e - x)
                return -3 * x ** 2 / den - x ** 3 * (1 / ((c - x) * den) + 1 / ((e - x) * den))

            scale = np.maximum(np.abs(fs[two]).max(axis=1), 1e-300)
            close = (b - a) <= 1e-6 * scale
            with np.errstate(divide="ignore", invalid="ignore"):
                dd = (g(b) - g(a)) / (b - a)
            dd = np.where(close, dg(0.5 * (a + b)), dd)
            out[two] = -dd
    return np.clip(out, 0.0, 1.0)


def _degree2_rule(dim: int) -> np.ndarray:
    """Equal-weight barycentric points exact for quadratics on a simplex."""
    if dim == 2:
        return np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
    a, b = 0.5854101966249685, 0.1381966011250105
    return np.full((4, 4), b) + np.eye(4) * (a - b)


class BallIntegrator:
    """Integrals of P1 fields over ``B_r^+ = mesh ∩ {|x| < r}``.

    Cells with every vertex inside the ball are integrated exactly.  Cells
    the sphere may cut are split into ``n^d`` sub-simplices; on each, the
    level set ``|x|^2 - r^2`` is interpolated linearly and the volume
    fraction inside is computed in closed form, which also captures the
    thin slivers between an inscribed polyhedral sphere and the true one.
    """

    def __init__(self, mesh: Mesh, subdivisions: int = 4):
        self.mesh = mesh
        self.n = subdivisions
        self.grads, self.vol = p1_gradients(mesh)
        p = mesh.vertices[mesh.cells]
        d = np.linalg.norm(p, axis=2)
        self._rmax_v = d.max(axis=1)
        # lower bound for the distance from 0 to each cell
        cen = p.mean(axis=1)
        rad = np.linalg.norm(p - cen[:, None], axis=2).max(axis=1)
        self._rmin = np.maximum(0.0, np.minimum(d.min(axis=1), np.linalg.norm(cen, axis=1) - rad))
        self._sub = subsimplices(mesh.dim, subdivisions)
        self._subc = self._sub.mean(axis=1)  # barycentric centroids of the sub-simplices

    def weights(self, r: float):
        """``(full, cut, frac)``: cells fully inside, cut cells, and per-sub-simplex fractions."""
        full = self._rmax_v <= r
        cut = np.flatnonzero(~full & (self._rmin < r))
        p = self.mesh.vertices[self.mesh.cells[cut]]
        sv = np.einsum("sjk,ckd->csjd", self._sub, p)  # sub-simplex vertices
        f = (sv ** 2).sum(axis=3) - r * r
        frac = negative_fraction(f.reshape(-1, self.mesh.dim + 1)).reshape(f.shape[:2])
        return full, cut, frac

    def integrals(self, values: np.ndarray, r: float) -> dict:
        """``{'grad2': int |grad v|^2, 'l2': int v^2, 'volume': |B_r^+ ∩ mesh|}``."""
        v = np.asarray(values, dtype=float)
        full, cut, frac = self.weights(r)
        vc = v[self.mesh.cells]
        g = np.einsum("ckd,ck->cd", self.grads, vc)
        g2 = (g ** 2).sum(axis=1)
        d = self.mesh.dim
        # exact P1 mass on full cells: vol * (sum v_i^2 + (sum v_i)^2) / ((d+1)(d+2))
        m_full = self.vol * ((vc ** 2).sum(1) + vc.sum(1) ** 2) / ((d + 1) * (d + 2))
        cf = frac.mean(axis=1)
        vals = np.einsum("qk,ck->cq", self._subc, vc[cut])
        l2_cut = self.vol[cut] * (frac * vals ** 2).mean(axis=1)
        return {
            "grad2": float(np.sum(g2[full] * self.vol[full]) + np.sum(g2[cut] * self.vol[cut] * cf)),
            "l2": float(m_full[full].sum() + l2_cut.sum()),
            "volume": float(self.vol[full].sum() + np.sum(self.vol[cut] * cf)),
        }

    def grad_dot(self, values: np.ndarray, gradient, r: float) -> float:
        """``int_{B_r^+} grad v . G`` for a smooth vector field ``G`` given as a callable."""
        v = np.asarray(values, dtype=float)
        full, cut, frac = self.weights(r)
        gv = np.einsum("ckd,ck->cd", self.grads, v[self.mesh.cells])
        p = self.mesh.vertices[self.mesh.cells]
        idx = np.flatnonzero(full)
        lam2 = _degree2_rule(self.mesh.dim)
        pts = np.einsum("qk,ckd->cqd", lam2, p[idx])
        G = gradient(pts.reshape(-1, self.mesh.dim)).reshape(pts.shape)
        tot = float(np.sum(self.vol[idx] * np.einsum("cd,cqd->cq", gv[idx], G).mean(axis=1)))
        pts = np.einsum("qk,ckd->cqd", self._subc, p[cut])
        G = gradient(pts.reshape(-1, self.mesh.dim)).reshape(pts.shape)
        tot += float(np.sum(self.vol[cut] * (frac * np.einsum("cd,cqd->cq", gv[cut], G)).mean(axis=1)))
        return tot
