"""Neumann patch shapes in the flat face and their geometric checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np


class PatchError(ValueError):
    pass


@dataclass(frozen=True)
class PatchSpec:
    """Unscaled patch ``V`` in the flat face ``{x_N = 0}``.

    ``kind`` is ``"disk"`` (``radius``), ``"polygon"`` (``vertices``, an
    (n, 2) array in the flat-face coordinates) or ``"radial"`` (``rho``,
    samples of the boundary radius at equally spaced angles).  In two space
    dimensions the flat face is a line and only disks (symmetric intervals)
    are meaningful.
    """

    kind: str
    radius: float = 0.0
    vertices: Optional[tuple] = None
    rho: Optional[tuple] = None
    _poly: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.kind == "disk":
            if not self.radius > 0:
                raise PatchError("disk radius must be positive")
            return
        if self.kind == "polygon":
            if self.vertices is None or len(self.vertices) < 3:
                raise PatchError("polygon needs at least 3 vertices")
            poly = np.asarray(self.vertices, dtype=float)
        elif self.kind == "radial":
            if self.rho is None or len(self.rho) < 3:
                raise PatchError("radial patch needs at least 3 samples")
            rho = np.asarray(self.rho, dtype=float)
            if np.any(rho <= 0):
                raise PatchError("radial samples must be positive")
            th = 2 * np.pi * np.arange(len(rho)) / len(rho)
            poly = np.stack([rho * np.cos(th), rho * np.sin(th)], axis=1)
        else:
            raise PatchError(f"unknown patch kind {self.kind!r}")
        if poly.ndim != 2 or poly.shape[1] != 2:
            raise PatchError("polygon vertices must be 2D points")
        if _signed_area(poly) < 0:
            poly = poly[::-1]
        _check_simple(poly)
        object.__setattr__(self, "_poly", poly)
        if not self.contains(np.zeros((1, 2)))[0] or _on_boundary(poly, np.zeros(2)):
            raise PatchError("0 must lie in the interior of the patch")

    # constructors -------------------------------------------------------
    @classmethod
    def disk(cls, radius: float = 1.0) -> "PatchSpec":
        return cls("disk", radius=float(radius))

    @classmethod
    def polygon(cls, vertices) -> "PatchSpec":
        return cls("polygon", vertices=tuple(map(tuple, np.asarray(vertices, float))))

    @classmethod
    def square(cls, half_side: float = 1.0) -> "PatchSpec":
        a = float(half_side)
        return cls.polygon([(-a, -a), (a, -a), (a, a), (-a, a)])

    @classmethod
    def radial(cls, rho) -> "PatchSpec":
        return cls("radial", rho=tuple(float(r) for r in rho))

    # geometry -----------------------------------------------------------
    @property
    def polygon_vertices(self) -> Optional[np.ndarray]:
        return self._poly

    def contains(self, xp: np.ndarray, scale: float = 1.0) -> np.ndarray:
        """Membership of flat-face points ``xp`` in ``scale * V`` (open set)."""
        xp = np.atleast_2d(np.asarray(xp, dtype=float))
        if scale <= 0:
            return np.zeros(len(xp), dtype=bool)
        y = xp / scale
        if self.kind == "disk":
            return np.linalg.norm(y, axis=1) < self.radius
        if y.shape[1] != 2:
            raise PatchError("polygonal patches need a 2D flat face (N = 3)")
        return _point_in_polygon(self._poly, y)

    def inradius(self) -> float:
        """Largest r with the disk B_r(0) inside V."""
        if self.kind == "disk":
            return self.radius
        return float(_distances_to_edges(self._poly, np.zeros(2)).min())

    def circumradius(self) -> float:
        """Smallest R with V inside B_R(0)."""
        if self.kind == "disk":
            return self.radius
        return float(np.linalg.norm(self._poly, axis=1).max())

    def diameter(self) -> float:
        if self.kind == "disk":
            return 2 * self.radius
        p = self._poly
        return float(np.max(np.linalg.norm(p[:, None] - p[None], axis=2)))

    def area(self, dim: int = 3) -> float:
        if self.kind == "disk":
            return 2 * self.radius if dim == 2 else np.pi * self.radius ** 2
        return float(_signed_area(self._poly))

    def boundary_samples(self, n: int = 720) -> tuple[np.ndarray, np.ndarray]:
        """Points on the boundary and outward unit normals."""
        if self.kind == "disk":
            th = 2 * np.pi * np.arange(n) / n
            nrm = np.stack([np.cos(th), np.sin(th)], axis=1)
            return self.radius * nrm, nrm
        p = self._poly
        q = np.roll(p, -1, axis=0)
        e = q - p
        nrm = np.stack([e[:, 1], -e[:, 0]], axis=1)
        nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
        per = max(2, n // len(p))
        t = (np.arange(per) + 0.5) / per
        pts = (p[:, None, :] + t[None, :, None] * e[:, None, :]).reshape(-1, 2)
        return pts, np.repeat(nrm, per, axis=0)

    def to_dict(self) -> dict:
        if self.kind == "disk":
            return {"kind": "disk", "radius": self.radius}
        if self.kind == "polygon":
            return {"kind": "polygon", "vertices": [list(v) for v in self.vertices]}
        return {"kind": "radial", "rho": list(self.rho)}

    @classmethod
    def from_dict(cls, d: dict) -> "PatchSpec":
        kind = d.get("kind")
        if kind == "disk":
            return cls.disk(d["radius"])
        if kind == "square":
            return cls.square(d.get("half_side", 1.0))
        if kind == "polygon":
            return cls.polygon(d["vertices"])
        if kind == "radial":
            return cls.radial(d["rho"])
        raise PatchError(f"unknown patch kind {kind!r}")


def check_strict_star_shaped(patch: PatchSpec) -> float:
    """Minimum of ``x . nu(x)`` over the patch boundary.

    Positive values mean the patch is strictly star-shaped about the origin.
    For polygons ``x . nu`` is constant on each edge (the signed distance of
    the supporting line), so the minimum is exact.
    """
    if patch.kind == "disk":
        return patch.radius
    return float(_distances_to_edges(patch.polygon_vertices, np.zeros(2), signed=True).min())


def rim_distance(patch: Optional[PatchSpec], x: np.ndarray, scale: float = 1.0) -> np.ndarray:
    """Distance from points ``x`` (last coordinate normal to the flat face) to
    the rim ``∂(scale * V)`` of the scaled patch, a curve in ``{x_N = 0}``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if patch is None or scale <= 0:
        return np.full(len(x), np.inf)
    xp, z = x[:, :-1], x[:, -1]
    if patch.kind == "disk":
        d2 = np.abs(np.linalg.norm(xp, axis=1) - scale * patch.radius)
    else:
        p = scale * patch.polygon_vertices
        q = np.roll(p, -1, axis=0)
        d2 = np.full(len(x), np.inf)
        for a, b in zip(p, q):
            e = b - a
            t = np.clip(((xp - a) @ e) / (e @ e), 0, 1)
            d2 = np.minimum(d2, np.linalg.norm(xp - a - t[:, None] * e, axis=1))
    return np.hypot(d2, z)


def _signed_area(p: np.ndarray) -> float:
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _distances_to_edges(p, x, signed=False):
    q = np.roll(p, -1, axis=0)
    e = q - p
    nrm = np.stack([e[:, 1], -e[:, 0]], axis=1) / np.linalg.norm(e, axis=1)[:, None]
    # signed distance of the supporting line, positive when x is inside (CCW polygon)
    s = ((p - x) * nrm).sum(axis=1)
    if signed:
        return s
    # unsigned distance from x to each closed segment
    t = np.clip(((x - p) * e).sum(1) / (e * e).sum(1), 0, 1)
    return np.linalg.norm(p + t[:, None] * e - x, axis=1)


def _on_boundary(p, x, tol=1e-14):
    return bool(_distances_to_edges(p, x).min() <= tol)


def _point_in_polygon(p: np.ndarray, y: np.ndarray) -> np.ndarray:
    inside = np.zeros(len(y), dtype=bool)
    n = len(p)
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        cond = (a[1] > y[:, 1]) != (b[1] > y[:, 1])
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = a[0] + (y[:, 1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1])
        inside ^= cond & (y[:, 0] < xc)
    return inside


def _check_simple(p: np.ndarray):
    n = len(p)
    if np.any(np.linalg.norm(np.roll(p, -1, axis=0) - p, axis=1) == 0):
        raise PatchError("polygon has repeated consecutive vertices")
    for i in range(n):
        a, b = p[i], p[(i + 1) % n]
        for j in range(i + 1, n):
            if j == i or (j + 1) % n == i or j == (i + 1) % n:
                continue
            c, d = p[j], p[(j + 1) % n]
            if _segments_cross(a, b, c, d):
                raise PatchError(f"polygon boundary self-intersects (edges {i}, {j})")


def _segments_cross(a, b, c, d) -> bool:
    def orient(p, q, r):
        return np.sign((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))

    o1, o2, o3, o4 = orient(a, b, c), orient(a, b, d), orient(c, d, a), orient(c, d, b)
    return bool(o1 * o2 < 0 and o3 * o4 < 0)
