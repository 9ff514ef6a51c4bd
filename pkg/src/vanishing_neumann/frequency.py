"""Almgren-type frequency quantities of fields on a half ball.

For a field ``u`` on the half ball with flat face ``{x_N = 0}``, ``v`` denotes
its even reflection across that face.  Integrals of even integrands over the
full ball are twice the half-ball integrals, so with ``N`` the dimension

    H(v, r) = r^{1-N} * 2 * int_{S_r^+} u^2
    E(v, r, lam) = r^{2-N} * 2 * (int_{B_r^+} |grad u|^2 - lam int_{B_r^+} u^2)
    N(v, r, lam) = E / H

For a homogeneous harmonic polynomial of degree ``k`` and ``lam = 0`` the
frequency is identically ``k``; for an eigenfunction it tends to the
vanishing order at 0 as ``r -> 0``.
"""
from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .fem.quadrature import BallIntegrator, PointLocator, half_sphere_rule
from .fem.solvers import Field
from .geometry.mesh import Mesh

H_FLOOR = 1e-14
DEFAULT_CAP = 50.0


class FrequencyError(ValueError):
    pass


class UnderResolvedRadius(FrequencyError):
    def __init__(self, radii, sizes):
        self.radii = list(radii)
        super().__init__(
            "radii below 4 local mesh sizes: "
            + ", ".join(f"r={r:.4g} (h={h:.3g})" for r, h in zip(radii, sizes))
        )


class FrequencyContext:
    """Cached point locator and clipped-ball integrator for one mesh."""

    def __init__(self, mesh: Mesh, n_polar: int = 16, n_azimuth: int = 48, subdivisions: int = 4):
        self.mesh = mesh
        self.locator = PointLocator(mesh)
        self.ball = BallIntegrator(mesh, subdivisions)
        self.n_polar, self.n_azimuth = n_polar, n_azimuth
        self._cen_r = np.linalg.norm(mesh.centroids(), axis=1)
        self._diam = mesh.cell_diameters()
        self._extent = float(np.linalg.norm(mesh.vertices, axis=1).max())

    def local_size(self, r: float) -> float:
        """Largest diameter of the cells meeting the sphere of radius ``r``."""
        near = np.abs(self._cen_r - r) <= 0.5 * self._diam
        if not near.any():
            near = np.abs(self._cen_r - r) <= self._diam
        return float(self._diam[near].max()) if near.any() else float(self._diam.max())

    def check(self, radii, factor: float = 4.0):
        bad, sizes = [], []
        for r in radii:
            h = self.local_size(r)
            if r < factor * h or r >= self._extent:
                bad.append(r)
                sizes.append(h)
        if bad:
            raise UnderResolvedRadius(bad, sizes)


_CTX: dict = {}


def context_for(mesh: Mesh) -> FrequencyContext:
    key = id(mesh)
    ctx = _CTX.get(key)
    if ctx is None or ctx.mesh is not mesh:
        if len(_CTX) > 8:
            _CTX.clear()
        ctx = _CTX[key] = FrequencyContext(mesh)
    return ctx


def _values(v) -> tuple[np.ndarray, Mesh]:
    if not isinstance(v, Field):
        raise TypeError("expected a Field")
    return v.values, v.mesh


def compute_H(v: Field, r: float, ctx: Optional[FrequencyContext] = None, check: bool = True) -> float:
    u, mesh = _values(v)
    ctx = ctx or context_for(mesh)
    if check:
        ctx.check([r])
    nodes, w = half_sphere_rule(mesh.dim, ctx.n_polar, ctx.n_azimuth)
    vals = ctx.locator.interpolate(u, r * nodes)
    N = mesh.dim
    return float(r ** (1 - N) * 2 * r ** (N - 1) * np.sum(w * vals ** 2))


def compute_E(v: Field, r: float, lam: float, ctx: Optional[FrequencyContext] = None,
              check: bool = True) -> float:
    u, mesh = _values(v)
    ctx = ctx or context_for(mesh)
    if check:
        ctx.check([r])
    I = ctx.ball.integrals(u, r)
    return float(r ** (2 - mesh.dim) * 2 * (I["grad2"] - lam * I["l2"]))


def compute_N(v: Field, r: float, lam: float, ctx: Optional[FrequencyContext] = None,
              check: bool = True) -> float:
    H = compute_H(v, r, ctx, check)
    if H <= H_FLOOR:
        raise FrequencyError(
            f"H(v, {r}) = {H:.3e} vanishes: a nontrivial eigenfield cannot have H = 0"
        )
    return compute_E(v, r, lam, ctx, check=False) / H


@dataclass
class FrequencySeries:
    radii: np.ndarray
    H: np.ndarray
    E: np.ndarray
    N: np.ndarray
    lam: float
    fingerprint: str = ""

    def __len__(self):
        return len(self.radii)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["r", "H", "E", "N"])
            for row in zip(self.radii, self.H, self.E, self.N):
                wr.writerow([repr(float(x)) for x in row])

    def to_dict(self) -> dict:
        return {"r": self.radii.tolist(), "H": self.H.tolist(), "E": self.E.tolist(),
                "N": self.N.tolist(), "lambda": self.lam, "fingerprint": self.fingerprint}


def field_fingerprint(v: Field) -> str:
    h = hashlib.sha256(v.mesh.fingerprint().encode())
    h.update(np.ascontiguousarray(v.values).tobytes())
    return h.hexdigest()[:16]


def frequency_series(v: Field, lam: float, radii: Sequence[float],
                     ctx: Optional[FrequencyContext] = None, check: bool = True) -> FrequencySeries:
    radii = np.asarray(list(radii), dtype=float)
    if len(radii) == 0:
        e = np.zeros(0)
        return FrequencySeries(e, e, e, e, float(lam), field_fingerprint(v))
    if np.any(np.diff(radii) <= 0):
        raise FrequencyError("radii must be strictly increasing")
    ctx = ctx or context_for(v.mesh)
    if check:
        ctx.check(radii)
    H = np.array([compute_H(v, r, ctx, check=False) for r in radii])
    if np.any(H <= H_FLOOR):
        raise FrequencyError(f"H vanishes at radii {radii[H <= H_FLOOR].tolist()}")
    E = np.array([compute_E(v, r, lam, ctx, check=False) for r in radii])
    return FrequencySeries(radii, H, E, E / H, float(lam), field_fingerprint(v))


@dataclass
class DoublingReport:
    C: float
    passed: bool
    cap: float
    worst_pair: tuple = field(default=())

    def to_dict(self) -> dict:
        return {"C": self.C, "pass": self.passed, "cap": self.cap,
                "worst_pair": list(self.worst_pair)}


def check_doubling_bound(series: FrequencySeries, cap: float = DEFAULT_CAP) -> DoublingReport:
    """Smallest ``C >= 0`` with ``N(r)+1 <= exp(C (R-r)) (N(R)+1)`` for all ``r < R`` in the series."""
    if len(series) < 3:
        raise FrequencyError("doubling check needs at least 3 radii")
    if np.any(series.H <= 0):
        raise FrequencyError("H must be positive at every radius")
    a = series.N + 1
    if np.any(a <= 0):
        return DoublingReport(float("inf"), False, cap)
    r = series.radii
    C, pair = 0.0, ()
    for i in range(len(r)):
        for j in range(i + 1, len(r)):
            c = np.log(a[i] / a[j]) / (r[j] - r[i])
            if c > C:
                C, pair = float(c), (float(r[i]), float(r[j]))
    return DoublingReport(C, bool(np.isfinite(C) and C <= cap), cap, pair)
