"""Half-space limit profiles on truncated half balls.

The unbounded problem for ``w0`` (harmonic in the upper half space, Neumann
data ``-d_nu psi`` on the patch ``Pi``, zero Dirichlet on the rest of the
flat face, finite energy) is truncated to ``B_R^+`` with zero Dirichlet data
on the artificial cap.  Truncated minima decrease monotonically to the
half-space value with an algebraic error ``O(R^{-(N+2 gamma-2)})``, which is
removed by Richardson extrapolation over a ladder of radii.

Every radius of a ladder is cut from one large mesh: the ladder radii are
conforming spheres of that mesh, so the truncated spaces are nested exactly
and the discrete minima are monotone in ``R`` by construction.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .fem.assembly import assemble_facet_load, assemble_stiffness
from .fem.quadrature import BallIntegrator, PointLocator, half_sphere_rule, _degree2_rule
from .fem.solvers import Field, apply_constraints, solve_linear
from .geometry.halfball import build_half_ball_mesh
from .geometry.mesh import Mesh, submesh
from .geometry.patch import PatchSpec, rim_distance
from .geometry.tagging import NEUMANN, TaggedMesh, tag_boundary
from .polynomials import PsiSpec

log = logging.getLogger(__name__)

PROFILE_TOL = 1e-12


class ProfileError(RuntimeError):
    pass


@dataclass(frozen=True)
class ProfileNumerics:
    """Mesh and extrapolation parameters of the profile problems.

    ``R_factors`` are truncation radii in units of the patch circumradius.
    Near the rim of the patch the mesh size is ``h_rim + slope * dist``;
    far away it is at most ``far * |x|``.
    """

    R_factors: tuple = (4.0, 8.0, 16.0)
    h_rim: float = 0.02
    slope: float = 0.3
    far: float = 0.35
    tol: float = PROFILE_TOL


@dataclass(eq=False)
class ProfileSolution:
    field: Field
    tagged: TaggedMesh
    m_boundary: float
    m_energy: float
    R: float
    psi: PsiSpec
    patch: Optional[PatchSpec]
    load: np.ndarray = field(repr=False, default=None)

    @property
    def m(self) -> float:
        return self.m_energy


# ---------------------------------------------------------------------------
# meshes
# ---------------------------------------------------------------------------
def profile_mesh(patch: Optional[PatchSpec], R_max: float, radii: Sequence[float],
                 numerics: ProfileNumerics) -> Mesh:
    levels = list(radii)
    if patch is not None and patch.kind == "disk":
        levels.append(patch.radius)
    h_max = 0.5 * R_max

    def size(x):
        r = np.linalg.norm(x, axis=1)
        rim = numerics.h_rim + numerics.slope * rim_distance(patch, x)
        return np.minimum(np.minimum(h_max, rim), np.maximum(rim, numerics.far * r))

    # coarse background so the refinement starts from a small mesh
    return build_half_ball_mesh(R_max, 0.45 * R_max, levels=levels, size_fn=size)


class NestedProfileMesh:
    """One big half-ball mesh and its conforming sub-balls."""

    def __init__(self, mesh: Mesh, patch: Optional[PatchSpec]):
        if mesh.ref_vertices is None:
            raise ProfileError("nested profile meshes need reference coordinates")
        self.mesh = mesh
        self.patch = patch
        self._sub: dict = {}

    @property
    def R_max(self) -> float:
        return float(self.mesh.radius)

    def sub(self, R: float):
        """``(tagged, vmap, K)`` of the sub-ball of radius ``R``."""
        key = round(float(R), 12)
        if key not in self._sub:
            if R > self.R_max * (1 + 1e-12):
                raise ProfileError(f"R={R} exceeds the mesh radius {self.R_max}")
            if R >= self.R_max * (1 - 1e-12):
                m, vmap = self.mesh, np.arange(self.mesh.n_vertices)
            else:
                if not any(abs(R - l) < 1e-9 * R for l in self.mesh.sphere_levels):
                    raise ProfileError(f"R={R} is not a conforming sphere of the mesh")
                ref_inf = np.abs(self.mesh.ref_vertices[self.mesh.cells]).max(axis=2).max(axis=1)
                m, vmap = submesh(self.mesh, ref_inf <= R / self.R_max + 1e-12, radius=R)
            tagged = tag_boundary(m, self.patch, 1.0 if self.patch is not None else 0.0,
                                  artificial_outer=True)
            self._sub[key] = (tagged, vmap, assemble_stiffness(m))
        return self._sub[key]


# ---------------------------------------------------------------------------
# w0 and m
# ---------------------------------------------------------------------------
def _solve_w0_on(tagged: TaggedMesh, K, psi: PsiSpec, R: float, tol: float) -> ProfileSolution:
    mesh = tagged.mesh
    load = assemble_facet_load(mesh, tagged.facets_with(NEUMANN), lambda x: -psi.normal_derivative(x))
    system = apply_constraints(K, None, tagged.constrained_vertices())
    w = solve_linear(system, load, tol=tol)
    # m_boundary = 1/2 int_Pi w d_nu psi = -1/2 b.w ; m_energy = -1/2 w^T K w
    m_b = -0.5 * float(load @ w)
    m_e = -0.5 * float(w @ (K @ w))
    return ProfileSolution(Field(mesh, w), tagged, m_b, m_e, R, psi, tagged.patch, load)


def solve_w0(patch: PatchSpec, psi: PsiSpec, R: float, h: float = 0.04,
             numerics: Optional[ProfileNumerics] = None,
             nested: Optional[NestedProfileMesh] = None) -> ProfileSolution:
    """Discrete truncated minimizer ``w0`` on ``B_R^+`` (zero on the cap and off the patch).

    ``h`` is the mesh size at the patch rim.  Pass ``nested`` to reuse the
    sub-ball of an existing ladder mesh instead of meshing afresh.
    """
    numerics = numerics or ProfileNumerics(h_rim=h)
    if patch.circumradius() > R / 2:
        raise ProfileError(f"patch circumradius {patch.circumradius()} exceeds R/2 = {R / 2}")
    if nested is None:
        nested = NestedProfileMesh(profile_mesh(patch, R, [], numerics), patch)
    tagged, _, K = nested.sub(R)
    return _solve_w0_on(tagged, K, psi, R, numerics.tol)


def compute_m(sol: ProfileSolution) -> tuple[float, float]:
    """``(m_boundary, m_energy)``; the reported value is ``m_energy``."""
    return sol.m_boundary, sol.m_energy


@dataclass(eq=False)
class CoefficientReport:
    patch: Optional[PatchSpec]
    psi: PsiSpec
    R_list: list
    m_values: list
    m_boundary_values: list
    m_extrapolated: float
    C: float
    order: float
    observed_order: Optional[float]
    monotone: bool
    dual_gap: float
    n_vertices: int
    solutions: list = field(default_factory=list, repr=False)
    nested: Optional[NestedProfileMesh] = field(default=None, repr=False)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "patch": None if self.patch is None else self.patch.to_dict(),
            "psi": self.psi.to_dict(),
            "R_list": list(self.R_list),
            "m": list(self.m_values),
            "m_boundary": list(self.m_boundary_values),
            "m_extrapolated": self.m_extrapolated,
            "C": self.C,
            "extrapolation": {
                "assumed_order": self.order,
                "observed_order": self.observed_order,
                "monotone": self.monotone,
            },
            "dual_m_max_relative_gap": self.dual_gap,
            "n_vertices": self.n_vertices,
            "warnings": list(self.warnings),
        }


def richardson(R_list: Sequence[float], values: Sequence[float], order: float) -> float:
    """Extrapolate ``f(R) = f_inf + a R^{-order}`` from the two largest radii."""
    (R1, f1), (R2, f2) = sorted(zip(R_list, values))[-2:]
    q = (R2 / R1) ** order
    return (q * f2 - f1) / (q - 1)


def observed_order(R_list: Sequence[float], values: Sequence[float]) -> Optional[float]:
    """Empirical order from three geometrically spaced radii (None if undefined)."""
    if len(values) < 3:
        return None
    (R1, f1), (R2, f2), (R3, f3) = sorted(zip(R_list, values))[-3:]
    d1, d2 = f1 - f2, f2 - f3
    if d1 == 0 or d2 == 0 or d1 * d2 < 0:
        return None
    return float(np.log(d1 / d2) / np.log(R2 / R1))


def compute_C(patch: PatchSpec, psi: PsiSpec, numerics: Optional[ProfileNumerics] = None,
              nested: Optional[NestedProfileMesh] = None) -> CoefficientReport:
    """``C = -2 m`` with ``m`` extrapolated over the truncation ladder."""
    numerics = numerics or ProfileNumerics()
    a = patch.circumradius()
    R_list = [f * a for f in numerics.R_factors]
    if min(R_list) < 2 * a:
        raise ProfileError("truncation radii must be at least twice the patch circumradius")
    notes = []
    if psi.is_zero():
        notes.append("psi = 0: the profile problem is empty and C = 0")
    if nested is None:
        nested = NestedProfileMesh(profile_mesh(patch, max(R_list), R_list, numerics), patch)
    sols = []
    for R in R_list:
        tagged, _, K = nested.sub(R)
        sols.append(_solve_w0_on(tagged, K, psi, R, numerics.tol))
    m = [s.m_energy for s in sols]
    mb = [s.m_boundary for s in sols]
    k = psi.dim + 2 * psi.gamma - 2
    gaps = [abs(x - y) / max(abs(y), 1e-300) for x, y in zip(mb, m)]
    dual_gap = max(gaps) if not psi.is_zero() else 0.0
    scale = max(1e-300, max(abs(v) for v in m))
    monotone = all(m[i + 1] <= m[i] + 1e-10 * scale for i in range(len(m) - 1))
    if not monotone:
        msg = f"m(R) is not nonincreasing over R={R_list}: {m}"
        notes.append(msg)
        warnings.warn(msg)
    m_ext = richardson(R_list, m, k) if not psi.is_zero() else 0.0
    for n in notes:
        log.warning(n)
    return CoefficientReport(
        patch, psi, R_list, m, mb, m_ext, -2 * m_ext + 0.0, float(k),
        observed_order(R_list, m), monotone, dual_gap, nested.mesh.n_vertices,
        sols, nested, notes,
    )


def scaling_self_test(r: float, psi: PsiSpec, numerics: Optional[ProfileNumerics] = None,
                      base: Optional[CoefficientReport] = None) -> dict:
    """Independent solves for ``B_1'`` and ``B_r'``; compare with ``r^{N+2 gamma-2}``."""
    numerics = numerics or ProfileNumerics()
    base = base or compute_C(PatchSpec.disk(1.0), psi, numerics)
    other = compute_C(PatchSpec.disk(r), psi, numerics)
    k = psi.dim + 2 * psi.gamma - 2
    ratio = other.m_extrapolated / base.m_extrapolated
    return {"r": r, "ratio": ratio, "expected": r ** k,
            "relative_error": abs(ratio - r ** k) / r ** k,
            "m_1": base.m_extrapolated, "m_r": other.m_extrapolated}


# ---------------------------------------------------------------------------
# U_R, Z_R, g_R, chi, flux
# ---------------------------------------------------------------------------
def _psi_nodal(psi: PsiSpec, mesh: Mesh) -> np.ndarray:
    return psi(mesh.vertices)


def polynomial_energy_on_mesh(psi: PsiSpec, mesh: Mesh) -> float:
    """``int |grad psi|^2`` over the meshed (polyhedral) domain, exact for ``gamma <= 2``."""
    lam = _degree2_rule(mesh.dim)
    p = mesh.vertices[mesh.cells]
    pts = np.einsum("qk,ckd->cqd", lam, p).reshape(-1, mesh.dim)
    g2 = (psi.gradient(pts) ** 2).sum(axis=1).reshape(len(p), -1).mean(axis=1)
    return float(np.sum(g2 * mesh.volumes()))


def solve_U_R(R: float, patch: Optional[PatchSpec], psi: PsiSpec,
              nested: NestedProfileMesh, tol: float = PROFILE_TOL) -> Field:
    """Harmonic ``U_R`` on ``B_R^+``: ``psi`` on ``∂B_R^+ \\ Sigma``, natural condition on ``Sigma``."""
    tagged, _, K = nested.sub(R)
    if patch is None or (nested.patch is None):
        tagged = tag_boundary(tagged.mesh, None, 0.0, artificial_outer=True)
    system = apply_constraints(K, None, tagged.constrained_vertices())
    lift = _psi_nodal(psi, tagged.mesh)
    u = solve_linear(system, np.zeros(tagged.mesh.n_vertices), tol=tol, lift=lift)
    return Field(tagged.mesh, u)


def solve_Z_R(R: float, U_values: np.ndarray, nested: NestedProfileMesh,
              tol: float = PROFILE_TOL) -> Field:
    """Harmonic ``Z_R``: zero on the flat disk ``B_R'``, equal to ``U`` on the cap.

    ``U_values`` are nodal values on the big mesh of ``nested``; the cap
    vertices of the sub-ball are vertices of the big mesh, so the data are
    taken without interpolation.
    """
    tagged, vmap, K = nested.sub(R)
    full = tag_boundary(tagged.mesh, None, 0.0, artificial_outer=True)
    system = apply_constraints(K, None, full.constrained_vertices())
    lift = np.asarray(U_values)[vmap]
    lift = np.where(np.abs(tagged.mesh.vertices[:, -1]) <= 1e-12 * R, 0.0, lift)
    z = solve_linear(system, np.zeros(tagged.mesh.n_vertices), tol=tol, lift=lift)
    return Field(tagged.mesh, z)


def energy(f: Field, K=None) -> float:
    K = assemble_stiffness(f.mesh) if K is None else K
    return float(f.values @ (K @ f.values))


def compute_g_R(R: float, patch: Optional[PatchSpec], psi: PsiSpec,
                nested: NestedProfileMesh) -> dict:
    """``g_R = int |grad U_R|^2 - int |grad psi|^2`` over ``B_R^+``.

    The polynomial energy is integrated exactly over the meshed domain, so
    that discretization of the curved boundary cancels; the sphere-moment
    closed form over the exact ball is reported alongside.
    """
    U = solve_U_R(R, patch, psi, nested)
    _, _, K = nested.sub(R)
    eU = energy(U, K)
    e_mesh = polynomial_energy_on_mesh(psi, U.mesh)
    return {"R": R, "g_R": eU - e_mesh, "energy_U_R": eU, "psi_energy_mesh": e_mesh,
            "psi_energy_exact_ball": psi.energy(R), "field": U}


def compute_chi(U: Field, r: float, psi: PsiSpec, locator: Optional[PointLocator] = None,
                n_polar: int = 16, n_azimuth: int = 48) -> float:
    """``chi(r) = int_{S_1^+} U(r theta) Psi(theta) dtheta`` by the half-sphere rule."""
    if locator is None:
        locator = PointLocator(U.mesh)
    extent = float(np.linalg.norm(U.mesh.vertices, axis=1).max())
    if r > extent:
        raise ProfileError(f"r={r} lies outside the mesh (radius {extent})")
    h_loc = _local_size(U.mesh, r)
    if r < 2 * h_loc:
        raise ProfileError(f"r={r} is below twice the local mesh size {h_loc:.3g}")
    nodes, w = half_sphere_rule(U.mesh.dim, n_polar, n_azimuth)
    vals = locator.interpolate(U.values, r * nodes)
    return float(np.sum(w * vals * psi(nodes)))


def chi_closed_form(r: float, psi: PsiSpec, m: float) -> float:
    k = psi.dim + 2 * psi.gamma - 2
    return psi.pi0 * r ** psi.gamma - 2 * m / k * r ** (-psi.dim - psi.gamma + 2)


def flux_closed_form(R: float, psi: PsiSpec, m: float) -> float:
    N, g = psi.dim, psi.gamma
    k = N + 2 * g - 2
    return psi.pi0 * g * R ** k + 2 * (N + g - 2) * m / k


def compute_flux_identity(U: Field, R: float, psi: PsiSpec, m: Optional[float] = None,
                          integrator: Optional[BallIntegrator] = None) -> dict:
    """``int_{S_R^+} psi d_nu U`` through the volume identity ``int_{B_R^+} grad psi . grad U``.

    Green's formula applies because ``U`` is harmonic and ``psi`` vanishes
    on the flat face; the volume form avoids recovering normal derivatives
    of a P1 field on the sphere.  The ``psi`` part of ``U = psi + w`` has the
    closed-form flux ``pi0 gamma R^{N+2gamma-2}``; the perturbation part
    ``w`` is integrated numerically over the clipped ball (band: the cells
    cut by ``S_R``, sub-sampled).
    """
    extent = float(np.linalg.norm(U.mesh.vertices, axis=1).max())
    if R >= extent * (1 - 1e-9):
        raise ProfileError("flux radius must lie strictly inside the solved region")
    integrator = integrator or BallIntegrator(U.mesh)
    w = U.values - psi(U.mesh.vertices)
    N, g = psi.dim, psi.gamma
    k = N + 2 * g - 2
    psi_part = psi.pi0 * g * R ** k
    w_part = integrator.grad_dot(w, psi.gradient, R)
    full_numeric = integrator.grad_dot(U.values, psi.gradient, R)
    out = {"R": R, "flux": psi_part + w_part, "psi_part": psi_part, "w_part": w_part,
           "flux_volume_form_full": full_numeric,
           "band_cells": int(len(integrator.weights(R)[1]))}
    if m is not None:
        target = flux_closed_form(R, psi, m)
        out.update(target=target, relative_error=abs(out["flux"] - target) / abs(target),
                   w_part_target=2 * (N + g - 2) * m / k,
                   w_part_relative_error=abs(w_part - 2 * (N + g - 2) * m / k)
                   / abs(2 * (N + g - 2) * m / k) if m != 0 else None)
    return out


def _local_size(mesh: Mesh, r: float) -> float:
    cen = np.linalg.norm(mesh.centroids(), axis=1)
    diam = mesh.cell_diameters()
    near = np.abs(cen - r) < diam
    return float(np.median(diam[near])) if near.any() else float(diam.max())


def profile_U(report: CoefficientReport) -> Field:
    """``U = psi + w0`` on the largest truncation mesh of a coefficient report."""
    sol = report.solutions[-1]
    mesh = sol.field.mesh
    return Field(mesh, report.psi(mesh.vertices) + sol.field.values)
