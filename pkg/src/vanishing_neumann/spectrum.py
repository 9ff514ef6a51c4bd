"""Limit (Dirichlet) and perturbed (mixed) eigenproblems and the blow-up data at 0."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .fem.assembly import assemble_mass, assemble_stiffness
from .fem.solvers import (
    EIGEN_TOL,
    EigenPair,
    Field,
    align_sign,
    apply_constraints,
    solve_generalized_eig,
)
from .frequency import FrequencyContext, FrequencySeries, frequency_series
from .geometry.halfball import build_half_ball_mesh
from .geometry.mesh import Mesh
from .geometry.patch import PatchSpec, rim_distance
from .geometry.tagging import NEUMANN, TaggedMesh
from .polynomials import PsiSpec, evaluate, harmonic_odd_basis, odd_monomials

log = logging.getLogger(__name__)

SIMPLICITY_GAP = 1e-3
MAX_CONDITION = 1e10


class SpectrumError(RuntimeError):
    pass


@dataclass(eq=False)
class SpectrumResult:
    epsilon: float
    pairs: list
    fingerprint: str
    tagged: Optional[TaggedMesh] = field(default=None, repr=False)

    @property
    def values(self) -> np.ndarray:
        return np.array([p.value for p in self.pairs])

    def to_dict(self) -> dict:
        return {"epsilon": self.epsilon, "eigenvalues": self.values.tolist(),
                "residuals": [p.residual for p in self.pairs], "mesh": self.fingerprint}


class MatrixCache:
    """Stiffness and mass of a mesh, assembled once and shared by taggings."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self._K = self._M = None

    @property
    def K(self) -> sp.csr_matrix:
        if self._K is None:
            self._K = assemble_stiffness(self.mesh)
        return self._K

    @property
    def M(self) -> sp.csr_matrix:
        if self._M is None:
            self._M = assemble_mass(self.mesh)
        return self._M


_CACHE: dict = {}


def matrices(mesh: Mesh) -> MatrixCache:
    c = _CACHE.get(id(mesh))
    if c is None or c.mesh is not mesh:
        if len(_CACHE) > 4:
            _CACHE.clear()
        c = _CACHE[id(mesh)] = MatrixCache(mesh)
    return c


def _solve(tagged: TaggedMesh, count: int, tol: float) -> list:
    mc = matrices(tagged.mesh)
    system = apply_constraints(mc.K, mc.M, tagged.constrained_vertices())
    return solve_generalized_eig(system, count, tol=tol, mesh=tagged.mesh)


def _orient(pairs, M, reference: Optional[Sequence] = None) -> list:
    """Sign convention: overlap with the reference field >= 0, else nonnegative mean."""
    out = []
    for i, p in enumerate(pairs):
        u = p.field.values
        if reference is not None and i < len(reference):
            ref = reference[i].field.values if isinstance(reference[i], EigenPair) else reference[i]
            u, _ = align_sign(u, np.asarray(ref), M)
        elif u @ (M @ np.ones_like(u)) < 0:
            u = -u
        out.append(EigenPair(p.value, Field(p.field.mesh, u), p.residual))
    return out


def compute_dirichlet_eigs(tagged: TaggedMesh, count: int = 1, tol: float = EIGEN_TOL) -> SpectrumResult:
    """Limit eigenpairs: Dirichlet on the whole boundary (requires no Neumann facets)."""
    if np.any(tagged.facet_tags == NEUMANN):
        raise SpectrumError("compute_dirichlet_eigs expects an epsilon = 0 tagging")
    pairs = _orient(_solve(tagged, count, tol), matrices(tagged.mesh).M)
    return SpectrumResult(0.0, pairs, tagged.mesh.fingerprint(), tagged)


def compute_mixed_eigs(tagged: TaggedMesh, count: int = 1, reference: Optional[Sequence] = None,
                       tol: float = EIGEN_TOL) -> SpectrumResult:
    """Perturbed eigenpairs, oriented so that ``int phi^eps phi >= 0`` against ``reference``."""
    pairs = _orient(_solve(tagged, count, tol), matrices(tagged.mesh).M, reference)
    return SpectrumResult(float(tagged.epsilon), pairs, tagged.mesh.fingerprint(), tagged)


def check_simplicity(values: Sequence[float], n0: int, rel: float = SIMPLICITY_GAP) -> float:
    """Relative gap of ``lambda_{n0}`` to its neighbours; raises below ``rel``."""
    v = np.asarray(values, dtype=float)
    i = n0 - 1
    if i < 0 or i >= len(v):
        raise SpectrumError(f"n0={n0} outside the computed spectrum (count {len(v)})")
    gaps = []
    if i > 0:
        gaps.append(v[i] - v[i - 1])
    if i + 1 < len(v):
        gaps.append(v[i + 1] - v[i])
    if not gaps:
        raise SpectrumError("need at least one neighbouring eigenvalue to check simplicity")
    g = min(gaps) / v[i]
    if g < rel:
        raise SpectrumError(
            f"lambda_{n0} = {v[i]:.6g} is not simple at the discrete level "
            f"(relative gap {g:.2e} < {rel:.0e})"
        )
    return float(g)


# ---------------------------------------------------------------------------
# blow-up data
# ---------------------------------------------------------------------------
@dataclass
class VanishingOrder:
    gamma_hat: float
    gamma: int
    series: FrequencySeries


def estimate_vanishing_order(phi: Field, lam: float, radii: Sequence[float],
                             ctx: Optional[FrequencyContext] = None) -> VanishingOrder:
    """``gamma_hat = N(v, r_min, lam)`` of the even reflection, plus the full series.

    The rounded order is the nearest positive integer; the raw value is logged.
    """
    radii = sorted(radii)
    series = frequency_series(phi, lam, radii, ctx)
    g = float(series.N[0])
    gi = max(1, int(round(g)))
    log.info("vanishing order estimate %.4f -> %d (series %s)", g, gi, np.round(series.N, 4))
    return VanishingOrder(g, gi, series)


@dataclass
class PsiFit:
    psi: PsiSpec
    condition: float
    n_points: int
    residual: float


def extract_psi(phi: Field, gamma: int, fit_radius: float, nuisance_degrees: int = 2,
                check_resolution: bool = True) -> PsiFit:
    """Least-squares fit of ``phi / |x|^gamma`` on the vertices of ``B_fit^+``.

    The model is the degree-``gamma`` harmonic basis vanishing on the flat
    face plus nuisance monomials of degrees ``gamma+1 .. gamma+nuisance_degrees``
    that are odd in ``x_N`` (they absorb the next terms of the expansion and
    are discarded).  Only the harmonic coefficients are returned.
    """
    mesh = phi.mesh
    x = mesh.vertices
    r = np.linalg.norm(x, axis=1)
    sel = (r < fit_radius) & (x[:, -1] > 1e-12 * max(1.0, fit_radius))
    if check_resolution:
        cen = np.linalg.norm(mesh.centroids(), axis=1)
        h = float(mesh.cell_diameters()[cen < fit_radius].max()) if np.any(cen < fit_radius) else np.inf
        if fit_radius < 6 * h:
            raise SpectrumError(f"fit radius {fit_radius} is below 6 local mesh sizes (h={h:.3g})")
    basis = harmonic_odd_basis(mesh.dim, gamma)
    cols = [evaluate(b, x[sel]) for b in basis]
    for k in range(1, nuisance_degrees + 1):
        cols += [evaluate({a: 1.0}, x[sel]) for a in odd_monomials(mesh.dim, gamma + k)]
    A = np.stack(cols, axis=1)
    w = r[sel] ** (-gamma)
    Aw = A * w[:, None]
    bw = phi.values[sel] * w
    if len(bw) < A.shape[1]:
        raise SpectrumError(f"only {len(bw)} vertices in the fit ball for {A.shape[1]} unknowns")
    # column scaling keeps the condition estimate meaningful across degrees
    scale = np.linalg.norm(Aw, axis=0)
    scale[scale == 0] = 1
    sv = np.linalg.svd(Aw / scale, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    if not cond < MAX_CONDITION:
        raise SpectrumError(f"ill-conditioned psi fit (condition estimate {cond:.3e})")
    coef, *_ = np.linalg.lstsq(Aw / scale, bw, rcond=None)
    coef = coef / scale
    res = float(np.linalg.norm(Aw @ coef - bw) / max(np.linalg.norm(bw), 1e-300))
    psi = PsiSpec(gamma, tuple(coef[: len(basis)]), mesh.dim)
    return PsiFit(psi, cond, int(len(bw)), res)


# ---------------------------------------------------------------------------
# meshes for the eigenproblems
# ---------------------------------------------------------------------------
@dataclass(frozen=True)
class EigenMeshParams:
    """Mesh sizes for a half ball carrying the patch ``eps V``.

    Near the rim the size is ``eps * diam(V) / rim_resolution`` growing with
    slope ``slope``; inside ``B_{1.5 eps R_V}`` it is at most ``eps/6 * diam(V)/2``;
    elsewhere at most ``h_far``.  ``h_origin`` optionally caps the size near 0.
    """

    h_far: float = 0.12
    rim_resolution: float = 40.0
    slope: float = 0.3
    near_patch: float = 6.0
    h_origin: Optional[float] = None
    origin_reach: float = 0.1


def build_patch_mesh(radius: float, patch: Optional[PatchSpec], epsilon: float,
                     params: EigenMeshParams = EigenMeshParams()) -> Mesh:
    """Half-ball mesh graded toward the rim of ``epsilon * V``."""
    levels = []
    if patch is not None and epsilon > 0:
        size_v = 0.5 * patch.diameter()
        h_rim = epsilon * 2 * size_v / params.rim_resolution
        h_in = epsilon * size_v / params.near_patch
        reach = 1.5 * epsilon * patch.circumradius()
        if patch.kind == "disk":
            levels.append(epsilon * patch.radius)
    h_far = params.h_far

    def size(x):
        s = np.full(len(x), h_far)
        r = np.linalg.norm(x, axis=1)
        if patch is not None and epsilon > 0:
            s = np.minimum(s, h_rim + params.slope * rim_distance(patch, x, epsilon))
            s = np.where(r < reach, np.minimum(s, h_in), s)
        if params.h_origin is not None:
            s = np.minimum(s, params.h_origin + params.slope * np.maximum(0, r - params.origin_reach))
        return s

    return build_half_ball_mesh(radius, h_far, levels=levels, size_fn=size)
