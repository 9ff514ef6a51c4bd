"""Constrained linear solves and the sparse generalized eigensolver.

Dirichlet conditions are imposed by elimination: the reduced system lives on
the free vertices only, so every discrete space is a coordinate subspace of
the full P1 space.  Nesting of these subspaces is what makes the discrete
eigenvalue inequalities between taggings exact on a shared mesh.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pyamg
import scipy.sparse as sp
import scipy.sparse.linalg as sla

from ..geometry.mesh import Mesh

log = logging.getLogger(__name__)

LINEAR_TOL = 1e-10
EIGEN_TOL = 1e-8
# below this many unknowns a sparse LU factorization is faster than AMG-PCG
DIRECT_LIMIT = 20_000
SEED = 20240601


class SolverError(RuntimeError):
    """Numerical failure of a linear or eigen solve."""


class ClusteredEigenvalueWarning(UserWarning):
    """Two returned eigenvalues are closer than the clustering threshold."""


@dataclass(frozen=True, eq=False)
class Field:
    """Nodal P1 values on a mesh."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != (self.mesh.n_vertices,):
            raise ValueError(
                f"field has {v.shape} values for a mesh with {self.mesh.n_vertices} vertices"
            )
        object.__setattr__(self, "values", v)

    def __mul__(self, s: float) -> "Field":
        return Field(self.mesh, s * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class EigenPair:
    value: float
    field: Field
    residual: float


@dataclass(eq=False)
class ConstrainedSystem:
    """Stiffness and mass restricted to the free vertices."""

    K: sp.csr_matrix
    M: Optional[sp.csr_matrix]
    free: np.ndarray
    constrained: np.ndarray
    n_vertices: int
    K_full: sp.csr_matrix = field(repr=False)
    _amg: object = field(default=None, repr=False)
    _lu: object = field(default=None, repr=False)

    @property
    def n_free(self) -> int:
        return len(self.free)

    def expand(self, reduced: np.ndarray, lift: Optional[np.ndarray] = None) -> np.ndarray:
        """Full nodal vector from free values (constrained entries from ``lift``)."""
        full = np.zeros(self.n_vertices) if lift is None else np.array(lift, dtype=float)
        full[self.free] = reduced
        return full

    def restrict(self, full: np.ndarray) -> np.ndarray:
        return np.asarray(full)[self.free]

    def inverse(self, tol: float = 1e-12):
        """Callable applying ``K^{-1}`` (direct or AMG-preconditioned CG)."""
        if self.n_free <= DIRECT_LIMIT:
            if self._lu is None:
                self._lu = sla.splu(self.K.tocsc(), permc_spec="MMD_AT_PLUS_A")
            return self._lu.solve
        if self._amg is None:
            self._amg = pyamg.smoothed_aggregation_solver(self.K, symmetry="symmetric")
        ml = self._amg

        def apply(b):
            return ml.solve(b, tol=tol, accel="cg", maxiter=1000)
        return apply


def apply_constraints(
    K: sp.spmatrix, M: Optional[sp.spmatrix], constrained: Sequence[int]
) -> ConstrainedSystem:
    """Eliminate the constrained vertices from ``K`` (and ``M``)."""
    n = K.shape[0]
    constrained = np.unique(np.asarray(constrained, dtype=np.int64))
    if constrained.size and (constrained.min() < 0 or constrained.max() >= n):
        raise ValueError("constrained vertex index out of range")
    mask = np.ones(n, dtype=bool)
    mask[constrained] = False
    free = np.flatnonzero(mask)
    if len(free) == 0:
        raise SolverError("no free vertices left after applying the constraints")
    K = sp.csr_matrix(K)
    Kf = K[free][:, free].tocsr()
    Mf = None if M is None else sp.csr_matrix(M)[free][:, free].tocsr()
    return ConstrainedSystem(Kf, Mf, free, constrained, n, K)


def solve_linear(
    system: ConstrainedSystem,
    rhs: np.ndarray,
    tol: float = LINEAR_TOL,
    lift: Optional[np.ndarray] = None,
    maxiter: int = 2000,
) -> np.ndarray:
    """Solve ``K u = rhs`` on the free vertices.

    ``rhs`` is a full-length load vector.  When ``lift`` is given its values
    on the constrained vertices are the Dirichlet data, and the load is
    corrected by ``-K_{fc} lift_c``.  Returns the full nodal vector.
    """
    rhs = np.asarray(rhs, dtype=float)
    if rhs.shape != (system.n_vertices,):
        raise ValueError("rhs must be a full-length nodal vector")
    b = rhs[system.free].copy()
    if lift is not None:
        g = np.zeros(system.n_vertices)
        g[system.constrained] = np.asarray(lift, dtype=float)[system.constrained]
        b -= (system.K_full @ g)[system.free]
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return system.expand(np.zeros(system.n_free), lift)
    if system.n_free <= DIRECT_LIMIT:
        x = system.inverse()(b)
    else:
        if system._amg is None:
            system._amg = pyamg.smoothed_aggregation_solver(system.K, symmetry="symmetric")
        res: list = []
        x = system._amg.solve(
            b, tol=0.1 * tol, accel="cg", maxiter=maxiter, residuals=res
        )
    rel = np.linalg.norm(system.K @ x - b) / bnorm
    if not rel <= tol:
        raise SolverError(f"linear solve reached relative residual {rel:.3e} > {tol:.1e}")
    return system.expand(x, lift)


def _residual(K, M, lam, u):
    Mu = M @ u
    return float(np.linalg.norm(K @ u - lam * Mu) / np.linalg.norm(Mu))


def solve_generalized_eig(
    system: ConstrainedSystem,
    count: int = 1,
    shift: float = 0.0,
    tol: float = EIGEN_TOL,
    cluster_tol: float = 1e-8,
    mesh: Optional[Mesh] = None,
) -> list[EigenPair]:
    """The ``count`` eigenpairs of ``K u = lambda M u`` closest above ``shift``.

    Shift-invert implicitly restarted Lanczos (ARPACK); inner solves are a
    sparse LU factorization on small systems and AMG-preconditioned CG
    otherwise.  Vectors are M-orthonormalized and expanded to full nodal
    vectors (zero on the constrained vertices).
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if system.M is None:
        raise ValueError("system has no mass matrix")
    K, M = system.K, system.M
    n = system.n_free
    if count >= n - 1:
        # tiny problems: dense solve
        w, v = _dense_eig(K, M)
        w, v = w[:count], v[:, :count]
    else:
        if shift == 0.0:
            op = sla.LinearOperator(K.shape, matvec=system.inverse(tol=1e-13), dtype=float)
            sigma_kw = dict(sigma=0.0, OPinv=op)
        else:
            sigma_kw = dict(sigma=shift)
        ncv = min(n, max(2 * count + 1, 20))
        # fixed start vector so repeated runs give identical output
        v0 = np.random.default_rng(SEED).standard_normal(n)
        try:
            w, v = sla.eigsh(K, k=count, M=M, which="LM", ncv=ncv, tol=tol * 1e-3, v0=v0,
                             **sigma_kw)
        except sla.ArpackError as exc:  # pragma: no cover - depends on ARPACK internals
            raise SolverError(f"Lanczos breakdown: {exc}") from exc
        order = np.argsort(w)
        w, v = w[order], v[:, order]
    # M-orthonormalize (Cholesky of the small Gram matrix)
    G = v.T @ (M @ v)
    L = np.linalg.cholesky(0.5 * (G + G.T))
    v = np.linalg.solve(L, v.T).T
    pairs = []
    for i in range(len(w)):
        u = v[:, i]
        lam = float(u @ (K @ u))  # Rayleigh quotient with uᵀMu = 1
        r = _residual(K, M, lam, u)
        if r > tol:
            raise SolverError(f"eigenpair {i} residual {r:.3e} exceeds tolerance {tol:.1e}")
        if lam <= 0:
            raise SolverError(f"nonpositive eigenvalue {lam}")
        full = system.expand(u)
        pairs.append(EigenPair(lam, Field(mesh, full) if mesh is not None else full, r))
    vals = np.array([p.value for p in pairs])
    gaps = np.diff(vals) / vals[1:] if len(vals) > 1 else np.array([])
    if np.any(gaps < cluster_tol):
        i = int(np.argmin(gaps))
        warnings.warn(
            f"eigenvalues {i} and {i + 1} are clustered (relative gap {gaps[i]:.1e})",
            ClusteredEigenvalueWarning,
            stacklevel=2,
        )
    return pairs


def _dense_eig(K, M):
    import scipy.linalg as la

    return la.eigh(K.toarray(), M.toarray())


def rayleigh_quotient(u, K: sp.spmatrix, M: sp.spmatrix) -> float:
    """``(u^T K u) / (u^T M u)`` for a nodal vector or :class:`Field`."""
    u = u.values if isinstance(u, Field) else np.asarray(u, dtype=float)
    den = float(u @ (M @ u))
    if not den > 0:
        raise ValueError("field has zero M-norm")
    return float(u @ (K @ u)) / den


def align_sign(u: np.ndarray, reference: np.ndarray, M: sp.spmatrix) -> tuple[np.ndarray, float]:
    """Flip ``u`` so that ``u^T M reference >= 0``; returns (u, overlap)."""
    ov = float(u @ (M @ reference))
    if ov < 0:
        return -u, -ov
    return u, ov
