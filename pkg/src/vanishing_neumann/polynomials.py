"""Homogeneous harmonic polynomials vanishing on the flat face.

A polynomial is stored as a mapping from exponent tuples to coefficients.
The degree-``gamma`` basis of harmonic polynomials odd in ``x_N`` is computed
exactly (rational arithmetic) as the null space of the Laplacian acting on
the odd monomials, so ``x_N`` for ``gamma = 1`` and ``x_1 x_N, x_2 x_N`` for
``gamma = 2`` in three dimensions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from math import gamma as gamma_fn
from typing import Sequence

import numpy as np
import sympy

Poly = dict  # {exponent tuple: coefficient}


def monomials(dim: int, degree: int) -> list[tuple]:
    out = [a for a in product(range(degree + 1), repeat=dim) if sum(a) == degree]
    return sorted(out, reverse=True)


def odd_monomials(dim: int, degree: int) -> list[tuple]:
    """Monomials of the given degree with odd power of the last variable."""
    return [a for a in monomials(dim, degree) if a[-1] % 2 == 1]


def laplacian(p: Poly) -> Poly:
    out: dict = {}
    for a, c in p.items():
        for i, ai in enumerate(a):
            if ai >= 2:
                b = list(a)
                b[i] -= 2
                out[tuple(b)] = out.get(tuple(b), 0) + c * ai * (ai - 1)
    return {k: v for k, v in out.items() if v != 0}


def derivative(p: Poly, i: int) -> Poly:
    out: dict = {}
    for a, c in p.items():
        if a[i] > 0:
            b = list(a)
            b[i] -= 1
            out[tuple(b)] = out.get(tuple(b), 0) + c * a[i]
    return out


def multiply(p: Poly, q: Poly) -> Poly:
    out: dict = {}
    for a, c in p.items():
        for b, d in q.items():
            k = tuple(x + y for x, y in zip(a, b))
            out[k] = out.get(k, 0) + c * d
    return out


def evaluate(p: Poly, x: np.ndarray) -> np.ndarray:
    x = np.atleast_2d(x)
    out = np.zeros(len(x))
    for a, c in p.items():
        out += c * np.prod(x ** np.array(a), axis=1)
    return out


@lru_cache(maxsize=32)
def harmonic_odd_basis(dim: int, degree: int) -> tuple:
    """Exact basis of degree-``degree`` harmonics odd in ``x_N`` (tuple of Poly)."""
    if degree < 1:
        raise ValueError("degree must be >= 1")
    mons = odd_monomials(dim, degree)
    targets = monomials(dim, degree - 2) if degree >= 2 else []
    row = {t: i for i, t in enumerate(targets)}
    if not mons:
        return ()
    A = sympy.zeros(max(1, len(targets)), len(mons))
    for j, a in enumerate(mons):
        for b, c in laplacian({a: 1}).items():
            A[row[b], j] += c
    basis = []
    for vec in A.nullspace():
        # scale to integer coefficients with the leading entry positive
        den = sympy.ilcm(1, *[sympy.fraction(v)[1] for v in vec])
        vec = vec * den
        g = sympy.igcd(0, *[int(v) for v in vec if v != 0])
        vec = vec / g
        lead = next(v for v in vec if v != 0)
        if lead < 0:
            vec = -vec
        basis.append({mons[j]: int(vec[j]) for j in range(len(mons)) if vec[j] != 0})
    basis.sort(key=lambda p: sorted(p.keys(), reverse=True), reverse=True)
    return tuple(basis)


def sphere_moment(alpha: Sequence[int]) -> float:
    """``int_{S^{N-1}} x^alpha dS`` over the whole unit sphere."""
    if any(a % 2 for a in alpha):
        return 0.0
    b = [(a + 1) / 2 for a in alpha]
    return 2.0 * np.prod([gamma_fn(t) for t in b]) / gamma_fn(sum(b))


def half_sphere_integral(p: Poly) -> float:
    """``int_{S_1^+} p`` for ``p`` even in ``x_N`` (half of the full-sphere integral)."""
    if any(a[-1] % 2 for a, c in p.items() if c != 0):
        raise ValueError("half-sphere moments are only closed-form for even-in-x_N integrands")
    return 0.5 * sum(float(c) * sphere_moment(a) for a, c in p.items())


@dataclass(frozen=True)
class PsiSpec:
    """Blow-up polynomial ``psi = sum_j coefficients[j] * basis_j``.

    ``basis_j`` is :func:`harmonic_odd_basis` for ``(dim, gamma)``.  For
    ``gamma = 1`` the basis is ``x_N`` alone, so ``psi = c x_N``.
    """

    gamma: int
    coefficients: tuple
    dim: int = 3
    poly: dict = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.gamma < 1:
            raise ValueError("gamma must be a positive integer")
        basis = harmonic_odd_basis(self.dim, self.gamma)
        coef = tuple(float(c) for c in self.coefficients)
        if len(coef) != len(basis):
            raise ValueError(f"expected {len(basis)} coefficients for gamma={self.gamma}")
        object.__setattr__(self, "coefficients", coef)
        p: dict = {}
        for c, b in zip(coef, basis):
            for a, v in b.items():
                p[a] = p.get(a, 0.0) + c * v
        object.__setattr__(self, "poly", {a: v for a, v in p.items() if v != 0})

    # constructors -------------------------------------------------------
    @classmethod
    def linear(cls, c: float = 1.0, dim: int = 3) -> "PsiSpec":
        return cls(1, (c,), dim)

    @classmethod
    def zero(cls, gamma: int = 1, dim: int = 3) -> "PsiSpec":
        return cls(gamma, (0.0,) * len(harmonic_odd_basis(dim, gamma)), dim)

    @property
    def basis(self) -> tuple:
        return harmonic_odd_basis(self.dim, self.gamma)

    def scaled(self, s: float) -> "PsiSpec":
        return PsiSpec(self.gamma, tuple(s * c for c in self.coefficients), self.dim)

    def is_zero(self) -> bool:
        return not any(self.coefficients)

    # evaluation ---------------------------------------------------------
    def __call__(self, x: np.ndarray) -> np.ndarray:
        return evaluate(self.poly, x)

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return np.stack([evaluate(derivative(self.poly, i), x) for i in range(self.dim)], axis=1)

    def normal_derivative(self, x: np.ndarray) -> np.ndarray:
        """``d psi / d nu`` on the flat face with outer normal ``nu = -e_N``."""
        return -evaluate(derivative(self.poly, self.dim - 1), x)

    def laplacian_poly(self) -> Poly:
        return laplacian(self.poly)

    # closed-form integrals ---------------------------------------------
    @property
    def pi0(self) -> float:
        """``int_{S_1^+} psi^2``."""
        return half_sphere_integral(multiply(self.poly, self.poly))

    def gradient_sphere_integral(self) -> float:
        """``int_{S_1^+} |grad psi|^2``."""
        tot = 0.0
        for i in range(self.dim):
            d = derivative(self.poly, i)
            tot += half_sphere_integral(multiply(d, d))
        return tot

    def energy(self, R: float) -> float:
        """``int_{B_R^+} |grad psi|^2`` from homogeneity and sphere moments."""
        k = self.dim + 2 * self.gamma - 2
        return self.gradient_sphere_integral() * R ** k / k

    def l2_ball(self, R: float) -> float:
        """``int_{B_R^+} psi^2``."""
        k = self.dim + 2 * self.gamma
        return self.pi0 * R ** k / k

    def to_dict(self) -> dict:
        return {
            "gamma": self.gamma,
            "dim": self.dim,
            "coefficients": list(self.coefficients),
            "basis": [{"x^" + "".join(map(str, a)): v for a, v in b.items()} for b in self.basis],
            "pi0": self.pi0,
        }
