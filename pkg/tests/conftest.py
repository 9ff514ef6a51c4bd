"""Shared fixtures; the expensive solves are computed once per session."""
import time

import numpy as np
import pytest
from scipy.optimize import brentq

from vanishing_neumann.geometry.halfball import build_half_ball_mesh
from vanishing_neumann.geometry.mesh import Mesh
from vanishing_neumann.geometry.patch import PatchSpec
from vanishing_neumann.geometry.tagging import tag_boundary
from vanishing_neumann.polynomials import PsiSpec
from vanishing_neumann.profile import compute_C
from vanishing_neumann.spectrum import EigenMeshParams, build_patch_mesh, compute_dirichlet_eigs

# first positive root of tan x = x, i.e. of the spherical Bessel function j_1
J11 = brentq(lambda x: np.tan(x) - x, 4.0, 4.6)
LAMBDA1 = J11 ** 2
PENNY_M = -2.0 / 3.0

# wall time of the session fixtures, reported by the acceptance suite
TIMINGS: dict = {}


def _timed(name, fn):
    t0 = time.perf_counter()
    out = fn()
    TIMINGS[name] = time.perf_counter() - t0
    return out


def half_ball_phi1_coefficient(k: float = J11) -> float:
    """``d phi_1 / d x_N`` at 0 for the L2-normalized first half-ball eigenfunction.

    ``phi_1 = A j_1(k r) cos(theta)`` with ``A^2 (2 pi / 3) int_0^1 j_1(k r)^2 r^2 dr = 1``;
    the radial integral equals ``j_0(k)^2 / 2`` because ``j_1(k) = 0``.  Near 0,
    ``j_1(k r) ~ k r / 3``.
    """
    j0 = np.sin(k) / k
    A = np.sqrt(3.0 / (np.pi * j0 ** 2))
    return A * k / 3.0


def kuhn_cube(n: int) -> Mesh:
    """Structured Kuhn tetrahedralization of the unit cube with ``n`` cells per side."""
    g = np.linspace(0.0, 1.0, n + 1)
    X, Y, Z = np.meshgrid(g, g, g, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    idx = np.arange((n + 1) ** 3).reshape(n + 1, n + 1, n + 1)
    i, j, k = np.meshgrid(np.arange(n), np.arange(n), np.arange(n), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    cells = []
    from itertools import permutations

    for perm in permutations(range(3)):
        pos = [i.copy(), j.copy(), k.copy()]
        path = [idx[pos[0], pos[1], pos[2]]]
        for axis in perm:
            pos[axis] = pos[axis] + 1
            path.append(idx[pos[0], pos[1], pos[2]])
        cells.append(np.stack(path, axis=1))
    cells = np.concatenate(cells)
    vol = np.linalg.det(pts[cells[:, 1:]] - pts[cells[:, :1]])
    flip = vol < 0
    cells[flip, 0], cells[flip, 1] = cells[flip, 1].copy(), cells[flip, 0].copy()
    return Mesh(pts, cells)


@pytest.fixture(scope="session")
def coarse_half_ball():
    return build_half_ball_mesh(1.0, 0.15)


@pytest.fixture(scope="session")
def coarse_dirichlet(coarse_half_ball):
    return compute_dirichlet_eigs(tag_boundary(coarse_half_ball, None, 0.0), 3)


@pytest.fixture(scope="session")
def graded_phi():
    """First and second Dirichlet modes on a mesh refined to h = 0.01 near 0."""
    mesh = build_patch_mesh(1.0, None, 0.0, EigenMeshParams(h_far=0.12, h_origin=0.01))
    return compute_dirichlet_eigs(tag_boundary(mesh, None, 0.0), 3)


@pytest.fixture(scope="session")
def disk_report():
    return _timed("disk_report", lambda: compute_C(PatchSpec.disk(1.0), PsiSpec.linear()))


@pytest.fixture(scope="session")
def disk_sweep():
    from vanishing_neumann.harness import SweepConfig, run_epsilon_sweep

    # keep the fields at eps = 0.2, 0.15, 0.1 for the blow-up ratios
    return _timed("disk_sweep", lambda: run_epsilon_sweep(SweepConfig(keep_fields=3)))


@pytest.fixture(scope="session")
def square_sweep():
    from vanishing_neumann.harness import SweepConfig, run_epsilon_sweep

    cfg = SweepConfig(patch=PatchSpec.square(1.0), epsilons=(0.3, 0.2, 0.15, 0.1))
    return _timed("square_sweep", lambda: run_epsilon_sweep(cfg))
