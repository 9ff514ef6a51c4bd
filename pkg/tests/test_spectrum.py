import numpy as np
import pytest

from conftest import LAMBDA1, half_ball_phi1_coefficient
from vanishing_neumann.fem.solvers import Field
from vanishing_neumann.geometry.halfball import build_half_ball_mesh
from vanishing_neumann.geometry.patch import PatchSpec
from vanishing_neumann.geometry.tagging import tag_boundary, whole_flat_face
from vanishing_neumann.polynomials import PsiSpec
from vanishing_neumann.spectrum import (
    SpectrumError,
    build_patch_mesh,
    check_simplicity,
    compute_dirichlet_eigs,
    compute_mixed_eigs,
    estimate_vanishing_order,
    extract_psi,
)


def test_dirichlet_half_ball(coarse_dirichlet):
    lam = coarse_dirichlet.values
    assert abs(lam[0] - LAMBDA1) / LAMBDA1 < 0.02
    assert lam[1] - lam[0] > 0.5
    assert check_simplicity(lam, 1) > 1e-3


def test_dirichlet_radius_two():
    mesh = build_half_ball_mesh(2.0, 0.3)
    lam = compute_dirichlet_eigs(tag_boundary(mesh, None, 0.0), 1).values[0]
    assert abs(lam - LAMBDA1 / 4) / (LAMBDA1 / 4) < 0.02


def test_dirichlet_rejects_patch(coarse_half_ball):
    with pytest.raises(SpectrumError):
        compute_dirichlet_eigs(whole_flat_face(coarse_half_ball), 1)


def test_full_face_neumann(coarse_half_ball):
    lam = compute_mixed_eigs(whole_flat_face(coarse_half_ball), 1).values[0]
    assert abs(lam - np.pi ** 2) / np.pi ** 2 < 0.02


def test_simplicity_refusal():
    with pytest.raises(SpectrumError):
        check_simplicity([20.0, 33.0, 33.0 + 1e-6], 2)
    with pytest.raises(SpectrumError):
        check_simplicity([20.0], 1)


@pytest.fixture(scope="module")
def shared_mesh():
    return build_patch_mesh(1.0, PatchSpec.disk(1.0), 0.1)


def test_nested_space_inequality_all_modes(shared_mesh):
    D = compute_dirichlet_eigs(tag_boundary(shared_mesh, None, 0.0), 3)
    for eps in (0.1, 0.2, 0.4):
        X = compute_mixed_eigs(tag_boundary(shared_mesh, PatchSpec.disk(1.0), eps), 3)
        assert np.all(X.values <= D.values * (1 + 1e-12))
    X = compute_mixed_eigs(tag_boundary(shared_mesh, PatchSpec.disk(1.0), 0.2), 1)
    assert X.values[0] < D.values[0]


def test_epsilon_monotone_on_one_mesh(shared_mesh):
    vals = [compute_mixed_eigs(tag_boundary(shared_mesh, PatchSpec.square(0.7), e), 2).values
            for e in (0.1, 0.2, 0.4)]
    for a, b in zip(vals, vals[1:]):
        assert np.all(b <= a * (1 + 1e-12))


def test_sign_convention_and_h1_convergence(shared_mesh):
    D = compute_dirichlet_eigs(tag_boundary(shared_mesh, None, 0.0), 1)
    phi = D.pairs[0].field.values
    from vanishing_neumann.spectrum import matrices

    K, M = matrices(shared_mesh).K, matrices(shared_mesh).M
    dist = []
    for eps in (0.4, 0.2, 0.1):
        X = compute_mixed_eigs(tag_boundary(shared_mesh, PatchSpec.disk(1.0), eps), 1,
                               reference=D.pairs)
        u = X.pairs[0].field.values
        assert u @ (M @ phi) >= 0
        e = u - phi
        dist.append(np.sqrt(e @ (K @ e) + e @ (M @ e)))
    assert dist[0] > dist[1] > dist[2]


def test_vanishing_order_phi1(graded_phi):
    p = graded_phi.pairs[0]
    vo = estimate_vanishing_order(p.field, p.value, [0.05, 0.1, 0.2])
    assert 0.9 <= vo.gamma_hat <= 1.1
    assert vo.gamma == 1


def test_vanishing_order_second_mode(graded_phi):
    # lambda_2 = lambda_3: any combination is a degree-2 blow-up (c1 x1 + c2 x2) x_N
    p = graded_phi.pairs[1]
    vo = estimate_vanishing_order(p.field, p.value, [0.05, 0.1, 0.2])
    assert 1.8 <= vo.gamma_hat <= 2.2
    assert vo.gamma == 2


@pytest.mark.parametrize("k,poly", [(1, lambda x: x[:, 2]), (2, lambda x: x[:, 0] * x[:, 2]),
                                    (3, lambda x: x[:, 2] * (2 * x[:, 2] ** 2 - 3 * x[:, 0] ** 2
                                                             - 3 * x[:, 1] ** 2))])
def test_vanishing_order_homogeneous(graded_phi, k, poly):
    mesh = graded_phi.pairs[0].field.mesh
    v = Field(mesh, poly(mesh.vertices))
    # a cubic needs more than 5 cells per radius for P1 interpolation to stay
    # within 0.05 (N(0.05) = 3.059 on this mesh), so its radii start at 0.1
    radii = [0.05, 0.1, 0.3] if k < 3 else [0.1, 0.2, 0.3]
    vo = estimate_vanishing_order(v, 0.0, radii)
    assert abs(vo.gamma_hat - k) <= (0.02 if k == 1 else 0.05)
    assert np.all(np.abs(vo.series.N - k) <= 0.05)


def test_extract_psi_phi1(graded_phi):
    fit = extract_psi(graded_phi.pairs[0].field, 1, 0.1)
    c = half_ball_phi1_coefficient()
    assert abs(fit.psi.coefficients[0] - c) / c < 0.03


def test_extract_psi_synthetic(graded_phi):
    mesh = graded_phi.pairs[0].field.mesh
    x = mesh.vertices
    f = 3 * x[:, 2] + 0.7 * x[:, 2] * x[:, 0] ** 2 - 0.2 * x[:, 2] ** 3
    fit = extract_psi(Field(mesh, f), 1, 0.1)
    assert fit.psi.coefficients[0] == pytest.approx(3.0, rel=0.01)
    assert fit.psi.pi0 == pytest.approx(6 * np.pi, rel=0.01)
    exact2 = extract_psi(Field(mesh, x[:, 0] * x[:, 2]), 2, 0.1)
    assert exact2.psi.coefficients[0] == pytest.approx(1.0, abs=1e-6)
    assert exact2.psi.coefficients[1] == pytest.approx(0.0, abs=1e-6)


def test_extract_psi_with_noise(graded_phi):
    mesh = graded_phi.pairs[0].field.mesh
    x = mesh.vertices
    psi = PsiSpec(2, (1.5, -0.5))
    rng = np.random.default_rng(3)
    r = np.linalg.norm(x, axis=1)
    noise = 1e-3 * r ** 2 * rng.standard_normal(len(r))  # relative size 1e-3 of a degree-2 field
    fit = extract_psi(Field(mesh, psi(x) + noise), 2, 0.1)
    assert np.allclose(fit.psi.coefficients, psi.coefficients, rtol=1e-2)


def test_extract_psi_resolution_guard(coarse_dirichlet):
    with pytest.raises(SpectrumError):
        extract_psi(coarse_dirichlet.pairs[0].field, 1, 0.2)
