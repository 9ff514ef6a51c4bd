import numpy as np
import pytest

from vanishing_neumann.geometry.halfball import (
    build_half_ball_mesh,
    refine_toward_origin,
    uniform_refine,
)
from vanishing_neumann.geometry.io import read_mesh, write_mesh
from vanishing_neumann.geometry.mesh import MeshError, boundary_facets_of, simplex_volumes
from vanishing_neumann.geometry.patch import PatchError, PatchSpec, check_strict_star_shaped
from vanishing_neumann.geometry.tagging import (
    NEUMANN,
    UnderResolvedPatch,
    tag_boundary,
    whole_flat_face,
)

HALF_BALL = 2.0 * np.pi / 3.0


def _check_mesh_invariants(mesh):
    assert np.all(simplex_volumes(mesh.vertices, mesh.cells) > 0)
    assert mesh.cells.min() >= 0 and mesh.cells.max() < mesh.n_vertices
    # every boundary facet belongs to exactly one cell: count facet multiplicities
    from vanishing_neumann.geometry.mesh import local_facets

    f = np.sort(mesh.cells[:, local_facets(mesh.dim)].reshape(-1, mesh.dim), axis=1)
    _, counts = np.unique(f, axis=0, return_counts=True)
    assert counts.max() <= 2
    assert np.sum(counts == 1) == len(mesh.boundary_facets)


def test_half_ball_volume_unit():
    mesh = build_half_ball_mesh(1.0, 0.2)
    _check_mesh_invariants(mesh)
    assert abs(mesh.total_volume() - HALF_BALL) / HALF_BALL < 0.02


def test_half_ball_volume_radius_two():
    mesh = build_half_ball_mesh(2.0, 0.4)
    assert abs(mesh.total_volume() - 8 * HALF_BALL) / (8 * HALF_BALL) < 0.02


def test_grading_toward_origin():
    mesh = build_half_ball_mesh(1.0, 0.2, grading_ratio=4)
    _check_mesh_invariants(mesh)
    r = np.linalg.norm(mesh.centroids(), axis=1)
    d = mesh.cell_diameters()
    assert d[r < 0.1].min() <= 0.06
    assert d.max() >= 0.15


def test_volume_error_is_second_order():
    coarse = build_half_ball_mesh(1.0, 0.2)
    fine = uniform_refine(coarse)
    e1 = abs(coarse.total_volume() - HALF_BALL)
    e2 = abs(fine.total_volume() - HALF_BALL)
    assert e1 / e2 >= 3.0


def test_uniform_refine_halves_size(coarse_half_ball):
    fine = uniform_refine(coarse_half_ball)
    _check_mesh_invariants(fine)
    assert fine.n_cells == 8 * coarse_half_ball.n_cells
    ratio = fine.cell_diameters().max() / coarse_half_ball.cell_diameters().max()
    assert 0.45 < ratio < 0.6


def test_refine_toward_origin_identity_and_growth():
    mesh = build_half_ball_mesh(1.0, 0.25)
    assert refine_toward_origin(mesh, 1) is mesh
    m2 = refine_toward_origin(mesh, 2)
    _check_mesh_invariants(m2)
    assert m2.n_cells > mesh.n_cells


def test_refine_toward_origin_twice_shrinks_near_origin():
    mesh = build_half_ball_mesh(1.0, 0.25)
    m4 = refine_toward_origin(refine_toward_origin(mesh, 2), 2)

    def near_min(m):
        r = np.linalg.norm(m.centroids(), axis=1)
        return m.cell_diameters()[r < 0.1].min()

    assert near_min(m4) <= near_min(mesh) / 2


def test_bad_parameters():
    with pytest.raises(MeshError):
        build_half_ball_mesh(-1.0, 0.2)
    with pytest.raises(MeshError):
        refine_toward_origin(build_half_ball_mesh(1.0, 0.3), 0.5)


def test_patch_validation():
    with pytest.raises(PatchError):
        PatchSpec.disk(0.0)
    with pytest.raises(PatchError):
        PatchSpec.polygon([(1, 1), (2, 1), (2, 2)])  # 0 outside
    with pytest.raises(PatchError):
        PatchSpec.polygon([(-1, -1), (1, 1), (1, -1), (-1, 1)])  # self-intersecting


def test_patch_radii():
    sq = PatchSpec.square(1.0)
    assert sq.inradius() == pytest.approx(1.0)
    assert sq.circumradius() == pytest.approx(np.sqrt(2))
    assert sq.diameter() == pytest.approx(2 * np.sqrt(2))
    assert sq.area() == pytest.approx(4.0)


@pytest.mark.parametrize("r", [0.3, 1.0, 2.5])
def test_star_shaped_disk(r):
    assert check_strict_star_shaped(PatchSpec.disk(r)) == pytest.approx(r)


def test_star_shaped_square_and_l_shape():
    assert check_strict_star_shaped(PatchSpec.square(1.0)) == pytest.approx(1.0)
    # the reentrant edge from (0, 0.5) to (0, 1) lies on the line x = 0 through the origin
    L = PatchSpec.polygon([(-1, -1), (1, -1), (1, 0.5), (0, 0.5), (0, 1), (-1, 1)])
    assert check_strict_star_shaped(L) <= 0


def test_tagging_partition_and_areas(coarse_half_ball):
    mesh = build_half_ball_mesh(1.0, 0.1, levels=[0.2])
    t0 = tag_boundary(mesh, PatchSpec.disk(1.0), 0.0)
    assert t0.counts()["neumann"] == 0
    t = tag_boundary(mesh, PatchSpec.disk(1.0), 0.2)
    c = t.counts()
    assert c["dirichlet"] + c["neumann"] + c["artificial"] == len(mesh.boundary_facets)
    assert abs(t.neumann_area() - np.pi * 0.04) / (np.pi * 0.04) < 0.05
    nf = t.facets_with(NEUMANN)
    assert np.all(np.abs(mesh.vertices[nf][:, :, -1]) <= 1e-12)
    assert np.all(PatchSpec.disk(1.0).contains(mesh.vertices[nf].mean(axis=1)[:, :2], 0.2))


def test_tagging_square_area():
    from vanishing_neumann.spectrum import build_patch_mesh

    mesh = build_patch_mesh(1.0, PatchSpec.square(1.0), 0.1)
    t = tag_boundary(mesh, PatchSpec.square(1.0), 0.1)
    assert abs(t.neumann_area() - 0.04) / 0.04 < 0.05


def test_tagging_monotone_in_epsilon():
    mesh = build_half_ball_mesh(1.0, 0.1)
    patch = PatchSpec.square(1.0)
    sets = [set(map(tuple, np.sort(tag_boundary(mesh, patch, e).facets_with(NEUMANN), axis=1)))
            for e in (0.2, 0.3, 0.5)]
    assert sets[0] <= sets[1] <= sets[2]


def test_tagging_errors(coarse_half_ball):
    with pytest.raises(UnderResolvedPatch):
        tag_boundary(coarse_half_ball, PatchSpec.disk(1.0), 0.01)
    with pytest.raises(MeshError):
        tag_boundary(coarse_half_ball, PatchSpec.disk(1.0), 1.5)
    art = tag_boundary(coarse_half_ball, None, 0.0, artificial_outer=True)
    assert art.counts()["artificial"] > 0 and art.counts()["neumann"] == 0


def test_whole_flat_face(coarse_half_ball):
    t = whole_flat_face(coarse_half_ball)
    assert abs(t.neumann_area() - np.pi) / np.pi < 0.02
    assert t.counts()["dirichlet"] > 0


def test_mesh_io_roundtrip(tmp_path, coarse_half_ball):
    t = tag_boundary(coarse_half_ball, PatchSpec.disk(1.0), 0.5)
    path = tmp_path / "m.txt"
    write_mesh(path, t)
    assert path.read_text().splitlines()[0].split()[0] == "3"
    mesh, facets, tags = read_mesh(path)
    assert np.array_equal(mesh.cells, coarse_half_ball.cells)
    assert np.array_equal(mesh.vertices, coarse_half_ball.vertices)
    assert np.array_equal(tags, t.facet_tags)
    path.write_text("3 10 2\n")
    with pytest.raises(MeshError):
        read_mesh(path)


def test_boundary_facets_single_tet():
    cells = np.array([[0, 1, 2, 3]])
    facets, owner = boundary_facets_of(cells, 3)
    assert len(facets) == 4 and np.all(owner == 0)
