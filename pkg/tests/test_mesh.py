import numpy as np
import pytest

from helmdd.mesh import BoundaryTag, build_unit_square_mesh, classify_boundary


def _tag_of(mesh, p, q):
    vid = {tuple(np.round(v, 12)): i for i, v in enumerate(mesh.vertices)}
    a, b = vid[p], vid[q]
    for (u, v), tag in classify_boundary(mesh):
        if {u, v} == {a, b}:
            return tag
    raise KeyError((p, q))


def test_single_cell():
    mesh = build_unit_square_mesh(2)
    assert mesh.n_vertices == 4
    assert mesh.n_triangles == 2
    assert len(mesh.boundary_edges) == 4
    # horizontal edges join corners on opposite walls and stay Robin
    tags = [t for _, t in classify_boundary(mesh)]
    assert tags.count(BoundaryTag.DIRICHLET) == 2


def test_three_by_three_areas():
    mesh = build_unit_square_mesh(3)
    assert mesh.n_vertices == 9
    assert mesh.n_triangles == 8
    np.testing.assert_allclose(mesh.signed_areas(), 0.125, rtol=0, atol=1e-15)


def test_counts_n100():
    mesh = build_unit_square_mesh(100)
    assert mesh.n_vertices == 10000
    assert mesh.n_triangles == 19602
    assert mesh.h == pytest.approx(1 / 99)


@pytest.mark.parametrize("n", [1, 0, -3, 2.5])
def test_rejects_small_or_fractional(n):
    with pytest.raises(ValueError):
        build_unit_square_mesh(n)


def test_vertex_order_x_fastest():
    mesh = build_unit_square_mesh(4)
    h = 1 / 3
    for idx in range(16):
        i, j = idx % 4, idx // 4
        np.testing.assert_allclose(mesh.vertices[idx], [i * h, j * h], atol=1e-15)


def test_diagonal_parity():
    n = 5
    mesh = build_unit_square_mesh(n)
    for c in range(0, 2 * (n - 1) ** 2, 2):
        cell = c // 2
        ci, cj = cell % (n - 1), cell // (n - 1)
        bl = ci + cj * n
        tr = bl + n + 1
        shared = set(mesh.triangles[c]) & set(mesh.triangles[c + 1])
        if (ci + cj) % 2 == 0:
            assert shared == {bl, tr}
        else:
            assert shared == {bl + 1, bl + n}


def test_classify_examples():
    mesh = build_unit_square_mesh(3)
    assert _tag_of(mesh, (0.0, 0.0), (0.0, 0.5)) is BoundaryTag.DIRICHLET
    assert _tag_of(mesh, (0.5, 1.0), (1.0, 1.0)) is BoundaryTag.ROBIN
    tags = [t for _, t in classify_boundary(mesh)]
    assert tags.count(BoundaryTag.DIRICHLET) == 4
    assert tags.count(BoundaryTag.ROBIN) == 4


@pytest.mark.parametrize("n", list(range(2, 30)) + [57, 128, 200])
def test_mesh_invariants(n):
    mesh = build_unit_square_mesh(n)
    areas = mesh.signed_areas()
    assert np.all(areas > 0)
    assert abs(areas.sum() - 1.0) < 1e-12

    # explicit edge count for the Euler characteristic of a disc
    tri = mesh.triangles
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    n_edges = len(np.unique(e, axis=0))
    assert mesh.n_vertices - n_edges + mesh.n_triangles == 1

    p = mesh.vertices[mesh.boundary_edges]
    lengths = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    assert abs(lengths.sum() - 4.0) < 1e-12

    tags = np.array([t.value for t in mesh.boundary_tags])
    dir_mask = tags == BoundaryTag.DIRICHLET.value
    assert dir_mask.sum() + (~dir_mask).sum() == len(tags)
    x = p[..., 0]
    y = p[..., 1]
    assert np.all((x[dir_mask] == 0.0).all(axis=1) | (x[dir_mask] == 1.0).all(axis=1))
    assert np.all((y[~dir_mask] == 0.0).all(axis=1) | (y[~dir_mask] == 1.0).all(axis=1))


def test_boundary_edges_match_triangle_edges():
    mesh = build_unit_square_mesh(7)
    tri = mesh.triangles
    e = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(e, axis=0, return_counts=True)
    once = {tuple(r) for r in uniq[counts == 1]}
    assert once == {tuple(sorted(r)) for r in mesh.boundary_edges}


def test_dirichlet_vertices_include_corners():
    mesh = build_unit_square_mesh(4)
    dv = set(mesh.dirichlet_vertices())
    assert {0, 3, 12, 15} <= dv
    assert len(dv) == 8


def test_write_dump(tmp_path):
    mesh = build_unit_square_mesh(3)
    path = tmp_path / "mesh.txt"
    mesh.write(path)
    lines = path.read_text().splitlines()
    kinds = [ln.split()[0] for ln in lines]
    assert kinds.count("v") == 9
    assert kinds.count("t") == 8
    assert kinds.count("b") == 8
    b_tags = {ln.split()[3] for ln in lines if ln.startswith("b")}
    assert b_tags == {"Dirichlet", "Robin"}
    v = [list(map(float, ln.split()[1:])) for ln in lines if ln.startswith("v")]
    np.testing.assert_array_equal(np.array(v), mesh.vertices)
