import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locatlas.errors import GeometryError, ParameterError, SizeError
from locatlas.geom import (
    SpatialIndex, TriMesh, brute_knn, edge_sq_sum, icosphere, knn, sample_surface, unit_cube,
    unit_sphere_quadgrid, uv_grid, weld_vertices,
)
from locatlas.watertight import wt

LINE = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float)


@pytest.mark.parametrize("k, expected", [(1, [0]), (2, [0, 1]), (3, [0, 1, 2])])
def test_knn_small(k, expected):
    assert list(knn(SpatialIndex(LINE), [0, 0, 0], k)) == expected


def test_knn_rejects_large_k():
    with pytest.raises(SizeError):
        SpatialIndex(LINE).knn([0, 0, 0], 4)


def test_knn_tie_goes_to_lower_index():
    pts = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, 0, 5]], dtype=float)
    assert list(SpatialIndex(pts, leaf_size=1).knn([0, 0, 0], 2)) == [0, 1]


def test_knn_matches_brute_force_on_1000_clouds():
    rng = np.random.default_rng(0)
    for trial in range(1000):
        n = int(rng.integers(1, 513))
        # a coarse lattice forces plenty of exact distance ties
        pts = rng.integers(-4, 5, (n, 3)).astype(float) if trial % 2 else rng.normal(size=(n, 3))
        idx = SpatialIndex(pts, leaf_size=int(rng.integers(1, 20)))
        q = rng.integers(-4, 5, 3).astype(float) if trial % 3 == 0 else rng.normal(size=3)
        k = int(rng.integers(1, n + 1))
        assert np.array_equal(idx.knn(q, k), brute_knn(pts, q, k))


def test_sample_surface_single_triangle():
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    pts, face, nrm = sample_surface(tri, 1000, seed=3)
    assert np.all(np.abs(pts[:, 2]) <= 1e-12)
    assert np.all(pts[:, :2] >= 0) and np.all(pts[:, 0] + pts[:, 1] <= 1 + 1e-12)
    assert np.all(face == 0)
    assert np.allclose(nrm, [0, 0, 1])


def test_sample_surface_area_proportions():
    # areas 1 and 3
    mesh = TriMesh([[0, 0, 0], [2, 0, 0], [0, 1, 0], [0, 0, 1], [6, 0, 1], [0, 1, 1]], [[0, 1, 2], [3, 4, 5]])
    assert np.allclose(mesh.face_areas(), [1, 3])
    n = 40_000
    _, face, _ = sample_surface(mesh, n, seed=0)
    count0 = int((face == 0).sum())
    mean, sd = n * 0.25, np.sqrt(n * 0.25 * 0.75)
    assert abs(count0 - mean) <= 5 * sd


def test_sample_surface_chi_square_20_faces():
    from scipy.stats import chi2

    rng = np.random.default_rng(7)
    verts = rng.normal(size=(60, 3))
    mesh = TriMesh(verts, np.arange(60).reshape(20, 3))
    n = 100_000
    _, face, _ = sample_surface(mesh, n, seed=1)
    expected = n * mesh.face_areas() / mesh.face_areas().sum()
    observed = np.bincount(face, minlength=20)
    stat = ((observed - expected) ** 2 / expected).sum()
    assert chi2.sf(stat, df=19) > 1e-3


def test_sample_surface_deterministic():
    m = icosphere(1)
    a = sample_surface(m, 500, seed=9)
    b = sample_surface(m, 500, seed=9)
    for x, y in zip(a, b):
        assert np.array_equal(x, y)


def test_sample_surface_degenerate():
    flat = TriMesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(GeometryError):
        sample_surface(flat, 10, 0)


@pytest.mark.parametrize("res", [2, 3, 6, 11])
def test_quadgrid_sphere(res):
    m = unit_sphere_quadgrid(res)
    assert np.abs(np.linalg.norm(m.vertices, axis=1) - 1).max() <= 1e-12
    assert m.euler_characteristic() == 2
    assert m.is_closed_manifold()
    assert m.n_faces == 12 * (res - 1) ** 2


def test_quadgrid_is_watertight():
    assert wt(unit_sphere_quadgrid(5)) == 1.0


def test_quadgrid_rejects_small_resolution():
    with pytest.raises(ParameterError):
        unit_sphere_quadgrid(1)


def test_uv_grid_counts():
    g = uv_grid(2)
    assert {tuple(v) for v in g.vertices} == {(0, 0), (1, 0), (0, 1), (1, 1)}
    assert len(g.quads) == 1 and len(g.triangles) == 2
    g = uv_grid(3)
    assert (len(g.vertices), len(g.quads), len(g.triangles)) == (9, 4, 8)
    g = uv_grid(7)
    assert g.vertices.min() >= 0 and g.vertices.max() <= 1
    i, j = 2, 5
    assert np.allclose(g.vertices[i * 7 + j], [i / 6, j / 6])
    with pytest.raises(ParameterError):
        uv_grid(1)


def test_weld_shared_edge():
    # two triangles whose shared edge endpoints are duplicated within 1e-6
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 1e-6], [0, 1, -1e-6], [1, 1, 0]]
    mesh = TriMesh(v, [[0, 1, 2], [3, 5, 4]])
    w = weld_vertices(mesh, 1e-4)
    assert w.n_vertices == 4
    assert w.n_faces == 2
    assert len(w.edges) == 5


def test_weld_zero_epsilon_identity():
    m = icosphere(1)
    w = weld_vertices(m, 0.0)
    assert np.array_equal(w.vertices, m.vertices) and np.array_equal(w.faces, m.faces)


def test_weld_drops_collapsed_faces():
    mesh = TriMesh([[0, 0, 0], [1e-9, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    w = weld_vertices(mesh, 1e-6)
    assert w.n_faces == 0 and w.n_vertices == 2


def _canonical(mesh):
    order = np.lexsort(mesh.vertices.T[::-1])
    inv = np.empty_like(order)
    inv[order] = np.arange(len(order))
    faces = np.sort(inv[mesh.faces], axis=1)
    return mesh.vertices[order], faces[np.lexsort(faces.T[::-1])]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.0, 0.3))
def test_weld_properties(seed, eps):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 40))
    v = rng.random((n, 3))
    f = np.array([rng.choice(n, 3, replace=False) for _ in range(int(rng.integers(1, 30)))])
    m = TriMesh(v, f)
    w = weld_vertices(m, eps)
    assert w.n_vertices <= m.n_vertices
    ww = weld_vertices(w, eps)
    a, b = _canonical(w), _canonical(ww)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_edge_sq_sum_examples():
    tri = TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    assert edge_sq_sum(tri) == 4.0
    assert edge_sq_sum(TriMesh(np.zeros((3, 3)) + 0.5, [[0, 1, 2]])) == 0.0
    m = icosphere(1)
    scaled = TriMesh(m.vertices * 3.0, m.faces)
    assert np.isclose(edge_sq_sum(scaled), 9.0 * edge_sq_sum(m), rtol=1e-13)


def test_edges_are_deduplicated_union():
    c = unit_cube()
    assert len(c.edges) == 18
    assert np.all(c.edges[:, 0] < c.edges[:, 1])


def test_trimesh_rejects_bad_faces():
    with pytest.raises(GeometryError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])
    with pytest.raises(GeometryError):
        TriMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])
