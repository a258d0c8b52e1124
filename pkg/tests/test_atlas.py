import numpy as np
import pytest

from locatlas import nn
from locatlas.atlas import (
    ModelB, Patch, TrainBConfig, adaptive_fill, assemble_mesh, conditioned_batch, discrete_atlas,
    local_loss, make_patch_batch, neighborhood, patch_pass, phi_patch, train_part_b, uv_knn_edges,
)
from locatlas.errors import ParameterError
from locatlas.geom import TriMesh, edge_sq_sum, merge_meshes, uniform_sphere, uv_grid
from locatlas.hypermodel import ModelA, encode, normalize_cloud
from locatlas.metrics import chamfer
from locatlas.watertight import WtConfig, wt

X = np.array([[0, 0, 0], [1, 0, 0], [3, 0, 0]], dtype=float)


@pytest.fixture(scope="module")
def tiny():
    a = ModelA.create(seed=1, latent_dim=8, encoder_hidden=(16,), hyper_hidden=(16,), target_hidden=(16, 16))
    b = ModelB.create(8, seed=2, hyper_hidden=(16,), phi_hidden=(12, 12))
    return a, b, normalize_cloud(uniform_sphere(64, 0))


def test_conditioned_batch():
    assert conditioned_batch([(0.5, 0.5)], (1, 2, 3)).tolist() == [[0.5, 0.5, 1, 2, 3]]
    rows = conditioned_batch(uv_grid(2).vertices, (1, 2, 3))
    assert rows.shape == (4, 5) and np.all(rows[:, 2:] == [1, 2, 3])
    with pytest.raises(ParameterError):
        conditioned_batch([(1.5, 0.0)], (0, 0, 0))


def test_neighborhood():
    assert neighborhood(X, 0, 2).tolist() == X[:2].tolist()
    assert neighborhood(X, 2, 1).tolist() == [X[2].tolist()]
    assert sorted(map(tuple, neighborhood(X, 1, 3))) == sorted(map(tuple, X))


def test_phi_patch_deterministic(tiny):
    a, b, cloud = tiny
    z = encode(a, cloud)
    p1, p2 = phi_patch(b, z, cloud[0], 5), phi_patch(b, z, cloud[0], 5)
    assert np.array_equal(p1.mesh.vertices, p2.mesh.vertices)
    assert p1.mesh.n_vertices == 25


def test_zero_head_gives_constant_patch(tiny):
    _, b, _ = tiny
    params = b.params.copy()
    params[b.tphi.layout[-1][0]:] = 0.0
    zb = ModelB(b.tphi, b.phi, params)
    patch = phi_patch(zb, np.ones(8), (0.1, 0.2, 0.3), 4)
    assert np.all(patch.mesh.vertices == patch.mesh.vertices[0])


def _hand_patch(verts):
    return Patch(TriMesh(verts, uv_grid(2).triangles), np.zeros(3), 2)


def test_local_loss_hand_computed():
    patch = _hand_patch(np.array([[0, 0, 0], [0, 1, 0], [1, 0, 0], [1, 1, 0]], dtype=float))
    target = np.array([[0, 0, 0], [1, 1, 1]], dtype=float)
    # chamfer: (0 + 1 + 1 + 1) / 4 + (0 + 1) / 2 = 1.25; edges: four sides and a diagonal = 6
    assert local_loss(patch, target, 0.0) == 1.25
    assert abs(local_loss(patch, target, 0.1) - 1.85) <= 1e-15


def test_local_loss_degenerate_and_lambda_zero():
    p = np.array([0.2, -0.1, 0.4])
    patch = _hand_patch(np.tile(p, (4, 1)))
    assert local_loss(patch, p[None], 1e-4) == 0.0
    rng = np.random.default_rng(0)
    patch = _hand_patch(rng.normal(size=(4, 3)))
    tgt = rng.normal(size=(6, 3))
    assert local_loss(patch, tgt, 0.0) == chamfer(patch.mesh.vertices, tgt)


def test_uv_knn_edges():
    uv = np.array([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]])
    e = uv_knn_edges(uv, 1)
    assert e.tolist() == [[0, 4], [1, 4], [2, 4], [3, 4]]
    assert len(uv_knn_edges(uv[:1])) == 0


def test_patch_pass_matches_local_loss(tiny):
    a, b, cloud = tiny
    z = encode(a, cloud)
    grid = uv_grid(3)
    cond, tgt = cloud[:2], np.stack([cloud[2:7], cloud[7:12]])
    edges = TriMesh(np.c_[grid.vertices, np.zeros(9)], grid.triangles).edges
    batch = make_patch_batch(z, cond, tgt, np.stack([grid.vertices] * 2), [edges, edges])
    res = patch_pass(b, batch, 0.5, need_grad=False)
    expected = np.mean([local_loss(phi_patch(b, z, c, 3), t, 0.5) for c, t in zip(cond, tgt)])
    assert abs(res.loss - expected) <= 1e-12


def test_train_b_reproducible(tiny):
    a, b, cloud = tiny
    cfg = TrainBConfig(k=8, uv_samples=9, patches=4, epochs=3, seed=5)
    r1 = train_part_b(a, [cloud], cfg, model=b)
    r2 = train_part_b(a, [cloud], cfg, model=b)
    assert np.array_equal(r1.model.params, r2.model.params)
    assert r1.losses == r2.losses


@pytest.mark.parametrize("r, m", [(2, 2), (3, 4), (5, 3)])
def test_closed_assembly_untrained(tiny, r, m):
    a, b, cloud = tiny
    mesh = assemble_mesh(a, b, cloud, "closed", r=r, m=m).mesh
    assert mesh.euler_characteristic() == 2
    assert mesh.is_closed_manifold()
    assert wt(mesh, WtConfig(rays=3000)) == 1.0


def test_soup_vertex_count(tiny):
    a, b, cloud = tiny
    asm = assemble_mesh(a, b, cloud, "soup", m=3, n_patches=7, epsilon=0.0)
    assert asm.mesh.n_vertices == 7 * 9
    assert len(asm.patches) == 7


def test_assembly_rejects_bad_mode(tiny):
    a, b, cloud = tiny
    with pytest.raises(ParameterError):
        assemble_mesh(a, b, cloud, "melt")


def test_weld_does_not_lower_torus_wt(torus_a, torus_b, torus_cloud):
    # default assembly settings and the full ray budget; the margin is small
    raw = assemble_mesh(torus_a.model, torus_b.model, torus_cloud, "soup").mesh
    welded = assemble_mesh(torus_a.model, torus_b.model, torus_cloud, "soup", epsilon=0.01).mesh
    assert welded.n_vertices < raw.n_vertices
    assert wt(welded) >= wt(raw)


def test_closed_assembly_trained_torus(torus_a, torus_b, torus_cloud):
    mesh = assemble_mesh(torus_a.model, torus_b.model, torus_cloud, "closed", r=8, m=4).mesh
    assert mesh.euler_characteristic() == 2 and mesh.is_closed_manifold()


def test_fill_noop_when_covered(sphere_a, sphere_b, sphere_cloud):
    asm = assemble_mesh(sphere_a.model, sphere_b.model, sphere_cloud, "soup", m=4, n_patches=64)
    res = adaptive_fill(asm.mesh, sphere_a.model, sphere_b.model, sphere_cloud, tau=10.0, max_patches=5)
    assert len(res.added) == 0
    assert res.mesh is asm.mesh


def test_fill_patches_deleted_pole(sphere_a, sphere_b, sphere_cloud):
    asm = assemble_mesh(sphere_a.model, sphere_b.model, sphere_cloud, "soup", m=4, n_patches=96)
    keep = [p.mesh for p, c in zip(asm.patches, asm.conditions) if c[2] < 0.45]
    assert len(keep) < len(asm.patches)
    holed = merge_meshes(keep)
    res = adaptive_fill(holed, sphere_a.model, sphere_b.model, sphere_cloud, tau=0.1, max_patches=8, n_reference=512)
    assert len(res.added) >= 1
    assert res.added[0][2] >= 0.45
    assert res.mesh.n_vertices > holed.n_vertices


def test_phi_continuous_in_condition(sphere_a, sphere_b, sphere_cloud):
    z = encode(sphere_a.model, sphere_cloud)
    p = sphere_cloud[0]
    base = phi_patch(sphere_b.model, z, p, 5).mesh.vertices
    d = np.array([1.0, -2.0, 0.5]) / np.sqrt(5.25)
    gaps = [np.abs(phi_patch(sphere_b.model, z, p + s * d, 5).mesh.vertices - base).max() for s in (1e-4, 1e-5, 1e-6)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-4


def test_discrete_atlas_single_patch():
    cloud = normalize_cloud(uniform_sphere(64, 0))
    base, soup = discrete_atlas(cloud, 1, m=4, epochs=3)
    assert base.k_patches == 1
    assert soup.n_vertices == 16
    with pytest.raises(ParameterError):
        discrete_atlas(cloud, 0)


def test_trained_patch_edges_finite(torus_a, torus_b, torus_cloud):
    z = encode(torus_a.model, torus_cloud)
    patch = phi_patch(torus_b.model, z, torus_cloud[3], 5)
    assert np.isfinite(edge_sq_sum(patch.mesh))
    assert nn.MlpSpec.from_description(torus_b.model.phi.describe()) == torus_b.model.phi


def test_patch_counts(tiny):
    a, b, cloud = tiny
    for m in (2, 3, 6):
        patch = phi_patch(b, encode(a, cloud), cloud[0], m)
        assert patch.mesh.n_vertices == m * m
        assert patch.mesh.n_faces == 2 * (m - 1) ** 2


def test_discrete_atlas_union_count():
    cloud = normalize_cloud(uniform_sphere(64, 1))
    base, soup = discrete_atlas(cloud, 3, m=4, epochs=2)
    assert soup.n_vertices == 3 * 16
    assert len(base.patch_meshes(5)) == 3


def test_fill_respects_budget(sphere_a, sphere_b, sphere_cloud):
    asm = assemble_mesh(sphere_a.model, sphere_b.model, sphere_cloud, "soup", m=3, n_patches=4)
    res = adaptive_fill(asm.mesh, sphere_a.model, sphere_b.model, sphere_cloud, tau=1e-6, max_patches=3,
                        m=3, n_reference=256)
    assert len(res.added) == 3
    assert res.mesh.n_vertices <= (4 + 3) * 9


def _inside_fraction(model_a, model_b, cloud, k=16, n_patches=256):
    from locatlas.geom import SpatialIndex

    index = SpatialIndex(cloud)
    asm = assemble_mesh(model_a, model_b, cloud, "soup", m=5, n_patches=n_patches)
    inside = []
    for patch, c in zip(asm.patches, asm.conditions):
        nb = cloud[index.knn(c, k)]
        lo, hi = nb.min(axis=0), nb.max(axis=0)
        inside.append(np.all(np.abs(patch.mesh.vertices - (lo + hi) / 2) <= 0.75 * (hi - lo)))
    return float(np.mean(inside))


@pytest.mark.xfail(strict=True, reason="trained patches overshoot the 1.5x neighbourhood box at their "
                                       "boundary; about 74% of sphere patches stay inside")
def test_soup_patches_inside_inflated_neighbourhood_box(sphere_a, sphere_b, sphere_cloud):
    frac = _inside_fraction(sphere_a.model, sphere_b.model, sphere_cloud)
    print(f"patches inside the inflated neighbourhood box: {frac:.4f}")
    assert frac >= 0.99
