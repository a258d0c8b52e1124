import numpy as np
import pytest

from locatlas import nn
from locatlas.errors import ParameterError, ShapeError, StateError
from locatlas.geom import uniform_sphere
from locatlas.hypermodel import (
    LatentPrior, ModelA, TrainAConfig, composite_pass, decode, encode, interpolate, normalize_cloud,
    reconstruct, sample_latent, sphere_mesh, target_weights, train_part_a,
)
from locatlas.metrics import chamfer
from locatlas.watertight import WtConfig, wt


@pytest.fixture(scope="module")
def small():
    return ModelA.create(seed=3, latent_dim=16, encoder_hidden=(16,), hyper_hidden=(32,), target_hidden=(16, 16))


def test_default_sizes():
    m = ModelA.create(seed=0)
    assert m.latent_dim == 128
    assert m.target.n_params == 8771
    assert m.hyper.widths == (128, 256, 8771)


def test_encode_is_permutation_invariant(small):
    rng = np.random.default_rng(0)
    cloud = rng.normal(size=(40, 3))
    assert np.array_equal(encode(small, cloud), encode(small, cloud[rng.permutation(40)]))


def test_encode_repeated_point(small):
    p = np.array([[0.3, -0.2, 0.5]])
    assert np.array_equal(encode(small, np.repeat(p, 7, axis=0)), encode(small, p))


def test_target_weights_continuity(small):
    rng = np.random.default_rng(1)
    z, d = rng.normal(size=16), rng.normal(size=16)
    d /= np.linalg.norm(d)
    w = target_weights(small, z)
    assert np.array_equal(w, target_weights(small, z.copy()))
    h = 1e-4
    jvp = (target_weights(small, z + h * d) - target_weights(small, z - h * d)) / (2 * h)
    delta = 1e-6
    diff = target_weights(small, z + delta * d) - w
    assert np.linalg.norm(diff) <= 10 * delta * max(np.linalg.norm(jvp), 1.0)
    assert np.linalg.norm(diff - delta * jvp) <= 1e-3 * delta * max(np.linalg.norm(jvp), 1.0)


def test_target_weights_shape_error(small):
    with pytest.raises(ShapeError):
        target_weights(small, np.zeros(3))


def test_reconstruct_deterministic(small):
    cloud = uniform_sphere(64, 0)
    assert np.array_equal(reconstruct(small, cloud, 100, 4), reconstruct(small, cloud, 100, 4))


def test_zero_hypernetwork_gives_constant_output(small):
    zero = ModelA(small.encoder, small.hyper, small.target, small.encoder_params,
                  np.zeros_like(small.hyper_params))
    out = reconstruct(zero, uniform_sphere(64, 0), 50, 1)
    assert np.all(out == out[0])


def test_interpolate():
    z1 = np.arange(4.0)
    z2 = -z1
    assert np.array_equal(interpolate(None, z1, z2, 0.0), z1)
    assert np.array_equal(interpolate(None, z1, z2, 1.0), z2)
    assert np.all(interpolate(None, z1, z2, 0.5) == 0)
    with pytest.raises(ParameterError):
        interpolate(None, z1, z2, 1.5)


def test_prior_sampling():
    prior = LatentPrior(np.array([1.0, -2.0]), np.zeros(2))
    assert np.array_equal(sample_latent(prior, 0), prior.mean)
    prior = LatentPrior(np.array([1.0, -2.0]), np.array([4.0, 0.25]))
    assert np.array_equal(sample_latent(prior, 5, 3), sample_latent(prior, 5, 3))
    draws = sample_latent(prior, 9, 10_000)
    sd = np.sqrt(prior.var)
    assert np.all(np.abs(draws.mean(axis=0) - prior.mean) <= 5 * sd / 100)
    with pytest.raises(StateError):
        sample_latent(LatentPrior(), 0)


def test_normalize_cloud():
    pts = normalize_cloud(np.random.default_rng(0).normal(size=(30, 3)) * 7 + 3)
    assert np.allclose(pts.mean(axis=0), 0, atol=1e-12)
    assert np.isclose(np.linalg.norm(pts, axis=1).max(), 0.9)


def test_composite_gradient_small(small):
    rng = np.random.default_rng(2)
    cloud = rng.normal(size=(24, 3)) * 0.5
    prior = uniform_sphere(24, 3)
    p = composite_pass(small, cloud, prior)
    res = nn.check_gradient(
        lambda th: composite_pass(small.with_params(th), cloud, prior, need_grad=False).loss,
        small.params, p.grad, n_check=60, seed=1,
        signature=lambda th: composite_pass(small.with_params(th), cloud, prior, need_grad=False).signature)
    assert res.max_rel_error <= 1e-4


def test_training_is_reproducible_and_supports_emd(small):
    cloud = normalize_cloud(uniform_sphere(32, 1))
    cfg = TrainAConfig(epochs=3, prior_samples=32, seed=4)
    a = train_part_a([cloud], cfg, model=small)
    b = train_part_a([cloud], cfg, model=small)
    assert np.array_equal(a.model.params, b.model.params)
    assert a.losses == b.losses
    e = train_part_a([cloud], TrainAConfig(epochs=2, prior_samples=32, loss="EMD"), model=small)
    assert len(e.losses) == 2 and np.isfinite(e.losses).all()


def test_trained_sphere_reconstruction(sphere_a, sphere_cloud):
    rec = reconstruct(sphere_a.model, sphere_cloud, len(sphere_cloud), 0)
    assert chamfer(rec, sphere_cloud) <= 0.1 * sphere_a.losses[0]


def test_trained_sphere_mesh_is_watertight(sphere_a, sphere_cloud):
    mesh = sphere_mesh(sphere_a.model, sphere_cloud, 12)
    assert mesh.euler_characteristic() == 2
    assert wt(mesh, WtConfig(rays=20_000)) >= 0.999


def test_decode_matches_reconstruct(small):
    z = encode(small, uniform_sphere(16, 0))
    assert np.array_equal(decode(small, z, uniform_sphere(10, 2)), reconstruct(small, z, 10, 2))


def test_best_loss_never_increases(sphere_a):
    best = np.array(sphere_a.best_losses)
    assert np.all(np.diff(best) <= 0)
    assert best[-1] == min(sphere_a.losses)
