"""Hypernetwork point-cloud autoencoder.

A permutation-invariant encoder embeds a cloud; a hypernetwork turns the
embedding into the weights of a small target MLP, and the target MLP maps
points of the unit sphere onto the object's surface.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import NumericError, ParameterError, ShapeError, SizeError, StateError
from .geom import TriMesh, as_cloud, uniform_sphere, unit_sphere_quadgrid
from .metrics import DistanceKind, chamfer_with_grad, linear_assignment, pairwise_sq

log = logging.getLogger(__name__)

LATENT_DIM = 128
NORMALIZE_RADIUS = 0.9


def normalize_cloud(points, radius: float = NORMALIZE_RADIUS) -> np.ndarray:
    """Center on the centroid and scale the farthest point to ``radius``."""
    pts = as_cloud(points)
    pts = pts - pts.mean(axis=0)
    r = np.sqrt((pts * pts).sum(axis=1).max())
    return pts if r == 0 else pts * (radius / r)


def reconstruction_loss(pred: np.ndarray, target: np.ndarray, kind=DistanceKind.CD):
    """Loss value, gradient wrt ``pred`` and a discrete assignment signature."""
    if DistanceKind(kind) is DistanceKind.CD:
        val, grad, (a, b) = chamfer_with_grad(pred, target)
        return val, grad, np.concatenate([a, b])
    if len(pred) != len(target):
        raise SizeError("EMD loss needs equal sizes")
    d = np.sqrt(pairwise_sq(pred, target))
    col = linear_assignment(d)
    n = len(pred)
    diff = pred - target[col]
    dist = d[np.arange(n), col]
    with np.errstate(invalid="ignore", divide="ignore"):
        grad = np.where(dist[:, None] > 0, diff / dist[:, None], 0.0) / n
    return float(dist.sum() / n), grad, col


@dataclass
class ModelA:
    encoder: nn.MlpSpec
    hyper: nn.MlpSpec
    target: nn.MlpSpec
    encoder_params: np.ndarray
    hyper_params: np.ndarray

    def __post_init__(self):
        if self.hyper.widths[-1] != self.target.n_params:
            raise ShapeError("hypernetwork output must match the target parameter count")
        if self.hyper.widths[0] != self.encoder.widths[-1]:
            raise ShapeError("hypernetwork input must match the embedding size")
        if self.target.widths[0] != 3 or self.target.widths[-1] != 3 or self.encoder.widths[0] != 3:
            raise ShapeError("encoder and target networks operate on 3D points")

    @property
    def latent_dim(self) -> int:
        return self.encoder.widths[-1]

    @classmethod
    def create(cls, seed: int = 0, latent_dim: int = LATENT_DIM, encoder_hidden=(64, 128),
               hyper_hidden=(256,), target_hidden=(64, 64, 64)) -> "ModelA":
        target = nn.MlpSpec((3, *target_hidden, 3))
        encoder = nn.MlpSpec((3, *encoder_hidden, latent_dim))
        hyper = nn.MlpSpec((latent_dim, *hyper_hidden, target.n_params))
        rng = np.random.default_rng(seed)
        return cls(encoder, hyper, target, nn.init_params(encoder, rng), nn.init_params(hyper, rng))

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.encoder_params, self.hyper_params])

    def with_params(self, flat: np.ndarray) -> "ModelA":
        k = self.encoder.n_params
        return ModelA(self.encoder, self.hyper, self.target, flat[:k].copy(), flat[k:].copy())


def encode(model: ModelA, cloud) -> np.ndarray:
    """Per-point MLP followed by a coordinatewise max over points.

    Only distinct points are evaluated. The max is unaffected, and the result
    no longer depends on how the BLAS kernel handles the batch length, so
    duplicated or reordered points give bitwise-identical embeddings.
    """
    feats = nn.forward(model.encoder, model.encoder_params, np.unique(as_cloud(cloud), axis=0))
    return feats.max(axis=0)


def encode_many(model: ModelA, clouds) -> np.ndarray:
    return np.stack([encode(model, c) for c in clouds])


def target_weights(model: ModelA, z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (model.latent_dim,):
        raise ShapeError(f"embedding must have shape ({model.latent_dim},), got {z.shape}")
    return nn.forward(model.hyper, model.hyper_params, z[None])[0]


def decode(model: ModelA, z, prior_points) -> np.ndarray:
    """Map prior points through the target network generated for ``z``."""
    return nn.forward(model.target, target_weights(model, z), np.asarray(prior_points, dtype=np.float64))


def _latent(model: ModelA, cloud_or_z) -> np.ndarray:
    arr = np.asarray(cloud_or_z, dtype=np.float64)
    return arr if arr.ndim == 1 else encode(model, arr)


def reconstruct(model: ModelA, cloud_or_z, n: int, seed) -> np.ndarray:
    """``n`` surface points decoded from uniform samples on the unit sphere."""
    return decode(model, _latent(model, cloud_or_z), uniform_sphere(n, seed))


def sphere_mesh(model: ModelA, cloud_or_z, resolution: int) -> TriMesh:
    """Quad-sphere mesh pushed through the target network; connectivity is unchanged."""
    sphere = unit_sphere_quadgrid(resolution)
    return TriMesh(decode(model, _latent(model, cloud_or_z), sphere.vertices), sphere.faces.copy())


def interpolate(model: ModelA, z1, z2, t: float) -> np.ndarray:
    if not 0.0 <= t <= 1.0:
        raise ParameterError(f"interpolation parameter {t} outside [0, 1]")
    z1, z2 = np.asarray(z1, dtype=np.float64), np.asarray(z2, dtype=np.float64)
    if z1.shape != z2.shape:
        raise ShapeError("embeddings differ in dimension")
    return (1.0 - t) * z1 + t * z2


@dataclass
class LatentPrior:
    """Diagonal Gaussian over embeddings."""

    mean: np.ndarray | None = None
    var: np.ndarray | None = None

    @property
    def fitted(self) -> bool:
        return self.mean is not None and self.var is not None

    @classmethod
    def fit(cls, embeddings) -> "LatentPrior":
        e = np.asarray(embeddings, dtype=np.float64)
        return cls(e.mean(axis=0), e.var(axis=0))


def sample_latent(prior: LatentPrior, seed, n: int | None = None) -> np.ndarray:
    if not prior.fitted:
        raise StateError("latent prior has not been fitted")
    rng = np.random.default_rng(seed)
    shape = prior.mean.shape if n is None else (n, *prior.mean.shape)
    return prior.mean + np.sqrt(prior.var) * rng.standard_normal(shape)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainAConfig:
    epochs: int = 200
    batch_size: int = 8
    lr: float = 1e-3
    prior_samples: int = 512
    seed: int = 0
    loss: str = "CD"

    def __post_init__(self):
        if min(self.epochs, self.batch_size, self.prior_samples) < 1 or self.lr <= 0:
            raise ParameterError("training configuration values must be positive")
        DistanceKind(self.loss)


@dataclass
class _Pass:
    loss: float
    grad: np.ndarray
    signature: np.ndarray


def composite_pass(model: ModelA, cloud: np.ndarray, prior_points: np.ndarray,
                   kind=DistanceKind.CD, need_grad: bool = True) -> _Pass:
    """Loss of one cloud through encoder, hypernetwork and target network.

    The gradient is taken with respect to ``model.params`` (encoder then
    hypernetwork). The signature records every discrete choice on the path:
    ReLU masks, max-pool winners and the loss's point assignment.
    """
    feats, enc_cache = nn.forward(model.encoder, model.encoder_params, cloud, keep=True)
    winners = feats.argmax(axis=0)
    z = feats[winners, np.arange(feats.shape[1])]
    w_t, hyp_cache = nn.forward(model.hyper, model.hyper_params, z[None], keep=True)
    w_t = w_t[0]
    pred, tgt_cache = nn.forward(model.target, w_t, prior_points, keep=True)
    val, g_pred, assign = reconstruction_loss(pred, cloud, kind)
    sig = np.concatenate([
        nn.activation_signature(model.encoder, enc_cache).astype(np.int64), winners,
        nn.activation_signature(model.hyper, hyp_cache).astype(np.int64),
        nn.activation_signature(model.target, tgt_cache).astype(np.int64), assign,
    ])
    if not need_grad:
        return _Pass(val, np.zeros(0), sig)
    g_wt, _ = nn.backward(model.target, w_t, prior_points, g_pred, tgt_cache)
    g_hyper, g_z = nn.backward(model.hyper, model.hyper_params, z[None], g_wt[None], hyp_cache)
    g_feats = np.zeros_like(feats)
    g_feats[winners, np.arange(feats.shape[1])] = g_z[0]
    g_enc, _ = nn.backward(model.encoder, model.encoder_params, cloud, g_feats, enc_cache)
    return _Pass(val, np.concatenate([g_enc, g_hyper]), sig)


@dataclass
class TrainAResult:
    model: ModelA
    prior: LatentPrior
    losses: list[float] = field(default_factory=list)
    best_losses: list[float] = field(default_factory=list)
    best_model: ModelA | None = None


def train_part_a(dataset, cfg: TrainAConfig | None = None, model: ModelA | None = None,
                 log_fn=None) -> TrainAResult:
    """Fit encoder and hypernetwork jointly by Adam on the reconstruction loss.

    The loss recorded for an epoch is the mean over that epoch's clouds,
    evaluated before each update.
    """
    cfg = cfg or TrainAConfig()
    clouds = [as_cloud(c) for c in dataset]
    if not clouds:
        raise SizeError("dataset is empty")
    model = model or ModelA.create(cfg.seed)
    rng = np.random.default_rng([cfg.seed, 1])
    theta = model.params
    state = nn.AdamState.zeros(len(theta), lr=cfg.lr)
    result = TrainAResult(model, LatentPrior())
    best = np.inf
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(clouds))
        total = 0.0
        for s in range(0, len(order), cfg.batch_size):
            batch = order[s:s + cfg.batch_size]
            current = model.with_params(theta)
            grad = np.zeros_like(theta)
            for i in batch:
                prior = uniform_sphere(cfg.prior_samples, rng)
                p = composite_pass(current, clouds[i], prior, cfg.loss)
                if not np.isfinite(p.loss):
                    raise NumericError(f"non-finite loss at epoch {epoch}, cloud {i}")
                total += p.loss
                grad += p.grad
            theta, state = nn.adam_step(theta, grad / len(batch), state)
        loss = total / len(clouds)
        result.losses.append(loss)
        if loss < best:
            best = loss
            result.best_model = model.with_params(theta)
        result.best_losses.append(best)
        if log_fn:
            log_fn(epoch, loss)
        log.debug("part A epoch %d loss %.6g", epoch, loss)
    result.model = model.with_params(theta)
    result.prior = LatentPrior.fit(encode_many(result.model, clouds))
    return result


def mean_reconstruction_cd(model: ModelA, clouds, n: int, seed: int = 0) -> float:
    from .metrics import chamfer

    return float(np.mean([chamfer(reconstruct(model, c, n, [seed, i]), c) for i, c in enumerate(clouds)]))
