"""Locally conditioned continuous atlas.

A second hypernetwork maps the frozen autoencoder's embedding to the weights
of a patch network ``phi``. ``phi`` takes rows ``(u, v, px, py, pz)``: a point of
the unit square followed by a condition point on the surface, and returns a 3D
point of the patch covering the neighbourhood of that condition point.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .errors import NumericError, ParameterError, ShapeError, SizeError
from .geom import (
    SpatialIndex,
    TriMesh,
    as_cloud,
    cube_lattice,
    edge_sq_sum,
    lattice_to_sphere,
    merge_meshes,
    quads_to_triangles,
    uniform_sphere,
    uv_grid,
    weld_vertices,
    _CUBE_FACES,
)
from .hypermodel import ModelA, _latent, decode, encode, reconstruct, target_weights
from .metrics import batched_chamfer_with_grad, chamfer, chamfer_with_grad, pairwise_sq

log = logging.getLogger(__name__)

LAMBDA = 1e-4
UV_EDGE_NEIGHBORS = 4


@dataclass
class ModelB:
    tphi: nn.MlpSpec
    phi: nn.MlpSpec
    params: np.ndarray

    def __post_init__(self):
        if self.tphi.widths[-1] != self.phi.n_params:
            raise ShapeError("T_phi output must match the phi parameter count")
        if self.phi.widths[0] != 5 or self.phi.widths[-1] != 3:
            raise ShapeError("phi maps (u, v, px, py, pz) rows to 3D points")

    @classmethod
    def create(cls, latent_dim: int, seed: int = 0, hyper_hidden=(256,), phi_hidden=(64, 64),
               activation: str = "tanh") -> "ModelB":
        phi = nn.MlpSpec((5, *phi_hidden, 3), activation)
        tphi = nn.MlpSpec((latent_dim, *hyper_hidden, phi.n_params))
        return cls(tphi, phi, nn.init_params(tphi, np.random.default_rng([seed, 2])))


@dataclass
class Patch:
    mesh: TriMesh
    condition: np.ndarray
    m: int


def conditioned_batch(uv, p) -> np.ndarray:
    """Rows ``(u, v, px, py, pz)``, one per UV sample, in input order."""
    uv = np.asarray(uv, dtype=np.float64).reshape(-1, 2)
    if np.any(uv < 0.0) or np.any(uv > 1.0):
        raise ParameterError("uv samples must lie in [0, 1]^2")
    p = np.asarray(p, dtype=np.float64).reshape(3)
    return np.concatenate([uv, np.broadcast_to(p, (len(uv), 3))], axis=1)


def neighborhood(cloud, p_index: int, k: int, index: SpatialIndex | None = None) -> np.ndarray:
    """The ``k`` points of ``cloud`` closest to ``cloud[p_index]``, the point itself first."""
    cloud = as_cloud(cloud)
    index = index or SpatialIndex(cloud)
    return cloud[index.knn(cloud[p_index], k)]


def phi_weights(model: ModelB, z) -> np.ndarray:
    return nn.forward(model.tphi, model.params, np.asarray(z, dtype=np.float64)[None])[0]


def phi_points(model: ModelB, w_phi: np.ndarray, uv, p) -> np.ndarray:
    return nn.forward(model.phi, w_phi, conditioned_batch(uv, p))


def phi_patch(model: ModelB, z, p, m: int, w_phi=None) -> Patch:
    """Patch mesh: the ``m x m`` UV grid pushed through ``phi`` conditioned on ``p``."""
    grid = uv_grid(m)
    w_phi = phi_weights(model, z) if w_phi is None else w_phi
    verts = phi_points(model, w_phi, grid.vertices, p)
    return Patch(TriMesh(verts, grid.triangles), np.asarray(p, dtype=np.float64), m)


def local_loss(patch: Patch, target, lam: float = LAMBDA) -> float:
    """Chamfer to the target neighbourhood plus ``lam`` times the squared edge lengths."""
    return chamfer(patch.mesh.vertices, as_cloud(target)) + lam * edge_sq_sum(patch.mesh)


def uv_knn_edges(uv: np.ndarray, k: int = UV_EDGE_NEIGHBORS) -> np.ndarray:
    """Undirected edges joining each UV sample to its ``k`` nearest fellow samples."""
    n = len(uv)
    k = min(k, n - 1)
    if k < 1:
        return np.zeros((0, 2), dtype=np.int64)
    d = pairwise_sq(np.c_[uv, np.zeros(n)], np.c_[uv, np.zeros(n)])
    np.fill_diagonal(d, np.inf)
    nb = np.argsort(d, axis=1, kind="stable")[:, :k]
    e = np.stack([np.repeat(np.arange(n), k), nb.ravel()], axis=1)
    e.sort(axis=1)
    return np.unique(e, axis=0)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainBConfig:
    k: int = 16
    lam: float = LAMBDA
    uv_samples: int = 32
    patches: int = 64
    epochs: int = 300
    lr: float = 1e-3
    seed: int = 0
    neighbors_from: str = "input"

    def __post_init__(self):
        if self.k < 3:
            raise ParameterError("neighbourhood size k must be at least 3")
        if self.lam < 0:
            raise ParameterError("lambda must be non-negative")
        if min(self.uv_samples, self.patches, self.epochs) < 1 or self.lr <= 0:
            raise ParameterError("training configuration values must be positive")
        if self.neighbors_from not in ("input", "reconstruction"):
            raise ParameterError("neighbors_from must be 'input' or 'reconstruction'")


@dataclass
class PatchBatch:
    """Everything a Part B step needs for one cloud, fixed across a gradient check."""

    z: np.ndarray
    rows: np.ndarray          # (P * n, 5)
    targets: np.ndarray       # (P, k, 3)
    edges: list[np.ndarray]   # per patch (E_i, 2) local indices
    n_uv: int

    @property
    def n_patches(self) -> int:
        return len(self.targets)


def make_patch_batch(z, conditions, targets, uv, edges=None) -> PatchBatch:
    conditions = np.asarray(conditions, dtype=np.float64)
    uv = np.asarray(uv, dtype=np.float64)
    P, n = uv.shape[:2]
    rows = np.concatenate([uv, np.broadcast_to(conditions[:, None, :], (P, n, 3))], axis=2).reshape(-1, 5)
    if edges is None:
        edges = [uv_knn_edges(u) for u in uv]
    return PatchBatch(np.asarray(z, dtype=np.float64), rows, np.asarray(targets, dtype=np.float64), edges, n)


@dataclass
class _BPass:
    loss: float
    chamfer: float
    edges: float
    grad: np.ndarray
    signature: np.ndarray


def patch_pass(model: ModelB, batch: PatchBatch, lam: float, need_grad: bool = True) -> _BPass:
    """Mean local loss over a batch of patches and its gradient wrt ``model.params``."""
    w_phi, t_cache = nn.forward(model.tphi, model.params, batch.z[None], keep=True)
    w_phi = w_phi[0]
    out, p_cache = nn.forward(model.phi, w_phi, batch.rows, keep=True)
    P, n = batch.n_patches, batch.n_uv
    pts = out.reshape(P, n, 3)
    vals, g, (a, b) = batched_chamfer_with_grad(pts, batch.targets)
    edge_vals = np.zeros(P)
    for i, e in enumerate(batch.edges):
        if len(e):
            diff = pts[i, e[:, 0]] - pts[i, e[:, 1]]
            edge_vals[i] = (diff * diff).sum()
            if need_grad and lam:
                ge = 2.0 * lam * diff
                np.add.at(g[i], e[:, 0], ge)
                np.add.at(g[i], e[:, 1], -ge)
    loss = float((vals + lam * edge_vals).mean())
    sig = np.concatenate([
        nn.activation_signature(model.tphi, t_cache).astype(np.int64),
        nn.activation_signature(model.phi, p_cache).astype(np.int64),
        a.ravel(), b.ravel(),
    ])
    if not need_grad:
        return _BPass(loss, float(vals.mean()), float(edge_vals.mean()), np.zeros(0), sig)
    g_w, _ = nn.backward(model.phi, w_phi, batch.rows, g.reshape(-1, 3) / P, p_cache)
    g_t, _ = nn.backward(model.tphi, model.params, batch.z[None], g_w[None], t_cache)
    return _BPass(loss, float(vals.mean()), float(edge_vals.mean()), g_t, sig)


@dataclass
class _CloudCtx:
    cloud: np.ndarray
    z: np.ndarray
    w_t: np.ndarray
    index: SpatialIndex


def sample_patch_batch(model_a: ModelA, ctx: _CloudCtx, cfg: TrainBConfig, rng) -> PatchBatch:
    """Condition points from the reconstruction, neighbourhoods by KNN, random UV samples."""
    prior = uniform_sphere(cfg.patches, rng)
    conds = nn.forward(model_a.target, ctx.w_t, prior)
    if cfg.neighbors_from == "input":
        index, source = ctx.index, ctx.cloud
    else:
        source = nn.forward(model_a.target, ctx.w_t, uniform_sphere(len(ctx.cloud), rng))
        index = SpatialIndex(source)
    targets = source[index.knn_many(conds, cfg.k)]
    uv = rng.random((cfg.patches, cfg.uv_samples, 2))
    return make_patch_batch(ctx.z, conds, targets, uv)


@dataclass
class TrainBResult:
    model: ModelB
    losses: list[float] = field(default_factory=list)
    chamfer: list[float] = field(default_factory=list)
    edges: list[float] = field(default_factory=list)


def train_part_b(model_a: ModelA, dataset, cfg: TrainBConfig | None = None,
                 model: ModelB | None = None, log_fn=None) -> TrainBResult:
    """Fit ``T_phi`` with Part A frozen; one Adam step per epoch over all clouds."""
    cfg = cfg or TrainBConfig()
    clouds = [as_cloud(c) for c in dataset]
    if not clouds:
        raise SizeError("dataset is empty")
    for c in clouds:
        if len(c) < cfg.k:
            raise SizeError(f"clouds need at least k={cfg.k} points")
    model = model or ModelB.create(model_a.latent_dim, cfg.seed)
    ctxs = []
    for c in clouds:
        z = encode(model_a, c)
        ctxs.append(_CloudCtx(c, z, target_weights(model_a, z), SpatialIndex(c)))
    rng = np.random.default_rng([cfg.seed, 3])
    theta = model.params.copy()
    state = nn.AdamState.zeros(len(theta), lr=cfg.lr)
    result = TrainBResult(model)
    for epoch in range(cfg.epochs):
        current = ModelB(model.tphi, model.phi, theta)
        grad = np.zeros_like(theta)
        tot = cd = ed = 0.0
        for ctx in ctxs:
            batch = sample_patch_batch(model_a, ctx, cfg, rng)
            p = patch_pass(current, batch, cfg.lam)
            if not np.isfinite(p.loss):
                raise NumericError(f"non-finite local loss at epoch {epoch}")
            grad += p.grad
            tot += p.loss
            cd += p.chamfer
            ed += p.edges
        theta, state = nn.adam_step(theta, grad / len(ctxs), state)
        result.losses.append(tot / len(ctxs))
        result.chamfer.append(cd / len(ctxs))
        result.edges.append(ed / len(ctxs))
        if log_fn:
            log_fn(epoch, result.losses[-1])
        log.debug("part B epoch %d loss %.6g", epoch, result.losses[-1])
    result.model = ModelB(model.tphi, model.phi, theta)
    return result


def mean_patch_edge_sq(model_a: ModelA, model_b: ModelB, cloud_or_z, m: int = 5, n_patches: int = 64,
                       seed: int = 0) -> float:
    """Average ``edge_sq_sum`` of grid patches at reconstructed condition points."""
    z = _latent(model_a, cloud_or_z)
    w = phi_weights(model_b, z)
    conds = reconstruct(model_a, z, n_patches, seed)
    return float(np.mean([edge_sq_sum(phi_patch(model_b, z, p, m, w).mesh) for p in conds]))


# ---------------------------------------------------------------------------
# global meshes


@dataclass
class Assembly:
    mesh: TriMesh
    conditions: np.ndarray
    patches: list[Patch] = field(default_factory=list)


def _closed_assembly(model_a: ModelA, model_b: ModelB, z, r: int, m: int) -> Assembly:
    n = r - 1
    step = m - 1
    fine = cube_lattice(n * step)
    w_t = target_weights(model_a, z)
    w_phi = phi_weights(model_b, z)
    coords = fine.coords
    N = n * step
    # owner face: the first face (fixed order) containing the lattice point
    face = np.full(len(coords), -1)
    for f, (axis, side, _, _) in enumerate(_CUBE_FACES):
        on = (coords[:, axis] == side * N) & (face < 0)
        face[on] = f
    corners = np.zeros((len(coords), 4, 3), dtype=np.int64)
    uv = np.zeros((len(coords), 2))
    for f, (axis, side, ua, va) in enumerate(_CUBE_FACES):
        sel = face == f
        iu, iv = coords[sel, ua], coords[sel, va]
        ci = np.minimum(iu // step, n - 1)
        cj = np.minimum(iv // step, n - 1)
        uv[sel, 0] = (iu - ci * step) / step
        uv[sel, 1] = (iv - cj * step) / step
        for c, (di, dj) in enumerate(((0, 0), (1, 0), (1, 1), (0, 1))):
            corner = np.zeros((sel.sum(), 3), dtype=np.int64)
            corner[:, axis] = side * n
            corner[:, ua] = ci + di
            corner[:, va] = cj + dj
            corners[sel, c] = corner
    anchors = nn.forward(model_a.target, w_t, lattice_to_sphere(corners.reshape(-1, 3), n)).reshape(-1, 4, 3)
    u, v = uv[:, 0], uv[:, 1]
    weights = np.stack([(1 - u) * (1 - v), u * (1 - v), u * v, (1 - u) * v], axis=1)
    rows = np.concatenate([np.repeat(uv[:, None, :], 4, axis=1), anchors], axis=2).reshape(-1, 5)
    evals = nn.forward(model_b.phi, w_phi, rows).reshape(-1, 4, 3)
    verts = (weights[:, :, None] * evals).sum(axis=1)
    coarse = cube_lattice(n)
    conds = nn.forward(model_a.target, w_t, lattice_to_sphere(coarse.coords, n))
    return Assembly(TriMesh(verts, quads_to_triangles(fine.quads)), conds)


def assemble_mesh(model_a: ModelA, model_b: ModelB, cloud_or_z, mode: str = "closed", r: int = 8,
                  m: int = 4, epsilon: float = 0.0, n_patches: int = 64, seed: int = 0) -> Assembly:
    """Global mesh from the continuous atlas.

    ``closed``: each quad of a quad-sphere is refined into an ``m x m`` grid
    whose vertices bilinearly blend ``phi`` evaluated under the four mapped
    corners. Every refined vertex is evaluated once, so neighbouring quads
    share boundary vertices and the result keeps the sphere's closed
    topology.

    ``soup``: ``n_patches`` independent patches at reconstructed condition
    points, welded with ``epsilon``.
    """
    if r < 2 or m < 2:
        raise ParameterError("sphere and patch resolutions must be at least 2")
    z = _latent(model_a, cloud_or_z)
    if mode == "closed":
        return _closed_assembly(model_a, model_b, z, r, m)
    if mode != "soup":
        raise ParameterError(f"unknown assembly mode {mode!r}")
    w_phi = phi_weights(model_b, z)
    conds = reconstruct(model_a, z, n_patches, seed)
    patches = [phi_patch(model_b, z, p, m, w_phi) for p in conds]
    mesh = merge_meshes([p.mesh for p in patches])
    return Assembly(weld_vertices(mesh, epsilon), conds, patches)


@dataclass
class FillResult:
    mesh: TriMesh
    added: np.ndarray
    max_gap: float
    patches: list[Patch] = field(default_factory=list)


def _max_gap(reference: np.ndarray, verts: np.ndarray):
    if not len(verts):
        return np.full(len(reference), np.inf)
    return np.sqrt(pairwise_sq(reference, verts).min(axis=1))


def adaptive_fill(mesh: TriMesh, model_a: ModelA, model_b: ModelB, cloud_or_z, tau: float,
                  max_patches: int, m: int = 4, n_reference: int = 2048, epsilon: float = 0.0,
                  seed: int = 0) -> FillResult:
    """Add patches where reconstructed reference points lack nearby mesh vertices.

    Each round conditions a new patch on the reference point with the largest
    gap. Stops when every gap is within ``tau`` or ``max_patches`` patches
    have been added.
    """
    z = _latent(model_a, cloud_or_z)
    w_phi = phi_weights(model_b, z)
    ref = reconstruct(model_a, z, n_reference, seed)
    gaps = _max_gap(ref, mesh.vertices)
    added, patches = [], []
    while gaps.max() > tau and len(added) < max_patches:
        p = ref[int(np.argmax(gaps))]
        patch = phi_patch(model_b, z, p, m, w_phi)
        patches.append(patch)
        added.append(p)
        mesh = weld_vertices(merge_meshes([mesh, patch.mesh]), epsilon)
        gaps = _max_gap(ref, mesh.vertices)
    return FillResult(mesh, np.array(added).reshape(-1, 3), float(gaps.max()), patches)


# ---------------------------------------------------------------------------
# discrete atlas baseline


@dataclass
class DiscreteAtlasBaseline:
    spec: nn.MlpSpec
    params: np.ndarray  # (k_patches, n_params)
    losses: list[float] = field(default_factory=list)

    @property
    def k_patches(self) -> int:
        return len(self.params)

    def patch_meshes(self, m: int) -> list[TriMesh]:
        grid = uv_grid(m)
        return [TriMesh(nn.forward(self.spec, w, grid.vertices), grid.triangles) for w in self.params]


def discrete_atlas(cloud, k_patches: int, m: int = 5, epochs: int = 500, seed: int = 0,
                   uv_samples: int | None = None, lr: float = 1e-3, hidden=(64, 64)):
    """Independent unconditioned patch networks fitted against one global Chamfer loss.

    Returns the trained baseline and the unwelded union of its patch meshes.
    """
    if k_patches < 1:
        raise ParameterError("need at least one patch")
    cloud = as_cloud(cloud)
    spec = nn.MlpSpec((2, *hidden, 3))
    rng = np.random.default_rng([seed, 4])
    params = np.stack([nn.init_params(spec, rng) for _ in range(k_patches)])
    n_uv = uv_samples or max(1, -(-len(cloud) // k_patches))
    state = nn.AdamState.zeros(params.size, lr=lr)
    losses = []
    for _ in range(epochs):
        uv = rng.random((k_patches, n_uv, 2))
        outs, caches = [], []
        for w, u in zip(params, uv):
            o, c = nn.forward(spec, w, u, keep=True)
            outs.append(o)
            caches.append(c)
        union = np.concatenate(outs)
        val, g, _ = chamfer_with_grad(union, cloud)
        if not np.isfinite(val):
            raise NumericError("non-finite loss in discrete atlas training")
        losses.append(val)
        g = g.reshape(k_patches, n_uv, 3)
        grad = np.stack([nn.backward(spec, w, u, gi, c)[0] for w, u, gi, c in zip(params, uv, g, caches)])
        flat, state = nn.adam_step(params.ravel(), grad.ravel(), state)
        params = flat.reshape(params.shape)
    base = DiscreteAtlasBaseline(spec, params, losses)
    return base, merge_meshes(base.patch_meshes(m))
