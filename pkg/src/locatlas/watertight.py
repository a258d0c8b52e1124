"""Ray-parity watertightness of triangle meshes.

Rays are traced in double precision through an axis-aligned bounding volume
hierarchy. Traversal is breadth-first over (ray, node) pairs so that a whole
batch of rays advances through one level per numpy call.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError, ParameterError
from .geom import TriMesh, sample_surface

BARY_TOL = 1e-9
MAX_RETRIES = 8
PERTURB_ANGLE = 1e-4


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        if abs(np.linalg.norm(d) - 1.0) > 1e-12:
            raise ParameterError("ray direction must be unit length")
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))
        object.__setattr__(self, "direction", d)


class Bvh:
    """Median-split AABB tree over the triangles of a mesh."""

    def __init__(self, mesh: TriMesh, leaf_capacity: int = 4):
        if leaf_capacity < 1:
            raise ParameterError("leaf_capacity must be positive")
        self.leaf_capacity = leaf_capacity
        tri = mesh.vertices[mesh.faces]
        self._tri_lo = tri.min(axis=1)
        self._tri_hi = tri.max(axis=1)
        centroids = tri.mean(axis=1)
        lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
        # boxes are padded so that slab tests never cull a pair the kernel would hit
        self.pad = 1e-7 * max(float((hi - lo).max()), 1e-12)
        self.order = np.arange(mesh.n_faces)
        self.lo, self.hi, self.left, self.right, self.start, self.count = [], [], [], [], [], []
        if mesh.n_faces:
            self._build(0, mesh.n_faces, centroids)
        self.lo = np.array(self.lo).reshape(-1, 3)
        self.hi = np.array(self.hi).reshape(-1, 3)
        self.left = np.array(self.left, dtype=np.int64)
        self.right = np.array(self.right, dtype=np.int64)
        self.start = np.array(self.start, dtype=np.int64)
        self.count = np.array(self.count, dtype=np.int64)

    def __len__(self) -> int:
        return len(self.left)

    def _build(self, s: int, e: int, centroids: np.ndarray) -> int:
        idx = self.order[s:e]
        node = len(self.left)
        self.lo.append(self._tri_lo[idx].min(axis=0) - self.pad)
        self.hi.append(self._tri_hi[idx].max(axis=0) + self.pad)
        self.left.append(-1)
        self.right.append(-1)
        self.start.append(s)
        self.count.append(e - s)
        if e - s <= self.leaf_capacity:
            return node
        c = centroids[idx]
        axis = int(np.argmax(c.max(axis=0) - c.min(axis=0)))
        self.order[s:e] = idx[np.argsort(c[:, axis], kind="stable")]
        mid = s + (e - s) // 2
        self.count[node] = 0
        self.left[node] = self._build(s, mid, centroids)
        self.right[node] = self._build(mid, e, centroids)
        return node

    def candidate_pairs(self, origins: np.ndarray, dirs: np.ndarray):
        """(ray, triangle) pairs whose leaf boxes the rays' half-lines touch."""
        if not len(self.left):
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        safe = np.where(np.abs(dirs) < 1e-300, 1e-300, dirs)
        inv = 1.0 / safe
        ray = np.arange(len(origins))
        node = np.zeros(len(origins), dtype=np.int64)
        out_r, out_t = [], []
        while len(ray):
            o, iv = origins[ray], inv[ray]
            t1 = (self.lo[node] - o) * iv
            t2 = (self.hi[node] - o) * iv
            tmin = np.minimum(t1, t2).max(axis=1)
            tmax = np.maximum(t1, t2).min(axis=1)
            hit = tmax >= np.maximum(tmin, 0.0)
            ray, node = ray[hit], node[hit]
            leaf = self.left[node] < 0
            if leaf.any():
                lr, ln = ray[leaf], node[leaf]
                cnt = self.count[ln]
                rep_r = np.repeat(lr, cnt)
                offs = np.arange(cnt.sum()) - np.repeat(np.cumsum(cnt) - cnt, cnt)
                out_r.append(rep_r)
                out_t.append(self.order[np.repeat(self.start[ln], cnt) + offs])
            inner = ~leaf
            ray = np.concatenate([ray[inner], ray[inner]])
            node = np.concatenate([self.left[node[inner]], self.right[node[inner]]])
        if not out_r:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        return np.concatenate(out_r), np.concatenate(out_t)


def intersect_pairs(mesh: TriMesh, origins, dirs, ray_idx, tri_idx, t_min: float = 0.0):
    """Moller-Trumbore on explicit (ray, triangle) pairs.

    Returns boolean arrays ``hit`` (clean interior crossing) and ``degenerate``
    (crossing within ``BARY_TOL`` of an edge or vertex, or a ray lying in the
    triangle's plane).
    """
    o = origins[ray_idx]
    d = dirs[ray_idx]
    f = mesh.faces[tri_idx]
    v0 = mesh.vertices[f[:, 0]]
    e1 = mesh.vertices[f[:, 1]] - v0
    e2 = mesh.vertices[f[:, 2]] - v0
    pvec = np.cross(d, e2)
    det = (e1 * pvec).sum(axis=1)
    scale = np.linalg.norm(e1, axis=1) * np.linalg.norm(e2, axis=1)
    parallel = np.abs(det) <= 1e-14 * scale
    tvec = o - v0
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / np.where(parallel, 1.0, det)
        u = (tvec * pvec).sum(axis=1) * inv
        qvec = np.cross(tvec, e1)
        v = (d * qvec).sum(axis=1) * inv
        t = (e2 * qvec).sum(axis=1) * inv
    w = 1.0 - u - v
    m = np.minimum(np.minimum(u, v), w)
    ahead = t > t_min
    hit = ~parallel & ahead & (m > BARY_TOL)
    degen = ~parallel & ahead & (np.abs(m) <= BARY_TOL)
    # a ray travelling inside the triangle's plane is ambiguous
    nrm = np.cross(e1, e2)
    nn = np.linalg.norm(nrm, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        plane_dist = np.abs((tvec * nrm).sum(axis=1)) / nn
    degen |= parallel & (nn > 0) & (plane_dist <= 1e-9 * np.sqrt(np.maximum(scale, 1e-300)))
    return hit, degen


def _count(mesh, origins, dirs, ray_idx, tri_idx, t_min):
    n = len(origins)
    if not len(ray_idx):
        return np.zeros(n, dtype=np.int64), np.zeros(n, dtype=bool)
    hit, degen = intersect_pairs(mesh, origins, dirs, ray_idx, tri_idx, t_min)
    counts = np.bincount(ray_idx[hit], minlength=n)
    bad = np.bincount(ray_idx[degen], minlength=n) > 0
    return counts, bad


def crossings_bvh(bvh: Bvh, mesh: TriMesh, origins, dirs, t_min: float = 0.0, chunk: int = 4096):
    """Crossing counts and degenerate flags for many rays using the BVH."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    counts = np.zeros(len(origins), dtype=np.int64)
    bad = np.zeros(len(origins), dtype=bool)
    for s in range(0, len(origins), chunk):
        o, d = origins[s:s + chunk], dirs[s:s + chunk]
        r, t = bvh.candidate_pairs(o, d)
        counts[s:s + chunk], bad[s:s + chunk] = _count(mesh, o, d, r, t, t_min)
    return counts, bad


def crossings_brute(mesh: TriMesh, origins, dirs, t_min: float = 0.0, chunk: int = 256):
    """Reference crossing counts testing every ray against every triangle."""
    origins = np.asarray(origins, dtype=np.float64).reshape(-1, 3)
    dirs = np.asarray(dirs, dtype=np.float64).reshape(-1, 3)
    counts = np.zeros(len(origins), dtype=np.int64)
    bad = np.zeros(len(origins), dtype=bool)
    nf = mesh.n_faces
    for s in range(0, len(origins), chunk):
        o, d = origins[s:s + chunk], dirs[s:s + chunk]
        r = np.repeat(np.arange(len(o)), nf)
        t = np.tile(np.arange(nf), len(o))
        counts[s:s + chunk], bad[s:s + chunk] = _count(mesh, o, d, r, t, t_min)
    return counts, bad


def ray_crossings(bvh: Bvh, mesh: TriMesh, ray: Ray):
    """Crossing count ``c(r)`` of one ray and whether it grazed an edge or vertex."""
    c, bad = crossings_bvh(bvh, mesh, ray.origin[None], ray.direction[None])
    return int(c[0]), bool(bad[0])


@dataclass
class WtConfig:
    rays: int = 100_000
    seed: int = 0
    perturb_angle: float = PERTURB_ANGLE
    origin_offset: float = 2.0
    max_retries: int = MAX_RETRIES
    surface_origin: bool = False
    leaf_capacity: int = 4
    threads: int = 1

    def __post_init__(self):
        if self.rays < 1:
            raise ParameterError("ray count must be at least 1")


@dataclass
class WtResult:
    ratio: float
    rays: int
    degenerate: int
    unresolved: int
    origins: np.ndarray
    directions: np.ndarray
    crossings: np.ndarray
    retries: np.ndarray
    passed: np.ndarray


def _perturb(dirs: np.ndarray, rng: np.random.Generator, max_angle: float) -> np.ndarray:
    a = rng.standard_normal(dirs.shape)
    a -= (a * dirs).sum(axis=1, keepdims=True) * dirs
    a /= np.linalg.norm(a, axis=1, keepdims=True)
    theta = max_angle * (0.5 + 0.5 * rng.random(len(dirs)))[:, None]
    out = dirs * np.cos(theta) + np.cross(a, dirs) * np.sin(theta)
    return out / np.linalg.norm(out, axis=1, keepdims=True)


def cast_origins(mesh: TriMesh, points: np.ndarray, normals: np.ndarray, offset: float) -> np.ndarray:
    """Push each point along its normal until it sits ``offset`` bounding radii from the center."""
    center, radius = mesh.bounding_sphere()
    q = points - center
    b = (q * normals).sum(axis=1)
    c = (q * q).sum(axis=1) - (offset * radius) ** 2
    t = -b + np.sqrt(np.maximum(b * b - c, 0.0))
    return points + t[:, None] * normals


def watertightness(mesh: TriMesh, cfg: WtConfig | None = None, crossings=None) -> WtResult:
    """Fraction of surface-targeted rays whose crossing count is even.

    ``crossings`` may replace the BVH counter (used to validate against the
    brute-force enumerator); it must accept ``(origins, dirs, t_min)``.
    """
    cfg = cfg or WtConfig()
    pts, _, normals = sample_surface(mesh, cfg.rays, cfg.seed)
    if cfg.surface_origin:
        origins, t_min = pts, 1e-9 * max(mesh.bounding_sphere()[1], 1e-12)
    else:
        origins, t_min = cast_origins(mesh, pts, normals, cfg.origin_offset), 0.0
    dirs = -normals
    if crossings is None:
        bvh = Bvh(mesh, cfg.leaf_capacity)

        def crossings(o, d, tm):
            return _parallel_counts(bvh, mesh, o, d, tm, cfg.threads)

    counts, bad = crossings(origins, dirs, t_min)
    n_degen = int(bad.sum())
    retries = np.zeros(cfg.rays, dtype=np.int64)
    final_dirs = dirs.copy()
    rng = np.random.default_rng([cfg.seed, 0x5EED])
    pending = np.flatnonzero(bad)
    for _ in range(cfg.max_retries):
        if not len(pending):
            break
        nd = _perturb(dirs[pending], rng, cfg.perturb_angle)
        c, b = crossings(origins[pending], nd, t_min)
        retries[pending] += 1
        final_dirs[pending] = nd
        counts[pending] = c
        pending = pending[b]
    passed = counts % 2 == 0
    passed[pending] = False
    return WtResult(
        ratio=float(passed.sum() / cfg.rays),
        rays=cfg.rays,
        degenerate=n_degen,
        unresolved=len(pending),
        origins=origins,
        directions=final_dirs,
        crossings=counts,
        retries=retries,
        passed=passed,
    )


def _parallel_counts(bvh, mesh, origins, dirs, t_min, threads):
    if threads <= 1 or len(origins) < 8192:
        return crossings_bvh(bvh, mesh, origins, dirs, t_min)
    bounds = np.linspace(0, len(origins), threads + 1).astype(int)
    with ThreadPoolExecutor(threads) as pool:
        parts = list(pool.map(
            lambda se: crossings_bvh(bvh, mesh, origins[se[0]:se[1]], dirs[se[0]:se[1]], t_min),
            zip(bounds[:-1], bounds[1:]),
        ))
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def wt(mesh: TriMesh, cfg: WtConfig | None = None) -> float:
    return watertightness(mesh, cfg).ratio
