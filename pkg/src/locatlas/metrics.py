"""Point-cloud distances and set-level generative metrics."""

from __future__ import annotations

import enum
import logging

import numpy as np

from .errors import CapacityError, SizeError
from .geom import as_cloud

log = logging.getLogger(__name__)

EMD_EXACT_MAX = 512
JSD_GRID = 28

_CHUNK = 1 << 22


class DistanceKind(str, enum.Enum):
    CD = "CD"
    EMD = "EMD"


def pairwise_sq(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances, computed from explicit differences.

    Differencing (rather than the ``|a|^2 - 2ab + |b|^2`` expansion) keeps the
    result exactly symmetric and exactly zero on coincident points.
    """
    out = np.empty((len(a), len(b)))
    step = max(1, _CHUNK // max(1, 3 * len(b)))
    for s in range(0, len(a), step):
        d = a[s:s + step, None, :] - b[None, :, :]
        out[s:s + step] = (d * d).sum(axis=2)
    return out


def chamfer(a, b) -> float:
    """Symmetric Chamfer distance with squared distances and per-side means."""
    a, b = as_cloud(a), as_cloud(b)
    d = pairwise_sq(a, b)
    return float(d.min(axis=1).mean() + d.min(axis=0).mean())


def chamfer_with_grad(pred: np.ndarray, target: np.ndarray):
    """Chamfer value and its gradient with respect to ``pred``.

    Nearest neighbours are taken by ``argmin`` (lowest index on ties). Also
    returns the two assignment arrays so callers can detect assignment flips.
    """
    d = pairwise_sq(pred, target)
    nn_p = d.argmin(axis=1)
    nn_t = d.argmin(axis=0)
    n, m = len(pred), len(target)
    value = d[np.arange(n), nn_p].mean() + d[nn_t, np.arange(m)].mean()
    grad = 2.0 * (pred - target[nn_p]) / n
    np.add.at(grad, nn_t, 2.0 * (pred[nn_t] - target) / m)
    return float(value), grad, (nn_p, nn_t)


def batched_chamfer_with_grad(pred: np.ndarray, target: np.ndarray):
    """Chamfer over a batch of ``(B, n, 3)`` vs ``(B, m, 3)`` pairs.

    Returns per-pair values ``(B,)``, gradients ``(B, n, 3)`` and the stacked
    assignments.
    """
    d = pred[:, :, None, :] - target[:, None, :, :]
    d = (d * d).sum(axis=3)
    B, n, m = d.shape
    nn_p = d.argmin(axis=2)
    nn_t = d.argmin(axis=1)
    bi = np.arange(B)[:, None]
    vals = d[bi, np.arange(n)[None], nn_p].mean(axis=1) + d[bi, nn_t, np.arange(m)[None]].mean(axis=1)
    grad = 2.0 * (pred - target[bi, nn_p]) / n
    back = 2.0 * (pred[bi, nn_t] - target) / m
    np.add.at(grad, (np.broadcast_to(bi, nn_t.shape), nn_t), back)
    return vals, grad, (nn_p, nn_t)


# ---------------------------------------------------------------------------
# earth mover's distance


def _cost_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(pairwise_sq(a, b))


def linear_assignment(cost: np.ndarray) -> np.ndarray:
    """Minimum-cost perfect matching of a square cost matrix.

    Shortest augmenting paths with row/column potentials (Hungarian method),
    ``O(n^3)``; the inner scan over columns is vectorized. Returns ``col`` with
    row ``i`` assigned to column ``col[i]``.
    """
    cost = np.asarray(cost, dtype=np.float64)
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise SizeError("cost matrix must be square")
    # 1-based columns; column 0 is the virtual start of each augmenting path
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    for i in range(1, n + 1):
        owner[0] = i
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            cur = cost[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1
    col = np.empty(n, dtype=np.int64)
    col[owner[1:] - 1] = np.arange(n)
    return col


def _check_pair(a, b):
    a, b = as_cloud(a), as_cloud(b)
    if len(a) != len(b):
        raise SizeError(f"EMD needs equal cloud sizes, got {len(a)} and {len(b)}")
    return a, b


def emd_exact(a, b) -> float:
    """Exact EMD: mean Euclidean cost of the optimal bijection."""
    a, b = _check_pair(a, b)
    n = len(a)
    if n > EMD_EXACT_MAX:
        raise CapacityError(f"emd_exact supports n <= {EMD_EXACT_MAX} (got {n}); use emd_approx")
    c = _cost_matrix(a, b)
    col = linear_assignment(c)
    return float(c[np.arange(n), col].sum() / n)


def _auction(cost: np.ndarray, iterations: int, rel_tol: float):
    n = len(cost)
    scale = float(cost.max())
    assigned = np.full(n, -1, dtype=np.int64)
    if scale == 0.0 or n == 1:
        return np.arange(n)
    prices = np.zeros(n)
    eps = scale / 4.0
    eps_min = scale * 1e-15
    rounds = 0
    rows = np.arange(n)
    while True:
        assigned[:] = -1
        owner = np.full(n, -1, dtype=np.int64)
        while rounds < iterations:
            free = np.flatnonzero(assigned < 0)
            if not len(free):
                break
            vals = -cost[free] - prices
            j1 = vals.argmax(axis=1)
            v1 = vals[np.arange(len(free)), j1]
            vals[np.arange(len(free)), j1] = -np.inf
            v2 = vals.max(axis=1)
            bids = prices[j1] + (v1 - v2) + eps
            # highest bid per object wins; lowest bidder index breaks ties
            order = np.lexsort((free, -bids, j1))
            first = np.ones(len(order), dtype=bool)
            first[1:] = j1[order][1:] != j1[order][:-1]
            win = order[first]
            objs = j1[win]
            prev = owner[objs]
            assigned[prev[prev >= 0]] = -1
            owner[objs] = free[win]
            assigned[free[win]] = objs
            prices[objs] = bids[win]
            rounds += 1
        if np.any(assigned < 0):
            # budget exhausted mid-phase: complete with any bijection
            taken = np.zeros(n, dtype=bool)
            taken[assigned[assigned >= 0]] = True
            assigned[assigned < 0] = np.flatnonzero(~taken)
            return assigned
        primal = cost[rows, assigned].sum()
        dual = (cost + prices).min(axis=1).sum() - prices.sum()
        gap = primal - dual
        if gap <= max(rel_tol * dual, 1e-12 * scale) or eps <= eps_min or rounds >= iterations:
            return assigned
        eps = max(eps / 5.0, eps_min)


def emd_approx(a, b, iterations: int = 200_000, rel_tol: float = 5e-3) -> float:
    """Auction-algorithm EMD with epsilon scaling.

    The returned value is the cost of a genuine bijection, so it never falls
    below the exact EMD. Scaling stops once the duality gap is within
    ``rel_tol`` of the dual bound.
    """
    a, b = _check_pair(a, b)
    c = _cost_matrix(a, b)
    col = _auction(c, iterations, rel_tol)
    return float(c[np.arange(len(a)), col].sum() / len(a))


def emd(a, b) -> float:
    """Exact EMD when the size allows, auction approximation otherwise."""
    return emd_exact(a, b) if len(a) <= EMD_EXACT_MAX else emd_approx(a, b)


# ---------------------------------------------------------------------------
# set-level metrics


def _as_set(clouds) -> list[np.ndarray]:
    clouds = [as_cloud(c) for c in clouds]
    if not clouds:
        raise SizeError("cloud set is empty")
    n = len(clouds[0])
    if any(len(c) != n for c in clouds):
        raise SizeError("clouds in a set must share one size")
    return clouds


def distance_matrix(gen, ref, kind: DistanceKind | str = DistanceKind.CD) -> np.ndarray:
    """``d[i, j] = d(gen[i], ref[j])`` for the chosen distance kind."""
    gen, ref = _as_set(gen), _as_set(ref)
    if len(gen[0]) != len(ref[0]):
        raise SizeError("generated and reference clouds differ in size")
    fn = chamfer if DistanceKind(kind) is DistanceKind.CD else emd
    out = np.empty((len(gen), len(ref)))
    for i, g in enumerate(gen):
        for j, r in enumerate(ref):
            out[i, j] = fn(g, r)
    return out


def mmd(gen, ref, kind: DistanceKind | str = DistanceKind.CD, dists=None) -> float:
    """Minimum matching distance: mean over references of the closest generated cloud."""
    d = distance_matrix(gen, ref, kind) if dists is None else dists
    return float(d.min(axis=0).mean())


def cov(gen, ref, kind: DistanceKind | str = DistanceKind.CD, dists=None) -> float:
    """Coverage: fraction of references that are some generated cloud's nearest."""
    d = distance_matrix(gen, ref, kind) if dists is None else dists
    return len(np.unique(d.argmin(axis=1))) / d.shape[1]


def occupancy_histogram(clouds, grid: int = JSD_GRID):
    """Pooled ``grid**3`` voxel counts over ``[-1, 1]^3``.

    Points outside the cube are clamped into boundary voxels; the number of
    such points is returned alongside the counts.
    """
    pts = np.concatenate([as_cloud(c) for c in clouds])
    outside = int(np.any(np.abs(pts) > 1.0, axis=1).sum())
    idx = np.floor((pts + 1.0) * 0.5 * grid).astype(np.int64)
    idx = np.clip(idx, 0, grid - 1)
    flat = (idx[:, 0] * grid + idx[:, 1]) * grid + idx[:, 2]
    return np.bincount(flat, minlength=grid ** 3).astype(np.float64), outside


def js_divergence(p: np.ndarray, q: np.ndarray) -> float:
    """Jensen-Shannon divergence (natural log) of two histograms."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    p = p / p.sum()
    q = q / q.sum()
    m = 0.5 * (p + q)

    def kl(x):
        nz = x > 0
        return float((x[nz] * np.log(x[nz] / m[nz])).sum())

    val = 0.5 * kl(p) + 0.5 * kl(q)
    return float(min(max(val, 0.0), np.log(2.0)))


def jsd(gen, ref, grid: int = JSD_GRID) -> float:
    hp, out_p = occupancy_histogram(gen, grid)
    hq, out_q = occupancy_histogram(ref, grid)
    if out_p or out_q:
        log.warning("jsd: clamped %d generated and %d reference points outside [-1, 1]^3", out_p, out_q)
    return js_divergence(hp, hq)
