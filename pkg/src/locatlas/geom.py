"""Geometric primitives shared across the package.

Point clouds are plain ``(n, 3)`` float64 arrays; meshes are :class:`TriMesh`
instances holding vertex and face arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import GeometryError, ParameterError, SizeError


def as_cloud(points) -> np.ndarray:
    """Validate and return a point cloud as a contiguous ``(n, 3)`` float64 array."""
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise SizeError(f"point cloud must have shape (n, 3), got {pts.shape}")
    if pts.shape[0] == 0:
        raise SizeError("point cloud is empty")
    if not np.all(np.isfinite(pts)):
        raise GeometryError("point cloud contains non-finite coordinates")
    return pts


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Indexed triangle mesh. Edges are derived from faces on demand."""

    vertices: np.ndarray
    faces: np.ndarray
    _checked: bool = field(default=False, repr=False)

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size:
            if f.min() < 0 or f.max() >= len(v):
                raise GeometryError("face index out of range")
            if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
                raise GeometryError("face repeats a vertex index")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @cached_property
    def edges(self) -> np.ndarray:
        """Unique unordered vertex index pairs ``(i, j)`` with ``i < j``, sorted."""
        if not self.n_faces:
            return np.zeros((0, 2), dtype=np.int64)
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        return np.unique(e, axis=0)

    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + self.n_faces

    def edge_face_counts(self) -> np.ndarray:
        """Number of faces bordering each edge of :attr:`edges`."""
        e = np.concatenate([self.faces[:, [0, 1]], self.faces[:, [1, 2]], self.faces[:, [2, 0]]])
        e.sort(axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_closed_manifold(self) -> bool:
        """True when every edge borders exactly two faces."""
        return self.n_faces > 0 and bool(np.all(self.edge_face_counts() == 2))

    def face_areas(self) -> np.ndarray:
        return 0.5 * np.linalg.norm(self._face_cross(), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals following face winding; zero rows for degenerate faces."""
        c = self._face_cross()
        norm = np.linalg.norm(c, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            n = np.where(norm > 0, c / norm, 0.0)
        return n

    def _face_cross(self) -> np.ndarray:
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return np.cross(b - a, c - a)

    def bounding_sphere(self) -> tuple[np.ndarray, float]:
        """Center of the bounding box and the radius enclosing every vertex."""
        lo, hi = self.vertices.min(axis=0), self.vertices.max(axis=0)
        center = 0.5 * (lo + hi)
        radius = float(np.sqrt(((self.vertices - center) ** 2).sum(axis=1).max()))
        return center, radius

    def transformed(self, rotation=None, translation=None) -> "TriMesh":
        v = self.vertices
        if rotation is not None:
            v = v @ np.asarray(rotation, dtype=np.float64).T
        if translation is not None:
            v = v + np.asarray(translation, dtype=np.float64)
        return TriMesh(v, self.faces.copy())


def merge_meshes(meshes) -> TriMesh:
    """Concatenate meshes without sharing any vertices."""
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += m.n_vertices
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    return TriMesh(np.concatenate(verts), np.concatenate(faces))


# ---------------------------------------------------------------------------
# spatial index


def _sq_dists(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    d = points - q
    return (d * d).sum(axis=1)


def brute_knn(points: np.ndarray, query, k: int) -> np.ndarray:
    """Reference k-nearest scan; ties go to the lower index."""
    points = np.asarray(points, dtype=np.float64)
    if k < 1 or k > len(points):
        raise SizeError(f"k={k} outside [1, {len(points)}]")
    d = _sq_dists(points, np.asarray(query, dtype=np.float64))
    order = np.lexsort((np.arange(len(points)), d))
    return order[:k]


class SpatialIndex:
    """Balanced kd-tree over a point cloud.

    Leaves hold at most ``leaf_size`` points; splits are at the median of the
    widest axis. Query results match :func:`brute_knn` exactly, including the
    lower-index tie rule.
    """

    def __init__(self, points, leaf_size: int = 16):
        if leaf_size < 1:
            raise ParameterError("leaf_size must be positive")
        self.points = as_cloud(points)
        self.leaf_size = leaf_size
        n = len(self.points)
        self._perm = np.arange(n)
        # node arrays: split dim (-1 for leaf), split value, children, leaf slice
        self._dim: list[int] = []
        self._val: list[float] = []
        self._left: list[int] = []
        self._right: list[int] = []
        self._lo: list[int] = []
        self._hi: list[int] = []
        self._build(0, n)
        self._dim_a = np.array(self._dim)

    def __len__(self) -> int:
        return len(self.points)

    def _new_node(self, lo: int, hi: int) -> int:
        self._dim.append(-1)
        self._val.append(0.0)
        self._left.append(-1)
        self._right.append(-1)
        self._lo.append(lo)
        self._hi.append(hi)
        return len(self._dim) - 1

    def _build(self, lo: int, hi: int) -> int:
        node = self._new_node(lo, hi)
        if hi - lo <= self.leaf_size:
            return node
        idx = self._perm[lo:hi]
        pts = self.points[idx]
        dim = int(np.argmax(pts.max(axis=0) - pts.min(axis=0)))
        mid = (hi - lo) // 2
        order = np.argsort(pts[:, dim], kind="stable")
        self._perm[lo:hi] = idx[order]
        split = float(self.points[self._perm[lo + mid], dim])
        self._dim[node] = dim
        self._val[node] = split
        left = self._build(lo, lo + mid)
        right = self._build(lo + mid, hi)
        self._left[node] = left
        self._right[node] = right
        return node

    def knn(self, query, k: int) -> np.ndarray:
        """Indices of the ``k`` nearest points, ascending by distance."""
        n = len(self.points)
        if k < 1 or k > n:
            raise SizeError(f"k={k} outside [1, {n}]")
        q = np.asarray(query, dtype=np.float64).reshape(3)
        best_d = np.empty(0)
        best_i = np.empty(0, dtype=np.int64)
        # stack of (node, lower bound on squared distance to the node's region)
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            if len(best_d) == k and bound > best_d[-1]:
                continue
            dim = self._dim[node]
            if dim < 0:
                idx = self._perm[self._lo[node]:self._hi[node]]
                d = _sq_dists(self.points[idx], q)
                cand_d = np.concatenate([best_d, d])
                cand_i = np.concatenate([best_i, idx])
                order = np.lexsort((cand_i, cand_d))[:k]
                best_d, best_i = cand_d[order], cand_i[order]
                continue
            diff = q[dim] - self._val[node]
            near, far = (self._left[node], self._right[node]) if diff < 0 else (self._right[node], self._left[node])
            # points equal to the split value may sit on either side
            stack.append((far, max(bound, diff * diff)))
            stack.append((near, bound))
        return best_i

    def knn_many(self, queries, k: int) -> np.ndarray:
        queries = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        return np.stack([self.knn(q, k) for q in queries]) if len(queries) else np.zeros((0, k), dtype=np.int64)


def knn(index: SpatialIndex, query, k: int) -> np.ndarray:
    return index.knn(query, k)


# ---------------------------------------------------------------------------
# sampling and generators


def sample_surface(mesh: TriMesh, n: int, seed: int):
    """Area-weighted uniform samples on a triangle mesh.

    Returns
    -------
    points : (n, 3) array
    face_index : (n,) int array
    normals : (n, 3) unit normals of the source faces
    """
    areas = mesh.face_areas() if mesh.n_faces else np.zeros(0)
    total = areas.sum()
    if not total > 0:
        raise GeometryError("mesh has no face with positive area")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(areas)
    r = rng.random(n) * cdf[-1]
    face = np.searchsorted(cdf, r, side="right")
    face = np.minimum(face, mesh.n_faces - 1)
    # searchsorted can only land on zero-area faces at exact cdf ties; step past them
    while np.any(areas[face] == 0):
        bad = areas[face] == 0
        face[bad] = np.minimum(face[bad] + 1, mesh.n_faces - 1)
    r1 = np.sqrt(rng.random(n))
    r2 = rng.random(n)
    w0 = 1.0 - r1
    w1 = r1 * (1.0 - r2)
    w2 = r1 * r2
    tri = mesh.vertices[mesh.faces[face]]
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    normals = mesh.face_normals()[face]
    return pts, face, normals


def uniform_sphere(n: int, seed) -> np.ndarray:
    """``n`` points uniform on the unit sphere."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    x = rng.standard_normal((n, 3))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


# cube faces as (normal axis, side, u axis, v axis) with u x v pointing outward
_CUBE_FACES = (
    (0, 0, 2, 1),
    (0, 1, 1, 2),
    (1, 0, 0, 2),
    (1, 1, 2, 0),
    (2, 0, 1, 0),
    (2, 1, 0, 1),
)


@dataclass(frozen=True)
class CubeLattice:
    """Surface lattice of a cube subdivided into ``n`` cells per edge.

    ``coords`` holds the unique integer lattice vertices in ``[0, n]^3``;
    ``quads`` holds, per cube face, cells as vertex-index quadruples ordered
    counter-clockwise seen from outside, together with the cell's face id and
    its (row, column) position.
    """

    n: int
    coords: np.ndarray
    quads: np.ndarray
    quad_face: np.ndarray
    quad_cell: np.ndarray


def cube_lattice(n: int) -> CubeLattice:
    if n < 1:
        raise ParameterError("cube lattice needs at least one cell per edge")
    lookup: dict[tuple[int, int, int], int] = {}
    coords: list[tuple[int, int, int]] = []

    def vid(c):
        key = (int(c[0]), int(c[1]), int(c[2]))
        i = lookup.get(key)
        if i is None:
            i = lookup[key] = len(coords)
            coords.append(key)
        return i

    quads, qface, qcell = [], [], []
    for f, (axis, side, ua, va) in enumerate(_CUBE_FACES):
        grid = np.empty((n + 1, n + 1), dtype=np.int64)
        for i in range(n + 1):
            for j in range(n + 1):
                c = [0, 0, 0]
                c[axis] = side * n
                c[ua] = i
                c[va] = j
                grid[i, j] = vid(c)
        for i in range(n):
            for j in range(n):
                quads.append((grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]))
                qface.append(f)
                qcell.append((i, j))
    return CubeLattice(
        n=n,
        coords=np.array(coords, dtype=np.int64),
        quads=np.array(quads, dtype=np.int64),
        quad_face=np.array(qface, dtype=np.int64),
        quad_cell=np.array(qcell, dtype=np.int64),
    )


def quads_to_triangles(quads: np.ndarray) -> np.ndarray:
    """Split each quad ``(a, b, c, d)`` along the ``a-c`` diagonal."""
    quads = np.asarray(quads, dtype=np.int64).reshape(-1, 4)
    t1 = quads[:, [0, 1, 2]]
    t2 = quads[:, [0, 2, 3]]
    return np.stack([t1, t2], axis=1).reshape(-1, 3)


def lattice_to_sphere(coords: np.ndarray, n: int) -> np.ndarray:
    p = 2.0 * coords / n - 1.0
    return p / np.linalg.norm(p, axis=1, keepdims=True)


def unit_sphere_quadgrid(resolution: int) -> TriMesh:
    """Closed quad-sphere: a subdivided cube projected onto the unit sphere.

    ``resolution`` is the number of grid vertices along each cube edge, so
    each cube face carries ``(resolution - 1)**2`` quads.
    """
    if resolution < 2:
        raise ParameterError("resolution must be at least 2")
    lat = cube_lattice(resolution - 1)
    verts = lattice_to_sphere(lat.coords, lat.n)
    return TriMesh(verts, quads_to_triangles(lat.quads))


def unit_cube() -> TriMesh:
    """Axis-aligned cube ``[0, 1]^3`` with 12 outward-wound triangles."""
    lat = cube_lattice(1)
    return TriMesh(lat.coords.astype(np.float64), quads_to_triangles(lat.quads))


def icosphere(subdivisions: int = 1) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
         (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    f = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
         (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
         (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in v]
    faces = list(f)
    for _ in range(subdivisions):
        cache: dict[tuple[int, int], int] = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    return TriMesh(np.array(verts), np.array(faces))


@dataclass(frozen=True)
class UvGrid:
    m: int
    vertices: np.ndarray
    quads: np.ndarray
    triangles: np.ndarray


def uv_grid(m: int) -> UvGrid:
    """Regular ``m x m`` grid over the closed unit square.

    Vertex ``(i, j)`` sits at ``(i/(m-1), j/(m-1))`` and has index ``i*m + j``.
    """
    if m < 2:
        raise ParameterError("uv grid resolution must be at least 2")
    s = np.arange(m) / (m - 1)
    uu, vv = np.meshgrid(s, s, indexing="ij")
    verts = np.stack([uu.ravel(), vv.ravel()], axis=1)
    i, j = np.meshgrid(np.arange(m - 1), np.arange(m - 1), indexing="ij")
    i, j = i.ravel(), j.ravel()
    quads = np.stack([i * m + j, (i + 1) * m + j, (i + 1) * m + j + 1, i * m + j + 1], axis=1)
    return UvGrid(m, verts, quads, quads_to_triangles(quads))


# ---------------------------------------------------------------------------
# welding and edge energy


class _UnionFind:
    def __init__(self, n):
        self.parent = np.arange(n)

    def find(self, i):
        p = self.parent
        root = i
        while p[root] != root:
            root = p[root]
        while p[i] != root:
            p[i], i = root, p[i]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            if ra < rb:
                self.parent[rb] = ra
            else:
                self.parent[ra] = rb


def _weld_labels(v: np.ndarray, epsilon: float) -> np.ndarray:
    n = len(v)
    if epsilon == 0:
        _, labels = np.unique(v, axis=0, return_inverse=True)
        return labels.reshape(-1)
    uf = _UnionFind(n)
    # any cell at least epsilon wide works; the floor keeps keys inside int64
    cell = max(epsilon, float(np.abs(v).max()) * 2.0**-40)
    cells = np.floor(v / cell).astype(np.int64)
    buckets: dict[tuple, list[int]] = {}
    for i, c in enumerate(map(tuple, cells)):
        buckets.setdefault(c, []).append(i)
    eps2 = epsilon * epsilon
    offsets = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    for key, members in buckets.items():
        mem = np.array(members)
        for off in offsets:
            nb = buckets.get((key[0] + off[0], key[1] + off[1], key[2] + off[2]))
            if nb is None:
                continue
            nb = np.array(nb)
            d = v[mem][:, None, :] - v[nb][None, :, :]
            close = np.argwhere((d * d).sum(axis=2) <= eps2)
            for a, b in close:
                if mem[a] < nb[b]:
                    uf.union(int(mem[a]), int(nb[b]))
    roots = np.array([uf.find(i) for i in range(n)])
    _, labels = np.unique(roots, return_inverse=True)
    return labels.reshape(-1)


def weld_vertices(mesh: TriMesh, epsilon: float) -> TriMesh:
    """Merge vertices closer than ``epsilon`` into their cluster centroid.

    Clusters are connected components of the ``epsilon``-proximity graph.
    Passes repeat until no further merge happens, which makes the result a
    fixed point. Faces left with fewer than three distinct vertices are
    dropped.
    """
    if epsilon < 0:
        raise ParameterError("epsilon must be non-negative")
    v, f = mesh.vertices, mesh.faces
    while True:
        if len(v) == 0:
            break
        labels = _weld_labels(v, epsilon)
        k = labels.max() + 1
        if k == len(v):
            break
        counts = np.bincount(labels, minlength=k).astype(np.float64)
        nv = np.zeros((k, 3))
        np.add.at(nv, labels, v)
        if epsilon == 0:
            # exact duplicates: keep the bitwise-identical coordinate
            nv = np.zeros((k, 3))
            nv[labels] = v
        else:
            nv /= counts[:, None]
        v = nv
        f = labels[f]
        keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 0] != f[:, 2])
        f = f[keep]
        if epsilon == 0:
            break
    return TriMesh(v, f)


def edge_sq_sum(mesh: TriMesh) -> float:
    """Sum of squared lengths over the mesh's unique edges."""
    e = mesh.edges
    if not len(e):
        return 0.0
    d = mesh.vertices[e[:, 0]] - mesh.vertices[e[:, 1]]
    return float((d * d).sum())
