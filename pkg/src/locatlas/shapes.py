"""Analytic synthetic shapes sampled uniformly by surface area."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .geom import uniform_sphere

KINDS = ("sphere", "torus", "box", "cylinder")

_DEFAULTS = {
    "sphere": {"radius": 1.0},
    "torus": {"major": 1.0, "minor": 0.3},
    "box": {"sx": 1.0, "sy": 0.6, "sz": 0.4},
    "cylinder": {"radius": 0.5, "height": 1.5},
}


@dataclass
class SyntheticShape:
    kind: str
    size: dict = field(default_factory=dict)
    n: int = 2048
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"unknown shape kind {self.kind!r}")
        unknown = set(self.size) - set(_DEFAULTS[self.kind])
        if unknown:
            raise ParameterError(f"unknown size keys for {self.kind}: {sorted(unknown)}")
        self.size = {**_DEFAULTS[self.kind], **self.size}
        if any(v <= 0 for v in self.size.values()) or self.n < 1:
            raise ParameterError("shape dimensions and sample count must be positive")

    def sample(self) -> np.ndarray:
        """Points on the analytic surface, before any normalization."""
        rng = np.random.default_rng(self.seed)
        return _SAMPLERS[self.kind](rng, self.n, **self.size)


def _sphere(rng, n, radius):
    return radius * uniform_sphere(n, rng)


def _torus(rng, n, major, minor):
    # tube angle density proportional to the area element (R + r cos v)
    out = np.empty(0)
    while len(out) < n:
        v = rng.uniform(0.0, 2.0 * np.pi, 2 * n)
        keep = rng.random(2 * n) * (major + minor) <= major + minor * np.cos(v)
        out = np.concatenate([out, v[keep]])
    v = out[:n]
    u = rng.uniform(0.0, 2.0 * np.pi, n)
    ring = major + minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)


def _box(rng, n, sx, sy, sz):
    half = np.array([sx, sy, sz]) / 2.0
    areas = np.array([sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy])
    face = np.searchsorted(np.cumsum(areas), rng.random(n) * areas.sum(), side="right")
    face = np.minimum(face, 5)
    pts = rng.uniform(-1.0, 1.0, (n, 3)) * half
    axis = face // 2
    sign = np.where(face % 2 == 0, -1.0, 1.0)
    pts[np.arange(n), axis] = sign * half[axis]
    return pts


def _cylinder(rng, n, radius, height):
    side = 2.0 * np.pi * radius * height
    cap = np.pi * radius * radius
    which = np.searchsorted(np.cumsum([side, cap, cap]), rng.random(n) * (side + 2 * cap), side="right")
    which = np.minimum(which, 2)
    theta = rng.uniform(0.0, 2.0 * np.pi, n)
    rad = np.where(which == 0, radius, radius * np.sqrt(rng.random(n)))
    z = np.where(which == 0, rng.uniform(-height / 2, height / 2, n),
                 np.where(which == 1, -height / 2, height / 2))
    return np.stack([rad * np.cos(theta), rad * np.sin(theta), z], axis=1)


_SAMPLERS = {"sphere": _sphere, "torus": _torus, "box": _box, "cylinder": _cylinder}
