"""A small deterministic MLP engine on numpy.

Parameters live in one flat float64 vector so that a hypernetwork can emit
them directly. Each layer ``l`` occupies ``fan_in * fan_out`` weights (row
major, ``x @ W``) followed by ``fan_out`` biases.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from .errors import NumericError, ShapeError
from .metrics import chamfer_with_grad

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Layer widths from input to output; hidden layers use ``activation``.

    ``activation`` is either one name for every hidden layer or a tuple with
    one name per hidden layer. The output layer is always linear.
    """

    widths: tuple[int, ...]
    activation: str | tuple[str, ...] = "relu"

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        if len(widths) < 2 or min(widths) < 1:
            raise ShapeError(f"invalid layer widths {self.widths}")
        acts = self.activation
        if isinstance(acts, str):
            acts = (acts,) * (len(widths) - 2)
        acts = tuple(acts)
        if len(acts) != len(widths) - 2 or any(a not in ACTIVATIONS for a in acts):
            raise ShapeError(f"invalid activations {self.activation} for widths {widths}")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "activation", acts)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @cached_property
    def layout(self) -> tuple[tuple[int, int, int, int], ...]:
        """Per layer: (weight offset, fan_in, fan_out, bias offset)."""
        out, off = [], 0
        for fi, fo in zip(self.widths[:-1], self.widths[1:]):
            out.append((off, fi, fo, off + fi * fo))
            off += (fi + 1) * fo
        return tuple(out)

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in zip(self.widths[:-1], self.widths[1:]))

    def unpack(self, params: np.ndarray):
        """Weight/bias views into ``params`` (no copies)."""
        if params.shape[-1] != self.n_params:
            raise ShapeError(f"parameter vector has length {params.shape[-1]}, spec needs {self.n_params}")
        return [
            (params[w:b].reshape(fi, fo), params[b:b + fo])
            for w, fi, fo, b in self.layout
        ]

    def bias_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_params, dtype=bool)
        for _, _, fo, b in self.layout:
            mask[b:b + fo] = True
        return mask

    def describe(self) -> dict:
        return {"widths": list(self.widths), "activation": list(self.activation)}

    @classmethod
    def from_description(cls, d: dict) -> "MlpSpec":
        return cls(tuple(d["widths"]), tuple(d["activation"]))


def init_params(spec: MlpSpec, seed) -> np.ndarray:
    """Glorot-uniform weights, zero biases."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = np.zeros(spec.n_params)
    for w, fi, fo, _ in spec.layout:
        bound = np.sqrt(6.0 / (fi + fo))
        params[w:w + fi * fo] = rng.uniform(-bound, bound, fi * fo)
    return params


def _act(name, z):
    return np.maximum(z, 0.0) if name == "relu" else np.tanh(z)


def forward(spec: MlpSpec, params: np.ndarray, x: np.ndarray, keep: bool = False):
    """Evaluate the network on the rows of ``x``.

    With ``keep=True`` also returns the cache that :func:`backward` consumes.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != spec.widths[0]:
        raise ShapeError(f"input shape {x.shape} does not match input width {spec.widths[0]}")
    layers = spec.unpack(params)
    acts = [x]
    h = x
    for i, (W, b) in enumerate(layers):
        z = h @ W + b
        h = z if i == len(layers) - 1 else _act(spec.activation[i], z)
        acts.append(h)
    return (h, acts) if keep else h


def backward(spec: MlpSpec, params: np.ndarray, x, loss_grad: np.ndarray, cache=None):
    """Reverse-mode gradients of ``sum(loss_grad * forward(x))``.

    Returns ``(grad_params, grad_input)``.
    """
    if cache is None:
        _, cache = forward(spec, params, x, keep=True)
    out = cache[-1]
    loss_grad = np.asarray(loss_grad, dtype=np.float64)
    if loss_grad.shape != out.shape:
        raise ShapeError(f"loss gradient shape {loss_grad.shape} != output shape {out.shape}")
    layers = spec.unpack(params)
    grad = np.zeros(spec.n_params)
    g = loss_grad
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        w_off, fi, fo, b_off = spec.layout[i]
        if i < len(layers) - 1:
            h = cache[i + 1]
            if spec.activation[i] == "relu":
                g = g * (h > 0)
            else:
                g = g * (1.0 - h * h)
        grad[w_off:b_off] = (cache[i].T @ g).ravel()
        grad[b_off:b_off + fo] = g.sum(axis=0)
        g = g @ W.T
    return grad, g


def activation_signature(spec: MlpSpec, cache) -> np.ndarray:
    """Boolean ReLU activity pattern; constant inside a linear region."""
    masks = [cache[i + 1] > 0 for i, a in enumerate(spec.activation) if a == "relu"]
    if not masks:
        return np.zeros(0, dtype=bool)
    return np.concatenate([m.ravel() for m in masks])


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, n: int, **hyper) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), **hyper)


def adam_step(params: np.ndarray, grads: np.ndarray, state: AdamState):
    """One bias-corrected Adam update; returns new ``(params, state)``."""
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeError("params, grads and moments must share one length")
    if not np.all(np.isfinite(grads)):
        raise NumericError("non-finite gradient")
    t = state.step + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * grads
    v = state.beta2 * state.v + (1.0 - state.beta2) * grads * grads
    mhat = m / (1.0 - state.beta1 ** t)
    vhat = v / (1.0 - state.beta2 ** t)
    new = params - state.lr * mhat / (np.sqrt(vhat) + state.eps)
    return new, replace(state, m=m, v=v, step=t)


# ---------------------------------------------------------------------------
# gradient checking


@dataclass
class GradCheck:
    max_rel_error: float
    checked: np.ndarray
    skipped: int = 0
    errors: np.ndarray = field(default_factory=lambda: np.zeros(0))


def relative_error(analytic, numeric, floor: float = 1e-6):
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def check_gradient(loss, theta, grad, n_check: int = 200, seed: int = 0, h: float = 1e-5,
                   signature=None, max_tries: int | None = None, floor: float = 1e-6) -> GradCheck:
    """Central-difference check of ``grad`` at ``theta``.

    ``loss(theta) -> float``. Coordinates are drawn in a seeded random order;
    when ``signature(theta)`` (a discrete description of the active linear
    region: ReLU masks, max-pool winners, nearest-neighbour assignments)
    changes under the ``+-h`` probe, the coordinate sits on a kink and is
    skipped in favour of the next one.
    """
    theta = np.array(theta, dtype=np.float64)
    n = len(theta)
    want = min(n_check, n)
    if want == 0:
        return GradCheck(0.0, np.zeros(0, dtype=np.int64))
    order = np.random.default_rng(seed).permutation(n)
    base_sig = signature(theta) if signature else None
    checked, errs, skipped = [], [], 0
    limit = n if max_tries is None else max_tries
    for idx in order[:limit]:
        if len(checked) == want:
            break
        old = theta[idx]
        theta[idx] = old + h
        lp = loss(theta)
        sp = signature(theta) if signature else None
        theta[idx] = old - h
        lm = loss(theta)
        sm = signature(theta) if signature else None
        theta[idx] = old
        if signature and not (np.array_equal(sp, base_sig) and np.array_equal(sm, base_sig)):
            skipped += 1
            continue
        num = (lp - lm) / (2.0 * h)
        checked.append(idx)
        errs.append(relative_error(grad[idx], num, floor))
    errs = np.array(errs)
    return GradCheck(float(errs.max()) if len(errs) else 0.0, np.array(checked, dtype=np.int64), skipped, errs)


def quadratic_loss(out: np.ndarray, target: np.ndarray):
    """Mean over rows of ``0.5 * |out - target|^2`` and its gradient."""
    diff = out - target
    n = len(out)
    return float(0.5 * (diff * diff).sum() / n), diff / n


LOSSES = {
    "quadratic": quadratic_loss,
    "chamfer": lambda out, target: chamfer_with_grad(out, target)[:2],
}


def grad_check(spec: MlpSpec, params, batch, target, loss: str = "quadratic",
               n_check: int = 200, seed: int = 0, h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences for an MLP loss."""
    lossfn = LOSSES[loss]
    batch = np.asarray(batch, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    out, cache = forward(spec, params, batch, keep=True)
    _, g_out = lossfn(out, target)
    grad, _ = backward(spec, params, batch, g_out, cache)

    def f(theta):
        return lossfn(forward(spec, theta, batch), target)[0]

    def sig(theta):
        o, c = forward(spec, theta, batch, keep=True)
        parts = [activation_signature(spec, c)]
        if loss == "chamfer":
            _, _, (a, b) = chamfer_with_grad(o, target)
            parts += [a, b]
        return np.concatenate([p.astype(np.int64).ravel() for p in parts])

    return check_gradient(f, params, grad, n_check, seed, h, sig).max_rel_error
