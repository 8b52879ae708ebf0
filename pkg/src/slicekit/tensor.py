"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Shape rules are deliberately narrow: elementwise ops demand identical shapes,
matmul demands matching inner dimensions, and the only broadcasting anywhere
is a 1-D bias over the last axis, a right-hand 2-D weight in matmul, and a
row-scale whose trailing axis is 1. Narrow rules keep every backward rule
short enough to audit by hand.

Attention masking is additive -1e30 on scores before softmax, which is
numerically equivalent to a -inf logit without producing NaN.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ShapeError, TapeStateError

Array = np.ndarray

LOG_CLAMP = 1e-12
MASK_VALUE = -1e30

_ACTIVE_TAPE: "Tape | None" = None


class Tensor:
    """A dense float64 array plus an optional gradient buffer."""

    __slots__ = ("data", "requires_grad", "_grad", "_tracked")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._grad: Array | None = None
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def grad(self) -> Array:
        """Accumulated dLoss/dself; zeros if nothing has flowed here."""
        if self._grad is None:
            return np.zeros_like(self.data)
        return self._grad

    def zero_grad(self) -> None:
        self._grad = None

    def accumulate_grad(self, g: Array) -> None:
        if g.shape != self.data.shape:
            raise ShapeError(f"gradient shape {g.shape} != tensor shape {self.data.shape}")
        if self._grad is None:
            self._grad = np.array(g, dtype=np.float64)
        else:
            self._grad += g

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


BackwardRule = Callable[[Array], Sequence[Array | None]]


class Tape:
    """Ordered record of executed ops; backward() replays it exactly once.

    Ops append themselves in execution order, so inputs always precede their
    consumers and a single reverse sweep visits each node once.
    """

    def __init__(self) -> None:
        self._entries: list[tuple[Tensor, tuple[Tensor, ...], BackwardRule]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise TapeStateError("a tape is already active; nested tapes are not supported")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, *exc) -> bool:
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self._entries)

    def backward(self, loss: Tensor) -> None:
        """Seed dLoss/dLoss = 1 and push gradients back through the record."""
        if self._consumed:
            raise TapeStateError("tape already consumed; build a new tape for another backward pass")
        if loss.data.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        self._consumed = True
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, inputs, rule in reversed(self._entries):
            g = out._grad
            if g is None:
                continue
            grads = rule(g)
            for inp, gi in zip(inputs, grads):
                if gi is None or not inp._tracked:
                    continue
                if inp._grad is None:
                    # fresh arrays are adopted in place; pass-throughs and
                    # views are copied so no two tensors share a grad buffer
                    if gi is g or gi.base is not None or not gi.flags.owndata:
                        inp._grad = gi.copy()
                    else:
                        inp._grad = gi
                else:
                    inp._grad += gi
        self._entries.clear()


def active_tape() -> Tape | None:
    return _ACTIVE_TAPE


def backward(loss: Tensor) -> None:
    """Backward through the currently active tape."""
    if _ACTIVE_TAPE is None:
        raise TapeStateError("no active tape; run the forward pass inside `with Tape() as tape:`")
    _ACTIVE_TAPE.backward(loss)


def _record(out: Tensor, inputs: tuple[Tensor, ...], rule: BackwardRule) -> Tensor:
    tape = _ACTIVE_TAPE
    if tape is not None and not tape._consumed and any(t._tracked for t in inputs):
        out._tracked = True
        tape._entries.append((out, inputs, rule))
    return out


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    """a + b; b may be a 1-D bias broadcast over the last axis of a."""
    ad, bd = a.data, b.data
    if ad.shape == bd.shape:
        out = Tensor(ad + bd)

        def rule(g: Array):
            return g, g

    elif bd.ndim == 1 and ad.ndim >= 1 and ad.shape[-1] == bd.shape[0]:
        out = Tensor(ad + bd)
        lead = tuple(range(ad.ndim - 1))

        def rule(g: Array):
            return g, g.sum(axis=lead)

    else:
        raise ShapeError(f"add shapes incompatible: {ad.shape} vs {bd.shape}")
    return _record(out, (a, b), rule)


def mul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.shape != bd.shape:
        raise ShapeError(f"mul shapes incompatible: {ad.shape} vs {bd.shape}")
    out = Tensor(ad * bd)

    def rule(g: Array):
        return g * bd, g * ad

    return _record(out, (a, b), rule)


def affine(a: Tensor, mult: float, shift: float = 0.0) -> Tensor:
    """Elementwise a * mult + shift with python-scalar coefficients."""
    out = Tensor(a.data * mult + shift)

    def rule(g: Array):
        return (g * mult,)

    return _record(out, (a,), rule)


def add_const(a: Tensor, const: Array) -> Tensor:
    """Add a constant array (no gradient to the constant); must not reshape a."""
    if np.broadcast_shapes(a.shape, np.shape(const)) != a.shape:
        raise ShapeError(f"constant shape {np.shape(const)} does not broadcast into {a.shape}")
    out = Tensor(a.data + const)

    def rule(g: Array):
        return (g,)

    return _record(out, (a,), rule)


def scale_rows(a: Tensor, s: Tensor) -> Tensor:
    """Multiply each last-axis row of a by a scalar; s.shape == a.shape[:-1] + (1,)."""
    if s.shape != a.shape[:-1] + (1,):
        raise ShapeError(f"row scale shape {s.shape} does not match rows of {a.shape}")
    out = Tensor(a.data * s.data)

    def rule(g: Array):
        return g * s.data, (g * a.data).sum(axis=-1, keepdims=True)

    return _record(out, (a, s), rule)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product; a and b share leading batch dims, or b is a 2-D weight."""
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ShapeError(f"matmul needs >=2-D operands, got {ad.shape} x {bd.shape}")
    if ad.shape[-1] != bd.shape[-2]:
        raise ShapeError(f"matmul inner dimensions disagree: {ad.shape} x {bd.shape}")
    if bd.ndim != 2 and ad.shape[:-2] != bd.shape[:-2]:
        raise ShapeError(f"matmul batch dimensions disagree: {ad.shape} x {bd.shape}")
    out = Tensor(ad @ bd)

    def rule(g: Array):
        ga = g @ np.swapaxes(bd, -1, -2)
        if bd.ndim == 2 and ad.ndim > 2:
            gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(out, (a, b), rule)


# ---------------------------------------------------------------------------
# shape plumbing


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.reshape(shape))
    orig = a.data.shape

    def rule(g: Array):
        return (g.reshape(orig),)

    return _record(out, (a,), rule)


def transpose(a: Tensor, axes: tuple[int, ...]) -> Tensor:
    out = Tensor(a.data.transpose(axes))
    inv = tuple(int(i) for i in np.argsort(axes))

    def rule(g: Array):
        return (g.transpose(inv),)

    return _record(out, (a,), rule)


def concat_last(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeError(f"concat_last leading dims disagree: {a.shape} vs {b.shape}")
    out = Tensor(np.concatenate([a.data, b.data], axis=-1))
    na = a.shape[-1]

    def rule(g: Array):
        return g[..., :na], g[..., na:]

    return _record(out, (a, b), rule)


def pad_last(a: Tensor, width: int) -> Tensor:
    """Zero-pad the last axis up to `width` columns."""
    na = a.shape[-1]
    if width < na:
        raise ShapeError(f"pad_last target width {width} < existing {na}")
    padded = np.zeros(a.shape[:-1] + (width,), dtype=np.float64)
    padded[..., :na] = a.data
    out = Tensor(padded)

    def rule(g: Array):
        return (np.ascontiguousarray(g[..., :na]),)

    return _record(out, (a,), rule)


def gather_rows(table: Tensor, ids: Array) -> Tensor:
    """Row lookup table[ids]; ids is an integer array of any shape."""
    ids = np.asarray(ids)
    out = Tensor(table.data[ids])
    ncols = table.shape[-1]

    def rule(g: Array):
        gt = np.zeros_like(table.data)
        np.add.at(gt, ids.ravel(), g.reshape(-1, ncols))
        return (gt,)

    return _record(out, (table,), rule)


def mean_axis(a: Tensor, axis: int) -> Tensor:
    out = Tensor(a.data.mean(axis=axis))
    n = a.shape[axis]

    def rule(g: Array):
        return (np.repeat(np.expand_dims(g / n, axis), n, axis=axis),)

    return _record(out, (a,), rule)


def sum_all(a: Tensor) -> Tensor:
    out = Tensor(a.data.sum())
    shape = a.shape

    def rule(g: Array):
        return (np.full(shape, float(g)),)

    return _record(out, (a,), rule)


# ---------------------------------------------------------------------------
# nonlinearities


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    """Stable softmax along `axis`; rows must contain at least one finite entry."""
    xd = x.data
    if not -xd.ndim <= axis < xd.ndim:
        raise ShapeError(f"softmax axis {axis} invalid for shape {xd.shape}")
    m = np.max(xd, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(xd - m)
    y = e / e.sum(axis=axis, keepdims=True)
    out = Tensor(y)

    def rule(g: Array):
        dot = (g * y).sum(axis=axis, keepdims=True)
        return (y * (g - dot),)

    return _record(out, (x,), rule)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)

    def rule(g: Array):
        return (g * y * (1.0 - y),)

    return _record(out, (x,), rule)


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, 0.0))
    pos = x.data > 0

    def rule(g: Array):
        return (g * pos,)

    return _record(out, (x,), rule)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then scale-shift."""
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm params must have shape ({d},), got {gamma.shape}/{beta.shape}")
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gamma.data + beta.data)
    lead = tuple(range(xd.ndim - 1))

    def rule(g: Array):
        dxhat = g * gamma.data
        dvar = (dxhat * xc).sum(axis=-1, keepdims=True) * (-0.5) * inv**3
        dmu = (-dxhat * inv).sum(axis=-1, keepdims=True) + dvar * (-2.0 * xc).mean(axis=-1, keepdims=True)
        dx = dxhat * inv + dvar * 2.0 * xc / d + dmu / d
        dgamma = (g * xhat).reshape(-1, d).sum(axis=0)
        dbeta = g.reshape(-1, d).sum(axis=0)
        return dx, dgamma, dbeta

    return _record(out, (x, gamma, beta), rule)


# ---------------------------------------------------------------------------
# distribution ops


def scatter_add(base: Tensor, positions: Sequence[int], weights: Tensor) -> Tensor:
    """Accumulate weights into a copy of base at the given positions.

    Duplicate positions sum. Gradient flows to both base (identity) and
    weights (gather at positions).
    """
    if base.ndim != 1:
        raise ShapeError(f"scatter_add base must be 1-D, got {base.shape}")
    pos = np.asarray(positions, dtype=np.int64)
    if pos.shape != (len(weights.data),):
        raise ShapeError(f"positions length {pos.shape} != weights length {weights.shape}")
    n = base.shape[0]
    if pos.size and (pos.min() < 0 or pos.max() >= n):
        bad = pos[(pos < 0) | (pos >= n)][0]
        raise IndexError(f"scatter_add position {bad} out of range for size {n}")
    outd = base.data.copy()
    np.add.at(outd, pos, weights.data)
    out = Tensor(outd)

    def rule(g: Array):
        return g, g[pos]

    return _record(out, (base, weights), rule)


def scatter_add_last(weights: Tensor, index: Array, size: int) -> Tensor:
    """Batched scatter along a new last axis of `size` buckets.

    weights has shape (..., S); index broadcasts to the same shape and holds
    bucket ids < size. Result shape is (..., size); duplicate ids sum.
    """
    w = weights.data
    idx = np.broadcast_to(np.asarray(index, dtype=np.int64), w.shape)
    if idx.size and (idx.min() < 0 or idx.max() >= size):
        raise IndexError(f"scatter_add_last index out of range for size {size}")
    rows = int(np.prod(w.shape[:-1], dtype=np.int64)) if w.ndim > 1 else 1
    w2 = w.reshape(rows, w.shape[-1])
    i2 = idx.reshape(rows, w.shape[-1])
    out2 = np.zeros((rows, size), dtype=np.float64)
    np.add.at(out2, (np.arange(rows)[:, None], i2), w2)
    out = Tensor(out2.reshape(w.shape[:-1] + (size,)))

    def rule(g: Array):
        g2 = g.reshape(rows, size)
        gw = np.take_along_axis(g2, i2, axis=1)
        return (gw.reshape(w.shape),)

    return _record(out, (weights,), rule)


def cross_entropy(p: Tensor, target_id: int) -> Tensor:
    """-log p[target_id] with the probability clamped below at 1e-12.

    The clamp keeps a zero-probability gold token (e.g. one masked out of the
    mixture) from producing an infinite loss; its gradient is zero there.
    """
    if p.ndim != 1:
        raise ShapeError(f"cross_entropy expects a 1-D distribution, got {p.shape}")
    total = float(p.data.sum())
    if abs(total - 1.0) > 1e-6:
        raise ValueError(f"cross_entropy input sums to {total!r}, not 1")
    if not 0 <= target_id < p.shape[0]:
        raise IndexError(f"cross_entropy target {target_id} out of range for size {p.shape[0]}")
    pt = float(p.data[target_id])
    clamped = max(pt, LOG_CLAMP)
    out = Tensor(-np.log(clamped))

    def rule(g: Array):
        gp = np.zeros_like(p.data)
        if pt >= LOG_CLAMP:
            gp[target_id] = -float(g) / clamped
        return (gp,)

    return _record(out, (p,), rule)


def cross_entropy_rows(p: Tensor, targets: Array, weights: Array) -> Tensor:
    """Weighted mean of -log p[i, targets[i]] over rows with weight > 0."""
    if p.ndim != 2:
        raise ShapeError(f"cross_entropy_rows expects (N, V), got {p.shape}")
    targets = np.asarray(targets, dtype=np.int64)
    w = np.asarray(weights, dtype=np.float64)
    n, v = p.shape
    if targets.shape != (n,) or w.shape != (n,):
        raise ShapeError(f"targets/weights shapes {targets.shape}/{w.shape} != ({n},)")
    if targets.size and (targets.min() < 0 or targets.max() >= v):
        raise IndexError(f"cross_entropy_rows target out of range for vocab {v}")
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("cross_entropy_rows needs at least one positive weight")
    rows = np.arange(n)
    pt = p.data[rows, targets]
    clamped = np.maximum(pt, LOG_CLAMP)
    out = Tensor((w * -np.log(clamped)).sum() / wsum)
    live = pt >= LOG_CLAMP

    def rule(g: Array):
        gp = np.zeros_like(p.data)
        gp[rows[live], targets[live]] = -float(g) * w[live] / (clamped[live] * wsum)
        return (gp,)

    return _record(out, (p,), rule)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    """First/second moment buffers plus the 1-based step counter."""

    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


def warmup_lr(base_lr: float, step: int, warmup_steps: int) -> float:
    """Linear warmup: step/warmup_steps of base_lr until warmup ends."""
    if warmup_steps > 0 and step <= warmup_steps:
        return base_lr * step / warmup_steps
    return base_lr


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, Array],
    lr: float,
    state: AdamState,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
    warmup_steps: int = 0,
) -> dict[str, Tensor]:
    """One decoupled-weight-decay Adam update, in place, with linear warmup."""
    state.step += 1
    lr_t = warmup_lr(lr, state.step, warmup_steps)
    b1, b2 = betas
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.data.shape:
            raise ShapeError(f"grad shape {g.shape} != param shape {p.data.shape} for {name!r}")
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / bc1) / (np.sqrt(v / bc2) + eps)
        if weight_decay != 0.0:
            p.data -= lr_t * weight_decay * p.data
        p.data -= lr_t * update
    return params


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p._grad is not None:
            total += float((p._grad * p._grad).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm > 0:
        scale = max_norm / norm
        for p in params.values():
            if p._grad is not None:
                p._grad *= scale
    return norm
