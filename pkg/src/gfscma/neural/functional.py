"""Differentiable operations used by the activity-detection networks.

Conventions: batches are leading axes, features the last axis. Weight matrices
are stored ``(out, in)`` so a dense layer computes ``y = x W^T + b``, i.e.
``y = W x + b`` per sample.
"""

from __future__ import annotations

import math

import numpy as np

from .engine import Tensor, accumulate, accumulate_into, as_tensor, record

BCE_EPS = 1e-7
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        accumulate(a, _unbroadcast(g, a.shape))
        accumulate(b, _unbroadcast(g, b.shape))

    return record(a.data + b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    b = as_tensor(b, a.dtype)

    def backward(g):
        if a.requires_grad:
            accumulate(a, _unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            accumulate(b, _unbroadcast(g * a.data, b.shape))

    return record(a.data * b.data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    return record(a.data * c, (a,), lambda g: accumulate(a, g * c))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: accumulate(x, g * mask))


def _sigmoid(v: np.ndarray) -> np.ndarray:
    # tanh form never overflows
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid(x.data)
    return record(s, (x,), lambda g: accumulate(x, g * s * (1 - s)))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return record(t, (x,), lambda g: accumulate(x, g * (1 - t * t)))


# ---------------------------------------------------------------- shape ops


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return record(x.data.reshape(shape), (x,), lambda g: accumulate(x, g.reshape(old)))


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                accumulate(x, g[tuple(idx)])

    return record(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def slice_last(x: Tensor, start: int, stop: int) -> Tensor:
    """``x[..., start:stop]``."""
    idx = (Ellipsis, slice(start, stop))
    return record(x.data[idx], (x,), lambda g: accumulate_into(x, idx, g))


# ---------------------------------------------------------------- layers


def dense(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``y = x W^T + b`` over the last axis of ``x``; ``W`` is ``(out, in)``."""
    x = as_tensor(x)
    if x.shape[-1] != W.shape[1]:
        raise ValueError(f"dense: input has {x.shape[-1]} features, W expects {W.shape[1]}")
    if b is not None and b.shape != (W.shape[0],):
        raise ValueError(f"dense: bias shape {b.shape} != ({W.shape[0]},)")
    y = x.data @ W.data.T
    if b is not None:
        y = y + b.data
    parents = (x, W) if b is None else (x, W, b)

    def backward(g):
        if x.requires_grad:
            accumulate(x, g @ W.data)
        if W.requires_grad:
            g2 = g.reshape(-1, g.shape[-1])
            accumulate(W, g2.T @ x.data.reshape(-1, x.shape[-1]))
        if b is not None and b.requires_grad:
            accumulate(b, g.reshape(-1, g.shape[-1]).sum(axis=0))

    return record(y, parents, backward)


def conv1d_full(x: Tensor, kernels: Tensor, b: Tensor | None = None) -> Tensor:
    """Full-width 1D convolution: every kernel spans the whole input vector.

    With ``x`` of shape ``(..., D)`` and ``kernels`` of shape ``(n_k, D)`` each kernel
    produces a single output, ``out[..., k] = <kernels[k], x> + b[k]``. Leading axes
    (batch, symbol position) all share the same kernel bank.
    """
    x = as_tensor(x)
    if kernels.shape[1] != x.shape[-1]:
        raise ValueError(
            f"conv1d_full: kernel size {kernels.shape[1]} must equal input length {x.shape[-1]}"
        )
    return dense(x, kernels, b)


def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, state: dict, training: bool,
              eps: float = BN_EPS, momentum: float = BN_MOMENTUM) -> Tensor:
    """Batch normalization over every axis but the last (the feature axis).

    ``state`` holds ``running_mean`` and ``running_var``; training mode updates them
    as ``running = momentum * running + (1 - momentum) * batch``.
    """
    C = x.shape[-1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ValueError(f"batchnorm: {C} features but gamma {gamma.shape}, beta {beta.shape}")
    axes = tuple(range(x.data.ndim - 1))
    if not training:
        inv = 1.0 / np.sqrt(state["running_var"] + eps)
        xhat = ((x.data - state["running_mean"]) * inv).astype(x.dtype)
        y = gamma.data * xhat + beta.data

        def backward(g):
            if x.requires_grad:
                accumulate(x, (g * (gamma.data * inv)).astype(x.dtype))
            if gamma.requires_grad:
                accumulate(gamma, (g * xhat).sum(axis=axes))
            if beta.requires_grad:
                accumulate(beta, g.sum(axis=axes))

        return record(y, (x, gamma, beta), backward)

    n = x.data.size // C
    if n < 2:
        raise ValueError("batchnorm: training mode needs at least 2 samples per feature")
    mu = x.data.mean(axis=axes)
    xc = x.data - mu
    var = (xc * xc).mean(axis=axes)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = xc * inv
    y = gamma.data * xhat + beta.data
    state["running_mean"] = momentum * state["running_mean"] + (1 - momentum) * mu
    state["running_var"] = momentum * state["running_var"] + (1 - momentum) * var

    def backward(g):
        if gamma.requires_grad:
            accumulate(gamma, (g * xhat).sum(axis=axes))
        if beta.requires_grad:
            accumulate(beta, g.sum(axis=axes))
        if x.requires_grad:
            gx = g * gamma.data
            gx = inv / n * (n * gx - gx.sum(axis=axes) - xhat * (gx * xhat).sum(axis=axes))
            accumulate(x, gx.astype(x.dtype))

    return record(y, (x, gamma, beta), backward)


GATES = ("f", "i", "o", "c")


def lstm_cell(z: Tensor, o_prev: Tensor | None, c_prev: Tensor | None, p: dict) -> tuple[Tensor, Tensor]:
    """One LSTM cell.

    ``p`` maps ``W_f, W_i, W_o, W_c`` (hidden x input), ``U_*`` (hidden x hidden)
    and ``b_*`` to tensors. ``o_prev``/``c_prev`` of ``None`` mean zero state.
    Returns ``(o, c)``.
    """
    H = p["W_f"].shape[0]
    for gname in GATES:
        if p[f"W_{gname}"].shape != (H, z.shape[-1]) or p[f"U_{gname}"].shape != (H, H):
            raise ValueError(f"lstm_cell: inconsistent shapes for gate {gname}")
    W = concat([p[f"W_{x}"] for x in GATES], axis=0)
    b = concat([p[f"b_{x}"] for x in GATES], axis=0)
    pre = dense(z, W, b)
    if o_prev is not None:
        if o_prev.shape[-1] != H:
            raise ValueError("lstm_cell: previous output has the wrong size")
        U = concat([p[f"U_{x}"] for x in GATES], axis=0)
        pre = add(pre, dense(o_prev, U))
    f = sigmoid(slice_last(pre, 0, H))
    i = sigmoid(slice_last(pre, H, 2 * H))
    og = sigmoid(slice_last(pre, 2 * H, 3 * H))
    cbar = tanh(slice_last(pre, 3 * H, 4 * H))
    c = mul(i, cbar) if c_prev is None else add(mul(f, c_prev), mul(i, cbar))
    o = mul(og, tanh(c))
    return o, c


# ---------------------------------------------------------------- loss


def bce_loss(q: Tensor, target, eps: float = BCE_EPS) -> Tensor:
    """Binary cross-entropy summed over the last axis and averaged over the batch.

    Predictions are clamped to ``[eps, 1 - eps]``; the gradient is zero where
    the clamp is active.
    """
    t = np.asarray(target)
    if t.shape != q.shape:
        raise ValueError(f"bce_loss: target shape {t.shape} != prediction shape {q.shape}")
    if not np.all((t == 0) | (t == 1)):
        raise ValueError("bce_loss: targets must be 0 or 1")
    qd = q.data.astype(np.float64)
    qc = np.clip(qd, eps, 1 - eps)
    batch = int(np.prod(q.shape[:-1])) if q.data.ndim > 1 else 1
    loss = -(t * np.log(qc) + (1 - t) * np.log1p(-qc)).sum() / batch
    inside = (qd >= eps) & (qd <= 1 - eps)

    def backward(g):
        dq = (-t / qc + (1 - t) / (1 - qc)) * inside / batch
        accumulate(q, (float(g) * dq).astype(q.dtype))

    return record(np.asarray(loss, dtype=q.dtype), (q,), backward)


def logistic_loss_value(q: np.ndarray, target: np.ndarray, eps: float = BCE_EPS) -> float:
    """Same quantity as :func:`bce_loss` without recording a graph."""
    qc = np.clip(q.astype(np.float64), eps, 1 - eps)
    t = np.asarray(target, dtype=np.float64)
    batch = int(np.prod(q.shape[:-1])) if q.ndim > 1 else 1
    return float(-(t * np.log(qc) + (1 - t) * np.log1p(-qc)).sum() / batch)


def fan_in_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
