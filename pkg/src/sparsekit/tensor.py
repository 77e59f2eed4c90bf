"""Minimal reverse-mode autodiff over dense numpy tensors.

Only the primitives needed by the encoder model and its training losses are
implemented. Values are float32 by default; a float64 mode exists so the
finite-difference gradient oracle stays honest.
"""
from __future__ import annotations

import math
from typing import Callable, Optional, Sequence

import numpy as np


class ShapeError(ValueError):
    """Input shapes invalid for a primitive."""


class UnsupportedPrimitiveError(ValueError):
    """Unknown primitive kind."""


class ContractError(ValueError):
    """Operation precondition violated."""


GELU_COEFF = 0.044715
_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


class Tensor:
    """Dense array plus an optional gradient buffer and autodiff tape links."""

    __slots__ = ("values", "grad", "requires_grad", "parents", "_backward", "name", "degenerate")

    def __init__(self, values, requires_grad=False, parents=(), backward_fn=None, name=None):
        self.values = np.asarray(values)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.parents: tuple = tuple(parents)
        self._backward: Optional[Callable] = backward_fn
        self.name = name
        self.degenerate = False

    @property
    def shape(self):
        return self.values.shape

    @property
    def size(self):
        return self.values.size

    @property
    def dtype(self):
        return self.values.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.values)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, name={self.name})"

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap(other))

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def backward(self):
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum gradient over axes that were broadcast in the forward op."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _node(values, parents, backward_fn) -> Tensor:
    return Tensor(values, parents=parents, backward_fn=backward_fn)


# -- primitives -----------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.values + b.values
    except ValueError:
        raise ShapeError(f"add: incompatible shapes {a.shape} and {b.shape}")
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.values - b.values
    except ValueError:
        raise ShapeError(f"sub: incompatible shapes {a.shape} and {b.shape}")
    return _node(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    try:
        out = a.values * b.values
    except ValueError:
        raise ShapeError(f"mul: incompatible shapes {a.shape} and {b.shape}")
    av, bv = a.values, b.values
    return _node(out, (a, b), lambda g: (_unbroadcast(g * bv, a.shape), _unbroadcast(g * av, b.shape)))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.values.ndim < 2 or b.values.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    out = np.matmul(a.values, b.values)
    av, bv = a.values, b.values

    def back(g):
        ga = np.matmul(g, np.swapaxes(bv, -1, -2))
        gb = np.matmul(np.swapaxes(av, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, (a, b), back)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.values.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {a.shape}")
    inv = tuple(np.argsort(axes))
    return _node(a.values.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    if math.prod(shape) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _node(a.values.reshape(shape), (a,), lambda g: (g.reshape(old),))


def gelu(a: Tensor) -> Tensor:
    x = a.values
    inner = _SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def back(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x)
        dx = 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * dinner
        return (g * dx,)

    return _node(out, (a,), back)


def softmax_last_axis(a: Tensor) -> Tensor:
    z = a.values - a.values.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _node(s, (a,), back)


def layer_norm_last_axis(a: Tensor, eps: float = 1e-5) -> Tensor:
    x = a.values
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv
    d = x.shape[-1]

    def back(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxh = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gxh),)

    # keep derived arrays referenced for the closure
    del d
    return _node(xhat, (a,), back)


def embedding_lookup(table: Tensor, ids: np.ndarray) -> Tensor:
    ids = np.asarray(ids)
    if ids.min(initial=0) < 0 or (ids.size and ids.max() >= table.shape[0]):
        raise ShapeError(f"embedding-lookup: id out of range for table of {table.shape[0]} rows")
    out = table.values[ids]

    def back(g):
        gt = np.zeros_like(table.values)
        np.add.at(gt, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _node(out, (table,), back)


IGNORE_INDEX = -1


def cross_entropy_with_targets(logits: Tensor, targets: np.ndarray, ignore_index: int = IGNORE_INDEX) -> Tensor:
    """Mean negative log-likelihood over rows whose target is not ignored.

    Rows with the ignore marker contribute nothing. When every row is
    ignored, the loss is 0 and the result is flagged degenerate.
    """
    targets = np.asarray(targets)
    if logits.values.ndim != 2 or targets.shape != (logits.shape[0],):
        raise ShapeError(f"cross-entropy: logits {logits.shape} vs targets {targets.shape}")
    sel = targets != ignore_index
    count = int(sel.sum())
    z = logits.values - logits.values.max(axis=-1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - logsum
    if count == 0:
        out = _node(np.zeros((), dtype=logits.dtype), (logits,), lambda g: (np.zeros_like(logits.values),))
        out.degenerate = True
        return out
    safe = np.where(sel, targets, 0)
    picked = logp[np.arange(targets.shape[0]), safe]
    loss = -(picked * sel).sum() / count

    def back(g):
        probs = np.exp(logp)
        grad = probs.copy()
        grad[np.arange(targets.shape[0]), safe] -= 1.0
        grad *= (sel / count)[:, None]
        return (g * grad,)

    return _node(np.asarray(loss, dtype=logits.dtype), (logits,), back)


def mean(a: Tensor) -> Tensor:
    n = a.size
    return _node(np.asarray(a.values.mean(), dtype=a.dtype), (a,),
                 lambda g: (np.broadcast_to(g / n, a.shape).astype(a.dtype, copy=False),))


def scale(a: Tensor, c: float) -> Tensor:
    return _node(a.values * c, (a,), lambda g: (g * c,))


def take_rows(a: Tensor, index: int, axis: int = 1) -> Tensor:
    """Select one slice along an axis, keeping the remaining axes (model helper)."""
    out = np.take(a.values, index, axis=axis)

    def back(g):
        ga = np.zeros_like(a.values)
        idx = [slice(None)] * a.values.ndim
        idx[axis] = index
        ga[tuple(idx)] = g
        return (ga,)

    return _node(out, (a,), back)


_PRIMITIVES = {
    "matmul": lambda inputs, attrs: matmul(*inputs),
    "add": lambda inputs, attrs: add(*inputs),
    "mul": lambda inputs, attrs: mul(*inputs),
    "sub": lambda inputs, attrs: sub(*inputs),
    "transpose": lambda inputs, attrs: transpose(inputs[0], attrs["axes"]),
    "reshape": lambda inputs, attrs: reshape(inputs[0], attrs["shape"]),
    "gelu": lambda inputs, attrs: gelu(inputs[0]),
    "softmax-last-axis": lambda inputs, attrs: softmax_last_axis(inputs[0]),
    "layer-norm-last-axis": lambda inputs, attrs: layer_norm_last_axis(inputs[0], attrs.get("eps", 1e-5)),
    "embedding-lookup": lambda inputs, attrs: embedding_lookup(inputs[0], attrs["ids"]),
    "cross-entropy-with-targets": lambda inputs, attrs: cross_entropy_with_targets(
        inputs[0], attrs["targets"], attrs.get("ignore_index", IGNORE_INDEX)),
    "mean": lambda inputs, attrs: mean(inputs[0]),
    "scale": lambda inputs, attrs: scale(inputs[0], attrs["c"]),
}


def eval_primitive(kind: str, inputs: Sequence[Tensor], attrs: Optional[dict] = None) -> Tensor:
    """Apply one primitive by name, recording it on the autodiff tape."""
    if kind not in _PRIMITIVES:
        raise UnsupportedPrimitiveError(f"unknown primitive kind {kind!r}")
    return _PRIMITIVES[kind](list(inputs), attrs or {})


# -- reverse pass ---------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(param) into every reachable requires_grad tensor.

    Calling twice without zeroing doubles the stored gradients.
    """
    if loss.size != 1:
        raise ContractError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))

    adj = {id(loss): np.ones_like(loss.values)}
    for node in reversed(topo):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.grad = g.copy() if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for p, pg in zip(node.parents, node._backward(g)):
            if pg is None:
                continue
            prev = adj.get(id(p))
            adj[id(p)] = pg if prev is None else prev + pg


# -- initialization -------------------------------------------------------

def seeded_init(shape, scheme: str, seed: int, dtype=np.float32) -> Tensor:
    """Deterministic parameter init; PRNG is numpy PCG64 keyed by the seed."""
    shape = tuple(shape)
    if scheme == "zeros":
        vals = np.zeros(shape, dtype=dtype)
    elif scheme == "ones":
        vals = np.ones(shape, dtype=dtype)
    elif scheme == "normal-0.02":
        rng = np.random.Generator(np.random.PCG64(seed))
        vals = (rng.standard_normal(shape) * 0.02).astype(dtype)
    else:
        raise UnsupportedPrimitiveError(f"unknown init scheme {scheme!r}")
    return Tensor(vals, requires_grad=True)


# -- gradient oracle ------------------------------------------------------

def finite_diff_check(loss_fn: Callable[[], Tensor], params: dict, name: str, eps: float = 1e-3) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn must rebuild the scalar loss from the live parameter values on
    every call. Run with float64 parameters for a trustworthy bound.
    """
    if eps <= 0:
        raise ContractError("finite_diff_check: eps must be positive")
    if name not in params:
        raise KeyError(f"unknown parameter {name!r}")
    param = params[name]
    for p in params.values():
        p.zero_grad()
    loss = loss_fn()
    if loss.size != 1:
        raise ContractError("finite_diff_check: loss must be scalar")
    backward(loss)
    analytic = np.zeros_like(param.values) if param.grad is None else param.grad.copy()

    flat = param.values.reshape(-1)
    worst = 0.0
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(loss_fn().values)
        flat[i] = orig - eps
        dn = float(loss_fn().values)
        flat[i] = orig
        numeric = (up - dn) / (2.0 * eps)
        a = float(analytic.reshape(-1)[i])
        denom = max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, abs(a - numeric) / denom)
    return worst
