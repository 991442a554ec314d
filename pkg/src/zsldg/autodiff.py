"""Dense-tensor reverse-mode autodiff with double-backward support.

Gradients are built out of the same differentiable ops as the forward
pass, so an expression like ``||grad_x D(x)||^2`` can itself be
differentiated again (reverse-over-reverse).  Everything is float64 and
2-D-or-less; no GPU, no convolutions, no general broadcasting beyond
what batched MLPs need.
"""

from __future__ import annotations

import math

import numpy as np


class DiffError(Exception):
    pass


class ShapeError(DiffError):
    pass


class NumericsError(DiffError):
    pass


def _check_finite(arr, op):
    # a single reduction: any NaN/Inf entry makes the sum non-finite
    if not math.isfinite(arr.sum()):
        raise NumericsError("non-finite values produced by op '%s'" % op)


class Tensor:
    """Node in the computation DAG.

    ``parents`` and ``vjp`` encode the graph edge structure; ``vjp``
    maps the upstream gradient (a Tensor) to one gradient Tensor per
    parent, built from differentiable ops so double backward works.
    """

    __slots__ = ("data", "parents", "vjp", "op")

    def __init__(self, data, parents=(), vjp=None, op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.parents = parents
        self.vjp = vjp
        self.op = op
        _check_finite(self.data, op)

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        if self.data.size != 1:
            raise ShapeError("item() on tensor of shape %s" % (self.shape,))
        return self.data.item()

    def detach(self):
        return Tensor(self.data, op="detach")

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, n):
        return power(self, n)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return "Tensor(op=%s, shape=%s)" % (self.op, self.shape)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x, op="const")


def _unbroadcast(g, shape):
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    while len(g.shape) > len(shape):
        g = tsum(g, axis=0)
    for ax in range(len(shape)):
        if shape[ax] == 1 and g.shape[ax] != 1:
            s = list(g.shape)
            s[ax] = 1
            g = reshape(tsum(g, axis=ax), s)
    return g


# -- primitive ops ---------------------------------------------------------

def add(a, b):
    return Tensor(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
                  op="add")


def sub(a, b):
    return Tensor(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
                  op="sub")


def mul(a, b):
    return Tensor(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
                  op="mul")


def div(a, b):
    return Tensor(a.data / b.data, (a, b),
                  lambda g: (_unbroadcast(g / b, a.shape),
                             _unbroadcast(-g * a / (b * b), b.shape)),
                  op="div")


def neg(a):
    return Tensor(-a.data, (a,), lambda g: (-g,), op="neg")


def power(a, n):
    n = float(n)
    return Tensor(a.data ** n, (a,),
                  lambda g: (g * (n * a ** (n - 1.0)),), op="pow")


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("matmul needs 2-D operands, got %s @ %s" % (a.shape, b.shape))
    if a.shape[1] != b.shape[0]:
        raise ShapeError("matmul inner dims differ: %s @ %s" % (a.shape, b.shape))
    return Tensor(a.data @ b.data, (a, b),
                  lambda g: (matmul(g, transpose(b)), matmul(transpose(a), g)),
                  op="matmul")


def transpose(a):
    return Tensor(a.data.T, (a,), lambda g: (transpose(g),), op="transpose")


def reshape(a, shape):
    shape = tuple(shape)
    old = a.shape
    return Tensor(a.data.reshape(shape), (a,),
                  lambda g: (reshape(g, old),), op="reshape")


def broadcast_to(a, shape):
    shape = tuple(shape)
    old = a.shape
    return Tensor(np.broadcast_to(a.data, shape), (a,),
                  lambda g: (_unbroadcast(g, old),), op="broadcast")


def tanh(a):
    out = Tensor(np.tanh(a.data), (a,), None, op="tanh")
    out.vjp = lambda g: (g * (1.0 - out * out),)
    return out


def relu(a):
    mask = (a.data > 0).astype(np.float64)
    return Tensor(a.data * mask, (a,),
                  lambda g: (g * Tensor(mask, op="const"),), op="relu")


def exp(a):
    # non-finite results raise via the constructor; keep numpy quiet here
    with np.errstate(over="ignore"):
        out = Tensor(np.exp(a.data), (a,), None, op="exp")
    out.vjp = lambda g: (g * out,)
    return out


def log(a):
    with np.errstate(divide="ignore", invalid="ignore"):
        return Tensor(np.log(a.data), (a,), lambda g: (g / a,), op="log")


def sqrt(a):
    with np.errstate(invalid="ignore"):
        out = Tensor(np.sqrt(a.data), (a,), None, op="sqrt")
    out.vjp = lambda g: (g * (0.5 / out),)
    return out


def tsum(a, axis=None):
    shape = a.shape
    if axis is None:
        def vjp(g):
            return (broadcast_to(reshape(g, (1,) * len(shape)), shape),)
    else:
        keep = tuple(1 if i == axis else n for i, n in enumerate(shape))

        def vjp(g):
            return (broadcast_to(reshape(g, keep), shape),)
    return Tensor(np.sum(a.data, axis=axis), (a,), vjp, op="sum")


def tmean(a, axis=None):
    n = a.data.size if axis is None else a.shape[axis]
    return tsum(a, axis=axis) * (1.0 / n)


def concat(tensors, axis):
    sizes = [t.shape[axis] for t in tensors]
    offs = np.concatenate([[0], np.cumsum(sizes)])

    def vjp(g):
        return tuple(narrow(g, axis, int(offs[i]), sizes[i])
                     for i in range(len(tensors)))
    return Tensor(np.concatenate([t.data for t in tensors], axis=axis),
                  tuple(tensors), vjp, op="concat")


def narrow(a, axis, start, size):
    idx = [slice(None)] * a.data.ndim
    idx[axis] = slice(start, start + size)
    idx = tuple(idx)
    shape = a.shape

    def vjp(g):
        return (pad_slice(g, axis, start, shape),)
    return Tensor(a.data[idx], (a,), vjp, op="narrow")


def pad_slice(a, axis, start, full_shape):
    """Embed `a` into zeros of `full_shape` at offset `start` along `axis`."""
    size = a.shape[axis]
    out = np.zeros(full_shape)
    idx = [slice(None)] * len(full_shape)
    idx[axis] = slice(start, start + size)
    out[tuple(idx)] = a.data

    def vjp(g):
        return (narrow(g, axis, start, size),)
    return Tensor(out, (a,), vjp, op="pad_slice")


def take_rows(a, idx):
    """out[i] = a[idx[i]]; adjoint is scatter-add back into a's rows."""
    idx = np.asarray(idx, dtype=np.intp)
    shape = a.shape

    def vjp(g):
        return (scatter_rows(g, idx, shape),)
    return Tensor(a.data[idx], (a,), vjp, op="take_rows")


def scatter_rows(a, idx, full_shape):
    out = np.zeros(full_shape)
    np.add.at(out, idx, a.data)

    def vjp(g):
        return (take_rows(g, idx),)
    return Tensor(out, (a,), vjp, op="scatter_rows")


def pick(a, cols):
    """out[i] = a[i, cols[i]] for a 2-D tensor; adjoint scatters back."""
    cols = np.asarray(cols, dtype=np.intp)
    rows = np.arange(a.shape[0])
    shape = a.shape

    def vjp(g):
        return (scatter_pick(g, cols, shape),)
    return Tensor(a.data[rows, cols], (a,), vjp, op="pick")


def scatter_pick(a, cols, full_shape):
    out = np.zeros(full_shape)
    out[np.arange(full_shape[0]), cols] = a.data

    def vjp(g):
        return (pick(g, cols),)
    return Tensor(out, (a,), vjp, op="scatter_pick")


ACTIVATIONS = {"tanh": tanh, "relu": relu, "identity": lambda t: t}


# -- backward --------------------------------------------------------------

def _toposort(root):
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            stack.append((p, False))
    return order  # parents before children


def backward(output, wrt):
    """Gradients of a scalar `output` w.r.t. each tensor in `wrt`.

    Returned gradients are Tensors wired into the graph, so they can be
    differentiated again (double backward).  Tensors in `wrt` that the
    output does not depend on get zero gradients.
    """
    if output.data.size != 1:
        raise DiffError("backward requires a scalar output, got shape %s"
                        % (output.shape,))
    wrt = list(wrt)
    topo = _toposort(output)
    wrt_ids = {id(w) for w in wrt}

    # restrict the sweep to nodes on a path from output to some wrt leaf
    needed = set()
    for node in topo:  # parents first
        if id(node) in wrt_ids or any(id(p) in needed for p in node.parents):
            needed.add(id(node))
    if id(output) not in needed:
        return [Tensor(np.zeros(w.shape), op="zero_grad") for w in wrt]

    grads = {id(output): Tensor(np.ones(output.shape), op="seed")}
    for node in reversed(topo):
        g = grads.get(id(node))
        if g is None or node.vjp is None:
            continue
        pgrads = node.vjp(g)
        for p, pg in zip(node.parents, pgrads):
            if id(p) not in needed:
                continue
            if pg.shape != p.shape:
                pg = reshape(pg, p.shape)
            prev = grads.get(id(p))
            grads[id(p)] = pg if prev is None else prev + pg
    out = []
    for w in wrt:
        g = grads.get(id(w))
        out.append(g if g is not None else Tensor(np.zeros(w.shape), op="zero_grad"))
    return out


def grad_wrt_input(fn, point):
    """Gradient of a scalar-valued `fn` at `point`, as a graph tensor."""
    x = point if isinstance(point, Tensor) else Tensor(point)
    y = fn(x)
    if y.data.size != 1:
        raise DiffError("grad_wrt_input requires a scalar-valued function")
    return backward(y, [x])[0]


# -- MLP forward -----------------------------------------------------------

def mlp_forward(layers, x, activation="tanh"):
    """Affine stack with `activation` applied after every layer.

    `layers` is a list of (W, b) Tensor pairs; W is (in, out), b is (out,).
    Input rows are samples.
    """
    act = ACTIVATIONS[activation]
    out = x
    for w, b in layers:
        if out.shape[-1] != w.shape[0]:
            raise ShapeError("layer expects width %d, got %d"
                             % (w.shape[0], out.shape[-1]))
        out = act(out @ w + b)
    return out


# -- verification oracle ---------------------------------------------------

def finite_diff_check(fn, point, eps=1e-4, refine_above=1e-5):
    """Max relative error between analytic and central-difference gradients.

    `fn` maps a Tensor of `point`'s shape to a scalar Tensor.  Relative
    error is |analytic - numeric| / (|analytic| + 1e-8) per coordinate.

    Coordinates whose first-pass error exceeds `refine_above` get a second
    estimate from a fourth-order stencil at a 10x step.  The wider step
    cuts cancellation round-off, which dominates on coordinates where the
    true gradient is (near) zero; the higher order keeps truncation error
    negligible despite it.  Pass refine_above=None to disable.
    """
    point = np.asarray(point, dtype=np.float64)
    analytic = grad_wrt_input(fn, point).data
    numeric = np.zeros_like(point)
    flat = point.ravel()
    nflat = numeric.ravel()

    def probe(i, step):
        orig = flat[i]
        flat[i] = orig + step
        val = fn(Tensor(point)).item()
        flat[i] = orig
        return val

    for i in range(flat.size):
        nflat[i] = (probe(i, eps) - probe(i, -eps)) / (2.0 * eps)
    rel = (np.abs(analytic - numeric) / (np.abs(analytic) + 1e-8)).ravel()
    if refine_above is not None:
        h = 10.0 * eps
        aflat = analytic.ravel()
        for i in np.flatnonzero(rel > refine_above):
            num4 = (8.0 * (probe(i, h) - probe(i, -h))
                    - (probe(i, 2 * h) - probe(i, -2 * h))) / (12.0 * h)
            rel4 = abs(aflat[i] - num4) / (abs(aflat[i]) + 1e-8)
            rel[i] = min(rel[i], rel4)
    return float(rel.max())


# -- Adam ------------------------------------------------------------------

class AdamState:
    """Per-parameter-list Adam accumulators (WGAN-GP style betas)."""

    def __init__(self, params, lr=1e-4, beta1=0.5, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]


def adam_step(params, grads, state, maximize=False):
    """One in-place Adam update; `maximize` flips the gradient sign."""
    if len(params) != len(grads):
        raise ShapeError("params/grads length mismatch")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        if g.shape != p.shape:
            raise ShapeError("grad shape %s does not match param shape %s"
                             % (g.shape, p.shape))
        if maximize:
            g = -g
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g
        mhat = state.m[i] / bc1
        vhat = state.v[i] / bc2
        p.data = p.data - state.lr * mhat / (np.sqrt(vhat) + state.eps)
        _check_finite(p.data, "adam_step")
