"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` records every differentiable operation in execution order and
replays the records in reverse on ``backward``, accumulating gradients into
each participating ``Variable``. Values are plain numpy float64 arrays.

There is no implicit broadcasting beyond the bias-over-batch case inside
``dense`` and the explicit row weighting of ``scale_rows``; every other
shape mismatch raises ``ShapeError`` so bugs surface early instead of
fanning out silently.
"""

from __future__ import annotations

import contextlib
import math

import numpy as np

from .errors import ShapeError

__all__ = [
    "Tape",
    "Variable",
    "add",
    "subtract",
    "multiply",
    "scale",
    "matmul",
    "dense",
    "softmax",
    "layer_norm",
    "sigmoid",
    "relu",
    "concat",
    "slice_cols",
    "scale_rows",
    "mean",
    "transpose",
    "reshape",
    "bce_loss",
    "bce_value",
    "backward",
    "zero_grad",
    "grad_check",
    "grad_check_detailed",
    "BCE_EPS",
]

# Probability clamp for the cross-entropy loss; keeps log() finite.
BCE_EPS = 1e-7


class Variable:
    """A float64 array plus a same-shaped gradient buffer, bound to one tape."""

    __slots__ = ("value", "grad", "requires_grad", "node_id", "tape")

    def __init__(self, value, requires_grad, node_id, tape):
        self.value = value
        self.grad = np.zeros_like(value)
        self.requires_grad = requires_grad
        self.node_id = node_id
        self.tape = tape

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def __repr__(self):
        return (
            f"Variable(shape={self.value.shape}, "
            f"requires_grad={self.requires_grad}, node_id={self.node_id})"
        )


class Tape:
    """Execution-ordered record of operations for one computation context.

    Recording order is topological by construction, so ``backward`` simply
    walks the records in reverse. ``clear`` drops the records (call it
    between optimizer steps) while keeping node-id allocation monotone.
    """

    def __init__(self):
        self._steps = []
        self._next_id = 0
        self._recording = True

    def variable(self, value, requires_grad=False):
        arr = np.asarray(value, dtype=np.float64)
        var = Variable(arr, requires_grad, self._next_id, self)
        self._next_id += 1
        return var

    def parameter(self, value):
        return self.variable(value, requires_grad=True)

    @contextlib.contextmanager
    def paused(self):
        """Suspend recording; results computed inside carry no backward rules."""
        previous = self._recording
        self._recording = False
        try:
            yield self
        finally:
            self._recording = previous

    def clear(self):
        self._steps.clear()

    def backward(self, loss):
        if loss.tape is not self:
            raise ValueError("loss was not produced on this tape")
        if loss.value.shape != ():
            raise ShapeError(
                f"backward requires a scalar loss, got shape {loss.value.shape}"
            )
        loss.grad[...] = 1.0
        for step in reversed(self._steps):
            step()


def _output(inputs, value):
    tape = inputs[0].tape
    for v in inputs[1:]:
        if v.tape is not tape:
            raise ValueError("variables belong to different tapes")
    return tape.variable(value, requires_grad=any(v.requires_grad for v in inputs))


def _live(out):
    return out.tape._recording and out.requires_grad


def _same_shape(op, a, b):
    if a.value.shape != b.value.shape:
        raise ShapeError(f"{op}: shapes {a.value.shape} and {b.value.shape} differ")


def add(a, b):
    _same_shape("add", a, b)
    out = _output((a, b), a.value + b.value)
    if _live(out):

        def step():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad += out.grad

        out.tape._steps.append(step)
    return out


def subtract(a, b):
    _same_shape("subtract", a, b)
    out = _output((a, b), a.value - b.value)
    if _live(out):

        def step():
            if a.requires_grad:
                a.grad += out.grad
            if b.requires_grad:
                b.grad -= out.grad

        out.tape._steps.append(step)
    return out


def multiply(a, b):
    _same_shape("multiply", a, b)
    out = _output((a, b), a.value * b.value)
    if _live(out):

        def step():
            if a.requires_grad:
                a.grad += out.grad * b.value
            if b.requires_grad:
                b.grad += out.grad * a.value

        out.tape._steps.append(step)
    return out


def scale(a, factor):
    factor = float(factor)
    out = _output((a,), a.value * factor)
    if _live(out):

        def step():
            a.grad += out.grad * factor

        out.tape._steps.append(step)
    return out


def matmul(a, b):
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.value.shape} and {b.value.shape}"
        )
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(
            f"matmul inner dimensions disagree: {a.value.shape} vs {b.value.shape}"
        )
    out = _output((a, b), a.value @ b.value)
    if _live(out):

        def step():
            if a.requires_grad:
                a.grad += out.grad @ b.value.T
            if b.requires_grad:
                b.grad += a.value.T @ out.grad

        out.tape._steps.append(step)
    return out


def dense(x, w, bias):
    """Affine map ``x @ w + bias`` with the bias broadcast over the batch."""
    if x.value.ndim != 2 or w.value.ndim != 2 or bias.value.ndim != 1:
        raise ShapeError(
            f"dense expects (batch, d_in), (d_in, d_out), (d_out,); got "
            f"{x.value.shape}, {w.value.shape}, {bias.value.shape}"
        )
    if x.value.shape[1] != w.value.shape[0] or w.value.shape[1] != bias.value.shape[0]:
        raise ShapeError(
            f"dense shapes disagree: {x.value.shape}, {w.value.shape}, "
            f"{bias.value.shape}"
        )
    out = _output((x, w, bias), x.value @ w.value + bias.value)
    if _live(out):

        def step():
            if x.requires_grad:
                x.grad += out.grad @ w.value.T
            if w.requires_grad:
                w.grad += x.value.T @ out.grad
            if bias.requires_grad:
                bias.grad += out.grad.sum(axis=0)

        out.tape._steps.append(step)
    return out


def softmax(x):
    """Row softmax with max-subtraction; rows sum to 1 and are positive."""
    if x.value.ndim != 2 or x.value.shape[1] < 1:
        raise ShapeError(f"softmax expects a (batch, k) matrix, got {x.value.shape}")
    shifted = x.value - x.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=1, keepdims=True)
    out = _output((x,), s)
    if _live(out):

        def step():
            g = out.grad
            x.grad += s * (g - (g * s).sum(axis=1, keepdims=True))

        out.tape._steps.append(step)
    return out


def layer_norm(x, gamma, beta, eps):
    """Per-row standardization (population variance) followed by an affine map."""
    if x.value.ndim != 2 or x.value.shape[1] < 2:
        raise ShapeError(
            f"layer_norm expects (batch, d) with d >= 2, got {x.value.shape}"
        )
    d = x.value.shape[1]
    if gamma.value.shape != (d,) or beta.value.shape != (d,):
        raise ShapeError(
            f"layer_norm affine shapes must be ({d},); got {gamma.value.shape} "
            f"and {beta.value.shape}"
        )
    if eps <= 0:
        raise ValueError("layer_norm eps must be positive")
    mu = x.value.mean(axis=1, keepdims=True)
    var = x.value.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.value - mu) * inv
    out = _output((x, gamma, beta), gamma.value * xhat + beta.value)
    if _live(out):

        def step():
            g = out.grad
            if gamma.requires_grad:
                gamma.grad += (g * xhat).sum(axis=0)
            if beta.requires_grad:
                beta.grad += g.sum(axis=0)
            if x.requires_grad:
                gy = g * gamma.value
                x.grad += inv * (
                    gy
                    - gy.mean(axis=1, keepdims=True)
                    - xhat * (gy * xhat).mean(axis=1, keepdims=True)
                )

        out.tape._steps.append(step)
    return out


def sigmoid(x):
    v = x.value
    s = np.empty_like(v)
    pos = v >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ex = np.exp(v[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = _output((x,), s)
    if _live(out):

        def step():
            x.grad += out.grad * s * (1.0 - s)

        out.tape._steps.append(step)
    return out


def relu(x):
    out = _output((x,), np.maximum(x.value, 0.0))
    if _live(out):

        def step():
            x.grad += out.grad * (x.value > 0.0)

        out.tape._steps.append(step)
    return out


def concat(parts):
    """Concatenate 1-D or 2-D variables along the last axis."""
    parts = list(parts)
    if not parts:
        raise ShapeError("concat requires at least one input")
    nd = parts[0].value.ndim
    if nd not in (1, 2) or any(p.value.ndim != nd for p in parts):
        raise ShapeError(
            "concat expects uniformly 1-D or 2-D inputs, got shapes "
            + str([p.value.shape for p in parts])
        )
    if nd == 2 and len({p.value.shape[0] for p in parts}) != 1:
        raise ShapeError(
            "concat row counts differ: " + str([p.value.shape for p in parts])
        )
    widths = [p.value.shape[-1] for p in parts]
    out = _output(tuple(parts), np.concatenate([p.value for p in parts], axis=-1))
    if _live(out):

        def step():
            start = 0
            for p, width in zip(parts, widths):
                stop = start + width
                if p.requires_grad:
                    p.grad += out.grad[..., start:stop]
                start = stop

        out.tape._steps.append(step)
    return out


def slice_cols(x, start, stop):
    """Select the column block ``[start, stop)`` of a 2-D variable."""
    if x.value.ndim != 2:
        raise ShapeError(f"slice_cols expects a 2-D input, got {x.value.shape}")
    cols = x.value.shape[1]
    if not (0 <= start < stop <= cols):
        raise ShapeError(f"slice_cols bounds [{start}, {stop}) invalid for {cols} columns")
    out = _output((x,), x.value[:, start:stop].copy())
    if _live(out):

        def step():
            x.grad[:, start:stop] += out.grad

        out.tape._steps.append(step)
    return out


def scale_rows(x, s):
    """Multiply every row of ``x`` (batch, d) by the matching entry of ``s`` (batch, 1)."""
    if x.value.ndim != 2 or s.value.shape != (x.value.shape[0], 1):
        raise ShapeError(
            f"scale_rows expects (batch, d) and (batch, 1); got {x.value.shape} "
            f"and {s.value.shape}"
        )
    out = _output((x, s), x.value * s.value)
    if _live(out):

        def step():
            if x.requires_grad:
                x.grad += out.grad * s.value
            if s.requires_grad:
                s.grad += (out.grad * x.value).sum(axis=1, keepdims=True)

        out.tape._steps.append(step)
    return out


def mean(x, axis=None):
    """Arithmetic mean over all entries (axis=None) or along one axis."""
    if axis is None:
        out = _output((x,), np.float64(x.value.mean()))
        if _live(out):

            def step():
                x.grad += out.grad / x.value.size

            out.tape._steps.append(step)
        return out
    n = x.value.shape[axis]
    out = _output((x,), x.value.mean(axis=axis))
    if _live(out):

        def step():
            x.grad += np.expand_dims(out.grad, axis) / n

        out.tape._steps.append(step)
    return out


def transpose(x):
    if x.value.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D input, got {x.value.shape}")
    out = _output((x,), x.value.T.copy())
    if _live(out):

        def step():
            x.grad += out.grad.T

        out.tape._steps.append(step)
    return out


def reshape(x, shape):
    shape = tuple(int(s) for s in shape)
    if math.prod(shape) != x.value.size:
        raise ShapeError(f"cannot reshape {x.value.shape} to {shape}")
    out = _output((x,), x.value.reshape(shape).copy())
    if _live(out):

        def step():
            x.grad += out.grad.reshape(x.value.shape)

        out.tape._steps.append(step)
    return out


def bce_value(probs, targets):
    """Mean binary cross entropy of plain arrays, with the standard clamp."""
    p = np.clip(probs, BCE_EPS, 1.0 - BCE_EPS)
    return float(-(targets * np.log(p) + (1.0 - targets) * np.log1p(-p)).mean())


def bce_loss(p, y):
    """Mean binary cross entropy of predictions ``p`` against {0,1} targets.

    Predictions are clamped to [BCE_EPS, 1 - BCE_EPS]; the gradient is zero
    where the clamp binds.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != p.value.shape:
        raise ShapeError(f"bce_loss: predictions {p.value.shape} vs targets {y.shape}")
    pc = np.clip(p.value, BCE_EPS, 1.0 - BCE_EPS)
    out = _output((p,), np.float64(bce_value(p.value, y)))
    if _live(out):

        def step():
            inside = (p.value > BCE_EPS) & (p.value < 1.0 - BCE_EPS)
            p.grad += out.grad * inside * (pc - y) / (pc * (1.0 - pc) * p.value.size)

        out.tape._steps.append(step)
    return out


def backward(tape, loss):
    """Propagate d(loss)/d(variable) into every recorded variable's ``grad``."""
    tape.backward(loss)


def zero_grad(variables):
    for v in variables:
        v.zero_grad()


def grad_check_detailed(f, named_params, h=1e-4):
    """Compare tape gradients of ``f(params) -> scalar Variable`` against
    central finite differences, coordinate by coordinate.

    Returns ``(max_rel_err, {name: rel_err})`` with the relative error
    denominator ``max(|analytic|, |numeric|, 1e-8)``. ``f`` must be
    deterministic. The params' tape is cleared by this harness.
    """
    names = [n for n, _ in named_params]
    params = [p for _, p in named_params]
    tape = params[0].tape
    tape.clear()
    for p in params:
        p.zero_grad()
    loss = f(params)
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    tape.clear()
    per_param = {}
    with tape.paused():
        for name, p, g in zip(names, params, analytic):
            flat = p.value.reshape(-1)
            gflat = g.reshape(-1)
            worst = 0.0
            for i in range(flat.size):
                saved = flat[i]
                flat[i] = saved + h
                up = float(f(params).value)
                flat[i] = saved - h
                down = float(f(params).value)
                flat[i] = saved
                numeric = (up - down) / (2.0 * h)
                denom = max(abs(gflat[i]), abs(numeric), 1e-8)
                worst = max(worst, abs(gflat[i] - numeric) / denom)
            per_param[name] = worst
    return max(per_param.values()), per_param


def grad_check(f, params, h=1e-4):
    """Maximum relative error between tape gradients and central differences."""
    named = [(f"p{i}", p) for i, p in enumerate(params)]
    worst, _ = grad_check_detailed(f, named, h=h)
    return worst
