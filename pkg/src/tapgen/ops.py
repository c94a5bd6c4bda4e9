"""Differentiable primitives: temporal convolutions, pointwise maps, reductions.

Every operation takes an optional ``tape``; when given, the op records a
backward rule so ``Tape.backward`` can later produce input gradients of
exactly the input shapes.  With ``tape=None`` the ops run forward-only.
"""

from __future__ import annotations

import numpy as np

from .tensor import OpRecord, Tape, Tensor, check_finite


def _record(tape, op, inputs, output, backward_fn):
    if tape is not None:
        tape.record(OpRecord(op, inputs, output, backward_fn))
    return output


def conv1d(x: Tensor, weight: Tensor, bias: Tensor, *, tape: Tape | None = None) -> Tensor:
    """Same-length 1-D convolution over an L x Cin sequence.

    ``weight`` has shape (k, Cin, Cout) with odd k in {1, 3}; the sequence is
    zero-padded by (k - 1) // 2 on each side so the temporal extent is
    preserved.
    """
    k, cin, cout = weight.shape
    if k not in (1, 3):
        raise ValueError(f"kernel size must be 1 or 3, got {k}")
    if x.data.ndim != 2 or x.shape[1] != cin:
        raise ValueError(f"input shape {x.shape} incompatible with weight {weight.shape}")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    length = x.shape[0]
    pad = (k - 1) // 2

    xp = np.zeros((length + 2 * pad, cin), dtype=x.data.dtype)
    xp[pad : pad + length] = x.data
    out_data = np.tile(bias.data, (length, 1))
    for dt in range(k):
        out_data += xp[dt : dt + length] @ weight.data[dt]
    check_finite(out_data, "conv1d")
    out = Tensor(out_data)

    def backward(g):
        gx_pad = np.zeros_like(xp)
        gw = np.empty_like(weight.data)
        for dt in range(k):
            gx_pad[dt : dt + length] += g @ weight.data[dt].T
            gw[dt] = xp[dt : dt + length].T @ g
        return gx_pad[pad : pad + length], gw, g.sum(axis=0)

    return _record(tape, "conv1d", (x, weight, bias), out, backward)


def pointwise_linear(x: Tensor, weight: Tensor, bias: Tensor, *, tape: Tape | None = None) -> Tensor:
    """Affine map over the trailing channel axis, applied at every leading index.

    Equivalent to a 1x1 convolution: input (..., Cin) -> output (..., Cout).
    """
    cin, cout = weight.shape
    if x.shape[-1] != cin:
        raise ValueError(f"trailing axis {x.shape[-1]} != weight Cin {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    lead = x.shape[:-1]
    x2d = x.data.reshape(-1, cin)
    out_data = (x2d @ weight.data + bias.data).reshape(lead + (cout,))
    check_finite(out_data, "pointwise_linear")
    out = Tensor(out_data)

    def backward(g):
        g2d = g.reshape(-1, cout)
        return (
            (g2d @ weight.data.T).reshape(x.shape),
            x2d.T @ g2d,
            g2d.sum(axis=0),
        )

    return _record(tape, "pointwise_linear", (x, weight, bias), out, backward)


def conv_collapse_samples(
    x: Tensor, weight: Tensor, bias: Tensor, *, tape: Tape | None = None
) -> Tensor:
    """Fully connect the (N, C) block at every map cell to Cout channels.

    Input (L, L, N, C) with weight (N, C, Cout); the only primitive that mixes
    across the sample axis.
    """
    if x.data.ndim != 4:
        raise ValueError(f"expected a 4-axis input, got shape {x.shape}")
    n, c, cout = weight.shape
    if x.shape[2] != n or x.shape[3] != c:
        raise ValueError(f"input block {x.shape[2:]} != weight block ({n}, {c})")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    l0, l1 = x.shape[:2]
    x2d = x.data.reshape(l0 * l1, n * c)
    w2d = weight.data.reshape(n * c, cout)
    out_data = (x2d @ w2d + bias.data).reshape(l0, l1, cout)
    check_finite(out_data, "conv_collapse_samples")
    out = Tensor(out_data)

    def backward(g):
        g2d = g.reshape(l0 * l1, cout)
        return (
            (g2d @ w2d.T).reshape(x.shape),
            (x2d.T @ g2d).reshape(weight.shape),
            g2d.sum(axis=0),
        )

    return _record(tape, "conv_collapse_samples", (x, weight, bias), out, backward)


def activation(x: Tensor, kind: str, *, tape: Tape | None = None) -> Tensor:
    """Elementwise nonlinearity: ``relu`` or ``sigmoid``."""
    if kind == "relu":
        out_data = np.maximum(x.data, 0)
        out = Tensor(out_data)

        def backward(g):
            return (g * (x.data > 0),)

    elif kind == "sigmoid":
        # exp(-|x|) never overflows; the two branches cover both signs.
        d = x.data
        e = np.exp(-np.abs(d))
        out_data = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
        out = Tensor(out_data)

        def backward(g):
            return (g * out_data * (1.0 - out_data),)

    else:
        raise ValueError(f"unknown activation kind {kind!r}")
    check_finite(out.data, f"activation[{kind}]")
    return _record(tape, f"activation[{kind}]", (x,), out, backward)


def relu(x: Tensor, *, tape: Tape | None = None) -> Tensor:
    return activation(x, "relu", tape=tape)


def sigmoid(x: Tensor, *, tape: Tape | None = None) -> Tensor:
    return activation(x, "sigmoid", tape=tape)


def elementwise_sum(a: Tensor, b: Tensor, *, tape: Tape | None = None) -> Tensor:
    """a + b for identically shaped tensors; backward passes the gradient through."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    out = Tensor(a.data + b.data)
    check_finite(out.data, "elementwise_sum")

    def backward(g):
        return g, g

    return _record(tape, "elementwise_sum", (a, b), out, backward)


def stack_mean(inputs: list[Tensor], *, tape: Tape | None = None) -> Tensor:
    """Arithmetic mean of equal-shape tensors; backward splits by 1/count."""
    if not inputs:
        raise ValueError("stack_mean requires at least one input")
    shape = inputs[0].shape
    for t in inputs[1:]:
        if t.shape != shape:
            raise ValueError(f"shape mismatch {t.shape} vs {shape}")
    acc = inputs[0].data.copy()
    for t in inputs[1:]:
        acc += t.data
    k = len(inputs)
    out = Tensor(acc / k)
    check_finite(out.data, "stack_mean")

    def backward(g):
        share = g / k
        return tuple(share for _ in inputs)

    return _record(tape, "stack_mean", tuple(inputs), out, backward)


def reshape(x: Tensor, shape: tuple[int, ...], *, tape: Tape | None = None) -> Tensor:
    out = Tensor(x.data.reshape(shape))

    def backward(g):
        return (g.reshape(x.shape),)

    return _record(tape, "reshape", (x,), out, backward)


def take_channel(x: Tensor, index: int, *, tape: Tape | None = None) -> Tensor:
    """Select one trailing-axis channel, dropping the axis."""
    out = Tensor(np.ascontiguousarray(x.data[..., index]))

    def backward(g):
        gx = np.zeros_like(x.data)
        gx[..., index] = g
        return (gx,)

    return _record(tape, "take_channel", (x,), out, backward)


def weighted_total(x: Tensor, weights: np.ndarray, *, tape: Tape | None = None) -> Tensor:
    """Scalar sum of x * weights (weights are constants, not differentiated)."""
    w = np.asarray(weights, dtype=x.data.dtype)
    if w.shape != x.shape:
        raise ValueError(f"weight shape {w.shape} != input shape {x.shape}")
    out = Tensor(np.asarray((x.data * w).sum(), dtype=x.data.dtype))

    def backward(g):
        return (w * g,)

    return _record(tape, "weighted_total", (x,), out, backward)


def linear_combination(
    tensors: list[Tensor], coeffs: list[float], *, tape: Tape | None = None
) -> Tensor:
    """sum_i coeffs[i] * tensors[i] over equal-shape tensors."""
    if len(tensors) != len(coeffs) or not tensors:
        raise ValueError("need one coefficient per tensor")
    acc = coeffs[0] * tensors[0].data
    for t, c in zip(tensors[1:], coeffs[1:]):
        acc = acc + c * t.data
    out = Tensor(acc)
    check_finite(out.data, "linear_combination")

    def backward(g):
        return tuple(c * g for c in coeffs)

    return _record(tape, "linear_combination", tuple(tensors), out, backward)
