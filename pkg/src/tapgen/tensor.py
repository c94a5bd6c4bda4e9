"""Minimal dense-tensor core: values, a gradient tape, and a finite-difference verifier.

Tensors wrap contiguous numpy arrays (up to 4 axes) in one of two precisions:
float64 for verification suites, float32 for training runs.  Differentiable
operations live in :mod:`tapgen.ops`; each one appends an :class:`OpRecord`
to the active :class:`Tape`, and ``Tape.backward`` replays the records in
reverse to accumulate gradients into every tensor that was touched.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import NumericError

DTYPES = {"f32": np.float32, "f64": np.float64}

# Toggled off only in tight benchmark loops; every primitive otherwise
# verifies its output is finite.
CHECK_FINITE = True


def check_finite(data: np.ndarray, op: str) -> None:
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NumericError(f"non-finite values produced by '{op}'", stage=op)


class Tensor:
    """A dense row-major array with an optional gradient slot.

    Tensors are written once by the operation that produces them and treated
    as immutable afterwards; ``grad`` is filled in by ``Tape.backward``.
    """

    __slots__ = ("data", "grad", "name")

    def __init__(self, data, dtype=None, name: str | None = None):
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        if arr.ndim > 4:
            raise ValueError(f"tensors support at most 4 axes, got shape {arr.shape}")
        self.data = arr
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if g.shape != self.data.shape:
            raise ValueError(
                f"gradient shape {g.shape} does not match tensor shape {self.data.shape}"
            )
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}{tag})"


class OpRecord:
    """One differentiable operation on the tape.

    ``backward_fn`` consumes the upstream gradient (same shape as the forward
    output) and returns one gradient per input, aligned with ``inputs``;
    ``None`` marks an input that does not receive gradient.
    """

    __slots__ = ("op", "inputs", "output", "backward_fn")

    def __init__(
        self,
        op: str,
        inputs: Sequence[Tensor],
        output: Tensor,
        backward_fn: Callable[[np.ndarray], Sequence[np.ndarray | None]],
    ):
        self.op = op
        self.inputs = tuple(inputs)
        self.output = output
        self.backward_fn = backward_fn


class Tape:
    """Ordered record of one forward pass.

    Recording and backward are single-owner operations; a tape cannot be
    replayed twice without an explicit :meth:`reset`.
    """

    def __init__(self):
        self.records: list[OpRecord] = []
        self._replayed = False

    def record(self, record: OpRecord) -> None:
        self.records.append(record)

    def backward(self, output: Tensor, seed: float = 1.0) -> None:
        """Accumulate gradients of ``seed * output`` into every tensor on the tape.

        ``output`` must be scalar-shaped (the usual loss).  Parameters keep the
        accumulated gradient in their ``grad`` slot afterwards.
        """
        if self._replayed:
            raise RuntimeError("tape already replayed; call reset() first")
        if output.data.size != 1:
            raise ValueError("backward seed requires a scalar-valued output")
        self._replayed = True
        output.accumulate_grad(np.full_like(output.data, seed))
        for rec in reversed(self.records):
            g = rec.output.grad
            if g is None:
                continue
            grads = rec.backward_fn(g)
            for inp, gi in zip(rec.inputs, grads):
                if gi is not None:
                    check_finite(gi, f"{rec.op}.backward")
                    inp.accumulate_grad(np.asarray(gi, dtype=inp.data.dtype))

    def reset(self) -> None:
        """Clear recorded ops and intermediate gradients so the tape can be reused."""
        for rec in self.records:
            rec.output.grad = None
            for inp in rec.inputs:
                inp.grad = None
        self.records.clear()
        self._replayed = False


def finite_difference_check(
    f: Callable[[np.ndarray], float],
    point: np.ndarray,
    analytic_grad: np.ndarray,
    eps: float = 1e-5,
) -> float:
    """Compare an analytic gradient against central finite differences.

    Perturbs every coordinate of ``point`` by ``+/- eps`` and returns the
    maximum over coordinates of ``|a - n| / max(1e-12, |a| + |n|)`` where
    ``a`` is the analytic and ``n`` the numerical derivative.
    """
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-7, 1e-3], got {eps}")
    point = np.asarray(point, dtype=np.float64)
    analytic = np.asarray(analytic_grad, dtype=np.float64)
    if analytic.shape != point.shape:
        raise ValueError("analytic gradient shape must match the point")
    if not np.all(np.isfinite(point)) or not np.all(np.isfinite(analytic)):
        raise NumericError("non-finite inputs to finite_difference_check", stage="gradcheck")

    worst = 0.0
    flat = point.ravel()
    for idx in range(flat.size):
        x_hi = point.copy().ravel()
        x_lo = point.copy().ravel()
        x_hi[idx] += eps
        x_lo[idx] -= eps
        f_hi = float(f(x_hi.reshape(point.shape)))
        f_lo = float(f(x_lo.reshape(point.shape)))
        if not np.isfinite(f_hi) or not np.isfinite(f_lo):
            raise NumericError("non-finite function value during probing", stage="gradcheck")
        numeric = (f_hi - f_lo) / (2.0 * eps)
        a = float(analytic.ravel()[idx])
        err = abs(a - numeric) / max(1e-12, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst
