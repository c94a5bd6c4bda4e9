"""Differentiable proposal feature sampling.

For every candidate interval (start, end) on the temporal grid, a fixed
number of locations is sampled by linear interpolation from three regions:
a left context region around the start, the center span, and a right
context region around the end.  Region widths scale with the proposal
duration d = end - start: the outer regions are [boundary - d/k,
boundary + d/k], the center is [start, end].  Sampling turns an (L, C)
feature sequence into an (L, L, N, C) tensor of per-proposal features;
cells with start >= end are identically zero.

Each continuous position x contributes w_l * f[floor(x)] + w_r *
f[floor(x) + 1] with w_l = floor(x) + 1 - x, and the backward pass routes
gradient to the same two grid locations with the same weights.  Samples
falling outside [0, L-1] contribute nothing in either direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .tensor import OpRecord, Tape, Tensor, check_finite

DEFAULT_COUNTS = (8, 16, 8)
DEFAULT_REGION_DIVISOR = 5


def _validate_counts(n_left: int, n_center: int, n_right: int) -> None:
    for label, n in (("left", n_left), ("center", n_center), ("right", n_right)):
        if n < 0 or n == 1:
            raise ValueError(f"{label} sample count must be 0 or >= 2, got {n}")
    if n_left + n_center + n_right == 0:
        raise ValueError("at least one sampling region must be non-empty")


def _positions(t_s: float, t_e: float, n_left: int, n_center: int, n_right: int, k) -> np.ndarray:
    """Continuous sample positions for one proposal, in branch order."""
    d = t_e - t_s
    xs = []
    for n in range(n_left):
        xs.append(t_s - d / k + (2.0 * d / (k * (n_left - 1))) * n)
    for m in range(n_center):
        xs.append(t_s + (d / (n_center - 1)) * m)
    for m in range(n_right):
        xs.append(t_e - d / k + (2.0 * d / (k * (n_right - 1))) * m)
    return np.asarray(xs, dtype=np.float64)


@dataclass(frozen=True)
class SamplePlan:
    """Interpolation plan for a single proposal (start, end).

    Arrays run over the N = n_left + n_center + n_right samples; ``t_right
    = t_left + 1`` and ``w_left + w_right == 1`` hold exactly.  ``in_range``
    marks samples whose whole weight mass lands inside [0, length-1].
    """

    t_start: float
    t_end: float
    counts: tuple[int, int, int]
    region_divisor: float
    length: int
    x: np.ndarray
    t_left: np.ndarray
    t_right: np.ndarray
    w_left: np.ndarray
    w_right: np.ndarray
    in_range: np.ndarray


def sample_plan(
    t_s: float,
    t_e: float,
    n_left: int = DEFAULT_COUNTS[0],
    n_center: int = DEFAULT_COUNTS[1],
    n_right: int = DEFAULT_COUNTS[2],
    k=DEFAULT_REGION_DIVISOR,
    length: int | None = None,
) -> SamplePlan:
    """Build the interpolation plan for one proposal with t_s < t_e."""
    if t_s >= t_e:
        raise ValueError(f"need start < end, got ({t_s}, {t_e}); the zero rule applies instead")
    if k <= 0:
        raise ValueError(f"region divisor must be positive, got {k}")
    _validate_counts(n_left, n_center, n_right)
    if length is None:
        length = int(np.ceil(t_e)) + 1

    x = _positions(t_s, t_e, n_left, n_center, n_right, k)
    t_left = np.floor(x)
    t_right = t_left + 1.0
    w_left = t_right - x
    w_right = x - t_left
    ok_l = (t_left >= 0) & (t_left <= length - 1)
    ok_r = (t_right >= 0) & (t_right <= length - 1)
    in_range = (ok_l | (w_left == 0.0)) & (ok_r | (w_right == 0.0))
    return SamplePlan(
        t_start=float(t_s),
        t_end=float(t_e),
        counts=(n_left, n_center, n_right),
        region_divisor=float(k),
        length=length,
        x=x,
        t_left=t_left.astype(np.int64),
        t_right=t_right.astype(np.int64),
        w_left=w_left,
        w_right=w_right,
        in_range=in_range,
    )


class GridSamplePlan:
    """Vectorized plans for every grid cell (i, j), i < j, of an L-grid.

    Out-of-range samples and all samples of invalid cells (i >= j) are
    stored as index 0 with weight 0, which lets the kernels run plain
    gathers/scatters while preserving the zero rule exactly.
    """

    def __init__(self, length: int, counts=DEFAULT_COUNTS, k=DEFAULT_REGION_DIVISOR):
        n_left, n_center, n_right = counts
        _validate_counts(n_left, n_center, n_right)
        if k <= 0:
            raise ValueError(f"region divisor must be positive, got {k}")
        if length < 2:
            raise ValueError(f"grid length must be >= 2, got {length}")
        self.length = length
        self.counts = (n_left, n_center, n_right)
        self.region_divisor = k
        self.n_samples = n_left + n_center + n_right

        i = np.arange(length, dtype=np.float64)[:, None, None]
        j = np.arange(length, dtype=np.float64)[None, :, None]
        d = j - i
        blocks = []
        if n_left:
            n = np.arange(n_left, dtype=np.float64)
            blocks.append(i - d / k + (2.0 * d / (k * (n_left - 1))) * n)
        if n_center:
            m = np.arange(n_center, dtype=np.float64)
            blocks.append(i + (d / (n_center - 1)) * m)
        if n_right:
            m = np.arange(n_right, dtype=np.float64)
            blocks.append(j - d / k + (2.0 * d / (k * (n_right - 1))) * m)
        x = np.concatenate(blocks, axis=2)

        t_left = np.floor(x)
        t_right = t_left + 1.0
        w_left = t_right - x
        w_right = x - t_left
        valid = (np.arange(length)[:, None] < np.arange(length)[None, :])[:, :, None]
        keep_l = valid & (t_left >= 0) & (t_left <= length - 1)
        keep_r = valid & (t_right >= 0) & (t_right <= length - 1)
        w_left = np.where(keep_l, w_left, 0.0)
        w_right = np.where(keep_r, w_right, 0.0)

        self.valid = valid[:, :, 0]
        self.t_left = np.ascontiguousarray(np.where(keep_l, t_left, 0.0), dtype=np.int32)
        self.t_right = np.ascontiguousarray(np.where(keep_r, t_right, 0.0), dtype=np.int32)
        self.w_left = np.ascontiguousarray(w_left)
        self.w_right = np.ascontiguousarray(w_right)
        # Cells whose entire weight mass lands in range keep w_l + w_r == 1
        # on every sample (the sums are exact in float64).
        self.fully_in_range = self.valid & np.all(w_left + w_right == 1.0, axis=2)
        self._weights_f32: tuple[np.ndarray, np.ndarray] | None = None

    def weights(self, dtype) -> tuple[np.ndarray, np.ndarray]:
        """(w_left, w_right) cast to the requested dtype (cached for float32)."""
        if np.dtype(dtype) == np.float64:
            return self.w_left, self.w_right
        if self._weights_f32 is None:
            self._weights_f32 = (
                self.w_left.astype(np.float32),
                self.w_right.astype(np.float32),
            )
        return self._weights_f32

    def cell(self, i: int, j: int) -> SamplePlan:
        """The single-proposal plan at cell (i, j); must satisfy i < j."""
        return sample_plan(
            float(i), float(j), *self.counts, k=self.region_divisor, length=self.length
        )


@lru_cache(maxsize=32)
def grid_plan(length: int, counts=DEFAULT_COUNTS, k=DEFAULT_REGION_DIVISOR) -> GridSamplePlan:
    """Cached grid plan; plans depend only on (length, counts, k)."""
    return GridSamplePlan(length, counts, k)


def pfg_forward(f: np.ndarray, plan: GridSamplePlan) -> np.ndarray:
    """Sample an (L, C) sequence into the dense (L, L, N, C) proposal tensor."""
    f = np.asarray(f)
    if f.ndim != 2 or f.shape[0] != plan.length:
        raise ValueError(f"feature shape {f.shape} incompatible with plan length {plan.length}")
    wl, wr = plan.weights(f.dtype)
    return _kernels.expand_forward(f, plan.t_left, plan.t_right, wl, wr)


def pfg_backward(grad_out: np.ndarray, plan: GridSamplePlan) -> np.ndarray:
    """Route an (L, L, N, C) upstream gradient back to the (L, C) input."""
    grad_out = np.ascontiguousarray(grad_out)
    expected = (plan.length, plan.length, plan.n_samples)
    if grad_out.shape[:3] != expected:
        raise ValueError(f"gradient shape {grad_out.shape} does not match plan {expected}")
    wl, wr = plan.weights(grad_out.dtype)
    return _kernels.expand_backward(grad_out, plan.t_left, plan.t_right, wl, wr, plan.length)


def proposal_expand(x: Tensor, plan: GridSamplePlan, *, tape: Tape | None = None) -> Tensor:
    """Tape op: (L, C) -> (L, L, N, C) proposal feature tensor."""
    out = Tensor(pfg_forward(x.data, plan))
    check_finite(out.data, "proposal_expand")

    def backward(g):
        return (pfg_backward(g, plan),)

    if tape is not None:
        tape.record(OpRecord("proposal_expand", (x,), out, backward))
    return out


def proposal_collapse(
    x: Tensor, weight: Tensor, bias: Tensor, plan: GridSamplePlan, *, tape: Tape | None = None
) -> Tensor:
    """Tape op fusing sampling with the per-cell (N, C) -> Cout collapse.

    Equivalent to ``conv_collapse_samples(proposal_expand(x), weight, bias)``
    but samples a pre-collapsed (L, N, Cout) grid instead of materializing
    the full L*L*N*C tensor: collapsing each temporal location first is
    exact because both maps are linear.
    """
    n, c, cout = weight.shape
    if x.shape != (plan.length, c):
        raise ValueError(f"input shape {x.shape} != ({plan.length}, {c})")
    if n != plan.n_samples:
        raise ValueError(f"weight sample axis {n} != plan sample count {plan.n_samples}")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")

    wl, wr = plan.weights(x.dtype)
    grid = np.ascontiguousarray(np.tensordot(x.data, weight.data, axes=([1], [1])))
    out = Tensor(
        _kernels.collapse_forward(grid, plan.t_left, plan.t_right, wl, wr, bias.data)
    )
    check_finite(out.data, "proposal_collapse")

    def backward(g):
        g = np.ascontiguousarray(g)
        ggrid = _kernels.collapse_backward(g, plan.t_left, plan.t_right, wl, wr, plan.length)
        gx = np.tensordot(ggrid, weight.data, axes=([1, 2], [0, 2]))
        gw = np.tensordot(x.data, ggrid, axes=([0], [0])).transpose(1, 0, 2)
        return gx, gw, g.sum(axis=(0, 1))

    if tape is not None:
        tape.record(OpRecord("proposal_collapse", (x, weight, bias), out, backward))
    return out
