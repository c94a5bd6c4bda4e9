"""Temporal grid mapping and training-target generation.

Annotations arrive in seconds; the grid maps them linearly onto [0, L] where
one grid unit is the spacing between adjacent temporal locations.  Targets:

* actionness ``g_a`` (length L): location i is positive when the unit window
  [i - 1/2, i + 1/2] overlaps some action span by more than half its length.
* boundary maps ``g_s``/``g_e`` (L x L): cell (i, j) is start-positive when
  [i - 1/2, i + 1/2] overlaps some window of two grid units centered on a
  ground-truth start by more than half its length (ends symmetrically on j).
* completeness ``g_c`` (L x L): for i < j the best IoU of [i, j] against the
  ground-truth spans, zero on and below the diagonal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

# One grid unit separates adjacent temporal locations; all regions are
# expressed in multiples of it.
GRID_UNIT = 1.0


@dataclass(frozen=True)
class TemporalGrid:
    """Linear map between seconds and an L-location grid."""

    length: int
    duration: float

    def __post_init__(self):
        if self.length < 2:
            raise ValidationError(f"grid needs at least 2 locations, got {self.length}")
        if self.duration <= 0:
            raise ValidationError(f"duration must be positive, got {self.duration}")

    def to_grid(self, t_sec: float) -> float:
        return t_sec / self.duration * self.length

    def to_seconds(self, t_grid: float) -> float:
        return t_grid / self.length * self.duration


@dataclass(frozen=True)
class GtInstance:
    """One ground-truth action span in grid units."""

    t_start: float
    t_end: float
    start_region: tuple[float, float] = field(init=False)
    end_region: tuple[float, float] = field(init=False)

    def __post_init__(self):
        if not self.t_start < self.t_end:
            raise ValidationError(f"instance needs start < end, got ({self.t_start}, {self.t_end})")
        object.__setattr__(self, "start_region", (self.t_start - GRID_UNIT, self.t_start + GRID_UNIT))
        object.__setattr__(self, "end_region", (self.t_end - GRID_UNIT, self.t_end + GRID_UNIT))

    @property
    def span(self) -> tuple[float, float]:
        return (self.t_start, self.t_end)


def interval_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    """Intersection over union of two intervals."""
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    if union <= 0:
        raise ValidationError(f"zero-length union for intervals {a} and {b}")
    return inter / union

def interval_ior(region: tuple[float, float], gt: tuple[float, float]) -> float:
    """Overlap of ``region`` with ``gt``, proportional to the region's own length."""
    length = region[1] - region[0]
    if length <= 0:
        raise ValidationError(f"region {region} has non-positive length")
    inter = max(0.0, min(region[1], gt[1]) - max(region[0], gt[0]))
    return inter / length


def to_grid(
    segments_sec: list[tuple[float, float]], duration: float, length: int
) -> list[GtInstance]:
    """Rescale second-denominated annotations onto the grid."""
    grid = TemporalGrid(length, duration)
    out = []
    for ts, te in segments_sec:
        if not 0 <= ts < te <= duration:
            raise ValidationError(
                f"segment ({ts}, {te}) outside [0, {duration}] or inverted"
            )
        out.append(GtInstance(grid.to_grid(ts), grid.to_grid(te)))
    return out


@dataclass(frozen=True)
class LabelSet:
    """Training targets for one video on one grid."""

    actionness: np.ndarray  # (L,) binary
    start_map: np.ndarray  # (L, L) binary, constant along rows
    end_map: np.ndarray  # (L, L) binary, constant along columns
    completeness: np.ndarray  # (L, L) in [0, 1], zero where i >= j


# "bigger than" the overlap threshold is read strictly.
OVERLAP_THRESHOLD = 0.5


def actionness_labels(gts: list[GtInstance], grid: TemporalGrid) -> np.ndarray:
    """Per-location binary actionness targets."""
    length = grid.length
    out = np.zeros(length, dtype=np.float64)
    if not gts:
        return out
    lo = np.arange(length, dtype=np.float64) - GRID_UNIT / 2
    hi = lo + GRID_UNIT
    best = np.zeros(length)
    for g in gts:
        inter = np.clip(np.minimum(hi, g.t_end) - np.maximum(lo, g.t_start), 0.0, None)
        best = np.maximum(best, inter / GRID_UNIT)
    out[best > OVERLAP_THRESHOLD] = 1.0
    return out


def _boundary_vector(gts: list[GtInstance], grid: TemporalGrid, which: str) -> np.ndarray:
    length = grid.length
    lo = np.arange(length, dtype=np.float64) - GRID_UNIT / 2
    hi = lo + GRID_UNIT
    best = np.zeros(length)
    for g in gts:
        ra, rb = g.start_region if which == "start" else g.end_region
        inter = np.clip(np.minimum(hi, rb) - np.maximum(lo, ra), 0.0, None)
        best = np.maximum(best, inter / GRID_UNIT)
    return (best > OVERLAP_THRESHOLD).astype(np.float64)


def boundary_label_maps(gts: list[GtInstance], grid: TemporalGrid) -> tuple[np.ndarray, np.ndarray]:
    """(start, end) L x L maps; start depends only on i, end only on j."""
    length = grid.length
    s = _boundary_vector(gts, grid, "start")
    e = _boundary_vector(gts, grid, "end")
    return (
        np.repeat(s[:, None], length, axis=1),
        np.repeat(e[None, :], length, axis=0),
    )


def completeness_label_map(gts: list[GtInstance], grid: TemporalGrid) -> np.ndarray:
    """Best IoU of each upper-triangle cell [i, j] against the action spans."""
    length = grid.length
    out = np.zeros((length, length), dtype=np.float64)
    if not gts:
        return out
    i = np.arange(length, dtype=np.float64)[:, None]
    j = np.arange(length, dtype=np.float64)[None, :]
    valid = i < j
    for g in gts:
        inter = np.clip(np.minimum(j, g.t_end) - np.maximum(i, g.t_start), 0.0, None)
        union = (j - i) + (g.t_end - g.t_start) - inter
        iou = np.where(valid, inter / np.where(valid, union, 1.0), 0.0)
        out = np.maximum(out, iou)
    return out


def build_labels(gts: list[GtInstance], grid: TemporalGrid) -> LabelSet:
    s, e = boundary_label_maps(gts, grid)
    return LabelSet(
        actionness=actionness_labels(gts, grid),
        start_map=s,
        end_map=e,
        completeness=completeness_label_map(gts, grid),
    )
