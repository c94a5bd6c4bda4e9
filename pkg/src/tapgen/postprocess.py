"""Score-map fusion, dense candidate enumeration, Soft-NMS, and retrieval."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .labels import TemporalGrid

SNMS_THRESHOLD = 0.8
SNMS_DECAY = 0.75
MAX_PROPOSALS = 100
MIN_SCORE = 0.0


@dataclass
class Proposal:
    """A scored candidate interval, in grid units and seconds."""

    start: float
    end: float
    score: float
    start_sec: float
    end_sec: float
    completeness: float
    boundary_start: float
    boundary_end: float

    def as_dict(self) -> dict:
        return {
            "start_s": self.start_sec,
            "end_s": self.end_sec,
            "score": self.score,
        }


def fuse_boundary_maps(start_map: np.ndarray, end_map: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Average boundary probability over proposals sharing a boundary.

    Returns the row-averaged start vector (depends only on i) and the
    column-averaged end vector (depends only on j).
    """
    if start_map.shape != end_map.shape or start_map.ndim != 2:
        raise ValueError("boundary maps must be two equal L x L arrays")
    return start_map.mean(axis=1), end_map.mean(axis=0)


def fuse_confidence(
    completeness: np.ndarray, start_vec: np.ndarray, end_vec: np.ndarray
) -> np.ndarray:
    """Final per-cell confidence: completeness * start[i] * end[j]."""
    return completeness * start_vec[:, None] * end_vec[None, :]


def dense_candidates(
    fused: np.ndarray,
    completeness: np.ndarray,
    start_vec: np.ndarray,
    end_vec: np.ndarray,
    grid: TemporalGrid,
    offset: float = 0.0,
) -> list[Proposal]:
    """All upper-triangle cells as proposals, best score first.

    ``grid`` maps video-level grid units to seconds; ``offset`` shifts the
    cell coordinates (used when the map came from a sliding window).  Ties
    are broken by earlier start, then shorter duration.
    """
    length = fused.shape[0]
    ii, jj = np.triu_indices(length, k=1)
    scores = fused[ii, jj]
    order = np.lexsort((jj - ii, ii, -scores))
    out = []
    for idx in order:
        i, j = float(ii[idx]), float(jj[idx])
        out.append(
            Proposal(
                start=i + offset,
                end=j + offset,
                score=float(scores[idx]),
                start_sec=grid.to_seconds(i + offset),
                end_sec=grid.to_seconds(j + offset),
                completeness=float(completeness[ii[idx], jj[idx]]),
                boundary_start=float(start_vec[ii[idx]]),
                boundary_end=float(end_vec[jj[idx]]),
            )
        )
    return out


def _iou_against(starts, ends, start, end):
    inter = np.clip(np.minimum(ends, end) - np.maximum(starts, start), 0.0, None)
    union = (ends - starts) + (end - start) - inter
    return np.where(union > 0, inter / np.maximum(union, 1e-300), 0.0)


def soft_nms(
    proposals: list[Proposal],
    threshold: float = SNMS_THRESHOLD,
    decay: float = SNMS_DECAY,
    gated: bool = True,
    top_k: int | None = None,
) -> list[Proposal]:
    """Gaussian score decay instead of hard suppression.

    Repeatedly selects the highest-scored remaining proposal and multiplies
    every overlapping remaining score by exp(-IoU^2 / decay).  With
    ``gated=True`` (default) only pairs with IoU > threshold are decayed;
    ungated mode decays every overlapping pair.  Intervals are never
    modified and scores never increase.  ``top_k`` stops early once that
    many proposals have been finalized (the remainder keep their current
    decayed scores).
    """
    if not proposals:
        return []
    starts = np.array([p.start_sec for p in proposals])
    ends = np.array([p.end_sec for p in proposals])
    scores = np.array([p.score for p in proposals], dtype=np.float64)
    n = len(proposals)
    alive = np.ones(n, dtype=bool)
    final = scores.copy()
    picked: list[int] = []
    limit = n if top_k is None else min(top_k, n)
    while alive.any():
        idx = int(np.flatnonzero(alive)[np.argmax(scores[alive])])
        final[idx] = scores[idx]
        picked.append(idx)
        alive[idx] = False
        if len(picked) >= limit:
            break
        if not alive.any():
            break
        rest = np.flatnonzero(alive)
        ious = _iou_against(starts[rest], ends[rest], starts[idx], ends[idx])
        factor = np.exp(-(ious**2) / decay)
        if gated:
            factor = np.where(ious > threshold, factor, 1.0)
        scores[rest] *= factor
    final[alive] = scores[alive]

    order = picked + sorted(np.flatnonzero(alive), key=lambda i: -final[i])
    out = []
    for idx in order:
        p = proposals[idx]
        out.append(
            Proposal(
                start=p.start,
                end=p.end,
                score=float(final[idx]),
                start_sec=p.start_sec,
                end_sec=p.end_sec,
                completeness=p.completeness,
                boundary_start=p.boundary_start,
                boundary_end=p.boundary_end,
            )
        )
    return out


def retrieve(
    proposals: list[Proposal],
    max_count: int = MAX_PROPOSALS,
    min_score: float = MIN_SCORE,
) -> list[Proposal]:
    """Drop proposals below min_score and keep the max_count best."""
    kept = [p for p in proposals if p.score >= min_score]
    kept.sort(key=lambda p: (-p.score, p.start, p.end - p.start))
    return kept[:max_count]


def write_proposals(path, by_video: dict[str, list[Proposal]]) -> None:
    doc = {vid: [p.as_dict() for p in props] for vid, props in sorted(by_video.items())}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def load_proposals(path) -> dict[str, list[tuple[float, float, float]]]:
    """Proposals as (start_s, end_s, score) triples, best score first."""
    doc = json.loads(Path(path).read_text())
    out = {}
    for vid, entries in doc.items():
        triples = [(float(e["start_s"]), float(e["end_s"]), float(e["score"])) for e in entries]
        triples.sort(key=lambda t: -t[2])
        out[vid] = triples
    return out
