"""Proposal-quality metrics: average recall against proposal budget, and the
area under the AR-versus-AN curve."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# IoU threshold grids for the two dataset protocols.
IOU_THRESHOLDS = {
    "rescale": tuple(np.round(np.arange(0.5, 0.951, 0.05), 2)),
    "window": tuple(np.round(np.arange(0.5, 1.001, 0.05), 2)),
}
AUC_AN_RANGE = range(1, 101)

Interval = tuple[float, float]
# Ranked proposals per video: (start_s, end_s, score), best first.
ProposalTriples = dict[str, list[tuple[float, float, float]]]
GtsByVideo = dict[str, list[Interval]]


def _pair_iou(props: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """(n_props, n_gts) IoU matrix for interval arrays of shape (n, 2)."""
    inter = np.clip(
        np.minimum(props[:, None, 1], gts[None, :, 1])
        - np.maximum(props[:, None, 0], gts[None, :, 0]),
        0.0,
        None,
    )
    union = (
        (props[:, None, 1] - props[:, None, 0])
        + (gts[None, :, 1] - gts[None, :, 0])
        - inter
    )
    return inter / np.maximum(union, 1e-300)


def _match_ranks(proposals, gts, thresholds) -> np.ndarray:
    """ranks[t, g]: 1-based rank of the first proposal covering gt g at
    IoU >= thresholds[t]; infinity when no proposal ever covers it."""
    n_thr, n_gts = len(thresholds), len(gts)
    ranks = np.full((n_thr, n_gts), np.inf)
    if not proposals:
        return ranks
    p = np.asarray([(a, b) for a, b, _ in proposals], dtype=np.float64)
    g = np.asarray(gts, dtype=np.float64)
    iou = _pair_iou(p, g)
    for t, thr in enumerate(thresholds):
        hit = iou >= thr
        any_hit = hit.any(axis=0)
        first = hit.argmax(axis=0) + 1.0
        ranks[t, any_hit] = first[any_hit]
    return ranks


def recall_curves(
    proposals: ProposalTriples,
    gts: GtsByVideo,
    thresholds,
    max_an: int,
) -> tuple[np.ndarray, list[str]]:
    """Per-threshold mean recall for every proposal budget 1..max_an.

    Returns a (n_thresholds, max_an) matrix averaged over videos, plus the
    ids of videos that were skipped for having no ground truth.
    """
    skipped = [vid for vid, g in gts.items() if not g]
    if skipped:
        logger.warning("excluding %d video(s) without ground truth: %s", len(skipped), skipped)
    vids = [vid for vid in gts if gts[vid]]
    if not vids:
        raise ValueError("no videos with ground truth to evaluate")

    n_thr = len(thresholds)
    acc = np.zeros((n_thr, max_an))
    an_grid = np.arange(1, max_an + 1)
    for vid in vids:
        ranks = _match_ranks(proposals.get(vid, []), gts[vid], thresholds)
        # recall at budget a: fraction of gts whose first match has rank <= a
        matched = ranks[:, :, None] <= an_grid[None, None, :]
        acc += matched.mean(axis=1)
    return acc / len(vids), skipped


def average_recall(
    proposals: ProposalTriples,
    gts: GtsByVideo,
    an: int,
    thresholds=IOU_THRESHOLDS["rescale"],
) -> float:
    """Mean recall over IoU thresholds, then over videos, at a fixed budget."""
    matrix, _ = recall_curves(proposals, gts, thresholds, an)
    return float(matrix[:, an - 1].mean())


def auc_metric(
    proposals: ProposalTriples,
    gts: GtsByVideo,
    thresholds=IOU_THRESHOLDS["rescale"],
) -> float:
    """Area under the AR-vs-AN curve (AN = 1..100), in percent.

    Normalized so a constant recall of 1 scores exactly 100.
    """
    matrix, _ = recall_curves(proposals, gts, thresholds, max(AUC_AN_RANGE))
    ar = matrix.mean(axis=0)
    area = np.trapz(ar, dx=1.0)
    return float(area / (len(ar) - 1) * 100.0)


@dataclass
class EvalReport:
    ar_at: dict[int, float]
    auc: float
    thresholds: tuple[float, ...]
    recall_matrix: np.ndarray  # (n_thresholds, max_an)
    skipped_videos: list[str]

    def to_json(self) -> str:
        doc = {
            "auc": self.auc,
            "ar_at": {str(k): v for k, v in sorted(self.ar_at.items())},
            "iou_thresholds": list(self.thresholds),
            "skipped_videos": self.skipped_videos,
            "recall_matrix": self.recall_matrix.tolist(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    def to_csv(self) -> str:
        lines = ["metric,value"]
        for an, value in sorted(self.ar_at.items()):
            lines.append(f"AR@{an},{value:.10g}")
        lines.append(f"AUC,{self.auc:.10g}")
        header = "iou_threshold," + ",".join(
            f"AN{a}" for a in range(1, self.recall_matrix.shape[1] + 1)
        )
        lines.append(header)
        for thr, row in zip(self.thresholds, self.recall_matrix):
            lines.append(f"{thr:.2f}," + ",".join(f"{v:.10g}" for v in row))
        return "\n".join(lines) + "\n"


def evaluate_proposals(
    proposals: ProposalTriples,
    gts: GtsByVideo,
    thresholds=IOU_THRESHOLDS["rescale"],
    ar_counts=(1, 5, 10, 50, 100),
) -> EvalReport:
    max_an = max(max(ar_counts), max(AUC_AN_RANGE))
    matrix, skipped = recall_curves(proposals, gts, thresholds, max_an)
    ar = matrix.mean(axis=0)
    auc_span = matrix[:, : max(AUC_AN_RANGE)].mean(axis=0)
    auc = float(np.trapz(auc_span, dx=1.0) / (len(auc_span) - 1) * 100.0)
    return EvalReport(
        ar_at={an: float(ar[an - 1]) for an in ar_counts},
        auc=auc,
        thresholds=tuple(float(t) for t in thresholds),
        recall_matrix=matrix,
        skipped_videos=skipped,
    )


def write_report(out_dir, report: EvalReport) -> None:
    out_dir = Path(out_dir)
    (out_dir / "report.json").write_text(report.to_json() + "\n")
    (out_dir / "report.csv").write_text(report.to_csv())
