"""Feature-file and annotation ingestion, sequence rescaling, sliding
windows, and a synthetic corpus generator.

Feature files hold one stream of one video each, in either of two formats:

* text: a header line ``"L C"`` followed by L rows of C decimal values;
* binary: magic ``FSEQB\\x01``, little-endian uint32 L and C, then L*C
  little-endian float32 values.

A corpus directory contains ``<video_id>.spatial.<ext>`` and
``<video_id>.temporal.<ext>`` (ext ``txt`` or ``bin``) plus an
``annotations.json`` mapping video id to duration and segments:
``{"vid": {"duration_second": 60.0, "annotations": [{"segment": [s, e]}]}}``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

BINARY_MAGIC = b"FSEQB\x01"


@dataclass
class VideoRecord:
    """Two-stream features plus annotations for one untrimmed video."""

    video_id: str
    duration: float  # seconds
    spatial: np.ndarray  # (L0, C)
    temporal: np.ndarray  # (L0, C)
    annotations: list[tuple[float, float]] = field(default_factory=list)  # seconds

    def __post_init__(self):
        if self.spatial.shape != self.temporal.shape:
            raise ValidationError(
                f"{self.video_id}: stream shapes differ "
                f"({self.spatial.shape} vs {self.temporal.shape})"
            )


@dataclass
class WindowRecord:
    """A fixed-length slice of a video's feature sequence.

    ``offset`` is the parent-grid index of the window start; annotations are
    stored in window grid units, already clipped.
    """

    video_id: str
    offset: int
    spatial: np.ndarray  # (L, C)
    temporal: np.ndarray  # (L, C)
    annotations_grid: list[tuple[float, float]]
    padded: bool = False

    @property
    def window_id(self) -> str:
        return f"{self.video_id}@{self.offset}"


def write_features_text(path, features: np.ndarray) -> None:
    length, channels = features.shape
    with open(path, "w") as fh:
        fh.write(f"{length} {channels}\n")
        for row in features:
            fh.write(" ".join(f"{v:.8g}" for v in row) + "\n")


def write_features_binary(path, features: np.ndarray) -> None:
    length, channels = features.shape
    with open(path, "wb") as fh:
        fh.write(BINARY_MAGIC)
        fh.write(np.asarray([length, channels], dtype="<u4").tobytes())
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def load_features(path) -> np.ndarray:
    """Load one stream; the format is detected from the leading bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(len(BINARY_MAGIC))
    if head == BINARY_MAGIC:
        return _load_features_binary(path)
    return _load_features_text(path)


def _load_features_binary(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    hdr = np.frombuffer(raw, dtype="<u4", count=2, offset=len(BINARY_MAGIC))
    length, channels = int(hdr[0]), int(hdr[1])
    body = raw[len(BINARY_MAGIC) + 8 :]
    expected = length * channels * 4
    if len(body) != expected:
        raise ValidationError(f"{path}: payload is {len(body)} bytes, expected {expected}")
    out = np.frombuffer(body, dtype="<f4").reshape(length, channels).astype(np.float32)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{path}: non-finite feature values")
    return out


def _load_features_text(path) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValidationError(f"{path}:1: header must be 'L C'")
        try:
            length, channels = int(header[0]), int(header[1])
        except ValueError as exc:
            raise ValidationError(f"{path}:1: bad header {header!r}") from exc
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            values = line.split()
            if len(values) != channels:
                raise ValidationError(
                    f"{path}:{lineno}: expected {channels} values, got {len(values)}"
                )
            rows.append([float(v) for v in values])
    if len(rows) != length:
        raise ValidationError(f"{path}: expected {length} rows, got {len(rows)}")
    out = np.asarray(rows, dtype=np.float32)
    if not np.all(np.isfinite(out)):
        raise ValidationError(f"{path}: non-finite feature values")
    return out


def load_annotations(path) -> dict[str, tuple[float, list[tuple[float, float]]]]:
    """video id -> (duration_seconds, [(start_s, end_s), ...])."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from exc
    out = {}
    for vid, entry in doc.items():
        if "duration_second" not in entry:
            raise ValidationError(f"{path}: video {vid!r} missing 'duration_second'")
        duration = float(entry["duration_second"])
        segments = []
        for ann in entry.get("annotations", []):
            if "segment" not in ann or len(ann["segment"]) != 2:
                raise ValidationError(f"{path}: video {vid!r} has a malformed segment")
            ts, te = float(ann["segment"][0]), float(ann["segment"][1])
            if ts >= te:
                raise ValidationError(f"{path}: video {vid!r} segment [{ts}, {te}] inverted")
            segments.append((ts, te))
        out[vid] = (duration, segments)
    return out


def write_annotations(path, records: list[VideoRecord]) -> None:
    doc = {
        r.video_id: {
            "duration_second": r.duration,
            "annotations": [{"segment": [ts, te]} for ts, te in r.annotations],
        }
        for r in records
    }
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def rescale_sequence(features: np.ndarray, length: int) -> np.ndarray:
    """Per-channel linear interpolation onto ``length`` evenly spaced points.

    The sample positions span [0, L0-1], so the first and last feature
    vectors are preserved exactly.
    """
    l0 = features.shape[0]
    if l0 < 2:
        raise ValidationError(f"cannot rescale a length-{l0} sequence")
    if length == l0:
        return features.copy()
    pos = np.linspace(0.0, l0 - 1.0, length)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, l0 - 1)
    w = (pos - lo)[:, None]
    return ((1.0 - w) * features[lo] + w * features[hi]).astype(features.dtype)


def sliding_windows(record: VideoRecord, length: int, overlap: float) -> list[WindowRecord]:
    """Cut a video into fixed-length windows with the given fractional overlap.

    A trailing window ending exactly at the sequence end is added when the
    regular stride does not reach it.  Annotations are clipped per window
    and dropped when less than half of the instance survives the clip.
    Sequences shorter than ``length`` produce one zero-padded window.
    """
    if not 0.0 <= overlap < 1.0:
        raise ValidationError(f"overlap must be in [0, 1), got {overlap}")
    if length < 2:
        raise ValidationError(f"window length must be >= 2, got {length}")
    l0 = record.spatial.shape[0]
    grid_per_sec = l0 / record.duration
    ann_grid = [(ts * grid_per_sec, te * grid_per_sec) for ts, te in record.annotations]

    if l0 < length:
        logger.warning(
            "%s: sequence length %d < window %d, zero-padding", record.video_id, l0, length
        )
        pad_s = np.zeros((length, record.spatial.shape[1]), dtype=record.spatial.dtype)
        pad_t = np.zeros_like(pad_s)
        pad_s[:l0] = record.spatial
        pad_t[:l0] = record.temporal
        anns = _clip_annotations(ann_grid, 0.0, float(length))
        return [WindowRecord(record.video_id, 0, pad_s, pad_t, anns, padded=True)]

    stride = max(1, int(round(length * (1.0 - overlap))))
    starts = list(range(0, l0 - length + 1, stride))
    if starts[-1] + length < l0:
        starts.append(l0 - length)
    out = []
    for off in starts:
        anns = _clip_annotations(ann_grid, float(off), float(off + length))
        out.append(
            WindowRecord(
                record.video_id,
                off,
                record.spatial[off : off + length].copy(),
                record.temporal[off : off + length].copy(),
                anns,
            )
        )
    return out


def _clip_annotations(
    ann_grid: list[tuple[float, float]], lo: float, hi: float
) -> list[tuple[float, float]]:
    kept = []
    for ts, te in ann_grid:
        cs, ce = max(ts, lo), min(te, hi)
        if ce <= cs:
            continue
        if (ce - cs) < 0.5 * (te - ts):
            continue
        kept.append((cs - lo, ce - lo))
    return kept


def synth_corpus(
    n_videos: int,
    length: int,
    channels: int,
    actions_per_video: int,
    seed: int = 0,
    noise: float = 0.1,
    n_classes: int = 3,
) -> list[VideoRecord]:
    """Generate videos with planted, non-overlapping action intervals.

    One grid unit is one second (duration == length).  Inside an action both
    streams emit a class-specific template vector plus Gaussian noise;
    outside they hover around a background template.  Deterministic under
    ``seed``.
    """
    if min(n_videos, length, channels, actions_per_video) < 1:
        raise ValidationError("all corpus parameters must be positive")
    rng = np.random.default_rng(seed)
    templates = {
        stream: rng.normal(size=(n_classes + 1, channels)) for stream in ("spatial", "temporal")
    }
    records = []
    for v in range(n_videos):
        intervals = _plant_intervals(rng, length, actions_per_video)
        if len(intervals) < actions_per_video:
            logger.warning(
                "video_%04d: placed %d/%d non-overlapping actions",
                v,
                len(intervals),
                actions_per_video,
            )
        classes = rng.integers(1, n_classes + 1, size=len(intervals))
        streams = {}
        for stream in ("spatial", "temporal"):
            feats = np.empty((length, channels), dtype=np.float64)
            for t in range(length):
                kind = 0
                for (ts, te), cls in zip(intervals, classes):
                    if ts <= t <= te:
                        kind = int(cls)
                        break
                feats[t] = templates[stream][kind]
            if noise > 0:
                feats = feats + rng.normal(scale=noise, size=feats.shape)
            streams[stream] = feats.astype(np.float32)
        records.append(
            VideoRecord(
                video_id=f"video_{v:04d}",
                duration=float(length),
                spatial=streams["spatial"],
                temporal=streams["temporal"],
                annotations=[(float(ts), float(te)) for ts, te in intervals],
            )
        )
    return records


def _plant_intervals(rng, length, count, min_gap=2.0, max_tries=200):
    placed: list[tuple[float, float]] = []
    for _ in range(max_tries):
        if len(placed) == count:
            break
        dur = rng.uniform(0.12, 0.25) * length
        start = rng.uniform(1.0, length - 1.0 - dur)
        end = start + dur
        if all(end + min_gap <= a or b + min_gap <= start for a, b in placed):
            placed.append((round(start, 2), round(end, 2)))
    placed.sort()
    return placed


def write_corpus(out_dir, records: list[VideoRecord], fmt: str = "text") -> None:
    """Write features and annotations in the documented on-disk layout."""
    if fmt not in ("text", "binary"):
        raise ValidationError(f"unknown corpus format {fmt!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ext = "txt" if fmt == "text" else "bin"
    writer = write_features_text if fmt == "text" else write_features_binary
    for r in records:
        writer(out_dir / f"{r.video_id}.spatial.{ext}", r.spatial)
        writer(out_dir / f"{r.video_id}.temporal.{ext}", r.temporal)
    write_annotations(out_dir / "annotations.json", records)


def load_corpus(features_dir, annotations_path) -> list[VideoRecord]:
    """Pair up stream files with annotations; every video needs both streams."""
    features_dir = Path(features_dir)
    annotations = load_annotations(annotations_path)
    records = []
    for vid, (duration, segments) in sorted(annotations.items()):
        streams = {}
        for stream in ("spatial", "temporal"):
            candidates = [features_dir / f"{vid}.{stream}.{ext}" for ext in ("txt", "bin")]
            found = [c for c in candidates if c.exists()]
            if not found:
                raise ValidationError(f"no {stream} features for video {vid!r} in {features_dir}")
            streams[stream] = load_features(found[0])
        records.append(
            VideoRecord(
                video_id=vid,
                duration=duration,
                spatial=streams["spatial"],
                temporal=streams["temporal"],
                annotations=segments,
            )
        )
    return records
