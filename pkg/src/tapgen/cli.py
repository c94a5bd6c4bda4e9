"""Command-line entry point wiring all modules into reproducible runs.

Every run writes a manifest (resolved configuration with value sources,
seed, backend, stage timings) into the output directory before doing any
work and finalizes it on exit, so a run can be audited and reproduced.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, _kernels, dataio, evaluate, gradcheck, postprocess
from .errors import NumericError, ValidationError
from .labels import GtInstance, TemporalGrid, build_labels, to_grid
from .model import ModelConfig, full_forward, init_parameters, load_checkpoint, save_checkpoint
from .tensor import Tensor
from .training import TrainConfig, TrainSample, scale_schedule, train, write_history_csv

logger = logging.getLogger(__name__)

_UNSET = object()

TABLE5_CONFIGS = "4/8/4,6/12/6,8/16/8,10/20/10,0/16/0,8/0/8"

# Mode-dependent defaults.
MODE_DEFAULTS = {
    "rescale": {"L": 100, "snms_theta": 0.8},
    "window": {"L": 128, "snms_theta": 0.65},
}


def _parse_counts(text: str) -> tuple[int, int, int]:
    parts = text.split("/")
    if len(parts) != 3:
        raise ValidationError(f"sampling counts must look like '8/16/8', got {text!r}")
    return tuple(int(p) for p in parts)


def _parse_config_list(text: str) -> list[tuple[int, int, int]]:
    return [_parse_counts(part) for part in text.split(",") if part.strip()]


def _parse_schedule(text: str) -> tuple[tuple[int, float], ...]:
    segs = []
    for part in text.split(","):
        n, lr = part.split(":")
        segs.append((int(n), float(lr)))
    if not segs:
        raise ValidationError(f"empty learning-rate schedule {text!r}")
    return tuple(segs)


def _parse_int_list(text: str) -> tuple[int, ...]:
    return tuple(int(p) for p in text.split(",") if p.strip())


@dataclass
class Opt:
    name: str  # long flag, dashes
    type: object = str
    default: object = None
    help: str = ""
    flag: bool = False  # boolean switch

    @property
    def key(self) -> str:
        return self.name.replace("-", "_")


COMMON_OPTS = [
    Opt("out", str, None, "output directory for this run"),
    Opt("seed", int, 0, "run seed; fully determines outputs in single-thread mode"),
    Opt("threads", int, 1, "worker count for per-video inference (1 = bit-reproducible)"),
    Opt("config", str, None, "key = value config file; flags override it"),
]

DATA_OPTS = [
    Opt("features-dir", str, None, "directory of <id>.spatial/.temporal feature files"),
    Opt("annotations", str, None, "annotations JSON (also provides video durations)"),
    Opt("mode", str, "rescale", "dataset mode: rescale (resize to L) or window (slide)"),
    Opt("L", int, None, "grid length (default: 100 in rescale mode, 128 in window mode)"),
    Opt("overlap", float, 0.5, "fractional window overlap (window mode)"),
]

SNMS_OPTS = [
    Opt("snms-theta", float, None, "Soft-NMS overlap gate (default 0.8 rescale / 0.65 window)"),
    Opt("snms-eps", float, 0.75, "Soft-NMS Gaussian decay width"),
    Opt("snms-ungated", bool, False, "decay every overlapping pair, not only above theta", flag=True),
    Opt("max-proposals", int, 100, "retrieval budget per video"),
    Opt("min-score", float, 0.0, "retrieval confidence threshold"),
]

COMMANDS: dict[str, list[Opt]] = {
    "synth": COMMON_OPTS
    + [
        Opt("videos", int, 8, "number of videos"),
        Opt("length", int, 32, "feature sequence length (duration in seconds equals it)"),
        Opt("channels", int, 16, "feature channels per stream"),
        Opt("actions", int, 2, "planted actions per video"),
        Opt("noise", float, 0.1, "feature noise sigma"),
        Opt("format", str, "text", "feature file format: text or binary"),
    ],
    "train": COMMON_OPTS
    + DATA_OPTS
    + [
        Opt("epochs", int, 12, "training epochs"),
        Opt("batch-size", int, 16, "videos (or windows) per optimizer step"),
        Opt("lr-schedule", str, "10:1e-3,2:1e-4", "epochs:lr segments, comma separated"),
        Opt("scale-schedule", bool, False, "stretch the schedule onto --epochs", flag=True),
        Opt("counts", str, "8/16/8", "sampling counts left/center/right"),
        Opt("k", float, 5.0, "context region divisor"),
        Opt("precision", str, "f32", "f32 or f64"),
        Opt("keep-all-checkpoints", bool, False, "write one checkpoint per epoch", flag=True),
    ],
    "infer": COMMON_OPTS
    + DATA_OPTS
    + SNMS_OPTS
    + [
        Opt("checkpoint", str, None, "trained checkpoint file"),
        Opt("precision", str, None, "override checkpoint precision"),
        Opt("save-maps", bool, False, "also save the raw score maps (npz)", flag=True),
    ],
    "eval": COMMON_OPTS
    + [
        Opt("proposals", str, None, "proposals JSON from infer"),
        Opt("annotations", str, None, "ground-truth annotations JSON"),
        Opt("iou-set", str, "rescale", "IoU threshold grid: rescale (0.5..0.95) or window (0.5..1.0)"),
        Opt("an", str, "1,5,10,50,100", "AR@AN counts to report"),
    ],
    "gradcheck": COMMON_OPTS,
    "ablate-pfg": COMMON_OPTS
    + DATA_OPTS
    + SNMS_OPTS
    + [
        Opt("configs", str, TABLE5_CONFIGS, "sampling configurations to sweep"),
        Opt("epochs", int, 60, "training epochs per configuration"),
        Opt("batch-size", int, 4, "videos per optimizer step"),
        Opt("lr-schedule", str, "10:1e-3,2:1e-4", "base schedule, stretched onto --epochs"),
        Opt("k", float, 5.0, "context region divisor"),
        Opt("precision", str, "f32", "f32 or f64"),
        Opt("eval-iou", float, 0.7, "unused placeholder kept for config compatibility"),
    ],
}


@dataclass
class RunManifest:
    command: str
    argv: list[str]
    config: dict[str, dict]
    seed: int
    out_dir: str
    status: str = "running"
    backend: str = field(default_factory=_kernels.backend_name)
    artifact_version: str = __version__
    started_utc: str = ""
    finished_utc: str = ""
    timings_sec: dict[str, float] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def path(self) -> Path:
        return Path(self.out_dir) / "manifest.json"

    def write(self) -> None:
        Path(self.out_dir).mkdir(parents=True, exist_ok=True)
        doc = {
            "command": self.command,
            "argv": self.argv,
            "artifact_version": self.artifact_version,
            "backend": self.backend,
            "seed": self.seed,
            "config": self.config,
            "status": self.status,
            "started_utc": self.started_utc,
            "finished_utc": self.finished_utc,
            "timings_sec": self.timings_sec,
            "outputs": self.outputs,
            "notes": self.notes,
        }
        self.path().write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def stage(self, name: str):
        manifest = self

        class _Timer:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, *exc):
                manifest.timings_sec[name] = round(time.perf_counter() - self.t0, 6)
                return False

        return _Timer()


def _load_config_file(path: str) -> dict[str, str]:
    values = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise ValidationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, value = stripped.partition("=")
        values[key.strip().replace("-", "_")] = value.strip()
    return values


def _resolve(command: str, args: argparse.Namespace) -> dict[str, dict]:
    """Merge CLI > config file > defaults, recording each value's source."""
    opts = COMMANDS[command]
    file_values = {}
    cli_config = getattr(args, "config", None)
    if cli_config not in (None, _UNSET):
        file_values = _load_config_file(cli_config)
    resolved = {}
    for opt in opts:
        raw = getattr(args, opt.key)
        if raw is not _UNSET:
            value, source = raw, "cli"
        elif opt.key in file_values:
            text = file_values[opt.key]
            if opt.flag:
                value = text.lower() in ("1", "true", "yes", "on")
            else:
                value = opt.type(text)
            source = "config"
        else:
            value, source = opt.default, "default"
        resolved[opt.key] = {"value": value, "source": source}
    # mode-dependent defaults
    mode = resolved.get("mode", {}).get("value")
    if mode is not None:
        if mode not in MODE_DEFAULTS:
            raise ValidationError(f"unknown mode {mode!r}; expected rescale or window")
        for key in ("L", "snms_theta"):
            if key in resolved and resolved[key]["value"] is None:
                resolved[key] = {"value": MODE_DEFAULTS[mode][key], "source": "default"}
    return resolved


def _values(resolved: dict[str, dict]) -> argparse.Namespace:
    return argparse.Namespace(**{k: v["value"] for k, v in resolved.items()})


def _require(cfg, *keys):
    for key in keys:
        if getattr(cfg, key) is None:
            raise ValidationError(f"--{key.replace('_', '-')} is required")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tapgen",
        description="Temporal action proposal generation: synthesize, train, infer, evaluate.",
    )
    parser.add_argument("--version", action="version", version=f"tapgen {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    help_lines = {
        "synth": "write a synthetic corpus with planted actions",
        "train": "train from a feature corpus to a checkpoint",
        "infer": "score videos with a checkpoint and emit ranked proposals",
        "eval": "score proposals against ground truth (AR@AN, AUC)",
        "gradcheck": "run every finite-difference suite and report max errors",
        "ablate-pfg": "sweep proposal-sampling configurations and compare AR/AUC",
    }
    for command, opts in COMMANDS.items():
        p = sub.add_parser(command, help=help_lines[command])
        for opt in opts:
            if opt.flag:
                p.add_argument(f"--{opt.name}", dest=opt.key, action="store_const", const=True, default=_UNSET, help=opt.help)
            else:
                p.add_argument(f"--{opt.name}", dest=opt.key, type=opt.type, default=_UNSET, help=opt.help)
    return parser


# ---------------------------------------------------------------- pipelines


def _assemble_samples(records, mode, length, overlap):
    """Grid-sized (spatial, temporal, labels) triples for training."""
    samples = []
    grid_cache = TemporalGrid(length, float(length))
    for rec in records:
        if mode == "rescale":
            spatial = dataio.rescale_sequence(rec.spatial, length)
            temporal = dataio.rescale_sequence(rec.temporal, length)
            gts = to_grid(rec.annotations, rec.duration, length)
            samples.append(
                TrainSample(rec.video_id, spatial, temporal, build_labels(gts, grid_cache))
            )
        else:
            for win in dataio.sliding_windows(rec, length, overlap):
                gts = [GtInstance(ts, te) for ts, te in win.annotations_grid]
                samples.append(
                    TrainSample(
                        win.window_id, win.spatial, win.temporal, build_labels(gts, grid_cache)
                    )
                )
    return samples


def _infer_video(rec, params, cfg):
    """Score one video end to end; returns (video_id, proposals, maps)."""
    mode, length = cfg.mode, cfg.L
    parent_grid = TemporalGrid(rec.spatial.shape[0] if mode == "window" else length, rec.duration)
    candidates = []
    maps = {}
    if mode == "rescale":
        spatial = dataio.rescale_sequence(rec.spatial, length)
        temporal = dataio.rescale_sequence(rec.temporal, length)
        views = [(0, spatial, temporal)]
    else:
        views = [
            (w.offset, w.spatial, w.temporal)
            for w in dataio.sliding_windows(rec, length, cfg.overlap)
        ]
    dtype = params.config.dtype
    for offset, spatial, temporal in views:
        out = full_forward(Tensor(spatial, dtype=dtype), Tensor(temporal, dtype=dtype), params)
        start_vec, end_vec = postprocess.fuse_boundary_maps(out.start_map.data, out.end_map.data)
        fused = postprocess.fuse_confidence(out.completeness_map.data, start_vec, end_vec)
        candidates += postprocess.dense_candidates(
            fused, out.completeness_map.data, start_vec, end_vec, parent_grid, offset=offset
        )
        if offset == 0:
            maps = {
                "completeness": out.completeness_map.data,
                "start": out.start_map.data,
                "end": out.end_map.data,
            }
    rescored = postprocess.soft_nms(
        candidates,
        threshold=cfg.snms_theta,
        decay=cfg.snms_eps,
        gated=not cfg.snms_ungated,
        top_k=max(cfg.max_proposals * 4, 200),
    )
    final = postprocess.retrieve(rescored, cfg.max_proposals, cfg.min_score)
    return rec.video_id, final, maps


# ------------------------------------------------------------------ commands


def _cmd_synth(cfg, manifest):
    _require(cfg, "out")
    with manifest.stage("synth"):
        records = dataio.synth_corpus(
            cfg.videos, cfg.length, cfg.channels, cfg.actions, seed=cfg.seed, noise=cfg.noise
        )
        dataio.write_corpus(cfg.out, records, fmt=cfg.format)
    manifest.outputs["corpus"] = str(cfg.out)
    print(f"wrote {len(records)} videos to {cfg.out}")
    return 0


def _cmd_train(cfg, manifest):
    _require(cfg, "features_dir", "annotations", "out")
    with manifest.stage("load"):
        records = dataio.load_corpus(cfg.features_dir, cfg.annotations)
        samples = _assemble_samples(records, cfg.mode, cfg.L, cfg.overlap)
    if not samples:
        raise ValidationError("corpus produced no training samples")
    channels = samples[0].spatial.shape[1]
    schedule = _parse_schedule(cfg.lr_schedule)
    if cfg.scale_schedule:
        schedule = scale_schedule(schedule, cfg.epochs)
    model_cfg = ModelConfig(
        in_channels=channels,
        length=cfg.L,
        counts=_parse_counts(cfg.counts),
        region_divisor=cfg.k,
        precision=cfg.precision,
        seed=cfg.seed,
    )
    train_cfg = TrainConfig(
        epochs=cfg.epochs,
        batch_size=cfg.batch_size,
        lr_schedule=schedule,
        seed=cfg.seed,
        precision=cfg.precision,
    )
    out_dir = Path(cfg.out)

    def on_epoch(epoch, params, breakdown):
        if cfg.keep_all_checkpoints:
            save_checkpoint(out_dir / f"checkpoint_epoch{epoch:04d}.ckpt", params)
        logger.info("epoch %d/%d total loss %.6f", epoch, cfg.epochs, breakdown.total)

    with manifest.stage("train"):
        params, history = train(samples, model_cfg, train_cfg, out_dir=out_dir, on_epoch=on_epoch)
    manifest.outputs["checkpoint"] = str(out_dir / "checkpoint.ckpt")
    manifest.outputs["loss_history"] = str(out_dir / "loss_history.csv")
    print(
        f"trained {cfg.epochs} epochs on {len(samples)} samples; "
        f"final total loss {history[-1].total:.6f}"
    )
    return 0


def _cmd_infer(cfg, manifest):
    _require(cfg, "checkpoint", "features_dir", "annotations", "out")
    with manifest.stage("load"):
        params = load_checkpoint(cfg.checkpoint)
        if cfg.precision and cfg.precision != params.config.precision:
            params = params.astype(cfg.precision)
        records = dataio.load_corpus(cfg.features_dir, cfg.annotations)
    with manifest.stage("infer"):
        if cfg.threads > 1:
            with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
                results = list(pool.map(lambda r: _infer_video(r, params, cfg), records))
        else:
            results = [_infer_video(r, params, cfg) for r in records]
    by_video = {vid: props for vid, props, _ in results}
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    with manifest.stage("write"):
        postprocess.write_proposals(out_dir / "proposals.json", by_video)
        if cfg.save_maps:
            arrays = {}
            for vid, _, maps in results:
                for key, arr in maps.items():
                    arrays[f"{vid}/{key}"] = arr
            np.savez_compressed(out_dir / "score_maps.npz", **arrays)
            manifest.outputs["score_maps"] = str(out_dir / "score_maps.npz")
    manifest.outputs["proposals"] = str(out_dir / "proposals.json")
    total = sum(len(p) for p in by_video.values())
    print(f"scored {len(by_video)} videos, kept {total} proposals")
    return 0


def _cmd_eval(cfg, manifest):
    _require(cfg, "proposals", "annotations", "out")
    if cfg.iou_set not in evaluate.IOU_THRESHOLDS:
        raise ValidationError(f"--iou-set must be one of {sorted(evaluate.IOU_THRESHOLDS)}")
    with manifest.stage("eval"):
        proposals = postprocess.load_proposals(cfg.proposals)
        annotations = dataio.load_annotations(cfg.annotations)
        gts = {vid: segs for vid, (_, segs) in annotations.items()}
        report = evaluate.evaluate_proposals(
            proposals,
            gts,
            thresholds=evaluate.IOU_THRESHOLDS[cfg.iou_set],
            ar_counts=_parse_int_list(cfg.an),
        )
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    evaluate.write_report(out_dir, report)
    manifest.outputs["report"] = str(out_dir / "report.json")
    for an, value in sorted(report.ar_at.items()):
        print(f"AR@{an}: {value:.4f}")
    print(f"AUC: {report.auc:.2f}")
    return 0


def _cmd_gradcheck(cfg, manifest):
    with manifest.stage("gradcheck"):
        results = gradcheck.run_all(seed=cfg.seed)
    width = max(len(name) for name in results)
    failed = []
    for name, err in results.items():
        status = "ok" if err < gradcheck.OP_TOLERANCE else "FAIL"
        print(f"{name:<{width}}  max_rel_err={err:.3e}  {status}")
        if err >= gradcheck.OP_TOLERANCE:
            failed.append(name)
    if cfg.out:
        out_dir = Path(cfg.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "gradcheck.json").write_text(json.dumps(results, indent=2) + "\n")
        manifest.outputs["gradcheck"] = str(out_dir / "gradcheck.json")
    if failed:
        raise NumericError(f"gradient check failed for: {', '.join(failed)}", stage="gradcheck")
    return 0


def _cmd_ablate(cfg, manifest):
    _require(cfg, "features_dir", "annotations", "out")
    sweep = _parse_config_list(cfg.configs)
    if not sweep:
        raise ValidationError("no sampling configurations given")
    with manifest.stage("load"):
        records = dataio.load_corpus(cfg.features_dir, cfg.annotations)
        samples = _assemble_samples(records, cfg.mode, cfg.L, cfg.overlap)
        annotations = dataio.load_annotations(cfg.annotations)
        gts = {vid: segs for vid, (_, segs) in annotations.items()}
    channels = samples[0].spatial.shape[1]
    schedule = scale_schedule(_parse_schedule(cfg.lr_schedule), cfg.epochs)
    rows = []
    for counts in sweep:
        tag = "/".join(str(c) for c in counts)
        model_cfg = ModelConfig(
            in_channels=channels,
            length=cfg.L,
            counts=counts,
            region_divisor=cfg.k,
            precision=cfg.precision,
            seed=cfg.seed,
        )
        train_cfg = TrainConfig(
            epochs=cfg.epochs,
            batch_size=cfg.batch_size,
            lr_schedule=schedule,
            seed=cfg.seed,
            precision=cfg.precision,
        )
        with manifest.stage(f"train[{tag}]"):
            params, history = train(samples, model_cfg, train_cfg)
        with manifest.stage(f"infer[{tag}]"):
            results = [_infer_video(rec, params, cfg) for rec in records]
        proposals = {
            vid: [(p.start_sec, p.end_sec, p.score) for p in props] for vid, props, _ in results
        }
        report = evaluate.evaluate_proposals(
            proposals, gts, thresholds=evaluate.IOU_THRESHOLDS[cfg.mode], ar_counts=(10, 50, 100)
        )
        rows.append(
            {
                "counts": tag,
                "AR@10": report.ar_at[10],
                "AR@50": report.ar_at[50],
                "AR@100": report.ar_at[100],
                "AUC": report.auc,
                "final_loss": history[-1].total,
            }
        )
        print(
            f"{tag:>9s}  AR@10 {report.ar_at[10]:.4f}  AR@50 {report.ar_at[50]:.4f}  "
            f"AR@100 {report.ar_at[100]:.4f}  AUC {report.auc:.2f}"
        )
    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "ablation.json").write_text(json.dumps(rows, indent=2) + "\n")
    header = "counts,AR@10,AR@50,AR@100,AUC,final_loss"
    lines = [header] + [
        f"{r['counts']},{r['AR@10']:.6g},{r['AR@50']:.6g},{r['AR@100']:.6g},"
        f"{r['AUC']:.6g},{r['final_loss']:.6g}"
        for r in rows
    ]
    (out_dir / "ablation.csv").write_text("\n".join(lines) + "\n")
    manifest.outputs["ablation"] = str(out_dir / "ablation.json")
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "ablate-pfg": _cmd_ablate,
}


def run(argv: list[str] | None = None) -> int:
    """Entry point: 0 on success, 1 on validation errors, 2 on numeric failure."""
    argv = list(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        resolved = _resolve(args.command, args)
        cfg = _values(resolved)
        out_dir = getattr(cfg, "out", None) or "."
        manifest = RunManifest(
            command=args.command,
            argv=argv,
            config=resolved,
            seed=getattr(cfg, "seed", 0),
            out_dir=out_dir,
        )
        manifest.started_utc = datetime.now(timezone.utc).isoformat()
        if cfg.out:
            manifest.write()
        try:
            code = _HANDLERS[args.command](cfg, manifest)
            manifest.status = "ok"
            return code
        except BaseException:
            manifest.status = "failed"
            raise
        finally:
            manifest.finished_utc = datetime.now(timezone.utc).isoformat()
            if cfg.out:
                manifest.write()
    except (ValidationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericError as exc:
        stage = f" [stage: {exc.stage}]" if exc.stage else ""
        print(f"numeric failure: {exc}{stage}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
