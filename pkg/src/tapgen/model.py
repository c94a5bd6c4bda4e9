"""The proposal network: dual-stream backbone, completeness regression branch,
and boundary classification branch, plus parameter init and checkpoint I/O.

The backbone runs two stacked kernel-3 temporal convolutions per stream,
fuses the streams by elementwise sum, and emits three per-location
actionness probability sequences (one per stream, one for the fused
feature).  Their mean feeds the completeness branch through the proposal
sampler; the fused feature feeds the boundary branch the same way.  All
score-emitting layers end in a sigmoid, hidden layers in ReLU.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from . import __version__
from .errors import ValidationError
from .ops import (
    conv1d,
    elementwise_sum,
    pointwise_linear,
    relu,
    reshape,
    sigmoid,
    stack_mean,
    take_channel,
)
from .pfg import DEFAULT_COUNTS, DEFAULT_REGION_DIVISOR, grid_plan, proposal_collapse, proposal_expand
from .tensor import DTYPES, Tape, Tensor

CHECKPOINT_MAGIC = b"TAPG"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int
    length: int
    counts: tuple[int, int, int] = DEFAULT_COUNTS
    region_divisor: float = DEFAULT_REGION_DIVISOR
    stream_hidden: tuple[int, int] = (256, 128)
    completeness_hidden: int = 256
    boundary_collapse: int = 512
    boundary_hidden: int = 256
    precision: str = "f32"
    seed: int = 0

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValidationError("in_channels must be >= 1")
        if self.precision not in DTYPES:
            raise ValidationError(f"precision must be one of {sorted(DTYPES)}")

    @property
    def n_samples(self) -> int:
        return sum(self.counts)

    @property
    def dtype(self):
        return DTYPES[self.precision]


def _parameter_table(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], int]]:
    """(name, shape, fan_in) for every weight; biases are paired implicitly."""
    c_in = cfg.in_channels
    h1, h2 = cfg.stream_hidden
    n = cfg.n_samples
    ch = cfg.completeness_hidden
    bc, bh = cfg.boundary_collapse, cfg.boundary_hidden
    table = []
    for stream in ("spatial", "temporal"):
        table += [
            (f"{stream}.conv1", (3, c_in, h1), 3 * c_in),
            (f"{stream}.conv2", (3, h1, h2), 3 * h1),
            (f"{stream}.head", (1, h2, 1), h2),
        ]
    table += [
        ("fused.head", (1, h2, 1), h2),
        ("completeness.proj1", (n, ch), n),
        ("completeness.proj2", (ch, ch), ch),
        ("completeness.out", (ch, 1), ch),
        ("boundary.collapse", (n, h2, bc), n * h2),
        ("boundary.proj", (bc, bh), bc),
        ("boundary.out", (bh, 2), bh),
    ]
    return table


class ModelParameters:
    """Named weight/bias tensors with paired gradient storage."""

    def __init__(self, config: ModelConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named(self) -> list[tuple[str, Tensor]]:
        return list(self.tensors.items())

    def zero_grads(self) -> None:
        for t in self.tensors.values():
            t.zero_grad()

    def count(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    def astype(self, precision: str) -> "ModelParameters":
        cfg = ModelConfig(**{**asdict(self.config), "precision": precision})
        dtype = DTYPES[precision]
        tensors = {
            name: Tensor(t.data.astype(dtype), name=name) for name, t in self.tensors.items()
        }
        return ModelParameters(cfg, tensors)


def init_parameters(config: ModelConfig) -> ModelParameters:
    """Seeded init: weights uniform in +/- sqrt(1/fan_in), biases zero."""
    rng = np.random.default_rng(config.seed)
    dtype = config.dtype
    tensors: dict[str, Tensor] = {}
    for name, shape, fan_in in _parameter_table(config):
        bound = float(np.sqrt(1.0 / fan_in))
        w = rng.uniform(-bound, bound, size=shape)
        tensors[f"{name}.weight"] = Tensor(w.astype(dtype), name=f"{name}.weight")
        bias_dim = shape[-1]
        tensors[f"{name}.bias"] = Tensor(np.zeros(bias_dim, dtype=dtype), name=f"{name}.bias")
    return ModelParameters(config, tensors)


@dataclass
class ForwardOutputs:
    """Everything the losses and post-processing consume from one pass."""

    dual_stream: Tensor  # (L, h2)
    actionness_heads: tuple[Tensor, Tensor, Tensor]  # each (L,), in (0, 1)
    actionness_mean: Tensor  # (L, 1)
    completeness_map: Tensor  # (L, L)
    start_map: Tensor  # (L, L)
    end_map: Tensor  # (L, L)


def _stream(x: Tensor, params: ModelParameters, prefix: str, tape) -> Tensor:
    h = relu(conv1d(x, params[f"{prefix}.conv1.weight"], params[f"{prefix}.conv1.bias"], tape=tape), tape=tape)
    return relu(conv1d(h, params[f"{prefix}.conv2.weight"], params[f"{prefix}.conv2.bias"], tape=tape), tape=tape)


def _head(x: Tensor, params: ModelParameters, name: str, tape) -> Tensor:
    raw = conv1d(x, params[f"{name}.weight"], params[f"{name}.bias"], tape=tape)
    return sigmoid(raw, tape=tape)


def backbone_forward(
    spatial: Tensor, temporal: Tensor, params: ModelParameters, *, tape: Tape | None = None
):
    """Dual-stream encoder: returns (fused feature, actionness triple, their mean)."""
    if spatial.shape != temporal.shape:
        raise ValidationError(
            f"stream shapes differ: {spatial.shape} vs {temporal.shape}"
        )
    sf = _stream(spatial, params, "spatial", tape)
    tf = _stream(temporal, params, "temporal", tape)
    dsf = elementwise_sum(sf, tf, tape=tape)
    heads = (
        _head(sf, params, "spatial.head", tape),
        _head(tf, params, "temporal.head", tape),
        _head(dsf, params, "fused.head", tape),
    )
    asf = stack_mean(list(heads), tape=tape)
    return dsf, heads, asf


def completeness_forward(
    asf: Tensor, params: ModelParameters, *, tape: Tape | None = None
) -> Tensor:
    """Actionness-score feature -> (L, L) completeness map."""
    cfg = params.config
    length = asf.shape[0]
    plan = grid_plan(length, cfg.counts, cfg.region_divisor)
    fp = proposal_expand(asf, plan, tape=tape)  # (L, L, N, 1)
    fp = reshape(fp, (length, length, cfg.n_samples), tape=tape)
    h = relu(pointwise_linear(fp, params["completeness.proj1.weight"], params["completeness.proj1.bias"], tape=tape), tape=tape)
    h = relu(pointwise_linear(h, params["completeness.proj2.weight"], params["completeness.proj2.bias"], tape=tape), tape=tape)
    out = sigmoid(pointwise_linear(h, params["completeness.out.weight"], params["completeness.out.bias"], tape=tape), tape=tape)
    return reshape(out, (length, length), tape=tape)


def boundary_forward(
    dsf: Tensor, params: ModelParameters, *, tape: Tape | None = None
) -> tuple[Tensor, Tensor]:
    """Fused dual-stream feature -> (start, end) L x L boundary maps."""
    cfg = params.config
    length = dsf.shape[0]
    plan = grid_plan(length, cfg.counts, cfg.region_divisor)
    h = proposal_collapse(
        dsf, params["boundary.collapse.weight"], params["boundary.collapse.bias"], plan, tape=tape
    )
    h = relu(h, tape=tape)
    h = relu(pointwise_linear(h, params["boundary.proj.weight"], params["boundary.proj.bias"], tape=tape), tape=tape)
    maps = sigmoid(pointwise_linear(h, params["boundary.out.weight"], params["boundary.out.bias"], tape=tape), tape=tape)
    return take_channel(maps, 0, tape=tape), take_channel(maps, 1, tape=tape)


def full_forward(
    spatial: Tensor, temporal: Tensor, params: ModelParameters, *, tape: Tape | None = None
) -> ForwardOutputs:
    """One pass from the two feature sequences to all three score maps."""
    length = spatial.shape[0]
    dsf, heads, asf = backbone_forward(spatial, temporal, params, tape=tape)
    completeness = completeness_forward(asf, params, tape=tape)
    start_map, end_map = boundary_forward(dsf, params, tape=tape)
    flat_heads = tuple(reshape(h, (length,), tape=tape) for h in heads)
    return ForwardOutputs(
        dual_stream=dsf,
        actionness_heads=flat_heads,
        actionness_mean=asf,
        completeness_map=completeness,
        start_map=start_map,
        end_map=end_map,
    )


def save_checkpoint(path, params: ModelParameters) -> None:
    """Versioned flat container: JSON header plus raw little-endian tensors."""
    cfg = params.config
    names = sorted(params.tensors)
    header = {
        "format_version": CHECKPOINT_VERSION,
        "artifact_version": __version__,
        "dtype": cfg.precision,
        "config": asdict(cfg),
        "tensors": [{"name": n, "shape": list(params.tensors[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    wire = "<f4" if cfg.precision == "f32" else "<f8"
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<HI", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            fh.write(np.ascontiguousarray(params.tensors[n].data, dtype=wire).tobytes())


def load_checkpoint(path) -> ModelParameters:
    with open(path, "rb") as fh:
        raw = fh.read()
    buf = io.BytesIO(raw)
    if buf.read(4) != CHECKPOINT_MAGIC:
        raise ValidationError(f"{path}: not a checkpoint file")
    version, hlen = struct.unpack("<HI", buf.read(6))
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(buf.read(hlen).decode())
    cfg_dict = dict(header["config"])
    cfg_dict["counts"] = tuple(cfg_dict["counts"])
    cfg_dict["stream_hidden"] = tuple(cfg_dict["stream_hidden"])
    cfg = ModelConfig(**cfg_dict)
    wire = "<f4" if header["dtype"] == "f32" else "<f8"
    itemsize = np.dtype(wire).itemsize
    tensors = {}
    for entry in header["tensors"]:
        shape = tuple(entry["shape"])
        n_bytes = int(np.prod(shape)) * itemsize
        data = np.frombuffer(buf.read(n_bytes), dtype=wire).reshape(shape)
        tensors[entry["name"]] = Tensor(
            data.astype(cfg.dtype), name=entry["name"]
        )
    expected = {f"{n}.{kind}" for n, _, _ in _parameter_table(cfg) for kind in ("weight", "bias")}
    if set(tensors) != expected:
        raise ValidationError(f"{path}: tensor names do not match the architecture")
    return ModelParameters(cfg, tensors)
