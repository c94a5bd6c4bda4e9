"""Finite-difference verification suites for every differentiable primitive
and for the end-to-end training objective.  Shared by the test suite and the
``gradcheck`` CLI subcommand."""

from __future__ import annotations

import numpy as np

from . import labels as lbl
from . import losses, ops, pfg
from .model import ModelConfig, full_forward, init_parameters
from .tensor import Tape, Tensor, finite_difference_check

E2E_TOLERANCE = 1e-4
OP_TOLERANCE = 1e-4


def _probe(apply_op, point: np.ndarray, seed: int, eps: float = 1e-5) -> float:
    """Check d<R, op(x)>/dx against central differences at ``point``.

    ``apply_op(tensor, tape=...)`` maps a Tensor to a Tensor; R is a fixed
    random sensitivity so every output coordinate participates.
    """
    rng = np.random.default_rng(seed)
    r = rng.normal(size=apply_op(Tensor(point), tape=None).shape)

    tape = Tape()
    x = Tensor(point)
    out = ops.weighted_total(apply_op(x, tape=tape), r, tape=tape)
    tape.backward(out)
    analytic = x.grad

    def f(arr):
        return float((apply_op(Tensor(arr), tape=None).data * r).sum())

    return finite_difference_check(f, point, analytic, eps=eps)


def check_conv1d(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for k in (1, 3):
        w = Tensor(rng.normal(size=(k, 3, 4)))
        b = Tensor(rng.normal(size=4))
        x0 = rng.normal(size=(7, 3))
        worst = max(worst, _probe(lambda x, tape=None: ops.conv1d(x, w, b, tape=tape), x0, seed))
        # weight and bias sides
        x_t = Tensor(x0)
        worst = max(
            worst,
            _probe(lambda wv, tape=None: ops.conv1d(x_t, wv, b, tape=tape), w.data.copy(), seed + 1),
        )
        worst = max(
            worst,
            _probe(lambda bv, tape=None: ops.conv1d(x_t, w, bv, tape=tape), b.data.copy(), seed + 2),
        )
    return worst


def check_pointwise_linear(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(3, 5)))
    b = Tensor(rng.normal(size=5))
    x0 = rng.normal(size=(4, 6, 3))
    worst = _probe(lambda x, tape=None: ops.pointwise_linear(x, w, b, tape=tape), x0, seed)
    x_t = Tensor(x0)
    worst = max(
        worst,
        _probe(lambda wv, tape=None: ops.pointwise_linear(x_t, wv, b, tape=tape), w.data.copy(), seed + 1),
    )
    worst = max(
        worst,
        _probe(lambda bv, tape=None: ops.pointwise_linear(x_t, w, bv, tape=tape), b.data.copy(), seed + 2),
    )
    return worst


def check_conv_collapse(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    w = Tensor(rng.normal(size=(3, 2, 4)))
    b = Tensor(rng.normal(size=4))
    x0 = rng.normal(size=(4, 4, 3, 2))
    worst = _probe(lambda x, tape=None: ops.conv_collapse_samples(x, w, b, tape=tape), x0, seed)
    x_t = Tensor(x0)
    worst = max(
        worst,
        _probe(
            lambda wv, tape=None: ops.conv_collapse_samples(x_t, wv, b, tape=tape),
            w.data.copy(),
            seed + 1,
        ),
    )
    worst = max(
        worst,
        _probe(
            lambda bv, tape=None: ops.conv_collapse_samples(x_t, w, bv, tape=tape),
            b.data.copy(),
            seed + 2,
        ),
    )
    return worst


def check_activations(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    # keep relu probes away from the kink at 0
    x0 = rng.normal(size=(5, 4))
    x0 = np.where(np.abs(x0) < 0.05, 0.2, x0)
    worst = _probe(lambda x, tape=None: ops.activation(x, "relu", tape=tape), x0, seed)
    worst = max(
        worst, _probe(lambda x, tape=None: ops.activation(x, "sigmoid", tape=tape), x0, seed + 1)
    )
    # sigmoid slope at the origin is exactly 1/4
    zero = np.zeros((1,))
    worst = max(
        worst,
        finite_difference_check(
            lambda arr: float(ops.sigmoid(Tensor(arr)).data.sum()), zero, np.asarray([0.25])
        ),
    )
    return worst


def check_sums_means(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    a0 = rng.normal(size=(3, 4))
    b_t = Tensor(rng.normal(size=(3, 4)))
    c_t = Tensor(rng.normal(size=(3, 4)))
    worst = _probe(lambda x, tape=None: ops.elementwise_sum(x, b_t, tape=tape), a0, seed)
    worst = max(
        worst,
        _probe(lambda x, tape=None: ops.stack_mean([x, b_t, c_t], tape=tape), a0, seed + 1),
    )
    worst = max(
        worst,
        _probe(
            lambda x, tape=None: ops.linear_combination([x, b_t], [2.0, -0.5], tape=tape),
            a0,
            seed + 2,
        ),
    )
    return worst


def check_pfg_expand(seed: int = 0, length: int = 12, channels: int = 2) -> float:
    rng = np.random.default_rng(seed)
    plan = pfg.grid_plan(length)
    x0 = rng.normal(size=(length, channels))
    return _probe(lambda x, tape=None: pfg.proposal_expand(x, plan, tape=tape), x0, seed, eps=1e-6)


def check_pfg_collapse(seed: int = 0, length: int = 10, channels: int = 3) -> float:
    rng = np.random.default_rng(seed)
    plan = pfg.grid_plan(length)
    w = Tensor(rng.normal(size=(plan.n_samples, channels, 4)))
    b = Tensor(rng.normal(size=4))
    x0 = rng.normal(size=(length, channels))
    worst = _probe(
        lambda x, tape=None: pfg.proposal_collapse(x, w, b, plan, tape=tape), x0, seed, eps=1e-6
    )
    x_t = Tensor(x0)
    worst = max(
        worst,
        _probe(
            lambda wv, tape=None: pfg.proposal_collapse(x_t, wv, b, plan, tape=tape),
            w.data.copy(),
            seed + 1,
            eps=1e-6,
        ),
    )
    return worst


def check_balanced_loss(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    p0 = rng.uniform(0.05, 0.95, size=(6, 6))
    g = (rng.uniform(size=(6, 6)) > 0.6).astype(float)

    def apply_loss(x, tape=None):
        loss, _ = losses.balanced_binary_loss(x, g, tape=tape)
        return loss

    return _probe(apply_loss, p0, seed, eps=1e-6)


def check_completeness_loss(seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    length = 6
    p0 = rng.uniform(0.05, 0.95, size=(length, length))
    g = rng.uniform(size=(length, length))
    mask = np.triu(np.ones((length, length), dtype=bool), k=1)
    # keep residuals away from the smooth-L1 transition at |x| = 1
    g = np.clip(g, 0.1, 0.9)

    def apply_loss(x, tape=None):
        return losses.completeness_loss(x, g, mask, tape=tape)

    return _probe(apply_loss, p0, seed, eps=1e-6)


def _e2e_setup(seed: int, length: int, channels: int):
    cfg = ModelConfig(in_channels=channels, length=length, precision="f64", seed=seed)
    params = init_parameters(cfg)
    # move to a generic point: zero-init biases sit exactly on relu kinks
    jitter = np.random.default_rng(seed + 1)
    for _, t in params.named():
        t.data += jitter.uniform(-0.05, 0.05, size=t.shape)
    rng = np.random.default_rng(seed + 2)
    spatial = rng.normal(size=(length, channels))
    temporal = rng.normal(size=(length, channels))
    grid = lbl.TemporalGrid(length, float(length))
    gts = lbl.to_grid([(1.0, 3.5), (5.0, 7.0)], float(length), length)
    label_set = lbl.build_labels(gts, grid)
    return params, spatial, temporal, label_set


def check_end_to_end(
    seed: int = 0, length: int = 8, channels: int = 4, n_coords: int = 64, eps: float = 1e-6
) -> float:
    """FD-check the full training objective on a random parameter sample."""
    params, spatial, temporal, label_set = _e2e_setup(seed, length, channels)

    def compute_loss():
        tape = Tape()
        out = full_forward(Tensor(spatial), Tensor(temporal), params, tape=tape)
        psample = losses.sample_completeness_mask(
            label_set.completeness, np.random.default_rng(seed)
        )
        loss, _ = losses.total_loss(out, label_set, psample, tape=tape)
        return loss, tape

    loss, tape = compute_loss()
    params.zero_grads()
    tape.backward(loss)

    names = [n for n, _ in params.named()]
    rng = np.random.default_rng(seed + 3)
    worst = 0.0
    for _ in range(n_coords):
        name = names[int(rng.integers(len(names)))]
        t = params[name]
        idx = int(rng.integers(t.data.size))
        saved = float(t.data.ravel()[idx])
        t.data.ravel()[idx] = saved + eps
        hi, _ = compute_loss()
        t.data.ravel()[idx] = saved - eps
        lo, _ = compute_loss()
        t.data.ravel()[idx] = saved
        numeric = (hi.item() - lo.item()) / (2 * eps)
        analytic = float(t.grad.ravel()[idx])
        if analytic == 0.0 and numeric == 0.0:
            continue
        err = abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))
        worst = max(worst, err)
    return worst


ALL_CHECKS = [
    ("conv1d", check_conv1d),
    ("pointwise_linear", check_pointwise_linear),
    ("conv_collapse_samples", check_conv_collapse),
    ("activations", check_activations),
    ("sums_means", check_sums_means),
    ("proposal_expand", check_pfg_expand),
    ("proposal_collapse", check_pfg_collapse),
    ("balanced_binary_loss", check_balanced_loss),
    ("completeness_smooth_l1", check_completeness_loss),
    ("end_to_end", check_end_to_end),
]


def run_all(seed: int = 0) -> dict[str, float]:
    """All suites; returns op name -> max relative error."""
    return {name: fn(seed) for name, fn in ALL_CHECKS}
