"""Supervised losses: balanced binary classification, masked smooth-L1
regression, IoU-stratified proposal sampling, and the combined objective."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .tensor import OpRecord, Tape, Tensor

# Combined-objective weight on the actionness term.
ACTIONNESS_WEIGHT = 2.0

# Proposals are stratified by target IoU into these bins, sampled 2:1:1.
IOU_BINS = ((0.0, 0.2), (0.2, 0.6), (0.6, 1.0 + 1e-12))
IOU_BIN_RATIO = (2, 1, 1)


def _clamp_eps(dtype) -> float:
    return 1e-12 if np.dtype(dtype) == np.float64 else 1e-7


@dataclass(frozen=True)
class BalanceStats:
    positive_fraction: float
    alpha_pos: float
    alpha_neg: float
    degenerate: bool  # single-class batch, fell back to unweighted loss


def balanced_binary_loss(
    p: Tensor,
    targets: np.ndarray,
    mask: np.ndarray | None = None,
    *,
    tape: Tape | None = None,
) -> tuple[Tensor, BalanceStats]:
    """Class-balanced binary cross-entropy over the masked entries.

    Positives are reweighted by 0.5/r and negatives by 0.5/(1-r) where r is
    the positive fraction, so both classes contribute equally regardless of
    imbalance.  A single-class batch falls back to the unweighted loss and
    is flagged in the returned stats.
    """
    g = np.asarray(targets, dtype=p.data.dtype)
    if g.shape != p.shape:
        raise ValueError(f"target shape {g.shape} != prediction shape {p.shape}")
    if mask is None:
        sel = np.ones(p.shape, dtype=bool)
    else:
        sel = np.asarray(mask, dtype=bool)
        if sel.shape != p.shape:
            raise ValueError(f"mask shape {sel.shape} != prediction shape {p.shape}")
    count = int(sel.sum())
    if count == 0:
        raise ValueError("empty mask")

    r = float(g[sel].sum()) / count
    if 0.0 < r < 1.0:
        alpha_pos, alpha_neg = 0.5 / r, 0.5 / (1.0 - r)
        stats = BalanceStats(r, alpha_pos, alpha_neg, degenerate=False)
    else:
        alpha_pos = alpha_neg = 1.0
        stats = BalanceStats(r, alpha_pos, alpha_neg, degenerate=True)

    eps = _clamp_eps(p.data.dtype)
    ph = np.clip(p.data, eps, 1.0 - eps)
    terms = alpha_pos * g * np.log(ph) + alpha_neg * (1.0 - g) * np.log(1.0 - ph)
    value = -float(terms[sel].sum()) / count
    if not np.isfinite(value):
        raise NumericError("non-finite binary loss", stage="balanced_binary_loss")
    out = Tensor(np.asarray(value, dtype=p.data.dtype))

    def backward(up):
        grad = np.zeros_like(p.data)
        inner = alpha_pos * g / ph - alpha_neg * (1.0 - g) / (1.0 - ph)
        live = sel & (p.data > eps) & (p.data < 1.0 - eps)
        grad[live] = -inner[live] / count
        return (grad * up,)

    if tape is not None:
        tape.record(OpRecord("balanced_binary_loss", (p,), out, backward))
    return out, stats


def actionness_loss(
    pa_triple: tuple[Tensor, Tensor, Tensor],
    g_a: np.ndarray,
    *,
    tape: Tape | None = None,
) -> tuple[Tensor, list[BalanceStats]]:
    """Mean balanced loss of the three actionness heads against shared targets."""
    from .ops import linear_combination

    losses, stats = [], []
    for head in pa_triple:
        li, st = balanced_binary_loss(head, g_a, tape=tape)
        losses.append(li)
        stats.append(st)
    k = len(losses)
    return linear_combination(losses, [1.0 / k] * k, tape=tape), stats


def boundary_loss(
    p_start: Tensor,
    p_end: Tensor,
    g_start: np.ndarray,
    g_end: np.ndarray,
    *,
    tape: Tape | None = None,
) -> tuple[Tensor, Tensor, list[BalanceStats]]:
    """Per-map balanced losses over all L*L entries, start and end separately."""
    ls, st_s = balanced_binary_loss(p_start, g_start, tape=tape)
    le, st_e = balanced_binary_loss(p_end, g_end, tape=tape)
    return ls, le, [st_s, st_e]


@dataclass(frozen=True)
class ProposalSample:
    mask: np.ndarray  # (L, L) bool over the strict upper triangle
    bin_counts: tuple[int, int, int]
    selected_counts: tuple[int, int, int]
    degenerate: bool  # some IoU bin was empty


def sample_completeness_mask(g_c: np.ndarray, rng: np.random.Generator) -> ProposalSample:
    """Random proposal subset with per-bin counts in ratio 2:1:1.

    The selection is sized by the scarcest bin; empty bins degrade the ratio
    to the largest achievable one and flag the sample as degenerate.
    """
    g_c = np.asarray(g_c)
    length = g_c.shape[0]
    ii, jj = np.meshgrid(np.arange(length), np.arange(length), indexing="ij")
    candidates = ii < jj

    bins = []
    for lo, hi in IOU_BINS:
        bins.append(candidates & (g_c >= lo) & (g_c < hi))
    counts = tuple(int(b.sum()) for b in bins)

    scale = [c // r for c, r in zip(counts, IOU_BIN_RATIO) if c > 0]
    degenerate = any(c == 0 for c in counts)
    s = min(scale) if scale else 0
    targets = [min(r * s, c) for r, c in zip(IOU_BIN_RATIO, counts)]
    if sum(targets) == 0:
        # Too few proposals to honor any ratio: keep everything.
        targets = list(counts)
        degenerate = True

    mask = np.zeros_like(candidates)
    for b, want in zip(bins, targets):
        if want == 0:
            continue
        idx = np.flatnonzero(b.ravel())
        pick = rng.choice(idx, size=want, replace=False)
        mask.ravel()[pick] = True
    return ProposalSample(mask, counts, tuple(targets), degenerate)


def completeness_loss(
    p_c: Tensor,
    g_c: np.ndarray,
    mask: np.ndarray,
    *,
    tape: Tape | None = None,
) -> Tensor:
    """Masked mean of smooth-L1 on the completeness regression residuals."""
    g = np.asarray(g_c, dtype=p_c.data.dtype)
    sel = np.asarray(mask, dtype=bool)
    if g.shape != p_c.shape or sel.shape != p_c.shape:
        raise ValueError("completeness shapes do not line up")
    count = int(sel.sum())
    if count == 0:
        raise ValueError("empty proposal mask")

    x = p_c.data - g
    ax = np.abs(x)
    per_entry = np.where(ax < 1.0, 0.5 * x * x, ax - 0.5)
    value = float(per_entry[sel].sum()) / count
    out = Tensor(np.asarray(value, dtype=p_c.data.dtype))

    def backward(up):
        grad = np.zeros_like(p_c.data)
        slope = np.where(ax < 1.0, x, np.sign(x))
        grad[sel] = slope[sel] / count
        return (grad * up,)

    if tape is not None:
        tape.record(OpRecord("completeness_loss", (p_c,), out, backward))
    return out


@dataclass
class LossBreakdown:
    actionness: float
    start: float
    end: float
    completeness: float
    total: float
    proposal_sample: ProposalSample | None = None
    balance_flags: int = 0  # number of single-class fallbacks in this pass

    CSV_HEADER = "epoch,actionness,start,end,completeness,total"

    def csv_row(self, epoch: int) -> str:
        return (
            f"{epoch},{self.actionness:.10g},{self.start:.10g},"
            f"{self.end:.10g},{self.completeness:.10g},{self.total:.10g}"
        )


def total_loss(
    outputs,
    label_set,
    proposal_sample: ProposalSample,
    *,
    tape: Tape | None = None,
) -> tuple[Tensor, LossBreakdown]:
    """Combined objective: weight * actionness + start + end + completeness."""
    from .ops import linear_combination

    la, stats_a = actionness_loss(outputs.actionness_heads, label_set.actionness, tape=tape)
    ls, le, stats_b = boundary_loss(
        outputs.start_map, outputs.end_map, label_set.start_map, label_set.end_map, tape=tape
    )
    lc = completeness_loss(
        outputs.completeness_map, label_set.completeness, proposal_sample.mask, tape=tape
    )
    total = linear_combination([la, ls, le, lc], [ACTIONNESS_WEIGHT, 1.0, 1.0, 1.0], tape=tape)
    if not np.isfinite(total.item()):
        raise NumericError("non-finite total loss", stage="total_loss")
    flags = sum(st.degenerate for st in stats_a + stats_b)
    breakdown = LossBreakdown(
        actionness=la.item(),
        start=ls.item(),
        end=le.item(),
        completeness=lc.item(),
        total=total.item(),
        proposal_sample=proposal_sample,
        balance_flags=flags,
    )
    return total, breakdown
