"""Scoring: 6/4/2-way confusion matrices, sensitivity / false-alarm summary,
and detection-error-tradeoff curves.

Terminology note: this codebase reports the rate P(hyp = TARG | ref = BCKG)
as `false_alarm` and the complementary P(hyp = BCKG | ref = BCKG) as
`specificity`. Some sources print the false-alarm rate under the name
"specificity"; both numbers are emitted under unambiguous names here.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .labels import MODE_LABELS, TARG, EventLabel, collapse


class EvalError(Exception):
    pass


@dataclass(frozen=True)
class ConfusionMatrix:
    counts: np.ndarray     # (K', K') ref x hyp
    labels: tuple[str, ...]
    mode: str
    basis: str             # per_channel_event | per_epoch

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.float64)
        if np.any(c < 0):
            raise EvalError("confusion counts must be non-negative")
        object.__setattr__(self, "counts", c)
        object.__setattr__(self, "labels", tuple(self.labels))

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def percentages(self) -> np.ndarray:
        """Row-normalized percentages; rows with no reference items are NaN."""
        sums = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return 100.0 * self.counts / sums

    def format_text(self) -> str:
        pct = self.percentages()
        width = max(len(s) for s in self.labels) + 2
        lines = ["".join([f"{'':{width}}"] + [f"{s:>{width}}" for s in self.labels])]
        for i, name in enumerate(self.labels):
            cells = ["  n/a".rjust(width) if np.isnan(v) else f"{v:>{width}.2f}"
                     for v in pct[i]]
            lines.append(f"{name:{width}}" + "".join(cells))
        return "\n".join(lines)


def confusion(ref, hyp, mode: str = "six_way",
              basis: str = "per_epoch") -> ConfusionMatrix:
    """Count (ref, hyp) label pairs after collapsing to the scoring mode."""
    ref = list(ref)
    hyp = list(hyp)
    if len(ref) != len(hyp):
        raise EvalError(f"length mismatch: {len(ref)} refs vs {len(hyp)} hyps")
    labels = MODE_LABELS[mode]
    index = {name: i for i, name in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)))
    for r, h in zip(ref, hyp):
        counts[index[collapse(EventLabel(int(r)), mode)],
               index[collapse(EventLabel(int(h)), mode)]] += 1
    return ConfusionMatrix(counts, tuple(labels), mode, basis)


@dataclass(frozen=True)
class TwoWaySummary:
    sensitivity: float | None   # % of ref TARG called TARG
    false_alarm: float | None   # % of ref BCKG called TARG
    specificity: float | None   # % of ref BCKG called BCKG (1 - false alarm)


def sens_spec(matrix: ConfusionMatrix) -> TwoWaySummary:
    """Sensitivity and false-alarm percentages from a two-way matrix. Empty
    reference classes report None rather than 0."""
    if matrix.mode != "two_way":
        raise EvalError("sens_spec requires a two_way confusion matrix")
    it, ib = matrix.labels.index(TARG), matrix.labels.index("BCKG")
    targ_total = matrix.counts[it].sum()
    bckg_total = matrix.counts[ib].sum()
    sens = 100.0 * matrix.counts[it, it] / targ_total if targ_total > 0 else None
    fa = 100.0 * matrix.counts[ib, it] / bckg_total if bckg_total > 0 else None
    spec = 100.0 - fa if fa is not None else None
    return TwoWaySummary(sens, fa, spec)


@dataclass(frozen=True)
class DetCurve:
    points: tuple[tuple[float, float, float], ...]  # (offset, false_alarm, miss)

    def false_alarms(self) -> np.ndarray:
        return np.array([p[1] for p in self.points])

    def misses(self) -> np.ndarray:
        return np.array([p[2] for p in self.points])

    def zero_penalty_point(self) -> tuple[float, float]:
        for off, fa, miss in self.points:
            if off == 0.0:
                return fa, miss
        raise EvalError("curve is missing the zero-offset operating point")


def det_curve(scores, refs, offsets) -> DetCurve:
    """Sweep a score offset ("penalty") over per-item TARG posteriors:
    at each offset an item is called TARG iff score + offset > 0.5.
    Rates are fractions in [0, 1]; the zero offset is always included."""
    scores = np.asarray(scores, dtype=np.float64)
    refs = np.asarray([collapse(EventLabel(int(r)), "two_way") == TARG
                       for r in refs])
    if np.any((scores < 0) | (scores > 1)):
        raise EvalError("scores must lie in [0, 1]")
    offs = sorted(set(float(o) for o in offsets) | {0.0})
    n_targ = int(refs.sum())
    n_bckg = len(refs) - n_targ
    points = []
    for off in offs:
        hyp_targ = scores + off > 0.5
        miss = float(np.sum(refs & ~hyp_targ)) / n_targ if n_targ else 0.0
        fa = float(np.sum(~refs & hyp_targ)) / n_bckg if n_bckg else 0.0
        points.append((off, fa, miss))
    return DetCurve(tuple(points))


# ---------------------------------------------------------------------------
# Reference labels from annotations

def epoch_reference_labels(ann, num_epochs: int,
                           priority=None) -> np.ndarray:
    """Per-epoch composite reference label: any annotation overlapping an
    epoch competes, ties broken by class priority (rare target classes win);
    uncovered epochs are BCKG."""
    from .labels import EPOCH_PRIORITY
    priority = priority or EPOCH_PRIORITY
    rank = {lab: i for i, lab in enumerate(priority)}
    out = np.full(num_epochs, int(EventLabel.BCKG), dtype=np.intp)
    best = np.full(num_epochs, rank[EventLabel.BCKG])
    for ev in ann.events:
        lo = max(0, int(np.floor(ev.start_s)))
        hi = min(num_epochs, int(np.ceil(ev.stop_s)))
        r = rank[ev.label]
        for e in range(lo, hi):
            if r < best[e]:
                best[e] = r
                out[e] = int(ev.label)
    return out


def channel_epoch_reference_labels(ann, num_epochs: int,
                                   num_channels: int) -> np.ndarray:
    """(epochs, channels) reference labels; all-channel events apply
    everywhere, uncovered cells are BCKG."""
    from .signal_io import ALL_CHANNELS
    out = np.full((num_epochs, num_channels), int(EventLabel.BCKG), dtype=np.intp)
    for ev in ann.events:
        lo = max(0, int(np.floor(ev.start_s)))
        hi = min(num_epochs, int(np.ceil(ev.stop_s)))
        if ev.channel == ALL_CHANNELS:
            out[lo:hi, :] = int(ev.label)
        else:
            if not 0 <= ev.channel < num_channels:
                raise EvalError(f"event channel {ev.channel} out of range")
            out[lo:hi, ev.channel] = int(ev.label)
    return out
