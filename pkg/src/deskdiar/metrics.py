"""Diarization scoring.

DER with a boundary collar and an optimal speaker mapping, speaker-count
summaries (mean absolute percentage deviation and percentage of correct
count), segment-level cluster purity, and the CSV report the CLI prints.
Interval arithmetic runs on integer millisecond ticks so collar slicing
is exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .autodiff import ShapeError
from .pipeline import Timeline

MS = 1000

# Published reference magnitudes for MCGAN speaker-count estimation on
# CALLHOME; kept as documentation constants for report context. The corpus
# is license-restricted, so these are not reproduced by this package.
CALLHOME_MCGAN_MAPD_PCT = 9.76
CALLHOME_MCGAN_POC_PCT = 75.55


class DerUndefinedError(ZeroDivisionError):
    """No scored reference speech: DER has a zero denominator."""


class RttmParseError(ValueError):
    pass


@dataclass(frozen=True)
class DerReport:
    scored_s: float
    missed_s: float
    false_alarm_s: float
    confusion_s: float
    der_pct: float
    mapping: Dict[str, str]

    def __post_init__(self):
        for name in ("scored_s", "missed_s", "false_alarm_s", "confusion_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        want = ((self.missed_s + self.false_alarm_s + self.confusion_s)
                / self.scored_s * 100.0)
        if abs(want - self.der_pct) > 1e-9:
            raise ValueError("der_pct does not match its components")
        if len(set(self.mapping.values())) != len(self.mapping):
            raise ValueError("speaker mapping must be injective")


@dataclass(frozen=True)
class CountEstimate:
    session: str
    true_k: int
    est_k: int

    def __post_init__(self):
        if self.true_k < 1 or self.est_k < 1:
            raise ValueError("speaker counts must be >= 1")


# ---------------------------------------------------------------------------
# RTTM
# ---------------------------------------------------------------------------

def parse_rttm(text: str) -> Dict[str, Timeline]:
    """Collect SPEAKER lines into per-session timelines.

    Lines of any other type pass through unread. Turns are sorted by
    onset per session; same-speaker overlap is rejected by Timeline.
    """
    turns: Dict[str, List[Tuple[float, float, str]]] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        parts = raw.split()
        if not parts or parts[0] != "SPEAKER":
            continue
        if len(parts) < 8:
            raise RttmParseError(
                f"RTTM line {lineno}: expected >= 8 fields, got "
                f"{len(parts)}")
        try:
            onset, dur = float(parts[3]), float(parts[4])
        except ValueError:
            raise RttmParseError(
                f"RTTM line {lineno}: unparsable onset/duration") from None
        if onset < 0 or dur <= 0:
            raise RttmParseError(
                f"RTTM line {lineno}: bad interval onset={onset} dur={dur}")
        turns.setdefault(parts[1], []).append((onset, dur, parts[7]))
    return {sess: Timeline(tuple(sorted(tt, key=lambda t: (t[0], t[2]))))
            for sess, tt in turns.items()}


# ---------------------------------------------------------------------------
# DER
# ---------------------------------------------------------------------------

def _ticks(timeline: Timeline) -> List[Tuple[int, int, str]]:
    return [(round(o * MS), round((o + d) * MS), lab)
            for o, d, lab in timeline.turns]


def _active(turns: Sequence[Tuple[int, int, str]], lo: int, hi: int,
            side: str) -> Optional[str]:
    labs = [lab for a, b, lab in turns if a <= lo and hi <= b]
    if len(labs) > 1:
        raise ValueError(f"overlapping {side} speech is not scoreable")
    return labs[0] if labs else None


def der(reference: Timeline, hypothesis: Timeline,
        collar: float = 0.25) -> DerReport:
    """NIST-style diarization error rate.

    The time axis is cut at every turn boundary and collar edge; cells
    within +-collar of a reference boundary are excluded; the speaker
    mapping maximizing correctly attributed time is found by optimal
    assignment on the ref x hyp overlap matrix.
    """
    if collar < 0:
        raise ValueError("collar must be nonnegative")
    ref = _ticks(reference)
    hyp = _ticks(hypothesis)
    collar_t = round(collar * MS)

    edges = {b for a, e, _ in ref for b in (a, e)}
    cuts = set(edges)
    for b in edges:
        cuts.update((b - collar_t, b + collar_t))
    for a, e, _ in hyp:
        cuts.update((a, e))
    grid = sorted(cuts)

    ref_labels = sorted({lab for _, _, lab in ref})
    hyp_labels = sorted({lab for _, _, lab in hyp})
    overlap = np.zeros((len(ref_labels), len(hyp_labels)))
    ref_idx = {lab: i for i, lab in enumerate(ref_labels)}
    hyp_idx = {lab: i for i, lab in enumerate(hyp_labels)}

    scored = missed = fa = both = 0
    for lo, hi in zip(grid, grid[1:]):
        if hi <= lo:
            continue
        if any(b - collar_t <= lo and hi <= b + collar_t for b in edges):
            continue
        r = _active(ref, lo, hi, "reference")
        h = _active(hyp, lo, hi, "hypothesis")
        d = hi - lo
        if r is not None:
            scored += d
            if h is None:
                missed += d
            else:
                both += d
                overlap[ref_idx[r], hyp_idx[h]] += d
        elif h is not None:
            fa += d

    if scored == 0:
        raise DerUndefinedError("no scored reference speech")

    correct = 0.0
    mapping: Dict[str, str] = {}
    if overlap.size:
        rows, cols = linear_sum_assignment(-overlap)
        for i, j in zip(rows, cols):
            if overlap[i, j] > 0:
                mapping[ref_labels[i]] = hyp_labels[j]
                correct += overlap[i, j]
    confusion = both - correct
    return DerReport(
        scored_s=scored / MS,
        missed_s=missed / MS,
        false_alarm_s=fa / MS,
        confusion_s=confusion / MS,
        der_pct=(missed + fa + confusion) / scored * 100.0,
        mapping=mapping,
    )


# ---------------------------------------------------------------------------
# count summaries and purity
# ---------------------------------------------------------------------------

def mapd_poc(estimates: Sequence[CountEstimate]) -> Tuple[float, float]:
    """Mean absolute percentage deviation of the speaker count, and the
    percentage of sessions whose count is exact."""
    if not estimates:
        raise ValueError("need at least one count estimate")
    devs = [abs(e.est_k - e.true_k) / e.true_k for e in estimates]
    hits = [e.est_k == e.true_k for e in estimates]
    return (100.0 * float(np.mean(devs)), 100.0 * float(np.mean(hits)))


def cluster_purity(true_labels: Sequence, hyp_labels: Sequence) -> float:
    """Fraction of segments whose cluster's majority true label matches."""
    if len(true_labels) != len(hyp_labels):
        raise ShapeError(f"{len(true_labels)} true labels vs "
                         f"{len(hyp_labels)} hypothesis labels")
    if not len(true_labels):
        raise ValueError("cannot score an empty segmentation")
    true_arr = np.asarray(true_labels)
    hyp_arr = np.asarray(hyp_labels)
    majority = 0
    for lab in np.unique(hyp_arr):
        members = true_arr[hyp_arr == lab]
        _, counts = np.unique(members, return_counts=True)
        majority += int(counts.max())
    return majority / len(true_arr)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

REPORT_FIELDS = ("session", "scored_s", "missed_s", "false_alarm_s",
                 "confusion_s", "der_pct")


def report_csv(rows: Sequence[Tuple[str, DerReport]]) -> str:
    """Per-session scoring CSV with a corpus summary row.

    The summary DER is recomputed from corpus-total seconds, not averaged
    over sessions.
    """
    lines = [",".join(REPORT_FIELDS) + "\n"]
    tot = {"scored": 0.0, "missed": 0.0, "fa": 0.0, "conf": 0.0}
    for session, rep in rows:
        lines.append(
            f"{session},{rep.scored_s:.3f},{rep.missed_s:.3f},"
            f"{rep.false_alarm_s:.3f},{rep.confusion_s:.3f},"
            f"{rep.der_pct:.3f}\n")
        tot["scored"] += rep.scored_s
        tot["missed"] += rep.missed_s
        tot["fa"] += rep.false_alarm_s
        tot["conf"] += rep.confusion_s
    if tot["scored"] > 0:
        der_all = ((tot["missed"] + tot["fa"] + tot["conf"])
                   / tot["scored"] * 100.0)
    else:
        der_all = 0.0
    lines.append(
        f"ALL,{tot['scored']:.3f},{tot['missed']:.3f},{tot['fa']:.3f},"
        f"{tot['conf']:.3f},{der_all:.3f}\n")
    return "".join(lines)
