"""Synthetic embedding corpora with planted ground truth.

Speakers are unit vectors on the sphere; embeddings are speaker means
plus isotropic Gaussian noise. Sessions are alternating speaker turns
with shifted-exponential lengths, flattened to SAD + reference timeline
+ per-segment embeddings aligned with the pipeline segmenter. Everything
is reproducible from (config, seed).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .gan import LabeledEmbeddings
from .pipeline import (
    HOP_S,
    WIN_S,
    SadIntervals,
    Timeline,
    uniform_segments,
)

log = logging.getLogger(__name__)

PLACEMENTS = ("random-unit-sphere",)
TICK_S = 0.001


@dataclass(frozen=True)
class SynthConfig:
    """Knobs for the corpus generator.

    turn lengths are turn_min_s plus an exponential with mean
    turn_mean_s; session speaker counts are drawn from session_k_choices
    with optional weights. gap_mean_s > 0 inserts exponential silences
    between turns.
    """

    dim: int = 32
    n_speakers: int = 20
    std: float = 0.08
    rows_per_speaker: int = 40
    placement: str = "random-unit-sphere"
    session_k_choices: Tuple[int, ...] = (2, 3, 4, 5, 6, 7)
    session_k_weights: Optional[Tuple[float, ...]] = None
    turn_mean_s: float = 2.0
    turn_min_s: float = 1.5
    gap_mean_s: float = 0.0
    session_s: float = 120.0
    win_s: float = WIN_S
    hop_s: float = HOP_S
    seed: int = 0

    def __post_init__(self):
        if self.dim < 1 or self.n_speakers < 1:
            raise ValueError("dim and n_speakers must be >= 1")
        if not self.std > 0:
            raise ValueError("within-speaker std must be positive")
        if not self.session_s > 0:
            raise ValueError("session duration must be positive")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        if self.turn_mean_s <= 0 or self.turn_min_s < 0 or \
                self.gap_mean_s < 0:
            raise ValueError("turn/gap parameters must be nonnegative "
                             "(turn_mean_s strictly positive)")
        if not self.session_k_choices or \
                min(self.session_k_choices) < 1:
            raise ValueError("session_k_choices must be positive")
        if self.session_k_weights is not None and \
                len(self.session_k_weights) != len(self.session_k_choices):
            raise ValueError("one weight per speaker-count choice")


@dataclass(frozen=True)
class SynthSession:
    sad: SadIntervals
    reference: Timeline
    x: np.ndarray
    true_k: int

    def __post_init__(self):
        if self.x.ndim != 2:
            raise ValueError("per-segment embeddings must be a matrix")
        if len(self.reference.speakers) != self.true_k:
            raise ValueError("every session speaker needs at least one turn")


def _quantize(t: float) -> float:
    return round(round(t / TICK_S) * TICK_S, 3)


def gen_speakers(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """K unit-norm speaker means, uniform on the sphere."""
    means = rng.standard_normal((cfg.n_speakers, cfg.dim))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    if cfg.n_speakers > 1:
        gram = np.clip(means @ means.T, -1.0, 1.0)
        np.fill_diagonal(gram, -1.0)
        min_angle = np.degrees(np.arccos(gram.max()))
        log.info("sampled %d speaker means, min pairwise angle %.2f deg",
                 cfg.n_speakers, min_angle)
    return means


def gen_training_set(cfg: SynthConfig,
                     rng: np.random.Generator) -> LabeledEmbeddings:
    """rows_per_speaker noisy samples around each speaker mean."""
    means = gen_speakers(cfg, rng)
    labels = np.repeat(np.arange(cfg.n_speakers), cfg.rows_per_speaker)
    noise = rng.standard_normal((labels.size, cfg.dim))
    return LabeledEmbeddings(x=means[labels] + cfg.std * noise,
                             labels=labels, k=cfg.n_speakers)


def _turn_plan(cfg: SynthConfig, k: int, rng: np.random.Generator
               ) -> List[Tuple[float, float, int]]:
    """(onset, duration, speaker index) turns filling the session.

    The first k turns cycle a random permutation so every speaker
    appears; afterwards each turn goes to a random other speaker.
    """
    order = rng.permutation(k)
    turns: List[Tuple[float, float, int]] = []
    t = 0.0
    i = 0
    while t < cfg.session_s - TICK_S / 2:
        if i < k:
            spk = int(order[i])
        elif k == 1:
            spk = 0
        else:
            prev = turns[-1][2]
            spk = int(rng.integers(k - 1))
            if spk >= prev:
                spk += 1
        dur = cfg.turn_min_s + rng.exponential(cfg.turn_mean_s)
        end = _quantize(min(t + dur, cfg.session_s))
        if end - t >= TICK_S / 2:
            turns.append((t, end - t, spk))
        t = end
        if cfg.gap_mean_s > 0 and t < cfg.session_s:
            t = _quantize(min(t + rng.exponential(cfg.gap_mean_s),
                              cfg.session_s))
        i += 1
    if len({spk for _, _, spk in turns}) != k:
        raise ValueError(
            f"session too short to seat {k} speakers; raise session_s")
    return turns


def gen_session(cfg: SynthConfig, means: np.ndarray,
                rng: np.random.Generator,
                session: str = "sess000",
                names: Optional[Sequence[str]] = None) -> SynthSession:
    """One planted session over the given speaker means.

    Each uniform segment's embedding is drawn from the speaker who owns
    the segment's midpoint, so segments straddling a turn boundary carry
    the impurity real segmenters face.
    """
    k = means.shape[0]
    if k < 1:
        raise ValueError("need at least one speaker")
    if names is None:
        names = [f"spk{i:02d}" for i in range(k)]
    turns = _turn_plan(cfg, k, rng)

    intervals: List[Tuple[float, float]] = []
    for onset, dur, _ in turns:
        if intervals and abs(intervals[-1][1] - onset) < TICK_S / 2:
            intervals[-1] = (intervals[-1][0], onset + dur)
        else:
            intervals.append((onset, onset + dur))
    sad = SadIntervals(session=session, intervals=tuple(intervals))

    ref_turns = []
    for onset, dur, spk in turns:
        if ref_turns and ref_turns[-1][2] == names[spk] and \
                abs(ref_turns[-1][0] + ref_turns[-1][1] - onset) < TICK_S / 2:
            prev = ref_turns.pop()
            ref_turns.append((prev[0], prev[1] + dur, prev[2]))
        else:
            ref_turns.append((onset, dur, names[spk]))
    reference = Timeline(tuple(ref_turns))

    segments = uniform_segments(sad, cfg.win_s, cfg.hop_s)
    owners = np.empty(len(segments), dtype=np.int64)
    for i, seg in enumerate(segments):
        mid = seg.onset + seg.duration / 2.0
        owner = None
        for onset, dur, spk in turns:
            if onset <= mid < onset + dur:
                owner = spk
                break
        if owner is None:  # midpoint on the session's final boundary
            owner = turns[-1][2]
        owners[i] = owner
    noise = rng.standard_normal((len(segments), means.shape[1]))
    x = means[owners] + cfg.std * noise
    return SynthSession(sad=sad, reference=reference, x=x, true_k=k)


def session_rng(cfg: SynthConfig, index: int) -> np.random.Generator:
    """Deterministic per-session stream, independent of corpus size."""
    return np.random.default_rng([cfg.seed, 7919, index])


def gen_corpus(cfg: SynthConfig, n_sessions: int
               ) -> Tuple[np.ndarray, List[SynthSession]]:
    """Speaker means plus n_sessions independent planted sessions.

    Session i draws its speaker count from session_k_choices, picks that
    many speakers from the pool without replacement, and generates from
    its own derived seed, so corpora are reproducible and sessions are
    order-independent.
    """
    if n_sessions < 1:
        raise ValueError("need at least one session")
    means = gen_speakers(cfg, np.random.default_rng([cfg.seed, 104729]))
    weights = None
    if cfg.session_k_weights is not None:
        w = np.asarray(cfg.session_k_weights, dtype=np.float64)
        weights = w / w.sum()
    sessions = []
    for i in range(n_sessions):
        rng = session_rng(cfg, i)
        k = int(rng.choice(np.asarray(cfg.session_k_choices), p=weights))
        k = min(k, cfg.n_speakers)
        pool = rng.choice(cfg.n_speakers, size=k, replace=False)
        names = [f"spk{g:02d}" for g in pool]
        sessions.append(gen_session(cfg, means[pool], rng,
                                    session=f"sess{i:03d}", names=names))
    return means, sessions
