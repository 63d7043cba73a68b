"""Corpus generator tests: speaker placement, training sets, session
structure, and reproducibility."""

import logging

import numpy as np
import pytest

from deskdiar.pipeline import uniform_segments
from deskdiar.simulate import (
    SynthConfig,
    SynthSession,
    gen_corpus,
    gen_session,
    gen_speakers,
    gen_training_set,
)


def two_means(dim=8):
    m = np.zeros((2, dim))
    m[0, 0] = 1.0
    m[1, 1] = 1.0
    return m


class TestConfig:
    def test_validation(self):
        with pytest.raises(ValueError, match="std"):
            SynthConfig(std=0.0)
        with pytest.raises(ValueError, match="duration"):
            SynthConfig(session_s=0.0)
        with pytest.raises(ValueError, match="placement"):
            SynthConfig(placement="grid")
        with pytest.raises(ValueError, match="weight"):
            SynthConfig(session_k_choices=(2, 3),
                        session_k_weights=(1.0,))
        with pytest.raises(ValueError, match="turn"):
            SynthConfig(turn_mean_s=0.0)


class TestGenSpeakers:
    def test_single_speaker_unit_vector(self):
        m = gen_speakers(SynthConfig(n_speakers=1, dim=5),
                         np.random.default_rng(0))
        assert m.shape == (1, 5)
        assert abs(np.linalg.norm(m[0]) - 1.0) < 1e-12

    def test_unit_norms_and_determinism(self):
        cfg = SynthConfig(n_speakers=9, dim=12)
        a = gen_speakers(cfg, np.random.default_rng(3))
        b = gen_speakers(cfg, np.random.default_rng(3))
        assert np.array_equal(a, b)
        assert np.abs(np.linalg.norm(a, axis=1) - 1.0).max() < 1e-12

    def test_sphere_spread(self):
        for seed in range(10):
            m = gen_speakers(SynthConfig(n_speakers=100, dim=64),
                             np.random.default_rng(seed))
            gram = m @ m.T
            np.fill_diagonal(gram, -1.0)
            assert gram.max() < 0.8

    def test_min_angle_logged(self, caplog):
        with caplog.at_level(logging.INFO, logger="deskdiar.simulate"):
            gen_speakers(SynthConfig(n_speakers=4, dim=8),
                         np.random.default_rng(0))
        assert any("min pairwise angle" in r.message for r in caplog.records)


class TestGenTrainingSet:
    def test_counts_exact(self):
        cfg = SynthConfig(n_speakers=7, dim=6, rows_per_speaker=13)
        data = gen_training_set(cfg, np.random.default_rng(1))
        assert data.k == 7 and data.n == 7 * 13
        assert np.bincount(data.labels).tolist() == [13] * 7

    def test_vanishing_std_matches_means(self):
        cfg = SynthConfig(n_speakers=4, dim=6, rows_per_speaker=5,
                          std=1e-15)
        data = gen_training_set(cfg, np.random.default_rng(2))
        means = gen_speakers(cfg, np.random.default_rng(2))
        assert np.abs(data.x - means[data.labels]).max() < 1e-12

    def test_nearest_mean_classification(self):
        # seed 0 places 12 means all >= 30 degrees apart at dim 32
        cfg = SynthConfig(n_speakers=12, dim=32, std=0.05,
                          rows_per_speaker=30)
        means = gen_speakers(cfg, np.random.default_rng(0))
        gram = means @ means.T
        np.fill_diagonal(gram, -1.0)
        assert gram.max() <= np.cos(np.radians(30.0))
        data = gen_training_set(cfg, np.random.default_rng(0))
        d2 = ((data.x[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
        acc = float((d2.argmin(axis=1) == data.labels).mean())
        assert acc >= 0.99


class TestGenSession:
    def test_single_speaker(self):
        cfg = SynthConfig(dim=8, n_speakers=1)
        s = gen_session(cfg, two_means()[:1], np.random.default_rng(0))
        assert s.true_k == 1
        assert s.reference.speakers == ("spk00",)
        assert abs(s.sad.total_speech - cfg.session_s) < 1e-9

    def test_determinism(self):
        cfg = SynthConfig(dim=8, n_speakers=2)
        a = gen_session(cfg, two_means(), np.random.default_rng(11))
        b = gen_session(cfg, two_means(), np.random.default_rng(11))
        assert a.sad == b.sad and a.reference == b.reference
        assert np.array_equal(a.x, b.x)

    def test_rows_match_segments(self):
        cfg = SynthConfig(dim=8, n_speakers=2, session_s=47.0)
        s = gen_session(cfg, two_means(), np.random.default_rng(5))
        segs = uniform_segments(s.sad, cfg.win_s, cfg.hop_s)
        assert s.x.shape == (len(segs), 8)

    def test_speech_share_monte_carlo(self):
        cfg = SynthConfig(dim=8, n_speakers=2, turn_mean_s=2.0,
                          session_s=120.0)
        ok = 0
        for seed in range(100):
            s = gen_session(cfg, two_means(),
                            np.random.default_rng([5, seed]))
            share = {}
            for _, d, lab in s.reference.turns:
                share[lab] = share.get(lab, 0.0) + d
            ok += min(share.values()) / sum(share.values()) >= 0.2
        assert ok >= 90

    def test_midpoint_owner_rule(self):
        cfg = SynthConfig(dim=8, n_speakers=2, std=1e-9, session_s=60.0)
        means = two_means()
        s = gen_session(cfg, means, np.random.default_rng(9))
        segs = uniform_segments(s.sad, cfg.win_s, cfg.hop_s)
        spans = [(o, o + d, lab) for o, d, lab in s.reference.turns]
        for seg, row in zip(segs, s.x):
            mid = seg.onset + seg.duration / 2.0
            owner = next((lab for a, b, lab in spans if a <= mid < b),
                         spans[-1][2])
            want = means[0] if owner == "spk00" else means[1]
            assert np.abs(row - want).max() < 1e-6

    def test_segment_inside_turn_carries_that_speaker(self):
        cfg = SynthConfig(dim=8, n_speakers=2, std=1e-9, session_s=60.0)
        means = two_means()
        s = gen_session(cfg, means, np.random.default_rng(13))
        segs = uniform_segments(s.sad, cfg.win_s, cfg.hop_s)
        spans = [(o, o + d, lab) for o, d, lab in s.reference.turns]
        inside = 0
        for seg, row in zip(segs, s.x):
            hosts = [lab for a, b, lab in spans
                     if a - 1e-9 <= seg.onset and seg.offset <= b + 1e-9]
            if len(hosts) != 1:
                continue
            inside += 1
            want = means[0] if hosts[0] == "spk00" else means[1]
            assert np.abs(row - want).max() < 1e-6
        assert inside > 0

    def test_gaps_split_sad(self):
        cfg = SynthConfig(dim=8, n_speakers=2, gap_mean_s=1.0,
                          session_s=60.0)
        s = gen_session(cfg, two_means(), np.random.default_rng(3))
        assert len(s.sad.intervals) > 1
        assert s.sad.total_speech < cfg.session_s

    def test_too_short_session_rejected(self):
        cfg = SynthConfig(dim=8, n_speakers=5, session_s=2.0)
        means = np.eye(8)[:5]
        with pytest.raises(ValueError, match="too short"):
            gen_session(cfg, means, np.random.default_rng(0))

    def test_session_invariant_enforced(self):
        cfg = SynthConfig(dim=8, n_speakers=2)
        s = gen_session(cfg, two_means(), np.random.default_rng(1))
        with pytest.raises(ValueError, match="at least one turn"):
            SynthSession(sad=s.sad, reference=s.reference, x=s.x, true_k=3)


class TestGenCorpus:
    def test_reproducible_and_prefix_stable(self):
        cfg = SynthConfig(dim=16, n_speakers=10, seed=42)
        m1, s1 = gen_corpus(cfg, 5)
        m2, s2 = gen_corpus(cfg, 5)
        assert np.array_equal(m1, m2)
        for a, b in zip(s1, s2):
            assert a.sad == b.sad and a.reference == b.reference
            assert np.array_equal(a.x, b.x)
        _, s3 = gen_corpus(cfg, 3)
        for a, b in zip(s3, s1):
            assert a.sad == b.sad and np.array_equal(a.x, b.x)

    def test_speaker_counts_within_choices(self):
        cfg = SynthConfig(dim=16, n_speakers=10, seed=7)
        _, sessions = gen_corpus(cfg, 8)
        for s in sessions:
            assert s.true_k in cfg.session_k_choices

    def test_one_hot_weights(self):
        cfg = SynthConfig(dim=16, n_speakers=10, seed=7,
                          session_k_choices=(2, 3, 4),
                          session_k_weights=(0.0, 1.0, 0.0))
        _, sessions = gen_corpus(cfg, 6)
        assert all(s.true_k == 3 for s in sessions)

    def test_session_ids_sequential(self):
        cfg = SynthConfig(dim=16, n_speakers=6, seed=1)
        _, sessions = gen_corpus(cfg, 3)
        assert [s.sad.session for s in sessions] == \
            ["sess000", "sess001", "sess002"]
