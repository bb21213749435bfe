import itertools
import json

import numpy as np
import pytest

from ambivox.adversaries import TrialPair
from ambivox.corpus import UtteranceRecord
from ambivox.errors import InvalidInput
from ambivox.frontend import Waveform, write_wav
from ambivox.metrics import (
    MetricsReport,
    compute_eer,
    edit_distance,
    evaluate,
    normalized_eer,
    normalized_gr,
    word_accuracy,
    word_error_rate,
)
from ambivox.reporting import format_table


def eer_bruteforce(target, nontarget):
    """Sweep all 2n+1 thresholds; return (eer, bracket_lo, bracket_hi)."""
    scores = np.sort(np.concatenate([target, nontarget]))
    mids = [(scores[0] - 1.0)]
    for a, b in zip(scores[:-1], scores[1:]):
        mids.append((a + b) / 2.0)
    mids += list(scores) + [scores[-1] + 1.0]
    points = []
    for t in sorted(mids):
        far = float(np.mean(np.asarray(nontarget) >= t))
        frr = float(np.mean(np.asarray(target) < t))
        points.append((far, frr))
    for (f1, r1), (f2, r2) in zip(points[:-1], points[1:]):
        if r2 >= f2:
            denom = (f1 - r1) - (f2 - r2)
            lam = 0.0 if denom <= 0 else (f1 - r1) / denom
            eer = 100.0 * (f1 + lam * (f2 - f1))
            rates = [100 * f1, 100 * r1, 100 * f2, 100 * r2]
            return eer, min(rates), max(rates)
    return 100.0 * points[-1][0], 0.0, 100.0


class TestEer:
    def test_perfectly_separated(self):
        assert compute_eer(([0.9, 0.8], [0.2, 0.1])) == 0.0

    def test_same_distribution_near_fifty(self):
        rng = np.random.default_rng(0)
        target = rng.normal(0.0, 1.0, 10000)
        nontarget = rng.normal(0.0, 1.0, 10000)
        assert compute_eer((target, nontarget)) == pytest.approx(50.0, abs=2.0)

    def test_interleaved_matches_bruteforce(self):
        target, nontarget = np.array([0.8, 0.4]), np.array([0.6, 0.2])
        expected, lo, hi = eer_bruteforce(target, nontarget)
        got = compute_eer((target, nontarget))
        assert got == pytest.approx(expected, abs=1e-12)
        assert lo - 1e-9 <= got <= hi + 1e-9

    def test_random_sets_match_bruteforce(self):
        rng = np.random.default_rng(13)
        for _ in range(200):
            n_t = int(rng.integers(1, 26))
            n_n = int(rng.integers(1, 26))
            target = np.round(rng.uniform(size=n_t), 2)
            nontarget = np.round(rng.uniform(size=n_n), 2)
            expected, lo, hi = eer_bruteforce(target, nontarget)
            got = compute_eer((target, nontarget))
            assert got == pytest.approx(expected, abs=1e-9)
            assert lo - 1e-9 <= got <= hi + 1e-9

    def test_trial_pair_interface(self):
        trials = [
            TrialPair("a", "b", True, score=0.9),
            TrialPair("a", "c", False, score=0.1),
        ]
        assert compute_eer(trials) == 0.0

    def test_single_class_rejected(self):
        with pytest.raises(InvalidInput):
            compute_eer(([0.5, 0.4], []))
        with pytest.raises(InvalidInput):
            compute_eer([TrialPair("a", "b", True, score=0.5)])

    def test_unscored_trials_rejected(self):
        with pytest.raises(InvalidInput):
            compute_eer([TrialPair("a", "b", True), TrialPair("a", "c", False)])


class TestNormalized:
    @pytest.mark.parametrize("eer,expected", [
        (5.73, 11.46), (17.42, 34.84), (51.88, 96.24),
        (41.95, 83.90), (38.37, 76.74), (50.0, 100.0),
    ])
    def test_eer_golden(self, eer, expected):
        assert normalized_eer(eer) == pytest.approx(expected, abs=0.01)

    @pytest.mark.parametrize("gr,expected", [
        (91.37, 17.26), (89.04, 21.92), (53.90, 92.20),
        (50.01, 99.98), (48.39, 96.78), (53.63, 92.74),
    ])
    def test_gr_golden(self, gr, expected):
        assert normalized_gr(gr) == pytest.approx(expected, abs=0.01)

    def test_symmetry_about_fifty(self):
        rng = np.random.default_rng(2)
        for d in rng.uniform(0, 50, 100):
            assert normalized_gr(50 + d) == pytest.approx(normalized_gr(50 - d))

    def test_range_law(self):
        rng = np.random.default_rng(3)
        for v in rng.uniform(0, 100, 200):
            out = normalized_eer(v)
            assert 0.0 <= out <= 100.0
            assert (out == 100.0) == (v == 50.0)

    def test_out_of_range_rejected(self):
        for bad in (-0.1, 100.1):
            with pytest.raises(InvalidInput):
                normalized_eer(bad)
            with pytest.raises(InvalidInput):
                normalized_gr(bad)


def wer_enumeration_oracle(ref, hyp, budget=None):
    """Exhaustive recursive edit enumeration (no DP), for short pairs."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    sub = wer_enumeration_oracle(ref[1:], hyp[1:]) + (ref[0] != hyp[0])
    dele = wer_enumeration_oracle(ref[1:], hyp) + 1
    ins = wer_enumeration_oracle(ref, hyp[1:]) + 1
    return min(sub, dele, ins)


class TestWer:
    def test_identity(self):
        assert word_error_rate(["a", "b"], ["a", "b"]) == 0.0

    def test_empty_hypothesis(self):
        assert word_error_rate(list("abcd"), []) == 100.0

    def test_single_substitution(self):
        assert word_error_rate(["a", "b", "c"], ["a", "x", "c"]) == \
            pytest.approx(33.33, abs=0.01)

    def test_insertions_can_exceed_100(self):
        assert word_error_rate(["a"], ["a", "b", "c"]) == 200.0

    def test_empty_reference_rejected(self):
        with pytest.raises(InvalidInput):
            word_error_rate([], ["a"])

    def test_matches_enumeration_short_pairs(self):
        rng = np.random.default_rng(4)
        alphabet = ["x", "y", "z"]
        for _ in range(300):
            ref = [alphabet[i] for i in rng.integers(0, 3, rng.integers(1, 7))]
            hyp = [alphabet[i] for i in rng.integers(0, 3, rng.integers(0, 7))]
            assert edit_distance(ref, hyp) == wer_enumeration_oracle(ref, hyp)

    def test_relabeling_invariance(self):
        rng = np.random.default_rng(5)
        alphabet = ["x", "y", "z"]
        relabel = {"x": "q", "y": "r", "z": "s"}
        for _ in range(100):
            ref = [alphabet[i] for i in rng.integers(0, 3, rng.integers(1, 7))]
            hyp = [alphabet[i] for i in rng.integers(0, 3, rng.integers(0, 7))]
            a = edit_distance(ref, hyp)
            b = edit_distance([relabel[t] for t in ref], [relabel[t] for t in hyp])
            assert a == b


class TestWordAccuracy:
    def test_quartznet_operating_point(self):
        assert word_accuracy(4.36) == pytest.approx(95.64, abs=0.01)

    def test_zero_wer(self):
        assert word_accuracy(0.0) == 100.0

    def test_clamped_at_zero(self):
        assert word_accuracy(120.0) == 0.0

    def test_negative_rejected(self):
        with pytest.raises(InvalidInput):
            word_accuracy(-1.0)


class _OracleGender:
    def __init__(self, truth):
        self.truth = truth

    def predict_proba(self, wave):
        return self.truth[wave.samples.tobytes()]


class _OracleEmbedder:
    def __init__(self, speaker_of, n):
        self.speaker_of = speaker_of
        self.n = n

    def embed(self, wave):
        vec = np.zeros(self.n)
        vec[self.speaker_of[wave.samples.tobytes()]] = 1.0
        return vec


class _OracleTranscriber:
    def __init__(self, transcripts):
        self.transcripts = transcripts

    def predict(self, wave):
        return self.transcripts[wave.samples.tobytes()]


def _build_records(tmp_path, n_speakers, utts_per_speaker, seed=0):
    rng = np.random.default_rng(seed)
    records, waves = [], {}
    for s in range(n_speakers):
        for u in range(utts_per_speaker):
            path = tmp_path / f"s{s}_u{u}.wav"
            wave = Waveform(rng.uniform(-0.5, 0.5, 2048))
            write_wav(path, wave)
            rec = UtteranceRecord(
                str(path), f"s{s}", "M" if s % 2 == 0 else "F",
                ("aa+iy", "eh+ao"), "test",
            )
            records.append(rec)
            waves[rec.audio_path] = rec.load_audio()
    return records, waves


class TestEvaluate:
    def test_oracle_perfect_attackers_on_originals(self, tmp_path):
        records, waves = _build_records(tmp_path, 4, 3)
        truth, spk, txt = {}, {}, {}
        speakers = sorted({r.speaker_id for r in records})
        for rec in records:
            key = waves[rec.audio_path].samples.tobytes()
            truth[key] = rec.gender_label
            spk[key] = speakers.index(rec.speaker_id)
            txt[key] = rec.transcript
        report = evaluate(
            None, records,
            _OracleGender(truth),
            _OracleEmbedder(spk, len(speakers)),
            _OracleTranscriber(txt),
            seed=0, label="oracle",
        )
        assert report.gender_recognition == 100.0
        assert report.eer == 0.0
        assert report.wer == 0.0
        assert report.gr_normalized == 0.0
        assert report.eer_normalized == 0.0
        assert report.word_accuracy == 100.0

    def test_coin_flip_classifier_gives_full_privacy_score(self, tmp_path):
        # one shared WAV, 5000 two-utterance speakers
        path = tmp_path / "one.wav"
        wave = Waveform(np.random.default_rng(0).uniform(-0.5, 0.5, 2048))
        write_wav(path, wave)
        records = [
            UtteranceRecord(str(path), f"s{i // 2}", "M" if i % 2 else "F",
                            ("aa+iy",), "test")
            for i in range(10000)
        ]

        class CoinFlip:
            def __init__(self):
                self.rng = np.random.default_rng(99)

            def predict_proba(self, wave):
                return float(self.rng.uniform())

        class ZeroEmbedder:
            def __init__(self):
                self.rng = np.random.default_rng(3)

            def embed(self, wave):
                v = self.rng.normal(size=4)
                return v / np.linalg.norm(v)

        class Silent:
            def predict(self, wave):
                return ("aa+iy",)

        report = evaluate(None, records, CoinFlip(), ZeroEmbedder(), Silent(),
                          seed=0, label="coin")
        assert report.gr_normalized == pytest.approx(100.0, abs=2.0)

    def test_report_self_consistency(self, tmp_path):
        records, waves = _build_records(tmp_path, 2, 3)
        truth = {waves[r.audio_path].samples.tobytes(): r.gender_label
                 for r in records}
        spk = {waves[r.audio_path].samples.tobytes():
               0 if r.speaker_id == "s0" else 1 for r in records}
        txt = {waves[r.audio_path].samples.tobytes(): r.transcript
               for r in records}
        report = evaluate(None, records, _OracleGender(truth),
                          _OracleEmbedder(spk, 2), _OracleTranscriber(txt),
                          seed=1)
        assert report.eer_normalized == pytest.approx(
            normalized_eer(report.eer), abs=0.01)
        assert report.gr_normalized == pytest.approx(
            normalized_gr(report.gender_recognition), abs=0.01)
        assert report.word_accuracy == pytest.approx(
            word_accuracy(report.wer), abs=0.01)


class TestReportObject:
    def test_golden_table_row(self):
        report = MetricsReport.from_raw("row", eer=38.37,
                                        gender_recognition=53.63, wer=23.36)
        table = format_table([report])
        cells = table.splitlines()[-1].split()
        assert cells[1:] == ["76.64", "38.37", "76.74", "53.63", "92.74"]

    def test_wer_above_100_keeps_raw(self):
        report = MetricsReport.from_raw("row", eer=50.0,
                                        gender_recognition=50.0, wer=120.0)
        assert report.word_accuracy == 0.0
        assert report.wer == 120.0

    def test_save_load_roundtrip_bytes(self, tmp_path):
        report = MetricsReport.from_raw(
            "r", eer=10.0, gender_recognition=70.0, wer=5.0,
            metadata={"seed": 0},
        )
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        report.save(p1)
        MetricsReport.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()
