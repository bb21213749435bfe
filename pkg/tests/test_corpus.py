import hashlib
from pathlib import Path

import numpy as np
import pytest

from ambivox.corpus import (
    EpochSampler,
    UtteranceRecord,
    build_corpus,
    load_manifest,
    make_speaker_profiles,
    sample_batch,
    save_manifest,
    split_records,
)
from ambivox.errors import InvalidInput, MissingAsset, ParseError
from ambivox.frontend import Waveform, write_wav


def digest_tree(root):
    out = {}
    for p in sorted(Path(root).rglob("*")):
        if p.is_file():
            out[str(p.relative_to(root))] = hashlib.sha256(p.read_bytes()).hexdigest()
    return out


def autocorr_pitch(samples, rate=16000):
    """Test-side pitch oracle: autocorrelation peak over 50-350 Hz lags."""
    frame = 2048
    energy = np.convolve(samples ** 2, np.ones(frame), mode="valid")
    start = int(np.argmax(energy))
    chunk = samples[start : start + frame]
    chunk = chunk - chunk.mean()
    ac = np.correlate(chunk, chunk, mode="full")[frame - 1 :]
    lo, hi = int(rate / 350.0), int(rate / 50.0)
    lag = lo + int(np.argmax(ac[lo:hi]))
    return rate / lag


class TestBuild:
    def test_deterministic_bytes(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        build_corpus(a, n_speakers=4, utterances_per_speaker=2, seed=7)
        build_corpus(b, n_speakers=4, utterances_per_speaker=2, seed=7)
        assert digest_tree(a) == digest_tree(b)

    def test_gender_balance(self, small_corpus):
        _, records = small_corpus
        genders = [r.gender for r in records]
        assert genders.count("M") == genders.count("F") == len(records) // 2

    def test_invalid_configs(self, tmp_path):
        with pytest.raises(InvalidInput):
            build_corpus(tmp_path / "x", n_speakers=0)
        with pytest.raises(InvalidInput):
            build_corpus(tmp_path / "x", n_speakers=5)
        with pytest.raises(InvalidInput):
            build_corpus(tmp_path / "x", n_speakers=2, vocabulary_size=1)

    def test_profiles_deterministic_and_ranged(self):
        a = make_speaker_profiles(10, seed=4)
        b = make_speaker_profiles(10, seed=4)
        assert a == b
        for p in a:
            lo, hi = (85.0, 155.0) if p.gender == "M" else (165.0, 255.0)
            assert lo <= p.f0_base <= hi

    def test_gender_separability_by_pitch(self, small_corpus):
        _, records = small_corpus
        f0 = {"M": [], "F": []}
        for rec in records[:32]:
            f0[rec.gender].append(autocorr_pitch(rec.load_audio().samples))
        assert np.mean(f0["F"]) - np.mean(f0["M"]) >= 40.0

    def test_transcripts_from_vocabulary(self, small_corpus):
        _, records = small_corpus
        for rec in records:
            assert len(rec.transcript) == 4
            for tok in rec.transcript:
                assert "+" in tok

    def test_split_partition(self, small_corpus):
        _, records = small_corpus
        train = split_records(records, "train")
        test = split_records(records, "test")
        assert len(train) + len(test) == len(records)
        assert len(test) > 0


class TestManifest:
    def test_roundtrip(self, small_corpus, tmp_path):
        root, records = small_corpus
        path = tmp_path / "m.tsv"
        save_manifest(path, records)
        back = load_manifest(path)
        assert [r.speaker_id for r in back] == [r.speaker_id for r in records]
        assert [r.transcript for r in back] == [r.transcript for r in records]
        assert [r.split for r in back] == [r.split for r in records]

    def test_empty_file_gives_empty_list(self, tmp_path):
        path = tmp_path / "empty.tsv"
        path.write_text("")
        assert load_manifest(path) == []

    def test_missing_audio_raises(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text(
            "audio_path\tspeaker_id\tgender\ttranscript\tsplit\n"
            "missing.wav\ts1\tM\taa+iy\ttrain\n"
        )
        with pytest.raises(MissingAsset) as exc:
            load_manifest(path)
        assert "missing.wav" in str(exc.value)

    def test_malformed_row_names_line(self, tmp_path):
        path = tmp_path / "m.tsv"
        path.write_text(
            "audio_path\tspeaker_id\tgender\ttranscript\tsplit\n"
            "only-one-field\n"
        )
        with pytest.raises(ParseError) as exc:
            load_manifest(path)
        assert exc.value.line == 2

    def test_bad_gender_rejected(self, tmp_path):
        wav = tmp_path / "a.wav"
        write_wav(wav, Waveform(np.zeros(2048)))
        path = tmp_path / "m.tsv"
        path.write_text(
            "audio_path\tspeaker_id\tgender\ttranscript\tsplit\n"
            f"{wav}\ts1\tX\taa+iy\ttrain\n"
        )
        with pytest.raises(ParseError):
            load_manifest(path)

    def test_unknown_columns_ignored(self, tmp_path):
        wav = tmp_path / "a.wav"
        write_wav(wav, Waveform(np.zeros(2048)))
        path = tmp_path / "m.tsv"
        path.write_text(
            "audio_path\tspeaker_id\tgender\ttranscript\tsplit\textra\n"
            f"{wav}\ts1\tM\taa+iy\ttrain\tbonus\n"
        )
        records = load_manifest(path)
        assert len(records) == 1 and records[0].speaker_id == "s1"

    def test_missing_file_is_missing_asset(self, tmp_path):
        with pytest.raises(MissingAsset):
            load_manifest(tmp_path / "nope.tsv")


class TestSampling:
    @pytest.fixture(scope="class")
    def shared_records(self, tmp_path_factory):
        root = tmp_path_factory.mktemp("shared")
        wav = root / "one.wav"
        write_wav(wav, Waveform(0.1 * np.ones(2048)))
        return [
            UtteranceRecord(str(wav), f"s{i}", "M" if i % 2 else "F",
                            ("aa+iy",), "train")
            for i in range(12)
        ]

    def test_full_draw_is_permutation(self, shared_records):
        _, _, chosen = sample_batch(shared_records, len(shared_records), seed=1)
        assert sorted(r.speaker_id for r in chosen) == sorted(
            r.speaker_id for r in shared_records
        )

    def test_seed_determinism(self, shared_records):
        _, la, a = sample_batch(shared_records, 5, seed=9)
        _, lb, b = sample_batch(shared_records, 5, seed=9)
        assert [r.speaker_id for r in a] == [r.speaker_id for r in b]
        assert np.array_equal(la, lb)

    def test_overdraw_rejected(self, shared_records):
        with pytest.raises(InvalidInput):
            sample_batch(shared_records, len(shared_records) + 1, seed=0)

    def test_uniform_selection_frequency(self, shared_records):
        counts = {r.speaker_id: 0 for r in shared_records}
        draws, n = 3334, 3
        for i in range(draws):
            _, _, chosen = sample_batch(shared_records, n, seed=i)
            for r in chosen:
                counts[r.speaker_id] += 1
        # binomial oracle: each record enters a draw with p = n / N
        p = n / len(shared_records)
        expected = draws * p
        sigma = np.sqrt(draws * p * (1 - p))
        for c in counts.values():
            assert abs(c - expected) <= 3 * sigma + 1

    def test_epoch_sampler_reshuffles(self):
        sampler = EpochSampler(6, seed=0)
        first = [sampler.next_batch(3) for _ in range(2)]
        second = [sampler.next_batch(3) for _ in range(2)]
        assert sorted(np.concatenate(first).tolist()) == [0, 1, 2, 3, 4, 5]
        assert sorted(np.concatenate(second).tolist()) == [0, 1, 2, 3, 4, 5]
