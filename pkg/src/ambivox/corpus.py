"""Synthetic gendered-voice corpus: generation, manifests, batch sampling.

The corpus replaces a full-scale speech dataset with formant-synthesized
utterances whose gender signal lives in the pitch range (male 85-155 Hz,
female 165-255 Hz) and whose speaker identity lives in the per-speaker
pitch base and formant multiplier. Manifests are UTF-8 tab-separated
files with a header row and the column order documented below.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidInput, MissingAsset, ParseError
from .frontend import Waveform, read_wav, write_wav
from .synth import build_vocabulary, synthesize_utterance

MALE, FEMALE = "M", "F"
GENDER_TO_LABEL = {MALE: 0.0, FEMALE: 1.0}
LABEL_TO_GENDER = {0.0: MALE, 1.0: FEMALE}

F0_RANGE = {MALE: (85.0, 155.0), FEMALE: (165.0, 255.0)}
FORMANT_SHIFT_RANGE = (0.92, 1.08)

MANIFEST_COLUMNS = ("audio_path", "speaker_id", "gender", "transcript", "split")
SPLITS = ("train", "test")


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    gender: str
    f0_base: float
    formant_shift: float
    seed: int


@dataclass(frozen=True)
class UtteranceRecord:
    audio_path: str
    speaker_id: str
    gender: str
    transcript: tuple
    split: str

    @property
    def gender_label(self):
        return GENDER_TO_LABEL[self.gender]

    def load_audio(self) -> Waveform:
        return read_wav(self.audio_path)


def make_speaker_profiles(n_speakers, seed):
    """Gender-balanced speaker set with stratified pitch bases.

    Stratification keeps adjacent speakers' pitch bases apart so that
    identity stays learnable despite per-utterance jitter.
    """
    if n_speakers <= 0:
        raise InvalidInput("n_speakers must be positive")
    if n_speakers % 2 != 0:
        raise InvalidInput("n_speakers must be even for exact gender balance")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA5]))
    per_gender = n_speakers // 2
    profiles = []
    for gender in (MALE, FEMALE):
        lo, hi = F0_RANGE[gender]
        slots = rng.permutation(per_gender)
        for i in range(per_gender):
            f0 = lo + (hi - lo) * (slots[i] + rng.uniform(0.2, 0.8)) / per_gender
            shift = rng.uniform(*FORMANT_SHIFT_RANGE)
            idx = len(profiles)
            profiles.append(
                SpeakerProfile(
                    speaker_id=f"spk{idx:03d}",
                    gender=gender,
                    f0_base=float(f0),
                    formant_shift=float(shift),
                    seed=int(seed),
                )
            )
    return profiles


def build_corpus(out_dir, n_speakers=20, utterances_per_speaker=30,
                 vocabulary_size=16, words_per_utterance=4, seed=0,
                 test_fraction=0.2):
    """Synthesize a corpus under ``out_dir`` and write ``manifest.tsv``.

    Deterministic for a fixed configuration and seed: every utterance
    derives its own RNG from (seed, speaker index, utterance index), so
    generation order (or parallelism) cannot change the output.
    """
    if utterances_per_speaker < 1:
        raise InvalidInput("utterances_per_speaker must be positive")
    if words_per_utterance < 1:
        raise InvalidInput("words_per_utterance must be positive")
    out_dir = Path(out_dir)
    vocabulary = build_vocabulary(vocabulary_size)
    profiles = make_speaker_profiles(n_speakers, seed)
    n_test = int(round(test_fraction * utterances_per_speaker))
    records = []
    for s_idx, prof in enumerate(profiles):
        for u_idx in range(utterances_per_speaker):
            rng = np.random.default_rng(np.random.SeedSequence([seed, s_idx, u_idx]))
            words = tuple(vocabulary[i] for i in
                          rng.integers(0, len(vocabulary), words_per_utterance))
            f0 = prof.f0_base
            wave = synthesize_utterance(words, f0, prof.formant_shift, rng)
            rel = Path("wav") / prof.speaker_id / f"utt{u_idx:04d}.wav"
            write_wav(out_dir / rel, wave)
            split = "test" if u_idx >= utterances_per_speaker - n_test else "train"
            records.append(
                UtteranceRecord(
                    audio_path=str(out_dir / rel),
                    speaker_id=prof.speaker_id,
                    gender=prof.gender,
                    transcript=words,
                    split=split,
                )
            )
    save_manifest(out_dir / "manifest.tsv", records, base_dir=out_dir)
    return records


def save_manifest(path, records, base_dir=None):
    """Write records as TSV. Paths are stored relative to ``base_dir``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = ["\t".join(MANIFEST_COLUMNS)]
    for rec in records:
        p = rec.audio_path
        if base_dir is not None:
            p = str(Path(p).resolve().relative_to(Path(base_dir).resolve()))
        lines.append("\t".join(
            [p, rec.speaker_id, rec.gender, " ".join(rec.transcript), rec.split]
        ))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_manifest(path, check_audio=True):
    """Load and validate a manifest; returns a list of UtteranceRecord.

    Unknown columns are ignored. Malformed rows raise ParseError with
    the 1-based line number; records pointing at nonexistent audio raise
    MissingAsset unless ``check_audio`` is disabled.
    """
    path = Path(path)
    if not path.exists():
        raise MissingAsset(path)
    text = path.read_text(encoding="utf-8")
    lines = [ln for ln in text.split("\n") if ln != ""]
    if not lines:
        return []
    header = lines[0].split("\t")
    try:
        col = {name: header.index(name) for name in MANIFEST_COLUMNS}
    except ValueError as exc:
        raise ParseError(f"manifest header missing column: {exc}", line=1) from exc
    base = path.parent
    records = []
    for lineno, raw in enumerate(lines[1:], start=2):
        fields = raw.split("\t")
        if len(fields) < len(header):
            raise ParseError(
                f"expected {len(header)} tab-separated fields, got {len(fields)}",
                line=lineno,
            )
        gender = fields[col["gender"]]
        if gender not in GENDER_TO_LABEL:
            raise ParseError(f"unknown gender {gender!r}", line=lineno)
        split = fields[col["split"]]
        if split not in SPLITS:
            raise ParseError(f"unknown split {split!r}", line=lineno)
        audio = Path(fields[col["audio_path"]])
        if not audio.is_absolute():
            audio = base / audio
        if check_audio and not audio.exists():
            raise MissingAsset(audio)
        records.append(
            UtteranceRecord(
                audio_path=str(audio),
                speaker_id=fields[col["speaker_id"]],
                gender=gender,
                transcript=tuple(t for t in fields[col["transcript"]].split(" ") if t),
                split=split,
            )
        )
    return records


def split_records(records, split):
    if split not in SPLITS:
        raise InvalidInput(f"unknown split {split!r}")
    return [r for r in records if r.split == split]


def sample_batch(records, n, seed):
    """Draw ``n`` records uniformly without replacement.

    Returns (waveforms, gender labels, records). ``n`` equal to the
    corpus size yields a permutation of the corpus.
    """
    if n > len(records):
        raise InvalidInput(f"requested {n} records from a corpus of {len(records)}")
    rng = np.random.default_rng(seed)
    picks = rng.permutation(len(records))[:n]
    chosen = [records[i] for i in picks]
    waves = [r.load_audio() for r in chosen]
    labels = np.array([r.gender_label for r in chosen])
    return waves, labels, chosen


class EpochSampler:
    """Without-replacement batch stream, reshuffled every epoch."""

    def __init__(self, n_records, seed):
        if n_records < 1:
            raise InvalidInput("cannot sample from an empty record list")
        self.n = n_records
        self.rng = np.random.default_rng(seed)
        self._order = self.rng.permutation(self.n)
        self._pos = 0

    def next_batch(self, size):
        if size > self.n:
            raise InvalidInput(f"batch of {size} from {self.n} records")
        if self._pos + size > self.n:
            self._order = self.rng.permutation(self.n)
            self._pos = 0
        out = self._order[self._pos : self._pos + size]
        self._pos += size
        return out

    def state(self):
        return {"order": self._order.tolist(), "pos": self._pos,
                "rng": self.rng.bit_generator.state}

    def restore(self, state):
        self._order = np.asarray(state["order"], dtype=int)
        self._pos = int(state["pos"])
        self.rng.bit_generator.state = state["rng"]
