"""Attacker models and the utility scorer.

Three independent estimators cover the attack surface: a gender
classifier over mel frames, a speaker embedder scored with cosine
similarity on verification trials, and a template-matching transcriber
that recovers word sequences by energy segmentation plus dynamic time
warping. All of them consume only waveforms and labels, never any part
of the privacy transformation, mirroring an attacker without knowledge
of the applied transform.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from sklearn.base import BaseEstimator, ClassifierMixin

from .container import read_container, write_container
from .errors import CheckpointError, InvalidInput
from .frontend import MelFrontend, Waveform, read_wav
from .nets import (
    GenderNet,
    MarginSpeakerHead,
    SpeakerEncoderNet,
    arrays_to_state,
    init_module,
    state_to_arrays,
)

ATTACKER_KIND = "ambivox-attacker"


def _as_waveform(x):
    return x if isinstance(x, Waveform) else Waveform(np.asarray(x))


class _TorchAttacker(BaseEstimator):
    """Shared plumbing: mel features, crops, digests, persistence."""

    _net_attr = "net_"

    @property
    def frontend(self) -> MelFrontend:
        if not hasattr(self, "_frontend"):
            self._frontend = MelFrontend()
        return self._frontend

    def _mel(self, wave):
        return self.frontend.mel_spectrogram(_as_waveform(wave)).values

    def _crop_batch(self, mels, idx, rng, frames):
        out = []
        for i in idx:
            mel = mels[i]
            max_off = max(0, mel.shape[1] - frames)
            off = int(rng.integers(0, max_off + 1))
            crop = mel[:, off : off + frames]
            if crop.shape[1] < frames:
                pad = np.zeros((mel.shape[0], frames), dtype=mel.dtype)
                pad[:, : crop.shape[1]] = crop
                crop = pad
            out.append(crop)
        return torch.from_numpy(np.stack(out).astype(np.float32))

    def _require_fitted(self):
        if not hasattr(self, self._net_attr):
            raise InvalidInput(f"{type(self).__name__} is not fitted")

    def params_digest(self):
        """Stable digest of the trained parameters."""
        self._require_fitted()
        net = getattr(self, self._net_attr)
        digest = hashlib.sha256()
        for key, arr in sorted(state_to_arrays(net).items()):
            digest.update(key.encode())
            digest.update(np.ascontiguousarray(arr).tobytes())
        return digest.hexdigest()

    def _save(self, path, role, extra_tensors=None, extra_meta=None):
        tensors = dict(state_to_arrays(getattr(self, self._net_attr)))
        tensors.update(extra_tensors or {})
        meta = {
            "kind": ATTACKER_KIND,
            "role": role,
            "config": self.get_params(),
            **(extra_meta or {}),
        }
        write_container(path, tensors, meta=meta)


class GenderClassifier(_TorchAttacker, ClassifierMixin):
    """Binary gender classifier trained on mel spectrogram crops."""

    def __init__(self, epochs=30, batch_size=32, learning_rate=1e-3,
                 channels=48, crop_frames=64, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.channels = channels
        self.crop_frames = crop_frames
        self.seed = seed

    def fit(self, waves, y):
        y = np.asarray(y, dtype=np.float64)
        if len(waves) != len(y):
            raise InvalidInput("waves and labels differ in length")
        if len(np.unique(y)) < 2:
            raise InvalidInput("training data must contain both genders")
        torch.use_deterministic_algorithms(True)
        mels = [self._mel(w) for w in waves]
        rng = np.random.default_rng(self.seed)
        self.net_ = init_module(
            lambda: GenderNet(self.frontend.n_mels, self.channels), self.seed
        )
        opt = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate)
        n = len(mels)
        self.accuracy_log_ = []
        self.net_.train()
        for _ in range(self.epochs):
            order = rng.permutation(n)
            correct = 0
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                m = self._crop_batch(mels, idx, rng, self.crop_frames)
                target = torch.from_numpy(y[idx].astype(np.float32))
                prob = self.net_(m)
                loss = F.binary_cross_entropy(prob, target)
                opt.zero_grad()
                loss.backward()
                opt.step()
                correct += int(((prob > 0.5).float() == target).sum())
            self.accuracy_log_.append(correct / n)
        self.net_.eval()
        return self

    def predict_proba(self, wave):
        """Probability that ``wave`` carries a female-coded voice."""
        self._require_fitted()
        self.net_.eval()
        mel = self._mel(wave)
        with torch.no_grad():
            p = self.net_(torch.from_numpy(mel[None].astype(np.float32)))
        return float(p[0])

    def predict(self, wave):
        return 1.0 if self.predict_proba(wave) > 0.5 else 0.0

    def save(self, path):
        self._require_fitted()
        self._save(path, role="gender")

    @classmethod
    def load(cls, path):
        tensors, meta = read_container(path)
        if meta.get("role") != "gender":
            raise CheckpointError(f"{path} is not a gender classifier")
        est = cls(**meta["config"])
        est.net_ = init_module(
            lambda: GenderNet(est.frontend.n_mels, est.channels), est.seed
        )
        arrays_to_state(est.net_, tensors)
        est.net_.eval()
        return est


class SpeakerVerifier(_TorchAttacker):
    """Speaker embedder trained with additive-margin classification.

    ``embed`` produces unit-norm vectors; verification scores are plain
    cosine similarities, so they are symmetric and bounded in [-1, 1].
    """

    _net_attr = "encoder_"

    def __init__(self, epochs=40, batch_size=32, learning_rate=1e-3,
                 channels=64, embed_dim=64, margin=0.2, scale=16.0,
                 crop_frames=64, seed=0):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.channels = channels
        self.embed_dim = embed_dim
        self.margin = margin
        self.scale = scale
        self.crop_frames = crop_frames
        self.seed = seed

    def fit(self, waves, speaker_ids):
        speaker_ids = list(speaker_ids)
        if len(waves) != len(speaker_ids):
            raise InvalidInput("waves and speaker ids differ in length")
        self.speakers_ = sorted(set(speaker_ids))
        if len(self.speakers_) < 2:
            raise InvalidInput("need at least two speakers to train an embedder")
        torch.use_deterministic_algorithms(True)
        index = {s: i for i, s in enumerate(self.speakers_)}
        labels = np.array([index[s] for s in speaker_ids])
        mels = [self._mel(_as_waveform(w).peak_normalized()) for w in waves]
        rng = np.random.default_rng(self.seed)
        self.encoder_ = init_module(
            lambda: SpeakerEncoderNet(
                self.frontend.n_mels, self.channels, self.embed_dim
            ),
            self.seed,
        )
        head = init_module(
            lambda: MarginSpeakerHead(
                self.embed_dim, len(self.speakers_), self.scale, self.margin
            ),
            self.seed + 1,
        )
        opt = torch.optim.Adam(
            list(self.encoder_.parameters()) + list(head.parameters()),
            lr=self.learning_rate,
        )
        n = len(mels)
        self.encoder_.train()
        for _ in range(self.epochs):
            order = rng.permutation(n)
            for start in range(0, n, self.batch_size):
                idx = order[start : start + self.batch_size]
                m = self._crop_batch(mels, idx, rng, self.crop_frames)
                target = torch.from_numpy(labels[idx])
                logits = head(self.encoder_(m), target)
                loss = F.cross_entropy(logits, target)
                opt.zero_grad()
                loss.backward()
                opt.step()
        self.encoder_.eval()
        return self

    def embed(self, wave):
        """Unit-norm speaker vector; input is peak-normalized first."""
        self._require_fitted()
        self.encoder_.eval()
        mel = self._mel(_as_waveform(wave).peak_normalized())
        with torch.no_grad():
            e = self.encoder_(torch.from_numpy(mel[None].astype(np.float32)))
        return e[0].numpy().astype(np.float64)

    def score_pair(self, wave_a, wave_b):
        return float(np.dot(self.embed(wave_a), self.embed(wave_b)))

    def save(self, path):
        self._require_fitted()
        self._save(path, role="speaker", extra_meta={"speakers": self.speakers_})

    @classmethod
    def load(cls, path):
        tensors, meta = read_container(path)
        if meta.get("role") != "speaker":
            raise CheckpointError(f"{path} is not a speaker verifier")
        est = cls(**meta["config"])
        est.speakers_ = list(meta["speakers"])
        est.encoder_ = init_module(
            lambda: SpeakerEncoderNet(
                est.frontend.n_mels, est.channels, est.embed_dim
            ),
            est.seed,
        )
        arrays_to_state(est.encoder_, tensors)
        est.encoder_.eval()
        return est


class TemplateTranscriber(BaseEstimator):
    """Word recognizer: energy segmentation plus DTW template matching.

    Templates are per-word average mel patches learned from transcribed
    utterances whose segment count matches the transcript length.
    """

    def __init__(self, template_frames=16, energy_threshold=0.25,
                 min_segment_frames=4):
        self.template_frames = template_frames
        self.energy_threshold = energy_threshold
        self.min_segment_frames = min_segment_frames

    @property
    def frontend(self) -> MelFrontend:
        if not hasattr(self, "_frontend"):
            self._frontend = MelFrontend()
        return self._frontend

    def _segments(self, mel):
        energy = mel.mean(axis=0)
        peak = float(energy.max(initial=0.0))
        if peak <= 0.0:
            return []
        thresh = max(0.05, self.energy_threshold * peak)
        active = energy > thresh
        segments = []
        start = None
        for t, on in enumerate(active):
            if on and start is None:
                start = t
            elif not on and start is not None:
                if t - start >= self.min_segment_frames:
                    segments.append((start, t))
                start = None
        if start is not None and len(active) - start >= self.min_segment_frames:
            segments.append((start, len(active)))
        return segments

    def _resample(self, patch):
        src = np.linspace(0.0, patch.shape[1] - 1.0, self.template_frames)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, patch.shape[1] - 1)
        frac = src - lo
        return patch[:, lo] * (1.0 - frac) + patch[:, hi] * frac

    def fit(self, waves, transcripts):
        if len(waves) != len(transcripts):
            raise InvalidInput("waves and transcripts differ in length")
        sums, counts = {}, {}
        self.alignment_rate_ = 0.0
        aligned = 0
        for wave, words in zip(waves, transcripts):
            words = tuple(words)
            mel = self.frontend.mel_spectrogram(_as_waveform(wave)).values
            segs = self._segments(mel)
            if len(segs) != len(words) or not words:
                continue
            aligned += 1
            for (a, b), word in zip(segs, words):
                patch = self._resample(mel[:, a:b].astype(np.float64))
                if word in sums:
                    sums[word] += patch
                    counts[word] += 1
                else:
                    sums[word] = patch.copy()
                    counts[word] = 1
        if not sums:
            raise InvalidInput("no utterance segmented cleanly; no templates built")
        self.templates_ = {w: sums[w] / counts[w] for w in sums}
        self.alignment_rate_ = aligned / max(1, len(list(transcripts)))
        return self

    def predict(self, wave):
        """Decode a waveform into a word-token tuple (empty for silence)."""
        if not getattr(self, "templates_", None):
            raise InvalidInput("transcriber has no templates; fit it first")
        mel = self.frontend.mel_spectrogram(_as_waveform(wave)).values
        out = []
        for a, b in self._segments(mel):
            patch = mel[:, a:b].astype(np.float64)
            best, best_cost = None, np.inf
            for word, tpl in self.templates_.items():
                cost = _dtw_distance(patch, tpl)
                if cost < best_cost:
                    best, best_cost = word, cost
            out.append(best)
        return tuple(out)

    def save(self, path):
        if not getattr(self, "templates_", None):
            raise InvalidInput("transcriber has no templates; fit it first")
        tensors = {f"template.{w}": tpl.astype(np.float32)
                   for w, tpl in self.templates_.items()}
        write_container(
            path, tensors,
            meta={"kind": ATTACKER_KIND, "role": "transcriber",
                  "config": self.get_params(),
                  "alignment_rate": self.alignment_rate_},
        )

    @classmethod
    def load(cls, path):
        tensors, meta = read_container(path)
        if meta.get("role") != "transcriber":
            raise CheckpointError(f"{path} is not a transcriber")
        est = cls(**meta["config"])
        est.templates_ = {
            key[len("template."):]: arr.astype(np.float64)
            for key, arr in tensors.items() if key.startswith("template.")
        }
        est.alignment_rate_ = float(meta.get("alignment_rate", 0.0))
        return est


def _dtw_distance(a, b):
    """Average per-step Euclidean frame distance along the best DTW path."""
    # cost matrix between (bands, La) and (bands, Lb)
    diff = a[:, :, None] - b[:, None, :]
    local = np.sqrt((diff ** 2).sum(axis=0))
    la, lb = local.shape
    acc = np.full((la + 1, lb + 1), np.inf)
    acc[0, 0] = 0.0
    steps = np.zeros((la + 1, lb + 1), dtype=int)
    for i in range(1, la + 1):
        for j in range(1, lb + 1):
            options = (acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1])
            k = int(np.argmin(options))
            acc[i, j] = local[i - 1, j - 1] + options[k]
            prev = ((i - 1, j - 1), (i - 1, j), (i, j - 1))[k]
            steps[i, j] = steps[prev] + 1
    return acc[la, lb] / steps[la, lb]


@dataclass(frozen=True)
class TrialPair:
    """One verification trial; ``score`` is filled in by scoring."""

    enroll_path: str
    test_path: str
    is_same_speaker: bool
    score: float | None = None


def build_trials(records, seed=0):
    """All same-speaker pairs plus an equal number of cross-speaker pairs."""
    by_speaker = {}
    for rec in records:
        by_speaker.setdefault(rec.speaker_id, []).append(rec)
    same = []
    for utts in by_speaker.values():
        for a, b in itertools.combinations(utts, 2):
            same.append(TrialPair(a.audio_path, b.audio_path, True))
    if not same:
        raise InvalidInput("need at least one speaker with two utterances")
    rng = np.random.default_rng(seed)
    recs = list(records)
    diff, seen = [], set()
    guard = 0
    while len(diff) < len(same):
        i, j = rng.integers(0, len(recs), size=2)
        guard += 1
        if guard > 200 * len(same):
            raise InvalidInput("could not build enough cross-speaker trials")
        if recs[i].speaker_id == recs[j].speaker_id:
            continue
        key = (min(i, j), max(i, j))
        if key in seen:
            continue
        seen.add(key)
        diff.append(TrialPair(recs[i].audio_path, recs[j].audio_path, False))
    return same + diff


def score_trials(verifier, trials, loader=None):
    """Attach cosine scores to trials; audio comes from ``loader`` (WAV
    files by default, or any mapping-like callable for in-memory audio)."""
    if loader is None:
        loader = read_wav
    cache = {}

    def embed(path):
        if path not in cache:
            cache[path] = verifier.embed(loader(path))
        return cache[path]

    scored = []
    for trial in trials:
        score = float(np.dot(embed(trial.enroll_path), embed(trial.test_path)))
        scored.append(replace(trial, score=score))
    return scored


def save_trials(path, trials):
    """TSV trial list: enroll_path, test_path, label[, score]."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    has_scores = any(t.score is not None for t in trials)
    header = ["enroll_path", "test_path", "label"] + (
        ["score"] if has_scores else []
    )
    lines = ["\t".join(header)]
    for t in trials:
        row = [t.enroll_path, t.test_path, "same" if t.is_same_speaker else "diff"]
        if has_scores:
            row.append("" if t.score is None else repr(t.score))
        lines.append("\t".join(row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_trials(path):
    from .errors import MissingAsset, ParseError

    path = Path(path)
    if not path.exists():
        raise MissingAsset(path)
    lines = [ln for ln in path.read_text(encoding="utf-8").split("\n") if ln]
    if not lines:
        return []
    header = lines[0].split("\t")
    trials = []
    for lineno, raw in enumerate(lines[1:], start=2):
        fields = raw.split("\t")
        if len(fields) < 3:
            raise ParseError("expected at least 3 fields", line=lineno)
        label = fields[2]
        if label not in ("same", "diff"):
            raise ParseError(f"unknown trial label {label!r}", line=lineno)
        score = None
        if len(fields) > 3 and fields[3] != "":
            score = float(fields[3])
        trials.append(TrialPair(fields[0], fields[1], label == "same", score))
    return trials
