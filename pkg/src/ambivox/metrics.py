"""Privacy and utility metric algebra plus the evaluation orchestrator.

Raw rates: EER from verification trial scores, GR as gender
classification accuracy, WER as the aggregate Levenshtein word edit
rate. Normalized variants fold the distance to the 50% chance point,
``100 - 2 * |rate - 50|``, so 100 marks full privacy; word accuracy is
``100 - WER`` clamped at zero with the raw WER retained.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .adversaries import TrialPair, build_trials, score_trials
from .corpus import GENDER_TO_LABEL
from .errors import AmbivoxError, InvalidInput

# -- raw metrics -------------------------------------------------------------


def _split_scores(scored_trials):
    if isinstance(scored_trials, tuple) and len(scored_trials) == 2:
        target, nontarget = scored_trials
        return np.asarray(target, float), np.asarray(nontarget, float)
    target, nontarget = [], []
    for t in scored_trials:
        if t.score is None:
            raise InvalidInput("trial list contains unscored trials")
        (target if t.is_same_speaker else nontarget).append(t.score)
    return np.asarray(target, float), np.asarray(nontarget, float)


def compute_eer(scored_trials):
    """Equal error rate in percent from scored verification trials.

    Accepts a list of scored TrialPair or a (target_scores,
    nontarget_scores) tuple. The rate is found by sweeping every
    observed score as an accept-if-greater-or-equal threshold and
    linearly interpolating between the two adjacent operating points
    where the false-acceptance and false-rejection curves cross.
    """
    target, nontarget = _split_scores(scored_trials)
    if len(target) == 0 or len(nontarget) == 0:
        raise InvalidInput(
            "EER needs at least one same-speaker and one different-speaker trial"
        )
    thresholds = np.unique(np.concatenate([target, nontarget]))
    far = [1.0]
    frr = [0.0]
    for t in thresholds:
        far.append(float(np.mean(nontarget >= t)))
        frr.append(float(np.mean(target < t)))
    far.append(0.0)
    frr.append(1.0)
    for k in range(1, len(far)):
        if frr[k] >= far[k]:
            far1, frr1 = far[k - 1], frr[k - 1]
            far2, frr2 = far[k], frr[k]
            denom = (far1 - frr1) - (far2 - frr2)
            lam = 0.0 if denom <= 0 else (far1 - frr1) / denom
            return 100.0 * (far1 + lam * (far2 - far1))
    return 100.0 * far[-1]


def normalized_eer(eer):
    """Fold EER around the 50% chance point; 100 denotes full privacy."""
    if not (0.0 <= eer <= 100.0):
        raise InvalidInput(f"EER must lie in [0, 100], got {eer}")
    return 100.0 - 2.0 * abs(eer - 50.0)


def normalized_gr(gr):
    """Fold gender recognition accuracy around the 50% chance point."""
    if not (0.0 <= gr <= 100.0):
        raise InvalidInput(f"GR must lie in [0, 100], got {gr}")
    return 100.0 - 2.0 * abs(gr - 50.0)


def edit_distance(reference, hypothesis):
    """Minimum word-level edit distance (substitution/insertion/deletion)."""
    ref = list(reference)
    hyp = list(hypothesis)
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, start=1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, start=1):
            cur[j] = min(
                prev[j] + 1,
                cur[j - 1] + 1,
                prev[j - 1] + (0 if r == h else 1),
            )
        prev = cur
    return prev[len(hyp)]


def word_error_rate(reference, hypothesis):
    """WER in percent; may exceed 100 when insertions dominate."""
    ref = list(reference)
    if not ref:
        raise InvalidInput("reference transcript must be non-empty")
    return 100.0 * edit_distance(ref, hypothesis) / len(ref)


def word_accuracy(wer):
    """100 - WER, clamped below at zero (callers keep the raw WER)."""
    if wer < 0:
        raise InvalidInput(f"WER must be non-negative, got {wer}")
    return max(0.0, 100.0 - wer)


# -- report ------------------------------------------------------------------


@dataclass
class MetricsReport:
    """One evaluation run; derived fields re-derivable from raw ones."""

    label: str
    eer: float
    gender_recognition: float
    wer: float
    eer_normalized: float
    gr_normalized: float
    word_accuracy: float
    n_utterances: int = 0
    n_trials: int = 0
    metadata: dict = field(default_factory=dict)
    spectrogram_examples: list = field(default_factory=list)

    @classmethod
    def from_raw(cls, label, eer, gender_recognition, wer, **kwargs):
        return cls(
            label=label,
            eer=eer,
            gender_recognition=gender_recognition,
            wer=wer,
            eer_normalized=normalized_eer(eer),
            gr_normalized=normalized_gr(gender_recognition),
            word_accuracy=word_accuracy(wer),
            **kwargs,
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_dict(json.loads(Path(path).read_text()))


# -- evaluation orchestration -----------------------------------------------


def _tag_stage(stage):
    class _Tagger:
        def __enter__(self):
            return self

        def __exit__(self, exc_type, exc, tb):
            if exc is not None and isinstance(exc, AmbivoxError):
                exc.args = (f"[{stage}] {exc}",)
            return False

    return _Tagger()


def _utterance_seed(seed, index):
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def evaluate(transformer, records, gender_classifier, speaker_verifier,
             transcriber, seed=0, label="run", metadata=None,
             n_spectrogram_examples=2):
    """Run the full attack scenario on the test split of ``records``.

    Transforms every test utterance (identity when ``transformer`` is
    None), then scores gender recognition accuracy, verification EER
    over same/different speaker trials and the aggregate WER of the
    transcriber, and derives the normalized metrics. Deterministic for
    fixed inputs and seed.
    """
    records = list(records)
    test = [r for r in records if r.split == "test"] or records
    if not test:
        raise InvalidInput("no records to evaluate")

    transformed = {}
    originals = {}
    with _tag_stage("transform"):
        for i, rec in enumerate(test):
            x = rec.load_audio()
            originals[rec.audio_path] = x
            if transformer is None:
                transformed[rec.audio_path] = x
            else:
                transformed[rec.audio_path] = transformer.transform(
                    x, seed=_utterance_seed(seed, i)
                )

    with _tag_stage("gender"):
        correct = 0
        for rec in test:
            prob = gender_classifier.predict_proba(transformed[rec.audio_path])
            predicted = 1.0 if prob > 0.5 else 0.0
            correct += int(predicted == GENDER_TO_LABEL[rec.gender])
        gr = 100.0 * correct / len(test)

    with _tag_stage("verification"):
        trials = build_trials(test, seed=seed)
        scored = score_trials(
            speaker_verifier, trials, loader=lambda p: transformed[p]
        )
        eer = compute_eer(scored)

    with _tag_stage("transcription"):
        total_edits = 0
        total_words = 0
        for rec in test:
            hyp = transcriber.predict(transformed[rec.audio_path])
            total_edits += edit_distance(rec.transcript, hyp)
            total_words += len(rec.transcript)
        if total_words == 0:
            raise InvalidInput("no reference words in the evaluation split")
        wer = 100.0 * total_edits / total_words

    examples = []
    if n_spectrogram_examples > 0 and transformer is not None:
        frontend = transformer.frontend
        for rec in test[:n_spectrogram_examples]:
            orig = frontend.mel_spectrogram(originals[rec.audio_path]).values
            trans = frontend.mel_spectrogram(transformed[rec.audio_path]).values
            examples.append({
                "utterance": rec.audio_path,
                "gender": rec.gender,
                "original": np.round(orig.astype(float), 5).tolist(),
                "transformed": np.round(trans.astype(float), 5).tolist(),
            })

    return MetricsReport.from_raw(
        label=label,
        eer=eer,
        gender_recognition=gr,
        wer=wer,
        n_utterances=len(test),
        n_trials=len(scored),
        metadata={"seed": seed, **(metadata or {})},
        spectrogram_examples=examples,
    )
