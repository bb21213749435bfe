"""Parametric formant synthesis for the built-in gendered voice corpus.

Each "word" is a fixed pair of vowels; each vowel is an additive
harmonic source at the speaker's pitch, shaped by three resonances
whose center frequencies scale with the speaker's formant multiplier.
The vocabulary is deliberately small so a template transcriber can
recover transcripts without a real speech recognizer, while pitch and
formant signatures give classifiers a learnable gender/identity signal.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidInput
from .frontend import SAMPLE_RATE, Waveform

# (F1, F2, F3) center frequencies in Hz at formant_shift = 1.0
VOWEL_FORMANTS = {
    "aa": (730.0, 1090.0, 2440.0),
    "iy": (270.0, 2290.0, 3010.0),
    "uw": (300.0, 870.0, 2240.0),
    "eh": (530.0, 1840.0, 2480.0),
    "ao": (570.0, 840.0, 2410.0),
    "ae": (660.0, 1720.0, 2410.0),
    "ah": (640.0, 1190.0, 2390.0),
    "er": (490.0, 1350.0, 1690.0),
}

_FORMANT_GAINS = (1.0, 0.75, 0.4)

# the gap must exceed the 64 ms analysis window so word boundaries show
# up as clean energy dips in the mel frames
VOWEL_SECONDS = 0.115
WORD_GAP_SECONDS = 0.095
EDGE_PAD_SECONDS = 0.04
MAX_HARMONIC_HZ = 7600.0
ASPIRATION_LEVEL = 0.12


def build_vocabulary(vocabulary_size=16):
    """Deterministic list of vowel-pair word tokens, e.g. ``aa+iy``.

    Uses the smallest vowel subset whose pair count covers the request.
    """
    if vocabulary_size < 2:
        raise InvalidInput("vocabulary_size must be >= 2")
    names = list(VOWEL_FORMANTS)
    k = 2
    while k * k < vocabulary_size and k < len(names):
        k += 1
    if k * k < vocabulary_size:
        raise InvalidInput(
            f"vocabulary_size {vocabulary_size} exceeds the {len(names) ** 2} "
            "supported vowel pairs"
        )
    pairs = [f"{a}+{b}" for a in names[:k] for b in names[:k]]
    return pairs[:vocabulary_size]


def word_vowels(token):
    a, _, b = token.partition("+")
    if a not in VOWEL_FORMANTS or b not in VOWEL_FORMANTS:
        raise InvalidInput(f"unknown word token: {token!r}")
    return a, b


def _formant_envelope(freqs, formants, shift):
    """Vocal-tract gain at ``freqs`` for resonances scaled by ``shift``."""
    gain = np.zeros_like(freqs)
    for (f_c, amp) in zip(formants, _FORMANT_GAINS):
        center = f_c * shift
        bandwidth = 60.0 + 0.06 * center
        gain += amp / (1.0 + ((freqs - center) / bandwidth) ** 2)
    return gain


def _vowel_segment(vowel, n_samples, f0_track, phase0, shift, rng, sample_rate):
    """Additive harmonic synthesis of one vowel, continuous in phase.

    A low-level aspiration noise shaped by the same resonances fills the
    spectral envelope between harmonics, which keeps vowel identity
    visible for high-pitch voices whose harmonics sample it sparsely.
    """
    formants = VOWEL_FORMANTS[vowel]
    dt = 1.0 / sample_rate
    inst_phase = phase0 + 2.0 * np.pi * np.cumsum(f0_track) * dt
    f0_mean = float(np.mean(f0_track))
    n_harm = max(1, int(MAX_HARMONIC_HZ / f0_mean))
    h = np.arange(1, n_harm + 1, dtype=np.float64)
    amps = _formant_envelope(h * f0_mean, formants, shift) / h
    seg = np.sin(inst_phase[None, :] * h[:, None]).T @ amps

    white = rng.standard_normal(n_samples)
    freqs = np.fft.rfftfreq(n_samples, dt)
    shaped = np.fft.irfft(
        np.fft.rfft(white) * _formant_envelope(freqs, formants, shift),
        n=n_samples,
    )
    harmonic_rms = np.sqrt(np.mean(seg ** 2)) + 1e-12
    noise_rms = np.sqrt(np.mean(shaped ** 2)) + 1e-12
    seg = seg + shaped * (ASPIRATION_LEVEL * harmonic_rms / noise_rms)

    # raised-cosine edges against clicks at vowel boundaries
    edge = min(int(0.012 * sample_rate), n_samples // 4)
    env = np.ones(n_samples)
    ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(edge) / edge)
    env[:edge] = ramp
    env[-edge:] = ramp[::-1]
    return seg * env, inst_phase[-1]


def synthesize_utterance(words, f0_base, formant_shift, rng,
                         sample_rate=SAMPLE_RATE) -> Waveform:
    """Render a word sequence for one speaker draw.

    ``rng`` drives small per-utterance tempo/pitch perturbations; pass a
    dedicated generator to keep corpus builds reproducible per utterance.
    """
    if not words:
        raise InvalidInput("cannot synthesize an empty word sequence")
    tempo = rng.uniform(0.95, 1.05)
    pitch_jitter = rng.uniform(0.99, 1.01)
    vibrato_hz = rng.uniform(4.5, 6.0)
    vibrato_depth = 0.012
    n_vowels = 2 * len(words)
    total = (
        EDGE_PAD_SECONDS * 2
        + n_vowels * VOWEL_SECONDS * tempo
        + (len(words) - 1) * WORD_GAP_SECONDS
    )
    declination = np.linspace(1.02, 0.98, int(round(total * sample_rate)))

    pieces = [np.zeros(int(round(EDGE_PAD_SECONDS * sample_rate)))]
    cursor = len(pieces[0])
    phase = rng.uniform(0.0, 2.0 * np.pi)
    n_vowel = int(round(VOWEL_SECONDS * tempo * sample_rate))
    n_gap = int(round(WORD_GAP_SECONDS * sample_rate))
    for w, token in enumerate(words):
        for vowel in word_vowels(token):
            t = (cursor + np.arange(n_vowel)) / sample_rate
            contour = declination[np.minimum(cursor + np.arange(n_vowel),
                                             len(declination) - 1)]
            f0_track = (
                f0_base * pitch_jitter * contour
                * (1.0 + vibrato_depth * np.sin(2.0 * np.pi * vibrato_hz * t))
            )
            seg, phase = _vowel_segment(
                vowel, n_vowel, f0_track, phase, formant_shift, rng, sample_rate
            )
            pieces.append(seg)
            cursor += n_vowel
        if w != len(words) - 1:
            pieces.append(np.zeros(n_gap))
            cursor += n_gap
    pieces.append(np.zeros(int(round(EDGE_PAD_SECONDS * sample_rate))))
    samples = np.concatenate(pieces)
    return Waveform(samples, sample_rate).peak_normalized(0.9)
