"""Waveform <-> normalized mel-spectrogram conversion.

The analysis chain is magnitude STFT -> triangular mel filterbank ->
log compression -> affine map to [0, 1]. Inversion lifts mel magnitudes
back to a linear spectrum with an iterative non-negative least-squares
solve and reconstructs phase with Griffin-Lim style projections, which
stands in for a neural vocoder.

Fixed conventions: 16 kHz mono audio, 1024-point FFT, 256-sample hop,
periodic Hann window, no centering (frames start at sample 0), so a
signal of ``n`` samples yields ``1 + (n - fft_size) // hop`` frames.
"""

from __future__ import annotations

import json
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .container import read_container, write_container
from .errors import InvalidInput, MissingAsset

SAMPLE_RATE = 16000
FFT_SIZE = 1024
FRAME_HOP = 256
N_MELS = 80

# [0, 1] mapping: dB relative to unit mel magnitude, 80 dB dynamic range.
CEILING_DB = 0.0
FLOOR_DB = -80.0

_MAG_EPS = 1e-10


@dataclass
class Waveform:
    """Mono PCM audio. ``samples`` is a float64 vector in [-1, 1]."""

    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise InvalidInput("waveform samples must be one-dimensional")
        if self.sample_rate <= 0:
            raise InvalidInput("sample_rate must be positive")

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def peak_normalized(self, peak=1.0):
        """Scale so the absolute peak equals ``peak`` (no-op on silence)."""
        top = np.max(np.abs(self.samples)) if len(self.samples) else 0.0
        if top == 0.0:
            return Waveform(self.samples.copy(), self.sample_rate)
        return Waveform(self.samples * (peak / top), self.sample_rate)


@dataclass
class NormStats:
    """Affine log-magnitude mapping used for the [0, 1] normalization."""

    floor_db: float = FLOOR_DB
    ceiling_db: float = CEILING_DB

    def to_dict(self):
        return {"floor_db": self.floor_db, "ceiling_db": self.ceiling_db}

    @classmethod
    def from_dict(cls, d):
        return cls(float(d["floor_db"]), float(d["ceiling_db"]))


@dataclass
class MelSpectrogram:
    """Normalized mel magnitudes, shape (bands, frames), values in [0, 1]."""

    values: np.ndarray
    frame_hop: int = FRAME_HOP
    fft_size: int = FFT_SIZE
    sample_rate: int = SAMPLE_RATE
    stats: NormStats = field(default_factory=NormStats)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise InvalidInput("mel values must be a (bands, frames) matrix")

    @property
    def n_bands(self):
        return self.values.shape[0]

    @property
    def n_frames(self):
        return self.values.shape[1]

    def validate(self):
        if not np.all(np.isfinite(self.values)):
            raise InvalidInput("mel spectrogram contains non-finite values")
        if self.values.min() < 0.0 or self.values.max() > 1.0:
            raise InvalidInput("mel spectrogram values must lie in [0, 1]")
        return self


@dataclass
class MelFilterbank:
    """Triangular mel filters, ``matrix`` of shape (n_bands, fft_bins)."""

    matrix: np.ndarray
    band_centers_hz: np.ndarray


def hz_to_mel(f):
    """Mel scale, 2595 * log10(1 + f / 700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    """Inverse of :func:`hz_to_mel`."""
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def design_filterbank(sample_rate=SAMPLE_RATE, fft_size=FFT_SIZE, n_bands=N_MELS,
                      f_min=0.0, f_max=None):
    """Build mel-spaced triangular filters over the rFFT bins.

    Filters are area-normalized (peak 2 / bandwidth) so band responses
    stay comparable across the spectrum.
    """
    if f_max is None:
        f_max = sample_rate / 2.0
    if not (0.0 <= f_min < f_max <= sample_rate / 2.0):
        raise InvalidInput(
            f"need 0 <= f_min < f_max <= sample_rate/2, got [{f_min}, {f_max}]"
        )
    if n_bands < 1:
        raise InvalidInput("n_bands must be positive")
    n_bins = fft_size // 2 + 1
    fft_freqs = np.arange(n_bins) * (sample_rate / fft_size)
    mel_pts = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_bands + 2)
    hz_pts = mel_to_hz(mel_pts)
    matrix = np.zeros((n_bands, n_bins), dtype=np.float64)
    for b in range(n_bands):
        lo, mid, hi = hz_pts[b], hz_pts[b + 1], hz_pts[b + 2]
        rising = (fft_freqs - lo) / (mid - lo)
        falling = (hi - fft_freqs) / (hi - mid)
        tri = np.minimum(rising, falling)
        matrix[b] = np.maximum(0.0, tri) * (2.0 / (hi - lo))
    if np.any(matrix.sum(axis=1) <= 0.0):
        raise InvalidInput(
            "filterbank has empty bands; increase fft_size or widen [f_min, f_max]"
        )
    return MelFilterbank(matrix=matrix, band_centers_hz=hz_pts[1:-1].copy())


def _hann(n):
    # periodic Hann, satisfies COLA at hop = n / 4
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_magnitude(samples, fft_size=FFT_SIZE, hop=FRAME_HOP):
    """Magnitude STFT without centering, normalized to unit sine peak.

    Returns (fft_bins, frames). Requires ``len(samples) >= fft_size``.
    """
    samples = np.asarray(samples, dtype=np.float64)
    n = len(samples)
    if n < fft_size:
        raise InvalidInput(
            f"signal of {n} samples is shorter than one analysis window ({fft_size})"
        )
    n_frames = 1 + (n - fft_size) // hop
    window = _hann(fft_size)
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    frames = samples[idx] * window
    spec = np.abs(np.fft.rfft(frames, axis=1)).T
    return spec * (2.0 / window.sum())


def _stft_complex(samples, fft_size, hop, n_frames):
    window = _hann(fft_size)
    idx = np.arange(fft_size)[None, :] + hop * np.arange(n_frames)[:, None]
    return np.fft.rfft(samples[idx] * window, axis=1).T * (2.0 / window.sum())


def _istft(spec, fft_size, hop):
    """Overlap-add inverse of the normalized rFFT frames."""
    n_frames = spec.shape[1]
    window = _hann(fft_size)
    frames = np.fft.irfft(spec.T * (window.sum() / 2.0), n=fft_size, axis=1)
    frames *= window
    out_len = (n_frames - 1) * hop + fft_size
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    wsq = window ** 2
    for k in range(n_frames):
        out[k * hop : k * hop + fft_size] += frames[k]
        norm[k * hop : k * hop + fft_size] += wsq
    # clamp the WOLA normalizer: exact in the interior (sum is 1.5 for a
    # periodic Hann at quarter hop), short taper instead of a blow-up at
    # the half-window edges
    return out / np.maximum(norm, 0.05)


class MelFrontend:
    """Deterministic waveform <-> mel converter with fixed settings.

    All methods are pure functions of their inputs; instances carry only
    immutable configuration and are safe to share across threads.
    """

    def __init__(self, sample_rate=SAMPLE_RATE, fft_size=FFT_SIZE, frame_hop=FRAME_HOP,
                 n_mels=N_MELS, f_min=0.0, f_max=None, stats=None, nnls_iterations=50):
        self.sample_rate = sample_rate
        self.fft_size = fft_size
        self.frame_hop = frame_hop
        self.n_mels = n_mels
        self.f_min = f_min
        self.f_max = sample_rate / 2.0 if f_max is None else f_max
        self.stats = stats or NormStats()
        self.nnls_iterations = nnls_iterations
        self.filterbank = design_filterbank(
            sample_rate, fft_size, n_mels, self.f_min, self.f_max
        )

    # -- normalization ---------------------------------------------------

    def normalize(self, mel_mag):
        """Log-compress magnitudes and map [floor_db, ceiling_db] to [0, 1]."""
        db = 20.0 * np.log10(np.maximum(mel_mag, _MAG_EPS))
        span = self.stats.ceiling_db - self.stats.floor_db
        return np.clip((db - self.stats.floor_db) / span, 0.0, 1.0)

    def denormalize(self, values):
        """Invert :meth:`normalize`. The floor (value 0) maps to silence."""
        values = np.asarray(values, dtype=np.float64)
        span = self.stats.ceiling_db - self.stats.floor_db
        mag = 10.0 ** ((values * span + self.stats.floor_db) / 20.0)
        return np.where(values <= 0.0, 0.0, mag)

    # -- analysis ---------------------------------------------------------

    def mel_spectrogram(self, x: Waveform) -> MelSpectrogram:
        """Convert a waveform to a normalized (n_mels, T) spectrogram."""
        if len(x.samples) == 0:
            raise InvalidInput("cannot analyse an empty waveform")
        if not np.all(np.isfinite(x.samples)):
            raise InvalidInput("waveform contains non-finite samples")
        if x.sample_rate != self.sample_rate:
            raise InvalidInput(
                f"expected {self.sample_rate} Hz audio, got {x.sample_rate} Hz"
            )
        spec = stft_magnitude(x.samples, self.fft_size, self.frame_hop)
        mel = self.filterbank.matrix @ spec
        return MelSpectrogram(
            values=self.normalize(mel).astype(np.float32),
            frame_hop=self.frame_hop,
            fft_size=self.fft_size,
            sample_rate=self.sample_rate,
            stats=NormStats(self.stats.floor_db, self.stats.ceiling_db),
        )

    # -- synthesis --------------------------------------------------------

    def _mel_to_linear(self, mel_mag):
        """Non-negative least-squares lift via multiplicative updates."""
        W = self.filterbank.matrix
        wt_m = W.T @ mel_mag
        s = np.maximum(wt_m, 1e-12)
        for _ in range(self.nnls_iterations):
            denom = W.T @ (W @ s) + 1e-12
            s *= wt_m / denom
        return s

    def invert_mel(self, m: MelSpectrogram, iterations=64) -> Waveform:
        """Reconstruct audio from a normalized mel spectrogram.

        Deterministic: the initial phase comes from a fixed internal
        seed and is refined by ``iterations`` consistency projections.
        """
        if iterations < 1:
            raise InvalidInput("iterations must be >= 1")
        m.validate()
        mel_mag = self.denormalize(m.values.astype(np.float64))
        lin = self._mel_to_linear(mel_mag)
        n_frames = lin.shape[1]
        rng = np.random.default_rng(0x47AD)
        phase = rng.uniform(-np.pi, np.pi, size=lin.shape)
        samples = _istft(lin * np.exp(1j * phase), self.fft_size, self.frame_hop)
        for _ in range(iterations):
            spec = _stft_complex(samples, self.fft_size, self.frame_hop, n_frames)
            phase = np.angle(spec)
            samples = _istft(lin * np.exp(1j * phase), self.fft_size, self.frame_hop)
        peak = np.max(np.abs(samples))
        if peak > 1.0:
            samples = samples / peak
        return Waveform(samples, self.sample_rate)


# -- persistence ----------------------------------------------------------


def save_mel(path, m: MelSpectrogram):
    """Persist a spectrogram: container with tensor "mel" + JSON sidecar."""
    path = Path(path)
    write_container(
        path,
        {"mel": m.values.astype(np.float32)},
        meta={"kind": "mel", "frame_hop": m.frame_hop, "fft_size": m.fft_size,
              "sample_rate": m.sample_rate},
    )
    sidecar = path.with_suffix(path.suffix + ".json")
    sidecar.write_text(json.dumps(m.stats.to_dict(), sort_keys=True))


def load_mel(path) -> MelSpectrogram:
    path = Path(path)
    tensors, meta = read_container(path)
    sidecar = path.with_suffix(path.suffix + ".json")
    if not sidecar.exists():
        raise MissingAsset(sidecar)
    stats = NormStats.from_dict(json.loads(sidecar.read_text()))
    return MelSpectrogram(
        values=tensors["mel"],
        frame_hop=int(meta["frame_hop"]),
        fft_size=int(meta["fft_size"]),
        sample_rate=int(meta["sample_rate"]),
        stats=stats,
    )


# -- WAV I/O ----------------------------------------------------------------


def write_wav(path, x: Waveform):
    """Write 16-bit signed mono PCM."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pcm = np.clip(np.round(x.samples * 32767.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(x.sample_rate)
        fh.writeframes(pcm.tobytes())


def read_wav(path) -> Waveform:
    """Read a mono 16-bit PCM RIFF file."""
    path = Path(path)
    if not path.exists():
        raise MissingAsset(path)
    with wave.open(str(path), "rb") as fh:
        if fh.getnchannels() != 1:
            raise InvalidInput(f"{path}: expected mono audio")
        if fh.getsampwidth() != 2:
            raise InvalidInput(f"{path}: expected 16-bit PCM")
        rate = fh.getframerate()
        raw = fh.readframes(fh.getnframes())
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32767.0
    return Waveform(samples, rate)
