"""Adversarial training loop and the end-to-end voice transformation.

``AmbiguousVoiceGan`` follows the scikit-learn estimator protocol: all
hyperparameters are constructor arguments (``get_params``/``set_params``
work as usual), ``fit`` consumes utterance records and ``transform``
maps a waveform through mel analysis, the generator and the phase
vocoder back to audio.

Per batch the discriminator is updated once against (real, ground-truth
gender) and (generated, ambiguous label) cross-entropies, then the
generator is updated once against distortion plus the epsilon-weighted
adversarial term. Training is seed-deterministic and resumable from a
serialized train state.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np
import torch
from sklearn.base import BaseEstimator

from .container import read_container, write_container
from .corpus import GENDER_TO_LABEL
from .errors import CheckpointError, DivergenceError, InvalidInput
from .frontend import MelFrontend, MelSpectrogram, Waveform
from .losses import (
    GENERATOR_TARGETS,
    discriminator_loss_terms,
    generator_loss_terms,
    sample_soft_labels,
)
from .nets import (
    Discriminator,
    UNetGenerator,
    arrays_to_state,
    init_module,
    state_to_arrays,
)

CHECKPOINT_KIND = "ambivox-checkpoint"
STATE_KIND = "ambivox-train-state"
FORMAT_VERSION = 1


class AmbiguousVoiceGan(BaseEstimator):
    """Voice transformer trained to suppress gender cues in speech.

    Parameters mirror the training configuration: ``epsilon`` is the
    dis-utility budget weighting the adversarial term, ``label_mean``/
    ``label_variance`` parameterize the synthetic ambiguous-label
    distribution, ``d_z`` is the bottleneck noise size and
    ``generator_target`` picks the adversarial target for the generator
    ("ground_truth" or "ambiguous").
    """

    def __init__(self, epochs=100, batch_size=16, learning_rate=0.001,
                 epsilon=0.001, label_mean=0.5, label_variance=0.05, d_z=64,
                 seed=0, generator_target="ground_truth", crop_frames=128,
                 base_channels=16, disc_channels=16, skip_channels=2,
                 vocoder_iterations=64):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.epsilon = epsilon
        self.label_mean = label_mean
        self.label_variance = label_variance
        self.d_z = d_z
        self.seed = seed
        self.generator_target = generator_target
        self.crop_frames = crop_frames
        self.base_channels = base_channels
        self.disc_channels = disc_channels
        self.skip_channels = skip_channels
        self.vocoder_iterations = vocoder_iterations

    # -- configuration ------------------------------------------------------

    def _validate_config(self):
        if self.epochs < 1:
            raise InvalidInput("epochs must be >= 1")
        if self.batch_size < 1:
            raise InvalidInput("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise InvalidInput("learning_rate must be positive")
        if not (0.0 <= self.epsilon <= 1.0):
            raise InvalidInput("epsilon must lie in [0, 1]")
        if self.generator_target not in GENERATOR_TARGETS:
            raise InvalidInput(
                f"generator_target must be one of {GENERATOR_TARGETS}"
            )
        if self.crop_frames < 16:
            raise InvalidInput("crop_frames must be >= 16")

    @property
    def frontend(self) -> MelFrontend:
        if not hasattr(self, "_frontend"):
            self._frontend = MelFrontend()
        return self._frontend

    # -- training ------------------------------------------------------------

    def _build_models(self):
        self.generator_ = init_module(
            lambda: UNetGenerator(
                n_bands=self.frontend.n_mels,
                base_channels=self.base_channels,
                noise_dim=self.d_z,
                skip_channels=self.skip_channels,
            ),
            self.seed,
        )
        self.discriminator_ = init_module(
            lambda: Discriminator(
                n_bands=self.frontend.n_mels, base_channels=self.disc_channels
            ),
            self.seed + 1,
        )

    def _prepare_mels(self, records):
        mels, labels = [], []
        for rec in records:
            wave = rec.load_audio()
            mels.append(self.frontend.mel_spectrogram(wave).values)
            labels.append(GENDER_TO_LABEL[rec.gender])
        return mels, np.asarray(labels, dtype=np.float64)

    def _crop(self, mel, offset):
        frames = self.crop_frames
        t = mel.shape[1]
        if t >= frames:
            return mel[:, offset : offset + frames]
        out = np.zeros((mel.shape[0], frames), dtype=mel.dtype)
        out[:, :t] = mel
        return out

    def fit(self, records, checkpoint_dir=None, checkpoint_every=10):
        """Train on utterance records; returns self.

        When ``checkpoint_dir`` is given, a checkpoint and a resumable
        train state are written every ``checkpoint_every`` epochs and at
        the end of training.
        """
        self._validate_config()
        records = list(records)
        if not records:
            raise InvalidInput("cannot train on an empty manifest")
        torch.use_deterministic_algorithms(True)

        resuming = getattr(self, "_resume_state", None)
        mels, labels = self._prepare_mels(records)
        n = len(records)

        if resuming is None:
            self._build_models()
            self._rng = np.random.default_rng(self.seed)
            self.loss_history_ = []
            g_opt = torch.optim.Adam(self.generator_.parameters(),
                                     lr=self.learning_rate, betas=(0.9, 0.999))
            d_opt = torch.optim.Adam(self.discriminator_.parameters(),
                                     lr=self.learning_rate, betas=(0.9, 0.999))
            start_epoch = 0
        else:
            g_opt = torch.optim.Adam(self.generator_.parameters(),
                                     lr=self.learning_rate, betas=(0.9, 0.999))
            d_opt = torch.optim.Adam(self.discriminator_.parameters(),
                                     lr=self.learning_rate, betas=(0.9, 0.999))
            _load_optimizer(g_opt, resuming["opt_g"])
            _load_optimizer(d_opt, resuming["opt_d"])
            start_epoch = resuming["epoch"]
            self._resume_state = None

        self.generator_.train()
        self.discriminator_.train()

        for epoch in range(start_epoch, self.epochs):
            order = self._rng.permutation(n)
            sums = {"g_total": 0.0, "distortion": 0.0, "adversarial": 0.0,
                    "d_total": 0.0, "d_real": 0.0, "d_fake": 0.0}
            n_batches = 0
            for b_start in range(0, n, self.batch_size):
                batch_idx = order[b_start : b_start + self.batch_size]
                batch = self._make_batch(mels, labels, batch_idx)
                stats = self._train_step(batch, g_opt, d_opt)
                for key, val in stats.items():
                    if not np.isfinite(val):
                        raise DivergenceError(epoch, n_batches)
                    sums[key] += val
                n_batches += 1
            self.loss_history_.append(
                {k: v / n_batches for k, v in sums.items()} | {"epoch": epoch}
            )
            done = epoch + 1
            if checkpoint_dir is not None and (
                done % checkpoint_every == 0 or done == self.epochs
            ):
                self.save_checkpoint(Path(checkpoint_dir) / "checkpoint.avxc")
                self.save_state(
                    Path(checkpoint_dir) / "state.avxc", g_opt, d_opt, done
                )
        self._g_opt, self._d_opt = g_opt, d_opt
        return self

    def _make_batch(self, mels, labels, batch_idx):
        frames = self.crop_frames
        crops = []
        for i in batch_idx:
            mel = mels[i]
            max_off = max(0, mel.shape[1] - frames)
            offset = int(self._rng.integers(0, max_off + 1))
            crops.append(self._crop(mel, offset))
        m = torch.from_numpy(np.stack(crops)[:, None, :, :].astype(np.float32))
        y = torch.from_numpy(labels[batch_idx].astype(np.float32))
        y_noisy = torch.from_numpy(
            sample_soft_labels(
                len(batch_idx), self.label_mean, self.label_variance,
                rng=self._rng,
            ).astype(np.float32)
        )
        z = torch.from_numpy(
            self._rng.standard_normal((len(batch_idx), self.d_z)).astype(np.float32)
        )
        return m, y, y_noisy, z

    def _train_step(self, batch, g_opt, d_opt):
        m, y, y_noisy, z = batch
        m_prime = self.generator_(m, z, y_noisy)

        # discriminator first, on detached generator output
        y_real = self.discriminator_(m)
        y_fake_d = self.discriminator_(m_prime.detach())
        d_total, d_real, d_fake = discriminator_loss_terms(
            y, y_real, y_noisy, y_fake_d
        )
        d_opt.zero_grad()
        d_total.backward()
        d_opt.step()

        # then the generator, through the updated discriminator
        y_fake = self.discriminator_(m_prime)
        adv_target = y if self.generator_target == "ground_truth" else y_noisy
        g_total, distortion, adversarial = generator_loss_terms(
            m, m_prime, adv_target, y_fake, self.epsilon
        )
        g_opt.zero_grad()
        g_total.backward()
        g_opt.step()

        return {
            "g_total": float(g_total.detach()),
            "distortion": float(distortion.detach()),
            "adversarial": float(adversarial.detach()),
            "d_total": float(d_total.detach()),
            "d_real": float(d_real.detach()),
            "d_fake": float(d_fake.detach()),
        }

    # -- inference ------------------------------------------------------------

    def transform_mel(self, mel: MelSpectrogram, seed=0) -> MelSpectrogram:
        """Run the generator on one spectrogram with inference conditioning."""
        self._require_fitted()
        mel.validate()
        if mel.n_bands != self.frontend.n_mels:
            raise InvalidInput(
                f"expected {self.frontend.n_mels} mel bands, got {mel.n_bands}"
            )
        rng = np.random.default_rng(seed)
        z = torch.from_numpy(rng.standard_normal((1, self.d_z)).astype(np.float32))
        cond = torch.full((1,), 0.5)
        m = torch.from_numpy(mel.values[None, None, :, :].astype(np.float32))
        self.generator_.eval()
        with torch.no_grad():
            out = self.generator_(m, z, cond)[0, 0].numpy()
        self.generator_.train()
        return MelSpectrogram(
            values=np.clip(out, 0.0, 1.0).astype(np.float32),
            frame_hop=mel.frame_hop, fft_size=mel.fft_size,
            sample_rate=mel.sample_rate, stats=mel.stats,
        )

    def transform(self, x: Waveform, seed=0) -> Waveform:
        """Full pipeline: analysis, generation, phase reconstruction."""
        mel = self.frontend.mel_spectrogram(x)
        mel_prime = self.transform_mel(mel, seed=seed)
        return self.frontend.invert_mel(mel_prime, iterations=self.vocoder_iterations)

    def _require_fitted(self):
        if not hasattr(self, "generator_"):
            raise InvalidInput(
                "model is not fitted; call fit() or load a checkpoint"
            )

    # -- persistence ------------------------------------------------------------

    def _tensor_dict(self):
        tensors = {}
        for prefix, module in (("generator.", self.generator_),
                               ("discriminator.", self.discriminator_)):
            for key, arr in state_to_arrays(module).items():
                tensors[prefix + key] = arr
        return tensors

    def save_checkpoint(self, path):
        """Write model parameters plus topology/config metadata."""
        self._require_fitted()
        meta = {
            "kind": CHECKPOINT_KIND,
            "version": FORMAT_VERSION,
            "topology": {
                "generator": self.generator_.topology(),
                "discriminator": self.discriminator_.topology(),
            },
            "config": self.get_params(),
        }
        write_container(path, self._tensor_dict(), meta=meta)

    @classmethod
    def load_checkpoint(cls, path):
        tensors, meta = read_container(path)
        if meta.get("kind") != CHECKPOINT_KIND:
            raise CheckpointError(f"{path} is not a checkpoint")
        if meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint version {meta.get('version')} is not supported"
            )
        est = cls(**meta["config"])
        est._validate_config()
        try:
            est._build_models()
            arrays_to_state(est.generator_, tensors, prefix="generator.")
            arrays_to_state(est.discriminator_, tensors, prefix="discriminator.")
        except KeyError as exc:
            raise CheckpointError(f"incompatible checkpoint: {exc}") from exc
        return est

    def save_state(self, path, g_opt, d_opt, epoch):
        """Write a resumable train state (params, optimizers, RNG, history)."""
        tensors = self._tensor_dict()
        opt_meta = {}
        for name, opt in (("opt_g", g_opt), ("opt_d", d_opt)):
            arrays, meta = _dump_optimizer(opt)
            for key, arr in arrays.items():
                tensors[f"{name}.{key}"] = arr
            opt_meta[name] = meta
        meta = {
            "kind": STATE_KIND,
            "version": FORMAT_VERSION,
            "config": self.get_params(),
            "epoch": int(epoch),
            "rng_state": _jsonable(self._rng.bit_generator.state),
            "loss_history": self.loss_history_,
            "optimizers": opt_meta,
        }
        write_container(path, tensors, meta=meta)

    @classmethod
    def resume(cls, state_path):
        """Restore a training run; a following fit() continues bit-identically."""
        tensors, meta = read_container(state_path)
        if meta.get("kind") != STATE_KIND:
            raise CheckpointError(f"{state_path} is not a train state")
        if meta.get("version") != FORMAT_VERSION:
            raise CheckpointError(
                f"train state version {meta.get('version')} is not supported"
            )
        est = cls(**meta["config"])
        est._validate_config()
        try:
            est._build_models()
            arrays_to_state(est.generator_, tensors, prefix="generator.")
            arrays_to_state(est.discriminator_, tensors, prefix="discriminator.")
        except KeyError as exc:
            raise CheckpointError(f"incompatible train state: {exc}") from exc
        est._rng = np.random.default_rng()
        est._rng.bit_generator.state = meta["rng_state"]
        est.loss_history_ = list(meta["loss_history"])
        est._resume_state = {
            "epoch": int(meta["epoch"]),
            "opt_g": _collect_opt_arrays(tensors, "opt_g", meta["optimizers"]["opt_g"]),
            "opt_d": _collect_opt_arrays(tensors, "opt_d", meta["optimizers"]["opt_d"]),
        }
        return est


def _jsonable(obj):
    """Recursively convert numpy scalars so json can serialize RNG state."""
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def _dump_optimizer(opt):
    """Flatten Adam state to arrays plus JSON-able metadata."""
    state = opt.state_dict()["state"]
    arrays, steps = {}, {}
    for idx, entry in state.items():
        arrays[f"{idx}.exp_avg"] = entry["exp_avg"].numpy()
        arrays[f"{idx}.exp_avg_sq"] = entry["exp_avg_sq"].numpy()
        steps[str(idx)] = float(entry["step"])
    return arrays, {"steps": steps}


def _collect_opt_arrays(tensors, prefix, meta):
    out = {"steps": meta["steps"], "arrays": {}}
    for key, arr in tensors.items():
        if key.startswith(prefix + "."):
            out["arrays"][key[len(prefix) + 1 :]] = arr
    return out


def _load_optimizer(opt, packed):
    state = {}
    for idx_str, step in packed["steps"].items():
        idx = int(idx_str)
        state[idx] = {
            "step": torch.tensor(float(step)),
            "exp_avg": torch.from_numpy(
                np.ascontiguousarray(packed["arrays"][f"{idx}.exp_avg"])
            ),
            "exp_avg_sq": torch.from_numpy(
                np.ascontiguousarray(packed["arrays"][f"{idx}.exp_avg_sq"])
            ),
        }
    sd = opt.state_dict()
    sd["state"] = state
    opt.load_state_dict(sd)


def train_config_defaults():
    return AmbiguousVoiceGan().get_params()


def parse_config_file(path):
    """Parse a flat key=value config; values are coerced to the defaults'
    types and unknown keys are rejected."""
    defaults = train_config_defaults()
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise InvalidInput(f"{path}:{lineno}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in defaults:
            raise InvalidInput(f"{path}:{lineno}: unknown config key {key!r}")
        default = defaults[key]
        try:
            if isinstance(default, bool):
                out[key] = value.lower() in ("1", "true", "yes")
            elif isinstance(default, int):
                out[key] = int(value)
            elif isinstance(default, float):
                out[key] = float(value)
            else:
                out[key] = value
        except ValueError as exc:
            raise InvalidInput(f"{path}:{lineno}: bad value for {key}: {exc}") from exc
    return out


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
