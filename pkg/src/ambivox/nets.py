"""Network definitions for the voice transformer and the attacker suite.

All modules operate on normalized mel spectrograms. Shapes use the
convention (batch, channels, bands, frames) for 2-D nets and
(batch, bands, frames) for the 1-D attacker nets.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F


def _groups(channels):
    return math.gcd(8, channels)


def _conv_block(c_in, c_out, stride=1):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1),
        nn.GroupNorm(_groups(c_out), c_out),
        nn.LeakyReLU(0.2),
    )


class _UpBlock(nn.Module):
    def __init__(self, c_in, c_out, c_skip):
        super().__init__()
        self.up = nn.ConvTranspose2d(c_in, c_out, 4, stride=2, padding=1)
        self.fuse = _conv_block(c_out + c_skip, c_out)

    def forward(self, x, skip=None):
        x = self.up(x)
        if skip is not None:
            x = torch.cat([x, skip], dim=1)
        return self.fuse(x)


class UNetGenerator(nn.Module):
    """Encoder-decoder spectrogram transformer with bottleneck noise.

    The conditioning label enters as a constant extra input channel; the
    noise vector is broadcast over the bottleneck grid and concatenated
    with the deepest encoder features. Output is squashed to (0, 1).
    Frame counts are padded internally to a multiple of 2**depth and
    cropped back, so any T >= 1 is accepted.

    Skip connections are narrowed through 1x1 projections to
    ``skip_channels`` per level. Full-width skips let the network
    collapse to an identity map on small corpora, which defeats the
    privacy objective; a thin skip keeps detail flowing for utility
    while the bulk of the signal must pass the bottleneck.
    """

    def __init__(self, n_bands=80, base_channels=16, depth=4, noise_dim=64,
                 skip_channels=2, bottleneck_channels=None):
        super().__init__()
        if n_bands % (2 ** depth) != 0:
            raise ValueError(f"n_bands must be divisible by {2 ** depth}")
        self.n_bands = n_bands
        self.base_channels = base_channels
        self.depth = depth
        self.noise_dim = noise_dim
        self.skip_channels = skip_channels
        deepest = base_channels * (2 ** (depth - 1))
        self.bottleneck_channels = bottleneck_channels or deepest
        chans = [base_channels * (2 ** i) for i in range(depth)]
        self.encoders = nn.ModuleList()
        c_prev = 2  # mel + conditioning channel
        for c in chans:
            self.encoders.append(_conv_block(c_prev, c, stride=2))
            c_prev = c
        self.skip_projs = nn.ModuleList()
        for i in range(depth - 1):
            self.skip_projs.append(
                nn.Conv2d(chans[i], skip_channels, 1) if skip_channels > 0
                else nn.Identity()
            )
        self.bottleneck = _conv_block(c_prev + noise_dim, self.bottleneck_channels)
        c_prev = self.bottleneck_channels
        self.decoders = nn.ModuleList()
        for i in reversed(range(depth)):
            c_out = chans[i - 1] if i > 0 else base_channels
            c_skip = skip_channels if i > 0 else 0
            self.decoders.append(_UpBlock(c_prev, c_out, c_skip))
            c_prev = c_out
        self.head = nn.Conv2d(base_channels, 1, 3, padding=1)

    def forward(self, mel, noise, cond):
        # mel (N,1,B,T), noise (N,noise_dim), cond (N,)
        n, _, bands, t = mel.shape
        mult = 2 ** self.depth
        pad = (mult - t % mult) % mult
        x = F.pad(mel, (0, pad, 0, 0), mode="replicate") if pad else mel
        cond_map = cond.view(n, 1, 1, 1).expand(n, 1, bands, x.shape[-1])
        x = torch.cat([x, cond_map.to(x.dtype)], dim=1)
        skips = []
        for i, enc in enumerate(self.encoders):
            x = enc(x)
            if i < self.depth - 1 and self.skip_channels > 0:
                skips.append(self.skip_projs[i](x))
            else:
                skips.append(None)
        z = noise.view(n, self.noise_dim, 1, 1).expand(
            n, self.noise_dim, x.shape[2], x.shape[3]
        )
        x = self.bottleneck(torch.cat([x, z.to(x.dtype)], dim=1))
        for i, dec in enumerate(self.decoders):
            skip_idx = self.depth - 2 - i
            x = dec(x, skips[skip_idx] if skip_idx >= 0 else None)
        out = torch.sigmoid(self.head(x))
        return out[..., :t]

    def topology(self):
        return {
            "kind": "unet_generator",
            "n_bands": self.n_bands,
            "base_channels": self.base_channels,
            "depth": self.depth,
            "noise_dim": self.noise_dim,
            "skip_channels": self.skip_channels,
            "bottleneck_channels": self.bottleneck_channels,
        }


class Discriminator(nn.Module):
    """Five conv blocks, global average pooling and one linear output.

    Produces the probability that the input spectrogram carries a
    female-coded voice, squashed to the open interval (0, 1).
    """

    def __init__(self, n_bands=80, base_channels=16):
        super().__init__()
        self.n_bands = n_bands
        self.base_channels = base_channels
        c = base_channels
        self.features = nn.Sequential(
            nn.Conv2d(1, c, 5, stride=2, padding=2),
            nn.LeakyReLU(0.2),
            _conv_block(c, 2 * c, stride=2),
            _conv_block(2 * c, 4 * c, stride=2),
            _conv_block(4 * c, 4 * c, stride=2),
            _conv_block(4 * c, 4 * c, stride=1),
        )
        self.classifier = nn.Linear(4 * c, 1)

    def forward(self, mel):
        h = self.features(mel)
        h = h.mean(dim=(2, 3))
        p = torch.sigmoid(self.classifier(h)).squeeze(1)
        return p.clamp(1e-6, 1.0 - 1e-6)

    def topology(self):
        return {
            "kind": "discriminator",
            "n_bands": self.n_bands,
            "base_channels": self.base_channels,
        }


class GenderNet(nn.Module):
    """Gender classifier: five 1-D conv blocks over mel frames.

    Each block is convolution + batch normalization + max pooling; a
    single fully connected output passes through a sigmoid.
    """

    def __init__(self, n_bands=80, channels=48):
        super().__init__()
        blocks = []
        c_in = n_bands
        for _ in range(5):
            blocks += [
                nn.Conv1d(c_in, channels, 5, padding=2),
                nn.BatchNorm1d(channels),
                nn.ReLU(),
                nn.MaxPool1d(2, ceil_mode=True),
            ]
            c_in = channels
        self.blocks = nn.Sequential(*blocks)
        self.out = nn.Linear(channels, 1)

    def forward(self, mel):
        # mel (N, bands, T)
        h = self.blocks(mel).mean(dim=2)
        return torch.sigmoid(self.out(h)).squeeze(1).clamp(1e-6, 1.0 - 1e-6)


class _ResBlock1d(nn.Module):
    def __init__(self, channels):
        super().__init__()
        self.conv1 = nn.Conv1d(channels, channels, 3, padding=1)
        self.bn1 = nn.BatchNorm1d(channels)
        self.conv2 = nn.Conv1d(channels, channels, 3, padding=1)
        self.bn2 = nn.BatchNorm1d(channels)

    def forward(self, x):
        h = F.relu(self.bn1(self.conv1(x)))
        h = self.bn2(self.conv2(h))
        return F.relu(x + h)


class SpeakerEncoderNet(nn.Module):
    """Residual 1-D embedder producing unit-norm speaker vectors."""

    def __init__(self, n_bands=80, channels=64, embed_dim=64):
        super().__init__()
        self.stem = nn.Sequential(
            nn.Conv1d(n_bands, channels, 5, padding=2),
            nn.BatchNorm1d(channels),
            nn.ReLU(),
        )
        self.blocks = nn.ModuleList([_ResBlock1d(channels) for _ in range(4)])
        self.proj = nn.Linear(channels, embed_dim)

    def forward(self, mel):
        h = self.stem(mel)
        for i, block in enumerate(self.blocks):
            h = block(h)
            if i % 2 == 1:
                h = F.max_pool1d(h, 2, ceil_mode=True)
        e = self.proj(h.mean(dim=2))
        return F.normalize(e, dim=1)


class MarginSpeakerHead(nn.Module):
    """Additive-margin cosine classifier used only during training."""

    def __init__(self, embed_dim, n_speakers, scale=16.0, margin=0.2):
        super().__init__()
        self.weight = nn.Parameter(torch.randn(n_speakers, embed_dim) * 0.05)
        self.scale = scale
        self.margin = margin

    def forward(self, embeddings, labels=None):
        cos = embeddings @ F.normalize(self.weight, dim=1).t()
        if labels is None:
            return self.scale * cos
        onehot = F.one_hot(labels, cos.shape[1]).to(cos.dtype)
        return self.scale * (cos - self.margin * onehot)


def init_module(module_factory, seed):
    """Build a module with isolated, reproducible parameter init."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return module_factory()


def state_to_arrays(module):
    return {k: v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def arrays_to_state(module, arrays, prefix=""):
    state = {}
    for key, tensor in module.state_dict().items():
        name = prefix + key
        if name not in arrays:
            raise KeyError(f"checkpoint is missing tensor {name!r}")
        arr = np.asarray(arrays[name])
        if tuple(arr.shape) != tuple(tensor.shape):
            raise KeyError(
                f"tensor {name!r} has shape {tuple(arr.shape)}, "
                f"expected {tuple(tensor.shape)}"
            )
        state[key] = torch.as_tensor(arr, dtype=tensor.dtype)
    module.load_state_dict(state)
    return module
