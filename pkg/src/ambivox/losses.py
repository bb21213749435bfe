"""Loss algebra for the adversarial game.

The generator pays a mean-squared distortion cost between input and
output spectrograms plus an adversarial cross-entropy term weighted by
the dis-utility budget ``epsilon``. The discriminator pays two soft
cross-entropies: ground-truth labels against its prediction on real
data, and the synthetic ambiguous labels against its prediction on
generated data.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidInput

PROB_EPS = 1e-7

GENERATOR_TARGETS = ("ground_truth", "ambiguous")


@dataclass(frozen=True)
class LossBreakdown:
    """One loss evaluation: ``total = distortion + epsilon * adversarial``.

    The discriminator side has no distortion term; its two
    cross-entropies are reported in ``real_term``/``fake_term`` and
    summed into ``adversarial`` with an implicit epsilon of 1.
    """

    distortion: float
    adversarial: float
    epsilon: float
    total: float
    real_term: float = 0.0
    fake_term: float = 0.0

    def recompute_total(self):
        return self.distortion + self.epsilon * self.adversarial


def binary_cross_entropy(target, prob):
    """Soft-target cross-entropy with probabilities clamped away from {0, 1}."""
    target = torch.as_tensor(target, dtype=torch.float64) \
        if not torch.is_tensor(target) else target
    prob = torch.as_tensor(prob, dtype=torch.float64) \
        if not torch.is_tensor(prob) else prob
    p = prob.clamp(PROB_EPS, 1.0 - PROB_EPS)
    return (-(target * torch.log(p) + (1.0 - target) * torch.log1p(-p))).mean()


def sample_soft_labels(n, mean=0.5, variance=0.05, seed=None, rng=None, clip=True):
    """Draw ambiguous gender targets from a Gaussian around ``mean``.

    ``variance`` is the distribution's variance (not the standard
    deviation). Draws are clipped to [0.01, 0.99] unless ``clip`` is
    disabled, which exposes the raw draws for distribution checks.
    """
    if n < 1:
        raise InvalidInput("n must be >= 1")
    if variance < 0:
        raise InvalidInput("variance must be non-negative")
    if rng is None:
        rng = np.random.default_rng(seed)
    draws = rng.normal(mean, np.sqrt(variance), size=n)
    if clip:
        draws = np.clip(draws, 0.01, 0.99)
    return draws


def generator_loss_terms(m, m_prime, adv_target, y_fake, epsilon):
    """Torch-graph generator loss: (total, distortion, adversarial)."""
    distortion = ((m - m_prime) ** 2).mean()
    adversarial = binary_cross_entropy(adv_target, y_fake)
    return distortion + epsilon * adversarial, distortion, adversarial


def discriminator_loss_terms(y, y_real, y_noisy, y_fake):
    """Torch-graph discriminator loss: (total, real term, fake term)."""
    real_term = binary_cross_entropy(y, y_real)
    fake_term = binary_cross_entropy(y_noisy, y_fake)
    return real_term + fake_term, real_term, fake_term


def _resolve_target(generator_target, y, y_noisy):
    if generator_target not in GENERATOR_TARGETS:
        raise InvalidInput(
            f"generator_target must be one of {GENERATOR_TARGETS}, "
            f"got {generator_target!r}"
        )
    if generator_target == "ground_truth":
        return y
    if y_noisy is None:
        raise InvalidInput("ambiguous generator target requires y_noisy labels")
    return y_noisy


def generator_loss(m, m_prime, y, y_fake, epsilon,
                   generator_target="ground_truth", y_noisy=None) -> LossBreakdown:
    """Evaluate the generator objective and return the breakdown.

    ``generator_target`` selects whether the adversarial cross-entropy
    compares the discriminator's output on generated data against the
    ground-truth labels or against the ambiguous synthetic labels.
    """
    if not (0.0 <= epsilon <= 1.0):
        raise InvalidInput(f"epsilon must lie in [0, 1], got {epsilon}")
    m_t = torch.as_tensor(np.asarray(m), dtype=torch.float64)
    mp_t = torch.as_tensor(np.asarray(m_prime), dtype=torch.float64)
    if m_t.shape != mp_t.shape:
        raise InvalidInput(
            f"spectrogram shapes differ: {tuple(m_t.shape)} vs {tuple(mp_t.shape)}"
        )
    target = _resolve_target(generator_target, y, y_noisy)
    total, distortion, adversarial = generator_loss_terms(
        m_t, mp_t, np.asarray(target, dtype=np.float64),
        np.asarray(y_fake, dtype=np.float64), epsilon,
    )
    return LossBreakdown(
        distortion=float(distortion),
        adversarial=float(adversarial),
        epsilon=float(epsilon),
        total=float(total),
    )


def discriminator_loss(y, y_real, y_noisy, y_fake) -> LossBreakdown:
    """Evaluate the discriminator objective and return the breakdown."""
    total, real_term, fake_term = discriminator_loss_terms(
        np.asarray(y, dtype=np.float64),
        np.asarray(y_real, dtype=np.float64),
        np.asarray(y_noisy, dtype=np.float64),
        np.asarray(y_fake, dtype=np.float64),
    )
    return LossBreakdown(
        distortion=0.0,
        adversarial=float(total),
        epsilon=1.0,
        total=float(total),
        real_term=float(real_term),
        fake_term=float(fake_term),
    )
