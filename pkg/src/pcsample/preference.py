"""Thurstone-style preference model for image pairs.

Each image carries a Gaussian latent quality (mu, sigma).  The quality
difference of a pair is Gaussian with summed variances; the probability
of preferring A over B is the standard normal CDF of the standardized
difference.  The difference variance is the pair's data uncertainty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import ValidationError

_SQRT2 = math.sqrt(2.0)

# Predictors must never emit a smaller sigma; keeps the CDF argument finite.
SIGMA_FLOOR = 1e-6


@dataclass(frozen=True)
class QualityEstimate:
    """Latent quality of one image relative to its reference."""

    image_id: str | int
    mu: float
    sigma: float

    def __post_init__(self):
        if not (math.isfinite(self.mu) and math.isfinite(self.sigma)):
            raise ValidationError(
                f"quality estimate for {self.image_id!r} must be finite, "
                f"got mu={self.mu}, sigma={self.sigma}"
            )
        if self.sigma <= 0.0:
            raise ValidationError(
                f"sigma must be > 0 for {self.image_id!r}, got {self.sigma}"
            )


@dataclass(frozen=True)
class PairDiff:
    """Gaussian parameters of the quality difference Q(A) - Q(B)."""

    mu_ab: float
    var_ab: float

    def __post_init__(self):
        if not (math.isfinite(self.mu_ab) and math.isfinite(self.var_ab)):
            raise ValidationError("pair difference parameters must be finite")
        if self.var_ab <= 0.0:
            raise ValidationError(f"var_ab must be > 0, got {self.var_ab}")


def std_normal_cdf(z: float) -> float:
    """Standard normal CDF."""
    if not math.isfinite(z):
        raise ValidationError(f"argument must be finite, got {z}")
    return 0.5 * (1.0 + math.erf(z / _SQRT2))


def std_normal_cdf_array(z: np.ndarray) -> np.ndarray:
    """Vectorized standard normal CDF (same formula as the scalar path)."""
    return 0.5 * (1.0 + special.erf(np.asarray(z, dtype=np.float64) / _SQRT2))


def diff_distribution(a: QualityEstimate, b: QualityEstimate) -> PairDiff:
    """Difference distribution of a pair: independent Gaussians subtract."""
    return PairDiff(a.mu - b.mu, a.sigma * a.sigma + b.sigma * b.sigma)


def preference_probability(a: QualityEstimate, b: QualityEstimate) -> float:
    """Probability that A is preferred over B under the difference model."""
    d = diff_distribution(a, b)
    return std_normal_cdf(d.mu_ab / math.sqrt(d.var_ab))


def data_uncertainty(a: QualityEstimate, b: QualityEstimate) -> float:
    """Variance of the pair's quality difference (aleatoric spread)."""
    return diff_distribution(a, b).var_ab


def fidelity_loss(p_true: float, p_hat: float) -> float:
    """Dissimilarity of two preference probabilities, in [0, 1].

    Zero iff the probabilities are equal, one at maximal disagreement,
    symmetric in its arguments.
    """
    for name, p in (("p_true", p_true), ("p_hat", p_hat)):
        if not (0.0 <= p <= 1.0):
            raise ValidationError(f"{name} must lie in [0, 1], got {p}")
    loss = 1.0 - math.sqrt(p_true * p_hat) - math.sqrt((1.0 - p_true) * (1.0 - p_hat))
    # Mathematically >= 0; rounding can leave a few ulp of negative noise.
    return max(0.0, loss)
