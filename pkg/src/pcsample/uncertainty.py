"""Model-uncertainty statistics from stochastic predictor passes.

A real deployment runs a dropout-enabled quality predictor many times per
image and summarizes the spread of the implied preference probabilities.
At desk scale the predictor is replaced by ``SyntheticWorld``: known true
qualities plus a per-image systematic bias (epistemic error, fixed per
world) and per-pass jitter (the dropout stand-in).  External predictor
ensembles are ingested through the same per-pass (mu, sigma) interface so
the difference-distribution math always runs inside this package.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rng
from .bt import PCM
from .errors import ValidationError
from .preference import (
    SIGMA_FLOOR,
    QualityEstimate,
    std_normal_cdf_array,
)


@dataclass(frozen=True)
class PassSeries:
    """Preference probabilities for one pair, one entry per forward pass."""

    reference_id: str
    i: int
    j: int
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 1 or values.size < 2:
            raise ValidationError("a pass series needs at least 2 passes")
        if np.any(values < 0.0) or np.any(values > 1.0) or not np.all(np.isfinite(values)):
            raise ValidationError("pass values must lie in [0, 1]")
        values.flags.writeable = False
        object.__setattr__(self, "values", values)


@dataclass(frozen=True)
class EnsembleSummary:
    """Mean and population variance of a pair's pass probabilities."""

    mu_m: float
    var_m: float
    n_passes: int

    def __post_init__(self):
        if not (-1e-12 <= self.mu_m <= 1.0 + 1e-12):
            raise ValidationError(f"mu_m must lie in [0, 1], got {self.mu_m}")
        if not (-1e-12 <= self.var_m <= 0.25 + 1e-12):
            raise ValidationError(f"var_m must lie in [0, 0.25], got {self.var_m}")
        if self.n_passes < 2:
            raise ValidationError("a summary needs at least 2 passes")


def summarize_passes(series: PassSeries) -> EnsembleSummary:
    """Arithmetic mean and population (divide-by-n) variance of the passes."""
    values = series.values
    if np.ptp(values) == 0.0:  # constant series: exact, no rounding residue
        return EnsembleSummary(mu_m=float(values[0]), var_m=0.0, n_passes=values.size)
    mu = float(np.mean(values))
    var = float(np.var(values))
    return EnsembleSummary(mu_m=mu, var_m=var, n_passes=values.size)


@dataclass(frozen=True)
class WorldReference:
    reference_id: str
    image_ids: tuple
    mu_star: np.ndarray
    sigma_star: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        for name in ("mu_star", "sigma_star", "bias"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (len(self.image_ids),):
                raise ValidationError(
                    f"{name} must have one entry per image in {self.reference_id!r}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"{name} must be finite in {self.reference_id!r}")
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if np.any(self.sigma_star <= 0.0):
            raise ValidationError(f"sigma_star must be > 0 in {self.reference_id!r}")

    @property
    def n_images(self) -> int:
        return len(self.image_ids)


@dataclass(frozen=True)
class SyntheticWorld:
    """Ground-truth qualities plus the noise model of a synthetic predictor."""

    references: tuple
    noise_mu: float
    noise_sigma: float
    noise_pass: float
    seed: int

    def __post_init__(self):
        if not self.references:
            raise ValidationError("a world needs at least one reference")
        for scale in (self.noise_mu, self.noise_sigma, self.noise_pass):
            if scale < 0.0 or not math.isfinite(scale):
                raise ValidationError("noise scales must be finite and >= 0")

    @classmethod
    def generate(
        cls,
        n_refs: int,
        images_per_ref: int,
        noise_mu: float,
        noise_sigma: float,
        noise_pass: float,
        seed: int,
        mu_range: float = 3.0,
        sigma_bounds: tuple = (0.7, 1.3),
    ) -> "SyntheticWorld":
        """Sample a fresh world: uniform quality means, mild quality spreads.

        The default mu_range/sigma_bounds were fixed by
        ``scripts/calibrate_world.py`` so that budget-0 prediction quality
        lands in a useful range under the default noise scales.
        """
        if n_refs < 1 or images_per_ref < 2:
            raise ValidationError("need at least 1 reference and 2 images each")
        refs = []
        for r in range(n_refs):
            g = rng.stream(seed, "truth", r)
            mu_star = g.uniform(0.0, mu_range, images_per_ref)
            sigma_star = g.uniform(sigma_bounds[0], sigma_bounds[1], images_per_ref)
            bias = rng.stream(seed, "bias", r).normal(0.0, noise_mu, images_per_ref)
            refs.append(
                WorldReference(
                    reference_id=f"ref{r:03d}",
                    image_ids=tuple(f"img{k:03d}" for k in range(images_per_ref)),
                    mu_star=mu_star,
                    sigma_star=sigma_star,
                    bias=bias,
                )
            )
        return cls(
            references=tuple(refs),
            noise_mu=noise_mu,
            noise_sigma=noise_sigma,
            noise_pass=noise_pass,
            seed=seed,
        )

    @classmethod
    def from_truth(cls, truths, noise_mu, noise_sigma, noise_pass, seed) -> "SyntheticWorld":
        """Rebuild a world from stored truths; biases re-derive from the seed."""
        refs = []
        for r, (reference_id, image_ids, mu_star, sigma_star) in enumerate(truths):
            bias = rng.stream(seed, "bias", r).normal(0.0, noise_mu, len(image_ids))
            refs.append(
                WorldReference(
                    reference_id=reference_id,
                    image_ids=tuple(image_ids),
                    mu_star=np.asarray(mu_star, dtype=np.float64),
                    sigma_star=np.asarray(sigma_star, dtype=np.float64),
                    bias=bias,
                )
            )
        return cls(
            references=tuple(refs),
            noise_mu=noise_mu,
            noise_sigma=noise_sigma,
            noise_pass=noise_pass,
            seed=seed,
        )


def deterministic_estimate(world: SyntheticWorld, ref_index: int, k: int) -> QualityEstimate:
    """Jitter-free prediction: true quality shifted by the systematic bias."""
    ref = world.references[ref_index]
    return QualityEstimate(
        image_id=ref.image_ids[k],
        mu=float(ref.mu_star[k] + ref.bias[k]),
        sigma=max(float(ref.sigma_star[k]), SIGMA_FLOOR),
    )


def synthetic_pass(
    world: SyntheticWorld, index: tuple, generator: np.random.Generator
) -> QualityEstimate:
    """One stochastic forward pass for image ``index = (ref_index, k)``.

    Draws two standard normals from ``generator`` (mu jitter, then sigma
    jitter), so a sequence of calls against one stream is reproducible.
    """
    ref_index, k = index
    ref = world.references[ref_index]
    g, h = generator.standard_normal(2)
    mu = float(ref.mu_star[k] + ref.bias[k] + g * world.noise_pass)
    sigma = float(ref.sigma_star[k] * math.exp(h * world.noise_sigma))
    return QualityEstimate(image_id=ref.image_ids[k], mu=mu, sigma=max(sigma, SIGMA_FLOOR))


def reference_pass_estimates(
    world: SyntheticWorld,
    ref_index: int,
    n_passes: int,
    master_seed: int,
    namespace: tuple = (),
):
    """All pass estimates for one reference: arrays of shape (passes, images).

    Pass p draws from the stream named (*namespace, "pass", ref_index, p),
    consuming two normals per image in image order, identical to calling
    ``synthetic_pass`` image by image against that stream.
    """
    ref = world.references[ref_index]
    k = ref.n_images
    mus = np.empty((n_passes, k))
    sigmas = np.empty((n_passes, k))
    for p in range(n_passes):
        g = rng.stream(master_seed, *namespace, "pass", ref_index, p)
        draws = g.standard_normal((k, 2))
        mus[p] = ref.mu_star + ref.bias + draws[:, 0] * world.noise_pass
        sigmas[p] = np.maximum(
            ref.sigma_star * np.exp(draws[:, 1] * world.noise_sigma), SIGMA_FLOOR
        )
    return mus, sigmas


def pair_series(reference_id: str, mus: np.ndarray, sigmas: np.ndarray, i: int, j: int) -> PassSeries:
    """Per-pass preference probabilities of image i over image j."""
    z = (mus[:, i] - mus[:, j]) / np.sqrt(sigmas[:, i] ** 2 + sigmas[:, j] ** 2)
    return PassSeries(reference_id=reference_id, i=i, j=j, values=std_normal_cdf_array(z))


def ensemble_for_dataset(
    source,
    n_passes: int,
    master_seed: int = 0,
    namespace: tuple = (),
):
    """Pass series for every pair of every reference, in deterministic order.

    ``source`` is a ``SyntheticWorld`` or any object with an
    ``iter_pass_arrays(n_passes)`` method (the external-ensemble table).
    Ordering is reference index ascending, then (i, j) with i < j.
    """
    if n_passes < 2:
        raise ValidationError("n_passes must be >= 2")
    series = []
    if isinstance(source, SyntheticWorld):
        arrays = (
            (ref.reference_id, *reference_pass_estimates(source, r, n_passes, master_seed, namespace))
            for r, ref in enumerate(source.references)
        )
    else:
        arrays = source.iter_pass_arrays(n_passes)
    for reference_id, mus, sigmas in arrays:
        k = mus.shape[1]
        for i in range(k):
            for j in range(i + 1, k):
                series.append(pair_series(reference_id, mus, sigmas, i, j))
    return series


def true_pcm(world: SyntheticWorld, ref_index: int) -> PCM:
    """Ground-truth preference matrix of one reference (unit weights)."""
    ref = world.references[ref_index]
    mu = ref.mu_star
    var = ref.sigma_star**2
    z = (mu[:, None] - mu[None, :]) / np.sqrt(var[:, None] + var[None, :])
    p = std_normal_cdf_array(z)
    np.fill_diagonal(p, 0.5)
    # Enforce the complement identity exactly despite rounding.
    iu = np.triu_indices(ref.n_images, k=1)
    p[(iu[1], iu[0])] = 1.0 - p[iu]
    return PCM(p=p, w=np.ones_like(p))
