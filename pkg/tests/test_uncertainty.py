import numpy as np
import pytest

from pcsample import rng
from pcsample.errors import ValidationError
from pcsample.uncertainty import (
    EnsembleSummary,
    PassSeries,
    SyntheticWorld,
    deterministic_estimate,
    ensemble_for_dataset,
    pair_series,
    reference_pass_estimates,
    summarize_passes,
    synthetic_pass,
    true_pcm,
)


def small_world(noise_mu=0.5, noise_sigma=0.2, noise_pass=0.3, seed=7, refs=1, images=4):
    return SyntheticWorld.generate(refs, images, noise_mu, noise_sigma, noise_pass, seed)


class TestSummarizePasses:
    def test_constant(self):
        s = summarize_passes(PassSeries("r", 0, 1, np.array([0.7, 0.7, 0.7])))
        assert s.mu_m == 0.7
        assert s.var_m == 0.0
        assert s.n_passes == 3

    def test_two_passes_population_variance(self):
        s = summarize_passes(PassSeries("r", 0, 1, np.array([0.4, 0.6])))
        assert s.mu_m == pytest.approx(0.5)
        assert s.var_m == pytest.approx(0.01)
        assert s.n_passes == 2

    def test_all_zero(self):
        s = summarize_passes(PassSeries("r", 0, 1, np.zeros(5)))
        assert (s.mu_m, s.var_m, s.n_passes) == (0.0, 0.0, 5)

    def test_rejects_single_pass(self):
        with pytest.raises(ValidationError):
            PassSeries("r", 0, 1, np.array([0.5]))

    def test_rejects_out_of_range(self):
        with pytest.raises(ValidationError):
            PassSeries("r", 0, 1, np.array([0.5, 1.2]))

    def test_summary_bounds(self):
        with pytest.raises(ValidationError):
            EnsembleSummary(mu_m=0.5, var_m=0.3, n_passes=10)


class TestSyntheticPass:
    def test_zero_noise_returns_truth(self):
        world = small_world(noise_mu=0.0, noise_sigma=0.0, noise_pass=0.0)
        ref = world.references[0]
        est = synthetic_pass(world, (0, 2), rng.stream(1, "x"))
        assert est.mu == ref.mu_star[2]
        assert est.sigma == ref.sigma_star[2]

    def test_jitter_makes_passes_differ(self):
        world = small_world(noise_pass=0.3)
        g = rng.stream(1, "x")
        a = synthetic_pass(world, (0, 0), g)
        b = synthetic_pass(world, (0, 0), g)
        assert a.mu != b.mu

    def test_law_of_large_numbers(self):
        world = small_world(noise_pass=0.3)
        ref = world.references[0]
        g = rng.stream(3, "lln")
        mus = [synthetic_pass(world, (0, 1), g).mu for _ in range(10_000)]
        target = ref.mu_star[1] + ref.bias[1]
        assert abs(np.mean(mus) - target) <= 3 * world.noise_pass / 100

    def test_deterministic_estimate_adds_bias(self):
        world = small_world()
        ref = world.references[0]
        est = deterministic_estimate(world, 0, 3)
        assert est.mu == ref.mu_star[3] + ref.bias[3]
        assert est.sigma == ref.sigma_star[3]


class TestEnsemble:
    def test_pair_count(self):
        world = small_world(images=3)
        series = ensemble_for_dataset(world, n_passes=4, master_seed=0)
        assert len(series) == 3

    def test_perfect_predictor_constant_series(self):
        world = small_world(noise_mu=0.0, noise_sigma=0.0, noise_pass=0.0)
        for series in ensemble_for_dataset(world, n_passes=5, master_seed=0):
            assert summarize_passes(series).var_m == 0.0

    def test_seeded_determinism(self):
        world = small_world()
        a = ensemble_for_dataset(world, n_passes=6, master_seed=11)
        b = ensemble_for_dataset(world, n_passes=6, master_seed=11)
        assert len(a) == len(b)
        for sa, sb in zip(a, b):
            assert (sa.reference_id, sa.i, sa.j) == (sb.reference_id, sb.i, sb.j)
            assert np.array_equal(sa.values, sb.values)

    def test_ordering(self):
        world = small_world(refs=2, images=3)
        series = ensemble_for_dataset(world, n_passes=3, master_seed=0)
        keys = [(s.reference_id, s.i, s.j) for s in series]
        assert keys == sorted(keys)

    def test_vectorized_matches_scalar_passes(self):
        world = small_world()
        mus, sigmas = reference_pass_estimates(world, 0, 3, master_seed=5, namespace=("ns",))
        for p in range(3):
            g = rng.stream(5, "ns", "pass", 0, p)
            for k in range(world.references[0].n_images):
                est = synthetic_pass(world, (0, k), g)
                assert est.mu == pytest.approx(mus[p, k], abs=0)
                assert est.sigma == pytest.approx(sigmas[p, k], abs=0)

    def test_swap_complementarity(self):
        world = small_world()
        mus, sigmas = reference_pass_estimates(world, 0, 8, master_seed=2)
        fwd = summarize_passes(pair_series("r", mus, sigmas, 0, 2))
        rev = summarize_passes(pair_series("r", mus, sigmas, 2, 0))
        assert rev.mu_m == pytest.approx(1.0 - fwd.mu_m, abs=1e-12)
        assert rev.var_m == pytest.approx(fwd.var_m, abs=1e-12)

    def test_var_vanishes_without_jitter(self):
        world = small_world(noise_pass=0.0, noise_sigma=0.0)
        for series in ensemble_for_dataset(world, n_passes=8, master_seed=1):
            assert summarize_passes(series).var_m < 1e-20

    def test_equal_truth_centers_near_half(self):
        mu_means = []
        for seed in range(100):
            world = SyntheticWorld.from_truth(
                [("ref000", ("a", "b"), [1.0, 1.0], [1.0, 1.0])],
                noise_mu=0.4,
                noise_sigma=0.1,
                noise_pass=0.3,
                seed=seed,
            )
            mus, sigmas = reference_pass_estimates(world, 0, 32, master_seed=seed)
            mu_means.append(summarize_passes(pair_series("r", mus, sigmas, 0, 1)).mu_m)
        assert abs(np.mean(mu_means) - 0.5) <= 0.05

    def test_uncertainty_peaks_for_close_pairs(self):
        # Pairs near 0.5 predicted preference should carry more pass
        # variance than strongly decided pairs.
        world = small_world(refs=4, images=8, noise_pass=0.3, seed=99)
        close, decided = [], []
        for series in ensemble_for_dataset(world, n_passes=64, master_seed=3):
            s = summarize_passes(series)
            if abs(s.mu_m - 0.5) < 0.1:
                close.append(s.var_m)
            elif abs(s.mu_m - 0.5) > 0.4:
                decided.append(s.var_m)
        assert close and decided
        assert np.mean(close) > np.mean(decided)

    def test_rejects_single_pass_request(self):
        with pytest.raises(ValidationError):
            ensemble_for_dataset(small_world(), n_passes=1, master_seed=0)


class TestTruePcm:
    def test_valid_and_symmetric(self):
        world = small_world(images=5)
        pcm = true_pcm(world, 0)
        assert pcm.n == 5
        assert np.allclose(pcm.p + pcm.p.T, 1.0)

    def test_better_image_preferred(self):
        world = SyntheticWorld.from_truth(
            [("ref000", ("a", "b"), [2.0, 0.0], [1.0, 1.0])],
            noise_mu=0.0,
            noise_sigma=0.0,
            noise_pass=0.0,
            seed=0,
        )
        pcm = true_pcm(world, 0)
        assert pcm.p[0, 1] > 0.9
