import numpy as np
import pytest
from scipy.special import expit

from pcsample import rng
from pcsample.bt import PCM, bt_fit
from pcsample.errors import NumericalError, ValidationError
from pcsample.selection import (
    PairRecord,
    SelectionPlan,
    eic_score,
    mvn_kl,
    normalize_model_uncertainty,
    rank_pairs,
    select_budget,
)
from pcsample.uncertainty import EnsembleSummary

from _oracles import eic_oracle_ranking, kl_gauss_1d

RNG = np.random.default_rng(31415)


def record(ref="r0", i=0, j=1, var_ab=1.0, mu_m=0.6, var_m=0.02, norm=None):
    return PairRecord(
        reference_id=ref,
        i=i,
        j=j,
        var_ab=var_ab,
        summary=EnsembleSummary(mu_m=mu_m, var_m=var_m, n_passes=8),
        var_m_norm=norm,
    )


def records_with_var_m(values, ref="r0"):
    return [
        record(ref=ref, i=0, j=k + 1, var_m=v, var_ab=1.0 + k) for k, v in enumerate(values)
    ]


class TestNormalize:
    def test_affine_endpoints(self):
        recs = normalize_model_uncertainty(records_with_var_m([0.01, 0.03, 0.05]))
        assert [r.var_m_norm for r in recs] == pytest.approx([0.0, 0.5, 1.0], abs=1e-12)

    def test_all_equal_goes_to_zero(self):
        recs = normalize_model_uncertainty(records_with_var_m([0.02, 0.02, 0.02]))
        assert all(r.var_m_norm == 0.0 for r in recs)

    def test_singleton_goes_to_zero(self):
        recs = normalize_model_uncertainty(records_with_var_m([0.04]))
        assert recs[0].var_m_norm == 0.0

    def test_scope_is_per_reference(self):
        recs = records_with_var_m([0.0, 0.1], ref="a") + records_with_var_m(
            [0.0, 0.2], ref="b"
        )
        normed = normalize_model_uncertainty(recs)
        by_ref = {}
        for r in normed:
            by_ref.setdefault(r.reference_id, []).append(r.var_m_norm)
        assert sorted(by_ref["a"]) == [0.0, 1.0]
        assert sorted(by_ref["b"]) == [0.0, 1.0]


class TestMvnKl:
    def test_identical_is_zero(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        mu = np.array([0.5, -0.5])
        assert mvn_kl(mu, cov, mu, cov) == pytest.approx(0.0, abs=1e-12)

    def test_one_dim_mean_shift(self):
        assert mvn_kl([0.0], [[1.0]], [1.0], [[1.0]]) == pytest.approx(0.5, abs=1e-9)

    def test_one_dim_variance_change(self):
        expected = 0.5 * (0.5 - 1 + np.log(2))
        assert mvn_kl([0.0], [[1.0]], [0.0], [[2.0]]) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.0965736, abs=1e-7)

    def test_matches_closed_form_on_random_1d(self):
        for _ in range(50):
            m0, m1 = RNG.normal(0, 2, 2)
            v0, v1 = RNG.uniform(0.1, 3.0, 2)
            got = mvn_kl([m0], [[v0]], [m1], [[v1]])
            assert got == pytest.approx(kl_gauss_1d(m0, v0, m1, v1), abs=1e-9)

    def test_non_negative_on_random_gaussians(self):
        for _ in range(100):
            k = int(RNG.integers(1, 5))
            a = RNG.normal(size=(k, k))
            b = RNG.normal(size=(k, k))
            cov0 = a @ a.T + 0.05 * np.eye(k)
            cov1 = b @ b.T + 0.05 * np.eye(k)
            kl = mvn_kl(RNG.normal(size=k), cov0, RNG.normal(size=k), cov1)
            assert kl >= -1e-9

    def test_rank_deficient_inputs_use_shared_ridge(self):
        # Zero-sum covariances are singular along the all-ones direction.
        proj = np.eye(3) - np.full((3, 3), 1 / 3)
        cov = proj @ np.diag([1.0, 2.0, 3.0]) @ proj
        kl = mvn_kl(np.zeros(3), cov, np.zeros(3), cov)
        assert kl == pytest.approx(0.0, abs=1e-9)

    def test_asymmetric_covariance_rejected(self):
        with pytest.raises(ValidationError, match="symmetric"):
            mvn_kl([0.0, 0.0], [[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0], np.eye(2))

    def test_dimension_mismatch(self):
        with pytest.raises(ValidationError):
            mvn_kl([0.0], [[1.0]], [0.0, 0.0], np.eye(2))

    def test_singular_after_ridge(self):
        bad = -np.eye(2)
        with pytest.raises(NumericalError, match="ridge"):
            mvn_kl([0.0, 0.0], np.eye(2), [0.0, 0.0], bad)


def four_image_pcm():
    q = np.array([0.9, 0.3, -0.4, -0.8])
    p = expit(q[:, None] - q[None, :])
    p += np.random.default_rng(5).normal(0, 0.05, p.shape)
    p = np.clip(p, 0.02, 0.98)
    iu = np.triu_indices(4, 1)
    p[(iu[1], iu[0])] = 1 - p[iu]
    np.fill_diagonal(p, 0.5)
    return PCM(p=p, w=np.ones((4, 4)))


class TestEicScore:
    def test_zero_step_is_exactly_zero(self):
        pcm = four_image_pcm()
        assert eic_score(pcm, (0, 1), 0.0, 0.0) == 0.0

    def test_positive_with_delta_floor(self):
        for seed in range(5):
            g = np.random.default_rng(seed)
            q = g.normal(0, 0.8, 4)
            p = expit(q[:, None] - q[None, :])
            iu = np.triu_indices(4, 1)
            p[(iu[1], iu[0])] = 1 - p[iu]
            np.fill_diagonal(p, 0.5)
            pcm = PCM(p=p)
            prior = bt_fit(pcm)
            for i, j in zip(*iu):
                score = eic_score(pcm, (int(i), int(j)), 0.0, 0.3, prior=prior)
                assert score > 0.0

    def test_clipping_keeps_probabilities_valid(self):
        p = np.array(
            [
                [0.5, 0.95, 0.9],
                [0.05, 0.5, 0.6],
                [0.1, 0.4, 0.5],
            ]
        )
        pcm = PCM(p=p)
        score = eic_score(pcm, (0, 1), 1.0, 0.3)
        assert score >= 0.0

    def test_ranking_matches_grid_search_oracle(self):
        pcm = four_image_pcm()
        g = np.random.default_rng(5)
        g.normal(0, 0.05, (4, 4))  # consume the draw used to build the PCM
        vals = g.uniform(0, 1, 6)
        iu = np.triu_indices(4, 1)
        var_norms = {
            (int(i), int(j)): float(vals[k]) for k, (i, j) in enumerate(zip(*iu))
        }
        prior = bt_fit(pcm)
        main_scores = {
            pair: eic_score(pcm, pair, vn, 0.3, prior=prior)
            for pair, vn in var_norms.items()
        }
        main_order = sorted(main_scores, key=lambda k: -main_scores[k])
        oracle_order, _ = eic_oracle_ranking(pcm.p, pcm.w, 0.3, var_norms)
        assert main_order == oracle_order


class TestRankPairs:
    def test_data_criterion_descending(self):
        recs = [record(i=0, j=1, var_ab=1.0), record(i=0, j=2, var_ab=3.0)]
        ranked = rank_pairs(recs, "data")
        assert [r.key for r in ranked] == [("r0", 0, 2), ("r0", 0, 1)]

    def test_model_criterion_uses_raw_variance(self):
        recs = [
            record(i=0, j=1, var_m=0.01),
            record(i=0, j=2, var_m=0.09),
            record(i=1, j=2, var_m=0.04),
        ]
        ranked = rank_pairs(recs, "model")
        assert [r.key for r in ranked] == [("r0", 0, 2), ("r0", 1, 2), ("r0", 0, 1)]

    def test_ties_break_lexicographically(self):
        recs = [
            record(ref="b", i=0, j=1, var_ab=2.0),
            record(ref="a", i=0, j=2, var_ab=2.0),
            record(ref="a", i=0, j=1, var_ab=2.0),
        ]
        ranked = rank_pairs(recs, "data")
        assert [r.key for r in ranked] == [("a", 0, 1), ("a", 0, 2), ("b", 0, 1)]

    def test_random_is_seeded(self):
        recs = records_with_var_m([0.01, 0.02, 0.03, 0.04])
        a = rank_pairs(recs, "random", generator=rng.stream(9, "sel"))
        b = rank_pairs(recs, "random", generator=rng.stream(9, "sel"))
        assert [r.key for r in a] == [r.key for r in b]

    def test_random_requires_stream(self):
        with pytest.raises(ValidationError, match="RNG"):
            rank_pairs(records_with_var_m([0.01]), "random")

    def test_unknown_criterion(self):
        with pytest.raises(ValidationError, match="unknown criterion"):
            rank_pairs(records_with_var_m([0.01]), "entropy")

    def test_eic_requires_normalized_records(self):
        pcm = PCM(p=np.full((3, 3), 0.5))
        with pytest.raises(ValidationError, match="normalize"):
            rank_pairs(records_with_var_m([0.01, 0.02]), "eic", pcms={"r0": pcm})

    def test_eic_global_ranking_ignores_reference_order(self):
        def build(ref, qseed):
            g = np.random.default_rng(qseed)
            q = g.normal(0, 0.7, 3)
            p = expit(q[:, None] - q[None, :])
            iu = np.triu_indices(3, 1)
            p[(iu[1], iu[0])] = 1 - p[iu]
            np.fill_diagonal(p, 0.5)
            recs = [
                record(ref=ref, i=0, j=1, var_m=0.01),
                record(ref=ref, i=0, j=2, var_m=0.05),
                record(ref=ref, i=1, j=2, var_m=0.02),
            ]
            return PCM(p=p), recs

        pcm_a, recs_a = build("a", 1)
        pcm_b, recs_b = build("b", 2)
        recs = normalize_model_uncertainty(recs_a + recs_b)
        pcms = {"a": pcm_a, "b": pcm_b}
        fwd = rank_pairs(recs, "eic", pcms=pcms)
        rev = rank_pairs(list(reversed(recs)), "eic", pcms=pcms)
        assert [r.key for r in fwd] == [r.key for r in rev]


class TestSelectBudget:
    def test_rounding(self):
        recs = records_with_var_m(np.linspace(0.01, 0.05, 120).tolist())
        ranked = rank_pairs(recs, "model")
        plan = select_budget(ranked, 0.10, "model")
        assert len(plan.selected) == 12

    def test_zero_budget_empty(self):
        ranked = rank_pairs(records_with_var_m([0.01, 0.02]), "model")
        assert select_budget(ranked, 0.0, "model").selected == ()

    def test_full_budget_everything_in_order(self):
        ranked = rank_pairs(records_with_var_m([0.03, 0.01, 0.02]), "model")
        plan = select_budget(ranked, 1.0, "model")
        assert plan.selected == tuple(r.key for r in ranked)

    def test_invalid_budget(self):
        ranked = rank_pairs(records_with_var_m([0.01]), "model")
        with pytest.raises(ValidationError):
            select_budget(ranked, 1.5, "model")
        with pytest.raises(ValidationError):
            select_budget(ranked, -0.1, "model")

    def test_budget_nesting(self):
        recs = records_with_var_m(np.linspace(0.01, 0.09, 40).tolist())
        ranked = rank_pairs(recs, "model")
        small = select_budget(ranked, 0.25, "model").selected
        large = select_budget(ranked, 0.6, "model").selected
        assert large[: len(small)] == small

    def test_plan_validation(self):
        with pytest.raises(ValidationError, match="unique"):
            SelectionPlan(
                criterion="data",
                budget_fraction=0.5,
                selected=(("a", 0, 1), ("a", 0, 1)),
            )
