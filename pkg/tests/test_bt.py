import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import expit

from pcsample.bt import (
    BTOptions,
    PCM,
    _gradient,
    _loglik,
    bt_fit,
    bt_fit_batch,
    score_std,
)
from pcsample.errors import ConvergenceError, DisconnectedGraphError, ValidationError

from _oracles import grid_search_bt3

RNG = np.random.default_rng(20240817)


def pcm_from_scores(q, w=None):
    """Noiseless PCM implied by zero-sum scores under the logistic link."""
    q = np.asarray(q, dtype=np.float64)
    p = expit(q[:, None] - q[None, :])
    np.fill_diagonal(p, 0.5)
    iu = np.triu_indices(q.size, k=1)
    p[(iu[1], iu[0])] = 1.0 - p[iu]
    return PCM(p=p, w=w)


class TestPCMValidation:
    def test_complement_violation(self):
        p = np.array([[0.5, 0.6], [0.5, 0.5]])
        with pytest.raises(ValidationError, match="complement"):
            PCM(p=p)

    def test_negative_weight(self):
        p = np.full((2, 2), 0.5)
        with pytest.raises(ValidationError, match="non-negative"):
            PCM(p=p, w=np.array([[0, -1], [-1, 0]]))

    def test_asymmetric_weight(self):
        p = np.full((2, 2), 0.5)
        with pytest.raises(ValidationError, match="symmetric"):
            PCM(p=p, w=np.array([[0, 1], [2, 0]]))

    def test_too_small(self):
        with pytest.raises(ValidationError, match="at least 2"):
            PCM(p=np.array([[0.5]]))

    def test_diagonal_normalized(self):
        p = np.full((3, 3), 0.5)
        p[0, 0] = 0.9
        pcm = PCM(p=p)
        assert pcm.p[0, 0] == 0.5
        assert np.all(np.diag(pcm.w) == 0.0)


class TestBTFit:
    def test_all_half_gives_zeros(self):
        pcm = PCM(p=np.full((3, 3), 0.5))
        result = bt_fit(pcm)
        assert np.allclose(result.q, 0.0)
        assert result.iterations == 0
        assert result.converged

    def test_two_item_closed_form(self):
        pcm = PCM(p=np.array([[0.5, 0.7310586], [1 - 0.7310586, 0.5]]))
        result = bt_fit(pcm)
        assert result.q[0] - result.q[1] == pytest.approx(1.0, abs=1e-4)

    def test_matches_grid_search_oracle(self):
        for _ in range(5):
            q_true = RNG.uniform(-1.5, 1.5, 3)
            q_true -= q_true.mean()
            pcm = pcm_from_scores(q_true)
            fitted = bt_fit(pcm).q
            oracle = grid_search_bt3(pcm.p, pcm.w)
            assert np.max(np.abs(fitted - oracle)) <= 0.02

    def test_zero_sum(self):
        pcm = pcm_from_scores([1.2, -0.3, -0.9])
        assert abs(bt_fit(pcm).q.sum()) <= 1e-9

    def test_recovery_noiseless(self):
        q_true = np.array([1.5, 0.4, -0.2, -0.7, -1.0])
        result = bt_fit(pcm_from_scores(q_true))
        assert np.max(np.abs(result.q - q_true)) <= 1e-6

    def test_monotone_consistency(self):
        p = np.array(
            [
                [0.5, 0.7, 0.8],
                [0.3, 0.5, 0.6],
                [0.2, 0.4, 0.5],
            ]
        )
        q = bt_fit(PCM(p=p)).q
        assert q[0] > q[1] > q[2]

    def test_permutation_equivariance(self):
        q_true = RNG.uniform(-1, 1, 5)
        q_true -= q_true.mean()
        pcm = pcm_from_scores(q_true)
        base = bt_fit(pcm).q
        perm = RNG.permutation(5)
        permuted = PCM(p=pcm.p[np.ix_(perm, perm)], w=pcm.w[np.ix_(perm, perm)])
        assert np.allclose(bt_fit(permuted).q, base[perm], atol=1e-9)

    def test_likelihood_ascent(self):
        q_true = RNG.uniform(-2, 2, 6)
        pcm = pcm_from_scores(q_true - q_true.mean())
        trace = bt_fit(pcm).loglik_trace
        # Non-decreasing up to float resolution (flat steps near the
        # optimum may round a few ulp downward).
        slack = 1e-12 * max(1.0, max(abs(v) for v in trace))
        assert all(b >= a - slack for a, b in zip(trace, trace[1:]))

    def test_gradient_matches_finite_differences(self):
        pcm = pcm_from_scores(RNG.uniform(-1, 1, 4))
        p = np.clip(pcm.p, 1e-4, 1 - 1e-4)
        np.fill_diagonal(p, 0.5)
        w = pcm.w
        h = 1e-5
        for _ in range(10):
            q = RNG.uniform(-2, 2, 4)
            analytic = _gradient(q, p, w)
            numeric = np.empty(4)
            for k in range(4):
                qp, qm = q.copy(), q.copy()
                qp[k] += h
                qm[k] -= h
                numeric[k] = (_loglik(qp, p, w) - _loglik(qm, p, w)) / (2 * h)
            scale = np.maximum(np.abs(analytic), 1e-8)
            assert np.max(np.abs(analytic - numeric) / scale) <= 1e-6

    def test_disconnected_graph(self):
        p = np.full((4, 4), 0.5)
        w = np.zeros((4, 4))
        w[0, 1] = w[1, 0] = 1.0
        w[2, 3] = w[3, 2] = 1.0
        with pytest.raises(DisconnectedGraphError) as excinfo:
            bt_fit(PCM(p=p, w=w))
        assert excinfo.value.components == ((0, 1), (2, 3))

    def test_no_weight(self):
        pcm = PCM(p=np.full((3, 3), 0.5), w=np.zeros((3, 3)))
        with pytest.raises(ValidationError, match="no positive"):
            bt_fit(pcm)

    def test_non_convergence_carries_iterate(self):
        pcm = pcm_from_scores([2.0, -0.5, -1.5])
        with pytest.raises(ConvergenceError) as excinfo:
            bt_fit(pcm, BTOptions(max_iter=1, tol=1e-12))
        assert excinfo.value.last_q is not None
        assert excinfo.value.last_q.shape == (3,)

    def test_warm_start_same_solution(self):
        pcm = pcm_from_scores([0.8, 0.1, -0.9])
        cold = bt_fit(pcm)
        warm = bt_fit(pcm, q0=np.array([0.7, 0.2, -0.9]))
        assert np.allclose(cold.q, warm.q, atol=1e-7)


class TestScoreStd:
    def test_symmetric_pcm_equal_stds(self):
        result = bt_fit(PCM(p=np.full((4, 4), 0.5)))
        stds = score_std(result)
        assert np.max(stds) - np.min(stds) <= 1e-9

    def test_two_item_analytic(self):
        result = bt_fit(PCM(p=np.full((2, 2), 0.5)))
        var_diff = result.cov[0, 0] + result.cov[1, 1] - 2 * result.cov[0, 1]
        # 1 / (w * logistic'(0)) with the 1e-6 Laplace ridge folded in.
        assert var_diff == pytest.approx(4.0, abs=1e-4)
        assert score_std(result)[0] == pytest.approx(1.0, abs=1e-6)

    def test_doubling_weights_shrinks_std(self):
        q_true = np.array([0.6, -0.1, -0.5])
        base = score_std(bt_fit(pcm_from_scores(q_true)))
        doubled = score_std(bt_fit(pcm_from_scores(q_true, w=2 * np.ones((3, 3)))))
        assert np.allclose(doubled / base, 1 / math.sqrt(2), atol=1e-6)

    def test_large_uniform_matrix_std(self):
        # Complete 16-image graph, all p = 0.5, w = 1: the Laplacian has
        # eigenvalue 4 off the flat direction, so per-image variance is
        # (15/16)/4.  Regression guard for the pinv null-space cutoff.
        result = bt_fit(PCM(p=np.full((16, 16), 0.5)))
        expected = math.sqrt(0.25 * 15 / 16)
        assert score_std(result)[0] == pytest.approx(expected, abs=1e-6)

    def test_covariance_properties(self):
        pcm = pcm_from_scores(RNG.uniform(-1, 1, 5))
        result = bt_fit(pcm)
        assert np.max(np.abs(result.cov - result.cov.T)) <= 1e-9
        assert np.min(np.linalg.eigvalsh(result.cov)) >= -1e-9
        assert np.all(np.isfinite(score_std(result)))


class TestBatch:
    def test_empty(self):
        assert bt_fit_batch([]) == []

    def test_single_symmetric(self):
        results = bt_fit_batch([PCM(p=np.full((3, 3), 0.5))])
        assert len(results) == 1
        assert np.allclose(results[0].q, 0.0)

    def test_matches_sequential_bitwise(self):
        pcms = [pcm_from_scores(RNG.uniform(-1, 1, 4)) for _ in range(4)]
        batch = bt_fit_batch(pcms)
        for pcm, from_batch in zip(pcms, batch):
            single = bt_fit(pcm)
            assert np.array_equal(single.q, from_batch.q)
            assert np.array_equal(single.cov, from_batch.cov)

    def test_error_carries_index(self):
        good = PCM(p=np.full((3, 3), 0.5))
        bad = PCM(p=np.full((3, 3), 0.5), w=np.zeros((3, 3)))
        with pytest.raises(ValidationError, match=r"pcm\[1\]"):
            bt_fit_batch([good, bad])


@settings(max_examples=20)
@given(st.lists(st.floats(-2, 2), min_size=3, max_size=6))
def test_recovery_property(qs):
    q_true = np.asarray(qs, dtype=np.float64)
    q_true -= q_true.mean()
    result = bt_fit(pcm_from_scores(q_true))
    assert np.max(np.abs(result.q - q_true)) <= 1e-6
