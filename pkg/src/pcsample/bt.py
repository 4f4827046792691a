"""Bradley-Terry score inference from a pairwise-comparison matrix.

Scores live in log space under the logistic link and are identified by a
zero-sum constraint.  Probability-valued entries are treated as fractional
win counts (p_ij * w_ij), so both raw trial counts and aggregated
probability matrices fit through the same likelihood.  The posterior over
scores is approximated as a Gaussian with the Laplace covariance: the
pseudo-inverse of the ridged negative-log-likelihood Hessian projected
onto the zero-sum subspace.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.special import expit, log_expit

from .errors import ConvergenceError, DisconnectedGraphError, ValidationError

# Entries are clamped away from {0, 1} before fitting; a probability of
# exactly one would push the MLE to infinity.
CLAMP_EPS = 1e-4
HESSIAN_RIDGE = 1e-6


@dataclass(frozen=True)
class PCM:
    """Square pairwise-comparison matrix with judgment weights.

    ``p[i, j]`` is the probability that image i is preferred over image j;
    ``w[i, j]`` is a non-negative effective comparison count.  Diagonals
    are normalized to p = 0.5, w = 0 and ignored by every consumer.
    """

    p: np.ndarray
    w: np.ndarray = None

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim != 2 or p.shape[0] != p.shape[1]:
            raise ValidationError(f"p must be a square matrix, got shape {p.shape}")
        n = p.shape[0]
        if n < 2:
            raise ValidationError(f"a PCM needs at least 2 images, got {n}")
        w = self.w
        w = np.ones((n, n)) if w is None else np.array(w, dtype=np.float64)
        if w.shape != p.shape:
            raise ValidationError(
                f"w shape {w.shape} does not match p shape {p.shape}"
            )
        if not np.all(np.isfinite(p)) or not np.all(np.isfinite(w)):
            raise ValidationError("PCM entries must be finite")
        off = ~np.eye(n, dtype=bool)
        if np.any(p[off] < 0.0) or np.any(p[off] > 1.0):
            raise ValidationError("preference probabilities must lie in [0, 1]")
        comp = np.abs(p + p.T - 1.0)
        if np.any(comp[off] > 1e-9):
            i, j = np.unravel_index(np.argmax(comp * off), comp.shape)
            raise ValidationError(
                f"complement violation at ({i}, {j}): "
                f"p[{i}][{j}]={p[i, j]!r}, p[{j}][{i}]={p[j, i]!r}"
            )
        if np.any(w < 0.0):
            raise ValidationError("judgment weights must be non-negative")
        if np.any(np.abs(w - w.T) > 1e-12):
            raise ValidationError("judgment weights must be symmetric")
        np.fill_diagonal(p, 0.5)
        np.fill_diagonal(w, 0.0)
        p.flags.writeable = False
        w.flags.writeable = False
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.p.shape[0]


@dataclass(frozen=True)
class BTOptions:
    tol: float = 1e-8
    max_iter: int = 200


@dataclass(frozen=True)
class BTResult:
    """Fitted zero-sum log-scores with their Laplace covariance."""

    q: np.ndarray
    cov: np.ndarray
    loglik: float
    iterations: int
    converged: bool
    loglik_trace: tuple = field(repr=False, default=())


def _clamped(p: np.ndarray) -> np.ndarray:
    return np.clip(p, CLAMP_EPS, 1.0 - CLAMP_EPS)


def _loglik(q: np.ndarray, p: np.ndarray, w: np.ndarray) -> float:
    # Summing over ordered (i, j) covers both orientations of each pair.
    d = q[:, None] - q[None, :]
    return float(np.sum(w * p * log_expit(d)))


def _gradient(q: np.ndarray, p: np.ndarray, w: np.ndarray) -> np.ndarray:
    d = q[:, None] - q[None, :]
    return np.sum(w * (p - expit(d)), axis=1)


def _nll_hessian(q: np.ndarray, p: np.ndarray, w: np.ndarray) -> np.ndarray:
    d = q[:, None] - q[None, :]
    s = expit(d)
    a = w * s * (1.0 - s)
    np.fill_diagonal(a, 0.0)
    h = np.diag(a.sum(axis=1)) - a
    return h


def _check_connected(w: np.ndarray) -> None:
    adj = sparse.csr_matrix((w > 0.0).astype(np.int8))
    n_comp, labels = csgraph.connected_components(adj, directed=False)
    if n_comp > 1:
        comps = [np.flatnonzero(labels == c).tolist() for c in range(n_comp)]
        raise DisconnectedGraphError(comps)


def bt_fit(pcm: PCM, options: BTOptions = BTOptions(), q0: np.ndarray | None = None) -> BTResult:
    """Maximum-likelihood scores via damped Newton on the zero-sum subspace.

    Raises ``DisconnectedGraphError`` if the positive-weight comparison
    graph does not connect all images, and ``ConvergenceError`` (carrying
    the last iterate) if the gradient norm fails to reach ``options.tol``
    within ``options.max_iter`` Newton updates.
    """
    n = pcm.n
    w = pcm.w
    if not np.any(w > 0.0):
        raise ValidationError("PCM has no positive off-diagonal weight")
    _check_connected(w)
    p = _clamped(pcm.p)
    np.fill_diagonal(p, 0.5)

    if q0 is None:
        q = np.zeros(n)
    else:
        q = np.asarray(q0, dtype=np.float64).copy()
        q -= q.mean()
    ll = _loglik(q, p, w)
    trace = [ll]
    iterations = 0
    converged = False
    for _ in range(options.max_iter):
        g = _gradient(q, p, w)
        if np.linalg.norm(g) <= options.tol:
            converged = True
            break
        h = _nll_hessian(q, p, w)
        scale = max(h.trace() / n, 1e-8)
        try:
            direction = np.linalg.solve(h + scale * np.full((n, n), 1.0 / n), g)
        except np.linalg.LinAlgError:
            direction = g / (np.max(np.diag(h)) + 1e-12)
        if not np.all(np.isfinite(direction)):
            direction = g / (np.max(np.diag(h)) + 1e-12)
        direction -= direction.mean()

        # Step halving keeps the log-likelihood non-decreasing.  Close to
        # the optimum the improvement drops below float resolution at the
        # likelihood's magnitude; there, accept a step iff the gradient
        # norm contracts instead (Newton still converges quadratically).
        eps = np.finfo(np.float64).eps
        flat_tol = 4.0 * eps * max(1.0, abs(ll))
        grad_norm = np.linalg.norm(g)
        t = 1.0
        accepted = False
        while t >= 1e-12:
            q_new = q + t * direction
            q_new -= q_new.mean()
            ll_new = _loglik(q_new, p, w)
            if ll_new > ll:
                accepted = True
                break
            if ll_new >= ll - flat_tol and np.linalg.norm(
                _gradient(q_new, p, w)
            ) < 0.5 * grad_norm:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # The iterate is the fp-limited optimum when its gradient sits
            # under the resolution bound sqrt(2 * curvature * ulp(|ll|)).
            stall_tol = math.sqrt(2.0 * scale * eps * max(1.0, abs(ll)))
            if grad_norm <= max(options.tol, stall_tol):
                converged = True
            break
        q, ll = q_new, ll_new
        trace.append(ll)
        iterations += 1
    if not converged:
        g = _gradient(q, p, w)
        if np.linalg.norm(g) <= options.tol:
            converged = True
    if not converged:
        raise ConvergenceError(
            f"BT fit did not converge within {options.max_iter} iterations "
            f"(gradient norm {np.linalg.norm(_gradient(q, p, w)):.3e})",
            last_q=q,
            iterations=iterations,
        )

    h = _nll_hessian(q, p, w) + HESSIAN_RIDGE * np.eye(n)
    proj = np.eye(n) - np.full((n, n), 1.0 / n)
    # rcond must sit above the rounding noise of the projected-out direction
    # but below ridge/lambda_max; 1e-10 covers both for any feasible weight.
    cov = np.linalg.pinv(proj @ h @ proj, hermitian=True, rcond=1e-10)
    cov = 0.5 * (cov + cov.T)
    return BTResult(
        q=q,
        cov=cov,
        loglik=ll,
        iterations=iterations,
        converged=converged,
        loglik_trace=tuple(trace),
    )


def score_std(result: BTResult) -> np.ndarray:
    """Per-image posterior standard deviation of the fitted scores."""
    return np.sqrt(np.clip(np.diag(result.cov), 0.0, None))


def bt_fit_batch(pcms, options: BTOptions = BTOptions()):
    """Fit a list of PCMs; equivalent to mapping ``bt_fit`` elementwise."""
    results = []
    for idx, pcm in enumerate(pcms):
        try:
            results.append(bt_fit(pcm, options))
        except Exception as exc:
            exc.batch_index = idx
            if exc.args:
                exc.args = (f"pcm[{idx}]: {exc.args[0]}",) + exc.args[1:]
            raise
    return results
