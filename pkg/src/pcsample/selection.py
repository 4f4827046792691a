"""Ranking of pairs for human evaluation and budget cuts.

Four criteria: descending data uncertainty, descending raw model
uncertainty, descending expected information change (EIC), and a seeded
random shuffle as the baseline.  EIC perturbs one predicted preference up
and down by max(delta, normalized model uncertainty), refits the score
posterior for each perturbation, and sums the KL divergences from the
unperturbed posterior.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .bt import BTOptions, BTResult, PCM, bt_fit
from .errors import NumericalError, ValidationError
from .uncertainty import EnsembleSummary

CRITERIA = ("data", "model", "eic", "random")
KL_RIDGE = 1e-6


@dataclass(frozen=True)
class PairRecord:
    """One candidate pair with its uncertainty measurements."""

    reference_id: str
    i: int
    j: int
    var_ab: float
    summary: EnsembleSummary
    var_m_norm: float | None = None
    eic: float | None = None

    def __post_init__(self):
        if not (0 <= self.i < self.j):
            raise ValidationError(f"pair indices must satisfy 0 <= i < j, got ({self.i}, {self.j})")
        if not (self.var_ab > 0.0 and math.isfinite(self.var_ab)):
            raise ValidationError(f"var_ab must be positive and finite, got {self.var_ab}")
        if self.var_m_norm is not None and not (-1e-12 <= self.var_m_norm <= 1.0 + 1e-12):
            raise ValidationError(f"var_m_norm must lie in [0, 1], got {self.var_m_norm}")
        if self.eic is not None and self.eic < 0.0:
            raise ValidationError(f"eic must be >= 0, got {self.eic}")

    @property
    def key(self):
        return (self.reference_id, self.i, self.j)


@dataclass(frozen=True)
class SelectionPlan:
    """Ordered pairs deferred to human evaluation under one criterion."""

    criterion: str
    budget_fraction: float
    selected: tuple
    seed: int | None = None

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise ValidationError(f"unknown criterion {self.criterion!r}")
        if not (0.0 <= self.budget_fraction <= 1.0):
            raise ValidationError(f"budget must lie in [0, 1], got {self.budget_fraction}")
        if len(set(self.selected)) != len(self.selected):
            raise ValidationError("selected pairs must be unique")
        object.__setattr__(self, "selected", tuple(tuple(s) for s in self.selected))


def normalize_model_uncertainty(records) -> list:
    """Min-max normalize var_m within each reference group.

    A degenerate group (max == min, including singletons) normalizes to
    all zeros; the delta floor in the EIC step then applies uniformly.
    """
    by_ref = {}
    for rec in records:
        by_ref.setdefault(rec.reference_id, []).append(rec)
    out = []
    for rec_group in by_ref.values():
        values = [r.summary.var_m for r in rec_group]
        lo, hi = min(values), max(values)
        span = hi - lo
        for rec in rec_group:
            norm = 0.0 if span == 0.0 else (rec.summary.var_m - lo) / span
            out.append(replace(rec, var_m_norm=min(max(norm, 0.0), 1.0)))
    return out


def _kl_terms(mu0, cov0, mu1, cov1):
    chol = np.linalg.cholesky(cov1)  # raises LinAlgError if not PD
    sign0, logdet0 = np.linalg.slogdet(cov0)
    if sign0 <= 0:
        raise np.linalg.LinAlgError("prior covariance is singular")
    logdet1 = 2.0 * float(np.sum(np.log(np.diag(chol))))
    k = mu0.size
    sol = np.linalg.solve(chol, np.linalg.solve(chol, cov0).T)
    trace = float(np.trace(sol))
    d = mu1 - mu0
    y = np.linalg.solve(chol, d)
    maha = float(y @ y)
    return 0.5 * (trace + maha - k + logdet1 - logdet0)


def _ill_conditioned(cov: np.ndarray) -> bool:
    eigs = np.linalg.eigvalsh(cov)
    if eigs[-1] <= 0.0:
        return True
    return eigs[0] <= 1e-10 * eigs[-1]


def mvn_kl(mu0, cov0, mu1, cov1, ridge: float = KL_RIDGE) -> float:
    """KL divergence between two multivariate normals, in nats.

    Rank-deficient covariances (e.g. zero-sum score posteriors) get the
    same ridge added to both sides; the flat direction then contributes
    nothing.  Well-conditioned inputs are computed without a ridge.
    """
    mu0 = np.asarray(mu0, dtype=np.float64).ravel()
    mu1 = np.asarray(mu1, dtype=np.float64).ravel()
    cov0 = np.atleast_2d(np.asarray(cov0, dtype=np.float64))
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    if mu0.shape != mu1.shape or cov0.shape != cov1.shape or cov0.shape != (mu0.size, mu0.size):
        raise ValidationError("mean/covariance dimensions do not match")
    for name, cov in (("prior", cov0), ("posterior", cov1)):
        if np.any(np.abs(cov - cov.T) > 1e-8):
            raise ValidationError(f"{name} covariance is not symmetric")
    if _ill_conditioned(cov0) or _ill_conditioned(cov1):
        eye = ridge * np.eye(mu0.size)
        cov0 = cov0 + eye
        cov1 = cov1 + eye
    try:
        return _kl_terms(mu0, cov0, mu1, cov1)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(
            f"covariance is singular even after adding ridge {ridge}"
        ) from exc


def _perturbed(pcm: PCM, i: int, j: int, step: float) -> PCM:
    p = pcm.p.copy()
    value = min(max(p[i, j] + step, 0.0), 1.0)
    p[i, j] = value
    p[j, i] = 1.0 - value
    return PCM(p=p, w=pcm.w.copy())


def eic_score(
    pcm: PCM,
    pair: tuple,
    var_m_norm: float,
    delta: float,
    options: BTOptions = BTOptions(),
    prior: BTResult | None = None,
) -> float:
    """Expected information change of deferring one pair to humans."""
    if delta < 0.0:
        raise ValidationError(f"delta must be >= 0, got {delta}")
    i, j = pair
    step = max(delta, var_m_norm)
    if step == 0.0:
        return 0.0  # both perturbations equal the prior matrix exactly
    if prior is None:
        prior = bt_fit(pcm, options)
    total = 0.0
    for sign in (+1.0, -1.0):
        try:
            post = bt_fit(_perturbed(pcm, i, j, sign * step), options, q0=prior.q)
        except Exception as exc:
            label = "+" if sign > 0 else "-"
            if exc.args:
                exc.args = (f"perturbation {label} of pair ({i}, {j}): {exc.args[0]}",) + exc.args[1:]
            raise
        total += mvn_kl(prior.q, prior.cov, post.q, post.cov)
    return max(0.0, total)


def _eic_ranked(records, pcms, delta, options):
    by_ref = {}
    for rec in records:
        if rec.var_m_norm is None:
            raise ValidationError(
                "eic ranking needs normalized model uncertainty; "
                "run normalize_model_uncertainty first"
            )
        by_ref.setdefault(rec.reference_id, []).append(rec)
    out = []
    for reference_id in sorted(by_ref):
        pcm = pcms.get(reference_id) if pcms else None
        if pcm is None:
            raise ValidationError(f"no predicted PCM for reference {reference_id!r}")
        prior = bt_fit(pcm, options)
        for rec in by_ref[reference_id]:
            value = eic_score(pcm, (rec.i, rec.j), rec.var_m_norm, delta, options, prior)
            out.append(replace(rec, eic=value))
    return out


def rank_pairs(
    records,
    criterion: str,
    pcms=None,
    delta: float = 0.3,
    options: BTOptions = BTOptions(),
    generator: np.random.Generator | None = None,
) -> list:
    """Order all pairs by the criterion; ties break on (reference, i, j)."""
    records = list(records)
    if criterion == "data":
        return sorted(records, key=lambda r: (-r.var_ab, r.key))
    if criterion == "model":
        return sorted(records, key=lambda r: (-r.summary.var_m, r.key))
    if criterion == "eic":
        scored = _eic_ranked(records, pcms, delta, options)
        return sorted(scored, key=lambda r: (-r.eic, r.key))
    if criterion == "random":
        if generator is None:
            raise ValidationError("random ranking needs an RNG stream")
        ordered = sorted(records, key=lambda r: r.key)
        perm = generator.permutation(len(ordered))
        return [ordered[k] for k in perm]
    raise ValidationError(f"unknown criterion {criterion!r}")


def select_budget(
    ranked,
    budget_fraction: float,
    criterion: str,
    seed: int | None = None,
) -> SelectionPlan:
    """Cut the ranking at round(budget * total pairs)."""
    if not (0.0 <= budget_fraction <= 1.0):
        raise ValidationError(f"budget must lie in [0, 1], got {budget_fraction}")
    count = int(round(budget_fraction * len(ranked)))
    selected = tuple(rec.key for rec in ranked[:count])
    return SelectionPlan(
        criterion=criterion,
        budget_fraction=budget_fraction,
        selected=selected,
        seed=seed,
    )
