"""Simulated shortened subjective tests and their evaluation.

One experiment repetition: run the stochastic predictor ensemble, build
predicted preference matrices, rank pairs per criterion, cut at each
budget, replace the selected entries with ground truth (exact probability
or simulated panel frequencies), fit scores per reference on both the
ground-truth and the mixed matrices, and compare the concatenated score
vectors.  Everything is driven by named RNG streams, so results are
bit-identical for a given master seed regardless of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import rng
from .bt import BTOptions, PCM, bt_fit, score_std
from .errors import DegenerateInputError, ValidationError
from .preference import std_normal_cdf_array
from .selection import (
    CRITERIA,
    PairRecord,
    normalize_model_uncertainty,
    rank_pairs,
    select_budget,
)
from .uncertainty import (
    SyntheticWorld,
    pair_series,
    reference_pass_estimates,
    summarize_passes,
)

FILL_MODES = ("oracle", "empirical")


@dataclass(frozen=True)
class ExperimentConfig:
    criteria: tuple = CRITERIA
    budgets: tuple = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
    fill: str = "empirical"
    subjects: int = 15
    repetitions: int = 25
    n_passes: int = 200
    delta: float = 0.3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "criteria", tuple(self.criteria))
        object.__setattr__(self, "budgets", tuple(float(b) for b in self.budgets))
        for c in self.criteria:
            if c not in CRITERIA:
                raise ValidationError(f"unknown criterion {c!r}")
        if not self.criteria or not self.budgets:
            raise ValidationError("need at least one criterion and one budget")
        for b in self.budgets:
            if not (0.0 <= b <= 1.0):
                raise ValidationError(f"budgets must lie in [0, 1], got {b}")
        if self.fill not in FILL_MODES:
            raise ValidationError(f"fill mode must be one of {FILL_MODES}, got {self.fill!r}")
        if self.subjects < 1:
            raise ValidationError("subjects must be >= 1")
        if self.repetitions < 1:
            raise ValidationError("repetitions must be >= 1")
        if self.n_passes < 2:
            raise ValidationError("n_passes must be >= 2")
        if self.delta < 0.0:
            raise ValidationError("delta must be >= 0")


def _nanless(values):
    return [v for v in values if not math.isnan(v)]


def _mean(values) -> float:
    vals = _nanless(values)
    if not vals:
        return float("nan")
    return math.fsum(vals) / len(vals)


def _std(values) -> float:
    vals = _nanless(values)
    if len(vals) < 2:
        return 0.0 if vals else float("nan")
    m = math.fsum(vals) / len(vals)
    return math.sqrt(math.fsum((v - m) ** 2 for v in vals) / (len(vals) - 1))


@dataclass(frozen=True)
class CellResult:
    """Aggregated outcome for one (criterion, budget) cell."""

    criterion: str
    budget: float
    pairs_selected: int
    trials: int
    plcc: tuple
    srocc: tuple
    rmse: tuple
    score_std: tuple

    @property
    def plcc_mean(self):
        return _mean(self.plcc)

    @property
    def plcc_std(self):
        return _std(self.plcc)

    @property
    def srocc_mean(self):
        return _mean(self.srocc)

    @property
    def srocc_std(self):
        return _std(self.srocc)

    @property
    def rmse_mean(self):
        return _mean(self.rmse)

    @property
    def rmse_std(self):
        return _std(self.rmse)

    @property
    def score_std_mean(self):
        return _mean(self.score_std)

    @property
    def degenerate_reps(self) -> int:
        return sum(1 for v in self.plcc if math.isnan(v))


@dataclass(frozen=True)
class ExperimentResult:
    dataset_id: str
    config: ExperimentConfig
    total_pairs: int
    cells: tuple

    def cell(self, criterion: str, budget: float) -> CellResult:
        for c in self.cells:
            if c.criterion == criterion and abs(c.budget - budget) < 1e-12:
                return c
        raise KeyError((criterion, budget))


def simulate_judgment(p_true: float, generator: np.random.Generator) -> bool:
    """One Bernoulli trial: True means image A was chosen."""
    if not (0.0 <= p_true <= 1.0):
        raise ValidationError(f"p_true must lie in [0, 1], got {p_true}")
    return bool(generator.random() < p_true)


def fill_pcm(
    predicted: PCM,
    pairs,
    truth: PCM,
    mode: str = "oracle",
    subjects: int = 15,
    generator: np.random.Generator | None = None,
) -> PCM:
    """Replace the selected entries of a predicted PCM with ground truth.

    ``pairs`` is an ordered list of (i, j) index pairs.  Oracle mode copies
    the true probability with weight 1; empirical mode draws ``subjects``
    Bernoulli judgments and stores the observed frequency with weight
    ``subjects``.  Complements stay consistent.
    """
    if mode not in FILL_MODES:
        raise ValidationError(f"fill mode must be one of {FILL_MODES}, got {mode!r}")
    if truth.n != predicted.n:
        raise ValidationError("predicted and truth PCMs differ in size")
    if mode == "empirical" and generator is None:
        raise ValidationError("empirical fill needs an RNG stream")
    p = predicted.p.copy()
    w = predicted.w.copy()
    for i, j in pairs:
        if not (0 <= i < predicted.n and 0 <= j < predicted.n and i != j):
            raise ValidationError(f"plan references unknown pair ({i}, {j})")
        p_true = truth.p[i, j]
        if mode == "oracle":
            # Copy both orientations verbatim so a full plan reproduces the
            # truth matrix bit for bit.
            p[i, j] = p_true
            p[j, i] = truth.p[j, i]
            weight = 1.0
        else:
            wins = int(np.count_nonzero(generator.random(subjects) < p_true))
            value = wins / subjects
            p[i, j] = value
            p[j, i] = 1.0 - value
            weight = float(subjects)
        w[i, j] = w[j, i] = weight
    return PCM(p=p, w=w)


def _check_metric_input(x, y, min_len):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or x.size != y.size:
        raise ValidationError(f"score vectors must be 1-D of equal length, got {x.shape} and {y.shape}")
    if x.size < min_len:
        raise ValidationError(f"need at least {min_len} scores, got {x.size}")
    return x, y


def plcc(x, y) -> float:
    """Pearson linear correlation coefficient."""
    x, y = _check_metric_input(x, y, 3)
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DegenerateInputError("correlation of a constant vector is undefined")
    return float(stats.pearsonr(x, y).statistic)


def srocc(x, y) -> float:
    """Spearman rank-order correlation; ties receive average ranks."""
    x, y = _check_metric_input(x, y, 3)
    if np.ptp(x) == 0.0 or np.ptp(y) == 0.0:
        raise DegenerateInputError("rank correlation of a constant vector is undefined")
    return float(stats.spearmanr(x, y).statistic)


def rmse(x, y) -> float:
    x, y = _check_metric_input(x, y, 1)
    return float(np.sqrt(np.mean((x - y) ** 2)))


class _Predictions:
    """Per-reference predictor outputs for one repetition."""

    __slots__ = ("phat", "mu_m", "records")

    def __init__(self, phat, mu_m, records):
        self.phat = phat
        self.mu_m = mu_m
        self.records = records


def _reference_predictions(reference_id, det_mu, det_sigma, mus, sigmas):
    k = det_mu.size
    z = (det_mu[:, None] - det_mu[None, :]) / np.sqrt(
        det_sigma[:, None] ** 2 + det_sigma[None, :] ** 2
    )
    phat = std_normal_cdf_array(z)
    np.fill_diagonal(phat, 0.5)
    mu_m = np.full((k, k), 0.5)
    records = []
    for i in range(k):
        for j in range(i + 1, k):
            summary = summarize_passes(pair_series(reference_id, mus, sigmas, i, j))
            mu_m[i, j] = summary.mu_m
            mu_m[j, i] = 1.0 - summary.mu_m
            phat[j, i] = 1.0 - phat[i, j]
            records.append(
                dict(
                    reference_id=reference_id,
                    i=i,
                    j=j,
                    var_ab=float(det_sigma[i] ** 2 + det_sigma[j] ** 2),
                    summary=summary,
                )
            )
    return phat, mu_m, records


def _predict(dataset, config: ExperimentConfig, rep: int) -> dict:
    out = {}
    world = dataset.world
    for r, ref in enumerate(dataset.references):
        if world is not None:
            wref = world.references[r]
            det_mu = wref.mu_star + wref.bias
            det_sigma = wref.sigma_star.copy()
            mus, sigmas = reference_pass_estimates(
                world, r, config.n_passes, config.seed, ("ensemble", rep)
            )
        elif dataset.ensemble is not None:
            mus, sigmas = dataset.ensemble.pass_arrays(ref.reference_id, config.n_passes)
            det_mu = mus.mean(axis=0)
            det_sigma = sigmas.mean(axis=0)
        else:
            raise ValidationError(
                "dataset provides neither a synthetic world nor a predictor ensemble"
            )
        phat, mu_m, recs = _reference_predictions(
            ref.reference_id, det_mu, det_sigma, mus, sigmas
        )
        out[ref.reference_id] = _Predictions(phat, mu_m, recs)
    return out


def _repetition(dataset, config: ExperimentConfig, rep: int, s_true, options: BTOptions):
    preds = _predict(dataset, config, rep)
    records = []
    for ref in dataset.references:
        for rec in preds[ref.reference_id].records:
            records.append(PairRecord(**rec))
    records = normalize_model_uncertainty(records)

    subj_w = float(config.subjects)
    data_pcms, model_pcms, random_pcms = {}, {}, {}
    for ref in dataset.references:
        k = ref.truth.n
        wmat = np.full((k, k), subj_w)
        data_pcms[ref.reference_id] = PCM(p=preds[ref.reference_id].phat, w=wmat)
        model_pcms[ref.reference_id] = PCM(p=preds[ref.reference_id].mu_m, w=wmat.copy())
        random_pcms[ref.reference_id] = PCM(p=np.full((k, k), 0.5), w=np.ones((k, k)))

    predicted_for = {
        "data": data_pcms,
        "model": model_pcms,
        "eic": model_pcms,
        "random": random_pcms,
    }

    rankings = {}
    for criterion in config.criteria:
        generator = rng.stream(config.seed, "select", rep) if criterion == "random" else None
        rankings[criterion] = rank_pairs(
            records,
            criterion,
            pcms=model_pcms,
            delta=config.delta,
            options=options,
            generator=generator,
        )

    cells = {}
    for criterion in config.criteria:
        for budget in config.budgets:
            try:
                plan = select_budget(rankings[criterion], budget, criterion, seed=config.seed)
                pairs_by_ref = {}
                for ref_id, i, j in plan.selected:
                    pairs_by_ref.setdefault(ref_id, []).append((i, j))
                shat_parts, std_parts = [], []
                for ref in dataset.references:
                    generator = rng.stream(config.seed, "judge", rep, criterion, ref.reference_id)
                    filled = fill_pcm(
                        predicted_for[criterion][ref.reference_id],
                        pairs_by_ref.get(ref.reference_id, []),
                        ref.truth,
                        mode=config.fill,
                        subjects=config.subjects,
                        generator=generator,
                    )
                    fit = bt_fit(filled, options)
                    shat_parts.append(fit.q)
                    std_parts.append(score_std(fit))
                shat = np.concatenate(shat_parts)
                stds = np.concatenate(std_parts)
                try:
                    pl = plcc(s_true, shat)
                    sr = srocc(s_true, shat)
                except DegenerateInputError:
                    pl = sr = float("nan")
                cells[(criterion, budget)] = (
                    pl,
                    sr,
                    rmse(s_true, shat),
                    float(np.mean(stds)),
                    len(plan.selected),
                )
            except (ValidationError, ArithmeticError) as exc:
                if exc.args:
                    exc.args = (
                        f"criterion={criterion}, budget={budget}, repetition={rep}: {exc.args[0]}",
                    ) + exc.args[1:]
                raise
    return cells


def run_experiment(dataset, config: ExperimentConfig, workers: int = 1) -> ExperimentResult:
    """Run all repetitions and aggregate per (criterion, budget) cell.

    ``workers`` only controls scheduling; any value yields bit-identical
    results because every random draw comes from a named stream and
    aggregation runs in repetition order.
    """
    if not dataset.references:
        raise ValidationError("dataset has no references")
    for ref in dataset.references:
        if ref.truth.n < 3:
            raise ValidationError(
                f"reference {ref.reference_id!r} needs at least 3 images"
            )
    options = BTOptions()
    s_true = np.concatenate([bt_fit(ref.truth, options).q for ref in dataset.references])
    total_pairs = sum(ref.truth.n * (ref.truth.n - 1) // 2 for ref in dataset.references)

    reps = range(config.repetitions)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_rep = list(
                pool.map(lambda r: _repetition(dataset, config, r, s_true, options), reps)
            )
    else:
        per_rep = [_repetition(dataset, config, r, s_true, options) for r in reps]

    cells = []
    for criterion in sorted(config.criteria):
        for budget in sorted(config.budgets):
            rows = [per_rep[r][(criterion, budget)] for r in range(config.repetitions)]
            pairs_selected = rows[0][4]
            cells.append(
                CellResult(
                    criterion=criterion,
                    budget=budget,
                    pairs_selected=pairs_selected,
                    trials=pairs_selected * config.subjects,
                    plcc=tuple(r[0] for r in rows),
                    srocc=tuple(r[1] for r in rows),
                    rmse=tuple(r[2] for r in rows),
                    score_std=tuple(r[3] for r in rows),
                )
            )
    return ExperimentResult(
        dataset_id=dataset.dataset_id,
        config=config,
        total_pairs=total_pairs,
        cells=tuple(cells),
    )
