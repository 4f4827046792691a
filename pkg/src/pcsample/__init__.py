"""Uncertainty-guided pair selection for pairwise-comparison subjective tests."""

from .bt import BTOptions, BTResult, PCM, bt_fit, bt_fit_batch, score_std
from .datasets import Dataset, EnsembleTable, ReferenceData, dataset_from_world
from .errors import (
    ConflictError,
    ConvergenceError,
    DegenerateInputError,
    DisconnectedGraphError,
    FormatError,
    NumericalError,
    ValidationError,
)
from .experiment import (
    ExperimentConfig,
    ExperimentResult,
    fill_pcm,
    plcc,
    rmse,
    run_experiment,
    simulate_judgment,
    srocc,
)
from .preference import (
    PairDiff,
    QualityEstimate,
    data_uncertainty,
    diff_distribution,
    fidelity_loss,
    preference_probability,
    std_normal_cdf,
)
from .selection import (
    PairRecord,
    SelectionPlan,
    eic_score,
    mvn_kl,
    normalize_model_uncertainty,
    rank_pairs,
    select_budget,
)
from .uncertainty import (
    EnsembleSummary,
    PassSeries,
    SyntheticWorld,
    ensemble_for_dataset,
    summarize_passes,
    synthetic_pass,
    true_pcm,
)

__version__ = "0.1.0"
