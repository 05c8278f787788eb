"""Flatness-aware prompt selection for small classification backends.

The package scores candidate prompts with information-theoretic
surrogates (mutual information, sensitivity) and a Monte-Carlo flatness
penalty, combines them into a selection score, and evaluates selection
quality against test accuracy. Two backends are included: a bag-of-words
logistic scorer with analytic gradients, and a small byte-level causal
transformer.
"""

from __future__ import annotations

from .data import Dataset, Example, load_dataset, load_prompt_pool, load_verbalizer
from .errors import (DataError, NumericError, PromptFlatError, UsageError)
from .evaluation import (EvalConfig, EvaluationReport, MetricEngine, MetricSpec,
                         SweepSpec, accuracy, correlation_study, ndcg_at_k,
                         pearson, rate, spearman, sweep)
from .metrics import (MetricReport, combined_score, mi_from_probs,
                      mutual_information, pflat, prompt_loss, sensitivity,
                      surrogate_gap_check, true_flatness)
from .models import (LogisticBagConfig, LogisticModel, ScoringModel,
                     TransformerConfig, TransformerModel, fit_logistic,
                     grad_prompt_loss, load_model, save_model)
from .perturb import (PerturbationConfig, SensitivitySetConfig,
                      build_sensitivity_set, demo_permutations,
                      instruction_edits, sample_gaussian)
from .prefix import SamConfig, prefix_accuracy, prefix_tune, run_descent, sam_step
from .prompts import PromptCandidate, PromptPool, Verbalizer
from .reports import canonical_json, write_report
from .seeding import derive_seed, rng_from
from .selection import (DEFAULT_ALPHA_GRID, rank_prompts, select_best,
                        tune_alpha)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "Example", "load_dataset", "load_prompt_pool", "load_verbalizer",
    "DataError", "NumericError", "PromptFlatError", "UsageError",
    "EvalConfig", "EvaluationReport", "MetricEngine", "MetricSpec",
    "SweepSpec", "accuracy", "correlation_study", "ndcg_at_k", "pearson",
    "rate", "spearman", "sweep",
    "MetricReport", "combined_score", "mi_from_probs", "mutual_information",
    "pflat", "prompt_loss", "sensitivity", "surrogate_gap_check",
    "true_flatness",
    "LogisticBagConfig", "LogisticModel", "ScoringModel", "TransformerConfig",
    "TransformerModel", "fit_logistic", "grad_prompt_loss", "load_model",
    "save_model",
    "PerturbationConfig", "SensitivitySetConfig", "build_sensitivity_set",
    "demo_permutations", "instruction_edits", "sample_gaussian",
    "SamConfig", "prefix_accuracy", "prefix_tune", "run_descent", "sam_step",
    "PromptCandidate", "PromptPool", "Verbalizer",
    "canonical_json", "write_report",
    "derive_seed", "rng_from",
    "DEFAULT_ALPHA_GRID", "rank_prompts", "select_best", "tune_alpha",
    "__version__",
]
