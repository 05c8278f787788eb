"""Prompt quality metrics.

Conventions shared by everything here:

* probabilities get a 1e-12 floor before any log; exact zeros in the
  outer factor contribute nothing (0 log 0 = 0),
* per-example aggregation uses math.fsum, so every metric is exactly
  invariant under permutation or duplication of the dataset,
* entropies and divergences are in nats.

The flatness estimate ``pflat`` is the Monte-Carlo mean divergence
between the unperturbed prediction and the prediction under Gaussian
parameter noise:

    pflat = (1 / (|D| * N)) * sum_x sum_i div(f(x; theta), f(x; theta + eps_i))

with eps_i ~ N(0, sigma2 I) drawn from the deterministic stream in
``perturb.sample_gaussian``. For small sigma2 this approaches
(sigma2 / 2) * mean_x trace(Fisher_x), which is what the oracle tests
check it against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels
from .data import Dataset
from .errors import (DegenerateInput, EmptyDataset, EmptyPerturbationSet,
                     NonFiniteDivergence, NonFiniteLoss, PreconditionNotMet)
from .models.base import ScoringModel, grad_prompt_loss
from .perturb import (PerturbationConfig, SensitivitySetConfig,
                      build_sensitivity_set, sample_gaussian)
from .prompts import PromptCandidate

FLOOR = kernels.PROB_FLOOR

LOSS_KINDS = ("cross_entropy", "zero_one")
DIVERGENCE_KINDS = ("kl", "cross_entropy")

PFLAT_CHUNK = 2048


def _check_kind(kind: str, allowed: tuple[str, ...]) -> str:
    if kind not in allowed:
        raise DegenerateInput(f"unknown kind {kind!r}, expected one of {allowed}")
    return kind


def argmax_rows(probs: np.ndarray) -> np.ndarray:
    """Row argmax; ties resolve to the lowest index.

    Label columns are in sorted-label order, so a tie resolves to the
    lexicographically smallest label.
    """
    return np.argmax(probs, axis=1)


def prompt_loss(model: ScoringModel, prompt: PromptCandidate | None,
                labeled: Dataset, kind: str = "cross_entropy") -> float:
    """Mean per-example loss of the prompt on a labeled set."""
    _check_kind(kind, LOSS_KINDS)
    labeled.require_labels()
    probs = model.probs(model.encode(prompt, labeled.texts))
    y_idx = model.label_indices(labeled.labels)
    if kind == "cross_entropy":
        gold = probs[np.arange(len(y_idx)), y_idx]
        if not np.all(np.isfinite(gold)):
            raise NonFiniteLoss("model produced non-finite probabilities")
        per = -np.log(np.maximum(gold, FLOOR))
    else:
        per = (argmax_rows(probs) != y_idx).astype(np.float64)
    value = math.fsum(per) / len(per)
    if not math.isfinite(value):
        raise NonFiniteLoss(f"prompt loss is {value}")
    return value


def mi_from_probs(probs: np.ndarray) -> float:
    """Mutual information of a (n, L) prediction matrix, in nats.

    H(mean prediction) minus mean per-row entropy. Tiny negative values
    from rounding (within -1e-9) clamp to 0.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptyDataset("prediction matrix must be (n, L) with n >= 1")
    n, L = probs.shape
    mean = np.array([math.fsum(probs[:, l]) / n for l in range(L)])
    h_mean = float(kernels.entropy_rows(mean[None, :])[0])
    h_rows = kernels.entropy_rows(probs)
    mi = h_mean - math.fsum(h_rows) / n
    if -1e-9 <= mi < 0.0:
        mi = 0.0
    return mi


def mutual_information(model: ScoringModel, prompt: PromptCandidate | None,
                       inputs: Dataset) -> float:
    if len(inputs) == 0:
        raise EmptyDataset("mutual information needs at least one input")
    return mi_from_probs(model.probs(model.encode(prompt, inputs.texts)))


def sensitivity(model: ScoringModel, prompt: PromptCandidate,
                inputs: Dataset, perturbed: Sequence[PromptCandidate]) -> float:
    """Fraction of (input, perturbed prompt) pairs whose argmax flips."""
    if len(inputs) == 0:
        raise EmptyDataset("sensitivity needs at least one input")
    if len(perturbed) == 0:
        raise EmptyPerturbationSet("sensitivity needs a non-empty perturbed set")
    texts = inputs.texts
    base = argmax_rows(model.probs(model.encode(prompt, texts)))
    flips = 0
    for variant in perturbed:
        pred = argmax_rows(model.probs(model.encode(variant, texts)))
        flips += int(np.sum(pred != base))
    return flips / (len(texts) * len(perturbed))


def pflat(model: ScoringModel, prompt: PromptCandidate | None, inputs: Dataset,
          cfg: PerturbationConfig, divergence: str = "kl") -> float:
    """Monte-Carlo flatness: mean divergence under parameter noise.

    Deterministic given cfg.master_seed; the model's parameters are
    unchanged on exit (prediction under a perturbed vector never mutates
    the model).
    """
    _check_kind(divergence, DIVERGENCE_KINDS)
    if len(inputs) == 0:
        raise EmptyDataset("pflat needs at least one input")
    use_kl = divergence == "kl"
    if cfg.sigma2 == 0.0 and use_kl:
        # zero noise leaves the parameters bitwise unchanged, so every
        # KL term is exactly zero; skip the sampling loop rather than
        # round-trip identical distributions through the kernels (the
        # cross-entropy variant is the entropy there, so it still runs)
        return 0.0
    texts = inputs.texts
    enc = model.encode(prompt, texts)
    theta = model.get_params().astype(np.float64)
    base = model.probs(enc)
    n = len(texts)
    partials = np.zeros(n)
    fused = getattr(model, "divergence_partials_many", None)
    for start in range(0, cfg.n_samples, PFLAT_CHUNK):
        stop = min(start + PFLAT_CHUNK, cfg.n_samples)
        eps = np.stack([sample_gaussian(theta.size, cfg, i)
                        for i in range(start, stop)])
        batch = theta[None, :] + eps
        if fused is not None:
            partials += fused(enc, batch, base, use_kl, FLOOR)
        else:
            pert = model.probs_many(enc, batch)
            partials += kernels.divergence_partials(base, pert, use_kl, FLOOR)
    value = math.fsum(partials) / (cfg.n_samples * n)
    if not math.isfinite(value):
        raise NonFiniteDivergence(f"pflat is {value}")
    return value


def true_flatness(model: ScoringModel, prompt: PromptCandidate | None,
                  labeled: Dataset) -> float:
    """L2 norm of the cross-entropy prompt loss gradient."""
    return float(np.linalg.norm(grad_prompt_loss(model, prompt, labeled)))


def combined_score(base_value: float, base_higher_better: bool,
                   pflat_value: float, alpha: float) -> float:
    """Lower-is-better combined selection score: base + alpha * pflat.

    A higher-is-better base metric enters negated so the combination
    stays lower-is-better.
    """
    base = -base_value if base_higher_better else base_value
    return base + alpha * pflat_value


def surrogate_gap_check(model: ScoringModel, prompt: PromptCandidate,
                        labeled: Dataset, *,
                        soft_labels: np.ndarray | None = None,
                        perturbed: Sequence[PromptCandidate] | None = None) -> dict:
    """Check the surrogate identities at the exact-prediction point.

    Precondition: the model's prediction must equal the (soft) label
    distribution for every example, within total variation 1e-9. At that
    point the divergence terms of both derivations vanish, so

    * MI + CE loss equals the entropy of the mean prediction, and
    * sensitivity equals the mean perturbed zero-one loss against gold.

    Returns the absolute residuals of the two identities.
    """
    labeled.require_labels()
    texts = labeled.texts
    probs = model.probs(model.encode(prompt, texts))
    n, L = probs.shape
    if soft_labels is None:
        y = np.zeros((n, L))
        y[np.arange(n), model.label_indices(labeled.labels)] = 1.0
    else:
        y = np.asarray(soft_labels, dtype=np.float64)
        if y.shape != probs.shape:
            raise PreconditionNotMet(
                f"soft labels shape {y.shape} != predictions shape {probs.shape}")
    tv = 0.5 * np.abs(probs - y).sum(axis=1).max()
    if tv > 1e-9:
        raise PreconditionNotMet(
            f"prediction differs from labels by total variation {tv:.3g} > 1e-9")

    ce = math.fsum(-(y * np.log(np.maximum(probs, FLOOR))).sum(axis=1)) / n
    mi = mi_from_probs(probs)
    mean = np.array([math.fsum(probs[:, l]) / n for l in range(L)])
    h_mean = float(kernels.entropy_rows(mean[None, :])[0])
    mi_gap = abs(mi + ce - h_mean)

    if perturbed is None:
        perturbed = build_sensitivity_set(
            prompt, SensitivitySetConfig(), model.verbalizer)
    sen = sensitivity(model, prompt, labeled.inputs_only(), perturbed)
    gold = argmax_rows(y)
    flips = 0
    for variant in perturbed:
        pred = argmax_rows(model.probs(model.encode(variant, texts)))
        flips += int(np.sum(pred != gold))
    perturbed01 = flips / (n * len(perturbed))
    sen_gap = abs(sen - perturbed01)
    return {"mi_gap_at_perfect": mi_gap, "sen_gap_at_perfect": sen_gap}


@dataclass(frozen=True)
class MetricReport:
    """Metric values for one prompt plus the settings that produced them."""

    prompt_id: str
    values: dict[str, float]
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"prompt_id": self.prompt_id,
                "values": dict(self.values),
                "provenance": dict(self.provenance)}
