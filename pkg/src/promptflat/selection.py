"""Ranking, best-prompt selection, and alpha tuning.

All combined scores are lower-is-better: higher-is-better base metrics
(mutual information) enter negated, then the flatness penalty is added
with weight alpha. Ties anywhere break by ascending prompt id so runs
are reproducible across platforms and thread counts.
"""

from __future__ import annotations

import math
from typing import Mapping, Sequence

from .data import Dataset
from .errors import DegenerateInput, EmptyGrid, MissingLabel, NonFiniteScore
from .metrics import (combined_score, mutual_information, pflat, prompt_loss,
                      sensitivity)
from .models.base import ScoringModel
from .perturb import PerturbationConfig, SensitivitySetConfig, build_sensitivity_set
from .prompts import PromptPool

DIRECTIONS = ("lower_better", "higher_better")

BASE_METRICS = ("loss", "mi", "sen")

# higher_better flag per base metric
BASE_HIGHER_BETTER = {"loss": False, "mi": True, "sen": False}

DEFAULT_ALPHA_GRID = (0.0, 0.01, 0.03, 0.1, 0.3, 1.0, 3.0, 10.0)


def _check_direction(direction: str) -> bool:
    """Returns True when higher scores are better."""
    if direction not in DIRECTIONS:
        raise DegenerateInput(
            f"unknown direction {direction!r}, expected one of {DIRECTIONS}")
    return direction == "higher_better"


def check_alpha_grid(values: Sequence[float]) -> tuple[float, ...]:
    """Validates an alpha grid: non-empty, non-negative, strictly ascending."""
    grid = tuple(float(v) for v in values)
    if not grid:
        raise EmptyGrid("alpha grid is empty")
    for i, v in enumerate(grid):
        if not math.isfinite(v) or v < 0.0:
            raise EmptyGrid(f"alpha grid entry {i} is {v}, need finite >= 0")
        if i > 0 and v <= grid[i - 1]:
            raise EmptyGrid("alpha grid must be strictly ascending")
    return grid


def rank_prompts(scores: Mapping[str, float],
                 direction: str = "lower_better") -> list[str]:
    """Prompt ids ordered best-first; ties break by ascending id."""
    higher = _check_direction(direction)
    if not scores:
        raise DegenerateInput("no scores to rank")
    for pid, value in scores.items():
        if not math.isfinite(value):
            raise NonFiniteScore(f"score for prompt {pid!r} is {value}")
    sign = -1.0 if higher else 1.0
    return sorted(scores, key=lambda pid: (sign * scores[pid], pid))


def select_best(pool: PromptPool, scores: Mapping[str, float],
                direction: str = "lower_better") -> str:
    """Head of the ranking, restricted to the pool's prompt ids."""
    missing = [p.id for p in pool if p.id not in scores]
    if missing:
        raise DegenerateInput(f"no score for prompt ids {missing}")
    pool_scores = {p.id: scores[p.id] for p in pool}
    return rank_prompts(pool_scores, direction)[0]


def base_metric_scores(model: ScoringModel, pool: PromptPool, dev: Dataset,
                       base_metric: str,
                       sen_cfg: SensitivitySetConfig | None = None
                       ) -> dict[str, float]:
    """Per-prompt base metric values on the dev examples.

    "loss" needs labels; "mi" and "sen" use the inputs only.
    """
    if base_metric not in BASE_METRICS:
        raise DegenerateInput(
            f"unknown base metric {base_metric!r}, expected one of {BASE_METRICS}")
    out: dict[str, float] = {}
    if base_metric == "loss":
        for prompt in pool:
            out[prompt.id] = prompt_loss(model, prompt, dev)
        return out
    inputs = dev.inputs_only()
    if base_metric == "mi":
        for prompt in pool:
            out[prompt.id] = mutual_information(model, prompt, inputs)
        return out
    sen_cfg = sen_cfg if sen_cfg is not None else SensitivitySetConfig()
    for prompt in pool:
        perturbed = build_sensitivity_set(prompt, sen_cfg, model.verbalizer)
        out[prompt.id] = sensitivity(model, prompt, inputs, perturbed)
    return out


def pflat_scores(model: ScoringModel, pool: PromptPool, inputs: Dataset,
                 cfg: PerturbationConfig,
                 divergence: str = "kl") -> dict[str, float]:
    return {p.id: pflat(model, p, inputs, cfg, divergence) for p in pool}


def combined_scores(base: Mapping[str, float], higher_better: bool,
                    flat: Mapping[str, float], alpha: float) -> dict[str, float]:
    return {pid: combined_score(base[pid], higher_better, flat[pid], alpha)
            for pid in base}


def tune_alpha(model: ScoringModel, pool: PromptPool, dev: Dataset,
               base_metric: str = "loss",
               grid: Sequence[float] | None = None,
               cfg: PerturbationConfig | None = None, *,
               sen_cfg: SensitivitySetConfig | None = None,
               divergence: str = "kl") -> dict:
    """Pick the alpha whose selected prompt scores best on dev accuracy.

    Base metric and flatness are computed once per prompt on the dev
    inputs; every grid alpha then reuses them. Ties in dev accuracy
    resolve to the smallest alpha.
    """
    # local import keeps the module graph acyclic
    from .evaluation import accuracy

    grid = check_alpha_grid(DEFAULT_ALPHA_GRID if grid is None else grid)
    cfg = cfg if cfg is not None else PerturbationConfig()
    dev.require_labels()
    present = set(dev.labels)
    for label in model.verbalizer.labels:
        if label not in present:
            raise MissingLabel(f"dev set has no example labeled {label!r}")

    higher = BASE_HIGHER_BETTER[base_metric]
    base = base_metric_scores(model, pool, dev, base_metric, sen_cfg)
    flat = pflat_scores(model, pool, dev.inputs_only(), cfg, divergence)
    acc_cache: dict[str, float] = {}

    per_alpha = []
    best_alpha = None
    best_acc = -1.0
    for alpha in grid:
        scores = combined_scores(base, higher, flat, alpha)
        selected = select_best(pool, scores)
        if selected not in acc_cache:
            acc_cache[selected] = accuracy(model, pool.get(selected), dev)
        acc = acc_cache[selected]
        per_alpha.append(
            {"alpha": alpha, "selected": selected, "dev_accuracy": acc})
        if acc > best_acc:
            best_alpha, best_acc = alpha, acc
    return {"alpha": best_alpha, "dev_accuracy": best_acc,
            "per_alpha": per_alpha}
