"""Evaluation protocol: accuracy, correlations, ranking quality, sweeps.

A study scores every prompt in a pool with the configured metrics on the
test inputs (labels are used only for accuracy, and for the "loss" base
when a separate labeled dev set is supplied), then reports Pearson and
Spearman correlation against accuracy, NDCG@{1,3}, and the Rate of the
metric's selected prompt.

Correlations are orientation-normalized: lower-is-better metrics enter
negated, so a perfect selector always correlates at +1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .data import Dataset
from .errors import (BadK, DegenerateInput, EmptyDataset, LengthMismatch,
                     NegativeRelevance, SelectedExceedsBest, ZeroBest)
from .metrics import (argmax_rows, combined_score, mutual_information, pflat,
                      prompt_loss, sensitivity)
from .models.base import ScoringModel
from .perturb import PerturbationConfig, SensitivitySetConfig, build_sensitivity_set
from .prompts import PromptCandidate, PromptPool
from .seeding import derive_seed
from .selection import BASE_HIGHER_BETTER, rank_prompts

SWEEP_VARIABLES = ("sigma2", "n_samples")


def accuracy(model: ScoringModel, prompt: PromptCandidate | None,
             test: Dataset) -> float:
    """Fraction of test examples whose argmax prediction matches gold."""
    test.require_labels()
    probs = model.probs(model.encode(prompt, test.texts))
    y_idx = model.label_indices(test.labels)
    return int(np.sum(argmax_rows(probs) == y_idx)) / len(y_idx)


def _check_pair(xs: Sequence[float], ys: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise LengthMismatch(f"shapes {xs.shape} and {ys.shape} differ")
    if xs.size < 3:
        raise DegenerateInput("correlation needs at least 3 pairs")
    return xs, ys


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Product-moment correlation; raises on constant input."""
    xs, ys = _check_pair(xs, ys)
    n = xs.size
    dx = xs - math.fsum(xs) / n
    dy = ys - math.fsum(ys) / n
    sxx = math.fsum(dx * dx)
    syy = math.fsum(dy * dy)
    if sxx == 0.0 or syy == 0.0:
        raise DegenerateInput("constant vector has no correlation")
    r = math.fsum(dx * dy) / math.sqrt(sxx * syy)
    return min(1.0, max(-1.0, r))


def average_ranks(xs: Sequence[float]) -> np.ndarray:
    """1-based ranks; tied values share the average of their positions."""
    xs = np.asarray(xs, dtype=np.float64)
    order = np.argsort(xs, kind="stable")
    ranks = np.empty(xs.size)
    i = 0
    while i < xs.size:
        j = i
        while j + 1 < xs.size and xs[order[j + 1]] == xs[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Rank correlation with average ranks for ties."""
    xs, ys = _check_pair(xs, ys)
    return pearson(average_ranks(xs), average_ranks(ys))


def ndcg_at_k(ranked_relevances: Sequence[float],
              ideal_relevances: Sequence[float], k: int) -> float:
    """NDCG with linear gain and log2(i+1) discount; IDCG = 0 maps to 0."""
    ranked = [float(v) for v in ranked_relevances]
    ideal = [float(v) for v in ideal_relevances]
    if len(ranked) != len(ideal):
        raise LengthMismatch(
            f"ranked has {len(ranked)} entries, ideal has {len(ideal)}")
    if any(v < 0 for v in ranked) or any(v < 0 for v in ideal):
        raise NegativeRelevance("relevances must be non-negative")
    if not isinstance(k, int) or not 1 <= k <= len(ranked):
        raise BadK(f"k = {k!r} outside 1..{len(ranked)}")
    if ideal != sorted(ranked, reverse=True):
        raise DegenerateInput(
            "ideal relevances are not the descending sort of the ranked ones")
    dcg = math.fsum(ranked[i] / math.log2(i + 2) for i in range(k))
    idcg = math.fsum(ideal[i] / math.log2(i + 2) for i in range(k))
    if idcg == 0.0:
        return 0.0
    return dcg / idcg


def rate(selected_perf: float, best_perf: float) -> float:
    """Selected performance as a fraction of the best attainable."""
    if not best_perf > 0.0:
        raise ZeroBest(f"best performance {best_perf} must be positive")
    if selected_perf < 0.0:
        raise DegenerateInput(f"selected performance {selected_perf} is negative")
    if selected_perf > best_perf:
        raise SelectedExceedsBest(
            f"selected {selected_perf} exceeds best {best_perf}")
    return selected_perf / best_perf


@dataclass(frozen=True)
class MetricSpec:
    """A custom prompt metric: fn(model, prompt, inputs) -> value."""

    name: str
    higher_better: bool
    fn: Callable[[ScoringModel, PromptCandidate, Dataset], float]


@dataclass(frozen=True)
class EvalConfig:
    """Which metrics a study computes and with what settings.

    Builtin names: mi, sen, pflat, loss, and the combined forms
    base+pflat (weight alpha). loss-based metrics need a labeled dev
    set passed to the study.
    """

    metrics: tuple = ("mi", "sen", "pflat", "mi+pflat", "sen+pflat")
    alpha: float = 1.0
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    sensitivity: SensitivitySetConfig = field(default_factory=SensitivitySetConfig)
    divergence: str = "kl"

    def echo(self) -> dict:
        names = [m.name if isinstance(m, MetricSpec) else m for m in self.metrics]
        return {"metrics": names, "alpha": self.alpha,
                "n_samples": self.perturbation.n_samples,
                "sigma2": self.perturbation.sigma2,
                "master_seed": self.perturbation.master_seed,
                "k_permutations": self.sensitivity.k_permutations,
                "m_edits": self.sensitivity.m_edits,
                "divergence": self.divergence}


_BASES = ("loss", "mi", "sen")


class MetricEngine:
    """Resolves configured metric names and computes them per prompt.

    Base values and the flatness penalty are computed once per prompt
    and shared by every combined metric.
    """

    def __init__(self, model: ScoringModel, cfg: EvalConfig,
                 dev: Dataset | None = None):
        self.model = model
        self.cfg = cfg
        self.dev = dev
        self._custom: dict[str, MetricSpec] = {}
        names = []
        for entry in cfg.metrics:
            if isinstance(entry, MetricSpec):
                if entry.name in names:
                    raise DegenerateInput(f"duplicate metric name {entry.name!r}")
                self._custom[entry.name] = entry
                names.append(entry.name)
                continue
            base, _, tail = entry.partition("+")
            if base not in _BASES + ("pflat",) or tail not in ("", "pflat") \
                    or (base == "pflat" and tail):
                raise DegenerateInput(f"unknown metric {entry!r}")
            if base == "loss" and dev is None:
                raise DegenerateInput(
                    f"metric {entry!r} needs a labeled dev set")
            if entry in names:
                raise DegenerateInput(f"duplicate metric name {entry!r}")
            names.append(entry)
        if not names:
            raise DegenerateInput("no metrics configured")
        self.names: tuple[str, ...] = tuple(names)

    def higher_better(self, name: str) -> bool:
        if name in self._custom:
            return self._custom[name].higher_better
        if "+" in name:
            return False
        if name == "pflat":
            return False
        return BASE_HIGHER_BETTER[name]

    def _primitives_needed(self) -> set[str]:
        need = set()
        for name in self.names:
            if name in self._custom:
                continue
            base, _, tail = name.partition("+")
            need.add(base)
            if tail:
                need.add("pflat")
        return need

    def compute(self, pool: PromptPool, inputs: Dataset) -> dict[str, dict[str, float]]:
        """Metric values for every prompt: {prompt_id: {name: value}}."""
        cfg = self.cfg
        need = self._primitives_needed()
        out: dict[str, dict[str, float]] = {}
        for prompt in pool:
            prim: dict[str, float] = {}
            if "loss" in need:
                prim["loss"] = prompt_loss(self.model, prompt, self.dev)
            if "mi" in need:
                prim["mi"] = mutual_information(self.model, prompt, inputs)
            if "sen" in need:
                perturbed = build_sensitivity_set(
                    prompt, cfg.sensitivity, self.model.verbalizer)
                prim["sen"] = sensitivity(self.model, prompt, inputs, perturbed)
            if "pflat" in need:
                prim["pflat"] = pflat(self.model, prompt, inputs,
                                      cfg.perturbation, cfg.divergence)
            row: dict[str, float] = {}
            for name in self.names:
                if name in self._custom:
                    row[name] = float(self._custom[name].fn(
                        self.model, prompt, inputs))
                    continue
                base, _, tail = name.partition("+")
                if tail:
                    row[name] = combined_score(
                        prim[base], BASE_HIGHER_BETTER.get(base, False),
                        prim["pflat"], cfg.alpha)
                else:
                    row[name] = prim[base]
            out[prompt.id] = row
        return out


@dataclass(frozen=True)
class EvaluationReport:
    per_prompt: tuple
    correlations: dict
    ranking: dict
    config: dict

    def to_dict(self) -> dict:
        return {"per_prompt": [dict(r) for r in self.per_prompt],
                "correlations": {k: dict(v) for k, v in self.correlations.items()},
                "ranking": {k: dict(v) for k, v in self.ranking.items()},
                "config": dict(self.config)}

    def metric_values(self, name: str) -> list[float]:
        return [row["metrics"][name] for row in self.per_prompt]


def correlation_study(model: ScoringModel, pool: PromptPool, test: Dataset,
                      cfg: EvalConfig | None = None, *,
                      dev: Dataset | None = None) -> EvaluationReport:
    """Score the pool, then correlate every metric with test accuracy.

    Degenerate correlations (constant metric or constant accuracy) are
    reported as nulls with a reason instead of raising, so sweeps never
    abort on one bad cell.
    """
    cfg = cfg if cfg is not None else EvalConfig()
    if len(pool) < 3:
        raise DegenerateInput("correlation study needs at least 3 prompts")
    if len(test) == 0:
        raise EmptyDataset("correlation study needs a non-empty test set")
    engine = MetricEngine(model, cfg, dev)
    inputs = test.inputs_only()
    table = engine.compute(pool, inputs)
    accs = {p.id: accuracy(model, p, test) for p in pool}

    per_prompt = tuple(
        {"prompt_id": p.id, "accuracy": accs[p.id], "metrics": table[p.id]}
        for p in pool)
    acc_vec = [accs[p.id] for p in pool]
    ideal = sorted(acc_vec, reverse=True)
    best = max(acc_vec)

    correlations: dict[str, dict] = {}
    ranking: dict[str, dict] = {}
    for name in engine.names:
        vals = {p.id: table[p.id][name] for p in pool}
        higher = engine.higher_better(name)
        oriented = [vals[p.id] if higher else -vals[p.id] for p in pool]
        try:
            correlations[name] = {"pearson": pearson(oriented, acc_vec),
                                  "spearman": spearman(oriented, acc_vec)}
        except DegenerateInput as exc:
            correlations[name] = {"pearson": None, "spearman": None,
                                  "reason": str(exc)}
        direction = "higher_better" if higher else "lower_better"
        order = rank_prompts(vals, direction)
        rels = [accs[pid] for pid in order]
        ranking[name] = {"ndcg1": ndcg_at_k(rels, ideal, 1),
                         "ndcg3": ndcg_at_k(rels, ideal, 3),
                         "rate": rate(accs[order[0]], best)}
    return EvaluationReport(per_prompt, correlations, ranking, cfg.echo())


@dataclass(frozen=True)
class SweepSpec:
    """A grid over one perturbation field, re-studied per (value, repeat)."""

    variable: str
    values: tuple
    repeats: int = 1
    metric: str = "pflat"
    eval: EvalConfig = field(default_factory=EvalConfig)
    master_seed: int = 0

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise DegenerateInput(
                f"sweep variable {self.variable!r} not in {SWEEP_VARIABLES}")
        vals = tuple(self.values)
        if len(vals) < 2:
            raise DegenerateInput("sweep needs at least 2 values")
        if any(vals[i] >= vals[i + 1] for i in range(len(vals) - 1)):
            raise DegenerateInput("sweep values must be strictly ascending")
        if self.variable == "n_samples" and any(v != int(v) for v in vals):
            raise DegenerateInput("n_samples sweep values must be integers")
        object.__setattr__(self, "values", vals)
        if self.repeats < 1:
            raise DegenerateInput(f"repeats = {self.repeats}, need >= 1")


def sweep(model: ScoringModel, pool: PromptPool, test: Dataset,
          spec: SweepSpec, *, dev: Dataset | None = None) -> dict:
    """One correlation_study per (value, repeat), seeds derived per cell."""
    rows = []
    for vi, value in enumerate(spec.values):
        for rep in range(spec.repeats):
            seed = derive_seed(spec.master_seed, "sweep", spec.variable, vi, rep)
            override = {spec.variable: int(value) if spec.variable == "n_samples"
                        else float(value)}
            pert = replace(spec.eval.perturbation, master_seed=seed, **override)
            report = correlation_study(model, pool, test,
                                       replace(spec.eval, perturbation=pert),
                                       dev=dev)
            if spec.metric not in report.ranking:
                raise DegenerateInput(
                    f"sweep metric {spec.metric!r} not in study metrics")
            row = {"value": value, "repeat": rep,
                   "rate": report.ranking[spec.metric]["rate"],
                   "pearson": report.correlations[spec.metric]["pearson"]}
            if "pflat" in report.per_prompt[0]["metrics"]:
                vals = report.metric_values("pflat")
                row["mean_pflat"] = math.fsum(vals) / len(vals)
            rows.append(row)
    summary = []
    for value in spec.values:
        cell = [r for r in rows if r["value"] == value]
        rates = [r["rate"] for r in cell]
        pears = [r["pearson"] for r in cell if r["pearson"] is not None]
        summary.append({
            "value": value,
            "mean_rate": math.fsum(rates) / len(rates),
            "mean_pearson": math.fsum(pears) / len(pears) if pears else None})
    return {"variable": spec.variable, "metric": spec.metric,
            "repeats": spec.repeats, "rows": rows, "summary": summary}
