"""Scoring model interface.

A backend scores rendered prompt-input text against the verbalizer labels.
Prediction is a pure function of (parameters, rendered text): ``probs``
takes an optional explicit parameter vector and never mutates the model,
which is what lets the perturbation metrics run without touching shared
state. ``set_params`` is the only mutating call and callers own the
exclusivity of it.
"""

from __future__ import annotations

import abc
import math
from typing import Any, Sequence

import numpy as np

from ..errors import (DimensionMismatch, EmptyDataset, NonFiniteGradient,
                      TooManyParamsForFiniteDiff, UnknownLabel)
from ..kernels import PROB_FLOOR
from ..prompts import PromptCandidate, Verbalizer

FD_STEP = 1e-5
FD_MAX_PARAMS = 5000


class ScoringModel(abc.ABC):
    """Shared surface of the logistic and transformer backends."""

    analytic_gradient: bool = False

    def __init__(self, verbalizer: Verbalizer):
        self.verbalizer = verbalizer

    @property
    def label_order(self) -> tuple[str, ...]:
        return self.verbalizer.labels

    @property
    @abc.abstractmethod
    def param_count(self) -> int: ...

    @abc.abstractmethod
    def tokenize(self, text: str) -> np.ndarray:
        """Token ids for a piece of text; empty text gives an empty sequence."""

    @abc.abstractmethod
    def encode(self, prompt: PromptCandidate | None, texts: Sequence[str]) -> Any:
        """Backend-specific cache for repeated scoring of (prompt, texts)."""

    @abc.abstractmethod
    def probs(self, enc: Any, params: np.ndarray | None = None) -> np.ndarray:
        """(n, L) label probabilities; explicit params must not mutate."""

    @abc.abstractmethod
    def get_params(self) -> np.ndarray: ...

    @abc.abstractmethod
    def set_params(self, values: np.ndarray) -> None: ...

    def probs_many(self, enc: Any, params2: np.ndarray) -> np.ndarray:
        """(k, n, L) probabilities for k parameter vectors; generic loop."""
        out = [self.probs(enc, params2[i]) for i in range(params2.shape[0])]
        return np.stack(out, axis=0)

    def predict(self, prompt: PromptCandidate | None, text: str) -> dict[str, float]:
        row = self.probs(self.encode(prompt, [text]))[0]
        return {label: float(row[i]) for i, label in enumerate(self.label_order)}

    def label_indices(self, labels: Sequence[str | None]) -> np.ndarray:
        order = self.label_order
        idx = np.empty(len(labels), dtype=np.int64)
        for i, lab in enumerate(labels):
            if lab is None:
                raise UnknownLabel("missing label")
            try:
                idx[i] = order.index(lab)
            except ValueError:
                raise UnknownLabel(f"label {lab!r} not in verbalizer") from None
        return idx

    def _check_dim(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values)
        if values.ndim != 1 or values.size != self.param_count:
            raise DimensionMismatch(
                f"expected {self.param_count} parameters, got shape {values.shape}")
        return values


def _ce_loss_of_params(model: ScoringModel, enc: Any, y_idx: np.ndarray,
                       params: np.ndarray) -> float:
    p = model.probs(enc, params)
    gold = np.maximum(p[np.arange(len(y_idx)), y_idx], PROB_FLOOR)
    return math.fsum(-np.log(gold)) / len(y_idx)


def grad_prompt_loss(model: ScoringModel, prompt: PromptCandidate | None,
                     labeled) -> np.ndarray:
    """Gradient of the mean cross-entropy prompt loss w.r.t. the parameters.

    Uses the backend's analytic gradient when it has one, otherwise central
    finite differences with step 1e-5 (only for models with at most
    5000 parameters).
    """
    labeled.require_labels()
    if len(labeled) == 0:
        raise EmptyDataset("gradient needs at least one labeled example")
    enc = model.encode(prompt, labeled.texts)
    y_idx = model.label_indices(labeled.labels)
    if model.analytic_gradient:
        grad = model.loss_grad(enc, y_idx)  # type: ignore[attr-defined]
    else:
        dim = model.param_count
        if dim > FD_MAX_PARAMS:
            raise TooManyParamsForFiniteDiff(
                f"{dim} parameters exceed the finite-difference cap {FD_MAX_PARAMS}")
        theta = model.get_params().astype(np.float64)
        grad = np.empty(dim)
        for j in range(dim):
            up = theta.copy()
            dn = theta.copy()
            up[j] += FD_STEP
            dn[j] -= FD_STEP
            grad[j] = (_ce_loss_of_params(model, enc, y_idx, up)
                       - _ce_loss_of_params(model, enc, y_idx, dn)) / (2.0 * FD_STEP)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient("prompt loss gradient has non-finite entries")
    return grad
