"""Continuous-prompt (prefix) tuning with an optional flatness step.

The flatness-seeking update is one-step SAM: ascend to the worst nearby
point within radius rho along the normalized gradient, then descend
using the gradient evaluated there,

    eps  = rho * g0 / ||g0||        (0 when ||g0|| <= grad_norm_floor)
    next = prefix - lr * grad(prefix + eps)

With use_flatness off the update is plain gradient descent on g0.

Backends participate through three members: ``prefix_feature_dim``,
``probs_with_prefix(enc, prefix)``, and (optionally) an analytic
``prefix_loss_grad(enc, y_idx, prefix)``. Without the analytic form the
gradient falls back to central finite differences over the prefix
entries, which is only allowed for small prefixes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels
from .data import Dataset
from .errors import (DegenerateInput, NonFiniteGradient, NonFiniteLoss,
                     PrefixTooLargeForFiniteDiff, ShapeMismatch)
from .metrics import argmax_rows
from .models.base import FD_STEP, ScoringModel
from .seeding import rng_from

FD_PREFIX_MAX = 1000

GradFn = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class SamConfig:
    """Settings for the (optionally flatness-seeking) prefix optimizer."""

    rho: float = 0.05
    learning_rate: float = 5e-5
    epochs: int = 25
    grad_norm_floor: float = 1e-12
    use_flatness: bool = True
    seed: int = 0
    prefix_len: int = 10

    def __post_init__(self):
        if self.use_flatness and not self.rho > 0.0:
            raise DegenerateInput(f"rho = {self.rho}, need > 0 with flatness on")
        if not self.learning_rate > 0.0:
            raise DegenerateInput(f"learning rate = {self.learning_rate}")
        if self.epochs < 0:
            raise DegenerateInput(f"epochs = {self.epochs}, need >= 0")
        if not self.grad_norm_floor > 0.0:
            raise DegenerateInput(f"grad norm floor = {self.grad_norm_floor}")
        if self.prefix_len < 1:
            raise DegenerateInput(f"prefix length = {self.prefix_len}")


def _eval_grad(prefix: np.ndarray, grad_fn: GradFn) -> tuple[float, np.ndarray]:
    loss, grad = grad_fn(prefix)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != prefix.shape:
        raise ShapeMismatch(
            f"gradient shape {grad.shape} != prefix shape {prefix.shape}")
    if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
        raise NonFiniteGradient("non-finite loss or gradient")
    return float(loss), grad


def _step_gradient(prefix: np.ndarray, grad_fn: GradFn,
                   cfg: SamConfig) -> tuple[float, float, np.ndarray]:
    """Returns (loss at prefix, ||g0||, gradient to descend with)."""
    loss0, g0 = _eval_grad(prefix, grad_fn)
    norm = float(np.linalg.norm(g0))
    if cfg.use_flatness and norm > cfg.grad_norm_floor:
        _, g1 = _eval_grad(prefix + (cfg.rho / norm) * g0, grad_fn)
        return loss0, norm, g1
    return loss0, norm, g0


def sam_step(prefix: np.ndarray, grad_fn: GradFn, cfg: SamConfig) -> np.ndarray:
    """One optimizer step; plain descent when use_flatness is off."""
    prefix = np.asarray(prefix, dtype=np.float64)
    _, _, g = _step_gradient(prefix, grad_fn, cfg)
    return prefix - cfg.learning_rate * g


def run_descent(prefix: np.ndarray, grad_fn: GradFn,
                cfg: SamConfig) -> tuple[np.ndarray, list[tuple[int, float]]]:
    """cfg.epochs steps from prefix; history holds (epoch, loss) pairs."""
    prefix = np.array(prefix, dtype=np.float64, copy=True)
    history = []
    for epoch in range(cfg.epochs):
        loss0, _, g = _step_gradient(prefix, grad_fn, cfg)
        history.append((epoch, loss0))
        prefix = prefix - cfg.learning_rate * g
    return prefix, history


def _prefix_ce_loss(model: ScoringModel, enc, y_idx: np.ndarray,
                    prefix: np.ndarray) -> float:
    probs = model.probs_with_prefix(enc, prefix)
    gold = probs[np.arange(len(y_idx)), y_idx]
    loss = math.fsum(-np.log(np.maximum(gold, kernels.PROB_FLOOR))) / len(y_idx)
    if not math.isfinite(loss):
        raise NonFiniteLoss(f"prefix loss is {loss}")
    return loss


def make_prefix_grad_fn(model: ScoringModel, train: Dataset,
                        prefix_shape: tuple[int, int]) -> GradFn:
    """Full-batch loss/gradient closure for a backend's prefix.

    Uses the backend's analytic gradient when it has one; otherwise
    central finite differences, capped at FD_PREFIX_MAX prefix entries.
    """
    train.require_labels()
    if not hasattr(model, "probs_with_prefix"):
        raise DegenerateInput("backend does not support prefix conditioning")
    enc = model.encode(None, train.texts)
    y_idx = model.label_indices(train.labels)
    if hasattr(model, "prefix_loss_grad"):
        def grad_fn(prefix: np.ndarray) -> tuple[float, np.ndarray]:
            return model.prefix_loss_grad(enc, y_idx, prefix)
        return grad_fn

    total = prefix_shape[0] * prefix_shape[1]
    if total > FD_PREFIX_MAX:
        raise PrefixTooLargeForFiniteDiff(
            f"{total} prefix entries exceed the finite-difference cap "
            f"{FD_PREFIX_MAX}")

    def grad_fn(prefix: np.ndarray) -> tuple[float, np.ndarray]:
        loss = _prefix_ce_loss(model, enc, y_idx, prefix)
        grad = np.zeros_like(prefix)
        for idx in np.ndindex(prefix.shape):
            probe = prefix.copy()
            probe[idx] = prefix[idx] + FD_STEP
            up = _prefix_ce_loss(model, enc, y_idx, probe)
            probe[idx] = prefix[idx] - FD_STEP
            down = _prefix_ce_loss(model, enc, y_idx, probe)
            grad[idx] = (up - down) / (2.0 * FD_STEP)
        return loss, grad

    return grad_fn


def prefix_tune(model: ScoringModel, train: Dataset, cfg: SamConfig) -> dict:
    """Full-batch prefix training; deterministic given cfg.seed.

    The prefix starts from a small seeded Gaussian init, so a SAM run
    and a plain run with the same seed start from the same point.
    History rows are (epoch, loss, gradient norm) at the epoch start.
    """
    shape = (cfg.prefix_len, model.prefix_feature_dim)
    grad_fn = make_prefix_grad_fn(model, train, shape)
    prefix = rng_from(cfg.seed, "prefix-init").normal(0.0, 0.01, shape)
    history = []
    for epoch in range(cfg.epochs):
        loss0, norm, g = _step_gradient(prefix, grad_fn, cfg)
        history.append((epoch, loss0, norm))
        prefix = prefix - cfg.learning_rate * g
    return {"prefix": prefix, "history": history}


def prefix_accuracy(model: ScoringModel, prefix: np.ndarray,
                    test: Dataset) -> float:
    """Accuracy of prefix-conditioned prediction (no discrete prompt)."""
    test.require_labels()
    enc = model.encode(None, test.texts)
    probs = model.probs_with_prefix(enc, np.asarray(prefix, dtype=np.float64))
    y_idx = model.label_indices(test.labels)
    return int(np.sum(argmax_rows(probs) == y_idx)) / len(y_idx)


# -- planted two-minima landscape --------------------------------------
#
# f(x, y) = g(x) + (GAMMA/2) y^2 with g piecewise quadratic:
#
#   g(x) = (A_S/2)(x - M_S)^2                  x <= T1   sharp well
#   g(x) = H - C_L (x - APEX)^2                T1 < x < APEX
#   g(x) = H - C_R (x - APEX)^2                APEX <= x < T2
#   g(x) = (A_F/2)(x - M_F)^2                  x >= T2   flat well
#
# Both wells bottom out at g = 0; the barrier peaks at g(APEX) = H. The
# joins are C1. Matching value and slope of the sharp well against the
# left barrier face at T1 = M_S + u gives
#
#   (A_S/2) u (u + |T1 - APEX|) = H,  u + |T1 - APEX| = APEX - M_S
#   => u = H / ((A_S/2)(APEX - M_S)),  C_L = A_S u / (2 (APEX - M_S - u))
#
# and symmetrically for the flat well at T2 = M_F - v:
#
#   v = H / ((A_F/2)(M_F - APEX)),    C_R = A_F v / (2 (M_F - APEX - v))
#
# Validity needs u < APEX - M_S and v < M_F - APEX, which bounds H; the
# constants below satisfy both. The watershed between basins is APEX.

SHARP_MIN = -1.0
FLAT_MIN = 1.0
APEX = 0.25
SHARP_CURV = 25.0
FLAT_CURV = 1.0
BARRIER_HEIGHT = 0.15
GAMMA = 0.1

_U = BARRIER_HEIGHT / (0.5 * SHARP_CURV * (APEX - SHARP_MIN))
_V = BARRIER_HEIGHT / (0.5 * FLAT_CURV * (FLAT_MIN - APEX))
T1 = SHARP_MIN + _U
T2 = FLAT_MIN - _V
C_LEFT = SHARP_CURV * _U / (2.0 * (APEX - SHARP_MIN - _U))
C_RIGHT = FLAT_CURV * _V / (2.0 * (FLAT_MIN - APEX - _V))


def two_minima_loss_grad(p: Sequence[float]) -> tuple[float, np.ndarray]:
    """Loss and gradient of the documented landscape at p = (x, y)."""
    x = float(p[0])
    y = float(p[1])
    if x <= T1:
        g = 0.5 * SHARP_CURV * (x - SHARP_MIN) ** 2
        dg = SHARP_CURV * (x - SHARP_MIN)
    elif x < APEX:
        g = BARRIER_HEIGHT - C_LEFT * (x - APEX) ** 2
        dg = -2.0 * C_LEFT * (x - APEX)
    elif x < T2:
        g = BARRIER_HEIGHT - C_RIGHT * (x - APEX) ** 2
        dg = -2.0 * C_RIGHT * (x - APEX)
    else:
        g = 0.5 * FLAT_CURV * (x - FLAT_MIN) ** 2
        dg = FLAT_CURV * (x - FLAT_MIN)
    loss = g + 0.5 * GAMMA * y * y
    return loss, np.array([dg, GAMMA * y])


def basin_of(p: Sequence[float]) -> str:
    """Label a point by the nearer of the two minima (ties go sharp).

    The flatness-seeking update settles on the flat-well side of the
    barrier but can hover near the crest, where the watershed label
    would flip on the last step's parity; distance to the minima is the
    stable classification of where a run ended.
    """
    x = float(p[0])
    return "flat" if abs(x - FLAT_MIN) < abs(x - SHARP_MIN) else "sharp"
