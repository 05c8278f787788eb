"""Hashed bag-of-tokens softmax classifier.

Deliberately small and fully analytic: logits are W @ phi where phi counts
hashed lowercase tokens (plus a constant-1 bias feature), so gradients and
perturbed predictions have closed forms an independent oracle can check.
Token hashing uses blake2b, stable across runs and platforms.
"""

from __future__ import annotations

import hashlib
import math
import re
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

import numpy as np

from .. import kernels
from ..errors import DimensionMismatch, MissingLabel, UnknownLabelToken
from ..prompts import PromptCandidate, Verbalizer, render_example
from ..seeding import rng_from
from .base import ScoringModel

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


@lru_cache(maxsize=1 << 16)
def _token_hash(token: str) -> int:
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class LogisticBagConfig:
    vocab_size: int = 256
    l2: float = 0.0
    train_epochs: int = 500
    learning_rate: float = 0.5
    seed: int = 0
    grad_tol: float | None = None

    def __post_init__(self):
        if self.vocab_size < 64:
            raise DimensionMismatch("vocab_size must be at least 64")
        if self.l2 < 0 or self.learning_rate <= 0 or self.train_epochs < 0:
            raise DimensionMismatch("bad logistic training configuration")


class LogisticModel(ScoringModel):
    analytic_gradient = True

    def __init__(self, cfg: LogisticBagConfig, verbalizer: Verbalizer,
                 weights: np.ndarray | None = None):
        super().__init__(verbalizer)
        self.cfg = cfg
        for label in verbalizer.labels:
            if len(self.tokenize(verbalizer.token_for(label))) == 0:
                raise UnknownLabelToken(
                    f"verbalizer token for {label!r} tokenizes to nothing")
        shape = (verbalizer.n_labels, cfg.vocab_size + 1)
        if weights is None:
            self._w = np.zeros(shape, dtype=np.float64)
        else:
            weights = np.asarray(weights, dtype=np.float64)
            if weights.shape != shape:
                raise DimensionMismatch(
                    f"weights shape {weights.shape} != expected {shape}")
            self._w = weights.copy()
        self.train_history: list[float] = []

    # -- interface ------------------------------------------------------

    @property
    def param_count(self) -> int:
        return self._w.size

    @property
    def weights(self) -> np.ndarray:
        """(L, V+1) weight matrix view; final column is the bias."""
        return self._w

    def tokenize(self, text: str) -> np.ndarray:
        toks = _TOKEN_RE.findall(text.lower())
        if not toks:
            return np.empty(0, dtype=np.int64)
        v = self.cfg.vocab_size
        return np.array([_token_hash(t) % v for t in toks], dtype=np.int64)

    def features(self, texts: Sequence[str]) -> np.ndarray:
        """Bag-of-buckets counts with a trailing constant-1 column."""
        v = self.cfg.vocab_size
        phi = np.zeros((len(texts), v + 1), dtype=np.float64)
        for i, text in enumerate(texts):
            ids = self.tokenize(text)
            if ids.size:
                np.add.at(phi[i], ids, 1.0)
        phi[:, v] = 1.0
        return phi

    def encode(self, prompt: PromptCandidate | None, texts: Sequence[str]) -> np.ndarray:
        rendered = [render_example(prompt, self.verbalizer, t) for t in texts]
        return self.features(rendered)

    def probs(self, enc: np.ndarray, params: np.ndarray | None = None) -> np.ndarray:
        w = self._w if params is None else self._check_dim(params).reshape(self._w.shape)
        return kernels.softmax_rows(enc @ w.T)

    def probs_many(self, enc: np.ndarray, params2: np.ndarray) -> np.ndarray:
        return kernels.logistic_probs_many(
            np.ascontiguousarray(params2, dtype=np.float64), enc,
            self.verbalizer.n_labels)

    def divergence_partials_many(self, enc: np.ndarray, params2: np.ndarray,
                                 base: np.ndarray, use_kl: bool,
                                 floor: float) -> np.ndarray:
        """Fused perturbed-predict-and-diverge path; see kernels."""
        return kernels.logistic_divergence_partials(
            np.ascontiguousarray(params2, dtype=np.float64), enc, base,
            use_kl, floor)

    def get_params(self) -> np.ndarray:
        return self._w.ravel().copy()

    def set_params(self, values: np.ndarray) -> None:
        values = self._check_dim(values).astype(np.float64)
        if not np.all(np.isfinite(values)):
            raise DimensionMismatch("parameters must be finite")
        self._w = values.reshape(self._w.shape).copy()

    def loss_grad(self, enc: np.ndarray, y_idx: np.ndarray) -> np.ndarray:
        """Analytic gradient of mean cross entropy, flattened.

        fsum-accumulated per component so the result is exactly invariant
        under permutation or duplication of the examples.
        """
        n = enc.shape[0]
        p = self.probs(enc)
        r = p.copy()
        r[np.arange(n), y_idx] -= 1.0
        L, V1 = self._w.shape
        g = np.empty((L, V1))
        for l in range(L):
            col = r[:, l]
            for v in range(V1):
                g[l, v] = math.fsum(col * enc[:, v]) / n
        return g.ravel()

    # -- prefix conditioning -------------------------------------------

    @property
    def prefix_feature_dim(self) -> int:
        return self.cfg.vocab_size

    def _prefix_enc(self, enc: np.ndarray, prefix: np.ndarray) -> np.ndarray:
        bias = prefix.sum(axis=0)  # rows collapse by summation
        out = enc.copy()
        out[:, : self.cfg.vocab_size] += bias[None, :]
        return out

    def probs_with_prefix(self, enc: np.ndarray, prefix: np.ndarray) -> np.ndarray:
        return self.probs(self._prefix_enc(enc, prefix))

    def prefix_loss_grad(self, enc: np.ndarray, y_idx: np.ndarray,
                         prefix: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean CE loss and its gradient w.r.t. the prefix matrix."""
        n = enc.shape[0]
        p = self.probs_with_prefix(enc, prefix)
        gold = np.maximum(p[np.arange(n), y_idx], kernels.PROB_FLOOR)
        loss = math.fsum(-np.log(gold)) / n
        r = p.copy()
        r[np.arange(n), y_idx] -= 1.0
        gbias = (r @ self._w[:, : self.cfg.vocab_size]) / n  # (n, V) rows
        gvec = gbias.sum(axis=0)
        grad = np.tile(gvec, (prefix.shape[0], 1))
        return loss, grad


def fit_logistic(train, cfg: LogisticBagConfig, verbalizer: Verbalizer) -> LogisticModel:
    """Full-batch gradient descent on mean CE + (l2/2)||W||^2.

    Deterministic given cfg.seed. A transient step-halving line search
    keeps the recorded training loss non-increasing; the base learning
    rate is restored every epoch. Stops early when the objective gradient
    norm drops below cfg.grad_tol (if set). The fitted model carries the
    loss history in ``model.train_history``.
    """
    train.require_labels()
    present = set(train.labels)
    missing = [lab for lab in verbalizer.labels if lab not in present]
    if missing:
        raise MissingLabel(f"no training examples for labels {missing}")

    model = LogisticModel(cfg, verbalizer)
    phi = model.features(train.texts)
    y_idx = model.label_indices(train.labels)
    n = phi.shape[0]
    L = verbalizer.n_labels
    y = np.zeros((n, L))
    y[np.arange(n), y_idx] = 1.0

    rng = rng_from(cfg.seed, "logistic-init")
    w = rng.normal(0.0, 0.01, size=model._w.shape)

    def objective(wm: np.ndarray) -> float:
        p = kernels.softmax_rows(phi @ wm.T)
        gold = np.maximum(p[np.arange(n), y_idx], kernels.PROB_FLOOR)
        return float(-np.log(gold).mean() + 0.5 * cfg.l2 * np.sum(wm * wm))

    history: list[float] = []
    loss = objective(w)
    grad_norm = np.inf
    for _ in range(cfg.train_epochs):
        history.append(loss)
        p = kernels.softmax_rows(phi @ w.T)
        g = (p - y).T @ phi / n + cfg.l2 * w
        grad_norm = float(np.linalg.norm(g))
        if cfg.grad_tol is not None and grad_norm < cfg.grad_tol:
            break
        step = cfg.learning_rate
        for _ in range(40):
            w_next = w - step * g
            loss_next = objective(w_next)
            if loss_next <= loss + 1e-12:
                break
            step *= 0.5
        w = w_next
        loss = loss_next
    history.append(loss)

    p = kernels.softmax_rows(phi @ w.T)
    g = (p - y).T @ phi / n + cfg.l2 * w
    grad_norm = float(np.linalg.norm(g))

    model.set_params(w.ravel())
    model.train_history = history
    model.train_grad_norm = grad_norm
    return model
