"""Tiny byte-level causal transformer backend.

The vocabulary is the 256 raw byte values plus one reserved id per
verbalizer label (ids 256, 257, ... in sorted-label order). The tokenizer
walks the UTF-8 bytes and greedily matches whole verbalizer token strings,
so every verbalizer token is exactly one reserved id even when two tokens
share a first byte. Predictions read the final-position logits at the
reserved ids and renormalize over them.

Parameters are stored as a flat float32 vector (the weight-file payload
type); the forward pass computes in float64.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..errors import (DimensionMismatch, SequenceTooLong, UnknownLabelToken)
from ..prompts import PromptCandidate, Verbalizer, render_example
from ..seeding import rng_from
from .base import ScoringModel

BYTE_VOCAB = 256


@dataclass(frozen=True)
class TransformerConfig:
    layers: int = 2
    heads: int = 2
    d_model: int = 32
    vocab_size: int = 258
    max_seq_len: int = 256

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise DimensionMismatch("d_model must be divisible by heads")
        if min(self.layers, self.heads, self.d_model,
               self.vocab_size, self.max_seq_len) <= 0:
            raise DimensionMismatch("transformer dimensions must be positive")
        if self.vocab_size < BYTE_VOCAB:
            raise DimensionMismatch("vocab_size must cover the byte range")


def tensor_spec(cfg: TransformerConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Tensor names and shapes, in flat-parameter order."""
    d, v, s = cfg.d_model, cfg.vocab_size, cfg.max_seq_len
    spec: list[tuple[str, tuple[int, ...]]] = [
        ("tok_emb", (v, d)), ("pos_emb", (s, d))]
    for i in range(cfg.layers):
        spec += [
            (f"block{i}.ln1.g", (d,)), (f"block{i}.ln1.b", (d,)),
            (f"block{i}.attn.wqkv", (d, 3 * d)), (f"block{i}.attn.bqkv", (3 * d,)),
            (f"block{i}.attn.wo", (d, d)), (f"block{i}.attn.bo", (d,)),
            (f"block{i}.ln2.g", (d,)), (f"block{i}.ln2.b", (d,)),
            (f"block{i}.mlp.w1", (d, 4 * d)), (f"block{i}.mlp.b1", (4 * d,)),
            (f"block{i}.mlp.w2", (4 * d, d)), (f"block{i}.mlp.b2", (d,)),
        ]
    spec += [("ln_f.g", (d,)), ("ln_f.b", (d,)), ("head.w", (d, v)), ("head.b", (v,))]
    return spec


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-5) * g + b


def _gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x ** 3)))


class TransformerModel(ScoringModel):
    analytic_gradient = False

    def __init__(self, cfg: TransformerConfig, verbalizer: Verbalizer,
                 params: np.ndarray | None = None, seed: int = 0):
        super().__init__(verbalizer)
        self.cfg = cfg
        labels = verbalizer.labels
        if cfg.vocab_size < BYTE_VOCAB + len(labels):
            raise UnknownLabelToken(
                f"vocab_size {cfg.vocab_size} has no room for "
                f"{len(labels)} reserved verbalizer ids")
        self.reserved_ids = {lab: BYTE_VOCAB + j for j, lab in enumerate(labels)}
        # longest match first so overlapping token strings resolve greedily
        self._specials = sorted(
            ((verbalizer.token_for(lab).encode("utf-8"), BYTE_VOCAB + j)
             for j, lab in enumerate(labels)),
            key=lambda kv: (-len(kv[0]), kv[1]))
        self._spec = tensor_spec(cfg)
        self._slices: list[tuple[str, tuple[int, ...], slice]] = []
        off = 0
        for name, shape in self._spec:
            size = int(np.prod(shape))
            self._slices.append((name, shape, slice(off, off + size)))
            off += size
        self._n_params = off
        if params is None:
            rng = rng_from(seed, "transformer-init")
            flat = (rng.normal(0.0, 0.02, size=off)).astype(np.float32)
            for name, shape, sl in self._slices:
                if name.endswith((".ln1.g", ".ln2.g")) or name == "ln_f.g":
                    flat[sl] = 1.0
                elif name.endswith((".ln1.b", ".ln2.b", ".bo", ".bqkv",
                                    ".b1", ".b2")) or name == "ln_f.b":
                    flat[sl] = 0.0
            self._params = flat
        else:
            params = np.asarray(params, dtype=np.float32)
            if params.ndim != 1 or params.size != off:
                raise DimensionMismatch(
                    f"expected {off} parameters, got shape {params.shape}")
            self._params = params.copy()

    # -- interface ------------------------------------------------------

    @property
    def param_count(self) -> int:
        return self._n_params

    def tensors(self, params: np.ndarray | None = None) -> dict[str, np.ndarray]:
        flat = self._params if params is None else params
        return {name: flat[sl].reshape(shape)
                for name, shape, sl in self._slices}

    def tokenize(self, text: str) -> np.ndarray:
        raw = text.encode("utf-8")
        ids: list[int] = []
        i = 0
        while i < len(raw):
            for pat, tid in self._specials:
                if raw.startswith(pat, i):
                    ids.append(tid)
                    i += len(pat)
                    break
            else:
                ids.append(raw[i])
                i += 1
        return np.array(ids, dtype=np.int64)

    def encode(self, prompt: PromptCandidate | None,
               texts: Sequence[str]) -> list[np.ndarray]:
        out = []
        for t in texts:
            ids = self.tokenize(render_example(prompt, self.verbalizer, t))
            if ids.size > self.cfg.max_seq_len:
                raise SequenceTooLong(
                    f"sequence of {ids.size} tokens exceeds max_seq_len "
                    f"{self.cfg.max_seq_len}")
            out.append(ids)
        return out

    def get_params(self) -> np.ndarray:
        return self._params.copy()

    def set_params(self, values: np.ndarray) -> None:
        values = self._check_dim(values)
        if not np.all(np.isfinite(values)):
            raise DimensionMismatch("parameters must be finite")
        self._params = np.asarray(values, dtype=np.float32).copy()

    def probs(self, enc: list[np.ndarray],
              params: np.ndarray | None = None) -> np.ndarray:
        if params is not None:
            params = np.asarray(self._check_dim(params), dtype=np.float32)
        t = {k: v.astype(np.float64) for k, v in self.tensors(params).items()}
        rows = [self._label_probs(self._final_logits(ids, t)) for ids in enc]
        return np.stack(rows, axis=0)

    # -- forward pass ---------------------------------------------------

    def _final_logits(self, ids: np.ndarray, t: dict[str, np.ndarray],
                      prefix: np.ndarray | None = None) -> np.ndarray:
        x = t["tok_emb"][ids]
        if prefix is not None:
            x = np.concatenate([prefix, x], axis=0)
        n = x.shape[0]
        if n > self.cfg.max_seq_len:
            raise SequenceTooLong(
                f"sequence of {n} positions exceeds max_seq_len "
                f"{self.cfg.max_seq_len}")
        x = x + t["pos_emb"][:n]
        h = self.cfg.heads
        dh = self.cfg.d_model // h
        mask = np.triu(np.full((n, n), -np.inf), k=1)
        for i in range(self.cfg.layers):
            p = f"block{i}."
            a = _layer_norm(x, t[p + "ln1.g"], t[p + "ln1.b"])
            qkv = a @ t[p + "attn.wqkv"] + t[p + "attn.bqkv"]
            q, k, v = np.split(qkv, 3, axis=-1)
            q = q.reshape(n, h, dh).transpose(1, 0, 2)
            k = k.reshape(n, h, dh).transpose(1, 0, 2)
            v = v.reshape(n, h, dh).transpose(1, 0, 2)
            scores = q @ k.transpose(0, 2, 1) / math.sqrt(dh) + mask[None]
            scores -= scores.max(axis=-1, keepdims=True)
            att = np.exp(scores)
            att /= att.sum(axis=-1, keepdims=True)
            o = (att @ v).transpose(1, 0, 2).reshape(n, self.cfg.d_model)
            x = x + o @ t[p + "attn.wo"] + t[p + "attn.bo"]
            m = _layer_norm(x, t[p + "ln2.g"], t[p + "ln2.b"])
            m = _gelu(m @ t[p + "mlp.w1"] + t[p + "mlp.b1"])
            x = x + m @ t[p + "mlp.w2"] + t[p + "mlp.b2"]
        x = _layer_norm(x, t["ln_f.g"], t["ln_f.b"])
        return x[-1] @ t["head.w"] + t["head.b"]

    def _label_probs(self, logits: np.ndarray) -> np.ndarray:
        picked = np.array([logits[self.reserved_ids[lab]] for lab in self.label_order])
        picked -= picked.max()
        e = np.exp(picked)
        return e / e.sum()

    # -- prefix conditioning -------------------------------------------

    @property
    def prefix_feature_dim(self) -> int:
        return self.cfg.d_model

    def probs_with_prefix(self, enc: list[np.ndarray],
                          prefix: np.ndarray) -> np.ndarray:
        t = {k: v.astype(np.float64) for k, v in self.tensors().items()}
        prefix = np.asarray(prefix, dtype=np.float64)
        rows = [self._label_probs(self._final_logits(ids, t, prefix=prefix))
                for ids in enc]
        return np.stack(rows, axis=0)
