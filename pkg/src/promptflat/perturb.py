"""Parameter-space and prompt-space perturbations.

Gaussian draws are a pure function of (master_seed, sample_index, dim):
sample i always sees the same vector no matter how many samples run, in
what order, or on how many threads.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import (DimensionMismatch, InstructionTooShort, NotEnoughOrderings)
from .prompts import PromptCandidate, Verbalizer, render_prompt_block
from .seeding import rng_from

EDIT_KINDS = ("drop_token", "swap_adjacent")


@dataclass(frozen=True)
class PerturbationConfig:
    n_samples: int = 5
    sigma2: float = 1e-4
    master_seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise DimensionMismatch("n_samples must be at least 1")
        if self.sigma2 < 0:
            raise DimensionMismatch("sigma2 must be non-negative")


def sample_gaussian(dim: int, cfg: PerturbationConfig, sample_index: int) -> np.ndarray:
    """The sample_index-th N(0, sigma2 I) draw of the configured stream."""
    if not 0 <= sample_index < cfg.n_samples:
        raise DimensionMismatch(
            f"sample_index {sample_index} outside [0, {cfg.n_samples})")
    if dim < 1:
        raise DimensionMismatch("dim must be positive")
    if cfg.sigma2 == 0.0:
        return np.zeros(dim)
    rng = rng_from(cfg.master_seed, "gauss", sample_index)
    return rng.standard_normal(dim) * math.sqrt(cfg.sigma2)


def _distinct_ordering_count(demos: tuple) -> int:
    counts = Counter(demos)
    total = math.factorial(len(demos))
    for c in counts.values():
        total //= math.factorial(c)
    return total


def demo_permutations(prompt: PromptCandidate, k: int,
                      seed: int) -> list[PromptCandidate]:
    """k distinct demo reorderings, none equal to the original order.

    Orderings that render identically (possible with duplicate demos)
    count once. Deterministic given seed.
    """
    demos = prompt.demos
    if len(demos) < 2:
        raise NotEnoughOrderings("need at least 2 demonstrations to permute")
    if k < 1:
        raise DimensionMismatch("k must be at least 1")
    available = _distinct_ordering_count(demos) - 1
    if k > available:
        raise NotEnoughOrderings(
            f"asked for {k} orderings but only {available} distinct "
            f"non-identity orderings exist")

    rng = rng_from(seed, "demo-perm")
    seen = {demos}
    picked: list[tuple] = []
    if _distinct_ordering_count(demos) <= 5040:
        options: list[tuple] = []
        for perm in itertools.permutations(demos):
            if perm not in seen:
                seen.add(perm)
                options.append(perm)
        idx = rng.choice(len(options), size=k, replace=False)
        picked = [options[i] for i in sorted(idx)]
    else:
        while len(picked) < k:
            order = rng.permutation(len(demos))
            perm = tuple(demos[i] for i in order)
            if perm not in seen:
                seen.add(perm)
                picked.append(perm)
    return [PromptCandidate(f"{prompt.id}~perm{i}", prompt.instruction, perm)
            for i, perm in enumerate(picked)]


def instruction_edits(prompt: PromptCandidate, m: int, seed: int,
                      kinds: tuple[str, ...] = EDIT_KINDS) -> list[PromptCandidate]:
    """m single-edit instruction variants (token drop or adjacent swap).

    Variants are sampled with replacement from the edits that actually
    change the text, so each one differs from the original. Instructions
    are treated as whitespace token lists and re-joined with single spaces.
    """
    kinds = tuple(kinds)
    if not kinds or any(kname not in EDIT_KINDS for kname in kinds):
        raise DimensionMismatch(f"edit kinds must be a subset of {EDIT_KINDS}")
    if m < 1:
        raise DimensionMismatch("m must be at least 1")
    tokens = prompt.instruction.split()
    if len(tokens) < 2:
        raise InstructionTooShort("instruction needs at least 2 tokens to edit")

    effective: list[tuple[str, int]] = []
    if "drop_token" in kinds:
        effective += [("drop_token", i) for i in range(len(tokens))]
    if "swap_adjacent" in kinds:
        effective += [("swap_adjacent", i) for i in range(len(tokens) - 1)
                      if tokens[i] != tokens[i + 1]]
    if not effective:
        raise InstructionTooShort("no text-changing edit exists for this instruction")

    rng = rng_from(seed, "instr-edit")
    out = []
    for j in range(m):
        kind, pos = effective[rng.integers(len(effective))]
        edited = list(tokens)
        if kind == "drop_token":
            del edited[pos]
        else:
            edited[pos], edited[pos + 1] = edited[pos + 1], edited[pos]
        out.append(PromptCandidate(f"{prompt.id}~edit{j}", " ".join(edited),
                                   prompt.demos))
    return out


@dataclass(frozen=True)
class SensitivitySetConfig:
    k_permutations: int = 8
    m_edits: int = 8
    edit_kinds: tuple[str, ...] = EDIT_KINDS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "edit_kinds", tuple(self.edit_kinds))
        if self.k_permutations < 0 or self.m_edits < 0:
            raise DimensionMismatch("perturbation counts must be non-negative")
        if self.k_permutations == 0 and self.m_edits == 0:
            raise DimensionMismatch("sensitivity set would be empty")


def build_sensitivity_set(prompt: PromptCandidate, cfg: SensitivitySetConfig,
                          verbalizer: Verbalizer) -> list[PromptCandidate]:
    """Permutations then edits, deduplicated by rendered prompt text.

    The permutation request adapts to the prompt: prompts with fewer
    than 2 demos contribute no permutations, and a demo multiset with
    fewer than k distinct non-identity orderings contributes all of
    them. The original prompt never appears in the result; duplicates
    keep their first occurrence, so the result has at most k + m
    members.
    """
    variants: list[PromptCandidate] = []
    if cfg.k_permutations > 0 and len(prompt.demos) >= 2:
        available = _distinct_ordering_count(prompt.demos) - 1
        k = min(cfg.k_permutations, available)
        if k > 0:
            variants += demo_permutations(prompt, k, seed=cfg.seed)
    if cfg.m_edits > 0:
        variants += instruction_edits(prompt, cfg.m_edits, seed=cfg.seed,
                                      kinds=cfg.edit_kinds)
    seen = {render_prompt_block(prompt, verbalizer)}
    out = []
    for v in variants:
        key = render_prompt_block(v, verbalizer)
        if key not in seen:
            seen.add(key)
            out.append(v)
    return out
