"""Prompt candidates, verbalizers, and the fixed rendering template.

A prompt is rendered in front of an input as::

    {instruction}\\n\\n{demo text}\\n{demo verbalizer token}\\n\\n ... {input text}\\n

The template is part of the package contract: textual perturbations and
the dedupe rule for sensitivity sets are defined on rendered text.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import DuplicateId, UnknownLabel


@dataclass(frozen=True)
class Verbalizer:
    """Maps label names to the surface token that stands for them."""

    entries: dict[str, str]

    def __post_init__(self):
        if len(self.entries) < 2:
            raise UnknownLabel("verbalizer needs at least 2 labels")
        tokens = list(self.entries.values())
        if len(set(tokens)) != len(tokens):
            raise UnknownLabel("verbalizer tokens must be distinct")
        for label, token in self.entries.items():
            if not label or not token.strip():
                raise UnknownLabel(f"bad verbalizer entry {label!r} -> {token!r}")

    @property
    def labels(self) -> tuple[str, ...]:
        """Label names in canonical (sorted) order."""
        return tuple(sorted(self.entries))

    @property
    def n_labels(self) -> int:
        return len(self.entries)

    def token_for(self, label: str) -> str:
        try:
            return self.entries[label]
        except KeyError:
            raise UnknownLabel(f"label {label!r} not in verbalizer") from None

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise UnknownLabel(f"label {label!r} not in verbalizer") from None


@dataclass(frozen=True)
class PromptCandidate:
    """An instruction plus an ordered list of (text, label) demonstrations."""

    id: str
    instruction: str
    demos: tuple[tuple[str, str], ...] = ()

    def __post_init__(self):
        if not self.id:
            raise DuplicateId("prompt id must be non-empty")
        object.__setattr__(self, "demos", tuple((t, l) for t, l in self.demos))


def render_prompt_block(prompt: PromptCandidate, verbalizer: Verbalizer) -> str:
    """The prompt-only prefix: instruction and verbalized demonstrations."""
    parts = [prompt.instruction, "\n\n"]
    for text, label in prompt.demos:
        parts.append(f"{text}\n{verbalizer.token_for(label)}\n\n")
    return "".join(parts)


def render_example(prompt: PromptCandidate | None, verbalizer: Verbalizer,
                   input_text: str) -> str:
    """Full model input for one example; prompt=None means bare input."""
    if prompt is None:
        return input_text + "\n"
    return render_prompt_block(prompt, verbalizer) + input_text + "\n"


@dataclass(frozen=True)
class PromptPool:
    prompts: tuple[PromptCandidate, ...]

    def __post_init__(self):
        object.__setattr__(self, "prompts", tuple(self.prompts))
        if len(self.prompts) < 2:
            raise DuplicateId("prompt pool needs at least 2 candidates")
        ids = [p.id for p in self.prompts]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise DuplicateId(f"duplicate prompt ids: {dupes}")

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(p.id for p in self.prompts)

    def __len__(self) -> int:
        return len(self.prompts)

    def __iter__(self):
        return iter(self.prompts)

    def get(self, prompt_id: str) -> PromptCandidate:
        for p in self.prompts:
            if p.id == prompt_id:
                return p
        raise KeyError(prompt_id)
