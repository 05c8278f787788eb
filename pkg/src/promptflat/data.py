"""Datasets and the JSONL / JSON loaders.

Loading is all-or-nothing: any malformed line raises and nothing partial
is returned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from .errors import EmptyDataset, EmptyText, ParseError, UnknownLabel
from .prompts import PromptCandidate, PromptPool, Verbalizer


@dataclass(frozen=True)
class Example:
    text: str
    label: str | None = None


@dataclass(frozen=True)
class Dataset:
    """A list of examples; labels optional per example."""

    examples: tuple[Example, ...]

    def __post_init__(self):
        object.__setattr__(self, "examples", tuple(self.examples))

    def __len__(self) -> int:
        return len(self.examples)

    def __iter__(self):
        return iter(self.examples)

    @property
    def texts(self) -> list[str]:
        return [e.text for e in self.examples]

    @property
    def labels(self) -> list[str | None]:
        return [e.label for e in self.examples]

    @property
    def fully_labeled(self) -> bool:
        return all(e.label is not None for e in self.examples)

    def inputs_only(self) -> "Dataset":
        return Dataset(tuple(Example(e.text) for e in self.examples))

    def require_labels(self) -> "Dataset":
        if not self.examples:
            raise EmptyDataset("dataset is empty")
        if not self.fully_labeled:
            raise UnknownLabel("dataset has unlabeled examples where labels are required")
        return self


def load_dataset(path: str, verbalizer: Verbalizer | None = None) -> Dataset:
    """Read a JSONL file of {"text": ..., "label": optional} objects."""
    examples: list[Example] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            if not raw.strip():
                continue
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(f"bad JSON ({exc.msg})", line=lineno) from None
            if not isinstance(obj, dict) or "text" not in obj:
                raise ParseError("expected an object with a 'text' field", line=lineno)
            text = obj["text"]
            if not isinstance(text, str) or not text.strip():
                raise EmptyText("empty text", line=lineno)
            label = obj.get("label")
            if label is not None:
                if not isinstance(label, str):
                    raise ParseError("label must be a string or null", line=lineno)
                if verbalizer is not None and label not in verbalizer.entries:
                    raise UnknownLabel(f"unknown label {label!r}", line=lineno)
            examples.append(Example(text, label))
    if not examples:
        raise EmptyDataset(f"no examples in {path}")
    return Dataset(tuple(examples))


def load_prompt_pool(path: str, verbalizer: Verbalizer | None = None) -> PromptPool:
    """Read a prompt pool JSON file: {"prompts": [{id, instruction, demos}]}."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON in {path} ({exc.msg})") from None
    if not isinstance(obj, dict) or not isinstance(obj.get("prompts"), list):
        raise ParseError(f"{path}: expected an object with a 'prompts' list")
    prompts: list[PromptCandidate] = []
    for i, entry in enumerate(obj["prompts"]):
        if not isinstance(entry, dict):
            raise ParseError(f"{path}: prompts[{i}] is not an object")
        try:
            pid = entry["id"]
            instruction = entry["instruction"]
        except KeyError as exc:
            raise ParseError(f"{path}: prompts[{i}] missing field {exc}") from None
        if not isinstance(pid, str) or not isinstance(instruction, str):
            raise ParseError(f"{path}: prompts[{i}] id and instruction must be strings")
        demos = []
        for j, demo in enumerate(entry.get("demos", [])):
            if not isinstance(demo, dict) or "text" not in demo or "label" not in demo:
                raise ParseError(f"{path}: prompts[{i}].demos[{j}] needs text and label")
            if verbalizer is not None and demo["label"] not in verbalizer.entries:
                raise UnknownLabel(f"{path}: prompts[{i}].demos[{j}] has unknown label "
                                   f"{demo['label']!r}")
            demos.append((demo["text"], demo["label"]))
        prompts.append(PromptCandidate(pid, instruction, tuple(demos)))
    return PromptPool(tuple(prompts))


def load_verbalizer(path: str) -> Verbalizer:
    """Read a verbalizer JSON file: an object mapping label -> token."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"bad JSON in {path} ({exc.msg})") from None
    if not isinstance(obj, dict) or not all(
            isinstance(k, str) and isinstance(v, str) for k, v in obj.items()):
        raise ParseError(f"{path}: expected an object of label -> token strings")
    return Verbalizer(dict(obj))
