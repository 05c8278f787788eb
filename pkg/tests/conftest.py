"""Shared fixtures: a small fitted backend and its toy corpus."""

from __future__ import annotations

import pytest

from promptflat.data import Dataset, Example
from promptflat.models.logistic import LogisticBagConfig, fit_logistic
from promptflat.prompts import PromptCandidate, PromptPool, Verbalizer


@pytest.fixture(scope="session")
def verbalizer():
    return Verbalizer({"negative": "bad", "positive": "good"})


@pytest.fixture(scope="session")
def toy_train():
    rows = [
        ("great fresh movie", "positive"),
        ("superb warm story", "positive"),
        ("brilliant joyful cast", "positive"),
        ("charming crisp scene", "positive"),
        ("dull stale movie", "negative"),
        ("messy wooden story", "negative"),
        ("tired bland cast", "negative"),
        ("clumsy grim scene", "negative"),
    ]
    return Dataset(tuple(Example(t, l) for t, l in rows))


@pytest.fixture(scope="session")
def toy_inputs():
    texts = ("fresh joyful plot", "stale clumsy plot",
             "warm elegant tone", "hollow tedious tone")
    return Dataset(tuple(Example(t) for t in texts))


@pytest.fixture(scope="session")
def toy_labeled():
    rows = [
        ("fresh joyful plot", "positive"),
        ("warm elegant tone", "positive"),
        ("stale clumsy plot", "negative"),
        ("hollow tedious tone", "negative"),
    ]
    return Dataset(tuple(Example(t, l) for t, l in rows))


@pytest.fixture(scope="session")
def logistic_model(toy_train, verbalizer):
    cfg = LogisticBagConfig(vocab_size=64, l2=1e-3, train_epochs=200,
                            learning_rate=0.5, seed=0)
    return fit_logistic(toy_train, cfg, verbalizer)


@pytest.fixture(scope="session")
def three_demo_prompt():
    return PromptCandidate(
        "p3", "Give the sentiment .",
        (("great fun", "positive"), ("dull mess", "negative"),
         ("warm story", "positive")))


@pytest.fixture(scope="session")
def small_pool(three_demo_prompt):
    terse = PromptCandidate("p0", "Sentiment ?", ())
    skew = PromptCandidate(
        "p9", "Rate the text .",
        (("great great fun", "positive"), ("superb fresh take", "positive")))
    return PromptPool((terse, three_demo_prompt, skew))
