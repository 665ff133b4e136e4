"""Shared fixture builders: tiny corpora, stub models, vocab helpers."""

from __future__ import annotations

import torch

from xferbench.corpus import (
    Dataset,
    NLIExample,
    esnli_schema,
    figlang_schema,
    impli_schema,
)
from xferbench.modelcore import GenerationConfig, TextToTextModel
from xferbench.promptkit import serialize_source, serialize_target
from xferbench.toymodel import Vocabulary

FIG_TYPES = ("Metaphor", "Simile", "Idiom", "CreativeParaphrase", "Sarcasm")


def make_example(
    premise="She was calm.",
    hypothesis="She was like a kitten in a den of coyotes.",
    label="Contradiction",
    explanation="A kitten in a den of coyotes would be scared and not calm.",
    fig_type="Simile",
    source_dataset="figlang",
) -> NLIExample:
    return NLIExample(
        premise=premise,
        hypothesis=hypothesis,
        label=label,
        explanation=explanation,
        fig_type=fig_type,
        source_dataset=source_dataset,
    )


def figlang_dataset(n: int = 16) -> Dataset:
    subjects = [
        "river", "clock", "garden", "engine", "letter", "market", "bridge", "lantern",
        "orchard", "harbor", "mirror", "signal", "meadow", "anchor", "furnace", "compass",
        "valley", "window", "kettle", "ribbon",
    ]
    examples = []
    for i in range(n):
        s = subjects[i % len(subjects)]
        day = i // len(subjects)
        label = "Entailment" if i % 2 == 0 else "Contradiction"
        explanation = (
            f"a quiet {s} keeps a steady pace"
            if label == "Entailment"
            else f"a quiet {s} breaks its usual pace"
        )
        examples.append(
            NLIExample(
                premise=f"on day {day} the {s} was quiet",
                hypothesis=f"the {s} kept its usual pace",
                label=label,
                explanation=explanation,
                fig_type=FIG_TYPES[i % 5],
            )
        )
    return Dataset.from_examples(examples, figlang_schema())


def esnli_dataset(n: int = 8) -> Dataset:
    examples = []
    for i in range(n):
        label = "Entailment" if i % 2 == 0 else "Contradiction"
        examples.append(
            NLIExample(
                premise=f"the painter finished wall {i}",
                hypothesis=f"wall {i} is painted",
                label=label,
                explanation=f"finishing wall {i} means it is painted"
                if label == "Entailment"
                else f"wall {i} stayed unpainted despite the work",
            )
        )
    return Dataset.from_examples(examples, esnli_schema())


def impli_dataset(n: int = 8) -> Dataset:
    examples = []
    for i in range(n):
        label = "Entailment" if i % 2 == 0 else "Contradiction"
        examples.append(
            NLIExample(
                premise=f"the runner crossed line {i}",
                hypothesis=f"line {i} was crossed",
                label=label,
            )
        )
    return Dataset.from_examples(examples, impli_schema())


def vocab_for(*datasets: Dataset) -> Vocabulary:
    texts = []
    for ds in datasets:
        for e in ds:
            texts.append(serialize_source(e))
            texts.append(serialize_target(e, ds.schema.has_explanations))
    return Vocabulary.from_texts(texts)


class CannedModel(TextToTextModel):
    """Non-trainable stub: generates from a source->output mapping and returns
    a fixed loss. Useful for exercising the harness without training."""

    backend_id = "canned"

    def __init__(self, outputs: dict[str, str], default: str = "", loss: float = 1.0):
        self.outputs = dict(outputs)
        self.default = default
        self.loss = loss

    def compute_loss(self, source: str, target: str) -> torch.Tensor:
        return torch.tensor(self.loss, dtype=torch.float64, requires_grad=True)

    def generate(self, source: str, cfg: GenerationConfig) -> str:
        return self.outputs.get(source, self.default)

    def named_parameters(self):
        return iter(())

    @property
    def vocab_hash(self) -> str:
        return "canned"

    def config_dict(self) -> dict:
        return {}


def perfect_model(dataset: Dataset) -> CannedModel:
    """Stub that answers every (standard or second-pass) source with the gold
    target, so evaluation metrics should all come out 1.0."""
    from xferbench.promptkit import second_pass

    outputs = {}
    for e in dataset:
        target = serialize_target(e, dataset.schema.has_explanations)
        outputs[serialize_source(e)] = target
        for label in dataset.schema.label_vocabulary:
            outputs[serialize_source(e, second_pass(label))] = serialize_target(e, True) if dataset.schema.has_explanations else target
    return CannedModel(outputs)


class FixedLossModel(TextToTextModel):
    """Stub whose compute_loss returns preselected values in call order, for
    exact weighted-sum arithmetic checks."""

    backend_id = "fixed"

    def __init__(self, losses: list[float], generated: str = "Entailment"):
        self.losses = list(losses)
        self.calls: list[tuple[str, str]] = []
        self.generated = generated

    def compute_loss(self, source: str, target: str) -> torch.Tensor:
        self.calls.append((source, target))
        value = self.losses.pop(0)
        return torch.tensor(value, dtype=torch.float64, requires_grad=True)

    def compute_loss_batch(self, pairs):
        self.calls.extend(pairs)
        value = self.losses.pop(0)
        return torch.tensor(value, dtype=torch.float64, requires_grad=True)

    def generate(self, source: str, cfg: GenerationConfig) -> str:
        return self.generated

    def named_parameters(self):
        return iter(())

    @property
    def vocab_hash(self) -> str:
        return "fixed"

    def config_dict(self) -> dict:
        return {}
