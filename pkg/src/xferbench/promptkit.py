"""Serialization of examples into source/target text and parsing of model output.

The template strings below are the frozen wire format of the framework
(two spaces between the hypothesis and "premise:"). They are recorded in
every run manifest for auditability.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import NLIExample

STANDARD = "standard"
HYPOTHESIS_ONLY = "hypothesis_only"
PREMISE_ONLY = "premise_only"
SECOND_PASS_WITH_LABEL = "second_pass_with_label"

SOURCE_VARIANTS = (STANDARD, HYPOTHESIS_ONLY, PREMISE_ONLY, SECOND_PASS_WITH_LABEL)

SOURCE_TEMPLATE = "figurative hypothesis: {hypothesis}  premise: {premise}"
HYPOTHESIS_ONLY_TEMPLATE = "figurative hypothesis: {hypothesis}"
PREMISE_ONLY_TEMPLATE = "premise: {premise}"
SECOND_PASS_TEMPLATE = "{label} figurative hypothesis: {hypothesis}  premise: {premise}"
TARGET_TEMPLATE = "{label} explanation: {explanation}"
TARGET_LABEL_ONLY_TEMPLATE = "{label}"

EXPLANATION_SEPARATOR = " explanation: "


class PromptError(ValueError):
    pass


class MissingLabel(PromptError):
    pass


class MissingExplanation(PromptError):
    pass


@dataclass(frozen=True)
class PromptPair:
    """Serialized source/target strings fed to a text-to-text model."""

    source_text: str
    target_text: str


@dataclass(frozen=True)
class SourceMode:
    """Which fields enter the source text, plus the injected label for pass 2."""

    variant: str = STANDARD
    injected_label: str | None = None

    def __post_init__(self) -> None:
        if self.variant not in SOURCE_VARIANTS:
            raise PromptError(f"unknown source variant {self.variant!r}")
        if self.variant == SECOND_PASS_WITH_LABEL and self.injected_label is None:
            raise MissingLabel("second-pass source requires an injected label")
        if self.variant != SECOND_PASS_WITH_LABEL and self.injected_label is not None:
            raise PromptError(f"variant {self.variant!r} takes no injected label")


def second_pass(label: str) -> SourceMode:
    return SourceMode(variant=SECOND_PASS_WITH_LABEL, injected_label=label)


def serialize_source(example: NLIExample, mode: SourceMode = SourceMode()) -> str:
    """Render the source text for one example under the given mode."""
    if mode.variant == STANDARD:
        return SOURCE_TEMPLATE.format(hypothesis=example.hypothesis, premise=example.premise)
    if mode.variant == HYPOTHESIS_ONLY:
        return HYPOTHESIS_ONLY_TEMPLATE.format(hypothesis=example.hypothesis)
    if mode.variant == PREMISE_ONLY:
        return PREMISE_ONLY_TEMPLATE.format(premise=example.premise)
    return SECOND_PASS_TEMPLATE.format(
        label=mode.injected_label, hypothesis=example.hypothesis, premise=example.premise
    )


def serialize_target(example: NLIExample, include_explanation: bool) -> str:
    """Render the target text: "{label} explanation: {explanation}" or bare label."""
    if not include_explanation:
        return TARGET_LABEL_ONLY_TEMPLATE.format(label=example.label)
    if example.explanation is None or not example.explanation.strip():
        raise MissingExplanation("example has no explanation to serialize")
    return TARGET_TEMPLATE.format(label=example.label, explanation=example.explanation)


def make_pair(
    example: NLIExample,
    mode: SourceMode = SourceMode(),
    include_explanation: bool = True,
) -> PromptPair:
    return PromptPair(
        source_text=serialize_source(example, mode),
        target_text=serialize_target(example, include_explanation),
    )


def parse_prediction(generated: str, vocab: tuple[str, ...] | list[str]) -> tuple[str, str, bool]:
    """Parse generated text back into (label, explanation, parse_ok).

    Label matching is case-insensitive; the explanation is returned verbatim.
    Never raises on malformed input: the fallback is (first vocab label, full
    generated text, False).
    """
    if not vocab:
        raise ValueError("label vocabulary must be non-empty")
    text = generated.strip()
    lowered = text.lower()
    for label in vocab:
        if lowered == label.lower():
            return label, "", True
        prefix = label.lower() + EXPLANATION_SEPARATOR
        if lowered.startswith(prefix):
            return label, text[len(prefix):], True
    return vocab[0], generated, False


def template_manifest() -> dict[str, str]:
    """The frozen template strings, emitted into every RunManifest."""
    return {
        "source": SOURCE_TEMPLATE,
        "source_hypothesis_only": HYPOTHESIS_ONLY_TEMPLATE,
        "source_premise_only": PREMISE_ONLY_TEMPLATE,
        "source_second_pass": SECOND_PASS_TEMPLATE,
        "target": TARGET_TEMPLATE,
        "target_label_only": TARGET_LABEL_ONLY_TEMPLATE,
    }
