"""Thresholded NLI metrics, pluggable explanation scorers, and report emission.

The explanation score of a prediction is the mean of the plugged scorers on a
0-100 scale; Acc@tau counts an example only when its label is correct AND its
explanation score reaches tau (closed threshold), so Acc@0 is plain label
accuracy. BERTScore/BLEURT are the intended plug-ins; a deterministic token-F1
surrogate ships so everything runs offline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .corpus import Dataset, NLIExample
from .modelcore import GenerationConfig, TextToTextModel
from .promptkit import SourceMode, parse_prediction, serialize_source

SINGLE_SHOT = "single_shot"
TWO_PASS = "two_pass"
REGIMES = (SINGLE_SHOT, TWO_PASS)

_TERMINAL_PUNCT = ".,!?;:"


class EvalError(ValueError):
    pass


class NoScorers(EvalError):
    pass


class EmptyReference(EvalError):
    pass


class LengthMismatch(EvalError):
    pass


class EmptyEvalSet(EvalError):
    pass


@dataclass
class Prediction:
    """Parsed (label, explanation) from generated text; expl_score is filled
    by scoring and lies in [0, 100]."""

    label: str
    explanation: str
    parse_ok: bool
    expl_score: float | None = None


class ExplanationScorer:
    """Contract: score(candidate, reference) in [0, 100], score(x, x) = 100
    for non-empty x. Scaling to 0-100 is each plug-in's responsibility."""

    name = "abstract"

    def score(self, candidate: str, reference: str) -> float:
        raise NotImplementedError


class TokenF1Scorer(ExplanationScorer):
    """Deterministic surrogate: 100 x unigram F1 over whitespace tokens after
    lowercasing and stripping terminal punctuation."""

    name = "token_f1"

    @staticmethod
    def _tokens(text: str) -> list[str]:
        out = []
        for token in text.lower().split():
            token = token.rstrip(_TERMINAL_PUNCT)
            if token:
                out.append(token)
        return out

    def score(self, candidate: str, reference: str) -> float:
        cand = self._tokens(candidate)
        ref = self._tokens(reference)
        if not cand and not ref:
            return 100.0
        if not cand or not ref:
            return 0.0
        ref_counts: dict[str, int] = {}
        for t in ref:
            ref_counts[t] = ref_counts.get(t, 0) + 1
        overlap = 0
        for t in cand:
            if ref_counts.get(t, 0) > 0:
                ref_counts[t] -= 1
                overlap += 1
        if overlap == 0:
            return 0.0
        precision = overlap / len(cand)
        recall = overlap / len(ref)
        return 100.0 * 2 * precision * recall / (precision + recall)


def surrogate_scorer() -> ExplanationScorer:
    return TokenF1Scorer()


def explanation_score(candidate: str, reference: str, scorers: list[ExplanationScorer]) -> float:
    """Arithmetic mean of the scorer outputs, clamped to [0, 100].

    fsum makes the mean exact, hence invariant to scorer order."""
    if not scorers:
        raise NoScorers("at least one explanation scorer is required")
    if not reference.strip():
        raise EmptyReference("reference explanation must be non-empty")
    mean = math.fsum(s.score(candidate, reference) for s in scorers) / len(scorers)
    return min(100.0, max(0.0, mean))


def acc_at(preds: list[Prediction], gold: list[NLIExample], tau: float) -> float:
    """Fraction with correct label AND explanation score >= tau (closed)."""
    if not 0.0 <= tau <= 100.0:
        raise ValueError(f"tau must be in [0, 100], got {tau}")
    if len(preds) != len(gold):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gold)} gold examples")
    if not preds:
        raise EmptyEvalSet("cannot compute accuracy over zero examples")
    hits = 0
    for pred, example in zip(preds, gold):
        score = pred.expl_score if pred.expl_score is not None else 0.0
        if pred.label == example.label and score >= tau:
            hits += 1
    return hits / len(preds)


@dataclass
class EvalReport:
    acc_at_0: float
    acc_at_50: float
    acc_at_60: float
    per_type_acc: dict[str, float] = field(default_factory=dict)
    n_examples: int = 0
    n_parse_failures: int = 0

    def to_dict(self) -> dict:
        return {
            "acc_at_0": self.acc_at_0,
            "acc_at_50": self.acc_at_50,
            "acc_at_60": self.acc_at_60,
            "per_type_acc": dict(self.per_type_acc),
            "n_examples": self.n_examples,
            "n_parse_failures": self.n_parse_failures,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(
            acc_at_0=d["acc_at_0"],
            acc_at_50=d["acc_at_50"],
            acc_at_60=d["acc_at_60"],
            per_type_acc=dict(d.get("per_type_acc", {})),
            n_examples=d.get("n_examples", 0),
            n_parse_failures=d.get("n_parse_failures", 0),
        )


def predict_single_shot(
    model: TextToTextModel,
    example: NLIExample,
    cfg: GenerationConfig,
    label_vocab: tuple[str, ...],
    source_mode: SourceMode = SourceMode(),
) -> Prediction:
    generated = model.generate(serialize_source(example, source_mode), cfg)
    label, explanation, ok = parse_prediction(generated, label_vocab)
    return Prediction(label=label, explanation=explanation, parse_ok=ok)


def score_predictions(
    preds: list[Prediction],
    gold: list[NLIExample],
    scorers: list[ExplanationScorer],
) -> None:
    """Fill expl_score in place. Examples without a gold explanation score 0:
    an unverifiable explanation never clears a threshold."""
    if len(preds) != len(gold):
        raise LengthMismatch(f"{len(preds)} predictions vs {len(gold)} gold examples")
    for pred, example in zip(preds, gold):
        if example.explanation is None or not example.explanation.strip():
            pred.expl_score = 0.0
        else:
            pred.expl_score = explanation_score(pred.explanation, example.explanation, scorers)


def evaluate(
    model: TextToTextModel,
    dataset: Dataset,
    regime: str = SINGLE_SHOT,
    cfg: GenerationConfig | None = None,
    scorers: list[ExplanationScorer] | None = None,
    source_mode: SourceMode = SourceMode(),
    per_type_tau: float = 0.0,
) -> EvalReport:
    """Generate, parse and score predictions for a whole dataset.

    ``single_shot`` decodes once per example; ``two_pass`` predicts the label
    first and conditions the explanation pass on it. All three Acc@tau values
    and the per-type breakdown come from the same scored predictions.
    """
    if regime not in REGIMES:
        raise ValueError(f"unknown regime {regime!r}")
    if len(dataset) == 0:
        raise EmptyEvalSet("cannot evaluate an empty dataset")
    cfg = cfg or GenerationConfig()
    scorers = scorers if scorers is not None else [surrogate_scorer()]
    label_vocab = dataset.schema.label_vocabulary

    if regime == TWO_PASS:
        from .hifeat import predict_two_pass_batch

        preds = predict_two_pass_batch(
            model, list(dataset), cfg, label_vocab=label_vocab, source_mode=source_mode
        )
    else:
        sources = [serialize_source(e, source_mode) for e in dataset]
        preds = []
        for generated in model.generate_batch(sources, cfg):
            label, explanation, ok = parse_prediction(generated, label_vocab)
            preds.append(Prediction(label=label, explanation=explanation, parse_ok=ok))

    gold = list(dataset)
    score_predictions(preds, gold, scorers)

    per_type: dict[str, float] = {}
    if dataset.schema.has_fig_types:
        by_type: dict[str, tuple[list[Prediction], list[NLIExample]]] = {}
        for pred, example in zip(preds, gold):
            bucket = by_type.setdefault(example.fig_type, ([], []))
            bucket[0].append(pred)
            bucket[1].append(example)
        per_type = {t: acc_at(p, g, per_type_tau) for t, (p, g) in by_type.items()}

    return EvalReport(
        acc_at_0=acc_at(preds, gold, 0.0),
        acc_at_50=acc_at(preds, gold, 50.0),
        acc_at_60=acc_at(preds, gold, 60.0),
        per_type_acc=per_type,
        n_examples=len(preds),
        n_parse_failures=sum(1 for p in preds if not p.parse_ok),
    )


def fmt_pct(ratio: float) -> str:
    """Accuracy ratio as a percentage with two decimals, e.g. 0.9216 -> '92.16'."""
    return f"{100.0 * ratio:.2f}"


def settings_csv(rows: list[tuple[str, EvalReport]]) -> str:
    """CSV with columns [setting, Acc@0, Acc@50, Acc@60], one row per setting."""
    lines = ["setting,acc_at_0,acc_at_50,acc_at_60"]
    for name, report in rows:
        lines.append(
            f"{name},{fmt_pct(report.acc_at_0)},{fmt_pct(report.acc_at_50)},{fmt_pct(report.acc_at_60)}"
        )
    return "\n".join(lines) + "\n"


def per_type_csv(report: EvalReport) -> str:
    """CSV with columns [type, accuracy]."""
    lines = ["type,accuracy"]
    for fig_type, acc in report.per_type_acc.items():
        lines.append(f"{fig_type},{fmt_pct(acc)}")
    return "\n".join(lines) + "\n"
