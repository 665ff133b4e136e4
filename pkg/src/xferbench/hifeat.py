"""Hierarchical feature-pipeline MTL: a two-pass training step through shared
parameters.

Pass 1 predicts the label from the standard source; pass 2 generates the
explanation from a source that carries the label as an input feature (the
decoded token, not its probabilities). The step's loss is the weighted sum
w_label * label_loss + w_expl * expl_loss, trained under a two-phase schedule
that first emphasizes the label (w_label = 0.9) and then the explanation
(w_expl = 0.9). Both losses differentiate into the same parameter store; no
gradient flows through the discrete label text.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import torch

from .corpus import DEFAULT_LABELS, Dataset, NLIExample
from .evalharness import ExplanationScorer, Prediction, surrogate_scorer
from .modelcore import GenerationConfig, TextToTextModel
from .promptkit import (
    MissingExplanation,
    SourceMode,
    parse_prediction,
    second_pass,
    serialize_source,
    serialize_target,
)
from .sft import Stage, TrainConfig, TrainingHistory, _check_stage, run_phase

LABEL_GOLD = "gold"
LABEL_PREDICTED = "predicted"
LABEL_SOURCES = (LABEL_GOLD, LABEL_PREDICTED)


@dataclass(frozen=True)
class PhaseWeights:
    """Weight on the inference (label) loss; the explanation weight is its
    complement so the two always sum to one."""

    w_label: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.w_label <= 1.0:
            raise ValueError(f"w_label must be in [0, 1], got {self.w_label}")

    @property
    def w_expl(self) -> float:
        return 1.0 - self.w_label


@dataclass
class TwoPassBatchResult:
    label_loss: torch.Tensor
    expl_loss: torch.Tensor
    combined_loss: torch.Tensor
    label_source_used: str


def _conditioning_labels(
    model: TextToTextModel,
    examples: Sequence[NLIExample],
    label_source: str,
    gen_cfg: GenerationConfig,
    label_vocab: tuple[str, ...],
    source_mode: SourceMode,
) -> list[str]:
    if label_source == LABEL_GOLD:
        return [e.label for e in examples]
    generations = model.generate_batch([serialize_source(e, source_mode) for e in examples], gen_cfg)
    return [parse_prediction(g, label_vocab)[0] for g in generations]


def forward_two_pass(
    model: TextToTextModel,
    example: NLIExample,
    weights: PhaseWeights,
    label_source: str = LABEL_GOLD,
    gen_cfg: GenerationConfig | None = None,
    label_vocab: tuple[str, ...] = DEFAULT_LABELS,
    source_mode: SourceMode = SourceMode(),
) -> TwoPassBatchResult:
    """Both passes of one training step for a single example.

    Pass 2's source carries the conditioning label (gold, or the label parsed
    from the model's own pass-1 generation); its target always pairs the gold
    label with the gold explanation.
    """
    return two_pass_losses(
        model, [example], weights, label_source, gen_cfg, label_vocab, source_mode
    )


def two_pass_losses(
    model: TextToTextModel,
    examples: Sequence[NLIExample],
    weights: PhaseWeights,
    label_source: str = LABEL_GOLD,
    gen_cfg: GenerationConfig | None = None,
    label_vocab: tuple[str, ...] = DEFAULT_LABELS,
    source_mode: SourceMode = SourceMode(),
) -> TwoPassBatchResult:
    """Batched two-pass forward; per-example semantics match forward_two_pass."""
    if label_source not in LABEL_SOURCES:
        raise ValueError(f"unknown label source {label_source!r}")
    for e in examples:
        if e.explanation is None or not e.explanation.strip():
            raise MissingExplanation("two-pass training requires gold explanations")
    gen_cfg = gen_cfg or GenerationConfig(num_beams=1)

    pass1_pairs = [
        (serialize_source(e, source_mode), serialize_target(e, include_explanation=False))
        for e in examples
    ]
    label_loss = model.compute_loss_batch(pass1_pairs)

    labels = _conditioning_labels(model, examples, label_source, gen_cfg, label_vocab, source_mode)
    pass2_pairs = [
        (serialize_source(e, second_pass(lbl)), serialize_target(e, include_explanation=True))
        for e, lbl in zip(examples, labels)
    ]
    expl_loss = model.compute_loss_batch(pass2_pairs)

    combined = weights.w_label * label_loss + weights.w_expl * expl_loss
    return TwoPassBatchResult(
        label_loss=label_loss,
        expl_loss=expl_loss,
        combined_loss=combined,
        label_source_used=label_source,
    )


def default_phase_plan(
    stages: Sequence[Stage],
    data: Mapping[str, tuple[Dataset, Dataset]],
) -> list[list[tuple[PhaseWeights, int]]]:
    """Two phases (0.9 label, then 0.9 explanation) for explanation-bearing
    stages, each running the stage's epoch budget; one pass-1-only phase for
    label-only stages."""
    plan = []
    for stage in stages:
        train, _ = data[stage.dataset_id]
        if train.schema.has_explanations:
            plan.append([(PhaseWeights(0.9), stage.epochs), (PhaseWeights(0.1), stage.epochs)])
        else:
            plan.append([(PhaseWeights(1.0), stage.epochs)])
    return plan


def run_hifeat(
    model: TextToTextModel,
    stages: Sequence[Stage],
    data: Mapping[str, tuple[Dataset, Dataset]],
    train_cfg: TrainConfig = TrainConfig(),
    phase_plan: Sequence[Sequence[tuple[PhaseWeights, int]]] | None = None,
    label_source: str = LABEL_GOLD,
    scorers: list[ExplanationScorer] | None = None,
    run_dir: str | Path | None = None,
) -> tuple[TextToTextModel, TrainingHistory]:
    """Train through the stages with the two-pass step and per-phase weights.

    Sequencing and checkpoint selection mirror run_sft, applied per phase:
    each phase starts a fresh optimizer and ends by reloading its best epoch
    under the stage's selection metric. Dev evaluation uses the two-pass
    prediction path on explanation-bearing stages and single-shot on
    label-only stages (whose training is pass-1-only).
    """
    if label_source not in LABEL_SOURCES:
        raise ValueError(f"unknown label source {label_source!r}")
    scorers = scorers if scorers is not None else [surrogate_scorer()]
    run_dir = Path(run_dir) if run_dir is not None else None
    plan = list(phase_plan) if phase_plan is not None else default_phase_plan(stages, data)
    if len(plan) != len(stages):
        raise ValueError(f"phase plan covers {len(plan)} stages, expected {len(stages)}")

    history = TrainingHistory()
    for stage_index, (stage, stage_phases) in enumerate(zip(stages, plan)):
        train, dev = _check_stage(stage, data)
        has_expl = train.schema.has_explanations
        if not has_expl:
            if len(stage_phases) != 1 or stage_phases[0][0].w_label != 1.0:
                raise ValueError(
                    f"stage {stage.dataset_id!r} has no explanations; it must run "
                    f"pass-1-only with weights (1, 0)"
                )
        label_vocab = train.schema.label_vocabulary

        epoch_offset = 0
        for phase, (weights, epochs) in enumerate(stage_phases):
            if has_expl:

                def step_fn(
                    batch_idx: list[int], _w=weights
                ) -> tuple[torch.Tensor, dict[str, float]]:
                    batch = [train[i] for i in batch_idx]
                    result = two_pass_losses(
                        model,
                        batch,
                        _w,
                        label_source=label_source,
                        gen_cfg=train_cfg.gen,
                        label_vocab=label_vocab,
                        source_mode=train_cfg.source_mode,
                    )
                    return result.combined_loss, {
                        "label_loss": float(result.label_loss.detach()),
                        "expl_loss": float(result.expl_loss.detach()),
                        "w_label": _w.w_label,
                    }

                def dev_loss_fn(_w=weights, _dev=dev) -> float:
                    # Dev loss under this regime is the phase's own objective
                    # (gold-conditioned two-pass weighted sum), so dev_loss
                    # selection tracks what training optimizes.
                    with torch.no_grad():
                        total = 0.0
                        for i in range(0, len(_dev), train_cfg.batch_size):
                            chunk = list(_dev)[i : i + train_cfg.batch_size]
                            result = two_pass_losses(
                                model,
                                chunk,
                                _w,
                                label_source=LABEL_GOLD,
                                gen_cfg=train_cfg.gen,
                                label_vocab=label_vocab,
                                source_mode=train_cfg.source_mode,
                            )
                            total += float(result.combined_loss.detach()) * len(chunk)
                        return total / len(_dev)

            else:
                pass1_pairs = [
                    (
                        serialize_source(e, train_cfg.source_mode),
                        serialize_target(e, include_explanation=False),
                    )
                    for e in train
                ]

                def step_fn(
                    batch_idx: list[int], _w=weights, _pairs=pass1_pairs
                ) -> tuple[torch.Tensor, dict[str, float]]:
                    label_loss = model.compute_loss_batch([_pairs[i] for i in batch_idx])
                    # w_label is exactly 1.0 here, so this multiplication is
                    # bitwise neutral and the trajectory matches plain SFT.
                    combined = _w.w_label * label_loss
                    return combined, {
                        "label_loss": float(label_loss.detach()),
                        "expl_loss": 0.0,
                        "w_label": _w.w_label,
                    }

                # Pass-1-only stages keep the default single-pass dev loss;
                # it is the same computation SFT performs on this data.
                dev_loss_fn = None

            run_phase(
                model,
                stage=stage,
                stage_index=stage_index,
                phase=phase,
                epochs=epochs,
                epoch_offset=epoch_offset,
                train=train,
                dev=dev,
                cfg=train_cfg,
                scorers=scorers,
                history=history,
                step_fn=step_fn,
                eval_regime="two_pass" if has_expl else "single_shot",
                run_dir=run_dir,
                dev_loss_fn=dev_loss_fn,
            )
            epoch_offset += epochs
    return model, history


def predict_two_pass(
    model: TextToTextModel,
    example: NLIExample,
    cfg: GenerationConfig,
    label_vocab: tuple[str, ...] = DEFAULT_LABELS,
    source_mode: SourceMode = SourceMode(),
) -> Prediction:
    """Inference path of the pipeline: label first, then the explanation
    conditioned on exactly the generated label token. Never raises on
    malformed generations; parse fallbacks apply."""
    return predict_two_pass_batch(model, [example], cfg, label_vocab, source_mode)[0]


def predict_two_pass_batch(
    model: TextToTextModel,
    examples: Sequence[NLIExample],
    cfg: GenerationConfig,
    label_vocab: tuple[str, ...] = DEFAULT_LABELS,
    source_mode: SourceMode = SourceMode(),
) -> list[Prediction]:
    pass1 = model.generate_batch([serialize_source(e, source_mode) for e in examples], cfg)
    parsed1 = [parse_prediction(g, label_vocab) for g in pass1]
    pass2 = model.generate_batch(
        [serialize_source(e, second_pass(lbl)) for e, (lbl, _, _) in zip(examples, parsed1)], cfg
    )
    preds = []
    for (label, _, ok1), generated in zip(parsed1, pass2):
        _, explanation, ok2 = parse_prediction(generated, label_vocab)
        preds.append(Prediction(label=label, explanation=explanation, parse_ok=ok1 and ok2))
    return preds
