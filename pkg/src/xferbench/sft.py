"""Sequential fine-tuning: one model trained through an ordered list of dataset
stages, each with its own epoch budget, target format and selection metric.

Checkpointing is per-epoch with post-hoc selection: every stage runs its full
epoch budget, then the epoch maximizing the stage's selection metric (or
minimizing dev loss) becomes the starting point of the next stage. Optimizer
state is reset at stage boundaries; only parameters carry over.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping, Sequence

import torch

from .corpus import Dataset, SchemaMismatch
from .evalharness import EvalError, ExplanationScorer, evaluate, surrogate_scorer
from .modelcore import GenerationConfig, TextToTextModel, make_optimizer, train_step
from .promptkit import SourceMode, make_pair

ACC_AT_0 = "acc_at_0"
ACC_AT_60 = "acc_at_60"
DEV_LOSS = "dev_loss"
SELECTION_METRICS = (ACC_AT_0, ACC_AT_60, DEV_LOSS)


class UnknownDataset(KeyError):
    pass


class UnknownStage(KeyError):
    pass


@dataclass(frozen=True)
class Stage:
    """One training stage: which dataset, for how long, in which target format."""

    dataset_id: str
    epochs: int = 10
    include_explanation: bool = True
    selection_metric: str = ACC_AT_60
    lr: float | None = None

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.selection_metric not in SELECTION_METRICS:
            raise ValueError(f"unknown selection metric {self.selection_metric!r}")


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    batch_size: int = 8
    optimizer: str = "adam"
    seed: int = 0
    source_mode: SourceMode = SourceMode()
    gen: GenerationConfig = field(default_factory=lambda: GenerationConfig(num_beams=1))


@dataclass(frozen=True)
class EpochRecord:
    stage_index: int
    stage_id: str
    epoch: int
    train_loss: float
    dev_loss: float
    dev_acc_at_0: float
    dev_acc_at_50: float
    dev_acc_at_60: float
    phase: int = 0
    label_loss: float | None = None
    expl_loss: float | None = None
    w_label: float | None = None


@dataclass(frozen=True)
class StepRecord:
    stage_index: int
    stage_id: str
    phase: int
    epoch: int
    step: int
    loss: float
    label_loss: float | None = None
    expl_loss: float | None = None
    w_label: float | None = None


@dataclass
class TrainingHistory:
    """Append-only per-epoch records plus the finer-grained per-step log."""

    records: list[EpochRecord] = field(default_factory=list)
    steps: list[StepRecord] = field(default_factory=list)

    def for_stage(self, stage_id: str) -> list[EpochRecord]:
        return [r for r in self.records if r.stage_id == stage_id]

    def to_jsonl(self) -> str:
        """One JSON object per epoch record; byte-stable for identical runs.
        HiFeatMTL extras (label_loss, expl_loss, w_label) appear only when set."""
        lines = []
        for r in self.records:
            row = {
                "stage_index": r.stage_index,
                "stage_id": r.stage_id,
                "epoch": r.epoch,
                "phase": r.phase,
                "train_loss": r.train_loss,
                "dev_loss": r.dev_loss,
                "dev_acc_at_0": r.dev_acc_at_0,
                "dev_acc_at_50": r.dev_acc_at_50,
                "dev_acc_at_60": r.dev_acc_at_60,
            }
            if r.w_label is not None:
                row["label_loss"] = r.label_loss
                row["expl_loss"] = r.expl_loss
                row["w_label"] = r.w_label
            lines.append(json.dumps(row, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")

    def core_jsonl(self) -> str:
        """Regime-independent projection of the per-epoch trajectory, used to
        compare an SFT run against a degenerate HiFeatMTL run bytewise."""
        lines = []
        for r in self.records:
            row = {
                "stage_index": r.stage_index,
                "stage_id": r.stage_id,
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "dev_loss": r.dev_loss,
                "dev_acc_at_0": r.dev_acc_at_0,
                "dev_acc_at_50": r.dev_acc_at_50,
                "dev_acc_at_60": r.dev_acc_at_60,
            }
            lines.append(json.dumps(row, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")

    def steps_jsonl(self) -> str:
        lines = []
        for s in self.steps:
            row = {
                "stage_index": s.stage_index,
                "stage_id": s.stage_id,
                "phase": s.phase,
                "epoch": s.epoch,
                "step": s.step,
                "loss": s.loss,
            }
            if s.w_label is not None:
                row["label_loss"] = s.label_loss
                row["expl_loss"] = s.expl_loss
                row["w_label"] = s.w_label
            lines.append(json.dumps(row, separators=(",", ":")))
        return "\n".join(lines) + ("\n" if lines else "")


def _epoch_order(n: int, seed: int, stage_index: int, phase: int, epoch: int) -> list[int]:
    # String seeding keeps the shuffle independent of everything but
    # (seed, stage, phase, epoch), so regimes sharing this helper see
    # identical batch orders.
    rng = random.Random(f"{seed}:{stage_index}:{phase}:{epoch}")
    order = list(range(n))
    rng.shuffle(order)
    return order


def _batches(order: Sequence[int], batch_size: int) -> list[list[int]]:
    return [list(order[i : i + batch_size]) for i in range(0, len(order), batch_size)]


# A step function consumes the batch's indices into the stage's train set and
# returns the differentiable loss plus any extra floats to log per step.
StepFn = Callable[[list[int]], tuple[torch.Tensor, dict[str, float]]]

# Computes the dev loss for one epoch; regimes with a composite objective
# (two-pass training) substitute their own so checkpoint selection on
# dev_loss tracks what is actually optimized.
DevLossFn = Callable[[], float]


def _dev_loss(
    model: TextToTextModel,
    dev: Dataset,
    include_explanation: bool,
    cfg: TrainConfig,
) -> float:
    pairs = [
        (p.source_text, p.target_text)
        for p in (make_pair(e, cfg.source_mode, include_explanation) for e in dev)
    ]
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(pairs), cfg.batch_size):
            chunk = pairs[i : i + cfg.batch_size]
            total += float(model.compute_loss_batch(chunk)) * len(chunk)
    return total / len(pairs)


def _dev_eval(
    model: TextToTextModel,
    dev: Dataset,
    stage: Stage,
    cfg: TrainConfig,
    scorers: list[ExplanationScorer],
    eval_regime: str,
    dev_loss_fn: DevLossFn | None,
) -> tuple[float, dict[str, float]]:
    if len(dev) == 0:
        raise EvalError(f"stage {stage.dataset_id!r}: dev split is empty")
    report = evaluate(
        model,
        dev,
        regime=eval_regime,
        cfg=cfg.gen,
        scorers=scorers,
        source_mode=cfg.source_mode,
    )
    if dev_loss_fn is not None:
        loss = dev_loss_fn()
    else:
        loss = _dev_loss(model, dev, stage.include_explanation, cfg)
    return loss, {
        ACC_AT_0: report.acc_at_0,
        "acc_at_50": report.acc_at_50,
        ACC_AT_60: report.acc_at_60,
    }


def _select_index(records: Sequence[EpochRecord], metric: str) -> int:
    """Position of the best record; ties break toward the earliest epoch."""
    if metric == DEV_LOSS:
        values = [r.dev_loss for r in records]
        best = min(range(len(values)), key=lambda i: (values[i], i))
    else:
        values = [r.dev_acc_at_0 if metric == ACC_AT_0 else r.dev_acc_at_60 for r in records]
        best = max(range(len(values)), key=lambda i: (values[i], -i))
    return best


def select_checkpoint(history: TrainingHistory, stage_id: str, metric: str) -> int:
    """Epoch index (within the stage) of the best checkpoint for a metric."""
    if metric not in SELECTION_METRICS:
        raise ValueError(f"unknown selection metric {metric!r}")
    records = history.for_stage(stage_id)
    if not records:
        raise UnknownStage(f"no records for stage {stage_id!r}")
    return records[_select_index(records, metric)].epoch


def run_phase(
    model: TextToTextModel,
    *,
    stage: Stage,
    stage_index: int,
    phase: int,
    epochs: int,
    epoch_offset: int,
    train: Dataset,
    dev: Dataset,
    cfg: TrainConfig,
    scorers: list[ExplanationScorer],
    history: TrainingHistory,
    step_fn: StepFn,
    eval_regime: str,
    run_dir: Path | None,
    dev_loss_fn: DevLossFn | None = None,
) -> None:
    """One training phase: fresh optimizer, per-epoch records and snapshots,
    then reload the best epoch by the stage's selection metric."""
    lr = stage.lr if stage.lr is not None else cfg.lr
    optimizer = make_optimizer(model, cfg.optimizer, lr)
    snapshots: list[dict[str, torch.Tensor]] = []
    phase_records: list[EpochRecord] = []
    for local_epoch in range(epochs):
        epoch = epoch_offset + local_epoch
        order = _epoch_order(len(train), cfg.seed, stage_index, phase, local_epoch)
        losses: list[float] = []
        extras_sum: dict[str, float] = {}
        w_label = None
        for step_i, batch_idx in enumerate(_batches(order, cfg.batch_size)):
            loss, extras = step_fn(batch_idx)
            result = train_step(model, loss, lr, optimizer)
            losses.append(result.loss_value)
            w_label = extras.get("w_label", w_label)
            for key, value in extras.items():
                if key != "w_label":
                    extras_sum[key] = extras_sum.get(key, 0.0) + value
            history.steps.append(
                StepRecord(
                    stage_index=stage_index,
                    stage_id=stage.dataset_id,
                    phase=phase,
                    epoch=epoch,
                    step=step_i,
                    loss=result.loss_value,
                    label_loss=extras.get("label_loss"),
                    expl_loss=extras.get("expl_loss"),
                    w_label=extras.get("w_label"),
                )
            )
        n_steps = len(losses)
        dev_loss, dev_metrics = _dev_eval(model, dev, stage, cfg, scorers, eval_regime, dev_loss_fn)
        record = EpochRecord(
            stage_index=stage_index,
            stage_id=stage.dataset_id,
            epoch=epoch,
            train_loss=sum(losses) / n_steps,
            dev_loss=dev_loss,
            dev_acc_at_0=dev_metrics[ACC_AT_0],
            dev_acc_at_50=dev_metrics["acc_at_50"],
            dev_acc_at_60=dev_metrics[ACC_AT_60],
            phase=phase,
            label_loss=extras_sum.get("label_loss", 0.0) / n_steps if extras_sum else None,
            expl_loss=extras_sum.get("expl_loss", 0.0) / n_steps if extras_sum else None,
            w_label=w_label,
        )
        history.records.append(record)
        phase_records.append(record)
        snapshots.append(model.snapshot_state())
        if run_dir is not None:
            from .modelcore import save_checkpoint

            save_checkpoint(
                model,
                Path(run_dir)
                / "checkpoints"
                / f"stage{stage_index}_{stage.dataset_id}"
                / f"epoch{epoch:03d}",
            )
    best = _select_index(phase_records, stage.selection_metric)
    model.load_state(snapshots[best])


def _check_stage(stage: Stage, data: Mapping[str, tuple[Dataset, Dataset]]) -> tuple[Dataset, Dataset]:
    if stage.dataset_id not in data:
        raise UnknownDataset(f"stage references unknown dataset {stage.dataset_id!r}")
    train, dev = data[stage.dataset_id]
    if stage.include_explanation != train.schema.has_explanations:
        raise SchemaMismatch(
            f"stage {stage.dataset_id!r}: include_explanation={stage.include_explanation} "
            f"conflicts with schema {train.schema.name!r} "
            f"(has_explanations={train.schema.has_explanations})"
        )
    return train, dev


def run_sft(
    model: TextToTextModel,
    stages: Sequence[Stage],
    data: Mapping[str, tuple[Dataset, Dataset]],
    train_cfg: TrainConfig = TrainConfig(),
    scorers: list[ExplanationScorer] | None = None,
    run_dir: str | Path | None = None,
) -> tuple[TextToTextModel, TrainingHistory]:
    """Fine-tune through the stages strictly in order on one parameter store."""
    scorers = scorers if scorers is not None else [surrogate_scorer()]
    run_dir = Path(run_dir) if run_dir is not None else None
    history = TrainingHistory()
    for stage_index, stage in enumerate(stages):
        train, dev = _check_stage(stage, data)
        pairs = [
            (p.source_text, p.target_text)
            for p in (
                make_pair(e, train_cfg.source_mode, stage.include_explanation) for e in train
            )
        ]

        def step_fn(batch_idx: list[int], _pairs=pairs) -> tuple[torch.Tensor, dict]:
            return model.compute_loss_batch([_pairs[i] for i in batch_idx]), {}

        run_phase(
            model,
            stage=stage,
            stage_index=stage_index,
            phase=0,
            epochs=stage.epochs,
            epoch_offset=0,
            train=train,
            dev=dev,
            cfg=train_cfg,
            scorers=scorers,
            history=history,
            step_fn=step_fn,
            eval_regime="single_shot",
            run_dir=run_dir,
        )
    return model, history
