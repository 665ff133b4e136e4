"""Config-driven orchestration of complete experiments with persistent,
reproducible artifacts.

Each run gets a fresh directory named {regime}_{sequence}_{mode}_{seed}_{hash8}
under the artifact root (env XFERBENCH_OUT or ./runs). Completed run
directories are never overwritten; re-running the same config creates a
sibling. A manifest is written even when training fails, with the failure
recorded.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from .corpus import SCHEMAS, Dataset, load_dataset, save_dataset, serialize_record, split_dev, truncate
from .evalharness import EvalReport, evaluate, settings_csv, per_type_csv, fmt_pct, surrogate_scorer
from .hifeat import LABEL_SOURCES, PhaseWeights, run_hifeat
from .modelcore import GenerationConfig, TextToTextModel, load_checkpoint, save_checkpoint
from .promptkit import (
    HYPOTHESIS_ONLY,
    PREMISE_ONLY,
    STANDARD,
    SourceMode,
    serialize_source,
    serialize_target,
    template_manifest,
)
from .sft import ACC_AT_0, ACC_AT_60, DEV_LOSS, Stage, TrainConfig, run_sft
from .toymodel import ToyConfig, ToySeq2Seq, Vocabulary

SFT = "sft"
HIFEAT_MTL = "hifeat_mtl"
REGIMES = (SFT, HIFEAT_MTL)

TRAIN_SOURCE_MODES = (STANDARD, HYPOTHESIS_ONLY, PREMISE_ONLY)

ENV_OUT = "XFERBENCH_OUT"
DEFAULT_OUT = "runs"

ABLATION_SETTINGS = (("Regular", STANDARD), ("HypOnly", HYPOTHESIS_ONLY), ("PremOnly", PREMISE_ONLY))


class ConfigError(ValueError):
    pass


class MismatchedEvalSplit(ValueError):
    pass


# Published schema for the flat-keyed JSON config: key -> (type, required, note).
CONFIG_SCHEMA: dict[str, tuple[str, bool, str]] = {
    "regime": ("str", True, "one of: " + ", ".join(REGIMES)),
    "sequence": ("list[str]", True, "dataset ids, final one FigLang-schema"),
    "datasets": ("dict[id -> {path, schema}]", True, "schema one of: " + ", ".join(SCHEMAS)),
    "source_mode": ("str", False, "standard | hypothesis_only | premise_only"),
    "seed": ("int", False, "controls init, shuffling and splits"),
    "model_backend": ("str", False, "registered backend id (default: toy)"),
    "dev_fraction": ("float", False, "per-dataset dev split fraction"),
    "truncate_to_final": ("bool", False, "truncate non-final train sets to |final train|"),
    "truncate_mode": ("str", False, "prefix | sample"),
    "lr": ("float", False, "constant learning rate"),
    "batch_size": ("int", False, ""),
    "optimizer": ("str", False, "adam | sgd"),
    "num_beams": ("int", False, "decoding beams for dev and final evaluation"),
    "max_output_tokens": ("int", False, ""),
    "label_source": ("str", False, "gold | predicted (HiFeatMTL pass-2 conditioning)"),
    "w_label_phase1": ("float", False, "label-loss weight, first HiFeatMTL phase"),
    "w_label_phase2": ("float", False, "label-loss weight, second HiFeatMTL phase"),
    "stage_epochs": ("dict[id -> int]", False, "per-stage epoch overrides"),
    "stage_lr": ("dict[id -> float]", False, "per-stage learning-rate overrides"),
    "stage_metric": ("dict[id -> str]", False, "acc_at_0 | acc_at_60 | dev_loss"),
    "model": ("dict", False, "toy backend dimensions"),
    "setting": ("str", False, "human-readable label for comparison tables"),
}


@dataclass(frozen=True)
class DatasetSpec:
    path: str
    schema: str


@dataclass(frozen=True)
class ExperimentConfig:
    regime: str
    sequence: tuple[str, ...]
    datasets: Mapping[str, DatasetSpec]
    source_mode: str = STANDARD
    seed: int = 0
    model_backend: str = "toy"
    dev_fraction: float = 0.1
    truncate_to_final: bool = True
    truncate_mode: str = "prefix"
    lr: float = 1e-3
    batch_size: int = 8
    optimizer: str = "adam"
    num_beams: int = 1
    max_output_tokens: int = 48
    label_source: str = "gold"
    w_label_phase1: float = 0.9
    w_label_phase2: float = 0.1
    stage_epochs: Mapping[str, int] = field(default_factory=dict)
    stage_lr: Mapping[str, float] = field(default_factory=dict)
    stage_metric: Mapping[str, str] = field(default_factory=dict)
    model: Mapping[str, int] = field(default_factory=dict)
    setting: str | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["sequence"] = list(self.sequence)
        d["datasets"] = {k: dataclasses.asdict(v) for k, v in self.datasets.items()}
        d["setting"] = self.setting_label
        return d

    @property
    def setting_label(self) -> str:
        if self.setting:
            return self.setting
        label = f"{self.regime}:{'->'.join(self.sequence)}"
        if self.source_mode != STANDARD:
            label += f":{self.source_mode}"
        return label

    @property
    def run_name(self) -> str:
        return (
            f"{self.regime}_{'-'.join(self.sequence)}_{self.source_mode}"
            f"_{self.seed}_{config_hash(self)}"
        )


def config_hash(cfg: "ExperimentConfig") -> str:
    """First 8 hex chars of the canonical config hash; key order never matters."""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:8]


def _require(cond: bool, message: str) -> None:
    if not cond:
        raise ConfigError(message)


def validate_config(raw: Mapping) -> ExperimentConfig:
    """Validate a raw (JSON) config dict against the published schema."""
    unknown = set(raw) - set(CONFIG_SCHEMA)
    _require(not unknown, f"unknown config keys: {sorted(unknown)}")
    for key in ("regime", "sequence", "datasets"):
        _require(key in raw, f"missing required config key {key!r}")

    regime = raw["regime"]
    _require(regime in REGIMES, f"regime must be one of {REGIMES}, got {regime!r}")

    sequence = raw["sequence"]
    _require(
        isinstance(sequence, (list, tuple)) and sequence and all(isinstance(s, str) for s in sequence),
        "sequence must be a non-empty list of dataset ids",
    )
    _require(len(set(sequence)) == len(sequence), "sequence must not repeat a dataset id")

    raw_datasets = raw["datasets"]
    _require(isinstance(raw_datasets, Mapping), "datasets must map id -> {path, schema}")
    datasets: dict[str, DatasetSpec] = {}
    for ds_id, spec in raw_datasets.items():
        _require(isinstance(spec, Mapping) and "path" in spec and "schema" in spec,
                 f"dataset {ds_id!r} needs 'path' and 'schema'")
        _require(spec["schema"] in SCHEMAS,
                 f"dataset {ds_id!r}: unknown schema {spec['schema']!r} (one of {sorted(SCHEMAS)})")
        datasets[ds_id] = DatasetSpec(path=str(spec["path"]), schema=spec["schema"])
    for ds_id in sequence:
        _require(ds_id in datasets, f"sequence references undeclared dataset {ds_id!r}")

    final_schema = SCHEMAS[datasets[sequence[-1]].schema]()
    _require(
        final_schema.has_explanations and final_schema.has_fig_types,
        f"final sequence element {sequence[-1]!r} must use the FigLang-style schema "
        f"(explanations + figurative types), got {final_schema.name!r}",
    )

    source_mode = raw.get("source_mode", STANDARD)
    _require(source_mode in TRAIN_SOURCE_MODES,
             f"source_mode must be one of {TRAIN_SOURCE_MODES}, got {source_mode!r}")
    optimizer = raw.get("optimizer", "adam")
    _require(optimizer in ("adam", "sgd"), f"optimizer must be adam or sgd, got {optimizer!r}")
    truncate_mode = raw.get("truncate_mode", "prefix")
    _require(truncate_mode in ("prefix", "sample"),
             f"truncate_mode must be prefix or sample, got {truncate_mode!r}")
    label_source = raw.get("label_source", "gold")
    _require(label_source in LABEL_SOURCES,
             f"label_source must be one of {LABEL_SOURCES}, got {label_source!r}")
    dev_fraction = float(raw.get("dev_fraction", 0.1))
    _require(0.0 <= dev_fraction < 1.0, f"dev_fraction must be in [0, 1), got {dev_fraction}")
    for key in ("lr",):
        _require(float(raw.get(key, 1e-3)) > 0, f"{key} must be positive")
    for key in ("batch_size", "num_beams", "max_output_tokens"):
        default = {"batch_size": 8, "num_beams": 1, "max_output_tokens": 48}[key]
        _require(int(raw.get(key, default)) >= 1, f"{key} must be >= 1")
    for w_key in ("w_label_phase1", "w_label_phase2"):
        default = 0.9 if w_key.endswith("1") else 0.1
        value = float(raw.get(w_key, default))
        _require(0.0 <= value <= 1.0, f"{w_key} must be in [0, 1], got {value}")
    stage_metric = raw.get("stage_metric", {})
    for ds_id, metric in dict(stage_metric).items():
        _require(metric in (ACC_AT_0, ACC_AT_60, DEV_LOSS),
                 f"stage_metric[{ds_id!r}] must be one of acc_at_0/acc_at_60/dev_loss")
    stage_epochs = {k: int(v) for k, v in dict(raw.get("stage_epochs", {})).items()}
    for ds_id, n in stage_epochs.items():
        _require(n >= 1, f"stage_epochs[{ds_id!r}] must be >= 1")

    return ExperimentConfig(
        regime=regime,
        sequence=tuple(sequence),
        datasets=datasets,
        source_mode=source_mode,
        seed=int(raw.get("seed", 0)),
        model_backend=str(raw.get("model_backend", "toy")),
        dev_fraction=dev_fraction,
        truncate_to_final=bool(raw.get("truncate_to_final", True)),
        truncate_mode=truncate_mode,
        lr=float(raw.get("lr", 1e-3)),
        batch_size=int(raw.get("batch_size", 8)),
        optimizer=optimizer,
        num_beams=int(raw.get("num_beams", 1)),
        max_output_tokens=int(raw.get("max_output_tokens", 48)),
        label_source=label_source,
        w_label_phase1=float(raw.get("w_label_phase1", 0.9)),
        w_label_phase2=float(raw.get("w_label_phase2", 0.1)),
        stage_epochs=stage_epochs,
        stage_lr={k: float(v) for k, v in dict(raw.get("stage_lr", {})).items()},
        stage_metric=dict(stage_metric),
        model={k: int(v) for k, v in dict(raw.get("model", {})).items()},
        setting=raw.get("setting"),
    )


def load_config(path: str | Path) -> ExperimentConfig:
    return validate_config(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class RunManifest:
    """Full record of one experiment; written even on failure."""

    setting: str
    config: dict
    templates: dict
    status: str
    eval_split: dict
    eval_report: dict | None = None
    stage_summary: list = field(default_factory=list)
    error: str | None = None
    run_dir: str = ""
    history_path: str = ""
    steps_path: str = ""
    checkpoint_path: str | None = None
    wall_clock_sec: float = 0.0
    framework_version: str = __version__

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "RunManifest":
        return cls(**{f.name: d.get(f.name) for f in dataclasses.fields(cls) if f.name in d})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _artifact_root(out_root: str | Path | None) -> Path:
    if out_root is not None:
        return Path(out_root)
    return Path(os.environ.get(ENV_OUT, DEFAULT_OUT))


def _fresh_run_dir(root: Path, name: str) -> Path:
    """Create a new run directory; existing completed runs are never reused."""
    candidate = root / name
    suffix = 1
    while True:
        try:
            candidate.mkdir(parents=True, exist_ok=False)
            return candidate
        except FileExistsError:
            suffix += 1
            candidate = root / f"{name}__{suffix}"


def _load_stage_data(cfg: ExperimentConfig) -> dict[str, tuple[Dataset, Dataset]]:
    data: dict[str, tuple[Dataset, Dataset]] = {}
    for ds_id in cfg.sequence:
        spec = cfg.datasets[ds_id]
        schema = SCHEMAS[spec.schema]()
        full = load_dataset(spec.path, schema)
        data[ds_id] = split_dev(full, cfg.dev_fraction, cfg.seed)
    if cfg.truncate_to_final:
        target = len(data[cfg.sequence[-1]][0])
        for ds_id in cfg.sequence[:-1]:
            train, dev = data[ds_id]
            data[ds_id] = (truncate(train, target, cfg.truncate_mode, cfg.seed), dev)
    return data


def _build_vocab(data: Mapping[str, tuple[Dataset, Dataset]]) -> Vocabulary:
    texts = []
    for train, dev in data.values():
        for ds in (train, dev):
            for e in ds:
                texts.append(serialize_source(e))
                texts.append(serialize_target(e, ds.schema.has_explanations))
    return Vocabulary.from_texts(texts)


def build_model(cfg: ExperimentConfig, vocab: Vocabulary) -> TextToTextModel:
    if cfg.model_backend != "toy":
        raise ConfigError(f"unknown model backend {cfg.model_backend!r}")
    return ToySeq2Seq(vocab, ToyConfig(**cfg.model), seed=cfg.seed)


def build_stages(cfg: ExperimentConfig, data: Mapping[str, tuple[Dataset, Dataset]]) -> list[Stage]:
    """Default stage parameters per schema family, with config overrides.

    SFT defaults: 3 epochs and Acc@0 selection for label-only stages, 10
    epochs otherwise, with Acc@60 on the final stage and dev loss on
    intermediate explanation stages. HiFeatMTL defaults: 10 epochs everywhere,
    Acc@60 selection on explanation stages (never dev loss).
    """
    stages = []
    final_id = cfg.sequence[-1]
    for ds_id in cfg.sequence:
        schema = data[ds_id][0].schema
        if cfg.regime == SFT:
            epochs = 3 if not schema.has_explanations else 10
            if not schema.has_explanations:
                metric = ACC_AT_0
            elif ds_id == final_id:
                metric = ACC_AT_60
            else:
                metric = DEV_LOSS
        else:
            epochs = 10
            metric = ACC_AT_0 if not schema.has_explanations else ACC_AT_60
        stages.append(
            Stage(
                dataset_id=ds_id,
                epochs=cfg.stage_epochs.get(ds_id, epochs),
                include_explanation=schema.has_explanations,
                selection_metric=cfg.stage_metric.get(ds_id, metric),
                lr=cfg.stage_lr.get(ds_id),
            )
        )
    return stages


def _phase_plan(cfg: ExperimentConfig, stages: Sequence[Stage],
                data: Mapping[str, tuple[Dataset, Dataset]]) -> list[list[tuple[PhaseWeights, int]]]:
    plan = []
    for stage in stages:
        schema = data[stage.dataset_id][0].schema
        if schema.has_explanations:
            plan.append(
                [
                    (PhaseWeights(cfg.w_label_phase1), stage.epochs),
                    (PhaseWeights(cfg.w_label_phase2), stage.epochs),
                ]
            )
        else:
            plan.append([(PhaseWeights(1.0), stage.epochs)])
    return plan


def _eval_split_descriptor(ds_id: str, dev: Dataset) -> dict:
    payload = "".join(serialize_record(e) + "\n" for e in dev)
    return {
        "dataset_id": ds_id,
        "split": "dev",
        "n_examples": len(dev),
        "sha256": hashlib.sha256(payload.encode("utf-8")).hexdigest(),
    }


def run_experiment(cfg: ExperimentConfig | Mapping, out_root: str | Path | None = None) -> RunManifest:
    """Execute one configured experiment end to end and persist its artifacts."""
    if not isinstance(cfg, ExperimentConfig):
        cfg = validate_config(cfg)
    t0 = time.time()

    # Everything that can fail from a bad config happens before the run dir exists.
    data = _load_stage_data(cfg)
    vocab = _build_vocab(data)
    model = build_model(cfg, vocab)
    stages = build_stages(cfg, data)
    final_id = cfg.sequence[-1]
    final_dev = data[final_id][1]
    source_mode = SourceMode(variant=cfg.source_mode)
    gen = GenerationConfig(num_beams=cfg.num_beams, max_output_tokens=cfg.max_output_tokens, seed=cfg.seed)
    train_cfg = TrainConfig(
        lr=cfg.lr,
        batch_size=cfg.batch_size,
        optimizer=cfg.optimizer,
        seed=cfg.seed,
        source_mode=source_mode,
        gen=gen,
    )
    scorers = [surrogate_scorer()]

    run_dir = _fresh_run_dir(_artifact_root(out_root), cfg.run_name)
    print(f"[run] {cfg.setting_label} -> {run_dir}")
    (run_dir / "config.json").write_text(
        json.dumps(cfg.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
    )
    save_dataset(final_dev, run_dir / "eval_split.jsonl")

    manifest = RunManifest(
        setting=cfg.setting_label,
        config=cfg.to_dict(),
        templates=template_manifest(),
        status="running",
        eval_split=_eval_split_descriptor(final_id, final_dev),
        run_dir=str(run_dir),
    )
    try:
        if cfg.regime == SFT:
            model, history = run_sft(model, stages, data, train_cfg, scorers=scorers, run_dir=run_dir)
            eval_regime = "single_shot"
        else:
            model, history = run_hifeat(
                model,
                stages,
                data,
                train_cfg,
                phase_plan=_phase_plan(cfg, stages, data),
                label_source=cfg.label_source,
                scorers=scorers,
                run_dir=run_dir,
            )
            eval_regime = "two_pass"

        report = evaluate(model, final_dev, regime=eval_regime, cfg=gen, scorers=scorers,
                          source_mode=source_mode)

        (run_dir / "history.jsonl").write_text(history.to_jsonl(), encoding="utf-8")
        (run_dir / "steps.jsonl").write_text(history.steps_jsonl(), encoding="utf-8")
        (run_dir / "eval_report.json").write_text(
            json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8"
        )
        (run_dir / "report_settings.csv").write_text(
            settings_csv([(cfg.setting_label, report)]), encoding="utf-8"
        )
        (run_dir / "report_per_type.csv").write_text(per_type_csv(report), encoding="utf-8")
        final_ckpt = save_checkpoint(model, run_dir / "checkpoints" / "final")

        manifest.status = "completed"
        manifest.eval_report = report.to_dict()
        manifest.history_path = str(run_dir / "history.jsonl")
        manifest.steps_path = str(run_dir / "steps.jsonl")
        manifest.checkpoint_path = str(final_ckpt)
        manifest.stage_summary = [
            {
                "dataset_id": s.dataset_id,
                "epochs": len(history.for_stage(s.dataset_id)),
                "include_explanation": s.include_explanation,
                "selection_metric": s.selection_metric,
            }
            for s in stages
        ]
    except Exception as exc:
        manifest.status = "failed"
        manifest.error = f"{type(exc).__name__}: {exc}"
        manifest.wall_clock_sec = round(time.time() - t0, 3)
        manifest.save(run_dir / "manifest.json")
        raise
    manifest.wall_clock_sec = round(time.time() - t0, 3)
    manifest.save(run_dir / "manifest.json")
    print(f"[done] {cfg.setting_label}: acc@0={fmt_pct(report.acc_at_0)} "
          f"acc@60={fmt_pct(report.acc_at_60)} ({manifest.wall_clock_sec}s)")
    return manifest


def reevaluate(run_dir: str | Path) -> EvalReport:
    """Recompute a completed run's EvalReport from its checkpoint alone."""
    run_dir = Path(run_dir)
    manifest = RunManifest.load(run_dir / "manifest.json")
    if manifest.status != "completed":
        raise ValueError(f"{run_dir}: run did not complete (status={manifest.status})")
    cfg = validate_config(manifest.config)
    model = load_checkpoint(manifest.checkpoint_path)
    schema = SCHEMAS[cfg.datasets[cfg.sequence[-1]].schema]()
    dev = load_dataset(run_dir / "eval_split.jsonl", schema)
    gen = GenerationConfig(num_beams=cfg.num_beams, max_output_tokens=cfg.max_output_tokens, seed=cfg.seed)
    return evaluate(
        model,
        dev,
        regime="two_pass" if cfg.regime == HIFEAT_MTL else "single_shot",
        cfg=gen,
        scorers=[surrogate_scorer()],
        source_mode=SourceMode(variant=cfg.source_mode),
    )


@dataclass
class AblationResult:
    reports: dict[str, EvalReport]
    manifests: dict[str, RunManifest]
    csv_path: str

    def as_tuple(self) -> tuple[EvalReport, EvalReport, EvalReport]:
        return tuple(self.reports[name] for name, _ in ABLATION_SETTINGS)


def run_bias_ablation(base_cfg: ExperimentConfig | Mapping, out_root: str | Path | None = None) -> AblationResult:
    """Three runs differing only in source_mode (Regular / HypOnly / PremOnly),
    same seed; emits a combined CSV with one row per setting."""
    if not isinstance(base_cfg, ExperimentConfig):
        base_cfg = validate_config(base_cfg)
    root = _artifact_root(out_root)
    reports: dict[str, EvalReport] = {}
    manifests: dict[str, RunManifest] = {}
    for setting_name, mode in ABLATION_SETTINGS:
        cfg = dataclasses.replace(base_cfg, source_mode=mode, setting=setting_name)
        manifest = run_experiment(cfg, out_root=root)
        manifests[setting_name] = manifest
        reports[setting_name] = EvalReport.from_dict(manifest.eval_report)
    csv_text = settings_csv([(name, reports[name]) for name, _ in ABLATION_SETTINGS])
    ablation_dir = _fresh_run_dir(root, f"ablation_{base_cfg.seed}_{config_hash(base_cfg)}")
    csv_path = ablation_dir / "bias_ablation.csv"
    csv_path.write_text(csv_text, encoding="utf-8")
    return AblationResult(reports=reports, manifests=manifests, csv_path=str(csv_path))


@dataclass
class ComparisonTable:
    """Settings x thresholded-accuracy table plus per-type deltas vs the first
    (baseline) manifest, with absolute and relative change."""

    settings_header: str
    settings_rows: list[str]
    per_type_blocks: list[list[str]]

    def to_csv(self) -> str:
        lines = [self.settings_header, *self.settings_rows]
        for block in self.per_type_blocks:
            lines.append("")
            lines.extend(block)
        return "\n".join(lines) + "\n"


def _delta_cell(base: float, other: float) -> str:
    delta = 100.0 * (other - base)
    if base == 0.0:
        return f"{delta:+.2f} (n/a rel)"
    rel = 100.0 * (other - base) / base
    return f"{delta:+.2f} ({rel:+.1f}% rel)"


def emit_comparison(manifests: Sequence[RunManifest | Mapping]) -> ComparisonTable:
    """Compare >= 2 completed manifests over the same evaluation split."""
    if len(manifests) < 2:
        raise ValueError("comparison needs at least two manifests")
    normalized = [m.to_dict() if isinstance(m, RunManifest) else dict(m) for m in manifests]
    for m in normalized:
        if not m.get("eval_report"):
            raise ValueError(
                f"manifest {m.get('setting', '?')!r} has no eval report (incomplete run)"
            )
    base_split = normalized[0].get("eval_split", {})
    for m in normalized[1:]:
        if m.get("eval_split", {}).get("sha256") != base_split.get("sha256"):
            raise MismatchedEvalSplit(
                f"manifests evaluate different splits: {base_split} vs {m.get('eval_split')}"
            )
    rows = []
    for m in normalized:
        report = m["eval_report"]
        rows.append(
            f"{m['setting']},{fmt_pct(report['acc_at_0'])},{fmt_pct(report['acc_at_50'])},"
            f"{fmt_pct(report['acc_at_60'])}"
        )
    blocks = []
    base = normalized[0]
    base_types = base["eval_report"].get("per_type_acc", {}) or {}
    for m in normalized[1:]:
        other_types = m["eval_report"].get("per_type_acc", {}) or {}
        shared = [t for t in base_types if t in other_types]
        if not shared:
            continue
        block = [f"type,{base['setting']},{m['setting']},delta"]
        for t in shared:
            block.append(
                f"{t},{fmt_pct(base_types[t])},{fmt_pct(other_types[t])},"
                f"{_delta_cell(base_types[t], other_types[t])}"
            )
        blocks.append(block)
    return ComparisonTable(
        settings_header="setting,acc_at_0,acc_at_50,acc_at_60",
        settings_rows=rows,
        per_type_blocks=blocks,
    )
