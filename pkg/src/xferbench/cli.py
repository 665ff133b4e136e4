"""Command-line interface: run experiments, bias ablations, comparisons, and
standalone checkpoint evaluation."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .corpus import SCHEMAS, load_dataset
from .evalharness import evaluate, surrogate_scorer
from .modelcore import GenerationConfig, load_checkpoint
from .runner import (
    RunManifest,
    emit_comparison,
    load_config,
    run_bias_ablation,
    run_experiment,
    validate_config,
)


def _cmd_run(args: argparse.Namespace) -> int:
    raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = validate_config(raw)
    manifest = run_experiment(cfg, out_root=args.out)
    print(json.dumps(manifest.eval_report, indent=2, sort_keys=True))
    return 0


def _cmd_ablate(args: argparse.Namespace) -> int:
    cfg = load_config(args.config)
    result = run_bias_ablation(cfg, out_root=args.out)
    print(f"[ablate] wrote {result.csv_path}")
    print(Path(result.csv_path).read_text(encoding="utf-8"))
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    manifests = [RunManifest.load(p) for p in args.manifests]
    table = emit_comparison(manifests)
    csv_text = table.to_csv()
    if args.out:
        Path(args.out).write_text(csv_text, encoding="utf-8")
        print(f"[compare] wrote {args.out}")
    print(csv_text, end="")
    return 0


def _cmd_evaluate(args: argparse.Namespace) -> int:
    model = load_checkpoint(args.checkpoint)
    schema = SCHEMAS[args.schema]()
    dataset = load_dataset(args.data, schema)
    cfg = GenerationConfig(num_beams=args.beams, max_output_tokens=args.max_tokens)
    report = evaluate(model, dataset, regime=args.regime, cfg=cfg, scorers=[surrogate_scorer()])
    text = json.dumps(report.to_dict(), indent=2, sort_keys=True)
    if args.out:
        Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="xferbench", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one configured experiment")
    p_run.add_argument("--config", required=True, help="JSON experiment config")
    p_run.add_argument("--seed", type=int, default=None, help="override the config seed")
    p_run.add_argument("--out", default=None, help="artifact root (default: $XFERBENCH_OUT or ./runs)")
    p_run.set_defaults(func=_cmd_run)

    p_abl = sub.add_parser("ablate", help="run the Regular/HypOnly/PremOnly bias ablation")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--out", default=None)
    p_abl.set_defaults(func=_cmd_ablate)

    p_cmp = sub.add_parser("compare", help="tabulate >= 2 run manifests")
    p_cmp.add_argument("manifests", nargs="+", help="paths to manifest.json files")
    p_cmp.add_argument("--out", default=None, help="write the CSV here")
    p_cmp.set_defaults(func=_cmd_compare)

    p_eval = sub.add_parser("evaluate", help="evaluate a checkpoint on a JSONL dataset")
    p_eval.add_argument("--checkpoint", required=True, help="checkpoint directory")
    p_eval.add_argument("--data", required=True, help="JSONL dataset file")
    p_eval.add_argument("--schema", default="figlang", choices=sorted(SCHEMAS))
    p_eval.add_argument("--regime", default="single_shot", choices=("single_shot", "two_pass"))
    p_eval.add_argument("--beams", type=int, default=4)
    p_eval.add_argument("--max-tokens", type=int, default=48)
    p_eval.add_argument("--out", default=None)
    p_eval.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
