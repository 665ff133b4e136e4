"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run with `pytest tests/test_acceptance.py -v -s`. The behavioral criteria use
small constructed corpora (memorization, token-transfer, XOR) whose training
settings were calibrated so the toy backend converges within the stated step
budgets.
"""

import random
import string
import time
from pathlib import Path

import torch

from conftest import figlang_dataset, vocab_for
from xferbench.corpus import (
    DEFAULT_LABELS,
    Dataset,
    NLIExample,
    esnli_schema,
    figlang_schema,
    impli_schema,
    save_dataset,
    split_dev,
)
from xferbench.evalharness import Prediction, acc_at, evaluate, score_predictions, surrogate_scorer
from xferbench.hifeat import PhaseWeights, run_hifeat, two_pass_losses
from xferbench.modelcore import GenerationConfig
from xferbench.promptkit import parse_prediction, serialize_target
from xferbench.runner import (
    emit_comparison,
    run_bias_ablation,
    run_experiment,
    validate_config,
)
from xferbench.sft import Stage, TrainConfig, run_sft
from xferbench.toymodel import ToyConfig, ToySeq2Seq

FIG_TYPES = ("Metaphor", "Simile", "Idiom", "CreativeParaphrase", "Sarcasm")
GEN = GenerationConfig(num_beams=1, max_output_tokens=24)
WIDE = ToyConfig(d_model=96, n_heads=4, d_ff=192)


def report(criterion: int, message: str) -> None:
    print(f"[criterion {criterion:02d}] PASS - {message}")


# -- 1: metric oracle equivalence ----------------------------------------------

def test_criterion_01_metric_oracle_equivalence():
    start = time.time()
    rng = random.Random(1234)
    for _ in range(200):
        n = rng.randint(1, 20)
        preds = [
            Prediction(
                label=rng.choice(DEFAULT_LABELS),
                explanation="",
                parse_ok=True,
                expl_score=rng.choice([0.0, 10.0, 49.9, 50.0, 59.9, 60.0, 75.0, 100.0]),
            )
            for _ in range(n)
        ]
        gold = [
            NLIExample(premise="p", hypothesis="h", label=rng.choice(DEFAULT_LABELS))
            for _ in range(n)
        ]
        accs = {}
        for tau in (0.0, 50.0, 60.0):
            brute = sum(
                1 for p, g in zip(preds, gold) if p.label == g.label and p.expl_score >= tau
            ) / n
            fast = acc_at(preds, gold, tau)
            assert fast == brute
            accs[tau] = fast
        assert accs[0.0] >= accs[50.0] >= accs[60.0]
    elapsed = time.time() - start
    assert elapsed < 5.0
    report(1, f"200 fixtures match the brute-force oracle, monotone ({elapsed:.2f}s)")


# -- 2: Table-5 arithmetic reproduction ----------------------------------------

def test_criterion_02_bias_table_rows_bytewise():
    start = time.time()
    split = {"dataset_id": "figlang", "split": "dev", "n_examples": 1000, "sha256": "fixedsplit"}
    manifests = [
        {
            "setting": name,
            "eval_split": split,
            "eval_report": {"acc_at_0": a0, "acc_at_50": a50, "acc_at_60": a60,
                            "per_type_acc": {}},
        }
        for name, (a0, a50, a60) in (
            ("Regular", (0.9216, 0.8792, 0.6614)),
            ("HypOnly", (0.6547, 0.6096, 0.4595)),
            ("PremOnly", (0.5631, 0.4781, 0.3374)),
        )
    ]
    table = emit_comparison(manifests)
    assert table.settings_rows == [
        "Regular,92.16,87.92,66.14",
        "HypOnly,65.47,60.96,45.95",
        "PremOnly,56.31,47.81,33.74",
    ]
    csv_text = table.to_csv()
    for row in table.settings_rows:
        assert row in csv_text.splitlines()
    elapsed = time.time() - start
    assert elapsed < 1.0
    report(2, f"bias-table rows reproduced bytewise ({elapsed:.3f}s)")


# -- 3: prompt roundtrip and fuzzing -------------------------------------------

def test_criterion_03_prompt_roundtrip_and_fuzz():
    start = time.time()
    rng = random.Random(7)
    vocab_words = ["mist", "lark", "stone", "ember", "tide", "quill", "vale", "drift"]

    def phrase(lo=1, hi=8):
        return " ".join(rng.choice(vocab_words) for _ in range(rng.randint(lo, hi)))

    for _ in range(1000):
        e = NLIExample(
            premise=phrase(),
            hypothesis=phrase(),
            label=rng.choice(DEFAULT_LABELS),
            explanation=phrase(),
        )
        parsed = parse_prediction(serialize_target(e, True), DEFAULT_LABELS)
        assert parsed == (e.label, e.explanation, True)

    alphabet = string.printable
    for _ in range(10000):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 60)))
        label, _, ok = parse_prediction(text, DEFAULT_LABELS)
        assert label in DEFAULT_LABELS
        assert isinstance(ok, bool)
    elapsed = time.time() - start
    assert elapsed < 10.0
    report(3, f"1000 roundtrips lossless, 10000 fuzz inputs total ({elapsed:.2f}s)")


# -- 4: weighted-loss identity over a full HiFeatMTL run ------------------------

def test_criterion_04_weighted_loss_identity(tmp_path):
    start = time.time()
    fig = figlang_dataset(16)
    impli = Dataset(
        tuple(
            NLIExample(premise=e.premise, hypothesis=e.hypothesis, label=e.label)
            for e in figlang_dataset(8)
        ),
        impli_schema(),
    )
    data = {
        "impli": split_dev(impli, 0.25, seed=0),
        "figlang": split_dev(fig, 0.25, seed=0),
    }
    model = ToySeq2Seq(vocab_for(*(d for pair in data.values() for d in pair)), ToyConfig(), seed=0)
    stages = [
        Stage("impli", epochs=3, include_explanation=False, selection_metric="acc_at_0"),
        Stage("figlang", epochs=6, include_explanation=True, selection_metric="acc_at_60"),
    ]
    _, history = run_hifeat(model, stages, data, TrainConfig(batch_size=4, seed=0, gen=GEN))

    w_values = {s.w_label for s in history.steps}
    assert w_values == {1.0, 0.9, 0.1}  # pass-1-only stage plus the two phases
    for s in history.steps:
        combined = s.loss
        recomposed = s.w_label * s.label_loss + (1.0 - s.w_label) * s.expl_loss
        assert abs(combined - recomposed) <= 1e-9, (s.stage_id, s.epoch, s.step)
    elapsed = time.time() - start
    assert elapsed < 120.0
    report(4, f"weighted-sum identity held on all {len(history.steps)} steps ({elapsed:.1f}s)")


# -- 5: shared-weight gradient checks ------------------------------------------

def test_criterion_05_shared_weight_gradients():
    start = time.time()
    ds = figlang_dataset(4)
    vocab = vocab_for(ds)

    def grads(kind):
        model = ToySeq2Seq(vocab, ToyConfig(), seed=11)
        result = two_pass_losses(model, list(ds), PhaseWeights(0.5))
        loss = {
            "combined": result.combined_loss,
            "label": result.label_loss,
            "expl": result.expl_loss,
        }[kind]
        for p in model.parameters():
            p.grad = None
        loss.backward()
        return {n: p.grad.detach().clone() for n, p in model.named_parameters()}

    g_label, g_expl, g_combined = grads("label"), grads("expl"), grads("combined")
    names = sorted(g_combined)
    rng = random.Random(5)
    for name in rng.sample(names, 10):
        expected = 0.5 * g_label[name] + 0.5 * g_expl[name]
        denom = float(expected.abs().max()) or 1e-12
        rel = float((g_combined[name] - expected).abs().max()) / denom
        assert rel < 1e-6, (name, rel)

    # analytic vs central finite differences on 10 sampled entries
    model = ToySeq2Seq(vocab, ToyConfig(), seed=11)
    pairs = [("figurative hypothesis: a  premise: b", e.label) for e in ds]
    src, tgt = pairs[0]
    loss = model.compute_loss(src, tgt)
    for p in model.parameters():
        p.grad = None
    loss.backward()
    named = dict(model.named_parameters())
    for name in rng.sample(sorted(named), 10):
        p = named[name]
        flat = p.detach().view(-1)
        idx = rng.randrange(flat.numel())
        h = 1e-5
        with torch.no_grad():
            orig = float(flat[idx])
            flat[idx] = orig + h
            up = float(model.compute_loss(src, tgt).detach())
            flat[idx] = orig - h
            down = float(model.compute_loss(src, tgt).detach())
            flat[idx] = orig
        numeric = (up - down) / (2 * h)
        analytic = float(p.grad.view(-1)[idx])
        denom = max(abs(numeric), abs(analytic), 1e-8)
        assert abs(numeric - analytic) / denom < 1e-4, (name, idx)
    elapsed = time.time() - start
    assert elapsed < 60.0
    report(5, f"combined gradient decomposes; autodiff matches finite differences ({elapsed:.1f}s)")


# -- 6: memorization oracle ------------------------------------------------------

def _train_eval_memorization(regime: str):
    train = figlang_dataset(16)
    model = ToySeq2Seq(vocab_for(train), WIDE, seed=0)
    # full-batch steps; dev_loss selection keeps improving while the fixture
    # is memorized, whereas acc_at_60 saturates early and its earliest-tie
    # rule would pick an epoch whose explanations are only roughly right.
    cfg = TrainConfig(lr=3e-3, batch_size=16, seed=0, gen=GEN)
    data = {"figlang": (train, train)}
    stage = Stage("figlang", epochs=480, include_explanation=True, selection_metric="dev_loss")
    if regime == "sft":
        model, history = run_sft(model, [stage], data, cfg)
        eval_regime = "single_shot"
    else:
        plan = [[(PhaseWeights(0.9), 240), (PhaseWeights(0.1), 240)]]
        model, history = run_hifeat(model, [stage], data, cfg, phase_plan=plan)
        eval_regime = "two_pass"
    assert len(history.steps) <= 500
    rep = evaluate(model, train, regime=eval_regime, cfg=GEN)

    if eval_regime == "two_pass":
        from xferbench.hifeat import predict_two_pass_batch

        preds = predict_two_pass_batch(model, list(train), GEN)
    else:
        preds = [
            Prediction(*parse_prediction(g, DEFAULT_LABELS))
            for g in model.generate_batch(
                [f"figurative hypothesis: {e.hypothesis}  premise: {e.premise}" for e in train],
                GEN,
            )
        ]
    score_predictions(preds, list(train), [surrogate_scorer()])
    mean_score = sum(p.expl_score for p in preds) / len(preds)
    return rep.acc_at_0, mean_score, len(history.steps)


def test_criterion_06_memorization_oracle():
    start = time.time()
    for regime in ("sft", "hifeat"):
        acc0, mean_score, steps = _train_eval_memorization(regime)
        assert acc0 == 1.0, (regime, acc0)
        assert mean_score >= 99.0, (regime, mean_score)
        assert steps <= 500
    elapsed = time.time() - start
    assert elapsed < 300.0
    report(6, f"both regimes reach Acc@0=1.0 and explanation score >= 99 in <=500 steps ({elapsed:.1f}s)")


# -- 7: transfer direction check -------------------------------------------------

ENT_TOKENS = ("miro", "tavi", "sulo", "rhen")
CON_TOKENS = ("gorp", "zind", "krel", "fosh")
FILLERS = ("note", "card", "page", "slip", "memo", "leaf")


def _transfer_label(tok):
    return "Entailment" if tok in ENT_TOKENS else "Contradiction"


def _transfer_fixture():
    a_train = tuple(
        NLIExample(premise=f"plain {f}", hypothesis=f"{tok} case", label=_transfer_label(tok))
        for tok in ENT_TOKENS + CON_TOKENS
        for f in FILLERS + ("form", "scrap")
    )
    a_dev = tuple(
        NLIExample(premise="plain sheet", hypothesis=f"{tok} case", label=_transfer_label(tok))
        for tok in ENT_TOKENS + CON_TOKENS
    )
    def b_example(tok, f):
        return NLIExample(
            premise=f"plain {f}",
            hypothesis=f"{tok} case",
            label=_transfer_label(tok),
            explanation=f"the word {tok} marks {_transfer_label(tok).lower()}",
        )
    b_train = tuple(b_example(tok, f) for tok in (ENT_TOKENS[0], CON_TOKENS[0]) for f in FILLERS[:4])
    b_dev = tuple(b_example(tok, f) for tok in ENT_TOKENS[1:] + CON_TOKENS[1:] for f in FILLERS[4:6])
    return {
        "a": (Dataset(a_train, impli_schema()), Dataset(a_dev, impli_schema())),
        "b": (Dataset(b_train, esnli_schema()), Dataset(b_dev, esnli_schema())),
    }


def test_criterion_07_transfer_direction():
    start = time.time()
    data = _transfer_fixture()
    vocab = vocab_for(*(d for pair in data.values() for d in pair))
    stage_a = Stage("a", epochs=75, include_explanation=False, selection_metric="acc_at_0")
    stage_b = Stage("b", epochs=30, include_explanation=True, selection_metric="acc_at_0")
    b_dev = data["b"][1]

    deltas = []
    for seed in (0, 1, 2):
        cfg = TrainConfig(lr=5e-3, batch_size=16, seed=seed, gen=GEN)
        transferred = ToySeq2Seq(vocab, WIDE, seed=seed)
        transferred, _ = run_sft(transferred, [stage_a, stage_b], data, cfg)
        acc_ab = evaluate(transferred, b_dev, regime="single_shot", cfg=GEN).acc_at_0

        baseline = ToySeq2Seq(vocab, WIDE, seed=seed)
        baseline, _ = run_sft(baseline, [stage_b], data, cfg)
        acc_b = evaluate(baseline, b_dev, regime="single_shot", cfg=GEN).acc_at_0

        assert acc_ab >= acc_b, (seed, acc_ab, acc_b)
        deltas.append(acc_ab - acc_b)
    mean_delta = sum(deltas) / len(deltas)
    assert mean_delta > 0.0
    elapsed = time.time() - start
    assert elapsed < 600.0
    report(7, f"stage-1 pretraining never hurt and helped on average (+{mean_delta:.3f}) ({elapsed:.1f}s)")


# -- 8: regime-equivalence degenerate case ---------------------------------------

def test_criterion_08_regime_equivalence_on_label_only_data():
    start = time.time()
    labels_only = Dataset(
        tuple(
            NLIExample(premise=e.premise, hypothesis=e.hypothesis, label=e.label)
            for e in figlang_dataset(12)
        ),
        impli_schema(),
    )
    data = {"impli": split_dev(labels_only, 0.25, seed=0)}
    vocab = vocab_for(*data["impli"])
    cfg = TrainConfig(lr=3e-3, batch_size=4, seed=4, gen=GEN)
    stage = Stage("impli", epochs=5, include_explanation=False, selection_metric="acc_at_0")

    sft_model = ToySeq2Seq(vocab, ToyConfig(), seed=4)
    sft_model, sft_hist = run_sft(sft_model, [stage], data, cfg)

    mtl_model = ToySeq2Seq(vocab, ToyConfig(), seed=4)
    mtl_model, mtl_hist = run_hifeat(
        mtl_model, [stage], data, cfg, phase_plan=[[(PhaseWeights(1.0), 5)]]
    )

    assert sft_hist.core_jsonl() == mtl_hist.core_jsonl()
    assert [s.loss for s in sft_hist.steps] == [s.loss for s in mtl_hist.steps]
    for (name, p), (_, q) in zip(
        sorted(sft_model.named_parameters()), sorted(mtl_model.named_parameters())
    ):
        assert torch.equal(p.detach(), q.detach()), name
    elapsed = time.time() - start
    assert elapsed < 120.0
    report(8, f"HiFeatMTL at w_label=1 matches SFT bytewise on history and parameters ({elapsed:.1f}s)")


# -- 9: determinism of run_experiment --------------------------------------------

def test_criterion_09_run_experiment_determinism(tmp_path):
    start = time.time()
    save_dataset(figlang_dataset(24), tmp_path / "figlang.jsonl")
    base = {
        "sequence": ["figlang"],
        "datasets": {"figlang": {"path": str(tmp_path / "figlang.jsonl"), "schema": "figlang"}},
        "seed": 3,
        "dev_fraction": 0.25,
        "lr": 3e-3,
        "batch_size": 4,
        "num_beams": 1,
        "max_output_tokens": 24,
        "stage_epochs": {"figlang": 3},
        "model": {"d_model": 32, "n_heads": 2, "n_encoder_layers": 1,
                  "n_decoder_layers": 1, "d_ff": 64},
    }
    for regime in ("sft", "hifeat_mtl"):
        cfg = validate_config(dict(base, regime=regime))
        first = run_experiment(cfg, out_root=tmp_path / "runs")
        second = run_experiment(cfg, out_root=tmp_path / "runs")
        assert first.run_dir != second.run_dir
        for artifact in ("history.jsonl", "eval_report.json", "steps.jsonl"):
            a = (Path(first.run_dir) / artifact).read_bytes()
            b = (Path(second.run_dir) / artifact).read_bytes()
            assert a == b, (regime, artifact)
    elapsed = time.time() - start
    assert elapsed < 300.0
    report(9, f"reruns are bytewise identical for SFT and HiFeatMTL ({elapsed:.1f}s)")


# -- 10: bias-ablation construct validity ----------------------------------------

XOR_H = ("blik", "dax")
XOR_P = ("wug", "fep")


def _xor_file(path: Path, copies: int = 25) -> None:
    examples = []
    i = 0
    for _ in range(copies):
        for hi in (0, 1):
            for pi in (0, 1):
                label = "Entailment" if hi == pi else "Contradiction"
                examples.append(
                    NLIExample(
                        premise=f"{XOR_P[pi]} mark",
                        hypothesis=f"{XOR_H[hi]} sign",
                        label=label,
                        explanation=f"{XOR_H[hi]} {XOR_P[pi]} {label.lower()}",
                        fig_type=FIG_TYPES[i % 5],
                    )
                )
                i += 1
    save_dataset(Dataset(tuple(examples), figlang_schema()), path)


def test_criterion_10_bias_ablation_construct_validity(tmp_path):
    start = time.time()
    _xor_file(tmp_path / "xor.jsonl")
    cfg = validate_config({
        "regime": "sft",
        "sequence": ["xor"],
        "datasets": {"xor": {"path": str(tmp_path / "xor.jsonl"), "schema": "figlang"}},
        "seed": 0,
        "dev_fraction": 0.1,
        "lr": 5e-3,
        "batch_size": 128,
        "num_beams": 1,
        "max_output_tokens": 12,
        "stage_epochs": {"xor": 300},
        "stage_metric": {"xor": "acc_at_0"},
        "model": {"d_model": 96, "n_heads": 4, "d_ff": 192},
    })
    result = run_bias_ablation(cfg, out_root=tmp_path / "runs")
    regular = result.reports["Regular"].acc_at_0
    hyp_only = result.reports["HypOnly"].acc_at_0
    prem_only = result.reports["PremOnly"].acc_at_0
    assert regular - hyp_only >= 0.2, (regular, hyp_only)
    assert regular - prem_only >= 0.2, (regular, prem_only)
    lines = Path(result.csv_path).read_text().strip().splitlines()
    assert len(lines) == 4
    elapsed = time.time() - start
    assert elapsed < 600.0
    report(
        10,
        f"Regular={regular:.2f} vs HypOnly={hyp_only:.2f}, PremOnly={prem_only:.2f} ({elapsed:.1f}s)",
    )
