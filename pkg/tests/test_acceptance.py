"""End-to-end acceptance checks. Each test records one PASS/FAIL line (see conftest)."""

import json
import struct
import time
from pathlib import Path

import numpy as np
import pytest

from inception_capsule import cli
from inception_capsule.autodiff import Tensor
from inception_capsule.capsules import dynamic_routing, squash
from inception_capsule.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from inception_capsule.data import balanced_counts, stack, synth_dataset
from inception_capsule.errors import (
    CheckpointLayoutError,
    CheckpointMagicError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from inception_capsule.gradcheck import CASES, TOLERANCE, run_suite
from inception_capsule.metrics import MetricsReport, compute_metrics, confusion_counts, roc_auc
from inception_capsule.report import WITH_ATTENTION, WITHOUT_ATTENTION, emit_report, render_table
from inception_capsule.training import TrainConfig, evaluate, replay_split, train
from oracles import count_confusion, linear_probe_accuracy, metrics_by_counting, routing_reference

GOLDEN = Path(__file__).parent / "golden" / "with_attention_row.txt"

# Synthetic run used by criteria 6, 7 and 9. Dropout is lowered from the 0.8
# default: at 0.8 this small problem plateaus near two thirds accuracy.
SYNTH_EPOCHS = 30
SYNTH_CFG = dict(epochs=SYNTH_EPOCHS, batch_size=32, seed=0, drop_rate=0.2, split="70/10/20")


@pytest.mark.slow
def test_1_gradient_suite(criterion):
    start = time.perf_counter()
    results = run_suite(range(10))
    seconds = time.perf_counter() - start
    worst = max(results, key=lambda r: r.worst)
    failed = [r.name for r in results if not r.passed]
    ok = not failed and len(results) == len(CASES) and seconds < 60
    criterion(1, f"{len(results)} cases x 10 seeds, worst rel err {worst.worst:.2e} ({worst.name}), "
                 f"{seconds:.1f}s, failed={failed}", ok)
    assert not failed
    assert worst.worst < TOLERANCE
    assert seconds < 60


def test_2_routing_oracle(criterion):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(100):
        n, j, d = rng.integers(1, 6), rng.integers(1, 6), rng.integers(1, 9)
        iters = (1, 2, 3, 5)[k % 4]
        votes = rng.standard_normal((n, j, d)) * rng.uniform(0.1, 3.0)
        state = dynamic_routing(Tensor(votes), iters)
        c_ref, v_ref = routing_reference(votes.tolist(), iters)
        worst = max(worst, np.max(np.abs(state.couplings.data - c_ref)),
                    np.max(np.abs(state.outputs.data - v_ref)))
    criterion(2, f"100 instances, max abs err {worst:.2e}", worst <= 1e-10)
    assert worst <= 1e-10


def test_3_squash_closed_form(criterion):
    rng = np.random.default_rng(3)
    norm_err = cos_err = 0.0
    for _ in range(1000):
        z = rng.standard_normal(rng.integers(1, 17)) * 10 ** rng.uniform(-3, 3)
        s = squash(Tensor(z)).data
        n2 = float(z @ z)
        norm_err = max(norm_err, abs(np.linalg.norm(s) - n2 / (1 + n2)))
        cos_err = max(cos_err, abs(1 - float(s @ z) / (np.linalg.norm(s) * np.linalg.norm(z))))
    ok = norm_err <= 1e-12 and cos_err <= 1e-12
    criterion(3, f"1000 vectors, norm err {norm_err:.1e}, 1-cos {cos_err:.1e}", ok)
    assert ok


def test_4_metric_oracle(criterion):
    rng = np.random.default_rng(4)
    mismatches = 0
    for k in range(1000):
        n = (2, 5, 8)[k % 3]
        size = int(rng.integers(1, 120))
        pred, true = rng.integers(0, n, size).tolist(), rng.integers(0, n, size).tolist()
        counts = confusion_counts(pred, true, n)
        report = compute_metrics(counts)
        matrix, tp, tn, fp, fn = count_confusion(pred, true, n)
        oracle = metrics_by_counting(pred, true, n)
        same = (counts.matrix.tolist() == matrix and list(counts.tp) == tp and list(counts.tn) == tn
                and list(counts.fp) == fp and list(counts.fn) == fn
                and all(getattr(report, key) == oracle[key]
                        for key in ("accuracy", "precision", "recall", "specificity", "f1"))
                and report.recall == report.sensitivity)
        mismatches += not same
    criterion(4, f"1000 sets, {mismatches} mismatches", mismatches == 0)
    assert mismatches == 0


def test_5_roc_auc(criterion):
    rng = np.random.default_rng(5)
    labels = np.repeat([0, 1], 500)
    scores = np.where(labels == 1, rng.uniform(0.6, 1.0, 1000), rng.uniform(0.0, 0.4, 1000))
    _, perfect = roc_auc(scores, labels)

    big_scores = rng.standard_normal(10_000)
    big_labels = rng.permutation(np.repeat([0, 1], 5000))
    _, shuffled = roc_auc(big_scores, big_labels)

    mixed = rng.integers(0, 2, 2000)
    s = rng.standard_normal(2000) + mixed
    _, base = roc_auc(s, mixed)
    drift = max(abs(roc_auc(f(s), mixed)[1] - base)
                for f in (np.exp, np.arctan, lambda x: x ** 3, lambda x: 5 * x - 2))
    ok = perfect == 1.0 and 0.45 <= shuffled <= 0.55 and drift <= 1e-12
    criterion(5, f"separated {perfect!r}, shuffled {shuffled:.4f}, monotone drift {drift:.1e}", ok)
    assert perfect == 1.0
    assert 0.45 <= shuffled <= 0.55
    assert drift <= 1e-12


@pytest.fixture(scope="module")
def synthetic_runs():
    start = time.perf_counter()
    samples = synth_dataset(3, balanced_counts(1000, 3), size=(16, 16), seed=0)
    runs = {}
    for attention in (True, False):
        cfg = TrainConfig(attention=attention, **SYNTH_CFG)
        model_cfg = cfg.model_config((1, 16, 16), 3)
        split = replay_split(cfg, model_cfg, samples)
        probe = linear_probe_accuracy(*stack(split, "train"), *stack(split, "test"))
        params, log = train(cfg, samples, model_cfg)
        runs[attention] = dict(cfg=cfg, params=params, log=log, probe=probe,
                               report=evaluate(params, model_cfg, split, "test"))
    return runs, time.perf_counter() - start


@pytest.mark.slow
def test_6_synthetic_training(criterion, synthetic_runs):
    runs, seconds = synthetic_runs
    accs = {a: r["report"].accuracy for a, r in runs.items()}
    probes = {a: r["probe"] for a, r in runs.items()}
    ok = min(probes.values()) >= 0.99 and min(accs.values()) >= 0.95 and seconds < 600
    criterion(6, f"probe {min(probes.values()):.3f}, test acc on {accs[True]:.4f} / off {accs[False]:.4f} "
                 f"after {SYNTH_EPOCHS} epochs (drop 0.2), {seconds:.0f}s", ok)
    assert min(probes.values()) >= 0.99
    assert all(len(r["log"].records) == SYNTH_EPOCHS for r in runs.values())
    assert min(accs.values()) >= 0.95
    assert seconds < 600


@pytest.mark.slow
def test_7_ablation_parity(criterion, synthetic_runs, tmp_path):
    runs, _ = synthetic_runs
    on, off = runs[True], runs[False]
    table = render_table([(WITH_ATTENTION, on["report"]), (WITHOUT_ATTENTION, off["report"])]).splitlines()
    header, rows = table[0], [line.split("\t") for line in table[1:]]
    single = [render_table([(name, r["report"])]).splitlines()[0]
              for name, r in ((WITH_ATTENTION, on), (WITHOUT_ATTENTION, off))]
    recs = [json.loads(emit_report(r["report"], r["log"], "records", tmp_path / f"{k}.json").read_text())
            for k, r in (("on", on), ("off", off))]

    def shape(obj):
        if isinstance(obj, dict):
            return {k: shape(v) for k, v in obj.items()}
        if isinstance(obj, list):
            return [shape(obj[0])] if obj else []
        return type(obj).__name__

    ok = (single[0] == single[1] == header and [r[0] for r in rows] == [WITH_ATTENTION, WITHOUT_ATTENTION]
          and all(len(r) == 4 and all(float(v) >= 0 for v in r[1:]) for r in rows)
          and shape(recs[0]) == shape(recs[1]))
    criterion(7, "paired rows share header, columns and record schema", ok)
    assert ok


def test_8_determinism(criterion, tmp_path):
    argv = ["train", "--synthetic", "--epochs", "2", "--seed", "7", "--drop-rate", "0.5"]
    assert cli.main([*argv, "--out", str(tmp_path / "a")]) == 0
    assert cli.main([*argv, "--out", str(tmp_path / "b")]) == 0
    same = {name: (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
            for name in ("checkpoint.icap", "train_log.jsonl", "report.json", "manifest.json")}
    criterion(8, f"two CLI runs byte-identical: {same}", all(same.values()))
    assert all(same.values())


@pytest.mark.slow
def test_9_checkpoint_round_trip(criterion, synthetic_runs, tmp_path):
    params = synthetic_runs[0][True]["params"]
    save_checkpoint(params, tmp_path / "a.icap")
    save_checkpoint(load_checkpoint(tmp_path / "a.icap"), tmp_path / "b.icap")
    fixed_point = (tmp_path / "a.icap").read_bytes() == (tmp_path / "b.icap").read_bytes()

    buf = encode_checkpoint(params)
    corrupt = {
        CheckpointTruncatedError: buf[: len(buf) - 3],
        CheckpointMagicError: b"ICAQ" + buf[4:],
        CheckpointVersionError: buf[:4] + struct.pack("<H", 9) + buf[6:],
        CheckpointLayoutError: buf + b"\x00\x00",
    }
    caught = {}
    for expected, blob in corrupt.items():
        try:
            decode_checkpoint(blob)
            caught[expected.__name__] = None
        except Exception as e:  # noqa: BLE001 - the exact class is the point
            caught[expected.__name__] = type(e).__name__
    distinct = all(k == v for k, v in caught.items())
    criterion(9, f"save-load-save identical={fixed_point}, errors {caught}", fixed_point and distinct)
    assert fixed_point
    assert distinct


def test_10_golden_report(criterion, tmp_path):
    row = MetricsReport(n_classes=3, total=0, accuracy=0.9762, precision=0.9985, recall=0.9985,
                        sensitivity=0.9985, specificity=0.9932, f1=0.9985, per_class={}, matrix=[])
    out = emit_report(row, None, "text", tmp_path / "table.txt", model_name=WITH_ATTENTION)
    ok = out.read_bytes() == GOLDEN.read_bytes()
    criterion(10, "with-attention row renders exactly as the golden file", ok)
    assert ok
