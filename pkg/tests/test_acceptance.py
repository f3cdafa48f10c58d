"""End-to-end acceptance checks.

Run with ``pytest tests/test_acceptance.py -v`` for one pass/fail line per
criterion. Every tolerance is stated inline next to the assertion it gates.
"""

import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from conftest import random_record, two_blob_samples, worked_example_rows
from test_cli import run_main, write_config, write_corpus, write_schema
from test_evalstats import brute_force_wilcoxon
from test_nn import grad_check_instance

from sepsis_e2e import evalstats as ev
from sepsis_e2e import model as M
from sepsis_e2e.ingest import FeatureSchema
from sepsis_e2e.nn import network
from sepsis_e2e.pipeline import (
    PipelineConfig,
    downsample_training,
    new_state,
    stream_window_step,
)
from sepsis_e2e.rng import derive_seed, make_rng

REFERENCE_CSV = Path(__file__).parent / "data" / "reference_metrics.csv"

FRIEDMAN_EXPECTED = {
    "ppv": (10.933, 0.0273),
    "npv": (9.867, 0.0427),
    "accuracy": (11.051, 0.0260),
    "sensitivity": (5.627, 0.2288),
    "specificity": (9.695, 0.0459),
}

WIN_LOSS_EXPECTED = {
    "ppv": (12, 0),
    "npv": (11, 1),
    "accuracy": (12, 0),
    "sensitivity": (10, 2),
    "specificity": (11, 1),
}


def test_c1_friedman_statistics_reproduce_reference_table():
    table = ev.load_metric_table(REFERENCE_CSV)
    for metric, (stat, p) in FRIEDMAN_EXPECTED.items():
        res = ev.friedman(table.values[metric])
        assert res.statistic == pytest.approx(stat, abs=0.005), metric
        assert res.p_value == pytest.approx(p, abs=0.0005), metric


def test_c2_win_loss_tallies_reproduce_reference_table():
    table = ev.load_metric_table(REFERENCE_CSV)
    for metric, expected in WIN_LOSS_EXPECTED.items():
        assert ev.win_loss(table, "End-to-End", metric) == expected, metric


def test_c3_confusion_matrix_inverts_to_reported_rates():
    rates = ev.metrics(ev.ConfusionMatrix(tp=60, fp=45, fn=71, tn=281))
    expected = {
        "ppv": 57.1429,
        "npv": 79.8295,
        "accuracy": 74.6171,
        "sensitivity": 45.8015,
        "specificity": 86.1963,
    }
    for name, want in expected.items():
        assert rates[name] == pytest.approx(want, abs=5e-5), name


def test_c4_gradient_check_100_reference_architectures():
    start = time.perf_counter()
    worst = 0.0
    for i in range(100):
        net, x, label, mask_rng = grad_check_instance(3, i, [40, 32, 16, 8, 2])
        rel = network.grad_check(net, x, label, epsilon=1e-4, rng=mask_rng)
        worst = max(worst, rel)
    elapsed = time.perf_counter() - start
    assert worst <= 1e-6, "max relative error %g" % worst
    assert elapsed < 60.0, "took %.1fs" % elapsed


def test_c5_batch_and_stream_routes_agree_on_1000_records():
    rng = make_rng(derive_seed(5, "acceptance-equivalence"))
    mismatches = 0
    for i in range(1000):
        d, record = random_record(rng, "r%04d" % i)
        cfg = PipelineConfig(schema=FeatureSchema(names=["f%d" % (j + 1) for j in range(d)]))
        batch = downsample_training(record, cfg)
        state = new_state(record.patient_id, d)
        stream = []
        for row in record.rows:
            out = stream_window_step(state, row, cfg)
            if out is not None:
                stream.append(out)
        key = lambda s: (s.patient_id, s.hour, s.label, tuple(s.values), tuple(s.mask))
        if [key(s) for s in batch] != [key(s) for s in stream]:
            mismatches += 1
    assert mismatches == 0


def test_c6_worked_example_emits_the_two_known_samples():
    schema = FeatureSchema(names=["f1", "f2", "f3", "f4", "f5"])
    cfg = PipelineConfig(schema=schema)
    samples = downsample_training(
        type("R", (), {"patient_id": "w", "rows": worked_example_rows()})(), cfg
    )
    assert len(samples) == 2
    assert samples[0].hour == 3
    assert samples[0].values == [1.0, 2.5, 3.0, 4.0, 0.0]
    assert samples[0].label == 0
    assert samples[1].hour == 5
    assert samples[1].values == [1.5, 2.6, 3.1, 4.0, 5.0]
    assert samples[1].label == 1


def test_c7_two_blob_training_reaches_95_percent_heldout():
    start = time.perf_counter()
    samples = two_blob_samples(7)
    train, test = samples[:800], samples[800:]
    cfg = M.TrainConfig(learning_rate=7e-4, epochs=550, batch_size=32,
                        dropout_p=0.5, seed=7)
    net, hist = M.train(train, cfg)
    correct = sum(
        1 for s in test if M.predict(net, s)[1] == s.label
    )
    elapsed = time.perf_counter() - start
    accuracy = correct / len(test)
    assert accuracy >= 0.95, "held-out accuracy %.3f" % accuracy
    assert hist.losses[-1] < hist.losses[0]
    assert elapsed < 120.0, "took %.1fs" % elapsed


def test_c8_full_pipeline_reruns_byte_identical(tmp_path):
    write_schema(tmp_path / "schema.txt")
    write_corpus(tmp_path / "data")
    outputs = []
    for run in ("one", "two"):
        cfg = tmp_path / ("%s.cfg" % run)
        write_config(cfg, tmp_path / "data", tmp_path / "schema.txt", tmp_path / run)
        for command in ("preprocess", "train", "evaluate"):
            assert run_main([command, "--config", str(cfg), "--quiet"]) == 0
        outputs.append(tmp_path / run)
    assert (outputs[0] / "model.bin").read_bytes() == \
        (outputs[1] / "model.bin").read_bytes()
    assert (outputs[0] / "metrics.txt").read_bytes() == \
        (outputs[1] / "metrics.txt").read_bytes()


def test_c9_wilcoxon_exact_p_matches_enumeration_bit_for_bit():
    res = ev.wilcoxon_signed_rank([1.0, 2.0, 3.0], [0.0, 0.0, 0.0])
    assert res.p_two_sided == 0.25
    rng = make_rng(derive_seed(9, "acceptance-wilcoxon"))
    checked = 0
    while checked < 300:
        n = int(rng.integers(1, 11))
        x = [float(v) for v in rng.integers(-4, 5, size=n)]
        y = [float(v) for v in rng.integers(-4, 5, size=n)]
        got = ev.wilcoxon_signed_rank(x, y)
        w, n_eff, p = brute_force_wilcoxon(x, y)
        assert got.n_effective == n_eff
        if n_eff > 0:
            assert got.w_statistic == w
        assert got.p_two_sided == p
        checked += 1
