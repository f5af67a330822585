"""Run drivers: determinism, degenerate cases, retrofit, weight dumps, and
the verify driver's negative control."""

import json
from pathlib import Path

import numpy as np
import pytest

from grnlab import autodiff as ad
from grnlab.autodiff import Node
from grnlab.checkpoint import load_checkpoint
from grnlab.config import ConfigError, ModelSpec, OptimizerSpec, RunConfig
from grnlab.metrics import read_metrics, strip_volatile
from grnlab.oracles import percentile_sorted
from grnlab.rng import Rng
from grnlab.runs import (dump_weights, run_figure1, run_retrofit, run_toy_lm,
                         weight_records)
from grnlab.verify import grads_suite, run_verify


def tiny_fig1_config(out_dir, task="linear_identity", arch="v1", seed=7):
    return RunConfig(task=task, arch=arch, seed=seed, out_dir=str(out_dir),
                     steps=15, batch_size=8,
                     model=ModelSpec(d=10, layers=3, ranks=[2, 2, 2],
                                     init_std=0.2),
                     optimizer=OptimizerSpec(name="sgd", lr=1e-4))


def tiny_lm_config(out_dir, corpus, arch="transformer", seed=3, steps=6):
    return RunConfig(task="toy_lm", arch=arch, seed=seed, out_dir=str(out_dir),
                     steps=steps, batch_size=4, corpus=str(corpus),
                     eval_batches=2,
                     model=ModelSpec(d=16, layers=1, ranks=[], heads=2,
                                     seq_len=16, vocab_size=64),
                     optimizer=OptimizerSpec(name="adamw", lr=1e-3,
                                             weight_decay=0.1,
                                             schedule="inverse_sqrt",
                                             warmup_steps=5))


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "corpus.bin"
    table = Rng(123).integers(64 * 2, 64).reshape(64, 2)
    out = np.zeros(6000, dtype=np.uint8)
    picks = Rng(5).integers(6000, 2)
    for i in range(1, 6000):
        out[i] = table[out[i - 1], picks[i]]
    path.write_bytes(out.tobytes())
    return path


def test_figure1_replay_is_bit_identical(tmp_path):
    out1 = run_figure1(tiny_fig1_config(tmp_path / "a"))
    out2 = run_figure1(tiny_fig1_config(tmp_path / "b"))
    m1 = strip_volatile(read_metrics(out1 / "metrics.jsonl"))
    m2 = strip_volatile(read_metrics(out2 / "metrics.jsonl"))
    assert m1 == m2
    assert (out1 / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()


def test_figure1_different_seed_changes_metrics(tmp_path):
    out1 = run_figure1(tiny_fig1_config(tmp_path / "a", seed=7))
    out2 = run_figure1(tiny_fig1_config(tmp_path / "b", seed=8))
    m1 = strip_volatile(read_metrics(out1 / "metrics.jsonl"))
    m2 = strip_volatile(read_metrics(out2 / "metrics.jsonl"))
    assert m1 != m2


def test_figure1_degenerate_depth_zero_solves_identity(tmp_path):
    cfg = RunConfig(task="linear_identity", arch="resnet", seed=1,
                    out_dir=str(tmp_path / "z"), steps=3, batch_size=4,
                    model=ModelSpec(d=6, layers=0, ranks=[]),
                    optimizer=OptimizerSpec(name="sgd", lr=1e-4))
    out = run_figure1(cfg)
    records = read_metrics(out / "metrics.jsonl")
    assert all(r["loss"] == 0.0 for r in records)


def test_figure1_rejects_wrong_task(tmp_path):
    cfg = tiny_fig1_config(tmp_path / "x")
    cfg.task = "toy_lm"
    cfg.arch = "dca"
    cfg.corpus = "unused"
    with pytest.raises(ConfigError):
        run_figure1(cfg)


def test_toy_lm_replay_and_config_artifacts(tmp_path, corpus):
    out1 = run_toy_lm(tiny_lm_config(tmp_path / "a", corpus))
    out2 = run_toy_lm(tiny_lm_config(tmp_path / "b", corpus))
    assert strip_volatile(read_metrics(out1 / "metrics.jsonl")) == \
        strip_volatile(read_metrics(out2 / "metrics.jsonl"))
    assert (out1 / "model.ckpt").read_bytes() == (out2 / "model.ckpt").read_bytes()
    assert json.loads((out1 / "result.json").read_text()) == \
        json.loads((out2 / "result.json").read_text())
    saved = RunConfig.load(out1 / "config.json")
    assert saved.arch == "transformer" and saved.steps == 6


def test_toy_lm_and_dca_share_step_zero_loss(tmp_path, corpus):
    base = run_toy_lm(tiny_lm_config(tmp_path / "t", corpus, arch="transformer"))
    dca = run_toy_lm(tiny_lm_config(tmp_path / "d", corpus, arch="dca"))
    lb = read_metrics(base / "metrics.jsonl")[0]["loss"]
    ld = read_metrics(dca / "metrics.jsonl")[0]["loss"]
    assert abs(lb - ld) <= 1e-12


def test_toy_lm_missing_corpus_is_config_error(tmp_path):
    cfg = tiny_lm_config(tmp_path / "x", tmp_path / "absent.bin")
    with pytest.raises(ConfigError):
        run_toy_lm(cfg)


def test_repeated_byte_corpus_trains_to_unit_perplexity(tmp_path):
    flat = tmp_path / "flat.bin"
    flat.write_bytes(bytes([42]) * 4000)
    cfg = tiny_lm_config(tmp_path / "run", flat, steps=200)
    cfg.optimizer.lr = 5e-3
    cfg.optimizer.warmup_steps = 10
    out = run_toy_lm(cfg)
    result = json.loads((out / "result.json").read_text())
    assert result["final_eval_perplexity"] <= 1.05


def test_retrofit_keeps_eval_loss_then_continues(tmp_path, corpus):
    base_out = run_toy_lm(tiny_lm_config(tmp_path / "base", corpus, steps=12))
    cfg = tiny_lm_config(tmp_path / "retro", corpus, arch="dca", steps=4)
    out = run_retrofit(cfg, base_out / "model.ckpt")
    report = json.loads((out / "retrofit.json").read_text())
    assert abs(report["delta"]) <= 1e-6
    ckpt = load_checkpoint(out / "model.ckpt")
    assert "block01.grn_q.b" in ckpt


def test_retrofit_rejects_mismatched_checkpoint(tmp_path, corpus):
    base_out = run_toy_lm(tiny_lm_config(tmp_path / "base", corpus, steps=2))
    cfg = tiny_lm_config(tmp_path / "retro", corpus, arch="dca", steps=2)
    cfg.model.d = 24
    with pytest.raises(ValueError):
        run_retrofit(cfg, base_out / "model.ckpt")


def test_dump_weights_fresh_init_and_independent_percentiles(tmp_path, corpus):
    cfg = tiny_lm_config(tmp_path / "w", corpus, arch="dca", steps=0)
    out = run_toy_lm(cfg)
    rows = dump_weights(out / "model.ckpt", tmp_path / "w.csv")
    assert all(r["median"] == 1.0 and r["p05"] == 1.0 and r["p95"] == 1.0
               for r in rows)
    header = (tmp_path / "w.csv").read_text().splitlines()[0]
    assert header == "block,role,column,median,p05,p95"
    # one record per (block, grn-role, stack column); 1 block of width 1
    # contributes three roles plus the final combine of width 2
    assert len(rows) == 3 * 1 + 2


def test_dump_weights_statistics_match_second_percentile_route():
    values = {"block01.grn_q.b": Rng(9).normals((4, 16)) + 1.0}
    rows = weight_records(values)
    for row in rows:
        entries = values["block01.grn_q.b"][row["column"]]
        assert abs(row["median"] - percentile_sorted(entries, 50)) <= 1e-12
        assert abs(row["p05"] - percentile_sorted(entries, 5)) <= 1e-12
        assert abs(row["p95"] - percentile_sorted(entries, 95)) <= 1e-12


def test_dump_weights_v1_percentiles_collapse():
    values = {"combine03.b": np.array([1.0, 0.25, -0.5])}
    rows = weight_records(values)
    assert [r["role"] for r in rows] == ["combine"] * 3
    for row in rows:
        assert row["median"] == row["p05"] == row["p95"]


def test_dump_weights_requires_combine_parameters():
    with pytest.raises(ValueError):
        weight_records({"embed.tok": np.ones((3, 2))})


def test_verify_grads_negative_control():
    # an op with a deliberately wrong backward must fail the suite
    def bad_relu(a):
        value = np.maximum(a.value, 0.0)

        def push(g):
            return (g,)        # wrong: ignores the relu mask

        return Node(a.tape, value, "bad_relu", (a,), push)

    def build(tape, ns):
        return bad_relu(ns[0])

    cases = {"corrupted_relu": (build, lambda r: [r.normals((4, 4))])}
    checks = grads_suite(op_cases=cases, seeds=(0,))
    by_name = {c.name: c for c in checks}
    assert not by_name["grad.corrupted_relu"].passed


def test_verify_report_shape_and_threads_merge():
    r1 = run_verify("stein", threads=1)
    r2 = run_verify("stein", threads=4)
    assert r1 == r2
    assert r1["passed"] and "stein" in r1["suites"]
