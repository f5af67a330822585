import json

import pytest

from grnlab.config import ConfigError, ModelSpec, OptimizerSpec, RunConfig
from grnlab.metrics import MetricsWriter, read_metrics, strip_volatile


def make_config(**overrides):
    base = dict(task="linear_identity", arch="v1", seed=3, out_dir="runs/x",
                steps=10, batch_size=4,
                model=ModelSpec(d=8, layers=2, ranks=[1, 2]),
                optimizer=OptimizerSpec(name="sgd", lr=0.01))
    base.update(overrides)
    return RunConfig(**base)


def test_config_round_trip_is_lossless():
    cfg = make_config()
    text = cfg.to_json()
    back = RunConfig.from_json(text)
    assert back == cfg
    assert back.to_json() == text


def test_config_rejects_unknown_fields_and_values():
    cfg = make_config()
    doc = json.loads(cfg.to_json())
    doc["task"] = "linear_cubic"
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)
    doc = json.loads(cfg.to_json())
    doc["surprise"] = 1
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)
    doc = json.loads(cfg.to_json())
    doc["version"] = 9
    with pytest.raises(ConfigError):
        RunConfig.from_dict(doc)


def test_config_requires_consistent_ranks_and_arch():
    with pytest.raises(ConfigError):
        make_config(model=ModelSpec(d=8, layers=3, ranks=[1, 2])).validate()
    with pytest.raises(ConfigError):
        make_config(arch="dca").validate()
    with pytest.raises(ConfigError):
        make_config(task="toy_lm", arch="v1").validate()
    with pytest.raises(ConfigError):
        make_config(seed="yesterday").validate()


def test_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "none.json")


def test_metrics_append_read_and_strip(tmp_path):
    path = tmp_path / "m.jsonl"
    with MetricsWriter(path) as mw:
        mw.write(1, 0.5, 12, perplexity=1.6)
        mw.write(2, 0.25, 30)
    records = read_metrics(path)
    assert [r["step"] for r in records] == [1, 2]
    assert records[0]["perplexity"] == 1.6
    bare = strip_volatile(records)
    assert all("wall_ms" not in r for r in bare)


def test_metrics_steps_must_increase(tmp_path):
    with MetricsWriter(tmp_path / "m.jsonl") as mw:
        mw.write(1, 0.5, 0)
        with pytest.raises(ValueError):
            mw.write(1, 0.4, 1)


def test_killed_run_leaves_parseable_prefix(tmp_path):
    path = tmp_path / "m.jsonl"
    with MetricsWriter(path) as mw:
        for step in range(1, 6):
            mw.write(step, 1.0 / step, step)
    blob = path.read_bytes()
    cut = path.with_name("cut.jsonl")
    cut.write_bytes(blob[: int(len(blob) * 0.6)])
    text = cut.read_text()
    complete = [ln for ln in text.splitlines() if ln.endswith("}")]
    parsed = [json.loads(ln) for ln in complete]
    assert len(parsed) >= 2
    assert [r["step"] for r in parsed] == list(range(1, len(parsed) + 1))
