"""Training loop: determinism, artifacts, evaluation semantics, the
plain-BCE equivalence and the sweep harness."""

import csv
import dataclasses
import json

import numpy as np
import pytest

from dmvqa.data import SyntheticConfig, generate_synthetic
from dmvqa.errors import ConfigError, DataError
from dmvqa.losses import LossConfig
from dmvqa.model import ModelConfig, TwoStreamClassifier, load_checkpoint
from dmvqa.reference import train_reference
from dmvqa.train import (RunRecord, TrainConfig, evaluate, run_lambda_sweep,
                         train_model, write_predictions)

TINY_TRAIN = TrainConfig(epochs=2, batch_size=16, learning_rate=1e-3, seed=5,
                         embed_dim=8, hidden_dim=8)


def test_train_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(epochs=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(optimizer="rmsprop")
    with pytest.raises(ConfigError):
        TrainConfig(eval_every=-1)
    d = TrainConfig().to_dict()
    assert d["loss"]["variant"] == "modulated" and "epochs" in d


def test_run_is_bit_reproducible(tiny_dataset):
    a = train_model(tiny_dataset, TINY_TRAIN).record
    b = train_model(tiny_dataset, TINY_TRAIN).record
    assert a.fingerprint() == b.fingerprint()
    c = train_model(tiny_dataset,
                    dataclasses.replace(TINY_TRAIN, seed=6)).record
    assert c.fingerprint() != a.fingerprint()


def test_artifacts_round_trip(tiny_dataset, tmp_path):
    out = tmp_path / "run"
    result = train_model(tiny_dataset, TINY_TRAIN, out_dir=out)
    for name in ("checkpoint.json", "run.json", "losses.csv",
                 "predictions_test.csv"):
        assert (out / name).exists(), name

    loaded = RunRecord.load(out / "run.json")
    assert loaded.fingerprint() == result.record.fingerprint()

    model = load_checkpoint(out / "checkpoint.json")
    for pa, pb in zip(result.model.parameters(), model.parameters()):
        assert np.array_equal(pa.data, pb.data)

    with open(out / "losses.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:3] == ["step", "epoch", "total"]
    assert len(rows) - 1 == len(result.record.step_losses)

    blob = json.loads((out / "run.json").read_text())
    blob["format_version"] = 99
    (tmp_path / "bad.json").write_text(json.dumps(blob))
    with pytest.raises(DataError):
        RunRecord.load(tmp_path / "bad.json")


def test_lambda2_zero_matches_reference_trainer_step_for_step(tiny_dataset):
    cfg = dataclasses.replace(TINY_TRAIN,
                              loss=LossConfig(lambda1=0.05, lambda2=0.0))
    full = train_model(tiny_dataset, cfg)
    ref = train_reference(tiny_dataset, epochs=2, batch_size=16,
                          learning_rate=1e-3, seed=5, lambda1=0.05,
                          embed_dim=8, hidden_dim=8)
    assert len(full.record.step_losses) == len(ref.step_losses)
    for row, expect in zip(full.record.step_losses, ref.step_losses):
        assert row[2] == expect            # exact float equality
        assert row[4] == 0.0 and row[5] == 0 and row[6] == 0
    for pa, pb in zip(full.model.parameters(), ref.model.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_zero_counterpart_request_also_reduces_to_reference(tiny_dataset):
    cfg = dataclasses.replace(TINY_TRAIN, loss=LossConfig(n1=0, n2=0))
    full = train_model(tiny_dataset, cfg)
    ref = train_reference(tiny_dataset, epochs=2, batch_size=16,
                          learning_rate=1e-3, seed=5, lambda1=0.05,
                          embed_dim=8, hidden_dim=8)
    for pa, pb in zip(full.model.parameters(), ref.model.parameters()):
        assert np.array_equal(pa.data, pb.data)


def test_encoder_runs_once_per_instance(tiny_dataset):
    record = train_model(tiny_dataset, TINY_TRAIN).record
    # 2 epochs x 120 training encodes, plus one final eval of each split
    assert record.encode_count == 2 * 120 + 120 + 60
    # heads: every training batch once, synthetic re-pairings again, evals
    assert record.head_count == 2 * 120 + 2 * 120 + 120 + 60
    assert record.shortfall_synthetic == 0


def test_interim_evaluations(tiny_dataset):
    cfg = dataclasses.replace(TINY_TRAIN, eval_every=1)
    record = train_model(tiny_dataset, cfg).record
    assert [e["epoch"] for e in record.interim_evals] == [0, 1]
    for e in record.interim_evals:
        assert 0.0 <= e["test_accuracy"] <= 1.0


def test_sgd_optimizer_path(tiny_dataset):
    cfg = dataclasses.replace(TINY_TRAIN, optimizer="sgd", epochs=1)
    record = train_model(tiny_dataset, cfg).record
    assert record.config["optimizer"] == "sgd"
    assert np.isfinite(record.epoch_losses[0]["total"])


def test_progress_callback(tiny_dataset):
    seen = []
    train_model(tiny_dataset, dataclasses.replace(TINY_TRAIN, epochs=1),
                progress=seen.append)
    assert len(seen) == 1 and seen[0]["epoch"] == 0 and "loss" in seen[0]


def test_train_rejects_empty_dataset(tiny_dataset):
    hollow = dataclasses.replace(tiny_dataset, train=[])
    with pytest.raises(DataError):
        train_model(hollow, TINY_TRAIN)


def test_non_finite_loss_aborts(tiny_dataset, monkeypatch):
    from dmvqa import engine, train as train_mod
    monkeypatch.setattr(train_mod, "vqa_loss",
                        lambda logits, scores: engine.constant(float("nan")))
    with pytest.raises(FloatingPointError):
        train_model(tiny_dataset, TINY_TRAIN)


def test_evaluate_tie_breaks_to_lowest_answer_index(tiny_dataset):
    model = TwoStreamClassifier(ModelConfig(
        n_tokens=len(tiny_dataset.token_vocab),
        n_answers=len(tiny_dataset.answers), d_img=3))
    for p in model.parameters():
        p.data = np.zeros_like(p.data)   # all logits 0, every answer tied
    result = evaluate(model, tiny_dataset.test, tiny_dataset.answers,
                      tiny_dataset.types)
    assert all(r.predicted == 0 for r in result.records)
    assert all(r.probability == 0.5 for r in result.records)
    expect = np.mean([i.scores.get(0, 0.0) for i in tiny_dataset.test])
    assert result.accuracy == pytest.approx(expect)
    assert set(result.per_category) == {"type0", "type1", "type2"}
    with pytest.raises(DataError):
        evaluate(model, [], tiny_dataset.answers, tiny_dataset.types)


def test_evaluate_earns_soft_scores():
    ds = generate_synthetic(SyntheticConfig(n_types=2, answers_per_type=2,
                                            n_train=40, n_test=20, d_img=2,
                                            head_slots=2, head_credit=0.5,
                                            seed=2))
    model = TwoStreamClassifier(ModelConfig(
        n_tokens=len(ds.token_vocab), n_answers=len(ds.answers), d_img=2))
    result = evaluate(model, ds.train, ds.answers, ds.types)
    earned = {r.score for r in result.records}
    assert earned <= {0.0, 0.5, 1.0}
    assert result.accuracy == pytest.approx(
        np.mean([r.score for r in result.records]))


def test_write_predictions_parse_back(tiny_dataset, tmp_path):
    model = TwoStreamClassifier(ModelConfig(
        n_tokens=len(tiny_dataset.token_vocab),
        n_answers=len(tiny_dataset.answers), d_img=3))
    result = evaluate(model, tiny_dataset.test, tiny_dataset.answers,
                      tiny_dataset.types)
    path = tmp_path / "preds.csv"
    write_predictions(result.records, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(result.records)
    assert float(rows[0]["probability"]) == result.records[0].probability


def test_lambda_sweep_outputs(tiny_dataset, tmp_path):
    cfg = dataclasses.replace(TINY_TRAIN, epochs=1)
    rows = run_lambda_sweep(tiny_dataset, cfg, [0, 2], out_dir=tmp_path)
    assert [r["ratio"] for r in rows] == [0.0, 2.0]
    assert rows[1]["lambda2"] == pytest.approx(cfg.loss.lambda1 * 2)
    assert (tmp_path / "sweep.json").exists()
    with open(tmp_path / "sweep.csv") as fh:
        parsed = list(csv.DictReader(fh))
    assert float(parsed[0]["test_accuracy"]) == rows[0]["test_accuracy"]

    with pytest.raises(ConfigError):
        run_lambda_sweep(tiny_dataset, cfg, [-1])
    bad = dataclasses.replace(cfg, loss=LossConfig(lambda1=0.0, lambda2=0.0))
    with pytest.raises(ConfigError):
        run_lambda_sweep(tiny_dataset, bad, [1])
