"""Training loop, evaluation, run records and the weight-sweep harness.

Determinism contract: three independent generator streams are derived
from the run seed. [seed, 0] initializes the weights (inside the model),
[seed, 1] shuffles epochs, [seed, 2] draws counterparts. A run with
lambda2 = 0 never touches stream 2, so it consumes exactly the randomness
of a plain BCE run and reproduces one step for step.

Each batch is encoded once; the answer head runs a second time only on
re-paired (donor image, anchor question) feature rows, never the encoder.
"""

import csv
import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import engine
from .counterparts import sample_counterparts
from .errors import ConfigError, DataError
from .losses import LossConfig, combine, real_pair_sum, synthetic_pair_sum, vqa_loss
from .metrics import PredictionRecord
from .model import ModelConfig, TwoStreamClassifier, save_checkpoint

RECORD_VERSION = 1
OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 9e-3
    optimizer: str = "adam"
    seed: int = 0
    embed_dim: int = 32
    hidden_dim: int = 64
    fusion: str = "product"
    loss: LossConfig = LossConfig()
    eval_every: int = 0       # epochs between test evals; 0 = final only

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, "
                              f"got {self.optimizer!r}")
        if self.eval_every < 0:
            raise ConfigError(f"eval_every must be >= 0, got {self.eval_every}")

    def to_dict(self):
        d = {k: getattr(self, k) for k in
             ("epochs", "batch_size", "learning_rate", "optimizer", "seed",
              "embed_dim", "hidden_dim", "fusion", "eval_every")}
        d["loss"] = {k: getattr(self.loss, k) for k in
                     ("lambda1", "lambda2", "variant", "mf_policy", "n1", "n2",
                      "dis_normalization")}
        return d


@dataclass
class EvalResult:
    accuracy: float
    per_category: dict
    n: int
    records: list = field(default_factory=list, repr=False)


@dataclass
class RunRecord:
    config: dict
    dataset: dict
    epoch_losses: list
    step_losses: list
    train_accuracy: float
    test_accuracy: float
    train_per_category: dict
    test_per_category: dict
    interim_evals: list
    encode_count: int
    head_count: int
    shortfall_real: int
    shortfall_synthetic: int
    wall_time_s: float

    def to_dict(self):
        d = {"format_version": RECORD_VERSION}
        for k in ("config", "dataset", "epoch_losses", "step_losses",
                  "train_accuracy", "test_accuracy", "train_per_category",
                  "test_per_category", "interim_evals", "encode_count",
                  "head_count", "shortfall_real", "shortfall_synthetic",
                  "wall_time_s"):
            d[k] = getattr(self, k)
        return d

    def fingerprint(self):
        """Canonical JSON of everything except wall-clock time."""
        d = self.to_dict()
        del d["wall_time_s"]
        return json.dumps(d, sort_keys=True)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            d = json.load(fh)
        if d.get("format_version") != RECORD_VERSION:
            raise DataError(f"{path}: unsupported run record version "
                            f"{d.get('format_version')}")
        d.pop("format_version")
        return cls(**d)


@dataclass
class TrainResult:
    model: TwoStreamClassifier
    record: RunRecord
    train_eval: EvalResult
    test_eval: EvalResult


def _dense_scores(instances, n_answers):
    out = np.zeros((len(instances), n_answers))
    for row, inst in enumerate(instances):
        for k, v in inst.scores.items():
            out[row, k] = v
    return out


def evaluate(model, instances, answers, types, batch_size=1024) -> EvalResult:
    """Mean answer score of the argmax prediction, overall and per category.

    Synthetic instances bucket by question type; ingested ones carry an
    explicit category. Argmax ties resolve to the lowest answer index.
    """
    if not instances:
        raise DataError("cannot evaluate an empty split")
    feats = np.stack([inst.features for inst in instances])
    probs = model.predict_proba(feats, [inst.tokens for inst in instances],
                                batch_size=batch_size)
    preds = np.argmax(probs, axis=1)
    records = []
    by_cat = {}
    total = 0.0
    for row, inst in enumerate(instances):
        k = int(preds[row])
        earned = float(inst.scores.get(k, 0.0))
        cat = inst.category if inst.category is not None else types.names[inst.type_id]
        total += earned
        by_cat.setdefault(cat, []).append(earned)
        records.append(PredictionRecord(
            id=inst.id, category=cat, predicted=k,
            answer=answers.answers[k], probability=float(probs[row, k]),
            score=earned))
    per_category = {c: float(np.mean(v)) for c, v in sorted(by_cat.items())}
    return EvalResult(accuracy=total / len(instances), per_category=per_category,
                      n=len(instances), records=records)


def train_model(dataset, config: TrainConfig, out_dir=None, progress=None) -> TrainResult:
    """Run the full loop on dataset.train and evaluate both splits.

    With out_dir set, writes checkpoint.json, run.json, losses.csv and
    predictions_test.csv there. progress, if given, is called once per
    epoch with a small status dict.
    """
    insts = dataset.train
    if not insts:
        raise DataError("dataset has no training instances")
    n = len(insts)
    n_answers = len(dataset.answers)
    lcfg = config.loss

    model = TwoStreamClassifier(ModelConfig(
        n_tokens=len(dataset.token_vocab), n_answers=n_answers,
        d_img=dataset.d_img, embed_dim=config.embed_dim,
        hidden_dim=config.hidden_dim, fusion=config.fusion, seed=config.seed))
    if config.optimizer == "adam":
        opt = engine.Adam(model.parameters(), lr=config.learning_rate)
    else:
        opt = engine.SGD(model.parameters(), lr=config.learning_rate)
    shuffle_rng = np.random.default_rng([config.seed, 1])
    sample_rng = np.random.default_rng([config.seed, 2])

    feats = np.stack([inst.features for inst in insts])
    tokens = [inst.tokens for inst in insts]
    types_arr = np.asarray([inst.type_id for inst in insts], dtype=np.int64)
    ms_arr = np.asarray([inst.m for inst in insts], dtype=np.int64)
    image_ids = [inst.image_id for inst in insts]
    scores = _dense_scores(insts, n_answers)
    use_dis = lcfg.lambda2 != 0.0 and (lcfg.n1 > 0 or lcfg.n2 > 0)

    step = 0
    step_losses = []
    epoch_losses = []
    interim_evals = []
    short_real = short_syn = 0
    t0 = time.perf_counter()
    for epoch in range(config.epochs):
        order = shuffle_rng.permutation(n)
        epoch_total = epoch_vqa = epoch_dis = 0.0
        epoch_steps = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            b = len(idx)
            enc_before = model.encode_count
            v_feat, q_feat = model.encode(feats[idx], [tokens[i] for i in idx])
            _, logits = model.head(v_feat, q_feat)
            p = engine.sigmoid(logits)
            l_vqa = vqa_loss(logits, scores[idx])

            real_sum = syn_sum = None
            n_real = n_syn = 0
            if use_dis:
                plan = sample_counterparts(types_arr[idx], ms_arr[idx],
                                           lcfg.n1, lcfg.n2, sample_rng,
                                           image_ids=[image_ids[i] for i in idx])
                short_real += plan.shortfall_real
                short_syn += plan.shortfall_synthetic
                n_real, n_syn = plan.n_real, plan.n_synthetic
                batch_ms = ms_arr[idx]
                if n_real:
                    m_a = batch_ms[plan.anchors_real]
                    m_p = batch_ms[plan.partners_real]
                    p_im = engine.gather_pairs(p, plan.anchors_real, m_a)
                    p_jm = engine.gather_pairs(p, plan.partners_real, m_a)
                    if lcfg.variant == "symmetric":
                        p_jn = engine.gather_pairs(p, plan.partners_real, m_p)
                        p_in = engine.gather_pairs(p, plan.anchors_real, m_p)
                    else:
                        p_jn = p_in = None
                    real_sum = real_pair_sum(p_im, p_jm, p_jn, p_in, lcfg)
                if n_syn:
                    # donor image features meet the anchor's question features;
                    # only the head reruns, the encoder output is reused
                    v_s = engine.gather_rows(v_feat, plan.donors_synthetic)
                    q_s = engine.gather_rows(q_feat, plan.anchors_synthetic)
                    _, logits_s = model.head(v_s, q_s)
                    p_s = engine.sigmoid(logits_s)
                    m_a = batch_ms[plan.anchors_synthetic]
                    p_im = engine.gather_pairs(p, plan.anchors_synthetic, m_a)
                    p_jm = engine.gather_pairs(p_s, np.arange(n_syn), m_a)
                    syn_sum = synthetic_pair_sum(p_im, p_jm, lcfg)

            breakdown = combine(l_vqa, real_sum, syn_sum, b, lcfg, n_real, n_syn)
            if not (math.isfinite(breakdown.value) and math.isfinite(breakdown.vqa)
                    and math.isfinite(breakdown.dis)):
                raise FloatingPointError(
                    f"non-finite loss at step {step}: total={breakdown.value} "
                    f"vqa={breakdown.vqa} dis={breakdown.dis}")
            if model.encode_count - enc_before != b:
                raise RuntimeError(
                    f"encoder ran {model.encode_count - enc_before} instance passes "
                    f"for a {b}-instance batch at step {step}")

            model.zero_grad()
            engine.backward(breakdown.total)
            opt.step()

            step_losses.append([step, epoch, breakdown.value, breakdown.vqa,
                                breakdown.dis, n_real, n_syn])
            epoch_total += breakdown.value
            epoch_vqa += breakdown.vqa
            epoch_dis += breakdown.dis
            epoch_steps += 1
            step += 1
        epoch_losses.append({"epoch": epoch, "total": epoch_total / epoch_steps,
                             "vqa": epoch_vqa / epoch_steps,
                             "dis": epoch_dis / epoch_steps})
        if config.eval_every and (epoch + 1) % config.eval_every == 0:
            ev = evaluate(model, dataset.test, dataset.answers, dataset.types)
            interim_evals.append({"epoch": epoch, "test_accuracy": ev.accuracy})
        if progress is not None:
            progress({"epoch": epoch, "epochs": config.epochs,
                      "loss": epoch_losses[-1]["total"],
                      "vqa": epoch_losses[-1]["vqa"],
                      "dis": epoch_losses[-1]["dis"]})
    wall = time.perf_counter() - t0

    train_eval = evaluate(model, dataset.train, dataset.answers, dataset.types)
    test_eval = evaluate(model, dataset.test, dataset.answers, dataset.types)
    record = RunRecord(
        config=config.to_dict(),
        dataset={"kind": dataset.kind, "n_train": len(dataset.train),
                 "n_test": len(dataset.test), "d_img": dataset.d_img,
                 "seed": dataset.seed},
        epoch_losses=epoch_losses, step_losses=step_losses,
        train_accuracy=train_eval.accuracy, test_accuracy=test_eval.accuracy,
        train_per_category=train_eval.per_category,
        test_per_category=test_eval.per_category,
        interim_evals=interim_evals,
        encode_count=model.encode_count, head_count=model.head_count,
        shortfall_real=short_real, shortfall_synthetic=short_syn,
        wall_time_s=wall)

    if out_dir is not None:
        _write_artifacts(out_dir, model, record, test_eval)
    return TrainResult(model=model, record=record,
                       train_eval=train_eval, test_eval=test_eval)


def _write_artifacts(out_dir, model, record, test_eval):
    import os
    os.makedirs(out_dir, exist_ok=True)
    save_checkpoint(model, os.path.join(out_dir, "checkpoint.json"))
    record.save(os.path.join(out_dir, "run.json"))
    with open(os.path.join(out_dir, "losses.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "epoch", "total", "vqa", "dis", "n_real", "n_synthetic"])
        w.writerows(record.step_losses)
    write_predictions(test_eval.records, os.path.join(out_dir, "predictions_test.csv"))


def write_predictions(records, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "category", "predicted_index", "predicted_answer",
                    "probability", "score"])
        for r in records:
            w.writerow([r.id, r.category, r.predicted, r.answer,
                        repr(r.probability), repr(r.score)])


def run_lambda_sweep(dataset, config: TrainConfig, ratios, out_dir=None,
                     progress=None):
    """Train once per lambda2/lambda1 ratio and collect split accuracies."""
    if config.loss.lambda1 <= 0:
        raise ConfigError("sweep ratios need lambda1 > 0")
    rows = []
    for ratio in ratios:
        if ratio < 0:
            raise ConfigError(f"sweep ratios must be >= 0, got {ratio}")
        cfg = replace(config, loss=replace(config.loss,
                                           lambda2=config.loss.lambda1 * ratio))
        result = train_model(dataset, cfg)
        rows.append({"ratio": float(ratio), "lambda1": config.loss.lambda1,
                     "lambda2": cfg.loss.lambda2,
                     "train_accuracy": result.record.train_accuracy,
                     "test_accuracy": result.record.test_accuracy})
        if progress is not None:
            progress(rows[-1])
    if out_dir is not None:
        import os
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.json"), "w") as fh:
            json.dump(rows, fh, indent=1)
        with open(os.path.join(out_dir, "sweep.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["ratio", "lambda1", "lambda2", "train_accuracy",
                        "test_accuracy"])
            for r in rows:
                w.writerow([r["ratio"], r["lambda1"], r["lambda2"],
                            repr(r["train_accuracy"]), repr(r["test_accuracy"])])
    return rows
