"""Two-stream answer classifier.

Maps an (image feature vector, question token sequence) pair to independent
per-answer probabilities. The question side is a bag-of-embeddings encoder,
the image side an affine projection; the streams are fused (elementwise
product by default, concatenation behind config), pushed through two hidden
ReLU layers and a linear output head, then squashed with a sigmoid. The second
hidden activation is the "fused feature" that training shares between the
answering loss and the counterpart loss.
"""

import json
from dataclasses import dataclass, asdict, field

import numpy as np

from . import engine
from .engine import Parameter, Tensor
from .errors import ConfigError, DataError

_FUSIONS = ("product", "concat")


@dataclass(frozen=True)
class ModelConfig:
    n_tokens: int
    n_answers: int
    d_img: int
    embed_dim: int = 32
    hidden_dim: int = 64
    fusion: str = "product"
    seed: int = 0

    def __post_init__(self):
        for name in ("n_tokens", "n_answers", "d_img", "embed_dim", "hidden_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.fusion not in _FUSIONS:
            raise ConfigError(f"fusion must be one of {_FUSIONS}, got {self.fusion!r}")


@dataclass
class ForwardPass:
    """Tape nodes from one batch forward, reused by every loss term."""
    v_feat: Tensor
    q_feat: Tensor
    fused: Tensor
    logits: Tensor
    p: Tensor


class TwoStreamClassifier:

    def __init__(self, config: ModelConfig):
        self.config = config
        rng = np.random.default_rng([config.seed, 0])
        d, h = config.embed_dim, config.hidden_dim
        d_fuse = d if config.fusion == "product" else 2 * d

        def dense(n_in, n_out, name):
            w = Parameter(rng.standard_normal((n_in, n_out)) / np.sqrt(n_in), name)
            b = Parameter(np.zeros(n_out), name + "_b")
            return w, b

        self.embed = Parameter(rng.standard_normal((config.n_tokens, d)) / np.sqrt(d), "embed")
        self.wq, self.bq = dense(d, d, "q_proj")
        self.wv, self.bv = dense(config.d_img, d, "v_proj")
        self.w1, self.b1 = dense(d_fuse, h, "fuse1")
        self.w2, self.b2 = dense(h, h, "fuse2")
        self.wo, self.bo = dense(h, config.n_answers, "out")
        # encode passes counted per instance; head reruns (feature re-pairings) separately
        self.encode_count = 0
        self.head_count = 0

    def parameters(self):
        return [self.embed, self.wq, self.bq, self.wv, self.bv,
                self.w1, self.b1, self.w2, self.b2, self.wo, self.bo]

    def zero_grad(self):
        for p in self.parameters():
            p.zero_grad()

    # -- encoders ----------------------------------------------------------

    def encode_questions(self, token_lists, instance_ids=None):
        """Mean token embedding + affine + ReLU. Permutation invariant."""
        n_tok = self.config.n_tokens
        avg = np.zeros((len(token_lists), n_tok))
        for row, tokens in enumerate(token_lists):
            if len(tokens) == 0:
                label = instance_ids[row] if instance_ids is not None else row
                raise DataError(f"instance {label}: empty question")
            for tok in tokens:
                if not 0 <= tok < n_tok:
                    label = instance_ids[row] if instance_ids is not None else row
                    raise DataError(
                        f"instance {label}: token id {tok} outside vocabulary of size {n_tok}")
                avg[row, tok] += 1.0 / len(tokens)
        bag = engine.matmul(engine.constant(avg), self.embed)
        return engine.relu(engine.add(engine.matmul(bag, self.wq), self.bq))

    def encode_images(self, feats):
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[1] != self.config.d_img:
            raise DataError(
                f"image features must be (batch, {self.config.d_img}), got {feats.shape}")
        proj = engine.matmul(engine.constant(feats), self.wv)
        return engine.relu(engine.add(proj, self.bv))

    def encode(self, feats, token_lists, instance_ids=None):
        """One encoder pass per instance; the counted forward of a step."""
        v = self.encode_images(feats)
        q = self.encode_questions(token_lists, instance_ids)
        self.encode_count += v.shape[0]
        return v, q

    # -- head --------------------------------------------------------------

    def head(self, v_feat, q_feat):
        """Fusion + hidden layers + output logits on already-encoded streams.

        Re-runnable on re-paired (image, question) features; returns the
        fused feature alongside the logits.
        """
        if self.config.fusion == "product":
            z = engine.mul(v_feat, q_feat)
        else:
            z = engine.concat([v_feat, q_feat], axis=1)
        h1 = engine.relu(engine.add(engine.matmul(z, self.w1), self.b1))
        fused = engine.relu(engine.add(engine.matmul(h1, self.w2), self.b2))
        logits = engine.add(engine.matmul(fused, self.wo), self.bo)
        self.head_count += logits.shape[0]
        return fused, logits

    def predict(self, v_feat, q_feat):
        """Per-answer probabilities for encoded feature pairs."""
        fused, logits = self.head(v_feat, q_feat)
        return fused, engine.sigmoid(logits)

    def forward(self, feats, token_lists, instance_ids=None):
        v, q = self.encode(feats, token_lists, instance_ids)
        fused, logits = self.head(v, q)
        return ForwardPass(v, q, fused, logits, engine.sigmoid(logits))

    def predict_proba(self, feats, token_lists, batch_size=1024):
        """Evaluation path: probabilities as a plain array, chunked."""
        out = []
        for lo in range(0, len(token_lists), batch_size):
            fwd = self.forward(feats[lo:lo + batch_size],
                               token_lists[lo:lo + batch_size])
            out.append(fwd.p.data)
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.n_answers))


# ---------------------------------------------------------------------------
# Checkpointing
# ---------------------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(model, path):
    blob = {
        "format_version": CHECKPOINT_VERSION,
        "config": asdict(model.config),
        "params": {
            p.name: {"shape": list(p.data.shape), "data": p.data.reshape(-1).tolist()}
            for p in model.parameters()
        },
    }
    with open(path, "w") as fh:
        json.dump(blob, fh)


def load_checkpoint(path):
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("format_version") != CHECKPOINT_VERSION:
        raise DataError(f"unsupported checkpoint version in {path}: {blob.get('format_version')}")
    model = TwoStreamClassifier(ModelConfig(**blob["config"]))
    for p in model.parameters():
        entry = blob["params"][p.name]
        data = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        if data.shape != p.data.shape:
            raise DataError(f"checkpoint parameter {p.name} has shape {data.shape}, "
                            f"expected {p.data.shape}")
        p.data = data
    return model
