"""Plain BCE trainer with no pairwise machinery at all.

Exists as an independent yardstick: the full loop run with lambda2 = 0
must reproduce this one bit for bit (same seed, same weight updates,
same per-step losses), proving that disabling the distinguishing terms
really reduces the system to ordinary BCE training. Keep this module
free of any counterpart or pair-loss imports.
"""

from dataclasses import dataclass, field

import numpy as np

from . import engine
from .errors import DataError
from .losses import vqa_loss
from .model import ModelConfig, TwoStreamClassifier


@dataclass
class ReferenceResult:
    model: TwoStreamClassifier
    step_losses: list = field(repr=False)


def train_reference(dataset, epochs, batch_size, learning_rate, seed,
                    lambda1=0.05, embed_dim=32, hidden_dim=64,
                    fusion="product", optimizer="adam") -> ReferenceResult:
    """Minimize lambda1 * BCE with the same init and shuffle streams."""
    insts = dataset.train
    if not insts:
        raise DataError("dataset has no training instances")
    n = len(insts)
    model = TwoStreamClassifier(ModelConfig(
        n_tokens=len(dataset.token_vocab), n_answers=len(dataset.answers),
        d_img=dataset.d_img, embed_dim=embed_dim, hidden_dim=hidden_dim,
        fusion=fusion, seed=seed))
    if optimizer == "adam":
        opt = engine.Adam(model.parameters(), lr=learning_rate)
    else:
        opt = engine.SGD(model.parameters(), lr=learning_rate)
    shuffle_rng = np.random.default_rng([seed, 1])

    feats = np.stack([inst.features for inst in insts])
    tokens = [inst.tokens for inst in insts]
    scores = np.zeros((n, len(dataset.answers)))
    for row, inst in enumerate(insts):
        for k, v in inst.scores.items():
            scores[row, k] = v

    step_losses = []
    for epoch in range(epochs):
        order = shuffle_rng.permutation(n)
        for start in range(0, n, batch_size):
            idx = order[start:start + batch_size]
            v_feat, q_feat = model.encode(feats[idx], [tokens[i] for i in idx])
            _, logits = model.head(v_feat, q_feat)
            loss = engine.scale(vqa_loss(logits, scores[idx]), lambda1)
            model.zero_grad()
            engine.backward(loss)
            opt.step()
            step_losses.append(loss.item())
    return ReferenceResult(model=model, step_losses=step_losses)
