"""Training losses: per-answer BCE plus pairwise distinguishing terms.

The classifier emits one sigmoid probability per answer, so the base
loss is binary cross-entropy summed over answers and averaged over the
batch, computed from logits through the stable log-sigmoid.

The distinguishing terms push an anchor's probability for its own
answer m above a counterpart's probability for that same m:

    symmetric    -[log s(p_im - p_jm) + log s(p_jn - p_in)]
    simplified   -log s(p_im - p_jm)
    modulated    -p_jm * log s(p_im - p_jm)

where s is the sigmoid, i the anchor, j the counterpart and n the
counterpart's own answer. The modulating factor p_jm damps pairs whose
counterpart never believed in m anyway; by default it is treated as a
constant weight (no gradient through it).

Pair sums come back unnormalized; `combine` applies the weighting
lambda1 * L_vqa + lambda2 * L_dis, where L_dis divides the pair sum by
the batch size ("per_anchor", so each anchor's counterparts add up) or
by the number of pair terms ("per_term").
"""

from dataclasses import dataclass

import numpy as np

from . import engine
from .engine import Tensor, constant
from .errors import ConfigError

VARIANTS = ("symmetric", "simplified", "modulated")
MF_POLICIES = ("detached", "differentiated")
DIS_NORMALIZATIONS = ("per_anchor", "per_term")


@dataclass(frozen=True)
class LossConfig:
    lambda1: float = 0.05
    lambda2: float = 0.6
    variant: str = "modulated"
    mf_policy: str = "detached"
    n1: int = 1
    n2: int = 1
    dis_normalization: str = "per_anchor"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.mf_policy not in MF_POLICIES:
            raise ConfigError(f"mf_policy must be one of {MF_POLICIES}, "
                              f"got {self.mf_policy!r}")
        if self.dis_normalization not in DIS_NORMALIZATIONS:
            raise ConfigError(f"dis_normalization must be one of {DIS_NORMALIZATIONS}, "
                              f"got {self.dis_normalization!r}")
        if self.n1 < 0 or self.n2 < 0:
            raise ConfigError(f"n1 and n2 must be >= 0, got {self.n1}, {self.n2}")
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ConfigError(f"lambda1 and lambda2 must be >= 0, "
                              f"got {self.lambda1}, {self.lambda2}")


def vqa_loss(logits: Tensor, scores: np.ndarray) -> Tensor:
    """BCE from logits: mean over the batch of the per-answer sum."""
    if logits.shape != scores.shape:
        raise ConfigError(f"logits {logits.shape} and scores {scores.shape} differ")
    batch = scores.shape[0]
    pos = engine.mul(constant(scores), engine.log_sigmoid(logits))
    neg = engine.mul(constant(1.0 - scores), engine.log_sigmoid(engine.neg(logits)))
    return engine.scale(engine.sum_all(engine.add(pos, neg)), -1.0 / batch)


def pair_sum_symmetric(p_im: Tensor, p_jm: Tensor, p_jn: Tensor, p_in: Tensor) -> Tensor:
    """-sum[log s(p_im - p_jm) + log s(p_jn - p_in)] over pairs."""
    fwd = engine.log_sigmoid(engine.sub(p_im, p_jm))
    rev = engine.log_sigmoid(engine.sub(p_jn, p_in))
    return engine.scale(engine.sum_all(engine.add(fwd, rev)), -1.0)


def pair_sum_simplified(p_im: Tensor, p_jm: Tensor) -> Tensor:
    """-sum log s(p_im - p_jm) over pairs."""
    return engine.scale(engine.sum_all(engine.log_sigmoid(engine.sub(p_im, p_jm))), -1.0)


def pair_sum_modulated(p_im: Tensor, p_jm: Tensor, mf_policy: str = "detached") -> Tensor:
    """-sum p_jm * log s(p_im - p_jm) over pairs."""
    if mf_policy not in MF_POLICIES:
        raise ConfigError(f"mf_policy must be one of {MF_POLICIES}, got {mf_policy!r}")
    weight = engine.detach(p_jm) if mf_policy == "detached" else p_jm
    margin = engine.log_sigmoid(engine.sub(p_im, p_jm))
    return engine.scale(engine.sum_all(engine.mul(weight, margin)), -1.0)


def real_pair_sum(p_im, p_jm, p_jn, p_in, config: LossConfig) -> Tensor:
    """Distinguishing sum over real pairs, which carry both answers m and n."""
    if config.variant == "symmetric":
        return pair_sum_symmetric(p_im, p_jm, p_jn, p_in)
    if config.variant == "simplified":
        return pair_sum_simplified(p_im, p_jm)
    return pair_sum_modulated(p_im, p_jm, config.mf_policy)


def synthetic_pair_sum(p_im, p_jm, config: LossConfig) -> Tensor:
    """Distinguishing sum over synthetic pairs.

    A donor image re-paired with the anchor's question has no answer of
    its own, so only the anchor-side margin exists; the symmetric
    variant falls back to the one-sided form here.
    """
    if config.variant == "modulated":
        return pair_sum_modulated(p_im, p_jm, config.mf_policy)
    return pair_sum_simplified(p_im, p_jm)


@dataclass
class LossBreakdown:
    total: Tensor
    vqa: float
    dis: float
    n_real: int
    n_synthetic: int

    @property
    def value(self):
        return self.total.item()


def combine(vqa: Tensor, real_sum, synthetic_sum, batch_size: int,
            config: LossConfig, n_real: int = 0, n_synthetic: int = 0) -> LossBreakdown:
    """Weight the pieces into the optimized scalar.

    real_sum / synthetic_sum may be None when a batch offers no such
    pairs; L_dis is then just the surviving part (or zero).
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    parts = [s for s in (real_sum, synthetic_sum) if s is not None]
    if parts and config.lambda2 != 0.0:
        dis_sum = parts[0] if len(parts) == 1 else engine.add(parts[0], parts[1])
        if config.dis_normalization == "per_anchor":
            denom = float(batch_size)
        else:
            denom = float(max(n_real + n_synthetic, 1))
        dis = engine.scale(dis_sum, 1.0 / denom)
        total = engine.add(engine.scale(vqa, config.lambda1),
                           engine.scale(dis, config.lambda2))
        dis_value = dis.item()
    else:
        total = engine.scale(vqa, config.lambda1)
        dis_value = 0.0
    return LossBreakdown(total=total, vqa=vqa.item(), dis=dis_value,
                         n_real=n_real, n_synthetic=n_synthetic)
