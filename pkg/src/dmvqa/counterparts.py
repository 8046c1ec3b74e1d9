"""Counterpart selection for the distinguishing losses.

A *real* counterpart of instance i is any other instance with the same
question type but a different argmax answer: the pair shares intent but
the answers genuinely differ. A *synthetic* counterpart re-pairs another
instance's image with i's question, so every other batch position
qualifies as a donor.

Real lookups go through an inverted index keyed by (question type,
argmax answer); training samples a few counterparts per anchor from
inside the current batch only, so no extra encoder passes are needed.
"""

from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError


@dataclass
class CounterpartIndex:
    """Inverted index: type id -> argmax answer -> sorted positions."""

    by_type_answer: dict
    types: np.ndarray
    ms: np.ndarray
    ids: list

    def __len__(self):
        return len(self.ids)


def build_counterpart_index(instances) -> CounterpartIndex:
    by_type_answer = defaultdict(lambda: defaultdict(list))
    types = np.empty(len(instances), dtype=np.int64)
    ms = np.empty(len(instances), dtype=np.int64)
    ids = []
    for pos, inst in enumerate(instances):
        by_type_answer[inst.type_id][inst.m].append(pos)
        types[pos] = inst.type_id
        ms[pos] = inst.m
        ids.append(inst.id)
    frozen = {t: {m: positions for m, positions in groups.items()}
              for t, groups in by_type_answer.items()}
    return CounterpartIndex(by_type_answer=frozen, types=types, ms=ms, ids=ids)


def real_counterparts(index: CounterpartIndex, pos: int):
    """Positions sharing pos's question type with a different argmax answer."""
    t, m = int(index.types[pos]), int(index.ms[pos])
    groups = index.by_type_answer.get(t, {})
    out = []
    for answer in sorted(groups):
        if answer != m:
            out.extend(groups[answer])
    return sorted(out)


def synthetic_counterparts(index: CounterpartIndex, pos: int):
    """Every other position: any image can be re-paired with pos's question."""
    return [j for j in range(len(index)) if j != pos]


def enumerate_real_counterparts(instances, pos: int):
    """Brute-force scan; reference implementation for the index."""
    anchor = instances[pos]
    return [j for j, inst in enumerate(instances)
            if j != pos and inst.type_id == anchor.type_id and inst.m != anchor.m]


def enumerate_synthetic_counterparts(instances, pos: int):
    return [j for j in range(len(instances)) if j != pos]


def index_stats(index: CounterpartIndex) -> dict:
    """Sizes that bound how much signal the real-pair loss can see."""
    n = len(index)
    per_type = {}
    total_pairs = 0
    isolated = 0
    for t, groups in sorted(index.by_type_answer.items()):
        sizes = {m: len(v) for m, v in groups.items()}
        n_t = sum(sizes.values())
        pairs_t = n_t * n_t - sum(s * s for s in sizes.values())
        total_pairs += pairs_t
        per_type[t] = {"instances": n_t, "answers": len(sizes),
                       "ordered_real_pairs": pairs_t}
        for m, s in sizes.items():
            if s == n_t:
                isolated += s
    return {"instances": n, "types": len(index.by_type_answer),
            "ordered_real_pairs": total_pairs,
            "instances_without_real_counterpart": isolated,
            "per_type": per_type}


def synthetic_collision_rate(instances, n_samples=20000, rng=None) -> float:
    """Fraction of random donor re-pairings that keep the anchor's answer.

    Re-pairing image j with question i silently preserves the label when
    both images depict the same concept. We leave such pairs in during
    training and only measure how often they occur.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    n = len(instances)
    if n < 2:
        raise DataError("need at least two instances")
    latents = [inst.latent for inst in instances]
    if any(l is None for l in latents):
        raise DataError("collision rate needs generator concept labels")
    lat = np.asarray(latents)
    anchors = rng.integers(n, size=n_samples)
    donors = rng.integers(n - 1, size=n_samples)
    donors = donors + (donors >= anchors)
    return float(np.mean(lat[anchors] == lat[donors]))


@dataclass
class CounterpartPlan:
    """Flattened in-batch pairs, ready for vectorized loss evaluation."""

    anchors_real: np.ndarray
    partners_real: np.ndarray
    anchors_synthetic: np.ndarray
    donors_synthetic: np.ndarray
    shortfall_real: int
    shortfall_synthetic: int

    @property
    def n_real(self):
        return len(self.anchors_real)

    @property
    def n_synthetic(self):
        return len(self.anchors_synthetic)


def sample_counterparts(types, ms, n1: int, n2: int, rng,
                        image_ids=None) -> CounterpartPlan:
    """Draw up to n1 real and n2 synthetic counterparts per batch position.

    Synthetic donors never share the anchor's image: when image_ids is
    given, every position with the same id is excluded, otherwise only
    the anchor position itself. Scarce anchors keep whatever is
    available instead of failing; the shortfall counters report how many
    draws were skipped. Draw order is fixed (per anchor: real picks,
    then synthetic picks) so a seeded rng reproduces the plan exactly.
    """
    types = np.asarray(types)
    ms = np.asarray(ms)
    if types.shape != ms.shape or types.ndim != 1:
        raise ConfigError(f"types and ms must be matching 1-D arrays, "
                          f"got {types.shape} and {ms.shape}")
    if n1 < 0 or n2 < 0:
        raise ConfigError(f"counterpart counts must be >= 0, got n1={n1} n2={n2}")
    n = len(types)
    if image_ids is not None and len(image_ids) != n:
        raise ConfigError(f"image_ids must match types, got {len(image_ids)} != {n}")

    by_type = defaultdict(list)
    for j, t in enumerate(types):
        by_type[int(t)].append(j)
    complements = {}
    same_image = None
    if image_ids is not None:
        groups = defaultdict(list)
        for j, gid in enumerate(image_ids):
            groups[gid].append(j)
        same_image = [groups[gid] for gid in image_ids]

    a_real, p_real, a_syn, d_syn = [], [], [], []
    short_real = short_syn = 0
    for i in range(n):
        if n1 > 0:
            key = (int(types[i]), int(ms[i]))
            if key not in complements:
                complements[key] = np.asarray(
                    [j for j in by_type[key[0]] if ms[j] != key[1]], dtype=np.int64)
            cands = complements[key]
            take = min(n1, len(cands))
            short_real += n1 - take
            if take == 1:
                picks = [int(cands[rng.integers(len(cands))])]
            elif take > 1:
                picks = sorted(int(x) for x in rng.choice(cands, size=take, replace=False))
            else:
                picks = []
            for j in picks:
                a_real.append(i)
                p_real.append(j)
        if n2 > 0:
            excluded = same_image[i] if same_image is not None else [i]
            avail = n - len(excluded)
            take = min(n2, avail)
            short_syn += n2 - take
            if take == 1:
                raw = [int(rng.integers(avail))]
            elif take > 1:
                raw = sorted(int(x) for x in rng.choice(avail, size=take, replace=False))
            else:
                raw = []
            for j in raw:
                # positions in `excluded` are ascending, so each skipped
                # slot at or below j shifts the draw up by one
                for e in excluded:
                    if e <= j:
                        j += 1
                a_syn.append(i)
                d_syn.append(j)

    as_idx = lambda xs: np.asarray(xs, dtype=np.int64)
    return CounterpartPlan(
        anchors_real=as_idx(a_real), partners_real=as_idx(p_real),
        anchors_synthetic=as_idx(a_syn), donors_synthetic=as_idx(d_syn),
        shortfall_real=short_real, shortfall_synthetic=short_syn)
