"""Counterpart machinery: inverted index vs brute force, batch sampling,
image exclusion and collision measurement."""

import numpy as np
import pytest

from dmvqa.counterparts import (build_counterpart_index,
                                enumerate_real_counterparts,
                                enumerate_synthetic_counterparts, index_stats,
                                real_counterparts, sample_counterparts,
                                synthetic_collision_rate,
                                synthetic_counterparts)
from dmvqa.data import Instance, SyntheticConfig, generate_synthetic
from dmvqa.errors import ConfigError, DataError


def inst(i, type_id, m, image_id=None, latent=None):
    return Instance(id=f"i{i}", image_id=image_id or f"img{i}",
                    features=np.zeros(2), tokens=[0], type_id=type_id,
                    scores={m: 1.0}, m=m, latent=latent)


FIXTURE = [inst(0, 0, 0), inst(1, 0, 0), inst(2, 0, 1),
           inst(3, 1, 2), inst(4, 1, 3), inst(5, 1, 2)]


def test_real_counterparts_on_hand_fixture():
    index = build_counterpart_index(FIXTURE)
    assert real_counterparts(index, 0) == [2]
    assert real_counterparts(index, 2) == [0, 1]
    assert real_counterparts(index, 3) == [4]
    assert real_counterparts(index, 4) == [3, 5]
    assert len(index) == 6


def test_synthetic_counterparts_are_all_other_positions():
    index = build_counterpart_index(FIXTURE)
    for pos in range(6):
        expect = [j for j in range(6) if j != pos]
        assert synthetic_counterparts(index, pos) == expect
        assert enumerate_synthetic_counterparts(FIXTURE, pos) == expect


def test_index_agrees_with_brute_force_on_random_data():
    for seed in range(3):
        ds = generate_synthetic(SyntheticConfig(
            n_types=4, answers_per_type=3, n_train=150, n_test=10,
            d_img=3, head_slots=2, seed=seed))
        index = build_counterpart_index(ds.train)
        for pos in range(len(ds.train)):
            assert real_counterparts(index, pos) == \
                enumerate_real_counterparts(ds.train, pos)


def test_index_stats_counts_pairs_and_isolated():
    stats = index_stats(build_counterpart_index(FIXTURE))
    assert stats["instances"] == 6 and stats["types"] == 2
    # per type: 3 instances, group sizes (2, 1) -> 9 - 4 - 1 = 4 ordered pairs
    assert stats["per_type"][0]["ordered_real_pairs"] == 4
    assert stats["ordered_real_pairs"] == 8
    assert stats["instances_without_real_counterpart"] == 0

    lonely = [inst(0, 0, 0), inst(1, 0, 0)]
    stats = index_stats(build_counterpart_index(lonely))
    assert stats["ordered_real_pairs"] == 0
    assert stats["instances_without_real_counterpart"] == 2


def as_arrays(instances):
    return (np.asarray([i.type_id for i in instances]),
            np.asarray([i.m for i in instances]))


def test_sampling_is_rng_deterministic():
    types, ms = as_arrays(FIXTURE)
    a = sample_counterparts(types, ms, 1, 1, np.random.default_rng(3))
    b = sample_counterparts(types, ms, 1, 1, np.random.default_rng(3))
    for field in ("anchors_real", "partners_real", "anchors_synthetic",
                  "donors_synthetic"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_sampled_pairs_satisfy_their_definitions():
    types, ms = as_arrays(FIXTURE)
    rng = np.random.default_rng(7)
    for _ in range(20):
        plan = sample_counterparts(types, ms, 2, 2, rng)
        for i, j in zip(plan.anchors_real, plan.partners_real):
            assert types[i] == types[j] and ms[i] != ms[j] and i != j
        for i, j in zip(plan.anchors_synthetic, plan.donors_synthetic):
            assert i != j


def test_sampling_shortfall_and_empty_requests():
    types, ms = as_arrays([inst(0, 0, 0), inst(1, 0, 0), inst(2, 1, 1)])
    plan = sample_counterparts(types, ms, 1, 0, np.random.default_rng(0))
    assert plan.n_real == 0 and plan.n_synthetic == 0
    assert plan.shortfall_real == 3  # nobody has a same-type different-answer peer
    plan = sample_counterparts(types, ms, 0, 5, np.random.default_rng(0))
    assert plan.shortfall_synthetic == 3 * (5 - 2)
    assert plan.n_synthetic == 6
    plan = sample_counterparts(types, ms, 0, 0, np.random.default_rng(0))
    assert plan.n_real == 0 and plan.n_synthetic == 0


def test_synthetic_donors_never_share_the_anchor_image():
    batch = [inst(0, 0, 0, image_id="A"), inst(1, 0, 1, image_id="A"),
             inst(2, 1, 2, image_id="B"), inst(3, 1, 3, image_id="B")]
    types, ms = as_arrays(batch)
    ids = [i.image_id for i in batch]
    rng = np.random.default_rng(1)
    for _ in range(50):
        plan = sample_counterparts(types, ms, 0, 2, rng, image_ids=ids)
        for i, j in zip(plan.anchors_synthetic, plan.donors_synthetic):
            assert ids[i] != ids[j]
        assert plan.n_synthetic == 8  # two eligible donors per anchor


def test_unique_image_ids_reproduce_the_plain_exclusion():
    types, ms = as_arrays(FIXTURE)
    ids = [i.image_id for i in FIXTURE]  # all distinct
    a = sample_counterparts(types, ms, 1, 2, np.random.default_rng(5))
    b = sample_counterparts(types, ms, 1, 2, np.random.default_rng(5),
                            image_ids=ids)
    for field in ("anchors_real", "partners_real", "anchors_synthetic",
                  "donors_synthetic"):
        assert np.array_equal(getattr(a, field), getattr(b, field))


def test_sampling_validation():
    types, ms = as_arrays(FIXTURE)
    with pytest.raises(ConfigError):
        sample_counterparts(types, ms[:-1], 1, 1, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        sample_counterparts(types, ms, -1, 0, np.random.default_rng(0))
    with pytest.raises(ConfigError):
        sample_counterparts(types, ms, 1, 1, np.random.default_rng(0),
                            image_ids=["a"])


def test_collision_rate_extremes():
    same = [inst(i, 0, 0, latent=1) for i in range(4)]
    assert synthetic_collision_rate(same, n_samples=500) == 1.0
    distinct = [inst(i, 0, i, latent=i) for i in range(4)]
    assert synthetic_collision_rate(distinct, n_samples=500) == 0.0
    with pytest.raises(DataError):
        synthetic_collision_rate(same[:1])
    with pytest.raises(DataError):
        synthetic_collision_rate([inst(0, 0, 0), inst(1, 0, 0)])  # no latents


def test_collision_rate_tracks_the_concept_marginal():
    # concentrated concepts collide roughly at the squared-marginal rate
    ds = generate_synthetic(SyntheticConfig(n_train=4000, n_test=10))
    rate = synthetic_collision_rate(ds.train, n_samples=20000,
                                    rng=np.random.default_rng(0))
    marginal = np.bincount([i.latent for i in ds.train], minlength=4) / 4000
    expect = float(np.sum(marginal ** 2))
    assert abs(rate - expect) < 0.02
