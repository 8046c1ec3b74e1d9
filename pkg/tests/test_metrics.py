"""Diagnostics: distributions, divergences, class geometry against a
brute-force oracle, and the 2-D projection."""

import csv
import math

import numpy as np
import pytest

from dmvqa.data import SyntheticConfig, generate_synthetic
from dmvqa.errors import ConfigError, DataError
from dmvqa.metrics import (answer_distribution, class_distances,
                           export_answer_space, fused_features, js_by_group,
                           js_divergence, pca_2d, predicted_answer_indices,
                           total_variation, true_answer_indices)
from dmvqa.model import ModelConfig, TwoStreamClassifier
from dmvqa.train import evaluate


def test_answer_distribution_normalizes():
    d = answer_distribution([0, 0, 1, 3], 5)
    assert d.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.array_equal(d, [0.5, 0.25, 0.0, 0.25, 0.0])
    with pytest.raises(DataError):
        answer_distribution([], 3)
    with pytest.raises(DataError):
        answer_distribution([3], 3)
    with pytest.raises(DataError):
        answer_distribution([-1], 3)


def test_js_divergence_bounds_and_fixture():
    assert js_divergence([0.25, 0.75], [0.25, 0.75]) == pytest.approx(0.0, abs=1e-12)
    assert js_divergence([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-12)
    # KL([1,0] || m)/2 + KL([.5,.5] || m)/2 with m = [.75,.25] reduces to
    # 3/2 - (3/4) log2 3 in closed form
    assert js_divergence([1.0, 0.0], [0.5, 0.5]) == \
        pytest.approx(1.5 - 0.75 * math.log2(3.0), abs=1e-12)
    # symmetric, and raw counts normalize on the way in
    assert js_divergence([3, 1], [1, 3]) == pytest.approx(
        js_divergence([0.25, 0.75], [0.75, 0.25]), abs=1e-15)
    nats = js_divergence([1.0, 0.0], [0.5, 0.5], base=math.e)
    assert nats == pytest.approx((1.5 - 0.75 * math.log2(3.0)) * math.log(2.0),
                                 abs=1e-12)


def test_distribution_validation():
    with pytest.raises(ConfigError):
        js_divergence([0.5, 0.5], [0.5, 0.4, 0.1])
    with pytest.raises(ConfigError):
        js_divergence([-0.1, 1.1], [0.5, 0.5])
    with pytest.raises(ConfigError):
        js_divergence([0.0, 0.0], [0.5, 0.5])
    with pytest.raises(ConfigError):
        js_divergence(np.ones((2, 2)), np.ones((2, 2)))


def test_total_variation():
    assert total_variation([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0)
    assert total_variation([0.5, 0.5], [0.25, 0.75]) == pytest.approx(0.25)
    assert total_variation([0.3, 0.7], [0.3, 0.7]) == 0.0


def test_js_by_group_matches_per_group_computation():
    pred = [0, 0, 1, 2, 2, 2]
    true = [0, 1, 1, 2, 2, 0]
    groups = ["a", "a", "a", "b", "b", "b"]
    out = js_by_group(pred, true, groups, n_answers=3)
    expect_a = js_divergence(answer_distribution([0, 0, 1], 3),
                             answer_distribution([0, 1, 1], 3))
    expect_b = js_divergence(answer_distribution([2, 2, 2], 3),
                             answer_distribution([2, 2, 0], 3))
    assert out.per_group["a"] == pytest.approx(expect_a, abs=1e-15)
    assert out.per_group["b"] == pytest.approx(expect_b, abs=1e-15)
    assert out.mean == pytest.approx((expect_a + expect_b) / 2, abs=1e-15)
    with pytest.raises(ConfigError):
        js_by_group([0], [0, 1], ["a", "a"], 2)
    with pytest.raises(DataError):
        js_by_group([], [], [], 2)


def oracle_class_distances(points, labels):
    """Independent double-loop implementation with compensated summation."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    per_class, centroids = {}, []
    for label in np.unique(labels):
        members = points[labels == label]
        centroids.append(members.mean(axis=0))
        if len(members) < 2:
            continue
        dists = []
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                dists.append(math.sqrt(math.fsum(
                    (members[i][k] - members[j][k]) ** 2
                    for k in range(points.shape[1]))))
        per_class[label.item()] = math.fsum(dists) / len(dists)
    cd = []
    for i in range(len(centroids)):
        for j in range(i + 1, len(centroids)):
            cd.append(math.sqrt(math.fsum(
                (centroids[i][k] - centroids[j][k]) ** 2
                for k in range(points.shape[1]))))
    intra = math.fsum(per_class.values()) / len(per_class)
    inter = math.fsum(cd) / len(cd)
    return per_class, intra, inter


def test_class_distances_match_brute_force_oracle():
    rng = np.random.default_rng(0)
    points = rng.standard_normal((40, 3))
    labels = rng.integers(5, size=40)
    got = class_distances(points, labels)
    per_class, intra, inter = oracle_class_distances(points, labels)
    for label, value in per_class.items():
        assert abs(got.per_class[label] - value) < 1e-12
    assert abs(got.mean_intra - intra) < 1e-12
    assert abs(got.inter - inter) < 1e-12
    assert abs(got.ratio - inter / intra) < 1e-12


def test_class_distances_invariant_under_relabeling():
    rng = np.random.default_rng(1)
    points = rng.standard_normal((30, 4))
    labels = rng.integers(4, size=30)
    a = class_distances(points, labels)
    b = class_distances(points, labels + 100)   # order-preserving relabel
    assert a.mean_intra == b.mean_intra
    assert a.inter == b.inter
    assert a.ratio == b.ratio


def test_class_distances_skips_singletons_and_validates():
    points = np.array([[0.0, 0.0], [1.0, 0.0], [5.0, 5.0]])
    got = class_distances(points, [0, 0, 1])
    assert got.skipped == [1]
    assert got.per_class == {0: pytest.approx(1.0)}
    with pytest.raises(DataError):
        class_distances(points, [0, 1, 2])       # no class has two members
    with pytest.raises(DataError):
        class_distances(points, [0, 0, 0])       # only one class
    with pytest.raises(ConfigError):
        class_distances(points, [0, 0])


def test_pca_recovers_planar_structure():
    rng = np.random.default_rng(2)
    plane = rng.standard_normal((60, 2))
    mix = rng.standard_normal((2, 5))
    points = plane @ mix                        # exact rank 2
    coords, explained = pca_2d(points)
    assert coords.shape == (60, 2)
    assert explained.sum() == pytest.approx(1.0, abs=1e-9)
    again, _ = pca_2d(points)
    assert np.array_equal(coords, again)


def test_pca_sign_convention_follows_the_dominant_direction():
    rng = np.random.default_rng(3)
    x0 = rng.standard_normal(80) * 10.0         # variance concentrated on dim 0
    rest = rng.standard_normal((80, 2)) * 0.1
    points = np.column_stack([x0, rest])
    coords, _ = pca_2d(points)
    corr = np.corrcoef(coords[:, 0], x0 - x0.mean())[0, 1]
    assert corr > 0.999                          # not flipped
    with pytest.raises(ConfigError):
        pca_2d(np.ones((1, 5)))
    with pytest.raises(ConfigError):
        pca_2d(np.ones((5, 1)))


@pytest.fixture(scope="module")
def tiny_model(tiny_dataset):
    return TwoStreamClassifier(ModelConfig(
        n_tokens=len(tiny_dataset.token_vocab),
        n_answers=len(tiny_dataset.answers), d_img=3, embed_dim=8,
        hidden_dim=8, seed=4))


def test_fused_features_match_direct_head_call(tiny_dataset, tiny_model):
    insts = tiny_dataset.test
    chunked = fused_features(tiny_model, insts, batch_size=7)
    v, q = tiny_model.encode(np.stack([i.features for i in insts]),
                             [i.tokens for i in insts])
    direct, _ = tiny_model.head(v, q)
    assert np.array_equal(chunked, direct.data)
    with pytest.raises(DataError):
        fused_features(tiny_model, [])


def test_export_answer_space_round_trip(tiny_dataset, tiny_model, tmp_path):
    path = tmp_path / "space.csv"
    export = export_answer_space(tiny_model, tiny_dataset.test, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == len(tiny_dataset.test)
    assert float(rows[0]["x"]) == export["coords"][0, 0]
    assert int(rows[0]["label"]) == tiny_dataset.test[0].m
    with pytest.raises(ConfigError):
        export_answer_space(tiny_model, tiny_dataset.test, path, labels=[1])


def test_index_extraction_helpers(tiny_dataset, tiny_model):
    result = evaluate(tiny_model, tiny_dataset.test, tiny_dataset.answers,
                      tiny_dataset.types)
    true = true_answer_indices(tiny_dataset.test)
    pred = predicted_answer_indices(result.records)
    assert true.shape == pred.shape == (60,)
    assert true.dtype == pred.dtype == np.int64
    assert list(true) == [i.m for i in tiny_dataset.test]
