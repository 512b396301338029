"""Pipelines and metrics: subspace angles, ICA, agglomerative clustering,
partition scores, and the planted classification path."""

import math
from math import comb

import numpy as np
import pytest
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.linalg import orth
from scipy.spatial.distance import pdist, squareform

from btdkit.errors import ConfigError
from btdkit.pipeline import (
    ClassModel,
    PipelineConfig,
    accuracy,
    adjusted_mutual_info,
    adjusted_rand,
    agglomerative,
    classify,
    cluster_labels,
    common_reconstruction,
    confusion_matrix,
    contrast_features,
    fastica,
    fit_class_models,
    fowlkes_mallows,
    kfold_split,
    pairwise_distance,
    precision_recall_f1,
    principal_angle,
)


# ---------------------------------------------------------------------------
# principal angle


def embed(vectors, dim):
    out = np.zeros((dim, vectors.shape[1]))
    out[: vectors.shape[0]] = vectors
    return out


@pytest.mark.parametrize("theta", [0.0, 0.1, np.pi / 5, np.pi / 2])
def test_principal_angle_planted_rotation(theta):
    a = np.zeros((6, 1))
    a[0, 0] = 1.0
    b = np.zeros((6, 1))
    b[0, 0] = np.cos(theta)
    b[1, 0] = np.sin(theta)
    assert principal_angle(a, b) == pytest.approx(theta, abs=1e-10)


def test_principal_angle_reports_smallest_angle():
    # planted pair of angles (0.3, 1.2) across disjoint coordinate planes
    a = np.zeros((8, 2))
    a[0, 0] = 1.0
    a[1, 1] = 1.0
    b = np.zeros((8, 2))
    b[0, 0], b[2, 0] = np.cos(0.3), np.sin(0.3)
    b[1, 1], b[3, 1] = np.cos(1.2), np.sin(1.2)
    assert principal_angle(a, b) == pytest.approx(0.3, abs=1e-10)


def test_principal_angle_basis_invariant():
    rng = np.random.default_rng(0)
    a = rng.standard_normal((9, 3))
    b = rng.standard_normal((9, 2))
    mix_a = a @ rng.standard_normal((3, 3))  # same span, different basis
    ref = principal_angle(a, b)
    assert principal_angle(mix_a, b) == pytest.approx(ref, abs=1e-10)
    assert principal_angle(b, a) == pytest.approx(ref, abs=1e-10)


def test_principal_angle_shared_direction_is_zero():
    rng = np.random.default_rng(1)
    shared = rng.standard_normal((7, 1))
    a = np.hstack([shared, rng.standard_normal((7, 1))])
    b = np.hstack([shared, rng.standard_normal((7, 1))])
    assert principal_angle(a, b) == pytest.approx(0.0, abs=1e-7)


def test_principal_angle_rejects_zero_subspace():
    with pytest.raises(ConfigError):
        principal_angle(np.zeros((5, 2)), np.eye(5, 2))


# ---------------------------------------------------------------------------
# partition metrics against brute-force oracles


def pair_counts(a, b):
    n11 = n10 = n01 = n00 = 0
    n = len(a)
    for i in range(n):
        for j in range(i + 1, n):
            sa = a[i] == a[j]
            sb = b[i] == b[j]
            if sa and sb:
                n11 += 1
            elif sa:
                n10 += 1
            elif sb:
                n01 += 1
            else:
                n00 += 1
    return n11, n10, n01, n00


def ari_oracle(a, b):
    s11, s10, s01, s00 = pair_counts(a, b)
    den = (s11 + s10) * (s10 + s00) + (s11 + s01) * (s01 + s00)
    if den == 0:
        return 1.0
    return 2.0 * (s11 * s00 - s10 * s01) / den


def fm_oracle(a, b):
    s11, s10, s01, _ = pair_counts(a, b)
    if s11 == 0 or s11 + s10 == 0 or s11 + s01 == 0:
        return 0.0
    return s11 / math.sqrt((s11 + s10) * (s11 + s01))


def ami_oracle(a, b):
    """AMI from first principles: contingency by dict counting, EMI by
    exact hypergeometric enumeration with integer binomials."""
    las, lbs = sorted(set(a)), sorted(set(b))
    t = np.zeros((len(las), len(lbs)), dtype=int)
    for x, y in zip(a, b):
        t[las.index(x), lbs.index(y)] += 1
    n = int(t.sum())
    if t.shape == (1, 1):
        return 1.0
    rows, cols = t.sum(axis=1), t.sum(axis=0)
    mi = sum(
        t[i, j] / n * math.log(n * t[i, j] / (rows[i] * cols[j]))
        for i in range(t.shape[0])
        for j in range(t.shape[1])
        if t[i, j] > 0
    )
    emi = 0.0
    for ai in rows:
        for bj in cols:
            for nij in range(max(1, ai + bj - n), min(ai, bj) + 1):
                prob = comb(int(ai), nij) * comb(n - int(ai), int(bj) - nij) / comb(n, int(bj))
                emi += prob * (nij / n) * math.log(n * nij / (ai * bj))
    ha = -sum(r / n * math.log(r / n) for r in rows if r)
    hb = -sum(c / n * math.log(c / n) for c in cols if c)
    denom = max(ha, hb) - emi
    if abs(denom) < 1e-12:
        return None  # convention-bound edge; checked separately
    return (mi - emi) / denom


def test_partition_metrics_match_brute_force_enumeration():
    rng = np.random.default_rng(42)
    checked_ami = 0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        a = rng.integers(0, rng.integers(1, n + 1), n).tolist()
        b = rng.integers(0, rng.integers(1, n + 1), n).tolist()
        assert adjusted_rand(a, b) == pytest.approx(ari_oracle(a, b), abs=1e-12)
        assert fowlkes_mallows(a, b) == pytest.approx(fm_oracle(a, b), abs=1e-12)
        ref = ami_oracle(a, b)
        if ref is not None:
            checked_ami += 1
            assert adjusted_mutual_info(a, b) == pytest.approx(ref, abs=1e-9)
    assert checked_ami > 100  # the sweep exercised plenty of AMI cases


def test_metrics_perfect_agreement():
    a = [0, 0, 1, 1, 2, 2]
    relabeled = ["x", "x", "z", "z", "y", "y"]
    assert adjusted_rand(a, relabeled) == pytest.approx(1.0)
    assert fowlkes_mallows(a, relabeled) == pytest.approx(1.0)
    assert adjusted_mutual_info(a, relabeled) == pytest.approx(1.0)


def test_metrics_symmetry():
    rng = np.random.default_rng(3)
    a = rng.integers(0, 3, 10).tolist()
    b = rng.integers(0, 4, 10).tolist()
    assert adjusted_rand(a, b) == pytest.approx(adjusted_rand(b, a), abs=1e-12)
    assert fowlkes_mallows(a, b) == pytest.approx(fowlkes_mallows(b, a), abs=1e-12)
    assert adjusted_mutual_info(a, b) == pytest.approx(adjusted_mutual_info(b, a), abs=1e-9)


def test_metrics_reject_mismatched_lengths():
    with pytest.raises(ConfigError):
        adjusted_rand([0, 1], [0, 1, 2])


# ---------------------------------------------------------------------------
# agglomerative clustering


def test_agglomerative_average_hand_traced():
    # 1-D points 0, 1, 10, 12 under Euclidean distance
    x = np.array([[0.0], [1.0], [10.0], [12.0]])
    merges = agglomerative(squareform(pdist(x)), "average")
    assert merges == [(0, 1, 1.0, 2), (2, 3, 2.0, 2), (4, 5, 10.5, 4)]


def test_agglomerative_complete_hand_traced():
    x = np.array([[0.0], [1.0], [10.0], [12.0]])
    merges = agglomerative(squareform(pdist(x)), "complete")
    assert merges == [(0, 1, 1.0, 2), (2, 3, 2.0, 2), (4, 5, 12.0, 4)]


def test_agglomerative_ties_merge_smallest_ids_first():
    # chain 0,1,2,3: three pairs tie at distance 1
    x = np.array([[0.0], [1.0], [2.0], [3.0]])
    merges = agglomerative(squareform(pdist(x)), "average")
    assert merges == [(0, 1, 1.0, 2), (2, 3, 1.0, 2), (4, 5, 2.0, 4)]


@pytest.mark.parametrize("method", ["average", "complete"])
def test_agglomerative_matches_scipy_on_random_points(method):
    rng = np.random.default_rng(17)
    for _ in range(5):
        pts = rng.standard_normal((9, 3))
        d = pdist(pts)
        ours = agglomerative(squareform(d), method)
        ref = linkage(d, method=method)
        assert np.allclose([m[2] for m in ours], ref[:, 2], atol=1e-10)
        for k in (2, 3, 4):
            mine = cluster_labels(ours, 9, k)
            theirs = fcluster(ref, k, criterion="maxclust")
            assert adjusted_rand(mine.tolist(), theirs.tolist()) == pytest.approx(1.0)


def test_cluster_labels_cuts():
    x = np.array([[0.0], [1.0], [10.0], [12.0]])
    merges = agglomerative(squareform(pdist(x)), "average")
    assert cluster_labels(merges, 4, 1).tolist() == [0, 0, 0, 0]
    assert cluster_labels(merges, 4, 2).tolist() == [0, 0, 1, 1]
    assert cluster_labels(merges, 4, 3).tolist() == [0, 0, 1, 2]
    assert cluster_labels(merges, 4, 4).tolist() == [0, 1, 2, 3]
    with pytest.raises(ConfigError):
        cluster_labels(merges, 4, 5)
    with pytest.raises(ConfigError):
        cluster_labels(merges, 4, 0)


def test_agglomerative_validation():
    with pytest.raises(ConfigError):
        agglomerative(np.zeros((3, 3)), "single")
    with pytest.raises(ConfigError):
        agglomerative(np.zeros((3, 4)), "average")


def test_two_blob_clustering_recovers_planting():
    rng = np.random.default_rng(18)
    blob_a = rng.standard_normal((6, 2)) * 0.1
    blob_b = rng.standard_normal((6, 2)) * 0.1 + 10.0
    pts = np.vstack([blob_a, blob_b])
    truth = [0] * 6 + [1] * 6
    for metric in ("l1", "l2", "exp-l2"):
        d = pairwise_distance(pts, metric)
        labels = cluster_labels(agglomerative(d, "average"), 12, 2)
        assert adjusted_rand(labels.tolist(), truth) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# distances


def test_pairwise_distance_manual_values():
    feats = np.array([[0.0, 0.0], [3.0, 4.0], [1.0, 0.0]])
    l1 = pairwise_distance(feats, "l1")
    assert l1[0, 1] == pytest.approx(7.0)
    assert l1[0, 2] == pytest.approx(1.0)
    l2 = pairwise_distance(feats, "l2")
    assert l2[0, 1] == pytest.approx(5.0)
    cos = pairwise_distance(np.array([[1.0, 0.0], [0.0, 2.0], [3.0, 0.0]]), "cosine")
    assert cos[0, 1] == pytest.approx(1.0)
    assert cos[0, 2] == pytest.approx(0.0, abs=1e-12)


def test_pairwise_distance_exp_l2_bandwidth():
    feats = np.array([[0.0], [1.0], [3.0]])
    # pairwise euclidean distances 1, 3, 2 -> median bandwidth 2
    out = pairwise_distance(feats, "exp-l2")
    assert out[0, 1] == pytest.approx(1.0 - np.exp(-1.0 / 4.0))
    assert out[0, 2] == pytest.approx(1.0 - np.exp(-9.0 / 4.0))
    assert out[1, 2] == pytest.approx(1.0 - np.exp(-4.0 / 4.0))


def test_pairwise_distance_properties_and_validation():
    rng = np.random.default_rng(19)
    feats = rng.standard_normal((5, 7))
    for metric in ("l1", "l2", "canberra", "cosine", "correlation", "exp-l2"):
        d = pairwise_distance(feats, metric)
        assert d.shape == (5, 5)
        assert np.allclose(d, d.T)
        assert np.allclose(np.diag(d), 0.0)
    with pytest.raises(ConfigError):
        pairwise_distance(feats, "mahalanobis")


# ---------------------------------------------------------------------------
# FastICA


def test_fastica_recovers_independent_sources():
    rng = np.random.default_rng(20)
    n = 4000
    sources = np.column_stack([rng.uniform(-1, 1, n), rng.laplace(0.0, 1.0, n)])
    mixing = np.array([[2.0, 1.0], [1.0, 1.0]])
    mixed = sources @ mixing.T
    recovered, converged = fastica(mixed, seed=1)
    assert converged
    corr = np.abs(np.corrcoef(recovered.T, sources.T)[:2, 2:])
    matched = corr.max(axis=0)
    assert np.all(matched >= 0.95)
    assert {int(i) for i in corr.argmax(axis=0)} == {0, 1}  # distinct channels


def test_fastica_preserves_column_span():
    rng = np.random.default_rng(21)
    basis = rng.standard_normal((10, 3))
    sources, _ = fastica(basis, seed=2)
    assert sources.shape == (10, 3)
    assert principal_angle(sources, basis) == pytest.approx(0.0, abs=1e-8)
    assert np.linalg.matrix_rank(np.hstack([orth(sources), orth(basis)])) == 3


def test_fastica_drops_null_directions():
    rng = np.random.default_rng(22)
    col = rng.standard_normal((12, 1))
    sources, _ = fastica(np.hstack([col, col]), seed=3)
    assert sources.shape == (12, 1)
    with pytest.raises(ConfigError):
        fastica(np.zeros((5, 2)))
    with pytest.raises(ConfigError):
        fastica(np.zeros(5))


# ---------------------------------------------------------------------------
# classification path


def test_classify_with_hand_built_subspaces():
    rng = np.random.default_rng(23)
    basis_a = orth(rng.standard_normal((8, 2)))
    basis_b = orth(rng.standard_normal((8, 2)))
    models = [ClassModel("a", basis_a), ClassModel("b", basis_b)]
    objects, truth = [], []
    for basis, label in ((basis_a, "a"), (basis_b, "b")):
        for _ in range(5):
            obj = basis @ rng.standard_normal((2, 6)) + 1e-3 * rng.standard_normal((8, 6))
            objects.append(obj)
            truth.append(label)
    preds = classify(objects, models, gamma=0)
    assert preds == truth
    assert accuracy(truth, preds) == 1.0


def test_classify_validation():
    with pytest.raises(ConfigError):
        classify([np.eye(3)], [], gamma=0)
    with pytest.raises(ConfigError):
        classify([np.zeros((3, 3))], [ClassModel("a", np.eye(3, 1))], gamma=0)


def planted_class_objects(seed):
    rng = np.random.default_rng(seed)
    bases = [orth(rng.standard_normal((6, 2))) for _ in range(2)]
    objects, labels = [], []
    for c, basis in enumerate(bases):
        for _ in range(6):
            obj = basis @ rng.standard_normal((2, 5)) + 0.02 * rng.standard_normal((6, 5))
            objects.append(obj)
            labels.append(f"class{c}")
    return objects, labels


@pytest.mark.parametrize("flavor", ["glro", "gtld"])
def test_fitted_class_models_separate_planted_classes(flavor):
    objects, labels = planted_class_objects(24)
    train = objects[:5] + objects[6:11]
    train_labels = labels[:5] + labels[6:11]
    cfg = PipelineConfig(flavor=flavor, r_common=2, r_individual=1, gamma=0, n_iters=15)
    models = fit_class_models(train, train_labels, cfg)
    assert [m.label for m in models] == ["class0", "class1"]
    for m in models:
        assert np.allclose(m.basis.T @ m.basis, np.eye(m.basis.shape[1]), atol=1e-10)
    test_objects = [objects[5], objects[11]]
    assert classify(test_objects, models, gamma=0) == ["class0", "class1"]


def test_fit_class_models_validation():
    objects, labels = planted_class_objects(25)
    cfg = PipelineConfig()
    with pytest.raises(ConfigError):
        fit_class_models(objects[:3], labels[:2], cfg)
    bad = [objects[0], objects[1][:, :3]]
    with pytest.raises(ConfigError):
        fit_class_models(bad, ["a", "b"], cfg)


def test_pipeline_config_validation():
    with pytest.raises(ConfigError):
        PipelineConfig(flavor="tucker")
    with pytest.raises(ConfigError):
        PipelineConfig(r_common=0)


# ---------------------------------------------------------------------------
# contrast features


def test_common_reconstruction_and_contrast_slices():
    from btdkit.model import GroupSpec, build_glro, init_random, reconstruct

    g = GroupSpec(n_objects=3, flavor="glro", modes_of_interest=(0,))
    model = init_random(build_glro((5, 4, 3), [1, 1, 1, 2], 2, g), 26)
    stack = reconstruct(model) + 0.1
    feats = contrast_features(stack, model)
    assert feats.shape == (3, 20)
    common = common_reconstruction(model)
    for i in range(3):
        expect = (stack[:, :, i] - common[:, :, i]).ravel(order="F")
        assert np.allclose(feats[i], expect, atol=1e-12)
    # zeroing the individual terms makes the common part the whole model
    for t in model.lr_terms[:-1]:
        for f in t.factors:
            f[:] = 0.0
    assert np.allclose(reconstruct(model), common_reconstruction(model), atol=1e-12)


def test_contrast_features_shape_check():
    from btdkit.model import GroupSpec, build_glro, init_random

    g = GroupSpec(n_objects=3, flavor="glro", modes_of_interest=(0,))
    model = init_random(build_glro((5, 4, 3), [1, 1, 1, 2], 2, g), 27)
    with pytest.raises(ConfigError):
        contrast_features(np.zeros((5, 4, 2)), model)


# ---------------------------------------------------------------------------
# evaluation utilities


def test_accuracy_and_macro_scores_hand_computed():
    y_true = ["a", "a", "b", "b", "c"]
    y_pred = ["a", "b", "b", "b", "c"]
    assert accuracy(y_true, y_pred) == pytest.approx(0.8)
    prec, rec, f1 = precision_recall_f1(y_true, y_pred)
    assert prec == pytest.approx((1.0 + 2.0 / 3.0 + 1.0) / 3.0)
    assert rec == pytest.approx((0.5 + 1.0 + 1.0) / 3.0)
    assert f1 == pytest.approx((2.0 / 3.0 + 0.8 + 1.0) / 3.0)


def test_confusion_matrix_layout():
    cm, labels = confusion_matrix(["a", "b", "a"], ["b", "b", "a"])
    assert labels == ["a", "b"]
    assert cm.tolist() == [[1, 1], [0, 1]]


def test_accuracy_validation():
    with pytest.raises(ConfigError):
        accuracy([], [])
    with pytest.raises(ConfigError):
        accuracy([1], [1, 2])


def test_kfold_split_partitions_exactly():
    folds = kfold_split(10, 4, seed=0)
    sizes = sorted(len(f) for f in folds)
    assert sizes == [2, 2, 3, 3]
    joined = np.concatenate(folds)
    assert sorted(joined.tolist()) == list(range(10))
    again = kfold_split(10, 4, seed=0)
    assert all(np.array_equal(a, b) for a, b in zip(folds, again))
    other = kfold_split(10, 4, seed=1)
    assert any(not np.array_equal(a, b) for a, b in zip(folds, other))
    with pytest.raises(ConfigError):
        kfold_split(3, 5)
