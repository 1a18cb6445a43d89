import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from portwatch.iforest import (IsolationForest, IsolationTree, average_path_length, fit_iforest,
                               iforest_score, path_length)


def test_average_path_length_values():
    assert average_path_length(1) == 0.0
    assert average_path_length(2) == pytest.approx(0.1544313298, abs=1e-9)
    want = 2 * (math.log(255) + 0.5772156649) - 2 * 255 / 256
    assert average_path_length(256) == pytest.approx(want, rel=1e-12)


def test_identical_samples_form_one_leaf():
    X = np.ones((16, 3))
    forest = fit_iforest(X, n_trees=5, seed=1)
    for tree in forest.estimators_:
        assert tree.n_nodes == 1 and tree.size[0] == 16
    assert path_length(forest.estimators_[0], np.ones(3)) == pytest.approx(
        average_path_length(16))


def test_two_samples():
    forest = fit_iforest(np.array([[0.0], [1.0]]), n_trees=10, seed=0)
    assert forest.max_samples_ == 2 and forest.height_limit_ == 1
    for tree in forest.estimators_:
        assert tree.n_nodes == 3
    # Each point sits alone in a depth-1 leaf.
    np.testing.assert_allclose(forest.path_lengths([[0.0], [1.0]]), 1.0)


def test_far_outlier_has_shorter_path():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(500, 2))
    forest = fit_iforest(X, n_trees=100, seed=3)
    inlier = iforest_score(forest, np.zeros(2))
    outlier = iforest_score(forest, np.array([100.0, 100.0]))
    assert outlier < inlier
    assert forest.score_samples(X).mean() > outlier


def test_determinism_and_seed_sensitivity():
    X = np.random.default_rng(2).normal(size=(300, 4))
    a = fit_iforest(X, 20, seed=7)
    b = fit_iforest(X, 20, seed=7)
    c = fit_iforest(X, 20, seed=8)
    assert all(ta == tb for ta, tb in zip(a.estimators_, b.estimators_))
    np.testing.assert_array_equal(a.score_samples(X), b.score_samples(X))
    assert not np.array_equal(a.score_samples(X), c.score_samples(X))


def test_trees_respect_height_limit_and_subsample():
    X = np.random.default_rng(4).normal(size=(1000, 3))
    forest = fit_iforest(X, 10)
    assert forest.max_samples_ == 256 and forest.height_limit_ == 8
    for tree in forest.estimators_:
        assert tree.height <= 8
        assert tree.size[0] == 256
        leaves = tree.feature == -1
        assert tree.size[leaves].sum() == 256


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.integers(1, 4), st.integers(0, 2**31))
def test_path_lengths_bounded(n, d, seed):
    X = np.random.default_rng(seed).integers(0, 4, size=(n, d)).astype(float)
    forest = fit_iforest(X, 5, seed=seed)
    lengths = forest.path_lengths(X)
    limit = forest.height_limit_
    assert np.all(lengths >= 0)
    assert np.all(lengths <= limit + average_path_length(forest.max_samples_))


def test_validation():
    with pytest.raises(ValueError):
        fit_iforest(np.zeros((1, 2)))
    with pytest.raises(ValueError):
        fit_iforest(np.zeros((10, 2)), subsample_size=11)
    with pytest.raises(ValueError):
        fit_iforest(np.zeros((10, 2)), n_trees=0)
    forest = fit_iforest(np.random.default_rng(0).normal(size=(10, 2)), 3)
    with pytest.raises(ValueError):
        forest.score_samples(np.zeros((1, 3)))


def test_serialization_round_trip():
    X = np.random.default_rng(9).normal(size=(100, 3))
    forest = fit_iforest(X, 15, subsample_size=64, seed=2)
    back = IsolationForest.from_dict(forest.to_dict())
    np.testing.assert_array_equal(back.score_samples(X), forest.score_samples(X))
    assert IsolationTree.from_dict(forest.estimators_[0].to_dict()) == forest.estimators_[0]
