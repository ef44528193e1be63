import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from volterra_euler import (BinaryTree, ConditioningError, InvalidArgumentError, Projector,
                            UnderdeterminedRegressionError, evaluate, fit, make_uniform, sample,
                            tree_expectation)
from volterra_euler.condexp import (default_features, design_matrix, learn_transform,
                                    total_degree_exponents, write_diagnostics_csv)


@pytest.fixture(scope="module")
def martingale_data():
    p = make_uniform(1.0, 10)
    e = sample(p, 40_000, seed=21)
    w = e.brownian()
    return p, w


def test_basis_size_total_degree():
    assert total_degree_exponents(2, 3).shape == (9, 2)
    assert total_degree_exponents(1, 3).tolist() == [[1], [2], [3]]
    assert total_degree_exponents(0, 3).shape == (0, 0)
    assert total_degree_exponents(3, 0).shape == (0, 3)


def test_transform_drops_constant_and_duplicate_columns():
    rng = np.random.default_rng(0)
    a = rng.normal(size=100)
    tr = learn_transform(np.column_stack([a, np.ones(100), a, 3 * a]))
    assert tr.keep.tolist() == [0, 3]
    z = tr.apply(np.column_stack([a, np.ones(100), a, 3 * a]))
    np.testing.assert_allclose(z.mean(axis=0), 0, atol=1e-14)
    np.testing.assert_allclose(z.std(axis=0), 1, rtol=1e-12)


def test_default_features_deduplicate_identical_state():
    w = np.random.default_rng(1).normal(size=50)
    feats = default_features(0.5, w, w)
    assert feats.q == 2
    assert learn_transform(feats.values).keep.tolist() == [0]


def test_constant_regressand_is_exact():
    xi = np.random.default_rng(2).normal(size=(200, 2))
    est = fit(np.full(200, 3.25), xi)
    np.testing.assert_array_equal(est.fitted, 3.25)
    np.testing.assert_array_equal(est.diagnostics.residual_rms, 0.0)
    np.testing.assert_array_equal(evaluate(est, xi[:7] * 5), 3.25)


def test_feature_regressand_has_zero_residual():
    xi = np.random.default_rng(3).normal(size=(300, 2))
    est = fit(xi[:, 0], xi, ridge=0.0, degree=1)
    assert est.diagnostics.residual_rms[0] < 1e-13


def test_martingale_regression_recovers_identity(martingale_data):
    p, w = martingale_data
    l = 4
    est = fit(w[:, -1], w[:, l:l + 1], ridge=0.0, degree=1)
    sd = est.transform.scale[0]
    slope = est.coef[0, 0] / sd
    intercept = est.intercept[0] - est.coef[0, 0] * est.col_mean[0] - slope * est.transform.mean[0]
    M = w.shape[0]
    resid_sd = np.sqrt(p.T - p.nodes[l])
    se_slope = resid_sd / (np.sqrt(M) * w[:, l].std())
    assert abs(slope - 1) < 4 * se_slope
    wl = w[:, l]
    se_intercept = resid_sd / np.sqrt(M) * np.sqrt(1 + wl.mean() ** 2 / wl.var())
    assert abs(intercept) < 4 * se_intercept


def test_evaluate_on_training_features_reproduces_fit(martingale_data):
    _, w = martingale_data
    est = fit(w[:, -1], w[:, 5:6])
    np.testing.assert_allclose(evaluate(est, w[:, 5:6]), est.fitted, rtol=1e-10, atol=1e-12)


def test_out_of_sample_error_within_twice_in_sample(martingale_data):
    _, w = martingale_data
    est = fit(w[:, -1], w[:, 5:6])
    fresh = sample(make_uniform(1.0, 10), 20_000, seed=99).brownian()
    out = np.sqrt(np.mean((fresh[:, -1] - evaluate(est, fresh[:, 5:6])) ** 2))
    assert out <= 2 * est.diagnostics.residual_rms[0]


def test_evaluate_dimension_mismatch():
    xi = np.random.default_rng(4).normal(size=(100, 2))
    est = fit(xi[:, 0] ** 2, xi)
    with pytest.raises(InvalidArgumentError):
        evaluate(est, xi[:, :1])


def test_underdetermined():
    xi = np.random.default_rng(5).normal(size=(15, 2))
    with pytest.raises(UnderdeterminedRegressionError):
        fit(xi[:, 0], xi, degree=3)


def test_rank_deficient_without_ridge():
    xi = np.random.default_rng(6).normal(size=(500, 1))
    feats = np.column_stack([np.sin(xi[:, 0]), np.cos(xi[:, 0])])
    # sin^2 + cos^2 = 1 makes the degree-2 design singular
    with pytest.raises(ConditioningError):
        fit(xi[:, 0], feats, ridge=0.0, degree=2)
    est = fit(xi[:, 0], feats, ridge=1e-8, degree=2)
    assert np.isfinite(est.diagnostics.cond)


def test_negative_ridge_rejected():
    with pytest.raises(InvalidArgumentError):
        Projector(np.random.default_rng(0).normal(size=(50, 1)), ridge=-1.0)


def _ssr(y, yhat):
    return float(np.sum((y - yhat) ** 2))


def test_projection_beats_random_competitors():
    rng = np.random.default_rng(7)
    xi = rng.normal(size=(2000, 2))
    y = np.sin(xi[:, 0]) * xi[:, 1] + rng.normal(scale=0.3, size=2000)
    est = fit(y, xi, ridge=0.0, degree=3)
    best = _ssr(y, est.fitted)
    B = design_matrix(est, xi)
    full = np.concatenate([est.intercept, est.coef[:, 0]])
    for _ in range(100):
        cand = full + rng.normal(scale=10 ** rng.uniform(-6, 0), size=full.shape)
        assert best <= _ssr(y, B @ cand)


def test_residual_orthogonal_to_basis():
    rng = np.random.default_rng(8)
    xi = rng.normal(size=(3000, 2))
    y = np.exp(xi[:, 0] / 2) + xi[:, 1] ** 2 + rng.normal(size=3000)
    est = fit(y, xi, ridge=0.0, degree=3)
    B = design_matrix(est, xi)
    r = y - est.fitted
    scale = np.linalg.norm(B, axis=0) * np.linalg.norm(r)
    assert np.all(np.abs(B.T @ r) <= 1e-10 * scale)


def test_multi_column_fit_equals_separate_fits():
    rng = np.random.default_rng(9)
    xi = rng.normal(size=(400, 2))
    Y = np.column_stack([xi[:, 0] ** 3, np.cos(xi[:, 1]), rng.normal(size=400)])
    joint = fit(Y, xi).fitted
    for j in range(3):
        np.testing.assert_allclose(joint[:, j], fit(Y[:, j], xi).fitted, rtol=1e-12, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), degree=st.integers(1, 3), M=st.integers(60, 400))
def test_projection_property_random_designs(seed, degree, M):
    rng = np.random.default_rng(seed)
    xi = rng.normal(size=(M, 2))
    y = rng.normal(size=M) + xi[:, 0] * xi[:, 1]
    est = fit(y, xi, ridge=0.0, degree=degree)
    B = design_matrix(est, xi)
    full = np.concatenate([est.intercept, est.coef[:, 0]])
    cand = full + rng.normal(scale=1e-3, size=full.shape)
    assert _ssr(y, est.fitted) <= _ssr(y, B @ cand)


def test_diagnostics_csv(tmp_path):
    f = tmp_path / "diag.csv"
    write_diagnostics_csv([(0, 3, 10, 12.5, 0.25), (1, 3, 10, 11.0, 0.5)], f)
    rows = list(csv.reader(open(f)))
    assert rows[0] == ["k", "l", "basis_size", "cond", "residual_rms"]
    assert rows[2] == ["1", "3", "10", "11.0", "0.5"]


# --- tree -----------------------------------------------------------------

def test_tree_node_values_and_probabilities():
    tree = BinaryTree(make_uniform(1.0, 4))
    np.testing.assert_allclose(tree.values(2), [-1.0, 0.0, 1.0])
    np.testing.assert_allclose(tree.probabilities(3), [1 / 8, 3 / 8, 3 / 8, 1 / 8])
    assert tree.probabilities(4).sum() == 1.0


def test_tree_constant_payoff():
    tree = BinaryTree(make_uniform(1.0, 6))
    np.testing.assert_array_equal(tree_expectation(tree, 3, np.full(5, 2.5)), 2.5)


def test_tree_walk_is_martingale():
    tree = BinaryTree(make_uniform(1.0, 6))
    np.testing.assert_allclose(tree_expectation(tree, 3, tree.values(4)), tree.values(3),
                               atol=1e-15)


def test_tree_backward_induction_of_square():
    p = make_uniform(1.0, 16)
    tree = BinaryTree(p)
    v = tree.values(16) ** 2
    for level in range(15, -1, -1):
        v = tree_expectation(tree, level, v)
    assert v[0] == pytest.approx(p.T, rel=1e-13)


def test_tree_linearity():
    tree = BinaryTree(make_uniform(1.0, 5))
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=5), rng.normal(size=5)
    np.testing.assert_allclose(tree_expectation(tree, 3, 2 * a - 3 * b),
                               2 * tree_expectation(tree, 3, a) - 3 * tree_expectation(tree, 3, b),
                               rtol=1e-14, atol=1e-15)


def test_tree_payoff_length_checked():
    tree = BinaryTree(make_uniform(1.0, 5))
    with pytest.raises(InvalidArgumentError):
        tree_expectation(tree, 2, np.zeros(3))
