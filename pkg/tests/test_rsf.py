import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qasurv import rsf
from qasurv.rsf import (
    ForestError,
    ForestParams,
    SurvivalForest,
    SurvivalTree,
    best_split,
    bootstrap_sample,
    event_time_grid,
    fit_forest,
    load_forest,
    mortality_weights,
    oob_error,
    oob_risk,
    permutation_importance,
    predict_chf,
    predict_chf_batch,
    predict_risk,
    save_forest,
)
from qasurv.survival import log_rank, nelson_aalen
from qasurv.synthetic import exponential_hazard


def exhaustive_split(X, events, durations, idx, feats, d):
    # oracle: every midpoint of every feature, scored by the public log-rank test
    best = None
    for f in sorted(feats):
        values = np.unique(X[idx, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = 0.5 * (lo + hi)
            left = idx[X[idx, f] <= thr]
            right = idx[X[idx, f] > thr]
            if events[left].sum() < d or events[right].sum() < d:
                continue
            stat = log_rank(events[left], durations[left], events[right], durations[right]).statistic
            if best is None or stat > best[2] + 1e-9 * (1 + best[2]):
                best = (f, thr, stat)
    return best


def test_bootstrap_basics():
    in_bag, oob = bootstrap_sample(1, np.random.default_rng(0))
    assert in_bag.tolist() == [0] and oob.size == 0
    a = bootstrap_sample(50, np.random.default_rng(7))
    b = bootstrap_sample(50, np.random.default_rng(7))
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    in_bag, oob = a
    assert len(in_bag) == 50
    assert set(in_bag.tolist()).isdisjoint(oob.tolist())
    assert set(in_bag.tolist()) | set(oob.tolist()) == set(range(50))
    with pytest.raises(ForestError):
        bootstrap_sample(0, np.random.default_rng(0))


def test_params_validation():
    with pytest.raises(ForestError):
        ForestParams(n_trees=0)
    with pytest.raises(ForestError):
        ForestParams(min_leaf_deaths=0)
    assert ForestParams().resolve_mtry(11) == 3
    assert ForestParams().resolve_mtry(5) == 2
    with pytest.raises(ForestError):
        ForestParams(mtry=6).resolve_mtry(5)


def test_best_split_examples():
    params = ForestParams(min_leaf_deaths=1)
    X = np.array([[0.0, 5.0]] * 6)
    events = np.ones(6, int)
    durations = np.arange(1, 7)
    assert best_split(X, events, durations, np.arange(6), [0, 1], params) is None

    X = np.column_stack([[0, 0, 0, 1, 1, 1], [2.0] * 6])
    feat, thr, stat = best_split(X, events, durations, np.arange(6), [0, 1], params)
    assert (feat, thr) == (0, 0.5)
    oracle = exhaustive_split(X, events, durations, np.arange(6), [0, 1], 1)
    assert stat == pytest.approx(oracle[2], rel=1e-9)


def test_best_split_tie_break():
    # two identical columns: the lower index wins; symmetric thresholds: the lower wins
    X = np.column_stack([np.arange(6.0), np.arange(6.0)])
    events = np.ones(6, int)
    durations = np.array([1, 2, 3, 3, 2, 1])
    feat, thr, _ = best_split(X, events, durations, np.arange(6), [1, 0], ForestParams(min_leaf_deaths=1))
    assert feat == 0
    oracle = exhaustive_split(X, events, durations, np.arange(6), [0, 1], 1)
    assert (feat, thr) == oracle[:2]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(8, 40), st.integers(1, 3))
def test_best_split_matches_exhaustive_search(seed, n, d):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 6, (n, 3)).astype(float)
    events = (rng.random(n) < 0.7).astype(int)
    durations = rng.integers(1, 15, n)
    idx = np.sort(rng.choice(n, size=n - 2, replace=False))
    found = best_split(X, events, durations, idx, [0, 1, 2], ForestParams(min_leaf_deaths=d))
    oracle = exhaustive_split(X, events, durations, idx, [0, 1, 2], d)
    if oracle is None:
        assert found is None
        return
    assert found is not None
    assert found[2] == pytest.approx(oracle[2], rel=1e-9, abs=1e-12)
    if (found[0], found[1]) != oracle[:2]:
        # only a floating-point near tie may reorder the winner
        f, thr = found[0], found[1]
        left = idx[X[idx, f] <= thr]
        right = idx[X[idx, f] > thr]
        stat = log_rank(events[left], durations[left], events[right], durations[right]).statistic
        assert stat == pytest.approx(oracle[2], rel=1e-9)


def test_best_split_thins_candidates():
    rng = np.random.default_rng(0)
    X = rng.random((500, 1))
    events = np.ones(500, int)
    durations = np.ceil(100 * np.exp(-3 * X[:, 0]) * rng.random(500)).astype(int)
    coarse = best_split(X, events, durations, np.arange(500), [0], ForestParams(max_split_candidates=4))
    fine = best_split(X, events, durations, np.arange(500), [0], ForestParams(max_split_candidates=1000))
    assert coarse[2] <= fine[2] + 1e-9
    oracle = exhaustive_split(X, events, durations, np.arange(500), [0], 3)
    assert fine[2] == pytest.approx(oracle[2], rel=1e-9)


def test_grow_tree_single_leaf_and_precondition():
    X = np.arange(10.0)[:, None]
    events = np.array([1, 1, 1] + [0] * 7)
    durations = np.arange(1, 11)
    tree = rsf.grow_tree(X, events, durations, np.arange(10), ForestParams(), np.random.default_rng(0))
    assert tree.n_nodes == 1 and tree.n_leaves == 1
    np.testing.assert_allclose(tree.leaf_chf[0], nelson_aalen(events, durations).values)
    with pytest.raises(ForestError):
        rsf.grow_tree(X, events, durations, np.arange(3, 10), ForestParams(), np.random.default_rng(0))


def test_grow_tree_binary_feature_depth_one():
    rng = np.random.default_rng(1)
    x = np.repeat([0.0, 1.0], 40)
    durations = np.where(x == 0, rng.integers(30, 40, 80), rng.integers(1, 6, 80))
    events = np.ones(80, int)
    params = ForestParams(mtry=1, min_leaf_deaths=30)
    tree = rsf.grow_tree(x[:, None], events, durations, np.arange(80), params, rng)
    assert tree.n_nodes == 3 and tree.n_leaves == 2
    assert (tree.feature[0], tree.threshold[0]) == (0, 0.5)


def test_grow_tree_deterministic_and_leaf_hazards():
    X, events, durations = exponential_hazard(300, rng=2)
    in_bag, _ = bootstrap_sample(300, np.random.default_rng(3))
    params = ForestParams(min_leaf_deaths=5)
    a = rsf.grow_tree(X, events, durations, in_bag, params, np.random.default_rng(4))
    b = rsf.grow_tree(X, events, durations, in_bag, params, np.random.default_rng(4))
    for name in ("feature", "threshold", "left", "right", "leaf", "leaf_chf"):
        assert np.array_equal(getattr(a, name), getattr(b, name))
    assert a.n_leaves > 1
    assert np.all(a.leaf_deaths >= params.min_leaf_deaths)
    assert sorted(set(a.in_bag_ids.tolist()) | set(a.oob_ids.tolist())) == list(range(300))
    # each leaf hazard is the Nelson-Aalen estimate of its in-bag members
    grid = event_time_grid(events, durations)
    leaves = a.apply(X[in_bag])
    for lf in range(a.n_leaves):
        members = in_bag[leaves == lf]
        na = nelson_aalen(events[members], durations[members])
        np.testing.assert_allclose(a.leaf_chf[lf], na(grid), atol=1e-12)


def test_single_feature_tree_splits_match_exhaustive():
    rng = np.random.default_rng(5)
    x = rng.integers(0, 20, 200).astype(float)
    events = (rng.random(200) < 0.8).astype(int)
    durations = rng.integers(1, 10, 200) + (x > 9) * 5
    tree = rsf.grow_tree(x[:, None], events, durations, np.arange(200),
                         ForestParams(mtry=1, min_leaf_deaths=4), rng)
    oracle = exhaustive_split(x[:, None], events, durations, np.arange(200), [0], 4)
    assert (tree.feature[0], tree.threshold[0]) == oracle[:2]


def _toy_forest():
    X, events, durations = exponential_hazard(300, rng=9)
    return X, events, durations, fit_forest(X, events, durations, ForestParams(n_trees=30, seed=1))


def test_fit_forest_contract():
    X, events, durations, forest = _toy_forest()
    assert len(forest.trees) == 30
    assert np.array_equal(forest.time_grid, event_time_grid(events, durations))
    again = fit_forest(X, events, durations, ForestParams(n_trees=30, seed=1), threads=3)
    assert np.array_equal(predict_risk(forest, X), predict_risk(again, X))
    other = fit_forest(X, events, durations, ForestParams(n_trees=30, seed=2))
    assert not np.array_equal(predict_risk(forest, X), predict_risk(other, X))
    with pytest.raises(ForestError, match="min_leaf_deaths"):
        fit_forest(X[:10], np.array([1] * 5 + [0] * 5), durations[:10], ForestParams())


def test_predictions():
    X, events, durations, forest = _toy_forest()
    chf = predict_chf_batch(forest, X)
    assert np.all(np.diff(chf, axis=1) >= 0)
    one = predict_chf(forest, X[0])
    np.testing.assert_array_equal(one.values, chf[0])
    np.testing.assert_allclose(predict_risk(forest, X), chf @ forest.risk_weights)
    assert isinstance(predict_risk(forest, X[0]), float)
    with pytest.raises(ForestError):
        predict_chf(forest, X[0, :3])
    with pytest.raises(ForestError):
        predict_risk(forest, X[:, :2])


def test_single_tree_forest_is_the_tree():
    X, events, durations = exponential_hazard(200, rng=4)
    forest = fit_forest(X, events, durations, ForestParams(n_trees=1, seed=3))
    tree = forest.trees[0]
    np.testing.assert_array_equal(predict_chf_batch(forest, X), tree.leaf_chf[tree.apply(X)])


def _one_leaf_forest(chf, weights, inbag=None):
    inbag = np.ones(2, dtype=np.int64) if inbag is None else inbag
    tree = SurvivalTree(
        np.array([-1]), np.zeros(1), np.array([-1]), np.array([-1]), np.array([0]),
        np.array([chf], dtype=float), np.array([3]), inbag, weights,
    )
    grid = np.arange(1, len(chf) + 1)
    return SurvivalForest([tree], ForestParams(n_trees=1), grid, 1, 1, weights)


def test_risk_examples():
    weights = mortality_weights(np.array([1, 2]), np.array([1, 2]))
    assert weights.tolist() == [1.0, 1.0]
    assert predict_risk(_one_leaf_forest([0.5, 1.5], weights), np.array([0.0])) == 2.0
    assert predict_risk(_one_leaf_forest([0.0, 0.0], weights), np.array([0.0])) == 0.0
    low = predict_risk(_one_leaf_forest([0.5, 1.0], weights), np.array([0.0]))
    high = predict_risk(_one_leaf_forest([0.5, 1.2], weights), np.array([0.0]))
    assert high > low


def test_mortality_weights_count_observed_samples():
    grid = np.array([2, 5, 9])
    # censored at 7 counts at 5, censored before the first event time is dropped
    w = mortality_weights(np.array([1, 2, 5, 7, 9, 12]), grid)
    assert w.tolist() == [1.0, 2.0, 2.0]


def test_oob():
    X, events, durations, forest = _toy_forest()
    risk, count = oob_risk(forest, X)
    inbag = np.array([t.inbag_counts for t in forest.trees])
    assert np.array_equal(count, (inbag == 0).sum(axis=0))
    i = int(np.argmax(count))
    trees = [t for t in forest.trees if t.inbag_counts[i] == 0]
    expected = np.mean([t.leaf_risk[t.apply(X[i:i + 1])[0]] for t in trees])
    assert risk[i] == pytest.approx(expected)
    err = oob_error(forest, X, events, durations)
    assert 0.0 <= err < 0.3


def test_oob_error_equal_risks_is_half():
    forest = _one_leaf_forest([0.5, 1.5], np.ones(2), inbag=np.zeros(4, dtype=np.int64))
    assert oob_error(forest, np.zeros((4, 1)), [1, 1, 0, 1], [1, 2, 3, 4]) == 0.5


def test_oob_error_needs_oob_samples():
    forest = _one_leaf_forest([0.5, 1.5], np.ones(2))
    with pytest.raises(ForestError, match="out of bag"):
        oob_error(forest, np.zeros((2, 1)), [1, 1], [1, 2])


def test_permutation_importance():
    X, events, durations = exponential_hazard(400, rng=6)
    X[:, 3] = 0.5
    forest = fit_forest(X, events, durations, ForestParams(n_trees=40, seed=6))
    report = permutation_importance(forest, X, events, durations, n_repeats=5, rng=0,
                                    feature_names=("s", "b", "c", "k", "e"))
    assert report.ranking()[0] == 0
    assert abs(report.mean_importance[3]) < 0.01
    assert report.baseline_error == pytest.approx(oob_error(forest, X, events, durations))
    lines = report.to_csv().splitlines()
    assert lines[0] == "feature,name,mean_importance,std_importance"
    assert lines[1].startswith("0,s,") and len(lines) == 6
    again = permutation_importance(forest, X, events, durations, n_repeats=5, rng=0)
    assert np.array_equal(again.mean_importance, report.mean_importance)
    with pytest.raises(ForestError):
        permutation_importance(forest, X, events, durations, n_repeats=0)


def test_save_load_round_trip(tmp_path):
    X, events, durations, forest = _toy_forest()
    save_forest(forest, tmp_path / "f.npz")
    back = load_forest(tmp_path / "f.npz")
    assert back.params == forest.params and back.mtry == forest.mtry
    assert np.array_equal(predict_risk(back, X), predict_risk(forest, X))
    assert np.array_equal(oob_risk(back, X)[0], oob_risk(forest, X)[0], equal_nan=True)
