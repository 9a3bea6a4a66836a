from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcma.core import DomainError, Simplex3, SyntheticParams
from mcma.evaluation import (
    DegenerateLabels,
    MetricReport,
    SweepSpec,
    abs_error,
    auc_macro_ovr,
    binary_auc,
    f1_macro,
    f1_per_class,
    plot_data,
    reports_to_csv,
    run_replicated,
    stratified_split,
    wide_table,
)
from mcma.pipeline import MCMAConfig
from mcma.synthgen import SemiSynthParams


def pair_oracle(labels, probs):
    """Concordant pairs over all positive/negative pairs, per class present."""
    out = []
    for c in np.unique(labels):
        pos = probs[labels == c, c]
        neg = probs[labels != c, c]
        good = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p, q in product(pos, neg))
        out.append(good / (pos.size * neg.size))
    return float(np.mean(out))


def random_instance(rng):
    n = int(rng.integers(2, 13))
    y = rng.integers(0, 3, size=n)
    while np.unique(y).size < 2:
        y = rng.integers(0, 3, size=n)
    # coarse grid so ties are common
    p = rng.integers(1, 5, size=(n, 3)).astype(float)
    return y, p / p.sum(axis=1, keepdims=True)


def test_auc_matches_pair_oracle():
    rng = np.random.default_rng(0)
    for _ in range(300):
        y, p = random_instance(rng)
        assert auc_macro_ovr(y, p) == pair_oracle(y, p)


def test_auc_hand_instance():
    y = np.array([0, 0, 1, 1, 2, 2])
    p = np.array([[.6, .3, .1], [.4, .4, .2], [.5, .3, .2], [.2, .7, .1], [.1, .2, .7], [.3, .3, .4]])
    # class 0: pos .6,.4 vs neg .5,.2,.1,.3 -> 4 + 3 = 7 of 8
    # class 1: pos .3,.7 vs neg .3,.4,.2,.3 -> (0.5+0+1+0.5) + 4 = 6 of 8
    # class 2: pos .7,.4 vs neg .1,.2,.2,.1 -> 8 of 8
    assert auc_macro_ovr(y, p) == pytest.approx((7 / 8 + 6 / 8 + 1) / 3, abs=1e-15)


def test_auc_trivial_cases():
    y = np.array([0, 1, 2, 0, 1, 2])
    assert auc_macro_ovr(y, np.full((6, 3), 1 / 3)) == 0.5
    assert auc_macro_ovr(y, np.eye(3)[y]) == 1.0
    with pytest.raises(DegenerateLabels):
        auc_macro_ovr(np.zeros(4, int), np.full((4, 3), 1 / 3))
    with pytest.raises(DomainError):
        auc_macro_ovr(y, np.full((5, 3), 1 / 3))


def test_auc_classes_present_only():
    y = np.array([0, 0, 2, 2])
    p = np.array([[.8, .1, .1], [.6, .2, .2], [.3, .3, .4], [.1, .1, .8]])
    assert auc_macro_ovr(y, p) == 1.0


def test_auc_weighted():
    y = np.array([0, 0, 0, 1, 2, 2])
    p = np.random.default_rng(3).dirichlet(np.ones(3), size=6)
    per = [binary_auc(y == c, p[:, c]) for c in range(3)]
    assert auc_macro_ovr(y, p, "weighted") == pytest.approx(np.dot(per, [3, 1, 2]) / 6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_auc_monotone_invariance(seed):
    rng = np.random.default_rng(seed)
    y, p = random_instance(rng)
    q = np.column_stack([np.exp(3 * p[:, 0]), p[:, 1] ** 3 - 7, np.log(p[:, 2])])
    assert auc_macro_ovr(y, q) == auc_macro_ovr(y, p)


def test_f1_examples():
    y = np.array([0, 1, 2, 0, 1, 2])
    assert f1_macro(y, y) == 1.0
    assert f1_macro(y, np.zeros(6, int)) == pytest.approx(1 / 6)
    # class 2 absent from both sides contributes 0
    y2 = np.array([0, 1, 0, 1])
    assert f1_per_class(y2, y2).tolist() == [1.0, 1.0, 0.0]
    assert f1_macro(y2, y2) == pytest.approx(2 / 3)


def test_f1_mismatched_lengths():
    with pytest.raises(DomainError):
        f1_macro([0, 1], [0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 2), min_size=1, max_size=30), st.integers(0, 1000))
def test_f1_range_and_identity(labels, seed):
    y = np.array(labels)
    yhat = np.random.default_rng(seed).integers(0, 3, size=y.size)
    f = f1_macro(y, yhat)
    assert 0.0 <= f <= 1.0
    if np.unique(y).size == 3:
        assert (f == 1.0) == bool(np.array_equal(y, yhat))


def test_abs_error_examples():
    s = Simplex3([2 / 3, 0, 1 / 3])
    assert np.allclose(abs_error(s, Simplex3([1 / 3, 1 / 3, 1 / 3])), [1 / 3, 1 / 3, 0])
    assert abs_error(Simplex3([1, 0, 0]), Simplex3([0, 0, 1])).tolist() == [1, 0, 1]
    assert abs_error(s, s).tolist() == [0, 0, 0]


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_abs_error_metric_properties(seed):
    a, b, c = (Simplex3.normalized(p) for p in np.random.default_rng(seed).dirichlet(np.ones(3), size=3))
    assert np.array_equal(abs_error(a, b), abs_error(b, a))
    assert np.all(abs_error(a, c) <= abs_error(a, b) + abs_error(b, c) + 1e-15)


def test_stratified_split():
    y = np.repeat([0, 1, 2], [10, 5, 3])
    train, test = stratified_split(y, 0.2, seed=4)
    assert np.bincount(y[test], minlength=3).tolist() == [2, 1, 1]  # 0.6 rounds up
    assert sorted(np.concatenate([train, test]).tolist()) == list(range(18))
    again = stratified_split(y, 0.2, seed=4)
    assert np.array_equal(again[0], train) and np.array_equal(again[1], test)


def test_sweep_spec_validation():
    t = SyntheticParams(100, 10, 2.0, 0)
    with pytest.raises(DomainError):
        SweepSpec("w_u", (1.0, 0.5), t)
    with pytest.raises(DomainError):
        SweepSpec("w_u", (), t)
    with pytest.raises(DomainError):
        SweepSpec("depth", (1.0,), t)
    with pytest.raises(DomainError):
        SweepSpec("w_u", (1.0,), SemiSynthParams(np.full(6, 0.5), np.full(3, 1 / 3), 100, 0))


def test_single_replication_has_zero_std():
    spec = SweepSpec("N", (200,), SyntheticParams(200, 10, 2.0, 0), config=MCMAConfig(force=True))
    reports = run_replicated(spec, reps=1, base_seed=5)
    assert [(r.kind, r.mode) for r in reports] == [("mnlogit", "basic"), ("mnlogit", "mcma")]
    for r in reports:
        assert r.auc_std == 0.0 and r.f1_std == 0.0 and r.seeds == (5,)
        assert all(s == 0.0 for s in r.abs_err_std)
        assert 0 <= r.auc_mean <= 1 and 0 <= r.f1_mean <= 1
    assert reports[1].check_score_mean is not None


def test_failed_check_recorded_not_fatal():
    spec = SweepSpec("N", (200,), SyntheticParams(200, 10, 2.0, 0), modes=("mcma",))
    reports = run_replicated(spec, reps=4, base_seed=0)
    r = reports[0]
    assert r.n_replications == 4
    failed = [x for x in r.per_rep if "error" in x]
    assert len(failed) == r.n_failed
    for x in failed:
        assert x["check_score"] <= 0.5


def test_workers_match_serial():
    spec = SweepSpec("w_u", (0.0, 2.0), SyntheticParams(150, 10, 2.0, 0), config=MCMAConfig(force=True))
    a = reports_to_csv(run_replicated(spec, reps=2, base_seed=1, workers=1))
    b = reports_to_csv(run_replicated(spec, reps=2, base_seed=1, workers=2))
    assert a == b


def test_report_rendering():
    r = MetricReport("w_u", 2.0, "mnlogit", "basic", 0.507, 0.014, 0.411, 0.02, (0.1, 0.2, 0.3),
                     (0.0, 0.0, 0.0), 10, 0, None, tuple(range(10)))
    csv_text = reports_to_csv([r])
    assert csv_text.splitlines()[1].startswith("w_u,2.0,mnlogit,basic,0.507,0.014")
    assert ".507±.014" in wide_table([r])
    assert list(plot_data([r])) == ["fig3"]
    nan = float("nan")
    empty = MetricReport("N", 1, "knn", "mcma", nan, nan, nan, nan, None, None, 1, 1, None, (0,))
    assert "n/a" in wide_table([empty])
