import numpy as np
import pytest

from mcma.core import Dataset, Simplex3, SyntheticParams, validate_dataset
from mcma.synthgen import (
    DegenerateWeights,
    class_probabilities,
    estimate_semisynth_params,
    generate_semisynthetic,
    generate_synthetic,
    ground_truth_summary,
    SemiSynthParams,
)


def test_shape_and_at_least_one_high():
    ds, truth = generate_synthetic(SyntheticParams(1000, 10, 2.0, 5))
    assert ds.bias.values.shape == (1000, 10)
    assert (ds.bias.values.sum(axis=1) >= 1).all()
    assert truth.u.shape == (1000,)
    assert ((truth.u >= 0) & (truth.u < 1)).all()


def test_pre_enforcement_marginal():
    # E_u[0.25 + 0.5 u] = 0.5
    ds, _ = generate_synthetic(SyntheticParams(10000, 10, 2.0, 11), enforce_high=False)
    means = ds.bias.as_float().mean(axis=0)
    assert np.all(np.abs(means - 0.5) < 0.03)


def test_deterministic():
    p = SyntheticParams(300, 10, 2.0, 123)
    a, ta = generate_synthetic(p)
    b, tb = generate_synthetic(p)
    assert a == b
    assert a.bias.values.tobytes() == b.bias.values.tobytes()
    assert np.array_equal(ta.u, tb.u) and np.array_equal(ta.weights, tb.weights)


def test_different_seeds_differ():
    a, _ = generate_synthetic(SyntheticParams(300, 10, 2.0, 1))
    b, _ = generate_synthetic(SyntheticParams(300, 10, 2.0, 2))
    assert a != b


@pytest.mark.parametrize("w_u, expected", [(0.0, (1.0, 0.0, 0.0)), (2.0, (2 / 3, 0.0, 1 / 3)),
                                           (4.0, (0.5, 0.0, 0.5))])
def test_ground_truth_values(w_u, expected):
    assert np.allclose(ground_truth_summary(w_u).p, expected, atol=1e-15)


def _monte_carlo_at_zero(w_u, weights, n, seed):
    """Independent oracle: sample y at a = 0 straight from the displayed formulas."""
    rng = np.random.default_rng(seed)
    u = rng.uniform(size=n)
    a = np.zeros(weights.shape[1])
    num = np.stack([weights[0] @ a * u + 4 * u, np.full(n, weights[1] @ a), weights[2] @ a + w_u * u], axis=1)
    p = num / num.sum(axis=1, keepdims=True)
    y = np.array([rng.choice(3, p=row) for row in p[:20000]])
    return np.bincount(y, minlength=3) / y.size


@pytest.mark.parametrize("w_u", [2.0, 4.0])
def test_ground_truth_matches_monte_carlo(w_u):
    weights = np.random.default_rng(0).poisson([[3], [2], [1]], size=(3, 10)).astype(float)
    freq = _monte_carlo_at_zero(w_u, weights, 20000, 1)
    truth = ground_truth_summary(w_u).p
    se = np.sqrt(truth * (1 - truth) / 20000)
    assert np.all(np.abs(freq - truth) <= 3 * se + 1e-12)


def test_forced_zero_bias_converges_to_ground_truth():
    n = 20000
    ds, truth = generate_synthetic(SyntheticParams(n, 10, 2.0, 9), force_zero_bias=True)
    freq = ds.labels.counts() / n
    p = truth.summary.p
    se = np.sqrt(p * (1 - p) / n)
    assert np.all(np.abs(freq - p) <= 3 * se + 1e-12)


def test_ground_truth_invariants():
    prev = None
    for w_u in np.linspace(0, 10, 21):
        s = ground_truth_summary(w_u)
        assert s.p[1] == 0.0
        if prev is not None:
            assert s.p[2] > prev.p[2] and s.p[0] < prev.p[0]
        prev = s


def test_class_zero_majority_on_average():
    # the imbalance toward class 0 holds in expectation over the Poisson weights,
    # individual weight draws can fall below 1/3
    freqs = [generate_synthetic(SyntheticParams(10000, 10, 2.0, s))[0].labels.counts()[0] / 10000
             for s in range(30)]
    assert np.mean(freqs) > 1 / 3


def test_weights_override_and_zero_classes():
    w = np.zeros((3, 10))
    w[0] = 1.0
    ds, _ = generate_synthetic(SyntheticParams(500, 10, 0.0, 3), weights=w)
    assert (ds.labels.values == 0).all()


def test_degenerate_weights():
    with pytest.raises(DegenerateWeights):
        class_probabilities(np.zeros((1, 3)), np.zeros(1), np.zeros((3, 3)), 0.0)


def test_estimate_semisynth_params():
    ds = validate_dataset([[1, 0], [1, 1], [1, 0], [1, 1]], [0, 0, 1, 2])
    p = estimate_semisynth_params(ds)
    assert p.bernoulli_rates == (1.0, 0.5)
    assert np.allclose(p.outcome_probs.p, [0.5, 0.25, 0.25])


def test_semisynthetic_extremes():
    ds = generate_semisynthetic(SemiSynthParams((0.0, 0.0, 0.0), Simplex3([1.0, 0.0, 0.0]), 50, 1))
    assert ds.bias.values.sum() == 0
    assert (ds.labels.values == 0).all()


def test_semisynthetic_rates_and_determinism():
    params = SemiSynthParams((0.2, 0.8), Simplex3([0.2, 0.3, 0.5]), 20000, 4)
    ds = generate_semisynthetic(params)
    assert np.allclose(ds.bias.as_float().mean(axis=0), [0.2, 0.8], atol=0.015)
    assert np.allclose(ds.labels.counts() / 20000, [0.2, 0.3, 0.5], atol=0.015)
    assert ds == generate_semisynthetic(params)
    assert isinstance(ds, Dataset)
