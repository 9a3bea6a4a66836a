"""The ten acceptance criteria, each at its stated tolerance.

Every test records one ``PASS``/``FAIL`` line; the lines are printed
together at the end of the pytest run (see conftest.py).
"""
import time
from itertools import product

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from mcma.classifiers import KINDS, gradient_check
from mcma.cli import bundled_fixture, main
from mcma.core import SyntheticParams
from mcma.evaluation import SweepSpec, auc_macro_ovr, f1_macro, run_replicated
from mcma.factor import fit_ppca, make_holdout, predictive_check, PPCAConfig, FactorModel
from mcma.ingest import ingest
from mcma.pipeline import MCMAConfig
from mcma.synthgen import estimate_semisynth_params, generate_synthetic, ground_truth_summary

FORCE = MCMAConfig(force=True)


def record(n, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def _by(reports, **kw):
    out = [r for r in reports if all(getattr(r, k) == v for k, v in kw.items())]
    assert len(out) == 1
    return out[0]


@pytest.fixture(scope="module")
def table1_mnlogit():
    spec = SweepSpec("N", (1000,), SyntheticParams(1000, 10, 2.0, 42), ("mnlogit",), config=FORCE)
    t0 = time.perf_counter()
    reports = run_replicated(spec, reps=10, base_seed=42)
    return reports, time.perf_counter() - t0


def test_criterion_1_ground_truth():
    t0 = time.perf_counter()
    exact = ground_truth_summary(2).p
    ds, _ = generate_synthetic(SyntheticParams(10**6, 10, 2.0, 2024), force_zero_bias=True)
    freq = ds.labels.counts() / ds.n
    elapsed = time.perf_counter() - t0
    dev = np.abs(freq - np.array([2 / 3, 0, 1 / 3]))
    ok = np.allclose(exact, [2 / 3, 0, 1 / 3], rtol=0, atol=1e-15) and dev.max() <= 2e-3 and elapsed < 5
    record(1, ok, f"truth={np.round(exact, 6).tolist()} MC={np.round(freq, 4).tolist()} "
                  f"max dev={dev.max():.2e} (<=2e-3) time={elapsed:.2f}s (<5s)")


def test_criterion_2_table1(table1_mnlogit):
    reports, elapsed = table1_mnlogit
    basic, mcma = _by(reports, mode="basic"), _by(reports, mode="mcma")
    checks = {
        "basic AUC in [0.48, 0.56]": 0.48 <= basic.auc_mean <= 0.56,
        "MCMA AUC >= basic - 0.01": mcma.auc_mean >= basic.auc_mean - 0.01,
        "MCMA F1 in [0.36, 0.50]": 0.36 <= mcma.f1_mean <= 0.50,
        "runtime < 300s": elapsed < 300,
    }
    failed = [k for k, v in checks.items() if not v]
    record(2, not failed,
           f"basic AUC={basic.auc_mean:.3f}±{basic.auc_std:.3f} MCMA AUC={mcma.auc_mean:.3f}±{mcma.auc_std:.3f} "
           f"MCMA F1={mcma.f1_mean:.3f}±{mcma.f1_std:.3f} time={elapsed:.0f}s"
           + (f"; failed: {', '.join(failed)}" if failed else ""))


def test_criterion_3_confounding_sweep():
    spec = SweepSpec("w_u", (0.0, 1.0, 2.0), SyntheticParams(1000, 10, 2.0, 42), ("mnlogit",),
                     ("mcma",), config=FORCE)
    t0 = time.perf_counter()
    reports = run_replicated(spec, reps=10, base_seed=42)
    elapsed = time.perf_counter() - t0
    f1 = {r.value: r.f1_mean for r in reports}
    ok = f1[2.0] < f1[0.0] and elapsed < 600
    record(3, ok, "MNLogit MCMA F1 by w_u: " + ", ".join(f"{k:g}: {v:.4f}" for k, v in f1.items())
           + f"; F1(2) < F1(0) required; time={elapsed:.0f}s")


def test_criterion_4_summary_error(table1_mnlogit):
    reports, _ = table1_mnlogit
    basic, mcma = _by(reports, mode="basic"), _by(reports, mode="mcma")
    fmt = lambda r: "/".join(f"{m:.3f}±{s:.3f}" for m, s in zip(r.abs_err_mean, r.abs_err_std))  # noqa: E731
    ok = mcma.abs_err_mean[0] <= basic.abs_err_mean[0]
    record(4, ok, f"abs error per class basic={fmt(basic)} MCMA={fmt(mcma)}; class 0 MCMA <= basic required")


def test_criterion_5_check_calibration():
    scores = []
    for t in range(20):
        ds, _ = generate_synthetic(SyntheticParams(1000, 10, 2.0, 300 + t))
        fitted = fit_ppca(ds.bias, 1, PPCAConfig(seed=t))
        rng = np.random.default_rng(700 + t)
        x = fitted.sample(1000, rng)
        mask = make_holdout(x, 0.2, seed=t)
        held = fit_ppca(x, 1, PPCAConfig(seed=t), observed=mask.observed)
        scores.append(predictive_check(held, x, mask, 200, seed=t).score)
    m = float(np.mean(scores))
    record(5, 0.4 <= m <= 0.6, f"mean check score over 20 trials={m:.3f} (in [0.4, 0.6])")


def test_criterion_6_ppca_recovery():
    rng = np.random.default_rng(6)
    truth = FactorModel(rng.normal(size=(10, 1)), rng.normal(size=10), 0.1)
    x = truth.sample(5000, rng)
    fit = fit_ppca(x, 1, PPCAConfig(max_iters=5000))
    w, w_hat = truth.loadings[:, 0], fit.loadings[:, 0]
    cos = abs(w @ w_hat) / (np.linalg.norm(w) * np.linalg.norm(w_hat))
    rel = abs(fit.noise_var - 0.1) / 0.1
    record(6, cos > 0.95 and rel <= 0.15, f"|cos|={cos:.4f} (>0.95) sigma2 rel err={rel:.3f} (<=0.15)")


def test_criterion_7_gradients():
    rng = np.random.default_rng(7)
    worst = {"mnlogit": 0.0, "mlp": 0.0}
    for i in range(20):
        n, f = int(rng.integers(5, 40)), int(rng.integers(1, 12))
        worst["mnlogit"] = max(worst["mnlogit"], gradient_check("mnlogit", n=n, f=f, seed=i))
        worst["mlp"] = max(worst["mlp"], gradient_check("mlp", n=n, f=f, hidden=int(rng.integers(2, 17)), seed=i))
    ok = worst["mnlogit"] < 1e-5 and worst["mlp"] < 1e-4
    record(7, ok, f"max rel err MNLogit={worst['mnlogit']:.2e} (<1e-5) MLP={worst['mlp']:.2e} (<1e-4)")


def _pair_oracle(y, p):
    vals = []
    for c in np.unique(y):
        pos, neg = p[y == c, c], p[y != c, c]
        good = sum(1.0 if a > b else 0.5 if a == b else 0.0 for a, b in product(pos, neg))
        vals.append(good / (pos.size * neg.size))
    return float(np.mean(vals))


def test_criterion_8_metric_oracles():
    rng = np.random.default_rng(8)
    mismatches = 0
    for _ in range(1000):
        n = int(rng.integers(2, 13))
        y = rng.integers(0, 3, size=n)
        while np.unique(y).size < 2:
            y = rng.integers(0, 3, size=n)
        p = rng.integers(1, 6, size=(n, 3)).astype(float)
        p /= p.sum(axis=1, keepdims=True)
        mismatches += auc_macro_ovr(y, p) != _pair_oracle(y, p)
    y = np.array([0, 1, 2, 0, 1, 2])
    f1_ok = (f1_macro(y, y) == 1.0
             and abs(f1_macro(y, np.zeros(6, int)) - 1 / 6) < 1e-15
             and f1_macro([0, 1, 0, 1], [0, 1, 0, 1]) == pytest.approx(2 / 3, abs=1e-15))
    record(8, mismatches == 0 and f1_ok, f"AUC oracle mismatches={mismatches}/1000, F1 examples ok={f1_ok}")


@pytest.mark.slow
def test_criterion_9_determinism(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    t0 = time.perf_counter()
    codes = [main(["reproduce", "table1", "--seed", "42", "--out", str(a)]),
             main(["reproduce", "table1", "--seed", "42", "--out", str(b)])]
    elapsed = time.perf_counter() - t0
    same = a.read_bytes() == b.read_bytes()
    rows = len(a.read_text().splitlines()) - 1
    record(9, codes == [0, 0] and same and rows == 10,
           f"two runs identical={same}, {rows} rows (5 classifiers x 2 modes), time={elapsed:.0f}s")


def test_criterion_10_semisynthetic():
    src = ingest(bundled_fixture())
    assert (src.n, src.d) == (18, 6)
    params = estimate_semisynth_params(src, 100, 42)
    spec = SweepSpec("N", (100,), params, KINDS, config=FORCE)
    reports = run_replicated(spec, reps=10, base_seed=42)
    aucs = {(r.kind, r.mode): r.auc_mean for r in reports}
    ok = len(aucs) == 10 and all(0.4 <= v <= 0.65 for v in aucs.values())
    record(10, ok, "AUC means " + " ".join(f"{k}/{m}={v:.3f}" for (k, m), v in aucs.items()) + " (all in [0.4, 0.65])")
