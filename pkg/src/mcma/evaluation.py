"""Metrics and the replicated experiment harness.

Each replication draws a fresh dataset (seed ``base_seed + rep``), makes a
stratified 80/20 split to score per-RCT predictions (AUC, F1) on the held
20%, and separately runs the pipeline on the full dataset to estimate the
summary distribution, scored by absolute error against the known ground
truth when there is one.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any, Sequence

import numpy as np
from scipy.stats import rankdata

from .core import AssociationLabels, DomainError, MCMAError, N_CLASSES, Simplex3, SyntheticParams
from .pipeline import CheckFailed, MCMAConfig, run
from .synthgen import SemiSynthParams, generate_semisynthetic, generate_synthetic


class DegenerateLabels(MCMAError, ValueError):
    pass


def _labels(labels) -> np.ndarray:
    return labels.values if isinstance(labels, AssociationLabels) else np.asarray(labels, dtype=np.int64)


def binary_auc(pos: np.ndarray, scores: np.ndarray) -> float:
    """ROC AUC via midpoint ranks (Mann-Whitney U), ties counted as one half."""
    pos = np.asarray(pos, dtype=bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs both positive and negative rows")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def auc_macro_ovr(labels, probs, average: str = "macro") -> float:
    """One-vs-rest AUC per class present, averaged (``macro`` or ``weighted``)."""
    y = _labels(labels)
    p = np.asarray(probs, dtype=float)
    if p.shape != (y.size, N_CLASSES):
        raise DomainError(f"probabilities of shape {p.shape} do not match {y.size} labels")
    present = np.unique(y)
    if present.size < 2:
        raise DegenerateLabels("AUC is undefined when only one class is present")
    aucs = np.array([binary_auc(y == c, p[:, c]) for c in present])
    if average == "macro":
        return float(aucs.mean())
    if average == "weighted":
        w = np.array([np.sum(y == c) for c in present], dtype=float)
        return float(np.sum(aucs * w) / w.sum())
    raise DomainError(f"unknown average {average!r}")


def f1_per_class(labels, predicted) -> np.ndarray:
    y = _labels(labels)
    yhat = np.asarray(predicted, dtype=np.int64)
    if y.shape != yhat.shape:
        raise DomainError(f"{y.size} labels but {yhat.size} predictions")
    out = np.zeros(N_CLASSES)
    for c in range(N_CLASSES):
        tp = np.sum((yhat == c) & (y == c))
        denom = np.sum(yhat == c) + np.sum(y == c)
        out[c] = 2.0 * tp / denom if denom else 0.0
    return out


def f1_macro(labels, predicted, average: str = "macro") -> float:
    """Per-class F1 (0/0 taken as 0) averaged over all three classes."""
    f1 = f1_per_class(labels, predicted)
    if average == "macro":
        return float(f1.mean())
    if average == "weighted":
        w = np.bincount(_labels(labels), minlength=N_CLASSES).astype(float)
        return float(np.sum(f1 * w) / w.sum())
    raise DomainError(f"unknown average {average!r}")


def abs_error(truth: Simplex3, estimate: Simplex3) -> np.ndarray:
    return np.abs(np.asarray(truth.p) - np.asarray(estimate.p))


def stratified_split(labels, test_fraction: float = 0.2, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Per-class random split; each class sends ``round(test_fraction * count)`` rows to test."""
    y = _labels(labels)
    rng = np.random.Generator(np.random.PCG64(seed))
    train, test = [], []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(y == c)
        if idx.size == 0:
            continue
        idx = rng.permutation(idx)
        n_test = int(np.floor(test_fraction * idx.size + 0.5))
        test.append(idx[:n_test])
        train.append(idx[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


# ------------------------------------------------------------------ harness


@dataclass(frozen=True)
class SweepSpec:
    axis: str  # "w_u" or "N"
    values: tuple[float, ...]
    template: SyntheticParams | SemiSynthParams
    kinds: tuple[str, ...] = ("mnlogit",)
    modes: tuple[str, ...] = ("basic", "mcma")
    config: MCMAConfig = field(default_factory=MCMAConfig)
    average: str = "macro"
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.axis not in ("w_u", "N"):
            raise DomainError(f"sweep axis must be 'w_u' or 'N', got {self.axis!r}")
        vals = tuple(self.values)
        if not vals or any(b <= a for a, b in zip(vals, vals[1:])):
            raise DomainError("sweep values must be non-empty and strictly increasing")
        if self.axis == "w_u" and not isinstance(self.template, SyntheticParams):
            raise DomainError("a w_u sweep needs a synthetic template")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "kinds", tuple(self.kinds))
        object.__setattr__(self, "modes", tuple(self.modes))

    def params_at(self, value: float, seed: int):
        if isinstance(self.template, SyntheticParams):
            if self.axis == "w_u":
                return replace(self.template, w_u=float(value), seed=seed)
            return replace(self.template, n=int(value), seed=seed)
        return replace(self.template, n=int(value), seed=seed)

    def to_dict(self) -> dict:
        t = self.template.to_dict()
        return {"axis": self.axis, "values": list(self.values), "template": t,
                "template_kind": "synthetic" if isinstance(self.template, SyntheticParams) else "semisynthetic",
                "kinds": list(self.kinds), "modes": list(self.modes), "config": self.config.to_dict(),
                "average": self.average, "test_fraction": self.test_fraction}


@dataclass
class MetricReport:
    axis: str
    value: float
    kind: str
    mode: str
    auc_mean: float
    auc_std: float
    f1_mean: float
    f1_std: float
    abs_err_mean: tuple[float, float, float] | None
    abs_err_std: tuple[float, float, float] | None
    n_replications: int
    n_failed: int
    check_score_mean: float | None
    seeds: tuple[int, ...]
    per_rep: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}

    def flat_row(self) -> dict:
        row = {"axis": self.axis, "value": self.value, "classifier": self.kind, "mode": self.mode,
               "auc_mean": self.auc_mean, "auc_std": self.auc_std, "f1_mean": self.f1_mean,
               "f1_std": self.f1_std}
        for c in range(N_CLASSES):
            row[f"abs_err{c}_mean"] = None if self.abs_err_mean is None else self.abs_err_mean[c]
            row[f"abs_err{c}_std"] = None if self.abs_err_std is None else self.abs_err_std[c]
        row.update({"n_replications": self.n_replications, "n_failed": self.n_failed,
                    "check_score_mean": self.check_score_mean})
        return row


def _one_replication(spec: SweepSpec, value: float, seed: int) -> list[dict]:
    params = spec.params_at(value, seed)
    if isinstance(params, SyntheticParams):
        ds, truth = generate_synthetic(params)
        truth_summary = truth.summary
    else:
        ds, truth_summary = generate_semisynthetic(params), None
    train_idx, test_idx = stratified_split(ds.labels, spec.test_fraction, seed)
    train, test = ds.subset(train_idx), ds.subset(test_idx)
    cfg = replace(spec.config, seed=seed, train=replace(spec.config.train, seed=seed))
    out = []
    for kind in spec.kinds:
        for mode in spec.modes:
            rec: dict[str, Any] = {"value": value, "seed": seed, "kind": kind, "mode": mode}
            try:
                fitted = run(train, mode, kind, cfg)
                probs = fitted.outcome.predict_proba(fitted.features(test.bias))
                try:
                    rec["auc"] = auc_macro_ovr(test.labels, probs, spec.average)
                except DegenerateLabels:
                    rec["auc"] = float("nan")
                rec["f1"] = f1_macro(test.labels, np.argmax(probs, axis=1), spec.average)
                full = run(ds, mode, kind, cfg)
                rec["summary"] = full.summary.tolist()
                rec["abs_err"] = None if truth_summary is None else abs_error(truth_summary, full.summary).tolist()
                rec["check_score"] = None if full.check is None else full.check.score
                rec["check_passed"] = None if full.check is None else full.check.passed
            except CheckFailed as e:
                rec["error"] = str(e)
                rec["check_score"] = e.check.score
            out.append(rec)
    return out


def _task(args):
    return _one_replication(*args)


def _mean_std(xs) -> tuple[float, float]:
    a = np.asarray([x for x in xs if x is not None and np.isfinite(x)], dtype=float)
    if a.size == 0:
        return float("nan"), float("nan")
    return float(a.mean()), float(a.std())


def run_replicated(spec: SweepSpec, reps: int = 10, base_seed: int = 0, workers: int | None = 1) -> list[MetricReport]:
    """Run every sweep point for ``reps`` replications and aggregate mean +- std.

    Reports are ordered by (sweep value, classifier, mode). A replication
    that fails its predictive check is kept in ``per_rep`` with its error
    and excluded from the means.
    """
    if reps < 1:
        raise DomainError(f"reps must be >= 1, got {reps}")
    tasks = [(spec, v, base_seed + r) for v in spec.values for r in range(reps)]
    workers = workers or os.cpu_count() or 1
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks))
    else:
        results = [_task(t) for t in tasks]
    records = [rec for batch in results for rec in batch]

    reports = []
    for v in spec.values:
        for kind in spec.kinds:
            for mode in spec.modes:
                recs = [r for r in records if r["value"] == v and r["kind"] == kind and r["mode"] == mode]
                ok = [r for r in recs if "error" not in r]
                auc = _mean_std(r["auc"] for r in ok)
                f1 = _mean_std(r["f1"] for r in ok)
                errs = [r["abs_err"] for r in ok if r.get("abs_err") is not None]
                if errs:
                    e = np.asarray(errs)
                    err_mean, err_std = tuple(e.mean(axis=0).tolist()), tuple(e.std(axis=0).tolist())
                else:
                    err_mean = err_std = None
                scores = [r["check_score"] for r in recs if r.get("check_score") is not None]
                reports.append(MetricReport(
                    spec.axis, v, kind, mode, auc[0], auc[1], f1[0], f1[1], err_mean, err_std,
                    len(recs), len(recs) - len(ok), float(np.mean(scores)) if scores else None,
                    tuple(r["seed"] for r in recs), recs,
                ))
    return reports


CSV_FIELDS = ["axis", "value", "classifier", "mode", "auc_mean", "auc_std", "f1_mean", "f1_std",
              "abs_err0_mean", "abs_err0_std", "abs_err1_mean", "abs_err1_std", "abs_err2_mean", "abs_err2_std",
              "n_replications", "n_failed", "check_score_mean"]


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def reports_to_csv(reports: Sequence[MetricReport], fields: Sequence[str] = CSV_FIELDS) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(fields)
    for r in reports:
        row = r.flat_row()
        w.writerow([_fmt(row[f]) for f in fields])
    return buf.getvalue()


def plot_data(reports: Sequence[MetricReport]) -> dict[str, str]:
    """Per-figure CSV tables: ``fig3`` for a w_u sweep, ``fig456`` for an N sweep."""
    if not reports:
        return {}
    if reports[0].axis == "w_u":
        return {"fig3": reports_to_csv(reports, ["value", "classifier", "mode", "auc_mean", "auc_std",
                                                 "f1_mean", "f1_std"])}
    return {"fig456": reports_to_csv(reports, ["value", "classifier", "mode", "abs_err0_mean", "abs_err0_std",
                                               "abs_err1_mean", "abs_err1_std", "abs_err2_mean",
                                               "abs_err2_std"])}


def _pm(mean: float, std: float) -> str:
    if not np.isfinite(mean):
        return "n/a"
    return f"{mean:.3f}".lstrip("0") + "±" + f"{std:.3f}".lstrip("0")


def wide_table(reports: Sequence[MetricReport]) -> str:
    """AUC and F1 rows with one ``classifier/mode`` column each, as mean±std."""
    cols = [(r.kind, r.mode) for r in reports]
    by = {(r.kind, r.mode): r for r in reports}
    lines = ["metric\t" + "\t".join(f"{k}/{m}" for k, m in cols)]
    lines.append("AUC\t" + "\t".join(_pm(by[c].auc_mean, by[c].auc_std) for c in cols))
    lines.append("F1\t" + "\t".join(_pm(by[c].f1_mean, by[c].f1_std) for c in cols))
    return "\n".join(lines) + "\n"
