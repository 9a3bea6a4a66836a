"""End-to-end estimation of the summary association under do(a = 0).

``run_basic`` fits a classifier on the raw bias bits and predicts at the
all-low vector. ``run_mcma`` first screens correlated domains, checks a
PPCA factor model on held-out entries, augments every RCT with its
substitute confounder and averages the outcome model's prediction at
a = 0 over those confounders.

The all-low vector usually lies outside the training support (synthetic
RCTs always have at least one high-risk domain), so both paths extrapolate.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from . import classifiers
from .classifiers import OutcomeModel, TrainConfig
from .core import BiasMatrix, Dataset, DimensionMismatch, DomainError, MCMAError, Simplex3
from .factor import CheckResult, FactorModel, PPCAConfig, fit_ppca, make_holdout, posterior_mean, predictive_check

SCALE_SENSITIVE = ("knn", "mlp")


class AllDropped(MCMAError):
    def __init__(self, message: str, report: "ScreenReport"):
        super().__init__(message)
        self.report = report


class CheckFailed(MCMAError):
    def __init__(self, check: CheckResult):
        super().__init__(f"predictive check failed: score {check.score:.3f} <= 0.5 (pass force=True to override)")
        self.check = check


@dataclass(frozen=True)
class ScreenReport:
    kept: tuple[int, ...]
    dropped_pairs: tuple[tuple[int, int, float], ...]

    @property
    def dropped(self) -> tuple[int, ...]:
        return tuple(sorted({j for _, j, _ in self.dropped_pairs}))

    def to_dict(self) -> dict:
        return {"kept": list(self.kept), "dropped_pairs": [list(p) for p in self.dropped_pairs]}


@dataclass(frozen=True)
class MCMAConfig:
    k: int = 1
    threshold: float = 0.95
    holdout_fraction: float = 0.2
    check_replications: int = 200
    force: bool = False
    averaging: str = "per_rct"  # or "mean_z"
    seed: int = 0
    ppca: PPCAConfig = field(default_factory=PPCAConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.k < 1:
            raise DomainError(f"k must be >= 1, got {self.k}")
        if not 0.0 < self.threshold <= 1.0:
            raise DomainError(f"screening threshold must lie in (0, 1], got {self.threshold}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise DomainError(f"holdout fraction must lie in (0, 1), got {self.holdout_fraction}")
        if self.check_replications < 1:
            raise DomainError("check_replications must be >= 1")
        if self.averaging not in ("per_rct", "mean_z"):
            raise DomainError(f"unknown averaging {self.averaging!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MCMAConfig":
        d = dict(d)
        d["ppca"] = PPCAConfig(**d.get("ppca", {}))
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        return cls(**d)


@dataclass(eq=False)
class PipelineResult:
    mode: str
    kind: str
    summary: Simplex3
    per_rct_probs: np.ndarray
    outcome: OutcomeModel
    check: CheckResult | None = None
    screen: ScreenReport | None = None
    factor: FactorModel | None = None
    z: np.ndarray | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "classifier": self.kind,
            "summary": self.summary.tolist(),
            "check": None if self.check is None else self.check.to_dict(),
            "screen": None if self.screen is None else self.screen.to_dict(),
            "per_rct_probs": self.per_rct_probs.tolist(),
            "models": {
                "factor": None if self.factor is None else self.factor.to_dict(),
                "outcome": self.outcome.to_dict(),
            },
        }

    def features(self, bias) -> np.ndarray:
        """Outcome-model inputs for new rows of the original bias matrix."""
        a = bias.as_float() if isinstance(bias, BiasMatrix) else np.asarray(bias, dtype=float)
        if self.mode == "basic":
            return a
        a = a[:, list(self.screen.kept)]
        return np.hstack([a, posterior_mean(self.factor, a)])


def screen_correlated(bias: BiasMatrix, threshold: float = 0.95) -> tuple[BiasMatrix, ScreenReport]:
    """Drop the higher-index column of every pair with |Pearson r| >= threshold.

    Constant columns have no defined correlation and are dropped outright,
    recorded against themselves with correlation 1.0.
    """
    if bias.d < 2:
        raise DomainError("screening needs at least two bias domains")
    if not 0.0 < threshold <= 1.0:
        raise DomainError(f"threshold must lie in (0, 1], got {threshold}")
    x = bias.as_float()
    sd = x.std(axis=0)
    constant = sd == 0
    dropped: list[tuple[int, int, float]] = [(j, j, 1.0) for j in np.flatnonzero(constant)]
    removed = set(int(j) for j in np.flatnonzero(constant))
    live = np.flatnonzero(~constant)
    if live.size >= 2:
        r = np.corrcoef(x[:, live], rowvar=False)
        for a in range(live.size):
            i = int(live[a])
            if i in removed:
                continue
            for b in range(a + 1, live.size):
                j = int(live[b])
                if j in removed:
                    continue
                if abs(r[a, b]) >= threshold - 1e-12:
                    removed.add(j)
                    dropped.append((i, j, float(r[a, b])))
    kept = tuple(j for j in range(bias.d) if j not in removed)
    report = ScreenReport(kept, tuple(dropped))
    if len(kept) < 2:
        raise AllDropped(f"only {len(kept)} bias domain(s) survive screening", report)
    return bias.take_columns(kept), report


def intervene_summary(outcome: OutcomeModel, z_all: np.ndarray, screened_d: int,
                      averaging: str = "per_rct") -> Simplex3:
    """Average the outcome model's class probabilities at a = 0 over the
    substitute confounders (or evaluate once at their mean)."""
    z = np.atleast_2d(np.asarray(z_all, dtype=float))
    if outcome.input_dim != screened_d + z.shape[1]:
        raise DimensionMismatch(
            f"outcome model takes {outcome.input_dim} inputs, but a = 0 has {screened_d} and z has {z.shape[1]}"
        )
    if averaging == "mean_z":
        z = z.mean(axis=0, keepdims=True)
    elif averaging != "per_rct":
        raise DomainError(f"unknown averaging {averaging!r}")
    feats = np.hstack([np.zeros((z.shape[0], screened_d)), z])
    return Simplex3.normalized(outcome.predict_proba(feats).mean(axis=0))


def _train_config(cfg: MCMAConfig, kind: str, z_cols: list[int]) -> TrainConfig:
    standardize = tuple(z_cols) if kind in SCALE_SENSITIVE else ()
    return replace(cfg.train, standardize=standardize)


def fit_factor(bias: BiasMatrix, cfg: MCMAConfig) -> tuple[BiasMatrix, ScreenReport, CheckResult, FactorModel]:
    """Screening, held-out predictive check and the full-data factor refit."""
    screened, report = screen_correlated(bias, cfg.threshold)
    if cfg.k >= screened.d:
        raise DomainError(f"k = {cfg.k} must be smaller than the {screened.d} screened domains")
    ppca_cfg = PPCAConfig(**{**asdict(cfg.ppca), "seed": cfg.seed})
    mask = make_holdout(screened, cfg.holdout_fraction, seed=cfg.seed)
    held_model = fit_ppca(screened, cfg.k, ppca_cfg, observed=mask.observed)
    check = predictive_check(held_model, screened, mask, cfg.check_replications, seed=cfg.seed + 1)
    if not check.passed and not cfg.force:
        raise CheckFailed(check)
    model = fit_ppca(screened, cfg.k, ppca_cfg)
    return screened, report, check, model


def run_mcma(dataset: Dataset, kind: str = "mnlogit", config: MCMAConfig | None = None, *,
             z_override: np.ndarray | None = None) -> PipelineResult:
    """Deconfounded estimate of p(Y | do(a = 0)).

    ``z_override`` replaces the inferred substitute confounders (test hook
    for ablations).
    """
    cfg = config or MCMAConfig()
    if dataset.n < 10:
        raise DomainError(f"MCMA needs at least 10 RCTs, got {dataset.n}")
    screened, report, check, model = fit_factor(dataset.bias, cfg)
    a = screened.as_float()
    z = posterior_mean(model, a) if z_override is None else np.asarray(z_override, dtype=float).reshape(dataset.n, -1)
    feats = np.hstack([a, z])
    z_cols = list(range(a.shape[1], feats.shape[1]))
    outcome = classifiers.fit(kind, feats, dataset.labels, _train_config(cfg, kind, z_cols))
    summary = intervene_summary(outcome, z, screened.d, cfg.averaging)
    return PipelineResult("mcma", kind, summary, outcome.predict_proba(feats), outcome, check, report, model, z)


def run_basic(dataset: Dataset, kind: str = "mnlogit", config: MCMAConfig | None = None) -> PipelineResult:
    """Classifier on the raw bias bits, evaluated at the all-low vector."""
    cfg = config or MCMAConfig()
    a = dataset.bias.as_float()
    outcome = classifiers.fit(kind, a, dataset.labels, _train_config(cfg, kind, []))
    summary = Simplex3.normalized(outcome.predict_proba(np.zeros(dataset.d)))
    return PipelineResult("basic", kind, summary, outcome.predict_proba(a), outcome)


def run(dataset: Dataset, mode: str, kind: str = "mnlogit", config: MCMAConfig | None = None) -> PipelineResult:
    if mode == "basic":
        return run_basic(dataset, kind, config)
    if mode == "mcma":
        return run_mcma(dataset, kind, config)
    raise DomainError(f"unknown mode {mode!r}; expected 'basic' or 'mcma'")
