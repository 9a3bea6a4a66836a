"""Probabilistic PCA over the bias matrix, substitute confounders and the
held-out predictive check.

The bias bits are treated as real-valued observations of a Gaussian
linear factor model ``a = W z + mu + eps`` with ``z ~ N(0, I_k)`` and
``eps ~ N(0, sigma2 I_D)``. Entries can be masked out of the fit; rows are
grouped by their observed pattern so every pattern shares one covariance
factorisation.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import BiasMatrix, DomainError, MCMAError

LOG_2PI = math.log(2.0 * math.pi)


class RankError(MCMAError, ValueError):
    pass


class SingularM(MCMAError, np.linalg.LinAlgError):
    pass


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class PPCAConfig:
    max_iters: int = 2000
    tol: float = 1e-6
    learning_rate: float = 0.01
    seed: int = 0
    method: str = "em"  # "em" or "adamax"
    noise_floor: float = 1e-6

    def __post_init__(self):
        if self.method not in ("em", "adamax"):
            raise DomainError(f"unknown PPCA method {self.method!r}")
        if self.max_iters < 1 or self.tol <= 0 or self.learning_rate <= 0 or self.noise_floor <= 0:
            raise DomainError("max_iters must be >= 1 and tol, learning_rate, noise_floor > 0")


@dataclass(frozen=True, eq=False)
class FactorModel:
    loadings: np.ndarray
    mean: np.ndarray
    noise_var: float
    converged: bool = True
    n_iter: int = 0
    loglik_trace: tuple[float, ...] = field(default=(), repr=False)

    def __post_init__(self):
        w = np.array(self.loadings, dtype=float, ndmin=2)
        mu = np.array(self.mean, dtype=float).ravel()
        if w.shape[0] != mu.size:
            raise DomainError(f"loadings have {w.shape[0]} rows but mean has {mu.size} entries")
        if not self.noise_var > 0:
            raise DomainError(f"noise variance must be positive, got {self.noise_var}")
        if w.shape[1] < 1 or w.shape[1] >= w.shape[0]:
            raise RankError(f"latent dimension {w.shape[1]} must satisfy 1 <= k < D = {w.shape[0]}")
        w.setflags(write=False)
        mu.setflags(write=False)
        object.__setattr__(self, "loadings", w)
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "noise_var", float(self.noise_var))

    @property
    def latent_dim(self) -> int:
        return self.loadings.shape[1]

    @property
    def d(self) -> int:
        return self.loadings.shape[0]

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1] if self.loglik_trace else float("nan")

    def to_dict(self) -> dict:
        return {
            "loadings": self.loadings.tolist(),
            "mean": self.mean.tolist(),
            "noise_var": self.noise_var,
            "k": self.latent_dim,
            "converged": self.converged,
            "n_iter": self.n_iter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorModel":
        model = cls(np.asarray(d["loadings"], dtype=float), np.asarray(d["mean"], dtype=float),
                    float(d["noise_var"]), bool(d.get("converged", True)), int(d.get("n_iter", 0)))
        if "k" in d and int(d["k"]) != model.latent_dim:
            raise DomainError(f"k = {d['k']} disagrees with loadings of width {model.latent_dim}")
        return model

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` rows from the model's generative process."""
        z = rng.standard_normal((n, self.latent_dim))
        eps = rng.standard_normal((n, self.d)) * math.sqrt(self.noise_var)
        return z @ self.loadings.T + self.mean + eps


@dataclass(frozen=True, eq=False)
class HoldoutMask:
    held: np.ndarray
    fraction: float

    def __post_init__(self):
        h = np.asarray(self.held, dtype=bool)
        if h.ndim != 2:
            raise DomainError("holdout mask must be 2-D")
        per_row = h.sum(axis=1)
        if np.any(per_row < 1) or np.any(per_row > h.shape[1] - 1):
            raise DomainError("every row needs at least one held and one observed entry")
        if not 0.0 < self.fraction < 1.0:
            raise DomainError(f"holdout fraction must lie in (0, 1), got {self.fraction}")
        h = h.copy()
        h.setflags(write=False)
        object.__setattr__(self, "held", h)

    @property
    def observed(self) -> np.ndarray:
        return ~self.held


@dataclass(frozen=True)
class CheckResult:
    score: float
    n_replications: int
    passed: bool
    t_obs: float = float("nan")

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise DomainError(f"check score must lie in [0, 1], got {self.score}")
        if self.passed != (self.score > 0.5):
            raise DomainError("passed must equal score > 0.5")

    def to_dict(self) -> dict:
        return {"score": self.score, "n_replications": self.n_replications, "passed": self.passed,
                "t_obs": self.t_obs}


def _as_matrix(bias) -> np.ndarray:
    if isinstance(bias, BiasMatrix):
        return bias.as_float()
    x = np.asarray(bias, dtype=float)
    if x.ndim != 2:
        raise DomainError(f"expected a 2-D matrix, got shape {x.shape}")
    return x


def _pattern_groups(observed: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
    """Group row indices by identical observed pattern: [(pattern, rows), ...]."""
    patterns, inverse = np.unique(observed, axis=0, return_inverse=True)
    inverse = np.asarray(inverse).ravel()
    return [(patterns[g], np.flatnonzero(inverse == g)) for g in range(patterns.shape[0])]


def _loglik(x: np.ndarray, groups, w: np.ndarray, mu: np.ndarray, s2: float) -> float:
    ll = 0.0
    for pat, rows in groups:
        p = int(pat.sum())
        if p == 0:
            continue
        wp = w[pat]
        c = wp @ wp.T + s2 * np.eye(p)
        chol = np.linalg.cholesky(c)
        e = x[np.ix_(rows, pat)] - mu[pat]
        sol = np.linalg.solve(chol, e.T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        ll -= 0.5 * (rows.size * (p * LOG_2PI + logdet) + np.sum(sol * sol))
    return float(ll)


def _em_step(x, observed, groups, w, mu, s2, floor):
    d, k = w.shape
    a_acc = np.zeros((d, k + 1, k + 1))
    b_acc = np.zeros((d, k + 1))
    sq = np.zeros(d)
    for pat, rows in groups:
        if not pat.any():
            continue
        wp = w[pat]
        m_inv = np.linalg.inv(wp.T @ wp + s2 * np.eye(k))
        xp = x[np.ix_(rows, pat)]
        m = (xp - mu[pat]) @ wp @ m_inv  # posterior means, (r, k)
        zt = np.column_stack([m, np.ones(rows.size)])
        ezz = zt.T @ zt
        ezz[:k, :k] += rows.size * s2 * m_inv
        a_acc[pat] += ezz
        b_acc[pat] += xp.T @ zt
        sq[pat] += np.sum(xp * xp, axis=0)
    wt = np.linalg.solve(a_acc, b_acc[..., None])[..., 0]  # (d, k+1)
    resid = sq - 2.0 * np.sum(wt * b_acc, axis=1) + np.einsum("ji,jil,jl->j", wt, a_acc, wt)
    s2_new = max(float(resid.sum() / observed.sum()), floor)
    return wt[:, :k], wt[:, k], s2_new


def _loglik_grad(x, groups, w, mu, s2):
    gw = np.zeros_like(w)
    gs = 0.0
    for pat, rows in groups:
        p = int(pat.sum())
        if p == 0:
            continue
        wp = w[pat]
        c_inv = np.linalg.inv(wp @ wp.T + s2 * np.eye(p))
        e = x[np.ix_(rows, pat)] - mu[pat]
        s = e.T @ e
        g = -0.5 * (rows.size * c_inv - c_inv @ s @ c_inv)
        gw[pat] += 2.0 * g @ wp
        gs += np.trace(g)
    return gw, gs


def fit_ppca(bias, k: int = 1, config: PPCAConfig | None = None,
             observed: np.ndarray | None = None) -> FactorModel:
    """Maximum-likelihood PPCA, optionally restricted to the ``observed`` entries.

    ``bias`` may be a :class:`BiasMatrix` or any real N x D array. Stops when
    the relative change in log-likelihood drops below ``config.tol``; on
    hitting ``max_iters`` first, warns with :class:`NonConvergenceWarning`
    and returns the last iterate with ``converged=False``.
    """
    config = config or PPCAConfig()
    x = _as_matrix(bias)
    n, d = x.shape
    if k < 1 or k >= d:
        raise RankError(f"latent dimension k = {k} must satisfy 1 <= k < D = {d}")
    if n < 2:
        raise DomainError(f"PPCA needs at least 2 rows, got {n}")
    observed = np.ones_like(x, dtype=bool) if observed is None else np.asarray(observed, dtype=bool)
    if observed.shape != x.shape:
        raise DomainError(f"observed mask shape {observed.shape} differs from data shape {x.shape}")
    if not observed.any(axis=0).all():
        raise DomainError("every column needs at least one observed entry")

    rng = np.random.Generator(np.random.PCG64(config.seed))
    counts = observed.sum(axis=0)
    mu = np.where(observed, x, 0.0).sum(axis=0) / counts
    var = np.where(observed, (x - mu) ** 2, 0.0).sum(axis=0) / counts
    s2 = max(float(var.mean()), config.noise_floor)
    w = rng.normal(scale=0.1, size=(d, k))
    groups = _pattern_groups(observed)

    trace = [_loglik(x, groups, w, mu, s2)]
    converged = False
    if config.method == "adamax":
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        theta = np.concatenate([w.ravel(), [math.log(s2)]])
        m1 = np.zeros_like(theta)
        u1 = np.zeros_like(theta)
    it = 0
    for it in range(1, config.max_iters + 1):
        if config.method == "em":
            w, mu, s2 = _em_step(x, observed, groups, w, mu, s2, config.noise_floor)
        else:
            gw, gs = _loglik_grad(x, groups, w, mu, s2)
            g = np.concatenate([gw.ravel(), [gs * s2]]) / n  # chain rule through log sigma2
            m1 = beta1 * m1 + (1 - beta1) * g
            u1 = np.maximum(beta2 * u1, np.abs(g))
            theta = theta + config.learning_rate / (1 - beta1 ** it) * m1 / (u1 + eps)
            theta[-1] = max(theta[-1], math.log(config.noise_floor))
            w = theta[:-1].reshape(d, k)
            s2 = math.exp(theta[-1])
        trace.append(_loglik(x, groups, w, mu, s2))
        if abs(trace[-1] - trace[-2]) <= config.tol * max(abs(trace[-2]), 1e-12):
            converged = True
            break
    if not converged:
        warnings.warn(f"PPCA did not converge within {config.max_iters} iterations", NonConvergenceWarning,
                      stacklevel=2)
    return FactorModel(w.copy(), mu.copy(), s2, converged, it, tuple(trace))


def _posterior_factor(w: np.ndarray, s2: float) -> np.ndarray:
    k = w.shape[1]
    m = w.T @ w + s2 * np.eye(k)
    eig = np.linalg.eigvalsh(m)
    if eig[0] <= 1e-12 * max(eig[-1], 1.0):
        raise SingularM(f"posterior precision matrix is numerically singular (eigenvalues {eig})")
    return np.linalg.inv(m)


def posterior_mean(model: FactorModel, a) -> np.ndarray:
    """Posterior mean of the substitute confounder, ``M^-1 W^T (a - mu)``.

    Accepts a single length-D vector (returns length k) or an N x D matrix
    (returns N x k).
    """
    a = _as_matrix(a) if isinstance(a, BiasMatrix) else np.asarray(a, dtype=float)
    if a.shape[-1] != model.d:
        raise DomainError(f"expected {model.d} bias domains, got {a.shape[-1]}")
    m_inv = _posterior_factor(model.loadings, model.noise_var)
    return (a - model.mean) @ model.loadings @ m_inv.T


def make_holdout(bias, fraction: float = 0.2, seed: int = 0) -> HoldoutMask:
    """Hold out ``round(fraction * D)`` random entries per row, clamped to [1, D - 1]."""
    x = _as_matrix(bias)
    n, d = x.shape
    if d < 2:
        raise DomainError("a holdout needs at least two bias domains")
    if not 0.0 < fraction < 1.0:
        raise DomainError(f"holdout fraction must lie in (0, 1), got {fraction}")
    h = min(max(int(math.floor(fraction * d + 0.5)), 1), d - 1)
    rng = np.random.Generator(np.random.PCG64(seed))
    order = np.argsort(rng.random((n, d)), axis=1)
    held = np.zeros((n, d), dtype=bool)
    np.put_along_axis(held, order[:, :h], True, axis=1)
    return HoldoutMask(held, fraction)


def predictive_check(model: FactorModel, bias, mask: HoldoutMask, n_replications: int = 200,
                     seed: int = 0) -> CheckResult:
    """Posterior-predictive check of the held-out entries.

    The statistic is the total log-density of the held-out entries under
    the predictive distribution given each row's observed entries. The
    score is the fraction of replicated held-out datasets whose statistic
    falls below the observed one, with exact ties counted as one half.
    """
    if n_replications < 1:
        raise DomainError(f"n_replications must be >= 1, got {n_replications}")
    x = _as_matrix(bias)
    if mask.held.shape != x.shape:
        raise DomainError(f"mask shape {mask.held.shape} differs from data shape {x.shape}")
    w, mu, s2 = model.loadings, model.mean, model.noise_var
    rng = np.random.Generator(np.random.PCG64(seed))

    t_obs = 0.0
    const = 0.0
    n_held = 0
    for obs, rows in _pattern_groups(mask.observed):
        held = ~obs
        h = int(held.sum())
        wo, wh = w[obs], w[held]
        m_inv = _posterior_factor(wo, s2)
        z = (x[np.ix_(rows, obs)] - mu[obs]) @ wo @ m_inv.T
        pred_mean = z @ wh.T + mu[held]
        pred_cov = s2 * (wh @ m_inv @ wh.T) + s2 * np.eye(h)
        chol = np.linalg.cholesky(pred_cov)
        sol = np.linalg.solve(chol, (x[np.ix_(rows, held)] - pred_mean).T)
        logdet = 2.0 * np.log(np.diag(chol)).sum()
        part = -0.5 * rows.size * (h * LOG_2PI + logdet)
        const += part
        t_obs += part - 0.5 * np.sum(sol * sol)
        n_held += rows.size * h

    # a replicate e = L eps has whitened residual eps, so its log-density is const - |eps|^2 / 2
    eps = rng.standard_normal((n_replications, n_held))
    t_rep = const - 0.5 * np.sum(eps * eps, axis=1)
    ties = np.abs(t_rep - t_obs) <= 1e-12
    score = float(np.mean(np.where(ties, 0.5, (t_rep < t_obs).astype(float))))
    return CheckResult(score, n_replications, score > 0.5, float(t_obs))
