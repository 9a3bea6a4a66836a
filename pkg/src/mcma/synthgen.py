"""Synthetic and semi-synthetic data with a hidden confounder.

Randomness comes from numpy's PCG64. A dataset seed feeds a
``SeedSequence`` that is spawned into four independent child streams, in
this order: hidden confounder ``u``, bias matrix ``A``, Poisson weights,
labels ``y``. Semi-synthetic generation spawns two streams: ``A``, ``y``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import (
    AssociationLabels,
    BiasMatrix,
    Dataset,
    DomainError,
    MCMAError,
    N_CLASSES,
    Provenance,
    Simplex3,
    SyntheticParams,
    default_domain_names,
)

# Poisson means of the per-class weight vectors
WEIGHT_RATES = (3.0, 2.0, 1.0)
# baseline coefficient on u in the class-0 numerator
U_BASELINE = 4.0


class DegenerateWeights(MCMAError):
    pass


@dataclass(frozen=True, eq=False)
class GroundTruth:
    summary: Simplex3
    u: np.ndarray
    weights: np.ndarray  # 3 x D, row k is the class-k weight vector

    def to_dict(self) -> dict:
        return {"summary": self.summary.tolist(), "u": self.u.tolist(), "weights": self.weights.tolist()}


@dataclass(frozen=True)
class SemiSynthParams:
    bernoulli_rates: tuple[float, ...]
    outcome_probs: Simplex3
    n: int
    seed: int
    domain_names: tuple[str, ...] | None = None

    def __post_init__(self):
        rates = tuple(float(r) for r in self.bernoulli_rates)
        if not rates or any(not (0.0 <= r <= 1.0) for r in rates):
            raise DomainError(f"bernoulli rates must lie in [0, 1], got {rates}")
        if not isinstance(self.outcome_probs, Simplex3):
            object.__setattr__(self, "outcome_probs", Simplex3(self.outcome_probs))
        if int(self.n) < 1:
            raise DomainError(f"n must be >= 1, got {self.n}")
        if self.domain_names is not None and len(self.domain_names) != len(rates):
            raise DomainError("domain_names must match the number of rates")
        object.__setattr__(self, "bernoulli_rates", rates)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self) -> dict:
        return {
            "bernoulli_rates": list(self.bernoulli_rates),
            "outcome_probs": self.outcome_probs.tolist(),
            "n": self.n,
            "seed": self.seed,
            "domain_names": None if self.domain_names is None else list(self.domain_names),
        }


def _streams(seed: int, n: int) -> list[np.random.Generator]:
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def class_probabilities(a: np.ndarray, u: np.ndarray, weights: np.ndarray, w_u: float) -> np.ndarray:
    """Per-row class probabilities of the confounded outcome process, shape (N, 3)."""
    a = np.atleast_2d(a).astype(float)
    u = np.asarray(u, dtype=float)
    s = a @ weights.T  # (N, 3): w_k . a_i
    num = np.column_stack([s[:, 0] * u + U_BASELINE * u, s[:, 1], s[:, 2] + w_u * u])
    total = num.sum(axis=1)
    if np.any(total <= 0):
        raise DegenerateWeights(
            f"class-probability normaliser is zero for {int(np.sum(total <= 0))} row(s); "
            "all weights vanish there and w_u * u = 0"
        )
    return num / total[:, None]


def _sample_categorical(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    cum = np.cumsum(probs, axis=1)
    cum[:, -1] = 1.0
    r = rng.random(probs.shape[0])
    return (r[:, None] >= cum).sum(axis=1).astype(np.int64)


def generate_synthetic(params: SyntheticParams, *, weights: np.ndarray | None = None,
                       force_zero_bias: bool = False,
                       enforce_high: bool = True) -> tuple[Dataset, GroundTruth]:
    """Draw one confounded dataset and its interventional ground truth.

    Every row is guaranteed at least one high-risk domain: rows drawn with
    all domains low are rejected and redrawn together with their ``u``.

    ``weights`` overrides the Poisson draw (shape 3 x D). ``force_zero_bias``
    sets every bias entry to 0 and skips the at-least-one-high constraint;
    both exist for tests of the outcome process, as does ``enforce_high=False``
    which keeps the raw Bernoulli draws.
    """
    n, d = params.n, params.d
    rng_u, rng_a, rng_w, rng_y = _streams(params.seed, 4)

    if weights is None:
        weights = np.stack([rng_w.poisson(lam, size=d) for lam in WEIGHT_RATES]).astype(float)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (3, d):
            raise DomainError(f"weights must have shape (3, {d}), got {weights.shape}")

    u = rng_u.random(n)
    if force_zero_bias:
        a = np.zeros((n, d), dtype=np.int8)
    else:
        a = (rng_a.random((n, d)) < (0.25 + 0.5 * u)[:, None]).astype(np.int8)
        empty = np.flatnonzero(a.sum(axis=1) == 0) if enforce_high else np.empty(0, dtype=int)
        while empty.size:
            u[empty] = rng_u.random(empty.size)
            a[empty] = rng_a.random((empty.size, d)) < (0.25 + 0.5 * u[empty])[:, None]
            empty = empty[a[empty].sum(axis=1) == 0]

    probs = class_probabilities(a, u, weights, params.w_u)
    y = _sample_categorical(rng_y, probs)

    prov = Provenance("synthetic", params.to_dict())
    ds = Dataset(BiasMatrix(a, default_domain_names(d)), AssociationLabels(y), prov)
    truth = GroundTruth(ground_truth_summary(params.w_u), u.copy(), weights)
    return ds, truth


def ground_truth_summary(w_u: float) -> Simplex3:
    """Exact class distribution of the outcome process under do(a = 0).

    With every bias low the weight terms vanish and u cancels, leaving
    (4, 0, w_u) / (4 + w_u).
    """
    w_u = float(w_u)
    if not np.isfinite(w_u) or w_u < 0:
        raise DomainError(f"w_u must be a finite non-negative real, got {w_u}")
    total = U_BASELINE + w_u
    return Simplex3(np.array([U_BASELINE / total, 0.0, w_u / total]))


def estimate_semisynth_params(dataset: Dataset, n: int = 100, seed: int = 0) -> SemiSynthParams:
    rates = dataset.bias.as_float().mean(axis=0)
    freqs = dataset.labels.counts() / dataset.n
    return SemiSynthParams(tuple(rates.tolist()), Simplex3(freqs), n, seed, dataset.bias.domain_names)


def generate_semisynthetic(params: SemiSynthParams) -> Dataset:
    rng_a, rng_y = _streams(params.seed, 2)
    rates = np.asarray(params.bernoulli_rates)
    a = (rng_a.random((params.n, rates.size)) < rates).astype(np.int8)
    probs = np.broadcast_to(params.outcome_probs.p, (params.n, N_CLASSES))
    y = _sample_categorical(rng_y, probs)
    names = params.domain_names or default_domain_names(rates.size)
    return Dataset(BiasMatrix(a, names), AssociationLabels(y), Provenance("semisynthetic", params.to_dict()))
