"""Domain types and validation shared by every stage of the pipeline.

Labels use the encoding 0 = negative, 1 = none, 2 = positive association.
Bias entries use 0 = low risk, 1 = high risk.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

LABEL_NAMES = ("negative", "none", "positive")
N_CLASSES = 3

COCHRANE_DOMAINS = (
    "random_seq",
    "allocation_concealment",
    "blinding_participants",
    "blinding_outcome",
    "incomplete_outcome",
    "selective_reporting",
)


class MCMAError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(MCMAError, ValueError):
    pass


class DomainError(MCMAError, ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class BiasMatrix:
    values: np.ndarray
    domain_names: tuple[str, ...]

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2:
            raise DimensionMismatch(f"bias matrix must be 2-D, got shape {v.shape}")
        n, d = v.shape
        if n < 1 or d < 1:
            raise DimensionMismatch(f"bias matrix must be non-empty, got shape {v.shape}")
        bad = ~np.isin(v, (0, 1))
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DomainError(f"bias entry ({i}, {j}) = {v[i, j]!r} is not 0 or 1")
        names = tuple(str(x) for x in self.domain_names)
        if len(names) != d:
            raise DimensionMismatch(f"{len(names)} domain names for {d} columns")
        if len(set(names)) != d:
            raise DomainError("domain names must be unique")
        object.__setattr__(self, "values", _frozen(v.astype(np.int8)))
        object.__setattr__(self, "domain_names", names)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def as_float(self) -> np.ndarray:
        return self.values.astype(float)

    def take_columns(self, idx: Sequence[int]) -> "BiasMatrix":
        idx = list(idx)
        return BiasMatrix(self.values[:, idx], tuple(self.domain_names[j] for j in idx))

    def __eq__(self, other):
        if not isinstance(other, BiasMatrix):
            return NotImplemented
        return self.domain_names == other.domain_names and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class AssociationLabels:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 1:
            raise DimensionMismatch(f"labels must be 1-D, got shape {v.shape}")
        bad = ~np.isin(v, (0, 1, 2))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DomainError(f"label {i} = {v[i]!r} is not in {{0, 1, 2}}")
        object.__setattr__(self, "values", _frozen(v.astype(np.int64)))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def counts(self) -> np.ndarray:
        return np.bincount(self.values, minlength=N_CLASSES)

    def __eq__(self, other):
        if not isinstance(other, AssociationLabels):
            return NotImplemented
        return np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class Provenance:
    """Where a dataset came from: ``synthetic``, ``semisynthetic`` or ``ingested``."""

    kind: str
    params: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("synthetic", "semisynthetic", "ingested"):
            raise DomainError(f"unknown provenance kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "params": dict(self.params)}


@dataclass(frozen=True, eq=False)
class Dataset:
    bias: BiasMatrix
    labels: AssociationLabels
    provenance: Provenance = Provenance("ingested")
    study_ids: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.bias.n != self.labels.n:
            raise DimensionMismatch(f"bias has {self.bias.n} rows but there are {self.labels.n} labels")
        if self.study_ids is not None:
            ids = tuple(str(s) for s in self.study_ids)
            if len(ids) != self.bias.n:
                raise DimensionMismatch(f"{len(ids)} study ids for {self.bias.n} rows")
            object.__setattr__(self, "study_ids", ids)

    @property
    def n(self) -> int:
        return self.bias.n

    @property
    def d(self) -> int:
        return self.bias.d

    def ids(self) -> tuple[str, ...]:
        if self.study_ids is not None:
            return self.study_ids
        return tuple(f"rct{i}" for i in range(self.n))

    def subset(self, rows: Sequence[int]) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        ids = None if self.study_ids is None else tuple(self.study_ids[i] for i in rows)
        return Dataset(
            BiasMatrix(self.bias.values[rows], self.bias.domain_names),
            AssociationLabels(self.labels.values[rows]),
            self.provenance,
            ids,
        )

    def to_dict(self) -> dict:
        return {
            "domain_names": list(self.bias.domain_names),
            "bias": self.bias.values.tolist(),
            "labels": self.labels.values.tolist(),
            "provenance": self.provenance.to_dict(),
            "study_ids": None if self.study_ids is None else list(self.study_ids),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Dataset":
        ds = validate_dataset(d["bias"], d["labels"], d.get("domain_names"))
        prov = d.get("provenance") or {"kind": "ingested"}
        return cls(ds.bias, ds.labels, Provenance(prov["kind"], prov.get("params", {})), d.get("study_ids"))

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        # provenance is metadata and does not take part in equality
        return self.bias == other.bias and self.labels == other.labels and self.ids() == other.ids()


@dataclass(frozen=True, eq=False)
class Simplex3:
    """A distribution over the three association classes."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float)
        if p.shape != (N_CLASSES,):
            raise DimensionMismatch(f"simplex needs 3 components, got shape {p.shape}")
        if not np.all(np.isfinite(p)) or np.any(p < 0) or np.any(p > 1):
            raise DomainError(f"simplex components must lie in [0, 1], got {p}")
        if abs(p.sum() - 1.0) > 1e-9:
            raise DomainError(f"simplex components sum to {p.sum()!r}, not 1")
        object.__setattr__(self, "p", _frozen(p))

    @classmethod
    def normalized(cls, p) -> "Simplex3":
        p = np.clip(np.asarray(p, dtype=float), 0.0, None)
        return cls(p / p.sum())

    def __getitem__(self, k):
        return self.p[k]

    def __iter__(self):
        return iter(self.p.tolist())

    def tolist(self) -> list[float]:
        return self.p.tolist()

    def argmax(self) -> int:
        return int(np.argmax(self.p))

    def __eq__(self, other):
        if not isinstance(other, Simplex3):
            return NotImplemented
        return np.array_equal(self.p, other.p)

    def __repr__(self):
        return "Simplex3(" + ", ".join(f"{x:.6g}" for x in self.p) + ")"


@dataclass(frozen=True)
class SyntheticParams:
    n: int
    d: int
    w_u: float
    seed: int

    def __post_init__(self):
        if int(self.n) < 1 or int(self.d) < 1:
            raise DomainError(f"n and d must be >= 1, got n={self.n}, d={self.d}")
        if not np.isfinite(self.w_u) or self.w_u < 0:
            raise DomainError(f"w_u must be a finite non-negative real, got {self.w_u}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "w_u", float(self.w_u))
        object.__setattr__(self, "seed", int(self.seed))

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d, "w_u": self.w_u, "seed": self.seed}


def default_domain_names(d: int) -> tuple[str, ...]:
    if d == len(COCHRANE_DOMAINS):
        return COCHRANE_DOMAINS
    return tuple(f"d{j + 1}" for j in range(d))


def _as_int_array(raw, what: str) -> np.ndarray:
    try:
        a = np.asarray(raw)
    except ValueError as e:  # ragged input
        raise DimensionMismatch(f"{what} is ragged: {e}") from None
    if a.dtype == object:
        raise DimensionMismatch(f"{what} is ragged or non-numeric")
    if a.size and not np.issubdtype(a.dtype, np.number) and a.dtype != bool:
        raise DomainError(f"{what} must be numeric, got dtype {a.dtype}")
    if a.size and np.issubdtype(a.dtype, np.floating):
        if not np.all(np.isfinite(a)):
            raise DomainError(f"{what} contains missing or non-finite values")
        if not np.all(a == np.round(a)):
            raise DomainError(f"{what} contains non-integer values")
    return a.astype(np.int64) if a.size else a.reshape(a.shape).astype(np.int64)


def validate_dataset(raw_bias, raw_labels, domain_names: Sequence[str] | None = None,
                     provenance: Provenance | None = None) -> Dataset:
    """Build a :class:`Dataset` from raw integer arrays, checking every invariant."""
    bias = _as_int_array(raw_bias, "bias matrix")
    labels = _as_int_array(raw_labels, "labels")
    if bias.ndim != 2:
        raise DimensionMismatch(f"bias matrix must be 2-D, got shape {bias.shape}")
    if labels.ndim != 1:
        raise DimensionMismatch(f"labels must be 1-D, got shape {labels.shape}")
    if bias.shape[0] != labels.shape[0]:
        raise DimensionMismatch(f"bias has {bias.shape[0]} rows but there are {labels.shape[0]} labels")
    names = tuple(domain_names) if domain_names is not None else default_domain_names(bias.shape[1])
    return Dataset(BiasMatrix(bias, names), AssociationLabels(labels), provenance or Provenance("ingested"))
