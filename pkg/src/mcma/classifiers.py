"""Multi-class probabilistic classifiers behind one interface.

``fit(kind, X, y, config)`` returns a fitted model whose ``predict_proba``
gives one row on the 3-simplex per input row. Kinds: ``mnlogit``, ``knn``,
``gaussian_nb``, ``mlp`` and ``gbt`` (a small gradient-boosted-trees model
with a softmax objective).
"""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp, softmax

from .core import AssociationLabels, DimensionMismatch, DomainError, N_CLASSES

KINDS = ("mnlogit", "knn", "gaussian_nb", "mlp", "gbt")


class SingleClassWarning(UserWarning):
    """Only one label value was present; the model predicts it with certainty."""


class NonConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    max_iters: int = 1000
    tol: float = 1e-9
    # mnlogit
    l2: float = 1e-4
    penalize_intercept: bool = False
    fixed_zero: tuple[int, ...] = ()  # feature indices whose coefficients stay at 0
    # knn
    n_neighbors: int = 5
    # gaussian nb
    var_floor: float = 1e-9
    # mlp
    hidden: int = 16
    step: float = 0.05
    epochs: int = 2000
    # gbt
    n_rounds: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    reg_lambda: float = 1.0
    # feature columns standardised with training statistics (knn and mlp only)
    standardize: tuple[int, ...] = ()

    def __post_init__(self):
        counts = (self.max_iters, self.n_neighbors, self.hidden, self.epochs, self.n_rounds, self.max_depth)
        if any(int(c) < 1 for c in counts):
            raise DomainError("all count hyperparameters must be >= 1")
        if self.tol <= 0 or self.step <= 0 or self.learning_rate <= 0 or self.var_floor <= 0:
            raise DomainError("tol, step, learning_rate and var_floor must be positive")
        if self.l2 < 0 or self.reg_lambda < 0:
            raise DomainError("penalties must be non-negative")
        object.__setattr__(self, "fixed_zero", tuple(int(i) for i in self.fixed_zero))
        object.__setattr__(self, "standardize", tuple(int(i) for i in self.standardize))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["fixed_zero"] = list(self.fixed_zero)
        d["standardize"] = list(self.standardize)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("fixed_zero", "standardize"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def one_hot(y: np.ndarray, n_classes: int = N_CLASSES) -> np.ndarray:
    out = np.zeros((y.size, n_classes))
    out[np.arange(y.size), y] = 1.0
    return out


class OutcomeModel:
    """Base class; subclasses implement ``_proba`` on a validated 2-D array."""

    kind = ""

    def __init__(self, input_dim: int):
        self.input_dim = int(input_dim)

    def predict_proba(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise DimensionMismatch(f"model expects {self.input_dim} features, got shape {np.shape(features)}")
        if not np.all(np.isfinite(x)):
            raise DomainError("features must be finite")
        p = self._proba(x)
        p = np.clip(p, 0.0, None)
        p /= p.sum(axis=1, keepdims=True)
        return p[0] if single else p

    def predict(self, features) -> np.ndarray:
        """Most probable class, ties to the lowest index."""
        return np.argmax(np.atleast_2d(self.predict_proba(features)), axis=1)

    def _proba(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def to_dict(self) -> dict:
        return {"kind": self.kind, "input_dim": self.input_dim, **self._params()}

    def _params(self) -> dict:
        raise NotImplementedError


class ConstantModel(OutcomeModel):
    """Returned when training labels contain a single class."""

    kind = "constant"

    def __init__(self, input_dim: int, label: int):
        super().__init__(input_dim)
        self.label = int(label)

    def _proba(self, x):
        return np.tile(one_hot(np.array([self.label]))[0], (x.shape[0], 1))

    def _params(self):
        return {"label": self.label}


# ---------------------------------------------------------------- mnlogit


def mnlogit_loss_grad(params: np.ndarray, x: np.ndarray, y1h: np.ndarray, l2: float,
                      penalize_intercept: bool = False) -> tuple[float, np.ndarray]:
    """Mean cross-entropy plus ``l2/2 * ||coef||^2`` and its gradient.

    ``params`` packs a (F + 1) x 3 matrix row-major, the last row being the
    intercepts.
    """
    f = x.shape[1]
    theta = params.reshape(f + 1, N_CLASSES)
    coef, b = theta[:f], theta[f]
    logits = x @ coef + b
    lse = logsumexp(logits, axis=1)
    n = x.shape[0]
    loss = float(np.sum(lse - np.sum(logits * y1h, axis=1)) / n)
    r = (np.exp(logits - lse[:, None]) - y1h) / n
    g = np.vstack([x.T @ r, r.sum(axis=0)])
    pen = theta if penalize_intercept else theta[:f]
    loss += 0.5 * l2 * float(np.sum(pen * pen))
    g[: pen.shape[0]] += l2 * pen
    return loss, g.ravel()


class MNLogit(OutcomeModel):
    kind = "mnlogit"

    def __init__(self, coef, intercept):
        coef = np.asarray(coef, dtype=float)
        super().__init__(coef.shape[0])
        self.coef = coef
        self.intercept = np.asarray(intercept, dtype=float)
        self.loss_trace: list[float] = []
        self.converged = True

    def logits(self, x):
        return np.atleast_2d(x) @ self.coef + self.intercept

    def _proba(self, x):
        return softmax(self.logits(x), axis=1)

    def _params(self):
        return {"coef": self.coef.tolist(), "intercept": self.intercept.tolist()}


def _fit_mnlogit(x, y, cfg: TrainConfig) -> MNLogit:
    n, f = x.shape
    free = np.setdiff1d(np.arange(f), cfg.fixed_zero)
    xf = x[:, free]
    y1h = one_hot(y)
    trace = []

    def fun(p):
        loss, g = mnlogit_loss_grad(p, xf, y1h, cfg.l2, cfg.penalize_intercept)
        return loss, g

    x0 = np.zeros((free.size + 1) * N_CLASSES)
    trace.append(fun(x0)[0])
    res = minimize(fun, x0, jac=True, method="L-BFGS-B",
                   options={"maxiter": cfg.max_iters, "ftol": cfg.tol, "gtol": 1e-10},
                   callback=lambda p: trace.append(fun(p)[0]))
    theta = res.x.reshape(free.size + 1, N_CLASSES)
    coef = np.zeros((f, N_CLASSES))
    coef[free] = theta[:-1]
    model = MNLogit(coef, theta[-1])
    model.loss_trace = trace
    model.converged = bool(res.success)
    if not res.success:
        warnings.warn(f"MNLogit optimiser stopped: {res.message}", NonConvergenceWarning, stacklevel=3)
    return model


# ---------------------------------------------------------------- scaling


def _scaler(x: np.ndarray, cols: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    loc = np.zeros(x.shape[1])
    scale = np.ones(x.shape[1])
    cols = list(cols)
    if cols:
        loc[cols] = x[:, cols].mean(axis=0)
        sd = x[:, cols].std(axis=0)
        scale[cols] = np.where(sd > 0, sd, 1.0)
    return loc, scale


# ---------------------------------------------------------------- knn


class KNN(OutcomeModel):
    kind = "knn"

    def __init__(self, x, y, n_neighbors: int, loc=None, scale=None):
        x = np.asarray(x, dtype=float)
        super().__init__(x.shape[1])
        self.x = x
        self.y = np.asarray(y, dtype=np.int64)
        self.n_neighbors = int(n_neighbors)
        self.loc = np.zeros(x.shape[1]) if loc is None else np.asarray(loc, dtype=float)
        self.scale = np.ones(x.shape[1]) if scale is None else np.asarray(scale, dtype=float)
        self._xs = (self.x - self.loc) / self.scale

    def _proba(self, x):
        q = (x - self.loc) / self.scale
        k = min(self.n_neighbors, self._xs.shape[0])
        d2 = np.sum((q[:, None, :] - self._xs[None, :, :]) ** 2, axis=2)
        out = np.empty((q.shape[0], N_CLASSES))
        for i in range(q.shape[0]):
            # order by distance, then by class so equidistant neighbours favour lower classes
            order = np.lexsort((self.y, d2[i]))[:k]
            out[i] = np.bincount(self.y[order], minlength=N_CLASSES) + 1e-9
        return out / out.sum(axis=1, keepdims=True)

    def _params(self):
        return {"x": self.x.tolist(), "y": self.y.tolist(), "n_neighbors": self.n_neighbors,
                "loc": self.loc.tolist(), "scale": self.scale.tolist()}


# ---------------------------------------------------------------- gaussian nb


class GaussianNB(OutcomeModel):
    kind = "gaussian_nb"

    def __init__(self, log_prior, means, variances):
        self.means = np.asarray(means, dtype=float)
        super().__init__(self.means.shape[1])
        self.log_prior = np.asarray(log_prior, dtype=float)
        self.variances = np.asarray(variances, dtype=float)

    def _proba(self, x):
        ll = -0.5 * (np.sum(np.log(2 * np.pi * self.variances), axis=1)[None, :]
                     + np.sum((x[:, None, :] - self.means[None]) ** 2 / self.variances[None], axis=2))
        joint = ll + self.log_prior
        return np.exp(joint - logsumexp(joint, axis=1, keepdims=True))

    def _params(self):
        return {"log_prior": self.log_prior.tolist(), "means": self.means.tolist(),
                "variances": self.variances.tolist()}


def _fit_gaussian_nb(x, y, cfg):
    counts = np.bincount(y, minlength=N_CLASSES).astype(float)
    means = np.zeros((N_CLASSES, x.shape[1]))
    var = np.ones((N_CLASSES, x.shape[1]))
    for c in range(N_CLASSES):
        if counts[c]:
            means[c] = x[y == c].mean(axis=0)
            var[c] = x[y == c].var(axis=0)
    var = np.maximum(var, cfg.var_floor)
    with np.errstate(divide="ignore"):
        log_prior = np.log(counts / counts.sum())
    return GaussianNB(log_prior, means, var)


# ---------------------------------------------------------------- mlp


class MLP(OutcomeModel):
    """One tanh hidden layer followed by a softmax output."""

    kind = "mlp"

    def __init__(self, w1, b1, w2, b2, loc=None, scale=None):
        self.w1 = np.asarray(w1, dtype=float)
        super().__init__(self.w1.shape[0])
        self.b1 = np.asarray(b1, dtype=float)
        self.w2 = np.asarray(w2, dtype=float)
        self.b2 = np.asarray(b2, dtype=float)
        self.loc = np.zeros(self.input_dim) if loc is None else np.asarray(loc, dtype=float)
        self.scale = np.ones(self.input_dim) if scale is None else np.asarray(scale, dtype=float)
        self.loss_trace: list[float] = []

    def _proba(self, x):
        h = np.tanh(((x - self.loc) / self.scale) @ self.w1 + self.b1)
        return softmax(h @ self.w2 + self.b2, axis=1)

    def _params(self):
        return {k: getattr(self, k).tolist() for k in ("w1", "b1", "w2", "b2", "loc", "scale")}


def mlp_shapes(f: int, hidden: int) -> list[tuple[int, ...]]:
    return [(f, hidden), (hidden,), (hidden, N_CLASSES), (N_CLASSES,)]


def _unpack(params, shapes):
    out, i = [], 0
    for s in shapes:
        size = int(np.prod(s))
        out.append(params[i:i + size].reshape(s))
        i += size
    return out


def mlp_loss_grad(params: np.ndarray, x: np.ndarray, y1h: np.ndarray, hidden: int) -> tuple[float, np.ndarray]:
    """Mean cross-entropy of the MLP and its gradient by backpropagation."""
    w1, b1, w2, b2 = _unpack(params, mlp_shapes(x.shape[1], hidden))
    n = x.shape[0]
    h = np.tanh(x @ w1 + b1)
    logits = h @ w2 + b2
    lse = logsumexp(logits, axis=1)
    loss = float(np.sum(lse - np.sum(logits * y1h, axis=1)) / n)
    d_logits = (np.exp(logits - lse[:, None]) - y1h) / n
    d_h = (d_logits @ w2.T) * (1.0 - h * h)
    grads = [x.T @ d_h, d_h.sum(axis=0), h.T @ d_logits, d_logits.sum(axis=0)]
    return loss, np.concatenate([g.ravel() for g in grads])


def _fit_mlp(x, y, cfg):
    loc, scale = _scaler(x, cfg.standardize)
    xs = (x - loc) / scale
    f = x.shape[1]
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    shapes = mlp_shapes(f, cfg.hidden)
    w1 = rng.normal(scale=1.0 / np.sqrt(f), size=shapes[0])
    w2 = rng.normal(scale=1.0 / np.sqrt(cfg.hidden), size=shapes[2])
    params = np.concatenate([w1.ravel(), np.zeros(cfg.hidden), w2.ravel(), np.zeros(N_CLASSES)])
    y1h = one_hot(y)
    trace = []
    for _ in range(cfg.epochs):
        loss, g = mlp_loss_grad(params, xs, y1h, cfg.hidden)
        trace.append(loss)
        params = params - cfg.step * g
    model = MLP(*_unpack(params, shapes), loc=loc, scale=scale)
    model.loss_trace = trace
    return model


# ---------------------------------------------------------------- gradient-boosted trees


@dataclass
class _Node:
    feature: int = -1
    threshold: float = 0.0
    left: "_Node | None" = None
    right: "_Node | None" = None
    value: float = 0.0

    def to_list(self):
        if self.feature < 0:
            return self.value
        return [self.feature, self.threshold, self.left.to_list(), self.right.to_list()]

    @classmethod
    def from_list(cls, v):
        if not isinstance(v, list):
            return cls(value=float(v))
        return cls(int(v[0]), float(v[1]), cls.from_list(v[2]), cls.from_list(v[3]))


def _predict_tree(node: _Node, x: np.ndarray) -> np.ndarray:
    out = np.empty(x.shape[0])
    stack = [(node, np.arange(x.shape[0]))]
    while stack:
        nd, rows = stack.pop()
        if nd.feature < 0:
            out[rows] = nd.value
            continue
        go_left = x[rows, nd.feature] <= nd.threshold
        stack.append((nd.left, rows[go_left]))
        stack.append((nd.right, rows[~go_left]))
    return out


def _build_tree(x, g, h, rows, depth, cfg) -> _Node:
    gs, hs = g[rows].sum(), h[rows].sum()
    leaf = _Node(value=-gs / (hs + cfg.reg_lambda))
    if depth >= cfg.max_depth or rows.size < 2:
        return leaf
    parent = gs * gs / (hs + cfg.reg_lambda)
    best = (1e-12, -1, 0.0)
    for j in range(x.shape[1]):
        xj = x[rows, j]
        order = np.argsort(xj, kind="stable")
        xs = xj[order]
        gl = np.cumsum(g[rows][order])[:-1]
        hl = np.cumsum(h[rows][order])[:-1]
        valid = xs[1:] > xs[:-1]
        if not valid.any():
            continue
        gain = gl ** 2 / (hl + cfg.reg_lambda) + (gs - gl) ** 2 / (hs - hl + cfg.reg_lambda) - parent
        gain = np.where(valid, gain, -np.inf)
        i = int(np.argmax(gain))
        if gain[i] > best[0]:
            best = (gain[i], j, 0.5 * (xs[i] + xs[i + 1]))
    _, j, thr = best
    if j < 0:
        return leaf
    left = rows[x[rows, j] <= thr]
    right = rows[x[rows, j] > thr]
    return _Node(j, thr, _build_tree(x, g, h, left, depth + 1, cfg), _build_tree(x, g, h, right, depth + 1, cfg))


class GBT(OutcomeModel):
    kind = "gbt"

    def __init__(self, input_dim, base, trees, learning_rate):
        super().__init__(input_dim)
        self.base = np.asarray(base, dtype=float)
        self.trees = trees  # list of rounds, each a list of 3 trees
        self.learning_rate = float(learning_rate)

    def _proba(self, x):
        f = np.tile(self.base, (x.shape[0], 1))
        for round_trees in self.trees:
            for c, t in enumerate(round_trees):
                f[:, c] += self.learning_rate * _predict_tree(t, x)
        return softmax(f, axis=1)

    def _params(self):
        return {"base": self.base.tolist(), "learning_rate": self.learning_rate,
                "trees": [[t.to_list() for t in r] for r in self.trees]}


def _fit_gbt(x, y, cfg):
    n = x.shape[0]
    y1h = one_hot(y)
    prior = (y1h.sum(axis=0) + 1.0) / (n + N_CLASSES)
    base = np.log(prior) - np.log(prior).mean()
    f = np.tile(base, (n, 1))
    rows = np.arange(n)
    trees = []
    for _ in range(cfg.n_rounds):
        p = softmax(f, axis=1)
        round_trees = []
        for c in range(N_CLASSES):
            g = p[:, c] - y1h[:, c]
            h = np.maximum(p[:, c] * (1.0 - p[:, c]), 1e-16)
            t = _build_tree(x, g, h, rows, 0, cfg)
            round_trees.append(t)
            f[:, c] += cfg.learning_rate * _predict_tree(t, x)
        trees.append(round_trees)
    return GBT(x.shape[1], base, trees, cfg.learning_rate)


# ---------------------------------------------------------------- public API


def fit(kind: str, features, labels, config: TrainConfig | None = None) -> OutcomeModel:
    """Fit a classifier of the given kind on an N x F feature matrix."""
    config = config or TrainConfig()
    if kind not in KINDS:
        raise DomainError(f"unknown classifier kind {kind!r}; expected one of {KINDS}")
    x = np.asarray(features, dtype=float)
    y = labels.values if isinstance(labels, AssociationLabels) else AssociationLabels(labels).values
    if x.ndim != 2 or x.shape[0] != y.size:
        raise DimensionMismatch(f"features of shape {x.shape} do not match {y.size} labels")
    if not np.all(np.isfinite(x)):
        raise DomainError("features must be finite")
    if y.size < 1:
        raise DomainError("cannot fit on zero rows")
    present = np.unique(y)
    if present.size == 1:
        warnings.warn(f"only class {int(present[0])} present in training labels", SingleClassWarning,
                      stacklevel=2)
        return ConstantModel(x.shape[1], int(present[0]))
    if kind == "mnlogit":
        return _fit_mnlogit(x, y, config)
    if kind == "knn":
        loc, scale = _scaler(x, config.standardize)
        return KNN(x, y, config.n_neighbors, loc, scale)
    if kind == "gaussian_nb":
        return _fit_gaussian_nb(x, y, config)
    if kind == "mlp":
        return _fit_mlp(x, y, config)
    return _fit_gbt(x, y, config)


def predict_proba(model: OutcomeModel, features) -> np.ndarray:
    return model.predict_proba(features)


def model_from_dict(d: dict) -> OutcomeModel:
    kind = d["kind"]
    if kind == "constant":
        return ConstantModel(d["input_dim"], d["label"])
    if kind == "mnlogit":
        return MNLogit(d["coef"], d["intercept"])
    if kind == "knn":
        return KNN(d["x"], d["y"], d["n_neighbors"], d["loc"], d["scale"])
    if kind == "gaussian_nb":
        return GaussianNB(d["log_prior"], d["means"], d["variances"])
    if kind == "mlp":
        return MLP(d["w1"], d["b1"], d["w2"], d["b2"], d["loc"], d["scale"])
    if kind == "gbt":
        trees = [[_Node.from_list(t) for t in r] for r in d["trees"]]
        return GBT(d["input_dim"], d["base"], trees, d["learning_rate"])
    raise DomainError(f"unknown model kind {kind!r}")


def _numeric_grad(fun, params, h=1e-5):
    g = np.zeros_like(params)
    for i in range(params.size):
        e = np.zeros_like(params)
        e[i] = h
        g[i] = (fun(params + e) - fun(params - e)) / (2 * h)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)))


def gradient_check(kind: str, n: int = 20, f: int = 4, hidden: int = 8, seed: int = 0,
                   l2: float = 1e-4, h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    on a random instance."""
    rng = np.random.Generator(np.random.PCG64(seed))
    x = rng.normal(size=(n, f))
    y1h = one_hot(rng.integers(0, N_CLASSES, size=n))
    if kind == "mnlogit":
        params = rng.normal(size=(f + 1) * N_CLASSES)
        fun = lambda p: mnlogit_loss_grad(p, x, y1h, l2)  # noqa: E731
    elif kind == "mlp":
        size = sum(int(np.prod(s)) for s in mlp_shapes(f, hidden))
        params = rng.normal(scale=0.5, size=size)
        fun = lambda p: mlp_loss_grad(p, x, y1h, hidden)  # noqa: E731
    else:
        raise DomainError(f"gradient check needs a differentiable kind, got {kind!r}")
    analytic = fun(params)[1]
    numeric = _numeric_grad(lambda p: fun(p)[0], params, h)
    return relative_error(analytic, numeric)


__all__ = [
    "KINDS", "TrainConfig", "OutcomeModel", "ConstantModel", "MNLogit", "KNN", "GaussianNB", "MLP", "GBT",
    "fit", "predict_proba", "model_from_dict", "gradient_check", "mnlogit_loss_grad", "mlp_loss_grad",
    "SingleClassWarning", "NonConvergenceWarning",
]
