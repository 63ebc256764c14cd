"""Recall-probability models and their fitting.

Fourteen variants are available, numbered as in the usual comparison
table: rows 1-4 are logistic benchmarks (0PL-IRT per user, 0PL-IRT per
item, 1PL-IRT, logistic regression on review-history statistics) and rows
5-14 are exponential forgetting curves ``exp(-theta * d / s)`` differing in
whether the difficulty is global or per item, whether the strength s is
constant, the review count n or the Leitner deck q, and whether the delay
term is used at all.

Forgetting curves are fit by maximum likelihood with a bounded
golden-section search in log(theta); the logistic models by penalized
maximum likelihood (L2) with L-BFGS-B.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit

from .logs import InteractionHistory

log = logging.getLogger(__name__)

THETA_MIN = 1e-6
THETA_MAX = 1e3
GOLDEN_RTOL = 1e-8
GRAD_TOL = 1e-6
MAX_ITER = 10_000
PARAM_BOUND = 30.0

STAT_NAMES = ("mean", "median", "min", "max", "range", "length", "first", "last")
FEATURE_NAMES = tuple(f"interval_{s}" for s in STAT_NAMES) + tuple(f"outcome_{s}" for s in STAT_NAMES)


@dataclass(frozen=True)
class ModelSpec:
    row: int
    name: str
    kind: str  # irt0_user | irt0_item | irt1 | logreg | efc
    difficulty: str | None = None  # global | per_item
    strength: str | None = None  # constant | n_reviews | leitner_q
    delay: str | None = None  # with_delay | without_delay

    @property
    def uses_delay(self) -> bool:
        return self.kind == "logreg" or (self.kind == "efc" and self.delay == "with_delay")

    @property
    def penalized(self) -> bool:
        return self.kind in ("irt1", "logreg")


def _efc(row, name, difficulty, strength, delay):
    return ModelSpec(row, name, "efc", difficulty, strength, delay)


MODEL_SPECS: tuple[ModelSpec, ...] = (
    ModelSpec(1, "irt0_user", "irt0_user"),
    ModelSpec(2, "irt0_item", "irt0_item"),
    ModelSpec(3, "irt1", "irt1"),
    ModelSpec(4, "logreg", "logreg"),
    _efc(5, "efc_global_n", "global", "n_reviews", "with_delay"),
    _efc(6, "efc_global_const", "global", "constant", "with_delay"),
    _efc(7, "efc_global_n_nodelay", "global", "n_reviews", "without_delay"),
    _efc(8, "efc_global_q", "global", "leitner_q", "with_delay"),
    _efc(9, "efc_global_q_nodelay", "global", "leitner_q", "without_delay"),
    _efc(10, "efc_item_n", "per_item", "n_reviews", "with_delay"),
    _efc(11, "efc_item_const", "per_item", "constant", "with_delay"),
    _efc(12, "efc_item_n_nodelay", "per_item", "n_reviews", "without_delay"),
    _efc(13, "efc_item_q", "per_item", "leitner_q", "with_delay"),
    _efc(14, "efc_item_q_nodelay", "per_item", "leitner_q", "without_delay"),
)
_BY_NAME = {s.name: s for s in MODEL_SPECS}
_BY_ROW = {s.row: s for s in MODEL_SPECS}


class UnknownModelError(KeyError):
    def __str__(self):
        valid = ", ".join(f"{s.row}={s.name}" for s in MODEL_SPECS)
        return f"unknown model {self.args[0]!r}; valid identifiers: {valid}"


def get_spec(ident: int | str | ModelSpec) -> ModelSpec:
    if isinstance(ident, ModelSpec):
        return ident
    s = str(ident).strip()
    if s.isdigit() and int(s) in _BY_ROW:
        return _BY_ROW[int(s)]
    if s in _BY_NAME:
        return _BY_NAME[s]
    raise UnknownModelError(ident)


def resolve_models(idents: Iterable[int | str]) -> list[ModelSpec]:
    """Look up model identifiers (names or row numbers), dropping repeats."""
    out, seen = [], set()
    for ident in idents:
        spec = get_spec(ident)
        if spec.row in seen:
            warnings.warn(f"duplicate model {ident!r} ignored", stacklevel=2)
            continue
        seen.add(spec.row)
        out.append(spec)
    return out


# --- features --------------------------------------------------------------

def _stats(values: Sequence[float]) -> list[float]:
    v = sorted(values)
    k = len(v)
    med = v[k // 2] if k % 2 else 0.5 * (v[k // 2 - 1] + v[k // 2])
    return [sum(values) / k, med, v[0], v[-1], v[-1] - v[0], float(k), values[0], values[-1]]


@dataclass(frozen=True)
class FeatureVector:
    """Everything any of the fourteen models may look at for one review."""

    d: float | None
    n: int
    q: int
    user_id: str
    item_id: str
    history_stats: tuple[float, ...] | None = None


@dataclass
class FeatureTable:
    """Column-oriented features for many reviews.

    ``d`` is NaN for first exposures; ``hist`` holds the interval
    statistics (the current delay included) followed by the statistics of
    previous outcomes, NaN where no interval exists yet.
    """

    d: np.ndarray
    n: np.ndarray
    q: np.ndarray
    user: np.ndarray
    item: np.ndarray
    hist: np.ndarray
    y: np.ndarray
    pair: np.ndarray  # index of the source history
    pos: np.ndarray  # 0-based position inside that history

    def __len__(self):
        return len(self.y)

    def subset(self, mask) -> "FeatureTable":
        return FeatureTable(*(getattr(self, f)[mask] for f in
                              ("d", "n", "q", "user", "item", "hist", "y", "pair", "pos")))

    @property
    def has_delay(self) -> np.ndarray:
        return ~np.isnan(self.d)

    def row(self, i: int) -> FeatureVector:
        h = None if np.isnan(self.hist[i, 0]) else tuple(self.hist[i].tolist())
        d = None if np.isnan(self.d[i]) else float(self.d[i])
        return FeatureVector(d, int(self.n[i]), int(self.q[i]), str(self.user[i]),
                             str(self.item[i]), h)

    @classmethod
    def from_vectors(cls, vectors: Sequence[FeatureVector], outcomes: Sequence[bool] | None = None):
        m = len(vectors)
        hist = np.full((m, len(FEATURE_NAMES)), np.nan)
        for i, f in enumerate(vectors):
            if f.history_stats is not None:
                hist[i] = f.history_stats
        y = np.zeros(m, dtype=bool) if outcomes is None else np.asarray(outcomes, dtype=bool)
        return cls(
            np.array([np.nan if f.d is None else f.d for f in vectors], dtype=float),
            np.array([f.n for f in vectors], dtype=int),
            np.array([f.q for f in vectors], dtype=int),
            np.array([f.user_id for f in vectors], dtype=object),
            np.array([f.item_id for f in vectors], dtype=object),
            hist, y, np.arange(m), np.zeros(m, dtype=int),
        )

    @classmethod
    def from_histories(cls, histories: Sequence[InteractionHistory]) -> "FeatureTable":
        d, n, q, user, item, y, pair, pos, hist = [], [], [], [], [], [], [], [], []
        blank = [math.nan] * len(FEATURE_NAMES)
        for p, h in enumerate(histories):
            delays: list[float] = []
            outcomes: list[float] = []
            for i, x in enumerate(h.interactions):
                d.append(math.nan if x.d is None else x.d)
                n.append(x.n)
                q.append(x.q)
                user.append(h.user_id)
                item.append(h.item_id)
                y.append(x.outcome)
                pair.append(p)
                pos.append(i)
                if x.d is not None:
                    delays.append(x.d)
                if delays and outcomes:
                    hist.append(_stats(delays) + _stats(outcomes))
                else:
                    hist.append(blank)
                outcomes.append(float(x.outcome))
        m = len(y)
        return cls(
            np.asarray(d, dtype=float), np.asarray(n, dtype=int), np.asarray(q, dtype=int),
            np.asarray(user, dtype=object), np.asarray(item, dtype=object),
            np.asarray(hist, dtype=float).reshape(m, len(FEATURE_NAMES)),
            np.asarray(y, dtype=bool), np.asarray(pair, dtype=int), np.asarray(pos, dtype=int),
        )


def training_rows(spec: ModelSpec, table: FeatureTable) -> FeatureTable:
    """Rows a model can learn from: delay models and the history regression
    need a previous review, the rest use every row."""
    if spec.uses_delay:
        return table.subset(table.has_delay)
    return table


# --- forgetting curves -----------------------------------------------------

def efc_exponent(table: FeatureTable, strength: str, delay: str) -> np.ndarray:
    """The factor x in exp(-theta * x): d/s, or 1/s without the delay term."""
    if strength == "constant":
        s = np.ones(len(table))
    elif strength == "n_reviews":
        s = table.n.astype(float)
    elif strength == "leitner_q":
        s = table.q.astype(float)
    else:
        raise ValueError(f"unknown strength mode {strength!r}")
    if delay == "with_delay":
        return table.d / s
    if delay == "without_delay":
        return 1.0 / s
    raise ValueError(f"unknown delay mode {delay!r}")


def _efc_terms(theta, x, y):
    """Per-row log-likelihood and derivative in theta for p = exp(-theta x)."""
    t = np.maximum(theta * x, 1e-300)
    ll = np.where(y, -t, np.log(-np.expm1(-t)))
    grad = np.where(y, -x, x * np.exp(-t) / -np.expm1(-t))
    return ll, grad


def efc_loglik(theta: float, x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    ll, g = _efc_terms(theta, x, y)
    return float(ll.sum()), float(g.sum())


def _golden_log_theta(x, y, groups, n_groups):
    """Vectorized golden-section search on log(theta), one problem per group.

    The log-likelihood is concave in theta, hence unimodal in log(theta).
    """
    def ll(theta_g):
        terms, _ = _efc_terms(theta_g[groups], x, y)
        return np.bincount(groups, weights=terms, minlength=n_groups)

    g = (math.sqrt(5) - 1) / 2
    a = np.full(n_groups, math.log(THETA_MIN))
    b = np.full(n_groups, math.log(THETA_MAX))
    c, dd = b - g * (b - a), a + g * (b - a)
    fc, fd = ll(np.exp(c)), ll(np.exp(dd))
    iterations = 0
    while np.max(b - a) > GOLDEN_RTOL:
        iterations += 1
        left = fc >= fd
        b = np.where(left, dd, b)
        a = np.where(left, a, c)
        new_c = np.where(left, b - g * (b - a), dd)
        new_d = np.where(left, c, a + g * (b - a))
        c, dd = new_c, new_d
        # one of the two is reused; recomputing both keeps the code simple
        fc, fd = ll(np.exp(c)), ll(np.exp(dd))
    theta = np.exp(0.5 * (a + b))
    # compare with the bounds so monotone likelihoods land exactly on them
    cand = np.vstack([theta, np.full(n_groups, THETA_MIN), np.full(n_groups, THETA_MAX)])
    vals = np.vstack([ll(cand[0]), ll(cand[1]), ll(cand[2])])
    best = np.argmax(vals, axis=0)
    return cand[best, np.arange(n_groups)], iterations


def fit_efc_global(table: FeatureTable, strength: str, delay: str) -> tuple[float, dict]:
    """MLE of a single difficulty over every row of ``table``."""
    if len(table) == 0:
        raise ValueError("empty training set")
    x = efc_exponent(table, strength, delay)
    if np.any(np.isnan(x)):
        raise ValueError("rows without a delay cannot be used with the delay term")
    y = table.y
    if y.all():
        return THETA_MIN, {"boundary": "theta_min", "iterations": 0}
    if not y.any():
        return THETA_MAX, {"boundary": "theta_max", "iterations": 0}
    theta, it = _golden_log_theta(x, y, np.zeros(len(y), dtype=int), 1)
    t = float(theta[0])
    boundary = "theta_min" if t == THETA_MIN else "theta_max" if t == THETA_MAX else None
    return t, {"boundary": boundary, "iterations": it}


def fit_efc_per_item(table: FeatureTable, strength: str, delay: str) -> tuple[dict[str, float], float, dict]:
    """Independent MLE per item. Returns (theta per item, fallback, info);
    the fallback, used for unseen items, is the mean fitted theta."""
    if len(table) == 0:
        raise ValueError("empty training set")
    x = efc_exponent(table, strength, delay)
    if np.any(np.isnan(x)):
        raise ValueError("rows without a delay cannot be used with the delay term")
    items, groups = np.unique(table.item, return_inverse=True)
    k = len(items)
    theta, it = _golden_log_theta(x, table.y, groups, k)
    pos = np.bincount(groups, weights=table.y.astype(float), minlength=k)
    cnt = np.bincount(groups, minlength=k)
    theta = np.where(pos == cnt, THETA_MIN, np.where(pos == 0, THETA_MAX, theta))
    per_item = {str(i): float(t) for i, t in zip(items, theta)}
    info = {"iterations": it, "boundary_items": int(np.sum((pos == cnt) | (pos == 0)))}
    return per_item, float(np.mean(theta)), info


# --- logistic models -------------------------------------------------------

def logistic_objective(w: np.ndarray, X_idx, y: np.ndarray, l2: float,
                       penalize: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative penalized log-likelihood and its gradient.

    ``X_idx`` is either a dense design matrix or a tuple (plus, minus) of
    index arrays for models whose logit is ``w[plus] - w[minus]`` (IRT).
    """
    if isinstance(X_idx, tuple):
        plus, minus = X_idx
        z = np.zeros(len(y))
        if plus is not None:
            z += w[plus]
        if minus is not None:
            z -= w[minus]
    else:
        z = X_idx @ w
    yf = y.astype(float)
    nll = float(np.sum(np.logaddexp(0.0, z) - yf * z))
    r = expit(z) - yf
    if isinstance(X_idx, tuple):
        g = np.zeros_like(w)
        if plus is not None:
            g += np.bincount(plus, weights=r, minlength=len(w))
        if minus is not None:
            g -= np.bincount(minus, weights=r, minlength=len(w))
    else:
        g = X_idx.T @ r
    pw = w * penalize
    nll += 0.5 * l2 * float(pw @ pw)
    g = g + l2 * pw
    return nll, g


def _maximize(w0, X_idx, y, l2, penalize, fixed=None):
    bounds = [(-PARAM_BOUND, PARAM_BOUND)] * len(w0)
    if fixed is not None:
        for j in np.flatnonzero(fixed):
            bounds[j] = (0.0, 0.0)
    res = minimize(logistic_objective, w0, args=(X_idx, y, l2, penalize), jac=True,
                   method="L-BFGS-B", bounds=bounds,
                   options={"maxiter": MAX_ITER, "gtol": GRAD_TOL, "ftol": 1e-14})
    return res


def fit_irt(table: FeatureTable, variant: str, l2: float = 0.0) -> "MemoryModel":
    """Penalized MLE of an IRT model.

    irt0_user: p = logistic(theta_user); irt0_item: p = logistic(-beta_item);
    irt1: p = logistic(theta_user - beta_item). Unseen users or items fall
    back to the mean fitted parameter.
    """
    if len(table) == 0:
        raise ValueError("empty training set")
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    if variant == "irt1" and l2 == 0:
        raise ValueError("irt1 is unidentifiable without penalty (l2 > 0 required)")
    users, u_idx = np.unique(table.user, return_inverse=True)
    items, i_idx = np.unique(table.item, return_inverse=True)
    if variant == "irt0_user":
        X, k = (u_idx, None), len(users)
    elif variant == "irt0_item":
        X, k = (None, i_idx), len(items)
    elif variant == "irt1":
        X, k = (u_idx, len(users) + i_idx), len(users) + len(items)
    else:
        raise ValueError(f"unknown IRT variant {variant!r}")
    res = _maximize(np.zeros(k), X, table.y, l2, np.ones(k))
    w = res.x
    params: dict = {}
    fallbacks: dict = {}
    if variant in ("irt0_user", "irt1"):
        th = w[: len(users)]
        params["user"] = {str(u): float(v) for u, v in zip(users, th)}
        fallbacks["user"] = float(th.mean())
    if variant in ("irt0_item", "irt1"):
        be = w[len(users):] if variant == "irt1" else w
        params["item"] = {str(i): float(v) for i, v in zip(items, be)}
        fallbacks["item"] = float(be.mean())
    meta = {"iterations": int(res.nit), "tolerance": GRAD_TOL, "l2": l2,
            "converged": bool(res.success), "grad_inf_norm": float(np.max(np.abs(res.jac)))}
    return MemoryModel(get_spec(variant), params=params, fallbacks=fallbacks, fit_metadata=meta)


def fit_logreg(table: FeatureTable, l2: float = 0.0) -> "MemoryModel":
    """Logistic regression on standardized review-history statistics.

    Rows without history statistics are dropped. Constant columns get a
    coefficient pinned at zero and a warning in the fit metadata.
    """
    if l2 < 0:
        raise ValueError("l2 must be non-negative")
    rows = ~np.isnan(table.hist[:, 0])
    H, y = table.hist[rows], table.y[rows]
    if len(y) == 0:
        raise ValueError("no rows with history statistics")
    mean = H.mean(axis=0)
    std = H.std(axis=0)
    degenerate = std < 1e-12
    std_safe = np.where(degenerate, 1.0, std)
    Z = (H - mean) / std_safe
    Z[:, degenerate] = 0.0
    X = np.hstack([np.ones((len(y), 1)), Z])
    penalize = np.ones(X.shape[1])
    penalize[0] = 0.0
    fixed = np.concatenate([[False], degenerate])
    res = _maximize(np.zeros(X.shape[1]), X, y, l2, penalize, fixed)
    warns = [f"constant feature {FEATURE_NAMES[j]} pinned to 0" for j in np.flatnonzero(degenerate)]
    for w_ in warns:
        log.warning(w_)
    params = {
        "intercept": float(res.x[0]),
        "coef": res.x[1:].tolist(),
        "feature_mean": mean.tolist(),
        "feature_std": std_safe.tolist(),
        "features": list(FEATURE_NAMES),
    }
    meta = {"iterations": int(res.nit), "tolerance": GRAD_TOL, "l2": l2,
            "converged": bool(res.success), "warnings": warns}
    # rows lacking statistics are scored at the empirical training rate
    rate = float(np.clip(y.mean(), 1e-6, 1 - 1e-6))
    return MemoryModel(get_spec("logreg"), params=params,
                       fallbacks={"logit": math.log(rate / (1 - rate))}, fit_metadata=meta)


# --- fitted models ---------------------------------------------------------

@dataclass
class MemoryModel:
    spec: ModelSpec
    theta: float | None = None
    params: dict = field(default_factory=dict)
    fallbacks: dict = field(default_factory=dict)
    time_unit: str | None = None
    fit_metadata: dict = field(default_factory=dict)

    @property
    def name(self) -> str:
        return self.spec.name

    def predict(self, table: FeatureTable) -> np.ndarray:
        """Recall probabilities for every row of ``table``."""
        s = self.spec
        if s.kind == "efc":
            x = efc_exponent(table, s.strength, s.delay)
            if s.difficulty == "global":
                theta = np.full(len(table), self.theta)
            else:
                th = self.params["item"]
                fb = self.fallbacks["item"]
                theta = np.array([th.get(str(i), fb) for i in table.item], dtype=float)
            return np.exp(-theta * x)
        if s.kind == "logreg":
            p = self.params
            H = table.hist
            ok = ~np.isnan(H[:, 0])
            z = np.full(len(table), self.fallbacks["logit"])
            Z = (H[ok] - np.asarray(p["feature_mean"])) / np.asarray(p["feature_std"])
            z[ok] = p["intercept"] + Z @ np.asarray(p["coef"])
            return expit(z)
        z = np.zeros(len(table))
        if "user" in self.params:
            th, fb = self.params["user"], self.fallbacks["user"]
            z += np.array([th.get(str(u), fb) for u in table.user], dtype=float)
        if "item" in self.params:
            be, fb = self.params["item"], self.fallbacks["item"]
            z -= np.array([be.get(str(i), fb) for i in table.item], dtype=float)
        return expit(z)

    def to_dict(self) -> dict:
        s = self.spec
        parameters = dict(self.params)
        if self.theta is not None:
            parameters["theta"] = self.theta
        return {
            "kind": s.kind,
            "row": s.row,
            "name": s.name,
            "modes": {"difficulty": s.difficulty, "strength": s.strength, "delay": s.delay},
            "parameters": parameters,
            "fallbacks": self.fallbacks,
            "time_unit": self.time_unit,
            "fit_metadata": self.fit_metadata,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MemoryModel":
        params = dict(d["parameters"])
        theta = params.pop("theta", None)
        return cls(get_spec(d["name"]), theta, params, dict(d["fallbacks"]),
                   d.get("time_unit"), dict(d.get("fit_metadata", {})))


def predict_recall(model: MemoryModel, f: FeatureVector) -> float:
    s = model.spec
    if s.uses_delay and s.kind == "efc" and f.d is None:
        raise ValueError(f"model {s.name} needs a delay")
    return float(model.predict(FeatureTable.from_vectors([f]))[0])


def efc_model(spec: ModelSpec | str | int, theta: float | dict[str, float],
              fallback: float | None = None, time_unit: str | None = None) -> MemoryModel:
    """Forgetting-curve model with given (not fitted) difficulties."""
    spec = get_spec(spec)
    if spec.kind != "efc":
        raise ValueError(f"{spec.name} is not a forgetting-curve model")
    if spec.difficulty == "global":
        if not THETA_MIN <= float(theta) <= THETA_MAX:
            theta = min(max(float(theta), THETA_MIN), THETA_MAX)
        return MemoryModel(spec, theta=float(theta), time_unit=time_unit)
    items = {str(k): float(v) for k, v in dict(theta).items()}
    fb = float(np.mean(list(items.values()))) if fallback is None else fallback
    return MemoryModel(spec, params={"item": items}, fallbacks={"item": fb}, time_unit=time_unit)


def fit_model(spec: ModelSpec | str | int, table: FeatureTable, l2: float = 0.0,
              time_unit: str | None = None) -> MemoryModel:
    """Fit any of the fourteen models on ``table`` (rows it cannot use are dropped)."""
    spec = get_spec(spec)
    train = training_rows(spec, table)
    if spec.kind == "efc":
        if spec.difficulty == "global":
            theta, info = fit_efc_global(train, spec.strength, spec.delay)
            info["tolerance"] = GOLDEN_RTOL
            return MemoryModel(spec, theta=theta, time_unit=time_unit, fit_metadata=info)
        per_item, fb, info = fit_efc_per_item(train, spec.strength, spec.delay)
        info["tolerance"] = GOLDEN_RTOL
        return MemoryModel(spec, params={"item": per_item}, fallbacks={"item": fb},
                           time_unit=time_unit, fit_metadata=info)
    if spec.kind == "logreg":
        m = fit_logreg(train, l2)
    else:
        m = fit_irt(train, spec.kind, l2 if spec.penalized else 0.0)
    m.time_unit = time_unit
    return m


def log_likelihood(model: MemoryModel, table: FeatureTable) -> float:
    p = np.clip(model.predict(table), 1e-12, 1 - 1e-12)
    return float(np.sum(np.where(table.y, np.log(p), np.log1p(-p))))
