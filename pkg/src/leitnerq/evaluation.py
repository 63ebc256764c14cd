"""Cross-validated comparison of recall models on truncated histories.

Each fold trains on the full histories of most user-item pairs plus the
prefix of a few truncated pairs, and scores the single interaction that
follows each truncation. A fixed share of pairs is held out for a final
test round that no fold ever sees.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .logs import InteractionHistory
from .models import FeatureTable, MemoryModel, ModelSpec, fit_model, get_spec, log_likelihood

L2_GRID = (1e-3, 1e-2, 1e-1, 1.0, 10.0)
DECK_BINS = ("1", "2", "3", "4", "5", "6+")


def deck_bin(q: int) -> str:
    return str(q) if q < 6 else "6+"


def auc(scores: Sequence[float], labels: Sequence[bool]) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic (ties count half)."""
    s = np.asarray(scores, dtype=float)
    y = np.asarray(labels, dtype=bool)
    if s.shape != y.shape:
        raise ValueError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC is undefined with a single class")
    ranks = rankdata(s)
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class FoldPlan:
    """Which pairs are truncated where, and at which position.

    A truncation index t means interactions [0, t) are visible for training
    and interaction t is scored.
    """

    n_pairs: int
    fold_count: int
    seed: int
    test_cut: dict[int, int]
    folds: tuple[dict[int, int], ...]

    @property
    def test_pairs(self) -> list[int]:
        return sorted(self.test_cut)

    def to_dict(self) -> dict:
        return {
            "n_pairs": self.n_pairs,
            "fold_count": self.fold_count,
            "seed": self.seed,
            "test_cut": {str(k): v for k, v in sorted(self.test_cut.items())},
            "folds": [{str(k): v for k, v in sorted(f.items())} for f in self.folds],
        }


def make_fold_plan(histories: Sequence[InteractionHistory], fold_count: int = 10,
                   test_frac: float = 0.2, trunc_frac: float = 0.1, seed: int = 0) -> FoldPlan:
    n = len(histories)
    if n < fold_count:
        raise ValueError(f"{n} pairs cannot fill {fold_count} folds")
    if any(len(h) < 2 for h in histories):
        raise ValueError("every history needs at least two interactions")
    if not 0 <= test_frac < 1 or not 0 < trunc_frac <= 1:
        raise ValueError("bad test_frac or trunc_frac")
    lengths = np.array([len(h) for h in histories])
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_test = int(round(test_frac * n))
    test = order[:n_test]
    rest = order[n_test:]
    if len(rest) < fold_count:
        raise ValueError("not enough non-test pairs for the folds")
    m = max(1, int(round(trunc_frac * len(rest))))

    test_cut = {int(p): int(rng.integers(1, lengths[p])) for p in sorted(test)}
    folds = []
    for f in range(fold_count):
        members = rest[(f * m + np.arange(m)) % len(rest)]
        cuts = rng.integers(1, lengths[members])
        folds.append({int(p): int(t) for p, t in zip(members, cuts)})
    return FoldPlan(n, fold_count, seed, test_cut, tuple(folds))


def split_rows(table: FeatureTable, train_pairs_full: np.ndarray, cuts: dict[int, int]):
    """Boolean masks (train, score) over ``table`` for one round."""
    cut_arr = np.full(table.pair.max() + 1 if len(table) else 0, -1)
    for p, t in cuts.items():
        cut_arr[p] = t
    row_cut = cut_arr[table.pair]
    full = np.isin(table.pair, train_pairs_full)
    truncated = row_cut >= 0
    train = (full & ~truncated) | (truncated & (table.pos < row_cut))
    score = truncated & (table.pos == row_cut)
    return train, score


@dataclass
class EvalReport:
    models: list[str]
    fold_count: int
    val_auc: dict[str, list[float | None]] = field(default_factory=dict)
    val_binned: dict[str, list[dict[str, float | None]]] = field(default_factory=dict)
    test_auc: dict[str, float | None] = field(default_factory=dict)
    test_binned: dict[str, dict[str, float | None]] = field(default_factory=dict)
    chosen_l2: dict[str, float | None] = field(default_factory=dict)
    test_models: dict[str, dict] = field(default_factory=dict)

    def mean_val_auc(self, model: str) -> float:
        vals = [v for v in self.val_auc[model] if v is not None]
        return float(np.mean(vals)) if vals else math.nan

    def stderr_val_auc(self, model: str) -> float:
        vals = [v for v in self.val_auc[model] if v is not None]
        if len(vals) < 2:
            return math.nan
        return float(np.std(vals, ddof=1) / math.sqrt(len(vals)))

    def binned_summary(self, model: str) -> dict[str, tuple[float, float]]:
        out = {}
        for b in DECK_BINS:
            vals = [f[b] for f in self.val_binned[model] if f.get(b) is not None]
            if vals:
                se = float(np.std(vals, ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else math.nan
                out[b] = (float(np.mean(vals)), se)
        return out

    def rows(self) -> list[tuple[str, str, str, float]]:
        out = []
        for m in self.models:
            for f, (a, binned) in enumerate(zip(self.val_auc[m], self.val_binned[m])):
                if a is not None:
                    out.append((m, str(f), "all", a))
                for b in DECK_BINS:
                    if binned.get(b) is not None:
                        out.append((m, str(f), b, binned[b]))
            if self.test_auc.get(m) is not None:
                out.append((m, "test", "all", self.test_auc[m]))
            for b in DECK_BINS:
                v = self.test_binned.get(m, {}).get(b)
                if v is not None:
                    out.append((m, "test", b, v))
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "fold", "bin", "auc"])
        for m, f, b, a in self.rows():
            w.writerow([m, f, b, repr(a)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "models": self.models,
            "fold_count": self.fold_count,
            "val_auc": self.val_auc,
            "val_binned": self.val_binned,
            "val_mean": {m: self.mean_val_auc(m) for m in self.models},
            "val_stderr": {m: self.stderr_val_auc(m) for m in self.models},
            "test_auc": self.test_auc,
            "test_binned": self.test_binned,
            "chosen_l2": self.chosen_l2,
            "test_models": self.test_models,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, allow_nan=True)


def _safe_auc(p, y):
    try:
        return auc(p, y)
    except ValueError:
        return None


def _score(predictor, table: FeatureTable, mask):
    sub = table.subset(mask)
    p = predictor.predict(sub)
    overall = _safe_auc(p, sub.y)
    bins = np.array([deck_bin(int(q)) for q in sub.q])
    binned = {b: _safe_auc(p[bins == b], sub.y[bins == b]) for b in DECK_BINS}
    return overall, binned


def _model_name(m) -> str:
    if isinstance(m, ModelSpec):
        return m.name
    if isinstance(m, (str, int)):
        return get_spec(m).name
    return getattr(m, "name")


def evaluate_models(histories: Sequence[InteractionHistory], models: Sequence, plan: FoldPlan,
                    l2_grid: Sequence[float] = L2_GRID, table: FeatureTable | None = None,
                    time_unit: str | None = None) -> EvalReport:
    """Cross-validate ``models`` over the plan's folds, then score the test set.

    ``models`` entries are model identifiers (fitted per round) or objects
    with ``name`` and ``predict(table)`` used as-is. The L2 constant of
    penalized models is chosen per fold by validation log-likelihood; the
    test round uses the constant with the best total validation
    log-likelihood.
    """
    if plan.n_pairs != len(histories):
        raise ValueError("plan was built for a different set of histories")
    if table is None:
        table = FeatureTable.from_histories(histories)
    names = [_model_name(m) for m in models]
    if len(set(names)) != len(names):
        raise ValueError("duplicate model names")
    report = EvalReport(names, plan.fold_count)
    test_pairs = np.array(plan.test_pairs, dtype=int)
    non_test = np.setdiff1d(np.arange(plan.n_pairs), test_pairs)

    for m, name in zip(models, names):
        fitted = not isinstance(m, (ModelSpec, str, int))
        spec = None if fitted else get_spec(m)
        grid = list(l2_grid) if (spec is not None and spec.penalized) else [0.0]
        val_ll = np.zeros(len(grid))
        report.val_auc[name] = []
        report.val_binned[name] = []
        for cuts in plan.folds:
            train, score = split_rows(table, non_test, cuts)
            if fitted:
                predictor = m
            else:
                best = None
                for gi, l2 in enumerate(grid):
                    cand = fit_model(spec, table.subset(train), l2=l2, time_unit=time_unit)
                    ll = log_likelihood(cand, table.subset(score))
                    val_ll[gi] += ll
                    if best is None or ll > best[0]:
                        best = (ll, cand)
                predictor = best[1]
            overall, binned = _score(predictor, table, score)
            report.val_auc[name].append(overall)
            report.val_binned[name].append(binned)

        train, score = split_rows(table, non_test, plan.test_cut)
        if fitted:
            predictor = m
            report.chosen_l2[name] = None
        else:
            l2 = grid[int(np.argmax(val_ll))]
            report.chosen_l2[name] = l2 if spec.penalized else None
            predictor = fit_model(spec, table.subset(train), l2=l2, time_unit=time_unit)
            report.test_models[name] = predictor.to_dict()
        if score.any():
            report.test_auc[name], report.test_binned[name] = _score(predictor, table, score)
        else:
            report.test_auc[name], report.test_binned[name] = None, {}
    return report


@dataclass
class ConstantModel:
    """Predicts the same probability everywhere; a floor for AUC comparisons."""

    p: float = 0.5
    name: str = "constant"

    def predict(self, table: FeatureTable) -> np.ndarray:
        return np.full(len(table), self.p)


@dataclass
class FixedModel:
    """Wraps an already fitted MemoryModel under a chosen name."""

    model: MemoryModel
    name: str

    def predict(self, table: FeatureTable) -> np.ndarray:
        return self.model.predict(table)
