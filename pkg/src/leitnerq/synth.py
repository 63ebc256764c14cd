"""Synthetic review logs drawn from a known forgetting curve.

Used to check that fitting recovers known difficulties and that the
evaluation pipeline ranks the generating model first.
"""

from __future__ import annotations

import numpy as np

from .logs import SECONDS_PER_DAY, Dialect, LogSet, ReviewLog, TimeUnit
from .models import get_spec


def generate_logs(n_users: int, n_items: int, reviews_per_pair: int, theta, *, model=8,
                  mean_gap_days: float = 5.0, first_recall: float = 0.3,
                  pairs_per_user: int | None = None, seed: int = 0) -> LogSet:
    """Mnemosyne-dialect logs where every non-first review is recalled with
    the probability given by forgetting-curve ``model``.

    Gaps between reviews are Exponential with mean ``mean_gap_days * q`` so
    items higher in the Leitner order wait longer, as a scheduler would make
    them. ``theta`` is a float or one value per item.
    """
    spec = get_spec(model)
    if spec.kind != "efc":
        raise ValueError("only forgetting-curve models can generate data")
    rng = np.random.default_rng(seed)
    per_user = n_items if pairs_per_user is None else pairs_per_user
    users = np.repeat(np.arange(n_users), per_user)
    items = np.concatenate([rng.choice(n_items, per_user, replace=False) for _ in range(n_users)])
    m = len(users)
    theta_items = np.broadcast_to(np.asarray(theta, dtype=float), (n_items,))
    th = theta_items[items]

    t = rng.uniform(0, 365, m)  # days
    q = np.ones(m)
    times = np.empty((reviews_per_pair, m))
    outcomes = np.empty((reviews_per_pair, m), dtype=bool)
    for r in range(reviews_per_pair):
        if r == 0:
            ok = rng.random(m) < first_recall
        else:
            d = rng.exponential(mean_gap_days * q)
            t = t + d
            s = {"constant": 1.0, "n_reviews": r + 1.0, "leitner_q": q}[spec.strength]
            x = d / s if spec.delay == "with_delay" else 1.0 / s
            ok = rng.random(m) < np.exp(-th * x)
        times[r] = t
        outcomes[r] = ok
        q = np.where(ok, q + 1, np.maximum(q - 1, 1))

    pass_grades = rng.integers(2, 6, size=outcomes.shape)
    fail_grades = rng.integers(0, 2, size=outcomes.shape)
    grades = np.where(outcomes, pass_grades, fail_grades)
    logs = []
    for j in range(m):
        u, i = f"u{users[j]}", f"i{items[j]}"
        for r in range(reviews_per_pair):
            logs.append(ReviewLog(u, i, float(times[r, j] * SECONDS_PER_DAY), int(grades[r, j]),
                                  bool(outcomes[r, j])))
    return LogSet(tuple(logs), Dialect.MNEMOSYNE, TimeUnit.DAYS)
