"""Discrete-event simulation of the Leitner queue network.

Review instants arrive as a Poisson process of rate U. At each instant a
static schedule picks an action: introduce a new item (rate lam_ext),
review the oldest item of deck k (rate mu_k), or stay idle (the budget
slack). A reviewed item is recalled with probability exp(-theta * D / k);
recalled items move up a deck (or exit as mastered from the top deck),
forgotten ones move down, floored at deck 1.

``delay_mode="clocked"`` uses the true time since the item's last review as
D. ``delay_mode="mean_recall"`` ignores it and draws D independently from
Exponential(mu_k - lam_k), with lam_k the steady-state deck arrival rates,
which turns the network into a Jackson network.
"""

from __future__ import annotations

import csv
import io
import json
import math
from bisect import bisect_right
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from . import planner
from .logs import Dialect, LogSet, ReviewLog, TimeUnit, build_histories
from .models import FeatureTable, fit_efc_global

BLOCK = 4096
BUDGET_SLACK = 1e-12


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    lambda_ext: float
    U: float
    theta: float | Mapping[int, float] = 0.0077
    mu: tuple[float, ...] | None = None
    mu_rule: str | None = None  # "inverse_sqrt": mu_k ~ k^-1/2 spending the whole budget
    n_decks: int | None = 5  # None: decks are unbounded, mastery judged post hoc
    max_reviews: int | None = None
    duration: float | None = None
    max_unique_items: int | None = None
    delay_mode: str = "clocked"
    flow_rates: tuple[float, ...] | None = None
    mastery_deck: int = 6
    resample_on_empty: bool = False
    record_trace: bool = True

    def __post_init__(self):
        if self.mu is not None:
            object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
        if self.flow_rates is not None:
            object.__setattr__(self, "flow_rates", tuple(float(m) for m in self.flow_rates))

    @property
    def reviewed_decks(self) -> int:
        if self.n_decks is not None:
            return self.n_decks
        if self.mu is not None:
            return len(self.mu)
        return self.mastery_deck - 1

    def rates(self) -> np.ndarray:
        """Per-deck review rates, resolving ``mu_rule`` against the budget."""
        if (self.mu is None) == (self.mu_rule is None):
            raise ConfigError("give exactly one of mu or mu_rule")
        if self.mu is not None:
            mu = np.array(self.mu, dtype=float)
            if self.n_decks is not None and len(mu) != self.n_decks:
                raise ConfigError(f"expected {self.n_decks} review rates, got {len(mu)}")
            return mu
        if self.mu_rule == "inverse_sqrt":
            w = planner.inverse_sqrt_weights(self.reviewed_decks)
        elif self.mu_rule == "uniform":
            w = np.ones(self.reviewed_decks)
        else:
            raise ConfigError(f"unknown mu_rule {self.mu_rule!r}")
        return np.maximum(planner.tight_rates(w, self.U, self.lambda_ext), 0.0)

    def validate(self) -> np.ndarray:
        if self.U <= 0:
            raise ConfigError("U must be positive")
        if self.lambda_ext < 0:
            raise ConfigError("lambda_ext must be non-negative")
        if self.n_decks is not None and self.n_decks < 1:
            raise ConfigError("n_decks must be at least 1")
        if (self.max_reviews is None) == (self.duration is None):
            raise ConfigError("give exactly one horizon: max_reviews or duration")
        if self.delay_mode not in ("clocked", "mean_recall"):
            raise ConfigError(f"unknown delay_mode {self.delay_mode!r}")
        if isinstance(self.theta, Mapping):
            if any(v <= 0 for v in self.theta.values()):
                raise ConfigError("theta must be positive")
        elif not self.theta > 0:
            raise ConfigError("theta must be positive")
        mu = self.rates()
        if np.any(mu < 0):
            raise ConfigError("review rates must be non-negative")
        if self.lambda_ext + mu.sum() > self.U + BUDGET_SLACK:
            raise ConfigError(
                f"budget violated: lambda_ext + sum(mu) = {self.lambda_ext + mu.sum():.6g} > U = {self.U:.6g}"
            )
        return mu

    def to_dict(self) -> dict:
        d = asdict(self)
        if isinstance(self.theta, Mapping):
            d["theta"] = {str(k): v for k, v in self.theta.items()}
        for k in ("mu", "flow_rates"):
            if d[k] is not None:
                d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        d = dict(d)
        if isinstance(d.get("theta"), Mapping):
            d["theta"] = {int(k): float(v) for k, v in d["theta"].items()}
        for k in ("mu", "flow_rates"):
            if d.get(k) is not None:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SimResult:
    mastered_count: int
    introduced_count: int
    occupancy: list[int]  # decks 1 .. n (or 1 .. mastery_deck-1 when unbounded)
    elapsed: float
    events: int
    reviews: int
    idle: int
    trace: list[tuple] = field(default_factory=list)
    recall_stats: dict[int, list[int]] = field(default_factory=dict)  # deck -> [reviews, recalls]

    @property
    def lambda_out(self) -> float:
        return self.mastered_count / self.elapsed if self.elapsed > 0 else 0.0

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "action", "item_id", "deck", "outcome", "q_after"])
        for t, action, item, deck, outcome, q_after in self.trace:
            w.writerow([repr(t), action, "" if item is None else item, "" if deck is None else deck,
                        "" if outcome is None else int(outcome), "" if q_after is None else q_after])
        return buf.getvalue()

    def review_logs(self, user_id: str = "u0", t0: float = 0.0) -> list[ReviewLog]:
        """Trace as self-assessment logs: each introduction is a failed first
        viewing, each review passes (grade 4) or fails (grade 1)."""
        out = []
        for t, action, item, _deck, outcome, _q in self.trace:
            if action == "introduce":
                out.append(ReviewLog(user_id, f"i{item}", t0 + t, 1, False))
            elif action == "review":
                out.append(ReviewLog(user_id, f"i{item}", t0 + t, 4 if outcome else 1, bool(outcome)))
        return out

    def summary(self) -> dict:
        return {
            "mastered": self.mastered_count,
            "introduced": self.introduced_count,
            "occupancy": self.occupancy,
            "elapsed": self.elapsed,
            "lambda_out": self.lambda_out,
            "events": self.events,
            "reviews": self.reviews,
            "idle": self.idle,
        }


def _rng_for(seed, trial: int | None = None) -> np.random.Generator:
    if isinstance(seed, np.random.SeedSequence):
        ss = seed
    else:
        ss = np.random.SeedSequence(0 if seed is None else int(seed))
    if trial is not None:
        ss = np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (int(trial),))
    return np.random.default_rng(ss)


def mean_recall_rates(config: SimConfig) -> np.ndarray:
    """Steady-state deck arrival rates used by the mean-recall delay draws."""
    mu = config.rates()
    if isinstance(config.theta, Mapping):
        raise ConfigError("mean_recall mode needs a single global theta")
    if config.flow_rates is not None:
        lam = np.array(config.flow_rates, dtype=float)
    else:
        if np.any(mu <= 0):
            raise ConfigError("mean_recall mode needs positive review rates on every deck")
        sol = planner.solve_flow_balance(mu, config.lambda_ext, float(config.theta))
        if not sol.feasible:
            raise planner.InfeasibleError(
                f"no steady state at lambda_ext={config.lambda_ext}: deck {sol.starved_deck} starves"
            )
        lam = sol.lam
    if len(lam) != len(mu) or np.any(mu <= lam):
        raise planner.InfeasibleError("mean_recall mode requires lam_k < mu_k on every deck")
    return lam


def simulate(config: SimConfig, seed=None) -> SimResult:
    """Run one session. Deterministic given ``seed`` (int or SeedSequence)."""
    mu = config.validate()
    mean_recall = config.delay_mode == "mean_recall"
    slack_rate = mu - mean_recall_rates(config) if mean_recall else None

    rng = _rng_for(seed)
    aux = _rng_for(seed, trial=2**31 - 1) if config.resample_on_empty else None
    U = config.U
    m = len(mu)
    cum = np.cumsum(np.concatenate([[config.lambda_ext], mu])) / U
    cum_l = cum.tolist()
    n_actions = len(cum_l)

    theta = config.theta
    theta_map = theta if isinstance(theta, Mapping) else None
    theta_default = float(np.mean(list(theta_map.values()))) if theta_map else float(theta)
    bounded = config.n_decks is not None
    n_decks = config.n_decks
    max_items = config.max_unique_items
    horizon_events = config.max_reviews
    horizon_time = config.duration
    record = config.record_trace

    decks: list[deque] = [deque() for _ in range(m + 1)]  # index k-1 for deck k; extra grow on demand
    trace: list[tuple] = []
    recall_stats: dict[int, list[int]] = {}
    introduced = mastered = reviews = idle = events = 0
    now = 0.0
    block_pos = BLOCK
    gaps = act = out_u = exp_d = None

    while True:
        if horizon_events is not None and events >= horizon_events:
            break
        if block_pos >= BLOCK:
            gaps = rng.exponential(1.0 / U, BLOCK).tolist()
            act = rng.random(BLOCK).tolist()
            out_u = rng.random(BLOCK).tolist()
            exp_d = rng.standard_exponential(BLOCK).tolist()
            block_pos = 0
        t_next = now + gaps[block_pos]
        if horizon_time is not None and t_next > horizon_time:
            now = horizon_time
            break
        now = t_next
        a = bisect_right(cum_l, act[block_pos])
        u_out = out_u[block_pos]
        e_d = exp_d[block_pos]
        block_pos += 1
        events += 1

        if config.resample_on_empty and a < n_actions:
            feasible = a == 0 and (max_items is None or introduced < max_items) or a > 0 and decks[a - 1]
            if not feasible:
                a = _resample(aux, config.lambda_ext, mu, decks, introduced, max_items)

        if a == 0:
            if max_items is not None and introduced >= max_items:
                idle += 1
                if record:
                    trace.append((now, "idle", None, None, None, None))
                continue
            item = introduced
            introduced += 1
            decks[0].append((item, now))
            if record:
                trace.append((now, "introduce", item, 1, None, 1))
            continue
        if a >= n_actions or not decks[a - 1]:
            idle += 1
            if record:
                trace.append((now, "idle", None, None, None, None))
            continue

        k = a  # deck number, 1-based
        item, last = decks[k - 1].popleft()
        th = theta_map.get(item, theta_default) if theta_map is not None else theta_default
        if mean_recall:
            delay = e_d / slack_rate[k - 1]
        else:
            delay = now - last
        ok = u_out < math.exp(-th * delay / k)
        reviews += 1
        st = recall_stats.setdefault(k, [0, 0])
        st[0] += 1
        st[1] += ok
        if ok:
            if bounded and k == n_decks:
                mastered += 1
                q_after = None
            else:
                q_after = k + 1
                while len(decks) < q_after:
                    decks.append(deque())
                decks[q_after - 1].append((item, now))
        else:
            q_after = max(k - 1, 1)
            decks[q_after - 1].append((item, now))
        if record:
            trace.append((now, "review", item, k, ok, q_after))

    if not bounded:
        cut = config.mastery_deck - 1
        mastered = sum(len(d) for d in decks[cut:])
        occupancy = [len(decks[k]) if k < len(decks) else 0 for k in range(cut)]
    else:
        occupancy = [len(d) for d in decks[:n_decks]]
    return SimResult(mastered, introduced, occupancy, now, events, reviews, idle, trace, recall_stats)


def _resample(rng, lam_ext, mu, decks, introduced, max_items):
    """Redraw an action among those that can be carried out, in proportion
    to their scheduled rates; returns an out-of-range index if none can."""
    weights = [lam_ext if (max_items is None or introduced < max_items) else 0.0]
    weights += [r if decks[k] else 0.0 for k, r in enumerate(mu)]
    total = sum(weights)
    if total <= 0:
        return len(weights)
    u = rng.random() * total
    acc = 0.0
    for i, w in enumerate(weights):
        acc += w
        if u < acc and w > 0:
            return i
    return max(i for i, w in enumerate(weights) if w > 0)


# --- sweeps ----------------------------------------------------------------

@dataclass
class SweepPoint:
    lambda_ext: float
    mean_lambda_out: float
    stderr: float
    mean_occupancy: list[float]
    mean_mastered: float
    mean_introduced: float
    trials: int


@dataclass
class SweepResult:
    points: list[SweepPoint]
    skipped: list[dict]
    n_columns: int = 0  # occupancy columns to emit even when every rate was skipped

    def to_csv(self) -> str:
        n = max([len(p.mean_occupancy) for p in self.points] + [self.n_columns])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda_ext", "mean_lambda_out", "stderr"] + [f"occ_{k}" for k in range(1, n + 1)]
                   + ["mastered"])
        for p in self.points:
            occ = list(p.mean_occupancy) + [0.0] * (n - len(p.mean_occupancy))
            w.writerow([repr(p.lambda_ext), repr(p.mean_lambda_out), repr(p.stderr)]
                       + [repr(x) for x in occ] + [repr(p.mean_mastered)])
        return buf.getvalue()

    def occupancy_csv(self) -> str:
        """Where items finish: mean count per deck plus the mastered pile,
        and the same as fractions of introduced items."""
        n = max([len(p.mean_occupancy) for p in self.points] + [self.n_columns])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["lambda_ext", "introduced"] + [f"deck_{k}" for k in range(1, n + 1)] + ["mastered"]
                   + [f"frac_deck_{k}" for k in range(1, n + 1)] + ["frac_mastered"])
        for p in self.points:
            counts = list(p.mean_occupancy) + [0.0] * (n - len(p.mean_occupancy)) + [p.mean_mastered]
            fr = [c / p.mean_introduced if p.mean_introduced > 0 else 0.0 for c in counts]
            w.writerow([repr(p.lambda_ext), repr(p.mean_introduced)] + [repr(c) for c in counts]
                       + [repr(f) for f in fr])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {"points": [asdict(p) for p in self.points], "skipped": self.skipped}


def _run_trials(args):
    cfg, seed, trial_ids = args
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(int(seed))
    out = []
    for t in trial_ids:
        r = simulate(cfg, np.random.SeedSequence(ss.entropy, spawn_key=(int(t),)))
        out.append((r.lambda_out, r.occupancy, r.mastered_count, r.introduced_count))
    return out


def sweep_arrival_rates(base: SimConfig, rates: Sequence[float], trials: int, seed: int = 0,
                        workers: int = 1) -> SweepResult:
    """Mean learning rate over seeded trials at each arrival rate.

    Trial i uses the same random stream at every rate, so repeated rates
    give identical aggregates and neighbouring rates share noise. Rates
    that break the budget (or have no steady state in mean-recall mode)
    are skipped and reported in ``skipped``.
    """
    if trials < 1:
        raise ValueError("trials must be positive")
    base = replace(base, record_trace=False)
    jobs = []
    skipped = []
    for r in rates:
        cfg = replace(base, lambda_ext=float(r), flow_rates=None)
        try:
            cfg.validate()
            if cfg.delay_mode == "mean_recall":
                cfg = replace(cfg, flow_rates=tuple(mean_recall_rates(cfg).tolist()))
        except (ConfigError, planner.InfeasibleError) as e:
            skipped.append({"lambda_ext": float(r), "reason": str(e)})
            continue
        jobs.append(cfg)

    chunks = [(cfg, seed, list(range(trials))) for cfg in jobs]
    if workers > 1 and len(chunks) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_run_trials, chunks))
    else:
        results = [_run_trials(c) for c in chunks]

    points = []
    for cfg, res in zip(jobs, results):
        lo = np.array([x[0] for x in res])
        occ = np.array([x[1] for x in res], dtype=float)
        points.append(SweepPoint(
            lambda_ext=cfg.lambda_ext,
            mean_lambda_out=float(lo.mean()),
            stderr=float(lo.std(ddof=1) / math.sqrt(len(lo))) if len(lo) > 1 else 0.0,
            mean_occupancy=occ.mean(axis=0).tolist(),
            mean_mastered=float(np.mean([x[2] for x in res])),
            mean_introduced=float(np.mean([x[3] for x in res])),
            trials=len(lo),
        ))
    n_cols = base.reviewed_decks if base.n_decks is not None else base.mastery_deck - 1
    return SweepResult(points, skipped, n_cols)


# --- parameter estimation --------------------------------------------------

@dataclass(frozen=True)
class Session:
    logs: tuple[ReviewLog, ...]
    duration: float  # seconds


def estimate_empirical_params(sessions: Sequence[Session],
                              dialect: Dialect | str = Dialect.SELF_ASSESSMENT) -> tuple[float, float]:
    """Review budget U (logs per second) and global difficulty theta (per
    second) from timed sessions.

    U is the mean number of logs per session over the mean session length;
    theta is the maximum-likelihood difficulty of the deck-scaled
    forgetting curve on every review that has a previous one.
    """
    if not sessions:
        raise ValueError("no sessions")
    if any(s.duration <= 0 for s in sessions):
        raise ValueError("session duration must be positive")
    n_logs = np.mean([len(s.logs) for s in sessions])
    U = float(n_logs / np.mean([s.duration for s in sessions]))
    tables = []
    for s in sessions:
        hist = build_histories(LogSet(tuple(s.logs), Dialect.parse(dialect), TimeUnit.SECONDS))
        tables.append(FeatureTable.from_histories(hist))
    table = _concat(tables)
    table = table.subset(table.has_delay)
    theta, _ = fit_efc_global(table, "leitner_q", "with_delay")
    return U, theta


def _concat(tables: Sequence[FeatureTable]) -> FeatureTable:
    fields = ("d", "n", "q", "user", "item", "hist", "y", "pair", "pos")
    return FeatureTable(*(np.concatenate([getattr(t, f) for t in tables]) for f in fields))


def load_config(text: str) -> tuple[SimConfig, dict]:
    """Parse a JSON simulation config; keys outside SimConfig (rates,
    trials, seed) are returned separately."""
    data = json.loads(text)
    sweep_keys = {"rates", "trials", "seed", "description"}
    extra = {k: data.pop(k) for k in list(data) if k in sweep_keys}
    data.setdefault("lambda_ext", 0.0)
    return SimConfig.from_dict(data), extra
