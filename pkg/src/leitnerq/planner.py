"""Steady-state planning for the Leitner queue network.

Under the mean-recall approximation each deck behaves like an M/M/1 queue
whose sojourn time is Exponential(mu_k - lam_k), so the recall probability
of an item reviewed from deck k is

    P_k = (mu_k - lam_k) / (mu_k - lam_k + theta / k)

and the per-deck arrival rates lam_k must satisfy the flow-balance
equations of the network. This module solves those equations, finds the
largest sustainable arrival rate for a given review schedule and searches
for the schedule with the largest sustainable arrival rate under a review
budget U.

Two facts drive the implementation:

* Summing the balance equations from deck k upward gives the cut identity
  ``P_k lam_k - (1 - P_{k+1}) lam_{k+1} = lam_ext`` (and ``P_n lam_n =
  lam_ext``). Walking from deck n down to deck 1, each deck therefore
  reduces to the scalar equation ``lam (mu - lam) / (mu - lam + a) = R``
  with R known, i.e. a quadratic whose smaller root is the stable
  solution. This is the ``"cascade"`` solver.
* For a fixed vector of recall probabilities P the loads scale linearly
  with lam_ext and the review rates are ``mu_k = lam_k + (theta/k) P_k /
  (1 - P_k)``. The largest arrival rate a budget U can sustain for that P
  is then ``(U - C(P)) / (1 + S(P))`` in closed form, which turns the
  static planning problem into an unconstrained search over P.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

log = logging.getLogger(__name__)

FEASIBILITY_EPS = 1e-9
DAMPING = 0.5
ITER_TOL = 1e-12
MAX_ITER = 10_000


class InfeasibleError(ValueError):
    """Raised when an operation needs lam_k < mu_k and the schedule starves a deck."""


@dataclass(frozen=True)
class Schedule:
    """A static review policy: arrival rate plus one review rate per deck."""

    n: int
    lambda_ext: float
    mu: tuple[float, ...]
    theta: float
    U: float

    def __post_init__(self):
        if len(self.mu) != self.n:
            raise ValueError(f"expected {self.n} review rates, got {len(self.mu)}")
        if self.lambda_ext < 0 or any(m < 0 for m in self.mu):
            raise ValueError("rates must be non-negative")
        if self.theta <= 0 or self.U <= 0:
            raise ValueError("theta and U must be positive")
        if self.lambda_ext + sum(self.mu) > self.U + 1e-12:
            raise ValueError(
                f"budget exceeded: {self.lambda_ext + sum(self.mu):.6g} > U={self.U:.6g}"
            )

    @property
    def budget_used(self) -> float:
        return self.lambda_ext + sum(self.mu)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "lambda_ext": self.lambda_ext,
            "mu": list(self.mu),
            "theta": self.theta,
            "U": self.U,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        return cls(int(d["n"]), float(d["lambda_ext"]), tuple(map(float, d["mu"])),
                   float(d["theta"]), float(d["U"]))


@dataclass(frozen=True)
class FlowSolution:
    lam: np.ndarray
    P: np.ndarray
    mu: np.ndarray
    lambda_ext: float
    feasible: bool
    residual: float
    iterations: int = 0
    starved_deck: int | None = None  # 1-based, first deck found with lam_k >= mu_k

    @property
    def expected_delay(self) -> np.ndarray:
        """Mean sojourn time 1/(mu_k - lam_k) per deck."""
        with np.errstate(divide="ignore"):
            return 1.0 / (self.mu - self.lam)

    @property
    def expected_queue(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return self.lam / (self.mu - self.lam)

    def to_dict(self) -> dict:
        out = {
            "lambda_ext": self.lambda_ext,
            "feasible": self.feasible,
            "residual": self.residual,
            "iterations": self.iterations,
            "starved_deck": self.starved_deck,
            "lam": self.lam.tolist(),
            "P": self.P.tolist(),
            "mu": self.mu.tolist(),
        }
        if self.feasible:
            out["expected_delay"] = self.expected_delay.tolist()
            out["expected_queue"] = self.expected_queue.tolist()
        return out


def recall_prob_mean(mu_k: float, lam_k: float, theta: float, k: int) -> float:
    """Recall probability of an item reviewed from deck k under the
    mean-recall approximation, E[exp(-theta D / k)] with D ~ Exp(mu_k - lam_k)."""
    if not mu_k > lam_k:
        raise InfeasibleError(f"deck {k} starved: mu={mu_k} <= lam={lam_k}")
    if lam_k < 0 or theta <= 0 or k < 1:
        raise ValueError("need lam_k >= 0, theta > 0, k >= 1")
    slack = mu_k - lam_k
    return slack / (slack + theta / k)


def _recall_vec(mu: np.ndarray, lam: np.ndarray, theta: float) -> np.ndarray:
    a = theta / np.arange(1, len(mu) + 1)
    slack = mu - lam
    return slack / (slack + a)


def balance_residual(lam: Sequence[float], P: Sequence[float], lambda_ext: float) -> float:
    """Infinity norm of the three families of flow-balance equations, written
    exactly as rate-in minus rate-out per deck."""
    lam = np.asarray(lam, dtype=float)
    P = np.asarray(P, dtype=float)
    n = len(lam)
    r = np.empty(n)
    if n == 1:
        r[0] = lambda_ext + (1 - P[0]) * lam[0] - lam[0]
        return float(np.max(np.abs(r)))
    r[0] = lambda_ext + (1 - P[0]) * lam[0] + (1 - P[1]) * lam[1] - lam[0]
    for i in range(1, n - 1):
        r[i] = P[i - 1] * lam[i - 1] + (1 - P[i + 1]) * lam[i + 1] - lam[i]
    r[n - 1] = P[n - 2] * lam[n - 2] - lam[n - 1]
    return float(np.max(np.abs(r)))


def cut_residual(lam: Sequence[float], P: Sequence[float], lambda_ext: float) -> float:
    """Infinity norm of the cut identities P_k lam_k - (1-P_{k+1}) lam_{k+1} = lam_ext."""
    lam = np.asarray(lam, dtype=float)
    P = np.asarray(P, dtype=float)
    net = P * lam
    net[:-1] -= (1 - P[1:]) * lam[1:]
    return float(np.max(np.abs(net - lambda_ext)))


def _check_inputs(mu, lambda_ext, theta):
    mu = np.asarray(mu, dtype=float)
    if mu.ndim != 1 or len(mu) == 0:
        raise ValueError("mu must be a non-empty vector")
    if np.any(mu <= 0):
        raise ValueError("every deck needs a positive review rate")
    if lambda_ext < 0:
        raise ValueError("lambda_ext must be non-negative")
    if theta <= 0:
        raise ValueError("theta must be positive")
    return mu


def _cascade(mu: np.ndarray, lambda_ext: float, theta: float):
    """Back-substitute from deck n to deck 1 taking the smaller root at each
    deck. Returns (lam, P, starved_deck)."""
    n = len(mu)
    lam = np.zeros(n)
    P = np.zeros(n)
    inflow = lambda_ext  # R_k: the net upward flow deck k must push through
    for k in range(n - 1, -1, -1):
        m = mu[k]
        a = theta / (k + 1)
        if inflow == 0.0:
            lam[k] = 0.0
        else:
            b = m + inflow
            disc = b * b - 4.0 * inflow * (m + a)
            if disc < 0 or inflow >= m:
                return lam, P, k + 1
            # stable form of (b - sqrt(disc)) / 2
            lam[k] = 2.0 * inflow * (m + a) / (b + math.sqrt(disc))
        if lam[k] >= m * (1 - FEASIBILITY_EPS):
            return lam, P, k + 1
        P[k] = (m - lam[k]) / (m - lam[k] + a)
        inflow = lambda_ext + (1 - P[k]) * lam[k]
    return lam, P, None


def _iterate(mu: np.ndarray, lambda_ext: float, theta: float):
    n = len(mu)
    a = [theta / (k + 1) for k in range(n)]
    mu_l = mu.tolist()
    lam = [0.0] * n
    new = [0.0] * n
    for it in range(1, MAX_ITER + 1):
        P = [(mu_l[k] - lam[k]) / (mu_l[k] - lam[k] + a[k]) for k in range(n)]
        new[n - 1] = lambda_ext / P[n - 1]
        for k in range(n - 2, -1, -1):
            new[k] = (lambda_ext + (1 - P[k + 1]) * new[k + 1]) / P[k]
        change = 0.0
        for k in range(n):
            v = DAMPING * new[k] + (1 - DAMPING) * lam[k]
            change = max(change, abs(v - lam[k]))
            lam[k] = v
            if v >= mu_l[k] * (1 - FEASIBILITY_EPS):
                return np.array(lam), np.array(P), k + 1, it, False
        if change < ITER_TOL:
            lam_a = np.array(lam)
            return lam_a, _recall_vec(mu, lam_a, theta), None, it, True
    lam_a = np.array(lam)
    return lam_a, _recall_vec(mu, lam_a, theta), None, MAX_ITER, False


def solve_flow_balance(mu: Sequence[float], lambda_ext: float, theta: float,
                       method: str = "cascade") -> FlowSolution:
    """Steady-state per-deck arrival rates and recall probabilities.

    ``method="cascade"`` solves deck by deck from the top; ``"iterate"`` runs
    damped fixed-point iteration from lam = 0 (alternating the recall
    probabilities and a back-substitution of the cut identities). Both land
    on the same minimal fixed point; the iteration slows down sharply close
    to the feasibility boundary and reports infeasible when it fails to
    converge in ``MAX_ITER`` steps.

    Infeasibility is returned as a verdict, never raised. A feasible
    solution is always re-checked against the raw balance equations.
    """
    mu = _check_inputs(mu, lambda_ext, theta)
    n = len(mu)
    if method == "cascade":
        lam, P, starved = _cascade(mu, lambda_ext, theta)
        iterations = n
        converged = starved is None
    elif method == "iterate":
        lam, P, starved, iterations, converged = _iterate(mu, lambda_ext, theta)
    else:
        raise ValueError(f"unknown method {method!r}")

    if starved is not None or not converged:
        return FlowSolution(lam, P, mu, lambda_ext, False, math.inf, iterations, starved)

    residual = max(balance_residual(lam, P, lambda_ext), cut_residual(lam, P, lambda_ext))
    feasible = residual < 1e-9 and bool(np.all(lam < mu)) and bool(np.all((P > 0) & (P < 1)))
    return FlowSolution(lam, P, mu, lambda_ext, feasible, residual, iterations, None)


def is_feasible(mu, lambda_ext: float, theta: float, method: str = "cascade") -> bool:
    return solve_flow_balance(mu, lambda_ext, theta, method).feasible


def tight_rates(weights: Sequence[float], budget: float, lambda_ext: float) -> np.ndarray:
    """Spread the budget left after introductions over the decks in
    proportion to ``weights``."""
    w = np.asarray(weights, dtype=float)
    return (budget - lambda_ext) * w / w.sum()


def inverse_sqrt_weights(n: int) -> np.ndarray:
    return 1.0 / np.sqrt(np.arange(1, n + 1))


def max_feasible_arrival(mu: Sequence[float], theta: float, budget: float | None = None,
                         method: str = "cascade") -> float:
    """Largest lam_ext for which the balance equations have a solution.

    With ``budget=None`` the review rates ``mu`` are held fixed. With a
    budget, ``mu`` is read as a shape and rescaled so the schedule stays
    budget-tight, ``lam_ext + sum(mu) = budget``, at every candidate rate.

    Bisection to absolute tolerance 1e-8 * sum(mu) (or 1e-8 * budget).
    Feasibility is monotone in lam_ext: every net flow R_k in the cascade
    grows with lam_ext, and a shrinking mu only lowers each deck's capacity.
    """
    mu = np.asarray(mu, dtype=float)
    if budget is None:
        _check_inputs(mu, 0.0, theta)

        def rates(x):
            return mu

        hi = float(mu.min())
        tol = 1e-8 * float(mu.sum())
    else:
        if budget <= 0:
            raise ValueError("budget must be positive")

        def rates(x):
            return tight_rates(mu, budget, x)

        hi = float(budget)
        tol = 1e-8 * budget

    def ok(x):
        r = rates(x)
        if np.any(r <= 0):
            return False
        return solve_flow_balance(r, x, theta, method).feasible

    lo = 0.0
    if not ok(lo):
        return 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if ok(mid):
            lo = mid
        else:
            hi = mid
    return lo


# --- static planning -------------------------------------------------------

def _unit_loads(P: np.ndarray) -> np.ndarray:
    """Per-deck arrival rates per unit of lam_ext for recall probabilities P."""
    n = len(P)
    L = np.empty(n)
    L[-1] = 1.0 / P[-1]
    for k in range(n - 2, -1, -1):
        L[k] = (1.0 + (1.0 - P[k + 1]) * L[k + 1]) / P[k]
    return L


def _unit_loads_grad(P: np.ndarray, L: np.ndarray) -> np.ndarray:
    """Gradient of sum(L) with respect to P (reverse accumulation)."""
    n = len(P)
    adj = np.empty(n)
    adj[0] = 1.0
    for k in range(1, n):
        adj[k] = 1.0 + adj[k - 1] * (1.0 - P[k]) / P[k - 1]
    g = -adj * L / P
    g[1:] -= adj[:-1] * L[1:] / P[:-1]
    return g


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def throughput_for_recall(P: Sequence[float], U: float, theta: float) -> float:
    """Largest lam_ext a budget U sustains when decks run at recall
    probabilities P; can be negative if the review cost alone exceeds U."""
    P = np.asarray(P, dtype=float)
    a = theta / np.arange(1, len(P) + 1)
    cost = float(np.sum(a * P / (1 - P)))
    return (U - cost) / (1.0 + float(np.sum(_unit_loads(P))))


def _neg_throughput(z: np.ndarray, U: float, a: np.ndarray):
    P = _sigmoid(z)
    L = _unit_loads(P)
    S = 1.0 + L.sum()
    C = float(np.sum(a * P / (1 - P)))
    f = (U - C) / S
    dC = a / (1 - P) ** 2
    dS = _unit_loads_grad(P, L)
    dP = (-dC * S - (U - C) * dS) / S**2
    return -f, -dP * P * (1 - P)


def _budget_needed(z: np.ndarray, lam: float, a: np.ndarray):
    P = _sigmoid(z)
    L = _unit_loads(P)
    B = lam * (1.0 + L.sum()) + float(np.sum(a * P / (1 - P)))
    dB = lam * _unit_loads_grad(P, L) + a / (1 - P) ** 2
    return B, dB * P * (1 - P)


def _start_points(n: int, theta: float, U: float, n_starts: int, seed: int) -> list[np.ndarray]:
    """Recall-probability starts derived from shaped review schedules
    (uniform, k^-1/2, k^-1, then random Dirichlet shapes), each taken at
    half its own sustainable arrival rate."""
    rng = np.random.default_rng(seed)
    k = np.arange(1, n + 1)
    shapes = [np.ones(n), k ** -0.5, 1.0 / k]
    while len(shapes) < n_starts:
        shapes.append(rng.dirichlet(np.ones(n)))
    starts = []
    for w in shapes[:n_starts]:
        lt = max_feasible_arrival(w, theta, budget=U)
        if lt > 0:
            sol = solve_flow_balance(tight_rates(w, U, 0.5 * lt), 0.5 * lt, theta)
            P = sol.P
        else:
            P = np.full(n, 0.5)
        P = np.clip(P, 1e-6, 1 - 1e-6)
        starts.append(np.log(P / (1 - P)))
    return starts


def _best_recall_vector(n, theta, fun, args, n_starts, seed, U_for_starts):
    best = None
    for z0 in _start_points(n, theta, U_for_starts, n_starts, seed):
        res = minimize(fun, z0, args=args, jac=True, method="L-BFGS-B",
                       bounds=[(-30.0, 30.0)] * n,
                       options={"maxiter": 5000, "ftol": 1e-15, "gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    return _sigmoid(best.x), best


def schedule_from_recall(P: Sequence[float], lambda_ext: float, theta: float, U: float) -> Schedule:
    """Review rates that make decks run at recall probabilities P when new
    items arrive at ``lambda_ext``."""
    P = np.asarray(P, dtype=float)
    a = theta / np.arange(1, len(P) + 1)
    lam = lambda_ext * _unit_loads(P)
    mu = lam + a * P / (1 - P)
    return Schedule(len(P), float(lambda_ext), tuple(float(m) for m in mu), theta, U)


def _feasible_schedule(P, lam_star, theta, U):
    """Back off lam_ext from the boundary optimum until the forward solve
    confirms feasibility; the optimum itself sits on a double root."""
    sched = schedule_from_recall(P, lam_star, theta, U)
    mu = np.array(sched.mu)
    for backoff in (0.0, 1e-12, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6):
        lam_ext = lam_star * (1 - backoff)
        sol = solve_flow_balance(mu, lam_ext, theta)
        if sol.feasible:
            return Schedule(len(P), float(lam_ext), sched.mu, theta, U), sol
    raise RuntimeError("optimizer returned a schedule the forward solver rejects")


def optimize_schedule(n: int, U: float, theta: float, n_starts: int = 10,
                      seed: int = 0) -> tuple[Schedule, FlowSolution]:
    """Schedule maximizing the sustainable arrival rate under budget U."""
    if n < 1:
        raise ValueError("need at least one deck")
    if U <= 0 or theta <= 0:
        raise ValueError("U and theta must be positive")
    a = theta / np.arange(1, n + 1)
    P, res = _best_recall_vector(n, theta, _neg_throughput, (U, a), n_starts, seed, U)
    lam_star = -float(res.fun)
    if lam_star <= 0:
        raise InfeasibleError(f"budget U={U} cannot sustain any learning at theta={theta}")
    return _feasible_schedule(P, lam_star, theta, U)


def min_budget(n: int, theta: float, lambda_ext: float, n_starts: int = 10,
               seed: int = 0) -> float:
    """Smallest budget that sustains arrival rate ``lambda_ext`` with n decks."""
    if lambda_ext <= 0:
        return 0.0
    a = theta / np.arange(1, n + 1)
    # starts are shaped at a budget that surely sustains lambda_ext
    U_start = lambda_ext * (n + 1) * 4 + theta * n
    _, res = _best_recall_vector(n, theta, _budget_needed, (lambda_ext, a),
                                 n_starts, seed, U_start)
    return float(res.fun)


@dataclass
class MultiPlan:
    schedules: list[Schedule]
    solutions: list[FlowSolution]
    budgets: list[float]
    objective: str
    weights: list[float] = field(default_factory=list)

    @property
    def total_rate(self) -> float:
        return sum(s.lambda_ext for s in self.schedules)

    def to_dict(self) -> dict:
        return {
            "objective": self.objective,
            "weights": self.weights,
            "budgets": self.budgets,
            "total_rate": self.total_rate,
            "bins": [
                {"schedule": s.to_dict(), "flow": f.to_dict()}
                for s, f in zip(self.schedules, self.solutions)
            ],
        }


def _golden_max(f, lo, hi, tol):
    """Golden-section maximization on [lo, hi]; endpoints are also compared
    so a monotone or convex objective still returns its best corner."""
    g = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - g * (b - a), a + g * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - g * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + g * (b - a)
            fd = f(d)
    cands = [(fc, c), (fd, d), (f(lo), lo), (f(hi), hi)]
    return max(cands)[1]


def optimize_multi_difficulty(n: int, U: float, thetas: Sequence[float],
                              objective: str = "mix", mix: Sequence[float] | None = None,
                              weights: Sequence[float] | None = None, seed: int = 0,
                              n_starts: int = 10) -> MultiPlan:
    """Jointly plan b parallel networks, one per difficulty bin, sharing U.

    ``objective="mix"`` (default): new items arrive in fixed proportions
    ``mix`` across bins (uniform when omitted) and the total arrival rate is
    maximized. ``objective="sum"``: maximize ``sum(weights * lam_b)`` over
    free per-bin budgets by coordinate ascent on pairwise budget transfers.
    The sum objective tends to hand the whole budget to the easiest bin,
    since the best rate is convex in the budget.
    """
    thetas = [float(t) for t in thetas]
    if not thetas:
        raise ValueError("need at least one difficulty bin")
    if any(t <= 0 for t in thetas):
        raise ValueError("difficulties must be positive")
    if U <= 0:
        raise ValueError("U must be positive")
    b = len(thetas)

    if b == 1:
        s, f = optimize_schedule(n, U, thetas[0], n_starts=n_starts, seed=seed)
        return MultiPlan([s], [f], [U], objective, [1.0])

    def best_rate(u, th):
        if u <= 0:
            return 0.0
        try:
            return optimize_schedule(n, u, th, n_starts=n_starts, seed=seed)[0].lambda_ext
        except InfeasibleError:
            return 0.0

    if objective == "mix":
        pi = np.full(b, 1.0 / b) if mix is None else np.asarray(mix, dtype=float)
        if len(pi) != b or np.any(pi <= 0):
            raise ValueError("mix needs one positive share per bin")
        pi = pi / pi.sum()

        def need(total):
            return sum(min_budget(n, th, p * total, n_starts=n_starts, seed=seed)
                       for th, p in zip(thetas, pi))

        lo, hi = 0.0, U / (n + 1)
        while hi - lo > 1e-9 * U:
            mid = 0.5 * (lo + hi)
            if need(mid) <= U:
                lo = mid
            else:
                hi = mid
        budgets = [min_budget(n, th, p * lo, n_starts=n_starts, seed=seed)
                   for th, p in zip(thetas, pi)]
        # distribute rounding slack proportionally so budgets sum to U
        budgets = [u * U / sum(budgets) for u in budgets]
        used_weights = pi.tolist()
    elif objective == "sum":
        w = np.ones(b) if weights is None else np.asarray(weights, dtype=float)
        if len(w) != b:
            raise ValueError("need one weight per bin")
        budgets = [U / b] * b
        used_weights = w.tolist()

        def total(bud):
            return sum(wi * best_rate(u, th) for wi, u, th in zip(w, bud, thetas))

        current = total(budgets)
        for _ in range(20):
            improved = False
            for i in range(b):
                j = (i + 1) % b
                pool = budgets[i] + budgets[j]

                def pair(x, i=i, j=j, pool=pool):
                    trial = list(budgets)
                    trial[i], trial[j] = x, pool - x
                    return total(trial)

                x = _golden_max(pair, 0.0, pool, 1e-6 * U)
                val = pair(x)
                if val > current + 1e-12 * U:
                    budgets[i], budgets[j] = x, pool - x
                    current = val
                    improved = True
            if not improved:
                break
    else:
        raise ValueError(f"unknown objective {objective!r}")

    schedules, solutions = [], []
    for u, th in zip(budgets, thetas):
        if u <= 1e-12 * U:
            mu = np.zeros(n)
            schedules.append(Schedule(n, 0.0, tuple(mu.tolist()), th, max(u, 1e-300)))
            solutions.append(FlowSolution(np.zeros(n), np.zeros(n), mu, 0.0, False, math.inf))
            continue
        s, f = optimize_schedule(n, u, th, n_starts=n_starts, seed=seed)
        schedules.append(s)
        solutions.append(f)
    return MultiPlan(schedules, solutions, [float(u) for u in budgets], objective, used_weights)


def sensitivity_curves(n: int, *, U: float | None = None, theta: float | None = None,
                       U_grid: Sequence[float] | None = None,
                       theta_grid: Sequence[float] | None = None,
                       seed: int = 0) -> list[dict]:
    """Best arrival rate across a grid of difficulties or of budgets.

    Exactly one grid is given; the other parameter is held fixed.
    """
    if (U_grid is None) == (theta_grid is None):
        raise ValueError("give exactly one of U_grid or theta_grid")
    rows = []
    if theta_grid is not None:
        if U is None:
            raise ValueError("U is required with theta_grid")
        grid, param = list(theta_grid), "theta"
    else:
        if theta is None:
            raise ValueError("theta is required with U_grid")
        grid, param = list(U_grid), "U"
    if any(x <= 0 for x in grid) or grid != sorted(grid):
        raise ValueError("grid must be positive and sorted")
    for x in grid:
        if param == "theta":
            s, _ = optimize_schedule(n, U, x, seed=seed)
        else:
            s, _ = optimize_schedule(n, x, theta, seed=seed)
        rows.append({"param": param, "value": x, "lambda_star": s.lambda_ext, "mu": list(s.mu)})
    return rows
