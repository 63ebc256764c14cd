"""Command-line front end.

Every command that writes ``--out FILE`` also writes ``FILE.manifest.json``
with the argv, resolved configuration, seed and tool version. Outputs carry
no wall-clock data, so re-running a manifest (``leitnerq replay``) gives
byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__, planner
from .evaluation import L2_GRID, evaluate_models, make_fold_plan
from .logs import (LogFormatError, build_histories, filter_min_interactions, histories_from_json,
                   histories_to_json, parse_logs, summarize)
from .models import FeatureTable, UnknownModelError, fit_model, resolve_models
from .sim import ConfigError, SimConfig, simulate, sweep_arrival_rates

log = logging.getLogger("leitnerq")

BUNDLED = ("fig3.json", "fig4.json", "fig5-7.json", "fig8.json", "fig9.json", "fig10.json")


class CliError(Exception):
    pass


# --- helpers ---------------------------------------------------------------

def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _read_config(name: str) -> dict:
    """A JSON config from disk, or a bundled one by bare name."""
    p = Path(name)
    if p.exists():
        return json.loads(p.read_text())
    if name in BUNDLED or name + ".json" in BUNDLED:
        fname = name if name.endswith(".json") else name + ".json"
        return json.loads(resources.files("leitnerq.configs").joinpath(fname).read_text())
    raise CliError(f"config not found: {name} (bundled: {', '.join(BUNDLED)})")


def _seed(args, config: dict | None = None) -> int:
    if getattr(args, "seed", None) is not None:
        return int(args.seed)
    env = os.environ.get("LQN_SEED")
    if env:
        try:
            return int(env)
        except ValueError:
            raise CliError(f"LQN_SEED must be an integer, got {env!r}") from None
    if config and config.get("seed") is not None:
        return int(config["seed"])
    return 0


def _dump_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"


def _write(path: str | None, text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _manifest(args, command: str, config: dict, seed: int | None, extra_outputs=()) -> None:
    if args.out is None or args.out == "-":
        return
    manifest = {
        "tool": "leitnerq",
        "version": __version__,
        "command": command,
        "argv": list(args._argv),
        "config": config,
        "seed": seed,
        "outputs": [args.out, *extra_outputs],
    }
    _write(args.out + ".manifest.json", _dump_json(manifest))


def _fmt(args, default: str) -> str:
    if args.format:
        return args.format
    if args.out and args.out.endswith(".csv"):
        return "csv"
    if args.out and args.out.endswith(".json"):
        return "json"
    return default


# --- commands --------------------------------------------------------------

def cmd_ingest(args) -> int:
    with open(args.logs, "rb") as fh:
        logset = parse_logs(fh, args.dialect, args.time_unit)
    if args.min_interactions:
        logset = filter_min_interactions(logset, args.min_interactions)
    histories = build_histories(logset)
    summary = summarize(logset)
    summary["pairs"] = len(histories)
    print(json.dumps(summary, sort_keys=True))
    if args.out:
        _write(args.out, histories_to_json(histories, logset.time_unit) + "\n")
    config = {"logs": args.logs, "dialect": logset.dialect.value, "time_unit": logset.time_unit.value,
              "min_interactions": args.min_interactions}
    _manifest(args, "ingest", config, None)
    return 0


def _load_histories(path: str):
    with open(path) as fh:
        text = fh.read()
    data = json.loads(text)
    unit = data.get("time_unit") if isinstance(data, dict) else None
    return histories_from_json(text), unit


def _model_list(text: str):
    idents = [x.strip() for x in text.split(",") if x.strip()]
    return resolve_models(int(x) if x.isdigit() else x for x in idents)


def cmd_fit(args) -> int:
    histories, unit = _load_histories(args.histories)
    specs = _model_list(args.models)
    table = FeatureTable.from_histories(histories)
    fitted = [fit_model(s, table, l2=args.l2, time_unit=unit).to_dict() for s in specs]
    for m in fitted:
        theta = m["parameters"].get("theta")
        print(f"{m['name']}: fitted" + ("" if theta is None else f", theta={theta:.6g}"), file=sys.stderr)
    _write(args.out, _dump_json({"models": fitted}))
    config = {"histories": args.histories, "models": [s.name for s in specs], "l2": args.l2}
    _manifest(args, "fit", config, None)
    return 0


def cmd_eval(args) -> int:
    histories, unit = _load_histories(args.histories)
    specs = _model_list(args.models)
    seed = _seed(args)
    plan = make_fold_plan(histories, args.folds, args.test_frac, args.trunc_frac, seed)
    grid = tuple(args.l2_grid) if args.l2_grid else L2_GRID
    report = evaluate_models(histories, specs, plan, grid, time_unit=unit)
    for name in report.models:
        print(f"{name:24s} val AUC {report.mean_val_auc(name):.4f} +- {report.stderr_val_auc(name):.4f}"
              f"  test AUC {report.test_auc.get(name)}", file=sys.stderr)
    if _fmt(args, "json") == "csv":
        _write(args.out, report.to_csv())
    else:
        _write(args.out, _dump_json(report.to_dict()))
    config = {"histories": args.histories, "models": [s.name for s in specs], "folds": args.folds,
              "test_frac": args.test_frac, "trunc_frac": args.trunc_frac, "l2_grid": list(grid)}
    _manifest(args, "eval", config, seed)
    return 0


def _sim_config(args) -> tuple[SimConfig, dict]:
    raw = _read_config(args.config)
    extras = {k: raw.pop(k) for k in ("rates", "trials", "seed", "description") if k in raw}
    raw.setdefault("lambda_ext", 0.0)
    try:
        cfg = SimConfig.from_dict(raw)
    except TypeError as e:
        raise CliError(f"bad simulation config: {e}") from None
    if getattr(args, "delay_mode", None):
        cfg = replace(cfg, delay_mode=args.delay_mode)
    return cfg, extras


def cmd_simulate(args) -> int:
    cfg, extras = _sim_config(args)
    if args.lambda_ext is not None:
        cfg = replace(cfg, lambda_ext=args.lambda_ext)
    elif args.rates:
        if len(args.rates) != 1:
            raise CliError("simulate takes a single rate; use sweep for several")
        cfg = replace(cfg, lambda_ext=args.rates[0])
    cfg = replace(cfg, record_trace=True)
    seed = _seed(args, extras)
    result = simulate(cfg, seed)
    summary = result.summary()
    print(json.dumps(summary, sort_keys=True))
    if _fmt(args, "csv") == "csv":
        _write(args.out, result.trace_csv())
    else:
        _write(args.out, _dump_json(summary))
    _manifest(args, "simulate", cfg.to_dict(), seed)
    return 0


def cmd_sweep(args) -> int:
    cfg, extras = _sim_config(args)
    rates = args.rates if args.rates is not None else extras.get("rates")
    if not rates:
        raise CliError("no arrival rates given (--rates or 'rates' in the config)")
    trials = args.trials if args.trials is not None else int(extras.get("trials", 1))
    seed = _seed(args, extras)
    result = sweep_arrival_rates(cfg, rates, trials, seed, workers=args.workers)
    for s in result.skipped:
        print(f"skipped lambda_ext={s['lambda_ext']}: {s['reason']}", file=sys.stderr)
    extra_out = []
    if _fmt(args, "csv") == "csv":
        _write(args.out, result.to_csv())
        if args.out and args.out != "-":
            occ = str(Path(args.out).with_suffix("")) + ".occupancy.csv"
            _write(occ, result.occupancy_csv())
            extra_out.append(occ)
    else:
        _write(args.out, _dump_json(result.to_dict()))
    config = {**cfg.to_dict(), "rates": list(rates), "trials": trials, "skipped": result.skipped}
    _manifest(args, "sweep", config, seed, extra_out)
    return 0


def _schedule_table(sol: planner.FlowSolution) -> str:
    lines = [f"{'deck':>4} {'mu_k':>12} {'lambda_k':>12} {'P_k':>8} {'delay':>12} {'queue':>10}"]
    delay, queue = sol.expected_delay, sol.expected_queue
    for k in range(len(sol.mu)):
        lines.append(f"{k + 1:>4} {sol.mu[k]:>12.6g} {sol.lam[k]:>12.6g} {sol.P[k]:>8.4f}"
                     f" {delay[k]:>12.6g} {queue[k]:>10.4g}")
    return "\n".join(lines)


def _plan_params(args) -> dict:
    cfg = _read_config(args.config) if args.config else {}
    cfg.pop("description", None)
    for key, attr in (("decks", "decks"), ("budget", "budget"), ("theta", "theta"),
                      ("thetas", "thetas"), ("lambda_ext", "lambda_ext"), ("mu", "mu"),
                      ("mu_rule", "mu_rule"), ("objective", "objective"), ("mix", "mix"),
                      ("theta_grid", "theta_grid"), ("budget_grid", "budget_grid"),
                      ("n_starts", "n_starts")):
        v = getattr(args, attr, None)
        if v is not None:
            cfg[key] = v
    return cfg


def cmd_plan(args) -> int:
    p = _plan_params(args)
    seed = _seed(args, p)
    p["seed"] = seed
    n = p.get("decks")
    if n is None:
        raise CliError("--decks is required")
    n_starts = int(p.get("n_starts", 10))

    if p.get("theta_grid") is not None or p.get("budget_grid") is not None:
        rows = planner.sensitivity_curves(n, U=p.get("budget"), theta=p.get("theta"),
                                          U_grid=p.get("budget_grid"), theta_grid=p.get("theta_grid"),
                                          seed=seed)
        if _fmt(args, "csv") == "csv":
            # first column is named after the swept parameter (theta or U)
            header = f"{rows[0]['param']},lambda_star," + ",".join(f"mu_{k}" for k in range(1, n + 1))
            body = [",".join([repr(r["value"]), repr(r["lambda_star"])] + [repr(m) for m in r["mu"]])
                    for r in rows]
            _write(args.out, "\n".join([header] + body) + "\n")
        else:
            _write(args.out, _dump_json({"rows": rows}))
        for r in rows:
            print(f"{r['param']}={r['value']:<8g} lambda*={r['lambda_star']:.6g}", file=sys.stderr)
        _manifest(args, "plan", p, seed)
        return 0

    for key in ("budget", "theta"):
        if p.get(key) is None:
            raise CliError(f"--{key} is required")
    U, theta = float(p["budget"]), float(p["theta"])
    if p.get("lambda_ext") is not None:
        lam = float(p["lambda_ext"])
        if p.get("mu") is not None:
            mu = np.asarray(p["mu"], dtype=float)
        elif p.get("mu_rule") == "inverse_sqrt":
            mu = planner.tight_rates(planner.inverse_sqrt_weights(n), U, lam)
        else:
            raise CliError("evaluating a schedule needs --mu or --mu-rule")
        if len(mu) != n:
            raise CliError(f"expected {n} review rates, got {len(mu)}")
        schedule = planner.Schedule(n, lam, tuple(mu.tolist()), theta, U)
        sol = planner.solve_flow_balance(mu, lam, theta)
    else:
        schedule, sol = planner.optimize_schedule(n, U, theta, n_starts=n_starts, seed=seed)
    payload = {"schedule": schedule.to_dict(), "flow": sol.to_dict(),
               "threshold": planner.max_feasible_arrival(np.asarray(schedule.mu), theta, budget=U)}
    _write(args.out, _dump_json(payload))
    if not sol.feasible:
        print(f"infeasible: deck {sol.starved_deck} is starved (lambda_k >= mu_k) at "
              f"lambda_ext={schedule.lambda_ext:g}; sustainable threshold for this shape is "
              f"{payload['threshold']:.6g}", file=sys.stderr)
        _manifest(args, "plan", p, seed)
        return 1
    print(f"lambda_ext = {schedule.lambda_ext:.6g}  budget used = {schedule.budget_used:.6g} / {U:g}",
          file=sys.stderr)
    print(_schedule_table(sol), file=sys.stderr)
    _manifest(args, "plan", p, seed)
    return 0


def cmd_plan_multi(args) -> int:
    p = _plan_params(args)
    seed = _seed(args, p)
    p["seed"] = seed
    for key in ("decks", "budget", "thetas"):
        if p.get(key) is None:
            raise CliError(f"--{key} is required")
    plan = planner.optimize_multi_difficulty(int(p["decks"]), float(p["budget"]), p["thetas"],
                                             objective=p.get("objective", "mix"), mix=p.get("mix"),
                                             seed=seed, n_starts=int(p.get("n_starts", 10)))
    _write(args.out, _dump_json(plan.to_dict()))
    for th, u, s, f in zip(p["thetas"], plan.budgets, plan.schedules, plan.solutions):
        print(f"theta={th:g} budget={u:.6g} lambda_ext={s.lambda_ext:.6g}", file=sys.stderr)
        if f.feasible:
            print(_schedule_table(f), file=sys.stderr)
    _manifest(args, "plan-multi", p, seed)
    return 0


def cmd_replay(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text())
    argv = list(manifest["argv"])
    if args.out:
        i = argv.index("--out")
        argv[i + 1] = args.out
    return main(argv)


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="leitnerq", description="Spaced-repetition queue models.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, fmt=True):
        p.add_argument("--out", default=None, help="output file (stdout when omitted)")
        if fmt:
            p.add_argument("--format", choices=("csv", "json"), default=None)

    p = sub.add_parser("ingest", help="parse review logs into per user-item histories")
    p.add_argument("--logs", required=True)
    p.add_argument("--dialect", default="mnemosyne", choices=("mnemosyne", "self", "self_assessment", "mturk"))
    p.add_argument("--time-unit", default="days", choices=("days", "seconds"))
    p.add_argument("--min-interactions", type=int, default=0)
    common(p, fmt=False)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("fit", help="fit recall models on all histories")
    p.add_argument("--histories", required=True)
    p.add_argument("--models", required=True, help="comma-separated names or row numbers 1-14")
    p.add_argument("--l2", type=float, default=1.0)
    common(p, fmt=False)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="cross-validate recall models")
    p.add_argument("--histories", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--trunc-frac", type=float, default=0.1)
    p.add_argument("--l2-grid", type=_floats, default=None)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_eval)

    for name, func, helptext in (("simulate", cmd_simulate, "run one simulated session"),
                                 ("sweep", cmd_sweep, "mean learning rate across arrival rates")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", required=True, help=f"JSON file or bundled name ({', '.join(BUNDLED)})")
        p.add_argument("--rates", type=_floats, default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--delay-mode", choices=("clocked", "mean_recall"), default=None)
        if name == "simulate":
            p.add_argument("--lambda-ext", type=float, default=None)
        else:
            p.add_argument("--trials", type=int, default=None)
            p.add_argument("--workers", type=int, default=1)
        common(p)
        p.set_defaults(func=func)

    p = sub.add_parser("plan", help="optimize or evaluate a static review schedule")
    p.add_argument("--config", default=None)
    p.add_argument("--decks", type=int, default=None)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--theta", type=float, default=None)
    p.add_argument("--lambda-ext", type=float, default=None, help="evaluate this arrival rate instead of optimizing")
    p.add_argument("--mu", type=_floats, default=None)
    p.add_argument("--mu-rule", choices=("inverse_sqrt",), default=None)
    p.add_argument("--theta-grid", type=_floats, default=None)
    p.add_argument("--budget-grid", type=_floats, default=None)
    p.add_argument("--n-starts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    common(p)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("plan-multi", help="share one budget across difficulty bins")
    p.add_argument("--config", default=None)
    p.add_argument("--decks", type=int, default=None)
    p.add_argument("--budget", type=float, default=None)
    p.add_argument("--thetas", type=_floats, default=None)
    p.add_argument("--objective", choices=("mix", "sum"), default=None)
    p.add_argument("--mix", type=_floats, default=None)
    p.add_argument("--n-starts", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    common(p, fmt=False)
    p.set_defaults(func=cmd_plan_multi)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", default=None, help="write to a different file")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    args._argv = argv
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
            return args.func(args)
    except (OSError, ValueError, CliError, LogFormatError, UnknownModelError, ConfigError,
            json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
