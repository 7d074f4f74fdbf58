"""Command-line harness: generate problems, run solvers, compare methods.

Configuration is a plain INI file (key = value, one section per module); every
tuning symbol has a named key and unknown keys are rejected.  Exit codes:
0 converged, 2 iteration limit, 3 numerical failure, 4 configuration error.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import sys
import time

from . import baseline, ipm_exact, ipm_inexact, saddle
from .exceptions import ConfigError, CoupledIPMError
from .kkt import default_start
from .problem import ProblemGenConfig, generate, load_problem, save_problem
from .report import SolveReport, write_trace

EXIT_OK = 0
EXIT_MAX_ITER = 2
EXIT_NUMERICAL = 3
EXIT_CONFIG = 4

_SCHEMA = {
    "meta": {"version": int},
    "gen": {
        "n_agents": int,
        "size_min": int,
        "size_max": int,
        "eq_min": int,
        "eq_max": int,
        "ineq_min": int,
        "ineq_max": int,
        "index_pool": int,
        "seed": int,
    },
    "run": {"method": str, "seed": int, "trace": str, "threads": int},
    "exact": {
        "sigma": float,
        "beta": float,
        "gamma_ls": float,
        "eps": float,
        "eps_feas": float,
        "rho": float,
        "alpha_or": float,
        "eps_pri": float,
        "eps_dual": float,
        "max_outer": int,
        "max_inner": int,
        "warm_start": bool,
    },
    "inexact": {
        "eta_max": float,
        "gamma0": float,
        "beta": float,
        "theta": float,
        "eps_sigma": float,
        "rho": float,
        "alpha_or": float,
        "eps": float,
        "eps_feas": float,
        "max_outer": int,
        "max_inner": int,
        "warm_start": bool,
        "termination": str,
    },
    "baseline": {
        "rho": float,
        "alpha_or": float,
        "eps": float,
        "eps_feas": float,
        "max_iter": int,
        "local_tol": float,
        "local_max_iter": int,
    },
}

_METHODS = ("exact", "inexact", "baseline")


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def read_config(path: str | None) -> dict:
    """Parse and validate the INI config into {section: {key: value}}."""
    out: dict = {name: {} for name in _SCHEMA}
    if path is None:
        return out
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key, text in parser.items(section):
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key '{key}' in section [{section}]")
            kind = _SCHEMA[section][key]
            try:
                out[section][key] = _parse_bool(text) if kind is bool else kind(text)
            except ValueError as exc:
                raise ConfigError(f"bad value for {section}.{key}: {text!r}") from exc
    version = out["meta"].get("version", 1)
    if version != 1:
        raise ConfigError(f"unsupported config version {version}")
    return out


def _gen_config(cfg: dict, seed_override: int | None) -> ProblemGenConfig:
    kwargs = dict(cfg["gen"])
    if seed_override is not None:
        kwargs["seed"] = seed_override
    return ProblemGenConfig(**kwargs)


def _solver_params(cfg: dict, method: str, threads: int):
    if method == "exact":
        return ipm_exact.ExactParams(threads=threads, **cfg["exact"])
    if method == "inexact":
        return ipm_inexact.InexactParams(threads=threads, **cfg["inexact"])
    if method == "baseline":
        return baseline.BaselineParams(threads=threads, **cfg["baseline"])
    raise ConfigError(f"unknown method {method!r} (expected one of {_METHODS})")


def _run_method(problem, method: str, cfg: dict, seed: int, threads: int,
                inner_rows: list | None = None) -> SolveReport:
    init = default_start(problem, seed)
    params = _solver_params(cfg, method, threads)
    if method == "baseline":
        return baseline.solve(problem, init, params)
    solver = ipm_exact if method == "exact" else ipm_inexact
    inner_cb = None
    if inner_rows is not None:
        counter = {"l": 0, "last_k": None}

        def inner_cb(state):
            if counter["last_k"] is None or state.k <= counter["last_k"]:
                counter["l"] += 1
            counter["last_k"] = state.k
            for i, sub in enumerate(problem.agents):
                d_dx = state.dx[sub.J] - state.dx_prev[sub.J]
                inner_rows.append((method, counter["l"], state.k, i, float(d_dx @ d_dx)))

    return solver.solve(problem, init, params, inner_cb=inner_cb)


def _exit_code(report: SolveReport) -> int:
    if report.converged:
        return EXIT_OK
    if report.termination == "max_outer":
        return EXIT_MAX_ITER
    return EXIT_NUMERICAL


def cmd_gen(args) -> int:
    cfg = read_config(args.config)
    gen_cfg = _gen_config(cfg, args.seed)
    problem = generate(gen_cfg)
    out = args.out or "problem.npz"
    save_problem(out, problem)
    print(
        f"wrote {out}: n={problem.n} agents={problem.n_agents} "
        f"ineq={problem.total_ineq} eq={problem.total_eq} "
        f"consistency={problem.total_local_dim}"
    )
    return EXIT_OK


def cmd_solve(args) -> int:
    cfg = read_config(args.config)
    problem = load_problem(args.problem)
    method = cfg["run"].get("method", "exact")
    if method not in _METHODS:
        raise ConfigError(f"unknown method {method!r}")
    seed = args.seed if args.seed is not None else cfg["run"].get("seed", 0)
    threads = args.threads if args.threads is not None else cfg["run"].get("threads", 1)
    inner_rows = [] if cfg["run"].get("trace", "outer") == "inner" else None
    report = _run_method(problem, method, cfg, seed, threads, inner_rows)
    out = args.out or "trace.csv"
    with open(out, "w", newline="") as fh:
        write_trace(fh, report)
    if inner_rows is not None:
        with open(_with_suffix(out, "_inner"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["method", "l", "k", "agent", "dx_step_sq"])
            writer.writerows(
                (m, l, k, a, repr(vsq)) for (m, l, k, a, vsq) in inner_rows
            )
    if report.extras.get("forcing"):
        with open(_with_suffix(out, "_forcing"), "w", newline="") as fh:
            writer = csv.writer(fh)
            keys = ["l", "sigma", "eta_hat", "eta_bar", "eta_star", "eps_pri_max", "eps_dual_max"]
            writer.writerow(keys)
            for row in report.extras["forcing"]:
                writer.writerow([row["l"]] + [repr(float(row[k])) for k in keys[1:]])
    print(
        f"{method}: {report.termination} after {report.outer_iters} outer / "
        f"{report.total_inner} inner iterations; objective {report.final_objective()!r}"
    )
    return _exit_code(report)


def _with_suffix(path: str, tag: str) -> str:
    if path.endswith(".csv"):
        return path[: -len(".csv")] + tag + ".csv"
    return path + tag + ".csv"


def cmd_compare(args) -> int:
    cfg = read_config(args.config)
    problem = load_problem(args.problem)
    seed = args.seed if args.seed is not None else cfg["run"].get("seed", 0)
    threads = args.threads if args.threads is not None else cfg["run"].get("threads", 1)
    _, p_star = saddle.reference_optimum(problem)
    rows = []
    worst = EXIT_OK
    for method in _METHODS:
        start = time.perf_counter()
        report = _run_method(problem, method, cfg, seed, threads)
        wall = time.perf_counter() - start
        rel_err = abs(report.final_objective() - p_star) / max(1.0, abs(p_star))
        rows.append((method, report.outer_iters, report.total_inner, rel_err, wall))
        worst = max(worst, _exit_code(report))
        print(
            f"{method:>13}: outer={report.outer_iters:4d} inner={report.total_inner:7d} "
            f"rel_err={rel_err:.3e} wall={wall:.2f}s [{report.termination}]"
        )
    out = args.out or "compare.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "outer_iters", "total_inner", "rel_obj_error", "wall_time_s"])
        for method, outer, inner, rel, wall in rows:
            writer.writerow([method, outer, inner, repr(rel), repr(wall)])
    return worst


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coupled-ipm")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn, needs_problem in [
        ("gen", cmd_gen, False),
        ("solve", cmd_solve, True),
        ("compare", cmd_compare, True),
    ]:
        p = sub.add_parser(name)
        if needs_problem:
            p.add_argument("problem", help="problem container (.npz)")
        p.add_argument("--config", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--threads", type=int, default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TypeError, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CoupledIPMError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
