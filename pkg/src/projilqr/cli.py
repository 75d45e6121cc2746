"""Command-line front end.

    projilqr solve <config.yaml>
    projilqr bench <config.yaml> [--workers k]
    projilqr validate <problem> [--seed k]

Configs are flat YAML mappings; only ``problem`` is required. Output goes to
``output_dir`` from the config, overridden by the ``PROJILQR_OUTPUT_DIR``
environment variable. Exit codes: 0 success, 1 configuration error, 2 solver
stall/abort or failed check.
"""

import argparse
import csv
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import List, Optional

import numpy as np
import yaml

from projilqr.errors import ProjIlqrError
from projilqr.solver import SolverSettings, solve
from projilqr.systems import CATALOG, get_entry
from projilqr.validation import run_checks

logger = logging.getLogger("projilqr")

OUTPUT_ENV = "PROJILQR_OUTPUT_DIR"
EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2
DEFAULT_BENCH_DTS = (0.01, 0.005, 0.0025, 0.00125, 0.000625)
_SETTINGS_KEYS = {f.name for f in fields(SolverSettings)}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """One CLI run. ``horizon`` and ``dt`` default to the catalog entry's values."""

    problem: str
    horizon: Optional[float] = None
    dt: Optional[float] = None
    settings: SolverSettings = field(default_factory=SolverSettings)
    output_dir: str = "output"
    seed: Optional[int] = None
    params: dict = field(default_factory=dict)
    dt_list: Optional[List[float]] = None
    repetitions: int = 100
    workers: int = 1

    def steps_for(self, dt: float) -> int:
        horizon = self.horizon if self.horizon is not None else get_entry(self.problem).horizon
        return horizon_steps(horizon, dt)

    @property
    def resolved_dt(self) -> float:
        return self.dt if self.dt is not None else get_entry(self.problem).dt

    def build(self, dt=None):
        entry = get_entry(self.problem)
        dt = self.resolved_dt if dt is None else dt
        params = dict(self.params)
        if self.seed is not None and self.problem == "random_lq":
            params.setdefault("seed", self.seed)
        ocp = entry.build(N=self.steps_for(dt), dt=dt, **params)
        return ocp, entry.initial_policy(ocp)


def horizon_steps(horizon: float, dt: float) -> int:
    if not (isinstance(dt, (int, float)) and dt > 0 and math.isfinite(dt)):
        raise ConfigError(f"dt must be a positive number, got {dt!r}")
    if not (isinstance(horizon, (int, float)) and horizon > 0 and math.isfinite(horizon)):
        raise ConfigError(f"horizon must be a positive number, got {horizon!r}")
    ratio = horizon / dt
    N = int(round(ratio))
    if N < 1 or abs(ratio - N) > 1e-9 * max(1.0, ratio):
        raise ConfigError(f"horizon {horizon} is not a positive integer multiple of dt {dt}")
    return N


def load_config(path) -> RunConfig:
    """Parse and validate a YAML run config."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return config_from_mapping(raw)


def config_from_mapping(raw) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config must be a key-value mapping")
    raw = dict(raw)
    problem = raw.pop("problem", None)
    if not problem or not isinstance(problem, str):
        raise ConfigError("config needs a 'problem' name")
    if problem not in CATALOG:
        raise ConfigError(f"unknown problem {problem!r}; choose from {sorted(CATALOG)}")
    settings_raw = raw.pop("solver", {}) or {}
    if not isinstance(settings_raw, dict):
        raise ConfigError("'solver' must be a mapping")
    for key in list(raw):
        if key in _SETTINGS_KEYS:
            settings_raw[key] = raw.pop(key)
    unknown = set(settings_raw) - _SETTINGS_KEYS
    if unknown:
        raise ConfigError(f"unknown solver settings: {sorted(unknown)}")
    try:
        settings = SolverSettings(**settings_raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid solver settings: {exc}") from None
    allowed = {"horizon", "dt", "output_dir", "seed", "params", "dt_list", "repetitions", "workers"}
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg = RunConfig(problem=problem, settings=settings, **raw)
    if cfg.params is None:
        cfg.params = {}
    if not isinstance(cfg.params, dict):
        raise ConfigError("'params' must be a mapping")
    cfg.steps_for(cfg.resolved_dt)
    if cfg.dt_list is not None:
        if not isinstance(cfg.dt_list, list) or not cfg.dt_list:
            raise ConfigError("'dt_list' must be a non-empty list")
        for dt in cfg.dt_list:
            cfg.steps_for(dt)
    if not isinstance(cfg.repetitions, int) or cfg.repetitions < 1:
        raise ConfigError("'repetitions' must be a positive integer")
    if not isinstance(cfg.workers, int) or cfg.workers < 1:
        raise ConfigError("'workers' must be a positive integer")
    return cfg


def output_dir(cfg: RunConfig) -> Path:
    path = Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _fmt(v) -> str:
    return repr(float(v))


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_trajectory(path: Path, traj, dt: float) -> None:
    m, p = traj.states.shape[1], traj.inputs.shape[1]
    header = ["n", "t"] + [f"x{i}" for i in range(m)] + [f"u{j}" for j in range(p)]
    rows = []
    for n, x in enumerate(traj.states):
        u = traj.inputs[n] if n < traj.horizon else [""] * p
        rows.append([n, _fmt(n * dt)] + [_fmt(v) for v in x]
                    + [v if v == "" else _fmt(v) for v in u])
    write_csv(path, header, rows)


def read_trajectory(path):
    """Inverse of :func:`write_trajectory`: ``(states, inputs)`` arrays."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    xs = [i for i, h in enumerate(header) if h.startswith("x")]
    us = [i for i, h in enumerate(header) if h.startswith("u")]
    states = np.array([[float(r[i]) for i in xs] for r in body])
    inputs = np.array([[float(r[i]) for i in us] for r in body[:-1]])
    return states, inputs


def cmd_solve(config_path) -> int:
    try:
        cfg = load_config(config_path)
        ocp, policy = cfg.build()
    except (ConfigError, ValueError, TypeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = output_dir(cfg)
    start = time.perf_counter()
    try:
        res = solve(ocp, policy, cfg.settings)
    except ProjIlqrError as exc:
        print(f"solver aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    wall = time.perf_counter() - start

    write_trajectory(out / "trajectory.csv", res.trajectory, ocp.dt)
    write_csv(out / "iterations.csv", ["iteration", "merit", "cost", "ise", "alpha"],
              [[r.iteration, _fmt(r.merit), _fmt(r.cost), _fmt(r.ise), _fmt(r.alpha)]
               for r in res.reports])
    final = res.reports[-1]
    write_csv(out / "summary.csv",
              ["problem", "N", "dt", "converged", "status", "iterations", "wall_seconds", "cost",
               "ise", "merit", "sigma"],
              [[cfg.problem, ocp.horizon, _fmt(ocp.dt), int(res.converged), res.status,
                res.iterations, _fmt(wall), _fmt(final.cost), _fmt(final.ise), _fmt(final.merit),
                _fmt(res.sigma)]])
    print(f"{cfg.problem}: {res.status} after {res.iterations} iterations in {wall:.3f} s, "
          f"cost {final.cost:.6g}, ISE {final.ise:.3e}; results in {out}")
    return EXIT_OK if res.converged else EXIT_SOLVER


def _timed_solve(args):
    cfg, dt = args
    ocp, policy = cfg.build(dt)
    start = time.perf_counter()
    res = solve(ocp, policy, cfg.settings)
    return ocp.horizon, time.perf_counter() - start, res.converged


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r_squared: float


def linear_fit(N, seconds) -> Optional[LinearFit]:
    """Least-squares line through ``(N, seconds)``; ``None`` with fewer than two distinct N."""
    N = np.asarray(N, dtype=float)
    seconds = np.asarray(seconds, dtype=float)
    if np.unique(N).size < 2:
        return None
    slope, intercept = np.polyfit(N, seconds, 1)
    resid = seconds - (slope * N + intercept)
    total = np.sum((seconds - seconds.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / total if total > 0 else 1.0
    return LinearFit(float(slope), float(intercept), float(r2))


@dataclass
class BenchResult:
    rows: list
    fit: Optional[LinearFit]
    all_converged: bool

    @property
    def ratios(self):
        means = [r[1] for r in self.rows]
        return [b / a for a, b in zip(means, means[1:])]


def run_bench(cfg: RunConfig) -> BenchResult:
    """Mean and standard deviation of the solve time for each dt in ``cfg.dt_list``.

    Only :func:`solve` is timed. Each repetition sweeps every dt once, so slow
    drift in machine speed spreads over all N instead of skewing one of them.
    Repetitions are sequential unless ``cfg.workers > 1``.
    """
    if cfg.repetitions < 3:
        logger.warning("only %d repetitions; timing statistics will be noisy", cfg.repetitions)
    dts = cfg.dt_list or list(DEFAULT_BENCH_DTS)
    jobs = [(cfg, dt) for _ in range(cfg.repetitions) for dt in dts]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            runs = list(pool.map(_timed_solve, jobs))
    else:
        runs = [_timed_solve(job) for job in jobs]
    by_n = {}
    for N, seconds, ok in runs:
        by_n.setdefault(N, []).append((seconds, ok))
    rows = []
    for N in sorted(by_n):
        times = np.array([s for s, _ in by_n[N]])
        rows.append((N, float(times.mean()), float(times.std(ddof=1)) if times.size > 1 else 0.0))
    fit = linear_fit([r[0] for r in rows], [r[1] for r in rows])
    return BenchResult(rows, fit, all(ok for _, _, ok in runs))


def cmd_bench(config_path, workers=None) -> int:
    try:
        cfg = load_config(config_path)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if cfg.horizon is None:
        cfg.horizon = 3.0
    if workers is not None:
        cfg.workers = workers
    try:
        result = run_bench(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ProjIlqrError as exc:
        print(f"solver aborted: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    out = output_dir(cfg)
    write_csv(out / "bench.csv", ["N", "mean_seconds", "std_seconds"],
              [[N, _fmt(mu), _fmt(sd)] for N, mu, sd in result.rows])
    for N, mu, sd in result.rows:
        print(f"N={N:6d}  mean {mu:.4f} s  std {sd:.4f} s")
    if result.fit is None:
        print("single horizon length; linear fit skipped")
    else:
        f = result.fit
        print(f"fit: seconds = {f.slope:.3e} * N + {f.intercept:.3e}  (R^2 = {f.r_squared:.4f})")
        print("doubling ratios: " + ", ".join(f"{r:.2f}" for r in result.ratios))
    if not result.all_converged:
        print("warning: some runs did not converge", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def cmd_validate(problem, seed=None) -> int:
    if not problem or problem not in CATALOG:
        print(f"unknown problem {problem!r}; choose from {sorted(CATALOG)}", file=sys.stderr)
        return EXIT_CONFIG
    entry = get_entry(problem)
    params = {"seed": seed} if seed is not None and problem == "random_lq" else {}
    ocp = entry.build(**params)
    policy = entry.initial_policy(ocp)
    results = run_checks(ocp, policy, entry.linear_quadratic, ocp.metadata.get("u_ss"),
                         seed=seed or 0)
    width = max(len(r.name) for r in results)
    print(f"{'check':<{width}}  result  value      detail")
    for r in results:
        print(f"{r.name:<{width}}  {'PASS' if r.passed else 'FAIL':<6}  {r.value:<9.2e}  {r.detail}")
    return EXIT_OK if all(r.passed for r in results) else EXIT_SOLVER


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="projilqr",
                                     description="Equality-constrained iLQR by nullspace projection")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every iteration")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", help="solve a catalog problem from a config file")
    p.add_argument("config")
    p = sub.add_parser("bench", help="time solves over a sweep of dt at fixed horizon")
    p.add_argument("config")
    p.add_argument("--workers", type=int, default=None,
                   help="run repetitions in this many processes (default: sequential)")
    p = sub.add_parser("validate", help="run the self-checks on one catalog problem")
    p.add_argument("problem")
    p.add_argument("--seed", type=int, default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "solve":
        return cmd_solve(args.config)
    if args.command == "bench":
        return cmd_bench(args.config, args.workers)
    return cmd_validate(args.problem, args.seed)


if __name__ == "__main__":
    sys.exit(main())
