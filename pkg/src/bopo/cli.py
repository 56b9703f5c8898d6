"""Batch front end: ``bopo solve | continue | verify | kernel-table``.

Configuration files are flat ``key = value`` lines with dotted section keys::

    # ground state at eps = 1
    problem.p = 4
    problem.epsilon = 1
    solver.grad_tol = 1e-6
    grid.n = 2048

Exit codes: 0 success, 1 configuration error, 2 non-convergence,
3 continuation bound violated, 4 verification failure.
The environment variable ``BOPO_OUT`` overrides ``output.dir``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field, fields
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .functionals import EnergyBreakdown, ProblemParams
from .grid import BoxGrid, RadialGrid, read_field, write_field
from .kernel import KernelParams, sample
from .potential import kernel_potential
from .solver import (
    ContinuationTrace,
    GroundState,
    SolverConfig,
    TraceEntry,
    continue_to_zero_mass,
    default_init,
    solve_fixed_eps,
)

log = logging.getLogger("bopo")

EXIT_OK, EXIT_CONFIG, EXIT_NONCONVERGED, EXIT_BOUND, EXIT_VERIFY = 0, 1, 2, 3, 4


class ConfigError(ValueError):
    pass


def _bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _schedule(text):
    text = text.strip()
    if text == "halving":
        return "halving"
    return [float(x) for x in text.split(",") if x.strip()]


_SCHEMA = {
    "problem.a": float,
    "problem.q": float,
    "problem.p": float,
    "problem.epsilon": float,
    "grid.n": int,
    "grid.r_max": float,
    "grid.L": float,
    "grid.cluster": float,
    "grid.width": float,
    "init.amplitude": float,
    "init.width": float,
    "continue.schedule": _schedule,
    "continue.k_max": int,
    "output.dir": str,
    "seed": int,
}
_SOLVER_TYPES = {f.name: f.type for f in fields(SolverConfig)}
for _name in _SOLVER_TYPES:
    _SCHEMA[f"solver.{_name}"] = {"int": int, "float": float, "bool": _bool, "str": str}[_SOLVER_TYPES[_name]]

_DEFAULTS = {
    "problem.a": 1.0,
    "problem.q": 1.0,
    "problem.p": 4.0,
    "problem.epsilon": 1.0,
    "grid.n": 2048,
    "grid.L": 8.0,
    "grid.cluster": 0.9,
    "grid.width": 0.05,
    "init.amplitude": 1.0,
    "init.width": 1.0,
    "continue.schedule": "halving",
    "continue.k_max": 10,
    "output.dir": "bopo_out",
    "seed": 0,
}


@dataclass
class RunConfig:
    problem: ProblemParams
    solver: SolverConfig
    grid: dict
    init: dict
    schedule: list
    output_dir: Path
    seed: int
    raw: dict = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        # output location does not change results, so it is left out
        canon = {k: v for k, v in self.raw.items() if k != "output.dir"}
        return hashlib.sha256(json.dumps(canon, sort_keys=True).encode()).hexdigest()[:16]

    def make_grid(self):
        g = self.grid
        if self.solver.mode == "box":
            return BoxGrid(g["n"], g["L"])
        return RadialGrid(g["n"], g.get("r_max"), a=self.problem.a, cluster=g["cluster"], width=g["width"])


def parse_config_text(text: str, source: str = "<config>") -> RunConfig:
    values = dict(_DEFAULTS)
    where = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, val = (s.strip() for s in stripped.split("=", 1))
        if key not in _SCHEMA:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in where:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r} (first set on line {where[key]})")
        try:
            values[key] = _SCHEMA[key](val)
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key}: {exc}") from None
        where[key] = lineno

    def fail(key, msg):
        loc = f"{source}:{where[key]}" if key in where else source
        raise ConfigError(f"{loc}: {msg}")

    try:
        kernel = KernelParams(values["problem.a"], values["problem.q"])
    except ValueError as exc:
        fail("problem.a" if "a must" in str(exc) else "problem.q", str(exc))
    try:
        problem = ProblemParams(kernel, values["problem.p"], values["problem.epsilon"])
    except ValueError as exc:
        fail("problem.p" if "p must" in str(exc) else "problem.epsilon", str(exc))
    solver_kwargs = {k.split(".", 1)[1]: v for k, v in values.items() if k.startswith("solver.")}
    try:
        solver = SolverConfig(**solver_kwargs)
    except ValueError as exc:
        key = next((k for k in where if k.startswith("solver.") and k.split(".", 1)[1] in str(exc)), "solver")
        fail(key, str(exc))
    sched = values["continue.schedule"]
    if sched == "halving":
        sched = [2.0**-k for k in range(values["continue.k_max"] + 1)]
    if not sched or any(e <= 0 for e in sched) or any(b >= a for a, b in zip(sched, sched[1:])):
        fail("continue.schedule", "schedule must be nonempty, positive and strictly decreasing")
    grid = {k.split(".", 1)[1]: values[k] for k in values if k.startswith("grid.")}
    if grid["n"] < 16 or grid["n"] % 2:
        fail("grid.n", "grid.n must be an even integer >= 16")
    out = Path(os.environ.get("BOPO_OUT") or values["output.dir"])
    raw = {k: (list(v) if isinstance(v, list) else v) for k, v in values.items()}
    init = {"amplitude": values["init.amplitude"], "width": values["init.width"]}
    return RunConfig(problem, solver, grid, init, list(sched), out, values["seed"], raw)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read config: {exc.strerror or exc}") from None
    return parse_config_text(text, str(path))


# ---------------------------------------------------------------------------
# output helpers


def _atomic_write(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1) + "\n"


def _stamp(cfg: RunConfig) -> dict:
    return {"config_hash": cfg.config_hash, "seed": cfg.seed}


def _write_metadata(out: Path, cfg: RunConfig, command: str, started: float, extra=None):
    meta = {
        "command": command,
        "started_utc": datetime.fromtimestamp(started, timezone.utc).isoformat(),
        "finished_utc": datetime.now(timezone.utc).isoformat(),
        "wall_seconds": time.time() - started,
        "python": platform.python_version(),
        "numpy": np.__version__,
        **_stamp(cfg),
    }
    if extra:
        meta.update(extra)
    _atomic_write(out / "metadata.json", _dump(meta))


def _plot_rows(state: GroundState, cfg: RunConfig):
    u = state.u
    phi = kernel_potential(u.square(), cfg.problem.kernel, "K")
    if isinstance(u.grid, RadialGrid):
        r, uu, pp = u.grid.r, u.values, phi
    else:
        c = u.grid.n // 2
        sel = slice(c, None)
        r, uu, pp = u.grid.x[sel], u.values[sel, c, c], phi[sel, c, c]
    lines = ["r,u,phi"] + [f"{a!r},{b!r},{d!r}" for a, b, d in zip(r.tolist(), uu.tolist(), pp.tolist())]
    return "\n".join(lines) + "\n"


def _write_state(out: Path, state: GroundState, cfg: RunConfig, prefix: str = ""):
    rec = state.record()
    rec.update(_stamp(cfg))
    rec["grid"] = state.u.grid.describe()
    rec["problem"] = {"a": cfg.problem.a, "q": cfg.problem.q, "p": cfg.problem.p, "epsilon": state.epsilon}
    _atomic_write(out / f"{prefix}ground_state.json", _dump(rec))
    ext = "csv" if isinstance(state.u.grid, RadialGrid) else "bin"
    write_field(state.u, out / f"{prefix}u.{ext}", _stamp(cfg))
    _atomic_write(out / f"{prefix}plot.csv", f"# config_hash={cfg.config_hash} seed={cfg.seed}\n" + _plot_rows(state, cfg))


def _init_field(cfg: RunConfig, grid):
    return default_init(grid, cfg.init["amplitude"], cfg.init["width"])


# ---------------------------------------------------------------------------
# commands


def cmd_solve(cfg: RunConfig) -> int:
    started = time.time()
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.make_grid()
    state = solve_fixed_eps(_init_field(cfg, grid), cfg.problem, cfg.solver)
    _write_state(out, state, cfg)
    _write_metadata(out, cfg, "solve", started, {"iterations": state.iterations})
    log.info("solve: %s after %d iterations, I_eps=%r", state.message, state.iterations, state.breakdown.I_eps)
    return EXIT_OK if state.converged else EXIT_NONCONVERGED


def _trace_csv(trace: ContinuationTrace, cfg: RunConfig) -> str:
    return f"# config_hash={cfg.config_hash} seed={cfg.seed}\n" + trace.to_csv()


def _save_checkpoint(out: Path, trace: ContinuationTrace, state: GroundState, cfg: RunConfig):
    ext = "csv" if isinstance(state.u.grid, RadialGrid) else "bin"
    write_field(state.u, out / f"checkpoint_u.{ext}", _stamp(cfg))
    ck = {
        "entries": [e.__dict__ for e in trace.entries],
        "zero_mass_residuals": trace.zero_mass_residuals,
        "bound_violations": trace.bound_violations,
        "state": state.record(),
        **_stamp(cfg),
    }
    _atomic_write(out / "checkpoint.json", _dump(ck))


def _load_checkpoint(out: Path, cfg: RunConfig, grid):
    path = out / "checkpoint.json"
    if not path.exists():
        return None
    ck = json.loads(path.read_text())
    if ck.get("config_hash") != cfg.config_hash:
        raise ConfigError(f"{path}: checkpoint was written for a different configuration")
    ext = "csv" if isinstance(grid, RadialGrid) else "bin"
    u = read_field(out / f"checkpoint_u.{ext}", grid)
    trace = ContinuationTrace([TraceEntry(**e) for e in ck["entries"]], list(ck["bound_violations"]))
    trace.zero_mass_residuals = list(ck["zero_mass_residuals"])
    s = ck["state"]
    state = GroundState(
        u, EnergyBreakdown(**s["breakdown"]), s["residual_grad"], s["residual_J"], s["residual_P"],
        s["iterations"], s["epsilon"], s["converged"], s["pohozaev_relative"], s["min_u"], s["unimodal"],
        s["message"],
    )
    return trace, state


def cmd_continue(cfg: RunConfig, resume: bool = False) -> int:
    started = time.time()
    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    grid = cfg.make_grid()
    previous = _load_checkpoint(out, cfg, grid) if resume else None
    if resume and previous is None:
        log.warning("no checkpoint in %s; starting from scratch", out)
    pp0 = cfg.problem.with_epsilon(cfg.schedule[0])

    def on_step(trace, state):
        _save_checkpoint(out, trace, state, cfg)

    trace, state = continue_to_zero_mass(
        pp0, cfg.schedule, cfg.solver, init=_init_field(cfg, grid), resume=previous, on_step=on_step
    )
    _atomic_write(out / "trace.csv", _trace_csv(trace, cfg))
    if state is not None:
        _write_state(out, state, cfg)
    summary = {
        "final_I_zero_mass": trace.final_I,
        "final_weak_residual": trace.final_weak_residual,
        "zero_mass_residuals": trace.zero_mass_residuals,
        "bound_violations": trace.bound_violations,
        "failure": trace.failure,
        "min_m_eps": min(trace.m_values) if trace.entries else None,
        **_stamp(cfg),
    }
    _atomic_write(out / "continuation.json", _dump(summary))
    timing = {"wall_ms": {repr(e.epsilon): e.wall_ms for e in trace.entries}}
    _write_metadata(out, cfg, "continue", started, timing)
    if trace.bound_violations:
        for msg in trace.bound_violations:
            log.error("bound violated: %s", msg)
        return EXIT_BOUND
    if trace.failure:
        log.error("continuation failed: %s", trace.failure)
        return EXIT_NONCONVERGED
    return EXIT_OK


def cmd_verify(suite: str, seed: int, out: Path | None = None) -> int:
    from .suites import SUITES, run_suite

    if suite not in SUITES + ("all",):
        print(f"unknown suite {suite!r}; choose from {', '.join(SUITES + ('all',))}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(os.environ.get("BOPO_OUT") or out or "bopo_out")
    out.mkdir(parents=True, exist_ok=True)
    reports = run_suite(suite, seed)
    lines = [r.to_json() for r in reports]
    _atomic_write(out / f"verify_{suite}.json", "[\n" + ",\n".join(lines) + "\n]\n")
    failed = [r for r in reports if not r.passed]
    for r in reports:
        print(f"{'PASS' if r.passed else 'FAIL'} {r.check} worst_slack={r.worst_slack!r}")
    for r in failed:
        _atomic_write(out / f"failing_{r.check}.json", r.to_json() + "\n")
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_kernel_table(a: float, rmin: float, rmax: float, n: int, stream=None) -> int:
    stream = stream or sys.stdout
    p = KernelParams(a)
    stream.write("r,K,C,Y,dK,lapK\n")
    for r in np.geomspace(rmin, rmax, n):
        s = sample(r, p)
        stream.write(f"{s.r!r},{s.K!r},{s.C!r},{s.Y!r},{s.dK!r},{s.lapK!r}\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bopo", description="Zero-mass Schrodinger-Bopp-Podolsky ground states.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="ground state for one eps")
    s.add_argument("config")
    c = sub.add_parser("continue", help="eps -> 0 continuation")
    c.add_argument("config")
    c.add_argument("--resume", action="store_true", help="continue from the last completed eps")
    v = sub.add_parser("verify", help="run property suites")
    v.add_argument("suite")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--out", default=None)
    k = sub.add_parser("kernel-table", help="tabulate the kernels")
    k.add_argument("--a", type=float, default=1.0)
    k.add_argument("--rmin", type=float, default=1e-3)
    k.add_argument("--rmax", type=float, default=1e2)
    k.add_argument("--n", type=int, default=50)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        if args.command == "solve":
            return cmd_solve(load_config(args.config))
        if args.command == "continue":
            return cmd_continue(load_config(args.config), resume=args.resume)
        if args.command == "verify":
            return cmd_verify(args.suite, args.seed, args.out)
        if args.rmin <= 0 or args.rmax <= args.rmin or args.n < 1:
            raise ConfigError("kernel-table needs 0 < rmin < rmax and n >= 1")
        return cmd_kernel_table(args.a, args.rmin, args.rmax, args.n)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
