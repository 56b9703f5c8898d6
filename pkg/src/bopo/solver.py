"""Ground states for fixed eps and continuation eps -> 0.

Each outer iteration takes a Sobolev-gradient step and projects back onto
the Nehari-Pohozaev set J_eps = 0 by maximising along the fibre
t -> t^2 u(t x). The line search is Armijo backtracking on the reduced
functional Psi(w) = max_t I_eps(w_t), which is evaluated from the trial field
itself (scaling laws, no resampling); only accepted states are resampled,
and the resampling error is proportional to |t* - 1|, which vanishes as the
iteration converges.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .bp_energy import e_norm
from .functionals import (
    EnergyBreakdown,
    Fiber,
    FiberingError,
    ProblemParams,
    evaluate,
    fibering_maximize,
    gradient_covector,
)
from .grid import BoxField, BoxGrid, Field, RadialGrid, fibering_rescale, lp_norm

__all__ = [
    "SolverConfig",
    "GroundState",
    "TraceEntry",
    "ContinuationTrace",
    "project",
    "solve_fixed_eps",
    "continue_to_zero_mass",
    "halving_schedule",
    "weak_residual",
    "recenter",
    "default_init",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverConfig:
    """Stopping rules and line-search constants for :func:`solve_fixed_eps`."""

    max_outer_iters: int = 500
    grad_tol: float = 1e-6
    J_tol: float = 1e-8
    pohozaev_tol: float = 1e-4
    step_rule: str = "armijo"
    initial_step: float = 1.0
    recenter: bool = False
    mode: str = "radial"
    armijo_c: float = 1e-4
    backtrack: float = 0.5
    max_step: float = 64.0
    direction: str = "steepest"
    projection_tol: float = 1e-10

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        for name in ("grad_tol", "J_tol", "pohozaev_tol", "initial_step", "projection_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.step_rule != "armijo":
            raise ValueError("step_rule must be 'armijo'")
        if self.mode not in ("radial", "box"):
            raise ValueError("mode must be 'radial' or 'box'")
        if self.direction not in ("steepest", "cg"):
            raise ValueError("direction must be 'steepest' or 'cg'")
        if not 0 < self.backtrack < 1 or not 0 < self.armijo_c < 1:
            raise ValueError("backtrack and armijo_c must lie in (0, 1)")


@dataclass
class GroundState:
    u: Field
    breakdown: EnergyBreakdown
    residual_grad: float
    residual_J: float
    residual_P: float
    iterations: int
    epsilon: float
    converged: bool
    pohozaev_relative: float = 0.0
    min_u: float = 0.0
    unimodal: bool | None = None
    message: str = ""
    history: list = field(default_factory=list, repr=False)

    def record(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_grad": self.residual_grad,
            "residual_J": self.residual_J,
            "residual_P": self.residual_P,
            "pohozaev_relative": self.pohozaev_relative,
            "min_u": self.min_u,
            "unimodal": self.unimodal,
            "message": self.message,
            "breakdown": self.breakdown.to_dict(),
        }


def default_init(grid, amplitude: float = 1.0, width: float = 1.0) -> Field:
    """Gaussian amplitude * exp(-(r/width)^2) on a radial or box grid."""
    return grid.sample(lambda r: amplitude * np.exp(-((r / width) ** 2)))


def _dual_norm(u: Field, cov) -> tuple[float, np.ndarray]:
    g = u.grid.sobolev_solve(cov)
    return float(np.sqrt(max(np.sum(cov * g), 0.0))), g


def project(u: Field, pp: ProblemParams, tol: float = 1e-10, max_rounds: int = 6, check_unimodal=False):
    """Rescale ``u`` onto J_eps = 0; repeat while resampling leaves |J| above ``tol`` * scale."""
    unimodal = None
    for k in range(max_rounds):
        res = fibering_maximize(u, pp, check_unimodal=check_unimodal and k == 0)
        if k == 0:
            unimodal = res.unimodal
        if res.t_star != 1.0:
            u = fibering_rescale(u, res.t_star)
        b = evaluate(u, pp)
        if abs(b.J_eps) <= tol * b.nehari_scale:
            break
    return u, b, unimodal


def weak_residual(u: Field, pp: ProblemParams, dictionary=None, norm: str = "E") -> float:
    """max_k |dI_eps(u)[v_k]| / ||v_k|| over a fixed dictionary of test fields.

    ``norm`` is ``"E"``, the energy-space norm (||grad v||^2 + V(v^2, v^2)^{1/2})^{1/2}
    in which weak solutions are tested, or ``"H1"``.
    """
    if u.is_zero():
        return 0.0
    vs = dictionary if dictionary is not None else _dictionary(u.grid)
    cov = gradient_covector(u, pp)
    worst = 0.0
    for v in vs:
        if norm == "E":
            vf = u.with_values(v)
            nv = e_norm(vf, pp.kernel)
        elif norm == "H1":
            nv = np.sqrt(u.grid.sobolev_inner(v, v))
        else:
            raise ValueError("norm must be 'E' or 'H1'")
        worst = max(worst, abs(float(np.sum(cov * v))) / nv)
    return worst


def _dictionary(grid):
    out = []
    if isinstance(grid, RadialGrid):
        r = grid.r
        for w in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0):
            out.append(np.exp(-((r / w) ** 2)))
            out.append((r / w) ** 2 * np.exp(-((r / w) ** 2)))
        for c in np.geomspace(0.5, 0.5 * grid.r_max, 16):
            w = max(c / 4, 4 * grid.spacing)
            out.append(np.exp(-(((r - c) / w) ** 2)))
    else:
        for w in (0.5, 1.0, 2.0):
            out.append(np.exp(-((grid.radius() / w) ** 2)))
            for off in ((1.0, 0, 0), (0, 1.0, 0), (0, 0, 1.0)):
                out.append(np.exp(-((grid.radius(off) / w) ** 2)))
    return out


def _state(u, pp, b=None):
    b = b or evaluate(u, pp)
    cov = gradient_covector(u, pp)
    res, g = _dual_norm(u, cov)
    return b, cov, res, g


def solve_fixed_eps(init: Field, pp: ProblemParams, cfg: SolverConfig | None = None,
                    callback=None) -> GroundState:
    """Minimise I_eps over the Nehari-Pohozaev set, starting from ``init``.

    Returns a :class:`GroundState`; ``converged`` is False when the iteration
    budget runs out, in which case the last iterate is returned.
    """
    cfg = cfg or SolverConfig()
    if not pp.epsilon > 0:
        raise ValueError("solve_fixed_eps needs epsilon > 0")
    if init.is_zero():
        raise ValueError("initial field must be nonzero")
    if cfg.recenter and isinstance(init, BoxField):
        init = recenter(init)
    u, b, unimodal = project(init, pp, cfg.projection_tol, check_unimodal=True)
    b, cov, res, g = _state(u, pp, b)
    step = cfg.initial_step
    history = [b.I_eps]
    it = 0
    d = -g
    message = ""
    while True:
        if res <= cfg.grad_tol and abs(b.J_eps) <= cfg.J_tol:
            converged = True
            message = "converged"
            break
        if it >= cfg.max_outer_iters:
            converged = False
            message = "iteration budget exhausted"
            break
        slope = float(np.sum(cov * d))
        if slope >= 0:  # not a descent direction: restart
            d = -g
            slope = -res * res
        accepted = False
        s = step
        for _ in range(60):
            w = u + s * d
            try:
                fr = fibering_maximize(w, pp, fib=Fiber(w, pp))
            except FiberingError:
                s *= cfg.backtrack
                continue
            if fr.value <= b.I_eps + cfg.armijo_c * s * slope:
                accepted = True
                break
            s *= cfg.backtrack
        it += 1
        if not accepted:
            if cfg.direction == "cg" and not np.array_equal(d, -g):
                d = -g  # retry along the plain gradient
                continue
            message = "line search failed"
            converged = False
            break
        u_new = fibering_rescale(w, fr.t_star)
        u_new, b_new, _ = project(u_new, pp, cfg.projection_tol)
        if cfg.recenter and isinstance(u_new, BoxField):
            u_new = recenter(u_new)
        b_new, cov_new, res_new, g_new = _state(u_new, pp, b_new)
        if cfg.direction == "cg":
            # Polak-Ribiere+ in the Sobolev metric
            beta = max(0.0, float(np.sum(cov_new * (g_new - g))) / max(res * res, 1e-300))
            d = -g_new + beta * d
        else:
            d = -g_new
        u, b, cov, res, g = u_new, b_new, cov_new, res_new, g_new
        history.append(b.I_eps)
        step = min(s / cfg.backtrack, cfg.max_step) if s == step else s
        if callback is not None:
            callback(it, u, b, res)
        log.debug("iter %d I_eps=%.15g grad=%.3e J=%.3e step=%.3g", it, b.I_eps, res, b.J_eps, s)
    P_rel = abs(b.P_eps) / b.pohozaev_scale
    return GroundState(
        u, b, res, abs(b.J_eps), abs(b.P_eps), it, pp.epsilon, converged, P_rel,
        float(np.min(u.values)), unimodal, message, history,
    )


# ---------------------------------------------------------------------------
# continuation


@dataclass(frozen=True)
class TraceEntry:
    epsilon: float
    m_eps: float
    grad_res: float
    J_res: float
    P_res: float
    Lp_norm: float
    E_norm: float
    wall_ms: float
    converged: bool = True


COLUMNS = ("epsilon", "m_eps", "grad_res", "J_res", "P_res", "Lp_norm", "E_norm")


@dataclass
class ContinuationTrace:
    entries: list = field(default_factory=list)
    bound_violations: list = field(default_factory=list)
    failure: str | None = None
    final_I: float | None = None
    final_weak_residual: float | None = None
    zero_mass_residuals: list = field(default_factory=list)

    @property
    def epsilons(self):
        return [e.epsilon for e in self.entries]

    @property
    def m_values(self):
        return [e.m_eps for e in self.entries]

    def to_csv(self, timing: bool = False) -> str:
        """CSV of the trace. Wall times are kept out unless ``timing`` is set, so the file is reproducible."""
        cols = COLUMNS + (("wall_ms",) if timing else ())
        lines = [",".join(cols)]
        for e in self.entries:
            lines.append(",".join(repr(float(getattr(e, c))) for c in cols))
        return "\n".join(lines) + "\n"

    @property
    def ok(self) -> bool:
        return self.failure is None and not self.bound_violations


def halving_schedule(k_max: int = 10):
    return [2.0**-k for k in range(k_max + 1)]


def continue_to_zero_mass(pp0: ProblemParams, schedule=None, cfg: SolverConfig | None = None, init: Field | None = None,
                          grid=None, resume: tuple | None = None, on_step=None):
    """Warm-started solves along a decreasing eps schedule.

    ``resume`` is ``(trace, state)`` from an interrupted run; solving restarts
    after the last recorded eps. ``on_step(trace, state)`` is called after
    each completed eps (used for checkpoints).
    Returns ``(trace, ground_state_at_smallest_eps)``.
    """
    cfg = cfg or SolverConfig()
    schedule = list(halving_schedule() if schedule is None else schedule)
    if not schedule:
        raise ValueError("schedule must be nonempty")
    if any(e <= 0 for e in schedule) or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValueError("schedule must be positive and strictly decreasing")
    if resume is not None:
        trace, state = resume
        done = set(trace.epsilons)
        u = state.u
    else:
        trace, state = ContinuationTrace(), None
        done = set()
        if init is None:
            grid = grid or RadialGrid(2048, a=pp0.a)
            init = default_init(grid)
        u = init
    m1 = trace.entries[0].m_eps if trace.entries else None
    for eps in schedule:
        if eps in done:
            continue
        pp = pp0.with_epsilon(eps)
        t0 = time.perf_counter()
        try:
            state = solve_fixed_eps(u, pp, cfg)
        except (FiberingError, ValueError, FloatingPointError) as exc:
            trace.failure = f"eps={eps!r}: {exc}"
            log.error("continuation stopped at eps=%g: %s", eps, exc)
            break
        wall = (time.perf_counter() - t0) * 1e3
        u = state.u
        b = state.breakdown
        entry = TraceEntry(
            eps, b.I_eps, state.residual_grad, state.residual_J, state.residual_P,
            lp_norm(u, pp.p), e_norm(u, pp.kernel), wall, state.converged,
        )
        trace.entries.append(entry)
        if m1 is None:
            m1 = entry.m_eps
        if entry.m_eps > m1 + 1e-8:
            trace.bound_violations.append(f"m_eps={entry.m_eps!r} exceeds m_1={m1!r} at eps={eps!r}")
        if not entry.m_eps > 0:
            trace.bound_violations.append(f"m_eps={entry.m_eps!r} is not positive at eps={eps!r}")
        if not state.converged:
            trace.failure = f"eps={eps!r}: {state.message}"
        pp_zero = pp0.with_epsilon(0.0)
        trace.zero_mass_residuals.append(weak_residual(u, pp_zero))
        if on_step is not None:
            on_step(trace, state)
        if trace.failure:
            break
    norms = [e.Lp_norm for e in trace.entries]
    if norms:
        floor = 0.5 * float(np.median(norms))
        trace.bound_violations.extend(
            f"||u||_p={e.Lp_norm!r} below half the run median at eps={e.epsilon!r}"
            for e in trace.entries if e.Lp_norm < floor
        )
    if state is not None:
        pp_zero = pp0.with_epsilon(0.0)
        trace.final_I = evaluate(state.u, pp_zero).I
        trace.final_weak_residual = weak_residual(state.u, pp_zero)
    return trace, state


# ---------------------------------------------------------------------------
# translations


def recenter(u: Field) -> Field:
    """Translate a box field so that the first maximiser of |u| (C order) sits at the origin."""
    if not isinstance(u.grid, BoxGrid):
        return u
    idx = np.unravel_index(int(np.argmax(np.abs(u.values))), u.values.shape)
    centre = u.grid.n // 2  # index of x = 0
    shift = tuple(centre - i for i in idx)
    if not any(shift):
        return u
    return u.with_values(np.roll(u.values, shift, axis=(0, 1, 2)))
