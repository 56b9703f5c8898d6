"""Action functional, Pohozaev and Nehari-Pohozaev functionals, and the fibering map.

With D = 1/2 ||grad u||^2, M = 1/2 ||u||^2, Q = ||u||_p^p, V = V(u^2, u^2) and
E = int int e^{-|x-y|/a} u^2(x) u^2(y),

    I_eps = D + eps M + (q^2/4) V - Q/p
    P_eps = D + 3 eps M + (q^2/4)(5 V + E/a) - 3 Q/p
    J_eps = 3 D + eps M + (q^2/4)(3 V - E/a) - (2p - 3) Q/p

so J_eps = 2 I_eps'(u)[u] - P_eps. Under u_t(x) = t^2 u(t x) the pieces scale as

    D -> t^3 D,  M -> t M,  Q -> t^{2p-3} Q,  V_a -> t^3 V_{a t},

and J_eps(u) is the t-derivative of I_eps(u_t) at t = 1. The fibering map is
therefore evaluated from quantities of the unscaled field, with only the
kernel length changing, and never needs resampling.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import optimize

from .grid import Field
from .kernel import KernelParams
from .potential import kernel_potential

__all__ = [
    "ProblemParams",
    "EnergyBreakdown",
    "FiberingResult",
    "FiberingError",
    "evaluate",
    "first_variation",
    "gradient",
    "gradient_covector",
    "fiber",
    "fibering_maximize",
    "check_scalar_inequalities",
]

log = logging.getLogger(__name__)


class FiberingError(RuntimeError):
    """No interior maximum of the fibering map in [1e-6, 1e6]."""


@dataclass(frozen=True)
class ProblemParams:
    """Kernel, exponent 3 < p < 6 and mass epsilon >= 0."""

    kernel: KernelParams = KernelParams()
    p: float = 4.0
    epsilon: float = 1.0

    def __post_init__(self):
        if not 3 < self.p < 6:
            raise ValueError("p must lie in (3,6)")
        if not (np.isfinite(self.epsilon) and self.epsilon >= 0):
            raise ValueError("epsilon must be >= 0")

    @property
    def a(self):
        return self.kernel.a

    @property
    def q(self):
        return self.kernel.q

    def with_epsilon(self, eps: float) -> "ProblemParams":
        return ProblemParams(self.kernel, self.p, eps)


@dataclass(frozen=True)
class EnergyBreakdown:
    dirichlet: float
    mass: float
    bp: float
    lp: float
    I: float
    I_eps: float
    P_eps: float
    J_eps: float
    V: float
    E: float

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @property
    def pohozaev_scale(self) -> float:
        # sum of magnitudes of the terms of P_eps
        return 3 * self.dirichlet + 9 * self.mass + 3 * self.lp + 5 * self.bp + self.E  # upper envelope

    @property
    def nehari_scale(self) -> float:
        return 3 * self.dirichlet + self.mass + 5 * self.lp + 3 * self.bp + self.E


def _raw(u: Field, pp: ProblemParams):
    grid = u.grid
    u2 = u.square()
    phi = kernel_potential(u2, pp.kernel, "K")
    psi = kernel_potential(u2, pp.kernel, "E")
    vals = {
        "dirichlet": 0.5 * grid.dirichlet(u.values),
        "mass": 0.5 * grid.integrate(u2.values),
        "Q": grid.integrate(np.abs(u.values) ** pp.p),
        "V": grid.integrate(phi * u2.values),
        "E": grid.integrate(psi * u2.values),
    }
    for name, v in vals.items():
        if not np.isfinite(v):
            raise FloatingPointError(f"quadrature for the {name} term is not finite")
    return vals, phi


def _breakdown(D, M, Q, V, E, pp: ProblemParams) -> EnergyBreakdown:
    p, eps, q2, a = pp.p, pp.epsilon, pp.q**2, pp.a
    lp = Q / p
    bp = 0.25 * V
    I = D + q2 * bp - lp
    P = D + 3 * eps * M + 0.25 * q2 * (5 * V + E / a) - 3 * lp
    J = 3 * D + eps * M + 0.25 * q2 * (3 * V - E / a) - (2 * p - 3) * lp
    return EnergyBreakdown(D, M, bp, lp, I, I + eps * M, P, J, V, E)


def evaluate(u: Field, pp: ProblemParams) -> EnergyBreakdown:
    """All scalar functionals of ``u``.

    Examples
    --------
    >>> from bopo.grid import RadialGrid
    >>> u = RadialGrid(256).sample(lambda r: np.exp(-r**2))
    >>> b = evaluate(u, ProblemParams())
    >>> abs(b.I_eps - (b.I + b.mass)) < 1e-14
    True
    """
    vals, _ = _raw(u, pp)
    return _breakdown(vals["dirichlet"], vals["mass"], vals["Q"], vals["V"], vals["E"], pp)


def gradient_covector(u: Field, pp: ProblemParams) -> np.ndarray:
    """Discrete derivative of I_eps: the vector G with dI(u)[v] = G . v."""
    grid = u.grid
    w = grid.weights
    uv = u.values
    phi = kernel_potential(u.square(), pp.kernel, "K")
    nonlin = np.abs(uv) ** (pp.p - 2) * uv
    return grid.stiffness_apply(uv) + w * (pp.epsilon * uv + pp.q**2 * phi * uv - nonlin)


def first_variation(u: Field, v: Field, pp: ProblemParams) -> float:
    """dI_eps(u)[v] = int grad u . grad v + eps int u v + q^2 int phi_u u v - int |u|^{p-2} u v."""
    if u.grid != v.grid:
        raise ValueError("fields live on different grids")
    return float(np.sum(gradient_covector(u, pp) * v.values))


def gradient(u: Field, pp: ProblemParams, metric: str = "sobolev") -> Field:
    """Riesz representative of dI_eps(u) in the L2 or H1 (-lap + 1) inner product."""
    cov = gradient_covector(u, pp)
    if metric == "L2":
        g = cov / u.grid.weights
    elif metric == "sobolev":
        try:
            g = u.grid.sobolev_solve(cov)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"Sobolev gradient solve failed: {exc}") from exc
    else:
        raise ValueError("metric must be 'L2' or 'sobolev'")
    return u.with_values(g)


# ---------------------------------------------------------------------------
# fibering


class Fiber:
    """t -> I_eps(u_t) from the unscaled field; kernel integrals evaluated at length a t."""

    def __init__(self, u: Field, pp: ProblemParams):
        if u.is_zero():
            raise ValueError("the fibering map needs a nonzero field")
        vals, _ = _raw(u, pp)
        self.u = u
        self.pp = pp
        self.D = vals["dirichlet"]
        self.M = vals["mass"]
        self.Q = vals["Q"]
        self._u2 = u.square()
        self._cache = {1.0: (vals["V"], vals["E"])}
        self.evaluations = 0

    def kernel_terms(self, t: float):
        t = float(t)
        if t not in self._cache:
            kp = self.pp.kernel.with_a(self.pp.a * t)
            g = self._u2.grid
            V = g.integrate(kernel_potential(self._u2, kp, "K") * self._u2.values)
            E = g.integrate(kernel_potential(self._u2, kp, "E") * self._u2.values)
            self._cache[t] = (V, E)
            self.evaluations += 1
        return self._cache[t]

    def value(self, t: float) -> float:
        V, _ = self.kernel_terms(t)
        pp = self.pp
        return (
            t**3 * self.D + pp.epsilon * t * self.M + 0.25 * pp.q**2 * t**3 * V - t ** (2 * pp.p - 3) * self.Q / pp.p
        )

    def derivative(self, t: float) -> float:
        V, E = self.kernel_terms(t)
        pp = self.pp
        return (
            3 * t**2 * self.D
            + pp.epsilon * self.M
            + 0.25 * pp.q**2 * (3 * t**2 * V - t * E / pp.a)
            - (2 * pp.p - 3) / pp.p * t ** (2 * pp.p - 4) * self.Q
        )

    def scan_sign_changes(self, lo=1e-3, hi=1e3, num=25) -> int:
        ts = np.geomspace(lo, hi, num)
        d = np.array([self.derivative(t) for t in ts])
        return int(np.sum(np.sign(d[1:]) != np.sign(d[:-1])))


def fiber(u: Field, pp: ProblemParams) -> Fiber:
    return Fiber(u, pp)


@dataclass(frozen=True)
class FiberingResult:
    t_star: float
    value: float
    second_derivative: float
    bracket: tuple
    derivative_at_t_star: float = 0.0
    unimodal: bool | None = None
    evaluations: int = 0


def fibering_maximize(u: Field, pp: ProblemParams, check_unimodal: bool = False,
                      fib: Fiber | None = None) -> FiberingResult:
    """Maximiser t* of t -> I_eps(t^2 u(t x)).

    The bracket grows geometrically from t = 1 by factors of 2; the root of
    the t-derivative is then found by Brent's method.
    """
    if not pp.epsilon > 0:
        raise ValueError("fibering_maximize needs epsilon > 0")
    fb = fib or Fiber(u, pp)
    d1 = fb.derivative(1.0)
    if d1 == 0:
        lo = hi = 1.0
    else:
        step = 2.0 if d1 > 0 else 0.5
        lo = hi = 1.0
        t = 1.0
        while True:
            t_next = t * step
            if not 1e-6 <= t_next <= 1e6:
                raise FiberingError("no interior maximum of the fibering map in [1e-6, 1e6]")
            if (fb.derivative(t_next) < 0) == (d1 > 0):
                lo, hi = sorted((t, t_next))
                break
            t = t_next
    if lo == hi:
        t_star = 1.0
    else:
        t_star = optimize.brentq(fb.derivative, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    h = 1e-4 * t_star
    second = (fb.derivative(t_star + h) - fb.derivative(t_star - h)) / (2 * h)
    unimodal = None
    if check_unimodal:
        unimodal = fb.scan_sign_changes() <= 1
        if not unimodal:
            log.warning("fibering derivative changes sign more than once; t* may not be unique")
    return FiberingResult(
        float(t_star), float(fb.value(t_star)), float(second), (lo, hi), float(fb.derivative(t_star)),
        unimodal, fb.evaluations,
    )


# ---------------------------------------------------------------------------
# scalar inequalities


def _ineq_324(t, b):
    # t^3 (e^{-b/t} - e^{-b}) + (1 - t^3) b e^{-b}/3, as e^{-b}[t^3 expm1(b - b/t) + (1 - t^3) b/3]
    return np.exp(-b) * (t**3 * np.expm1(b - b / t) + (1 - t**3) * b / 3)


def _ineq_333(b):
    return -0.5 * np.expm1(-b) - b * np.exp(-b) / 3


@dataclass
class ScalarReport:
    passed: bool
    min_324: float
    min_333: float
    worst_point: tuple | None
    size: tuple


def check_scalar_inequalities(t=None, b=None, slack: float = 1e-14) -> ScalarReport:
    """Check t^3(e^{-b/t} - e^{-b}) + ((1-t^3)/3) b e^{-b} >= 0 and (1 - e^{-b})/2 - b e^{-b}/3 >= 0.

    Defaults to a 200 x 200 grid with t log-spaced on [1e-3, 1e3] and b on [0, 50].
    """
    t = np.geomspace(1e-3, 1e3, 200) if t is None else np.asarray(t, dtype=float)
    b = np.concatenate([[0.0], np.geomspace(1e-6, 50, 199)]) if b is None else np.asarray(b, dtype=float)
    if np.any(t <= 0) or np.any(b < 0):
        raise ValueError("need t > 0 and b >= 0")
    T, B = np.meshgrid(t, b, indexing="ij")
    with np.errstate(over="ignore", under="ignore"):
        v324 = _ineq_324(T, B)
    v324 = np.where(np.isnan(v324), 0.0, v324)  # 0 * inf at tiny t and huge b/t: true value 0^+
    v333 = _ineq_333(b)
    worst = None
    if v324.min() < -slack:
        i, j = np.unravel_index(np.argmin(v324), v324.shape)
        worst = (float(t[i]), float(b[j]))
    elif v333.min() < -slack:
        worst = (None, float(b[np.argmin(v333)]))
    return ScalarReport(worst is None, float(v324.min()), float(v333.min()), worst, (len(t), len(b)))
