"""The Bopp-Podolsky energy V(f, g) and the inequalities it satisfies.

Two independent evaluations are provided:

* :func:`V_oracle` is a direct double quadrature. For radial fields the
  angular integral is done in closed form, giving the spherically averaged
  kernel ``kbar(r, s) = (1/2rs) int_{|r-s|}^{r+s} K(rho) rho drho`` on the
  node pairs; for box fields it is the full pairwise sum on a coarsened grid.
* :func:`V_fast` integrates the potential ``K * f`` against ``g``.

The remaining functions are property checks that return plain report
objects instead of raising, so that sweeps can collect the worst case.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .grid import BoxGrid, Field, RadialField, RadialGrid, dirichlet_seminorm, lp_norm
from .kernel import KernelParams
from .potential import kernel_potential, solve_potential_box, solve_potential_radial

__all__ = [
    "EnergyPair",
    "WeightParams",
    "CheckReport",
    "kbar",
    "V_oracle",
    "V_fast",
    "e_norm",
    "check_cauchy_schwarz",
    "check_positivity",
    "check_exponential_layer",
    "check_triangle",
    "weight_W",
    "weight_Z",
    "lower_bound_ratio",
    "check_L3_inequality",
    "check_weighted_embeddings",
    "random_mixture",
    "standard_family",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EnergyPair:
    """A value of V(f, g) with the method that produced it."""

    value: float
    method: str
    est_error: float = 0.0

    def __post_init__(self):
        if self.method not in ("oracle", "via_potential", "spectral"):
            raise ValueError(f"unknown method {self.method!r}")
        if not self.est_error >= 0:
            raise ValueError("est_error must be nonnegative")


@dataclass(frozen=True)
class WeightParams:
    """Exponents of the weights W (``alpha``) and Z (``gamma``); both > 1/2."""

    alpha: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        if not self.alpha > 0.5:
            raise ValueError("alpha must exceed 1/2")
        if not self.gamma > 0.5:
            raise ValueError("gamma must exceed 1/2")


@dataclass
class CheckReport:
    """Outcome of a property sweep. ``worst_slack < 0`` beyond tolerance means failure."""

    check: str
    trials: int
    worst_slack: float
    seed: int | None = None
    passed: bool = True
    grid: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)
    failing: dict | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)


# ---------------------------------------------------------------------------
# spherically averaged kernels


def _e1(x):
    # (1 - e^{-x})/x
    x = np.asarray(x, dtype=float)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = -np.expm1(-x) / x
    return np.where(x == 0, 1.0, out)


def _series(x, coef):
    acc = np.zeros_like(x)
    for c in coef[::-1]:
        acc = acc * x + c
    return acc


_N = 22
# (e^{-x} - 1 + x)/x^2 = sum_{k>=0} (-x)^k/(k+2)!
_C_PHI2 = [(-1) ** k / special.factorial(k + 2) for k in range(_N)]
# (1 - e^{-x}(1 + x))/x^2 = sum_{k>=0} (-1)^k (k+1) x^k/(k+2)!
_C_H = [(-1) ** k * (k + 1) / special.factorial(k + 2) for k in range(_N)]


def _stable(x, coef, exact):
    x = np.asarray(x, dtype=float)
    small = x < 0.5
    out = np.empty_like(x)
    out[small] = _series(x[small], coef)
    xl = x[~small]
    out[~small] = exact(xl)
    return out


def _phi2(x):
    return _stable(x, _C_PHI2, lambda y: (np.exp(-y) - 1 + y) / y**2)


def _h(x):
    return _stable(x, _C_H, lambda y: (1 - np.exp(-y) * (1 + y)) / y**2)


def kbar(r, s, a: float = 1.0, kind: str = "K", rate: float | None = None):
    """Spherical average of a radial kernel over the sphere |y| = s seen from |x| = r.

    ``kind`` is ``"K"`` (Bopp-Podolsky), ``"C"`` (1/rho), ``"Y"``
    (e^{-rho/a}/rho) or ``"E"`` (e^{-rho/a}); for ``"E"`` a decay ``rate``
    other than 1/a may be given (``rate = 0`` is the constant kernel). All
    forms avoid cancellation for small arguments.
    """
    r = np.asarray(r, dtype=float)
    s = np.asarray(s, dtype=float)
    d = np.abs(r - s)
    m = 2 * np.minimum(r, s)
    den = 2 * r * s
    if kind == "C":
        return 1.0 / np.maximum(r, s)
    if kind == "Y":
        return a * np.exp(-d / a) * m * _e1(m / a) / (a * den)
    if kind == "K":
        x = m / a
        return m * (-np.expm1(-d / a) * _e1(x) + x * _phi2(x)) / den
    if kind == "E":
        lam = 1.0 / a if rate is None else float(rate)
        x = lam * m
        return np.exp(-lam * d) * (d * m * _e1(x) + m * m * _h(x)) / den
    raise ValueError(f"unknown kernel {kind!r}")


@lru_cache(maxsize=8)
def _kbar_matrix(grid: RadialGrid, a: float, kind: str, rate):
    r = grid.r
    mat = kbar(r[:, None], r[None, :], a, kind, rate)
    mat.setflags(write=False)
    return mat


@lru_cache(maxsize=16)
def _cell_average_K0(h: float, a: float) -> float:
    # mean of K over the cube [-h/2, h/2]^3; K is bounded so this is finite
    def f(z, y, x):
        r = np.sqrt(x * x + y * y + z * z)
        return 1.0 / a if r == 0 else -np.expm1(-r / a) / r

    hh = h / 2
    val, _ = integrate.tplquad(f, 0, hh, 0, hh, 0, hh, epsabs=0, epsrel=1e-10)
    return 8 * val / h**3


def _kernel_values(rho, a, kind, rate=None):
    if kind == "K":
        with np.errstate(invalid="ignore", divide="ignore"):
            return -np.expm1(-rho / a) / rho
    if kind == "C":
        with np.errstate(divide="ignore"):
            return 1.0 / rho
    if kind == "Y":
        with np.errstate(divide="ignore"):
            return np.exp(-rho / a) / rho
    lam = 1.0 / a if rate is None else rate
    return np.exp(-lam * rho)


def _box_oracle(f: Field, g: Field, a, kind, rate, max_points):
    grid = f.grid
    stride = 1
    while (grid.n // stride) > max_points:
        stride *= 2
    sl = (slice(None, None, stride),) * 3
    fv = f.values[sl].ravel()
    gv = g.values[sl].ravel()
    x = grid.x[::stride]
    h = grid.h * stride
    X, Y, Z = np.meshgrid(x, x, x, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    if kind == "K":
        k0 = _cell_average_K0(h, a)
    elif kind == "E":
        k0 = 1.0
    else:
        raise ValueError("the box oracle supports kinds 'K' and 'E'")
    total_fg = 0.0
    total_gf = 0.0
    block = 512
    for i in range(0, len(pts), block):
        diff = pts[i : i + block, None, :] - pts[None, :, :]
        rho = np.sqrt(np.sum(diff * diff, axis=-1))
        kv = _kernel_values(rho, a, kind, rate)
        kv[rho == 0] = k0
        total_fg += fv[i : i + block] @ (kv @ gv)
        total_gf += gv[i : i + block] @ (kv @ fv)
    return 0.5 * (total_fg + total_gf) * h**6


def V_oracle(f: Field, g: Field, p: KernelParams, kind: str = "K", rate=None, max_points: int = 16) -> float:
    """Direct double quadrature of int int k(x - y) f(x) g(y).

    The result is symmetric in ``f`` and ``g`` bit for bit. ``max_points`` is
    the per-axis size of the coarsened grid used for box fields.

    Examples
    --------
    >>> from bopo.grid import RadialGrid
    >>> g = RadialGrid(128)
    >>> f = g.sample(lambda r: np.exp(-r**2))
    >>> V_oracle(f, f, KernelParams()) > 0
    True
    """
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if isinstance(f.grid, BoxGrid):
        return float(_box_oracle(f, g, p.a, kind, rate, max_points))
    grid = f.grid
    mat = _kbar_matrix(grid, p.a, kind, rate)
    wf = grid.weights * f.values
    wg = grid.weights * g.values
    return float(0.5 * (wf @ (mat @ wg) + wg @ (mat @ wf)))


def V_fast(f: Field, g: Field, p: KernelParams, kind: str = "K") -> EnergyPair:
    """V(f, g) = int (k * f) g via the potential solvers.

    ``est_error`` is the asymmetry between the two orderings of the
    integration plus a roundoff floor.
    """
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    grid = f.grid
    phi_f = kernel_potential(f, p, kind)
    v1 = grid.integrate(phi_f * g.values)
    if f is g or np.array_equal(f.values, g.values):
        v2 = v1
    else:
        v2 = grid.integrate(kernel_potential(g, p, kind) * f.values)
    floor = 64 * np.finfo(float).eps * abs(v1)
    method = "spectral" if isinstance(grid, BoxGrid) else "via_potential"
    return EnergyPair(0.5 * (v1 + v2), method, abs(v1 - v2) + floor)


def e_norm(u: Field, p: KernelParams) -> float:
    """(||grad u||^2 + V(u^2, u^2)^{1/2})^{1/2}."""
    u2 = u.square()
    v = max(V_fast(u2, u2, p).value, 0.0)
    return float(np.sqrt(u.grid.dirichlet(u.values) + np.sqrt(v)))


# ---------------------------------------------------------------------------
# random and standard test fields


def random_mixture(grid, rng: np.random.Generator, signed: bool = True, max_terms: int = 4) -> Field:
    """Random Gaussian mixture; shells on a radial grid, blobs in a box."""
    m = int(rng.integers(1, max_terms + 1))
    amp = rng.uniform(0.5, 2.0, m)
    if signed:
        amp *= rng.choice([-1.0, 1.0], m)
    width = rng.uniform(0.4, 1.5, m)
    if isinstance(grid, RadialGrid):
        centre = rng.uniform(0.0, 4.0, m)
        v = sum(c * np.exp(-(((grid.r - x0) / w) ** 2)) for c, x0, w in zip(amp, centre, width))
        return RadialField(grid, v)
    from .grid import BoxField

    reach = 0.35 * grid.L
    centres = rng.uniform(-reach, reach, (m, 3))
    v = sum(c * np.exp(-((grid.radius(x0) / w) ** 2)) for c, x0, w in zip(amp, centres, width))
    return BoxField(grid, v)


def _smooth_cut(r, R, width=0.1):
    return 0.5 * special.erfc((r / R - 1) / width)


def standard_family():
    """The 30 nonnegative radial profiles used by the lower-bound and L3 sweeps.

    Eleven Gaussians of widths 2^-4..2^6, ten shifted shells and nine slowly
    decaying profiles (r^-2 and r^-1.5 tails with a smooth cut-off).
    """
    fam = []
    for k in range(-4, 7):
        w = 2.0**k
        fam.append((f"gauss_w{w:g}", lambda r, w=w: np.exp(-((r / w) ** 2))))
    for c in (1.0, 2.0, 4.0, 8.0, 16.0):
        for w in (0.5, 1.0):
            fam.append((f"shell_c{c:g}_w{w:g}", lambda r, c=c, w=w: np.exp(-(((r - c) / w) ** 2))))
    for R in (4.0, 8.0, 16.0, 32.0, 64.0):
        fam.append((f"inv2_R{R:g}", lambda r, R=R: _smooth_cut(r, R) / (1 + r * r)))
    for R in (8.0, 16.0, 32.0, 64.0):
        fam.append((f"inv15_R{R:g}", lambda r, R=R: _smooth_cut(r, R) / (1 + r * r) ** 0.75))
    return fam


def family_grid(n: int = 2048) -> RadialGrid:
    """Radial grid wide and fine enough for every member of :func:`standard_family`."""
    return RadialGrid(n, r_max=512.0, cluster=0.99, width=0.05)


# ---------------------------------------------------------------------------
# bilinear-form properties


def _params(p: KernelParams):
    return {"a": p.a, "q": p.q}


def check_cauchy_schwarz(trials: int, rng_seed: int, grid=None, p: KernelParams | None = None,
                         rel_slack: float = 1e-9) -> CheckReport:
    """|V(f,g)|^2 <= V(f,f) V(g,g) on random sign-indefinite pairs; also checks exact symmetry."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = grid or RadialGrid(512)
    p = p or KernelParams()
    rng = np.random.default_rng(rng_seed)
    worst = np.inf
    failing = None
    symmetric = True
    for i in range(trials):
        f = random_mixture(grid, rng)
        g = random_mixture(grid, rng)
        vff = V_oracle(f, f, p)
        vgg = V_oracle(g, g, p)
        vfg = V_oracle(f, g, p)
        symmetric &= vfg == V_oracle(g, f, p)
        scale = vff * vgg
        slack = (scale - vfg**2) / scale
        if slack < worst:
            worst = slack
        if (slack < -rel_slack or not symmetric) and failing is None:
            failing = {"trial": i, "seed": rng_seed, "V_ff": vff, "V_gg": vgg, "V_fg": vfg}
    return CheckReport(
        "cauchy_schwarz", trials, float(worst), rng_seed, failing is None, grid.describe(), _params(p),
        {"symmetric": bool(symmetric), "relative_slack_floor": rel_slack}, failing,
    )


def check_positivity(trials: int, rng_seed: int, grid=None, p: KernelParams | None = None) -> CheckReport:
    """V(f, f) > 0 for random nonzero sign-indefinite f."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = grid or RadialGrid(512)
    p = p or KernelParams()
    rng = np.random.default_rng(rng_seed)
    min_v = np.inf
    min_norm = np.inf
    failing = None
    for i in range(trials):
        f = random_mixture(grid, rng)
        v = V_oracle(f, f, p)
        l2 = lp_norm(f, 2)
        min_v = min(min_v, v)
        min_norm = min(min_norm, v / l2**4)
        if not v > 0 and failing is None:
            failing = {"trial": i, "seed": rng_seed, "V_ff": v}
    return CheckReport(
        "positivity", trials, float(min_v), rng_seed, failing is None, grid.describe(), _params(p),
        {"min_normalized": float(min_norm)}, failing,
    )


def dipole(grid, shift: float = 1.0, width: float = 1.0) -> Field:
    """Positive bump minus an equal bump; a shell pair on radial grids."""
    if isinstance(grid, RadialGrid):
        return grid.sample(lambda r: np.exp(-((r / width) ** 2)) - np.exp(-(((r - shift) / width) ** 2)))
    return grid.sample(lambda r: np.exp(-((r / width) ** 2))) - grid.sample(
        lambda r: np.exp(-((r / width) ** 2)), center=(shift, 0.0, 0.0)
    )


def check_exponential_layer(trials: int = 3, rng_seed: int = 0, grid=None, p: KernelParams | None = None,
                            nodes: int = 24) -> CheckReport:
    """1 - e^{-x} = x int_0^1 e^{-tx} dt, and V as a superposition of exponential layers.

    The layered form V(f,f) = (1/a) int_0^1 E_{t/a}(f,f) dt, with E_lam the
    energy of the kernel e^{-lam rho}, is integrated by Gauss-Legendre in t.
    """
    xs = np.concatenate([[0.0], np.logspace(-8, 3, 200)])
    worst_scalar = 0.0
    for x in xs:
        lhs = -np.expm1(-x)
        quad, _ = integrate.quad(lambda t: np.exp(-t * x), 0.0, 1.0, epsabs=0, epsrel=1e-13, limit=200)
        rhs = x * quad
        err = abs(lhs - rhs) / max(lhs, np.finfo(float).tiny) if lhs else abs(rhs)
        worst_scalar = max(worst_scalar, err)
    grid = grid or RadialGrid(256)
    p = p or KernelParams()
    rng = np.random.default_rng(rng_seed)
    t, w = np.polynomial.legendre.leggauss(nodes)
    t = 0.5 * (t + 1)
    w = 0.5 * w
    worst_layer = 0.0
    for _ in range(trials):
        f = random_mixture(grid, rng)
        layered = sum(wi * V_oracle(f, f, p, "E", rate=ti / p.a) for ti, wi in zip(t, w)) / p.a
        direct = V_oracle(f, f, p)
        worst_layer = max(worst_layer, abs(layered - direct) / abs(direct))
    ok = bool(worst_scalar <= 1e-12 and worst_layer <= 1e-6)
    return CheckReport(
        "exponential_layer", trials, float(-max(worst_scalar / 1e-12, worst_layer / 1e-6) + 1), rng_seed, ok,
        grid.describe(), _params(p), {"scalar_rel_err": float(worst_scalar), "layered_rel_err": float(worst_layer)},
        None if ok else {"scalar_rel_err": float(worst_scalar), "layered_rel_err": float(worst_layer)},
    )


def check_triangle(trials: int, rng_seed: int, grid=None, p: KernelParams | None = None,
                   slack: float = 1e-9) -> CheckReport:
    """N(u + v) <= N(u) + N(v) for N(u) = V(u^2, u^2)^{1/4}."""
    grid = grid or RadialGrid(512)
    p = p or KernelParams()
    rng = np.random.default_rng(rng_seed)

    def nrm(u):
        u2 = u.square()
        return max(V_oracle(u2, u2, p), 0.0) ** 0.25

    worst = np.inf
    failing = None
    for i in range(trials):
        u = random_mixture(grid, rng)
        v = random_mixture(grid, rng)
        nu, nv, nuv = nrm(u), nrm(v), nrm(u + v)
        s = (nu + nv - nuv) / max(nu + nv, np.finfo(float).tiny)
        worst = min(worst, s)
        if s < -slack and failing is None:
            failing = {"trial": i, "seed": rng_seed}
    return CheckReport("triangle", trials, float(worst), rng_seed, failing is None, grid.describe(), _params(p),
                       {}, failing)


# ---------------------------------------------------------------------------
# weighted lower bound and embeddings


def _radius(grid):
    return grid.r if isinstance(grid, RadialGrid) else grid.radius()


def weight_W(r, alpha: float):
    """1/((1 + r^2)^{1/4} (1 + |log r|)^alpha), extended by 0 at r = 0."""
    r = np.asarray(r, dtype=float)
    with np.errstate(divide="ignore"):
        w = 1.0 / ((1 + r * r) ** 0.25 * (1 + np.abs(np.log(r))) ** alpha)
    return np.where(r == 0, 0.0, w)


def weight_Z(r, gamma: float):
    return 1.0 / (1 + np.asarray(r, dtype=float)) ** gamma


def lower_bound_ratio(f: Field, alpha: float = 1.0, p: KernelParams | None = None) -> float:
    """V(f, f) / (int W_alpha f)^2 for nonnegative f.

    Returns ``inf`` for the zero field, which is the zero-input flag.
    """
    if not alpha > 0.5:
        raise ValueError("alpha must exceed 1/2")
    p = p or KernelParams()
    vals = f.values
    scale = float(np.max(np.abs(vals), initial=0.0))
    if np.any(vals < -1e-12 * scale):
        raise ValueError("lower_bound_ratio needs a nonnegative field")
    if scale == 0:
        log.info("lower_bound_ratio: zero input")
        return float("inf")
    wint = f.grid.integrate(weight_W(_radius(f.grid), alpha) * vals)
    return float(V_oracle(f, f, p) / wint**2)


def check_L3_inequality(u: Field, p: KernelParams | None = None) -> float:
    """Slack (1/pi) ||phi_u||_A ||grad u||_2 - ||u||_3^3 (nonnegative when it holds)."""
    p = p or KernelParams()
    if u.is_zero():
        return 0.0
    if isinstance(u.grid, RadialGrid):
        a_norm = solve_potential_radial(u.square(), p).a_norm_sq
    else:
        a_norm = solve_potential_box(u.square(), p).a_norm_sq
    return float(np.sqrt(a_norm) * dirichlet_seminorm(u) / np.pi - lp_norm(u, 3) ** 3)


def check_weighted_embeddings(u: Field, w: WeightParams | None = None, p: KernelParams | None = None) -> dict:
    """Ratios int W u^2 / (||grad u||^2 + V^{1/2}) and the same for Z.

    The constants are existence results only, so the ratios are reported as
    empirical constants rather than compared to a value.
    """
    w = w or WeightParams()
    p = p or KernelParams()
    if u.is_zero():
        return {"C_W": 0.0, "C_Z": 0.0, "denominator": 0.0}
    r = _radius(u.grid)
    u2 = u.square()
    den = u.grid.dirichlet(u.values) + np.sqrt(max(V_fast(u2, u2, p).value, 0.0))
    out = {"C_Z": u.grid.integrate(weight_Z(r, w.gamma) * u2.values) / den, "denominator": float(den)}
    if isinstance(u.grid, RadialGrid):
        out["C_W"] = u.grid.integrate(weight_W(r, w.alpha) * u2.values) / den
    return out
