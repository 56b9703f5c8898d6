"""Property suites run by ``bopo verify``.

Every check returns a :class:`~bopo.bp_energy.CheckReport`; a suite is a list
of them. Failing reports carry the smallest instance needed to replay them.
"""
from __future__ import annotations

import numpy as np

from . import bp_energy as bpe
from .functionals import ProblemParams, evaluate, first_variation, check_scalar_inequalities
from .grid import RadialGrid, lp_norm
from .kernel import (
    KernelParams,
    eval_grad_lapK_radial,
    eval_gradK_radial,
    eval_K,
    eval_lapK,
    identity_error,
    verify_CY_convolution,
)
from .potential import energy_identity_gap, solve_potential_radial

SUITES = ("kernel", "energy", "inequalities", "functionals")

CheckReport = bpe.CheckReport


def _report(check, trials, slack, seed, passed, grid=None, params=None, details=None, failing=None):
    return CheckReport(check, trials, float(slack), seed, bool(passed), grid or {}, params or {}, details or {},
                       failing)


def kernel_suite(seed: int = 0, p: KernelParams | None = None):
    p = p or KernelParams()
    out = []
    r = np.logspace(-6, 3, 400) * p.a
    err = identity_error(r, p)
    out.append(_report("K_equals_C_minus_Y", len(r), 1e-13 - err, seed, err <= 1e-13, params={"a": p.a},
                       details={"max_rel_err": err}))
    radii = np.geomspace(1e-3, 1e2, 20) * p.a
    conv = verify_CY_convolution(p, radii)
    out.append(_report("CY_convolution", len(radii), 1e-8 - conv, seed, conv <= 1e-8, params={"a": p.a},
                       details={"max_rel_err": conv}))
    # derivative formulas against central differences; beyond ~10 a the
    # Laplacian is exponentially small and differencing K only measures roundoff
    rs = np.geomspace(1e-2, 10, 40) * p.a
    h = 1e-5 * rs
    lap_fd = lambda f, x, hh: (f(x + hh) - 2 * f(x) + f(x - hh)) / hh**2 + 2 / x * (f(x + hh) - f(x - hh)) / (2 * hh)
    k = lambda x: eval_K(x, p)
    lk = lambda x: eval_lapK(x, p)
    errs = {
        "gradK": np.max(np.abs((k(rs + h) - k(rs - h)) / (2 * h) - eval_gradK_radial(rs, p))
                        / np.abs(eval_gradK_radial(rs, p))),
        "lapK": np.max(np.abs(lap_fd(k, rs, 1e-3 * rs) - eval_lapK(rs, p)) / np.abs(eval_lapK(rs, p))),
        "grad_lapK": np.max(np.abs((lk(rs + h) - lk(rs - h)) / (2 * h) - eval_grad_lapK_radial(rs, p))
                            / np.abs(eval_grad_lapK_radial(rs, p))),
    }
    worst = max(errs.values())
    out.append(_report("derivative_fd", len(rs), 1e-4 - worst, seed, worst <= 1e-4, params={"a": p.a},
                       details={k_: float(v) for k_, v in errs.items()}))
    return out


def energy_suite(seed: int = 0, p: KernelParams | None = None, grid=None):
    p = p or KernelParams()
    grid = grid or RadialGrid(1024)
    rng = np.random.default_rng(seed)
    out = []
    worst_fast = 0.0
    worst_lin = 0.0
    for _ in range(20):
        f, g, h = (bpe.random_mixture(grid, rng) for _ in range(3))
        vo = bpe.V_oracle(f, g, p)
        vf = bpe.V_fast(f, g, p).value
        scale = np.sqrt(bpe.V_oracle(f, f, p) * bpe.V_oracle(g, g, p))
        worst_fast = max(worst_fast, abs(vo - vf) / scale)
        al, be = rng.normal(size=2)
        lhs = bpe.V_oracle(f * al + h * be, g, p)
        rhs = al * vo + be * bpe.V_oracle(h, g, p)
        worst_lin = max(worst_lin, abs(lhs - rhs) / (scale * (abs(al) + abs(be)) + 1e-300))
    out.append(_report("V_fast_vs_oracle", 20, 1e-6 - worst_fast, seed, worst_fast <= 1e-6, grid.describe(),
                       {"a": p.a}, {"max_rel_err": worst_fast}))
    out.append(_report("bilinearity", 20, 1e-10 - worst_lin, seed, worst_lin <= 1e-10, grid.describe(), {"a": p.a},
                       {"max_rel_err": worst_lin}))
    gaps = []
    for w in np.linspace(0.5, 2.0, 10):
        src = grid.sample(lambda r, w=w: np.exp(-((r / w) ** 2)))
        gaps.append(energy_identity_gap(solve_potential_radial(src, p), src))
    worst_gap = max(gaps)
    out.append(_report("energy_identity", 10, 1e-6 - worst_gap, seed, worst_gap <= 1e-6, grid.describe(),
                       {"a": p.a}, {"max_gap": worst_gap}))
    out.append(bpe.check_cauchy_schwarz(100, seed, p=p))
    out.append(bpe.check_positivity(100, seed, p=p))
    out.append(bpe.check_exponential_layer(3, seed, p=p))
    out.append(bpe.check_triangle(50, seed, p=p))
    return out


def family_ratios(grid=None, alpha: float = 1.0, p: KernelParams | None = None):
    grid = grid or bpe.family_grid()
    return {name: bpe.lower_bound_ratio(grid.sample(fn), alpha, p) for name, fn in bpe.standard_family()}


def l3_sweep(grid=None, p: KernelParams | None = None, ts=(0.25, 0.5, 1.0, 2.0, 4.0)):
    """Relative L3 slack for every family member and fibering parameter t."""
    grid = grid or bpe.family_grid()
    out = {}
    for name, fn in bpe.standard_family():
        for t in ts:
            u = grid.sample(lambda r, fn=fn, t=t: t * t * fn(t * r))
            out[(name, t)] = bpe.check_L3_inequality(u, p) / lp_norm(u, 3) ** 3
    return out


def inequalities_suite(seed: int = 0, p: KernelParams | None = None):
    p = p or KernelParams()
    out = [bpe.check_cauchy_schwarz(100, seed, p=p), bpe.check_positivity(100, seed, p=p)]
    grid = bpe.family_grid()
    ratios = family_ratios(grid, 1.0, p)
    name = min(ratios, key=ratios.get)
    out.append(_report("lower_bound_ratio", len(ratios), ratios[name], seed, ratios[name] > 0, grid.describe(),
                       {"a": p.a, "alpha": 1.0}, {"argmin": name, "min_ratio": ratios[name]}))
    sweep = l3_sweep(grid, p)
    worst_key = min(sweep, key=sweep.get)
    bad = {f"{k[0]}@t={k[1]}": v for k, v in sweep.items() if v < -1e-8}
    out.append(_report("L3_inequality", len(sweep), sweep[worst_key], seed, not bad, grid.describe(), {"a": p.a},
                       {"argmin": f"{worst_key[0]}@t={worst_key[1]}", "violations": len(bad)},
                       bad or None))
    rep = check_scalar_inequalities()
    out.append(_report("scalar_inequalities", 200 * 200, min(rep.min_324, rep.min_333), seed, rep.passed,
                       failing=None if rep.passed else {"t_b": rep.worst_point}))
    cw, cz = [], []
    for nm, fn in bpe.standard_family():
        rec = bpe.check_weighted_embeddings(grid.sample(lambda r, fn=fn: np.sqrt(fn(r))), p=p)
        cw.append(rec["C_W"])
        cz.append(rec["C_Z"])
    out.append(_report("weighted_embeddings", len(cw), 0.0, seed, np.all(np.isfinite(cw + cz)), grid.describe(),
                       {"a": p.a, "alpha": 1.0, "gamma": 1.0}, {"C_W": max(cw), "C_Z": max(cz)}))
    return out


def random_profile(rng):
    """Positive random radial profile used by the functional consistency checks."""
    amp = rng.uniform(0.5, 2.0)
    w = rng.uniform(0.6, 1.6)
    c = rng.uniform(0.0, 1.5)
    return lambda r: amp * (np.exp(-((r / w) ** 2)) + 0.3 * np.exp(-(((r - c) / w) ** 2)))


def random_state(grid, rng):
    return grid.sample(random_profile(rng))


def functionals_suite(seed: int = 0, pp: ProblemParams | None = None, grid=None):
    pp = pp or ProblemParams()
    grid = grid or RadialGrid(1024)
    rng = np.random.default_rng(seed)
    worst_j = worst_g = worst_rec = 0.0
    for _ in range(10):
        prof = random_profile(rng)
        u = grid.sample(prof)
        b = evaluate(u, pp)
        # u_t sampled from the profile itself, so no interpolation noise enters the difference
        h = 1e-4
        i_t = [evaluate(grid.sample(lambda r, t=t: t * t * prof(t * r)), pp).I_eps for t in (1 + h, 1 - h)]
        fd = (i_t[0] - i_t[1]) / (2 * h)
        worst_j = max(worst_j, abs(fd - b.J_eps) / b.nehari_scale)
        v = bpe.random_mixture(grid, rng)
        # cube-root-of-eps step balances truncation against roundoff
        hv = np.cbrt(np.finfo(float).eps) * np.max(np.abs(u.values)) / np.max(np.abs(v.values))
        fdv = (evaluate(u + hv * v, pp).I_eps - evaluate(u - hv * v, pp).I_eps) / (2 * hv)
        dv = first_variation(u, v, pp)
        worst_g = max(worst_g, abs(fdv - dv) / max(abs(dv), 1e-300))
        p_ = pp.p
        rhs = ((p_ - 3) / (2 * p_ - 3) * 2 * b.dirichlet + (p_ - 2) * pp.epsilon / (2 * p_ - 3) * 2 * b.mass
               + pp.q**2 * (p_ - 3) / (2 * (2 * p_ - 3)) * b.V + pp.q**2 / (4 * (2 * p_ - 3)) * b.E / pp.a)
        lhs = b.I_eps - b.J_eps / (2 * p_ - 3)
        worst_rec = max(worst_rec, abs(lhs - rhs) / abs(rhs))
    params = {"a": pp.a, "q": pp.q, "p": pp.p, "epsilon": pp.epsilon}
    return [
        _report("fibering_derivative", 10, 1e-6 - worst_j, seed, worst_j <= 1e-6, grid.describe(), params,
                {"max_rel_err": worst_j}),
        _report("gradient_fd", 10, 1e-5 - worst_g, seed, worst_g <= 1e-5, grid.describe(), params,
                {"max_rel_err": worst_g}),
        _report("recombination", 10, 1e-10 - worst_rec, seed, worst_rec <= 1e-10, grid.describe(), params,
                {"max_rel_err": worst_rec}),
    ]


def run_suite(name: str, seed: int = 0):
    if name == "all":
        return [r for s in SUITES for r in run_suite(s, seed)]
    if name == "kernel":
        return kernel_suite(seed)
    if name == "energy":
        return energy_suite(seed)
    if name == "inequalities":
        return inequalities_suite(seed)
    if name == "functionals":
        return functionals_suite(seed)
    raise KeyError(name)
