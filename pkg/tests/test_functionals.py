import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bopo.functionals import (
    Fiber,
    ProblemParams,
    check_scalar_inequalities,
    evaluate,
    fibering_maximize,
    first_variation,
    gradient,
    gradient_covector,
)
from bopo.grid import RadialGrid, fibering_rescale
from bopo.kernel import KernelParams
from bopo.solver import project


def u_gauss(r):
    return np.exp(-r * r)


@pytest.fixture(scope="module")
def grid():
    return RadialGrid(1024)


@pytest.fixture(scope="module")
def state(grid):
    return grid.sample(lambda r: 1.3 * np.exp(-((r / 1.2) ** 2)) + 0.4 * np.exp(-(((r - 1.0) / 0.8) ** 2)))


@pytest.mark.parametrize("p", [3.0, 6.0, 7.0, 2.5])
def test_exponent_range(p):
    with pytest.raises(ValueError, match=r"p must lie in \(3,6\)"):
        ProblemParams(p=p)


def test_negative_mass_rejected():
    with pytest.raises(ValueError):
        ProblemParams(epsilon=-1.0)
    assert ProblemParams().with_epsilon(0.5).epsilon == 0.5


def test_gaussian_breakdown(grid):
    pp = ProblemParams(KernelParams(1.0, 1.0), 4.0, 1.0)
    b = evaluate(grid.sample(u_gauss), pp)
    c = (np.pi / 2) ** 1.5
    np.testing.assert_allclose(b.dirichlet, 1.5 * c, rtol=1e-9)
    np.testing.assert_allclose(b.mass, 0.5 * c, rtol=1e-12)
    np.testing.assert_allclose(b.lp, (np.pi / 4) ** 1.5 / 4, rtol=1e-12)
    np.testing.assert_allclose(b.V, 2.386283140426, rtol=1e-8)
    # E = int e^{-rho} (u^2 * u^2)(rho), with u^2 * u^2 = (pi/4)^{3/2} e^{-rho^2}
    e_exact = (np.pi / 4) ** 1.5 * 4 * np.pi * integrate.quad(lambda x: x * x * np.exp(-x - x * x), 0, np.inf)[0]
    np.testing.assert_allclose(b.E, e_exact, rtol=1e-9)
    np.testing.assert_allclose(b.bp, b.V / 4, rtol=1e-15)
    np.testing.assert_allclose(b.I_eps, b.I + b.mass, rtol=1e-15)


def test_frozen_gaussian_action(grid):
    b = evaluate(grid.sample(u_gauss), ProblemParams())
    np.testing.assert_allclose(b.I_eps, 4.359963022793396, rtol=1e-9)
    c = (np.pi / 2) ** 1.5
    np.testing.assert_allclose(b.I_eps, 2 * c + 2.386283140426 / 4 - (np.pi / 4) ** 1.5 / 4, rtol=1e-8)


def test_nehari_relation(grid, state):
    pp = ProblemParams(KernelParams(0.8, 1.4), 4.5, 0.3)
    b = evaluate(state, pp)
    np.testing.assert_allclose(2 * first_variation(state, state, pp) - b.P_eps, b.J_eps,
                               rtol=1e-11, atol=1e-12 * b.nehari_scale)


@pytest.mark.parametrize("p, eps, a", [(4.0, 1.0, 1.0), (3.5, 0.25, 0.5), (5.5, 2.0, 3.0)])
def test_J_is_fibering_derivative(grid, state, p, eps, a):
    pp = ProblemParams(KernelParams(a, 1.0), p, eps)
    b = evaluate(state, pp)
    h = 1e-4
    fd = (evaluate(fibering_rescale(state, 1 + h), pp).I_eps - evaluate(fibering_rescale(state, 1 - h), pp).I_eps) / (
        2 * h
    )
    assert abs(fd - b.J_eps) <= 1e-6 * b.nehari_scale
    fib = Fiber(state, pp)
    np.testing.assert_allclose(fib.derivative(1.0), b.J_eps, rtol=1e-13, atol=1e-13 * b.nehari_scale)


def test_fiber_matches_resampled_values(grid, state):
    pp = ProblemParams()
    fib = Fiber(state, pp)
    for t in (0.6, 1.0, 1.7):
        np.testing.assert_allclose(fib.value(t), evaluate(fibering_rescale(state, t), pp).I_eps, rtol=1e-7)


def test_gradient_matches_central_differences(grid, state, rng):
    pp = ProblemParams(KernelParams(1.2, 0.9), 4.0, 0.5)
    for _ in range(3):
        c = rng.uniform(0, 3)
        v = grid.sample(lambda r: np.exp(-(((r - c) / 0.7) ** 2)))
        h = 1e-4
        fd = (evaluate(state + h * v, pp).I_eps - evaluate(state - h * v, pp).I_eps) / (2 * h)
        np.testing.assert_allclose(first_variation(state, v, pp), fd, rtol=1e-6)


def test_gradient_representatives(grid, state):
    pp = ProblemParams()
    cov = gradient_covector(state, pp)
    g_l2 = gradient(state, pp, "L2")
    np.testing.assert_allclose(g_l2.values * grid.weights, cov, rtol=1e-14, atol=1e-300)
    g_h1 = gradient(state, pp)
    np.testing.assert_allclose(grid.stiffness_apply(g_h1.values) + grid.weights * g_h1.values, cov,
                               atol=1e-10 * np.abs(cov).max())
    with pytest.raises(ValueError):
        gradient(state, pp, "W")


def test_recombination(grid, state):
    pp = ProblemParams(KernelParams(1.0, 1.0), 4.0, 1.0)
    b = evaluate(state, pp)
    p = pp.p
    rhs = ((p - 3) / (2 * p - 3) * 2 * b.dirichlet + (p - 2) / (2 * p - 3) * 2 * b.mass
           + (p - 3) / (2 * (2 * p - 3)) * b.V + b.E / (4 * (2 * p - 3)))
    np.testing.assert_allclose(b.I_eps - b.J_eps / (2 * p - 3), rhs, rtol=1e-12)


def test_charge_enters_quadratically(grid, state):
    b1 = evaluate(state, ProblemParams(KernelParams(1.0, 1.0)))
    b2 = evaluate(state, ProblemParams(KernelParams(1.0, -2.0)))
    np.testing.assert_allclose(b2.I_eps - b1.I_eps, 0.75 * b1.V, rtol=1e-12)
    np.testing.assert_allclose(b2.J_eps - b1.J_eps, 0.75 * (3 * b1.V - b1.E), rtol=1e-12)
    with pytest.raises(ValueError, match="q must be"):
        KernelParams(1.0, 0.0)


def test_zero_field(grid):
    z = grid.sample(lambda r: 0 * r)
    b = evaluate(z, ProblemParams())
    assert b.I_eps == 0 and b.J_eps == 0 and b.P_eps == 0
    assert not gradient_covector(z, ProblemParams()).any()
    with pytest.raises(ValueError):
        Fiber(z, ProblemParams())


def test_fibering_maximum(grid, state):
    pp = ProblemParams()
    res = fibering_maximize(state, pp, check_unimodal=True)
    assert res.unimodal
    assert res.second_derivative < 0
    assert res.bracket[0] <= res.t_star <= res.bracket[1]
    fib = Fiber(state, pp)
    assert abs(fib.derivative(res.t_star)) <= 1e-10 * evaluate(state, pp).nehari_scale
    for t in (0.9 * res.t_star, 1.1 * res.t_star):
        assert fib.value(t) < res.value


def test_fibering_fixed_point_on_manifold(grid, state):
    pp = ProblemParams()
    u, b, _ = project(state, pp)
    assert abs(b.J_eps) <= 1e-10 * b.nehari_scale
    np.testing.assert_allclose(fibering_maximize(u, pp).t_star, 1.0, rtol=1e-8)


@settings(max_examples=8, deadline=None)
@given(s=st.floats(0.6, 1.6))
def test_fibering_equivariance(s):
    # t*(u_s) = t*(u) / s
    g = RadialGrid(512)
    u = g.sample(lambda r: 1.5 * np.exp(-((r / 1.3) ** 2)))
    pp = ProblemParams()
    t0 = fibering_maximize(u, pp).t_star
    ts = fibering_maximize(fibering_rescale(u, s), pp).t_star
    np.testing.assert_allclose(ts * s, t0, rtol=1e-6)


def test_fibering_needs_positive_mass(grid, state):
    with pytest.raises(ValueError):
        fibering_maximize(state, ProblemParams(epsilon=0.0))


def test_scalar_inequalities():
    t0 = time.perf_counter()
    rep = check_scalar_inequalities()
    assert time.perf_counter() - t0 < 1.0
    assert rep.passed and rep.size == (200, 200)
    assert rep.min_324 >= -1e-14 and rep.min_333 >= -1e-14
    with pytest.raises(ValueError):
        check_scalar_inequalities(b=[-1.0])


def test_breakdown_serialises(grid):
    b = evaluate(grid.sample(u_gauss), ProblemParams())
    assert set(b.to_dict()) >= {"I_eps", "J_eps", "P_eps", "dirichlet", "V", "E"}
    assert b.to_json() == evaluate(grid.sample(u_gauss), ProblemParams()).to_json()
