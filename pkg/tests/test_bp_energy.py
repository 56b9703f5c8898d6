import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate
from scipy.special import erfc

from bopo import bp_energy as bpe
from bopo.grid import BoxGrid, RadialGrid
from bopo.kernel import KernelParams, eval_K


def gauss(r):
    return np.exp(-r * r)


def v_gauss(a):
    """V(e^{-r^2}, e^{-r^2}) in closed form."""
    return np.pi**3 / a * np.exp(1 / (2 * a * a)) * erfc(1 / (a * np.sqrt(2)))


def test_frozen_closed_forms():
    np.testing.assert_allclose(v_gauss(1.0), np.pi**3 * np.exp(0.5) * erfc(2**-0.5), rtol=1e-15)
    np.testing.assert_allclose(np.pi**3 / 8 * np.exp(0.25) * erfc(0.5), 2.38628314, rtol=1e-8)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_oracle_and_fast_match_closed_form(radial1024, a):
    f = radial1024.sample(gauss)
    p = KernelParams(a)
    np.testing.assert_allclose(bpe.V_oracle(f, f, p), v_gauss(a), rtol=1e-8)
    pair = bpe.V_fast(f, f, p)
    assert pair.method == "via_potential"
    np.testing.assert_allclose(pair.value, v_gauss(a), rtol=1e-9)


def test_narrow_gaussian_closed_form(radial1024):
    f = radial1024.sample(lambda r: np.exp(-2 * r * r))
    np.testing.assert_allclose(bpe.V_oracle(f, f, KernelParams()), 2.386283140, rtol=1e-8)


@pytest.mark.parametrize("kind", ["K", "C", "Y", "E"])
@pytest.mark.parametrize("r, s", [(0.3, 0.7), (1e-4, 2.0), (5.0, 5.0), (3.0, 1e-3), (40.0, 41.0)])
def test_kbar_matches_quadrature(kind, r, s):
    a = 0.7
    kern = {
        "K": lambda x: eval_K(x, KernelParams(a)),
        "C": lambda x: 1 / x,
        "Y": lambda x: np.exp(-x / a) / x,
        "E": lambda x: np.exp(-x / a),
    }[kind]
    lo, hi = abs(r - s), r + s
    val, _ = integrate.quad(lambda x: kern(x) * x, lo, hi, epsabs=0, epsrel=1e-13, limit=200)
    np.testing.assert_allclose(bpe.kbar(r, s, a, kind), val / (2 * r * s), rtol=1e-11)


def test_kbar_constant_rate_and_symmetry():
    np.testing.assert_allclose(bpe.kbar(0.4, 1.3, kind="E", rate=0.0), 1.0, rtol=1e-14)
    r, s = np.meshgrid(np.geomspace(1e-3, 50, 30), np.geomspace(1e-3, 50, 30))
    for kind in ("K", "Y", "E"):
        np.testing.assert_array_equal(bpe.kbar(r, s, kind=kind), bpe.kbar(s, r, kind=kind))
    with pytest.raises(ValueError):
        bpe.kbar(1.0, 1.0, kind="Q")


def test_oracle_exact_symmetry(radial512, rng):
    p = KernelParams()
    for _ in range(5):
        f, g = bpe.random_mixture(radial512, rng), bpe.random_mixture(radial512, rng)
        assert bpe.V_oracle(f, g, p) == bpe.V_oracle(g, f, p)


def test_bilinearity(radial512, rng):
    p = KernelParams()
    f, g, h = (bpe.random_mixture(radial512, rng) for _ in range(3))
    lhs = bpe.V_oracle(2.5 * f - 0.5 * h, g, p)
    rhs = 2.5 * bpe.V_oracle(f, g, p) - 0.5 * bpe.V_oracle(h, g, p)
    np.testing.assert_allclose(lhs, rhs, rtol=1e-12)


def test_fast_vs_oracle_random(radial1024, rng):
    p = KernelParams(1.5)
    for _ in range(5):
        f, g = bpe.random_mixture(radial1024, rng), bpe.random_mixture(radial1024, rng)
        scale = np.sqrt(bpe.V_oracle(f, f, p) * bpe.V_oracle(g, g, p))
        pair = bpe.V_fast(f, g, p)
        assert abs(pair.value - bpe.V_oracle(f, g, p)) <= 1e-6 * scale
        assert pair.est_error < 1e-8 * scale


def test_mismatched_grids(radial512):
    f = radial512.sample(gauss)
    g = RadialGrid(256).sample(gauss)
    with pytest.raises(ValueError):
        bpe.V_oracle(f, g, KernelParams())
    with pytest.raises(ValueError):
        bpe.V_fast(f, g, KernelParams())


def test_energy_pair_validation():
    with pytest.raises(ValueError):
        bpe.EnergyPair(1.0, "guess")
    with pytest.raises(ValueError):
        bpe.EnergyPair(1.0, "oracle", -1.0)


def test_box_oracle_is_coarse_cross_check():
    b = BoxGrid(32, 5.0)
    f = b.sample(gauss)
    p = KernelParams()
    fast = bpe.V_fast(f, f, p)
    assert fast.method == "spectral"
    np.testing.assert_allclose(fast.value, v_gauss(1.0), rtol=1e-8)
    np.testing.assert_allclose(bpe.V_oracle(f, f, p), v_gauss(1.0), rtol=2e-2)


@pytest.mark.parametrize("check", [bpe.check_cauchy_schwarz, bpe.check_positivity, bpe.check_triangle])
def test_property_checks_pass(check):
    rep = check(30, 7)
    assert rep.passed and rep.trials == 30 and rep.seed == 7
    assert rep.failing is None
    json.loads(rep.to_json())


def test_checks_reject_zero_trials():
    with pytest.raises(ValueError):
        bpe.check_cauchy_schwarz(0, 0)
    with pytest.raises(ValueError):
        bpe.check_positivity(0, 0)


def test_checks_are_reproducible():
    a = bpe.check_cauchy_schwarz(10, 3)
    b = bpe.check_cauchy_schwarz(10, 3)
    assert a.to_json() == b.to_json()


def test_dipole_has_positive_energy(radial512):
    d = bpe.dipole(radial512)
    assert abs(radial512.integrate(d.values)) > 0
    assert bpe.V_oracle(d, d, KernelParams()) > 0
    db = bpe.dipole(BoxGrid(24, 6.0), shift=1.5)
    assert abs(db.grid.integrate(db.values)) < 1e-7
    assert bpe.V_fast(db, db, KernelParams()).value > 0


def test_exponential_layer():
    rep = bpe.check_exponential_layer(2, 0)
    assert rep.passed
    assert rep.details["scalar_rel_err"] < 1e-12
    assert rep.details["layered_rel_err"] < 1e-6


def test_weights():
    r = np.array([0.0, 1.0, np.e, 1e6])
    w = bpe.weight_W(r, 1.0)
    assert w[0] == 0.0
    np.testing.assert_allclose(w[1], 2**-0.25, rtol=1e-15)
    np.testing.assert_allclose(w[2], 1 / ((1 + np.e**2) ** 0.25 * 2), rtol=1e-15)
    np.testing.assert_allclose(bpe.weight_Z(r, 2.0), 1 / (1 + r) ** 2)
    with pytest.raises(ValueError):
        bpe.WeightParams(alpha=0.5)


def test_lower_bound_ratio_edge_cases(radial512):
    assert bpe.lower_bound_ratio(radial512.sample(lambda r: 0 * r)) == float("inf")
    with pytest.raises(ValueError, match="nonnegative"):
        bpe.lower_bound_ratio(radial512.sample(lambda r: -gauss(r)))
    with pytest.raises(ValueError):
        bpe.lower_bound_ratio(radial512.sample(gauss), alpha=0.4)


@settings(max_examples=15, deadline=None)
@given(w=st.floats(0.1, 10.0), amp=st.floats(0.1, 10.0))
def test_lower_bound_ratio_positive_and_homogeneous(w, amp):
    g = RadialGrid(512, r_max=200.0)
    f = g.sample(lambda r: np.exp(-((r / w) ** 2)))
    r1 = bpe.lower_bound_ratio(f)
    assert 0 < r1 < np.inf
    np.testing.assert_allclose(bpe.lower_bound_ratio(amp * f), r1, rtol=1e-12)


def test_standard_family_shape():
    fam = bpe.standard_family()
    assert len(fam) == 30
    names = [n for n, _ in fam]
    assert len(set(names)) == 30
    r = np.linspace(0, 50, 11)
    for _, fn in fam:
        v = fn(r)
        assert np.all(v >= 0) and v.max() > 0


def test_l3_slack_for_wide_gaussian(radial1024):
    u = radial1024.sample(gauss)
    assert bpe.check_L3_inequality(u) > 0
    assert bpe.check_L3_inequality(radial1024.sample(lambda r: 0 * r)) == 0.0


def test_l3_fails_for_concentrated_profiles():
    # ||u||_3^3 scales like w^3 but the right side like w^3.5
    g = bpe.family_grid(2048)
    slack = bpe.check_L3_inequality(g.sample(lambda r: np.exp(-((32 * r) ** 2))))
    assert slack < 0


def test_weighted_embeddings(radial512):
    rec = bpe.check_weighted_embeddings(radial512.sample(gauss))
    assert rec["C_W"] > 0 and rec["C_Z"] > 0
    # both ratios are invariant under u -> c u
    scaled = bpe.check_weighted_embeddings(radial512.sample(lambda r: 3 * gauss(r)))
    np.testing.assert_allclose([scaled["C_W"], scaled["C_Z"]], [rec["C_W"], rec["C_Z"]], rtol=1e-12)
    zero = bpe.check_weighted_embeddings(radial512.sample(lambda r: 0 * r))
    assert zero["C_W"] == 0.0


def test_e_norm(radial1024):
    u = radial1024.sample(gauss)
    dirichlet = 3 * (np.pi / 2) ** 1.5
    np.testing.assert_allclose(bpe.e_norm(u, KernelParams()) ** 2,
                               dirichlet + np.sqrt(2.386283140426), rtol=1e-8)
