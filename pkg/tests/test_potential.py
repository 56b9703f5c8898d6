import json

import numpy as np
import pytest
from scipy.special import erf, erfc

from bopo.grid import BoxGrid, RadialGrid
from bopo.kernel import KernelParams
from bopo.potential import (
    KERNELS,
    energy_identity_gap,
    kernel_potential,
    pde_residual,
    potential_record,
    solve_potential_box,
    solve_potential_radial,
    truncated_symbol,
    write_potential_record,
)


def gauss(r):
    return np.exp(-r * r)


def phi_gauss(r, a):
    """K * e^{-r^2} in closed form (Coulomb minus Yukawa part)."""
    r = np.asarray(r, dtype=float)
    c = np.pi**1.5 * erf(r) / r
    b = 1 / (2 * a)
    y = np.pi**1.5 / (2 * r) * np.exp(b * b) * (np.exp(-r / a) * erfc(b - r) - np.exp(r / a) * erfc(b + r))
    return c - y


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_radial_potential_at_origin(radial1024, a):
    pot = solve_potential_radial(radial1024.sample(gauss), KernelParams(a))
    r0 = radial1024.r[0]
    np.testing.assert_allclose(pot.values[0], phi_gauss(r0, a), rtol=1e-10)
    # phi(0) lies within phi''(0) r0^2 of the first node
    exact = np.pi**1.5 / a * np.exp(1 / (4 * a * a)) * erfc(1 / (2 * a))
    np.testing.assert_allclose(pot.values[0], exact, rtol=10 * r0 * r0)


def test_frozen_origin_value(radial1024):
    pot = solve_potential_radial(radial1024.sample(gauss), KernelParams())
    np.testing.assert_allclose(pot.values[0], 3.428363789677925, rtol=1e-12)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_radial_potential_profile(radial1024, a):
    r = radial1024.r
    pot = solve_potential_radial(radial1024.sample(gauss), KernelParams(a))
    sel = (r > 0.05) & (r < 4)
    np.testing.assert_allclose(pot.values[sel], phi_gauss(r[sel], a), rtol=1e-9)


def test_coulomb_kernel_potential(radial1024):
    r = radial1024.r
    phi = kernel_potential(radial1024.sample(gauss), KernelParams(), "C")
    np.testing.assert_allclose(phi, np.pi**1.5 * erf(r) / r, rtol=1e-9)


def test_kernel_split_is_consistent(radial512):
    f = radial512.sample(lambda r: np.cos(r) * gauss(r))
    p = KernelParams(1.3)
    k, c, y = (kernel_potential(f, p, kind) for kind in ("K", "C", "Y"))
    np.testing.assert_allclose(k, c - y, atol=1e-12 * np.abs(c).max())


def test_unknown_kernel(radial512):
    with pytest.raises(ValueError, match="unknown kernel"):
        kernel_potential(radial512.sample(gauss), KernelParams(), "Z")
    assert KERNELS == ("K", "C", "Y", "E")


def test_radial_residual_is_sixth_order():
    res = []
    for n in (256, 512, 1024):
        g = RadialGrid(n)
        u2 = g.sample(gauss)
        res.append(pde_residual(solve_potential_radial(u2, KernelParams()), u2))
    rates = np.log2(np.array(res[:-1]) / np.array(res[1:]))
    assert res[-1] < 1e-6
    assert np.all(rates > 5.0)


@pytest.mark.parametrize("a", [0.5, 1.0, 2.0])
def test_energy_identity(radial1024, a):
    u2 = radial1024.sample(lambda r: (1 + r * r) * gauss(r))
    pot = solve_potential_radial(u2, KernelParams(a))
    assert energy_identity_gap(pot, u2) < 1e-9


def test_monotone_bounded_far_field(radial1024):
    a = 1.0
    u2 = radial1024.sample(gauss)
    pot = solve_potential_radial(u2, KernelParams(a))
    phi = pot.values
    assert np.all(np.diff(phi) <= 1e-14)
    assert np.all(phi > 0)
    assert phi.max() <= radial1024.integrate(u2.values) / a
    r = radial1024.r
    far = r > 30
    np.testing.assert_allclose(phi[far] * r[far], np.pi**1.5, rtol=1e-10)


def test_negative_source_rejected(radial512):
    with pytest.raises(ValueError, match="negative"):
        solve_potential_radial(radial512.sample(lambda r: -gauss(r)), KernelParams())
    with pytest.raises(TypeError):
        solve_potential_radial(BoxGrid(8, 2.0).sample(gauss), KernelParams())


def test_zero_source(radial512):
    pot = solve_potential_radial(radial512.sample(lambda r: 0 * r), KernelParams())
    assert pot.a_norm_sq == 0 and not pot.values.any()


@pytest.mark.parametrize("kind", KERNELS)
def test_truncated_symbol_small_k_limit(kind):
    a, cut = 0.8, 9.0
    np.testing.assert_allclose(truncated_symbol(1e-5, a, cut, kind), truncated_symbol(0.0, a, cut, kind),
                               rtol=1e-7)


def test_truncated_symbol_large_cutoff():
    # at cutoffs with cos(k L) = 0 the symbol tends to 4 pi / (k^2 (1 + a^2 k^2))
    a = 1.0
    for k in (0.5, 1.0, 3.0):
        cut = (2 * np.pi * 20 + 0.5 * np.pi) / k
        exact = 4 * np.pi / (k**2 * (1 + a * a * k**2))
        np.testing.assert_allclose(truncated_symbol(k, a, cut, "K"), exact, rtol=1e-9)


@pytest.fixture(scope="module")
def box_pair():
    b = BoxGrid(32, 5.0)
    u2 = b.sample(gauss)
    return b, u2, solve_potential_box(u2, KernelParams())


def test_box_pde_residual(box_pair):
    _, u2, pot = box_pair
    assert pde_residual(pot, u2) < 1e-8


def test_box_matches_closed_form(box_pair):
    b, _, pot = box_pair
    r = b.radius()
    sel = (r > 0.1) & (r < 4)
    np.testing.assert_allclose(pot.values[sel], phi_gauss(r[sel], 1.0), rtol=1e-8)


def test_box_translation_equivariance():
    b = BoxGrid(32, 6.0)
    p = KernelParams()
    shift = np.array([0.75, 0.0, -1.5])  # whole multiples of h = 0.375
    f = lambda r: np.exp(-2 * r * r)
    p0 = solve_potential_box(b.sample(f), p).values
    p1 = solve_potential_box(b.sample(f, center=tuple(shift)), p).values
    idx = np.rint(shift / b.h).astype(int)
    np.testing.assert_allclose(np.roll(p0, idx, axis=(0, 1, 2))[8:-8, 8:-8, 8:-8], p1[8:-8, 8:-8, 8:-8],
                               atol=1e-10)


def test_box_refuses_wide_source():
    b = BoxGrid(16, 3.0)
    with pytest.raises(ValueError, match="enlarge L"):
        solve_potential_box(b.sample(lambda r: 1 / (1 + r * r)), KernelParams())


def test_box_residual_needs_padded_field(box_pair, radial512):
    _, u2, pot = box_pair
    with pytest.raises(ValueError, match="different grids"):
        pde_residual(pot, radial512.sample(gauss))


def test_record_roundtrip(tmp_path, radial512):
    u2 = radial512.sample(gauss)
    pot = solve_potential_radial(u2, KernelParams())
    rec = potential_record(pot, u2)
    assert rec["source_hash"] == u2.digest()
    path = write_potential_record(pot, u2, tmp_path / "phi.json")
    assert json.loads(path.read_text()) == json.loads(json.dumps(rec, sort_keys=True))
