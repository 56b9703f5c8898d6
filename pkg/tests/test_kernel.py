import numpy as np
import pytest
from scipy import integrate

from bopo.kernel import (
    KernelParams,
    eval_C,
    eval_grad_lapK_radial,
    eval_gradK_radial,
    eval_K,
    eval_lapK,
    eval_Y,
    identity_error,
    sample,
    verify_CY_convolution,
)


@pytest.mark.parametrize("a, q", [(0.0, 1.0), (-1.0, 1.0), (np.inf, 1.0), (1.0, 0.0), (1.0, np.nan)])
def test_params_rejected(a, q):
    with pytest.raises(ValueError):
        KernelParams(a, q)


@pytest.mark.parametrize("a", [0.1, 1.0, 7.5])
def test_K_at_origin_is_one_over_a(a):
    p = KernelParams(a)
    assert eval_K(0.0, p) == 1.0 / a
    np.testing.assert_allclose(eval_K(1e-12, p), 1.0 / a, rtol=1e-11)


def test_K_reference_values(unit):
    # frozen: (1 - e^{-r})/r
    np.testing.assert_allclose(eval_K(1.0, unit), 0.6321205588285577, rtol=1e-15)
    np.testing.assert_allclose(eval_K(10.0, unit), 0.09999546000702375, rtol=1e-15)
    np.testing.assert_allclose(eval_K(3.0, KernelParams(2.0)), 0.2589566132838567, rtol=1e-15)


def test_K_bounded_and_decreasing(unit):
    r = np.linspace(0, 50, 2001)
    k = eval_K(r, unit)
    assert np.all(k <= 1.0) and np.all(k > 0)
    assert np.all(np.diff(k) < 0)


def test_singular_kernels_reject_origin(unit):
    with pytest.raises(ValueError, match="singular"):
        eval_C(0.0)
    with pytest.raises(ValueError, match="singular"):
        eval_Y(np.array([1.0, 0.0]), unit)
    with pytest.raises(ValueError):
        eval_K(-1.0, unit)


@pytest.mark.parametrize("a", [0.25, 1.0, 4.0])
def test_identity_K_equals_C_minus_Y(a):
    p = KernelParams(a)
    r = np.logspace(-6, 3, 300) * a
    assert identity_error(r, p) <= 1e-13


def test_identity_in_double_where_no_cancellation(unit):
    r = np.logspace(0, 3, 50)
    np.testing.assert_allclose(eval_K(r, unit), eval_C(r) - eval_Y(r, unit), rtol=1e-14)


@pytest.mark.parametrize("a", [0.5, 1.0, 3.0])
def test_convolution_identity(a):
    p = KernelParams(a)
    assert verify_CY_convolution(p, np.geomspace(1e-3, 100, 20) * a) <= 1e-8


def test_convolution_rejects_origin(unit):
    with pytest.raises(ValueError):
        verify_CY_convolution(unit, [0.0])


@pytest.mark.parametrize("r", [1e-4, 1e-2, 0.3, 1.0, 5.0, 20.0])
def test_derivatives_against_finite_differences(r):
    p = KernelParams(1.3)
    h = 1e-5 * r
    dK = (eval_K(r + h, p) - eval_K(r - h, p)) / (2 * h)
    np.testing.assert_allclose(eval_gradK_radial(r, p), dK, rtol=1e-6)
    hl = 1e-3 * r
    f = lambda x: eval_K(x, p)
    lap = (f(r + hl) - 2 * f(r) + f(r - hl)) / hl**2 + 2 / r * (f(r + hl) - f(r - hl)) / (2 * hl)
    np.testing.assert_allclose(eval_lapK(r, p), lap, rtol=1e-4)
    g = lambda x: eval_lapK(x, p)
    np.testing.assert_allclose(eval_grad_lapK_radial(r, p), (g(r + h) - g(r - h)) / (2 * h), rtol=1e-6)


def test_gradient_small_r_no_cancellation(unit):
    # series limit -r/(2 a^2) + r^2/(3 a^3)
    r = np.array([1e-8, 1e-6, 1e-4])
    np.testing.assert_allclose(eval_gradK_radial(r, unit), -0.5 + r / 3 - r**2 / 8, rtol=1e-12)


def test_laplacian_away_from_origin_is_yukawa(unit):
    # -Delta K + a^2 Delta^2 K = 0 for r > 0 means Delta K = -Y/a^2
    r = np.geomspace(0.01, 30, 25)
    np.testing.assert_allclose(eval_lapK(r, unit), -eval_Y(r, unit), rtol=1e-15)


def test_sample_record(unit):
    s = sample(2.0, unit)
    assert s.K == eval_K(2.0, unit) and s.C == 0.5
    s0 = sample(0.0, unit)
    assert s0.K == 1.0 and np.isinf(s0.C)


def test_convolution_failure_names_radius(monkeypatch, unit):
    import warnings

    from bopo import kernel

    def bad_quad(*args, **kwargs):
        warnings.warn("bad", integrate.IntegrationWarning)
        return 0.0, 0.0

    monkeypatch.setattr(kernel.integrate, "quad", bad_quad)
    with pytest.raises(RuntimeError, match="R = 2.5"):
        verify_CY_convolution(unit, [2.5])
