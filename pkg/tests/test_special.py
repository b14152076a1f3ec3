import numpy as np
import pytest

from mvstreg.special import bessel_k, chi_square_quantile, digamma, gamma_ln, normal_quantile

from oracles import bessel_k_half


def test_bessel_k_half_integer_closed_forms():
    x = np.linspace(0.05, 50.0, 400)
    for order in (0.5, 1.5, 2.5):
        got = bessel_k(order, x)
        want = bessel_k_half(order, x)
        assert np.allclose(got, want, rtol=1e-10, atol=0.0)


def test_bessel_k_point_value():
    # K_{1/2}(1) = sqrt(pi/2) * exp(-1)
    assert bessel_k(0.5, 1.0) == pytest.approx(0.46106850444789445, rel=1e-10)


def test_bessel_k_negative_order_symmetry():
    x = np.array([0.3, 1.7, 9.0])
    assert np.allclose(bessel_k(-1.5, x), bessel_k(1.5, x), rtol=1e-12)


def test_bessel_k_domain():
    with pytest.raises(ValueError):
        bessel_k(1.0, 0.0)
    with pytest.raises(ValueError):
        bessel_k(1.0, -2.0)


def test_digamma_euler_mascheroni():
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-12)


def test_digamma_recurrence():
    # psi(x + 1) = psi(x) + 1/x
    for x in (0.3, 1.7, 4.2):
        assert digamma(x + 1.0) == pytest.approx(digamma(x) + 1.0 / x, rel=1e-12)


def test_gamma_ln_factorials():
    assert gamma_ln(5.0) == pytest.approx(np.log(24.0), rel=1e-14)
    assert gamma_ln(1.0) == 0.0


def test_chi_square_quantile_reference_value():
    assert chi_square_quantile(0.95, 3) == pytest.approx(7.8147, abs=5e-4)


def test_chi_square_quantile_round_trip():
    from scipy.special import gammainc

    for p, k in ((0.5, 1), (0.975, 3), (0.99, 120), (0.005, 10)):
        q = chi_square_quantile(p, k)
        assert gammainc(k / 2.0, q / 2.0) == pytest.approx(p, abs=1e-12)


def test_chi_square_quantile_domain():
    with pytest.raises(ValueError):
        chi_square_quantile(0.0, 3)
    with pytest.raises(ValueError):
        chi_square_quantile(0.5, 0)


def test_normal_quantile():
    assert normal_quantile(0.975) == pytest.approx(1.959963984540054, abs=1e-12)
    assert normal_quantile(0.5) == 0.0
