import math

import numpy as np
import pytest

from mvstreg.kernels import (
    SPATIAL_FAMILIES,
    matern_dnu,
    spatial_correlation,
    spatial_correlation_dphi,
    temporal_correlation,
    temporal_correlation_drho,
)


def fd(fn, x, step=1e-6):
    return (fn(x + step) - fn(x - step)) / (2.0 * step)


# ---------------------------------------------------------------------------
# correlation values


def test_zero_distance_is_one_for_all_families():
    for family in SPATIAL_FAMILIES:
        nu = 1.3 if family == "matern" else None
        assert spatial_correlation(family, 0.0, 0.9, nu) == 1.0


def test_exponential_values():
    assert spatial_correlation("exponential", 0.0, 1.0) == 1.0
    assert spatial_correlation("exponential", 2.0, 1.0) == pytest.approx(math.exp(-2.0))


def test_gaussian_at_range_is_inverse_e():
    assert spatial_correlation("gaussian", 1.3, 1.3) == pytest.approx(
        0.36787944117144233, rel=1e-12
    )


def test_spherical_cutoff():
    # zero at the support edge and beyond, including twice the range
    assert spatial_correlation("spherical", 1.0, 1.0) == 0.0
    assert spatial_correlation("spherical", 2.0, 1.0) == 0.0
    assert spatial_correlation("spherical", 0.999, 1.0) > 0.0


def test_cubic_compact_support():
    assert spatial_correlation("cubic", 2.0, 1.0) == 0.0
    assert spatial_correlation("cubic", 2.5, 1.0) == 0.0
    assert spatial_correlation("cubic", 1.999, 1.0) > 0.0


def test_matern_half_equals_exponential():
    h = np.linspace(0.0, 6.0, 25)
    for phi in (0.5, 1.2, 3.0):
        got = spatial_correlation("matern", h, phi, 0.5)
        want = np.exp(-h / phi)
        assert np.allclose(got, want, atol=1e-10)


def test_matern_increases_with_nu_toward_gaussian():
    # at small distance the correlation grows with smoothness, approaching
    # (and passing) the gaussian kernel's value from below
    h, phi = 0.3, 1.0
    nus = [0.5, 0.8, 1.2, 2.0, 4.0, 8.0]
    vals = [spatial_correlation("matern", h, phi, nu) for nu in nus]
    assert np.all(np.diff(vals) > 0.0)
    gauss = spatial_correlation("gaussian", h, phi)
    assert abs(vals[-1] - gauss) < abs(vals[0] - gauss)


def test_correlations_in_unit_interval():
    rng = np.random.default_rng(3)
    h = rng.uniform(0.0, 8.0, size=200)
    for family in SPATIAL_FAMILIES:
        nu = 1.7 if family == "matern" else None
        vals = spatial_correlation(family, h, 1.4, nu)
        assert np.all(vals >= 0.0) and np.all(vals <= 1.0)


def test_invalid_arguments():
    with pytest.raises(ValueError):
        spatial_correlation("exponential", -0.1, 1.0)
    with pytest.raises(ValueError):
        spatial_correlation("exponential", 1.0, 0.0)
    with pytest.raises(ValueError):
        spatial_correlation("matern", 1.0, 1.0, None)
    with pytest.raises(ValueError):
        spatial_correlation("matern", 1.0, 1.0, -1.0)
    with pytest.raises(ValueError):
        spatial_correlation("triangular", 1.0, 1.0)


# ---------------------------------------------------------------------------
# range derivatives


def test_dphi_zero_at_zero_distance():
    for family in SPATIAL_FAMILIES:
        nu = 1.3 if family == "matern" else None
        assert spatial_correlation_dphi(family, 0.0, 1.1, nu) == 0.0


def test_exponential_dphi_value():
    # (h / phi^2) exp(-h / phi) at h = phi = 1
    assert spatial_correlation_dphi("exponential", 1.0, 1.0) == pytest.approx(
        0.36787944117144233, rel=1e-12
    )


def test_spherical_dphi_matches_finite_difference():
    val = spatial_correlation_dphi("spherical", 0.5, 1.0)
    ref = fd(lambda p: spatial_correlation("spherical", 0.5, p), 1.0)
    assert val == pytest.approx(ref, rel=1e-6)
    assert val == pytest.approx(0.5625, rel=1e-9)


@pytest.mark.parametrize("family", SPATIAL_FAMILIES)
def test_dphi_matches_finite_difference_on_grid(family):
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 40:
        h = float(rng.uniform(0.05, 5.0))
        phi = float(rng.uniform(0.4, 3.0))
        nu = float(rng.uniform(0.6, 3.0)) if family == "matern" else None
        # keep away from the compact-support kinks
        if family == "cubic" and abs(h - 2.0 * phi) < 0.1 * phi:
            continue
        if family == "spherical" and abs(h - phi) < 0.1 * phi:
            continue
        got = spatial_correlation_dphi(family, h, phi, nu)
        ref = fd(lambda p: spatial_correlation(family, h, p, nu), phi)
        assert got == pytest.approx(ref, rel=1e-5, abs=1e-9)
        checked += 1


# ---------------------------------------------------------------------------
# smoothness derivative


def test_matern_dnu_zero_at_zero_distance():
    assert matern_dnu(0.0, 1.0, 1.5) == 0.0


def test_matern_dnu_matches_finite_difference():
    got = matern_dnu(1.0, 1.2, 1.5)
    ref = fd(lambda v: spatial_correlation("matern", 1.0, 1.2, v), 1.5, step=1e-5)
    assert got == pytest.approx(ref, rel=1e-5)


def test_matern_dnu_grid():
    rng = np.random.default_rng(12)
    for _ in range(30):
        h = float(rng.uniform(0.1, 4.0))
        phi = float(rng.uniform(0.5, 2.5))
        nu = float(rng.uniform(0.5, 3.5))
        got = matern_dnu(h, phi, nu)
        ref = fd(lambda v: spatial_correlation("matern", h, phi, v), nu, step=1e-5)
        assert got == pytest.approx(ref, rel=1e-5, abs=1e-8)


def test_matern_dnu_finite_and_continuous_in_nu():
    nus = np.linspace(0.6, 2.5, 40)
    vals = np.array([matern_dnu(0.15, 1.0, nu) for nu in nus])
    assert np.all(np.isfinite(vals))
    assert np.max(np.abs(np.diff(vals))) < 0.1


def test_matern_dnu_underflow_guard():
    # far beyond the effective range K_nu underflows; the derivative is 0
    assert matern_dnu(500.0, 0.1, 2.0) == 0.0


# ---------------------------------------------------------------------------
# temporal kernel


def test_temporal_correlation_values():
    assert temporal_correlation(4, 4, 0.3) == 1.0
    assert temporal_correlation(2, 1, 0.7) == pytest.approx(0.7)
    assert temporal_correlation(5, 2, 0.5) == pytest.approx(0.125)
    assert temporal_correlation(3, 1, -0.5) == pytest.approx(0.25)


def test_temporal_drho_values():
    assert temporal_correlation_drho(2, 2, 0.4) == 0.0
    assert temporal_correlation_drho(3, 2, 0.9) == 1.0
    assert temporal_correlation_drho(3, 1, 0.7) == pytest.approx(1.4)


def test_temporal_drho_matches_finite_difference():
    for lag in (1, 2, 5):
        for rho in (-0.6, 0.2, 0.85):
            got = temporal_correlation_drho(1 + lag, 1, rho)
            ref = fd(lambda r: temporal_correlation(1 + lag, 1, r), rho)
            assert got == pytest.approx(ref, rel=1e-6, abs=1e-9)


def test_temporal_rejects_unit_rho():
    with pytest.raises(ValueError):
        temporal_correlation(1, 2, 1.0)
    with pytest.raises(ValueError):
        temporal_correlation_drho(1, 2, -1.0)
