import math

import numpy as np
import pytest

from mvstreg import NumericalError
from mvstreg.covariance import (
    CholeskyFactor,
    build_spatial_correlation,
    build_spatial_correlation_dphi,
    build_temporal_correlation,
    build_temporal_correlation_drho,
    distance_matrix,
    kron_apply,
    kron_solve,
)

from oracles import random_spd


def test_distance_matrix_basic():
    coords = np.array([[0.0, 0.0], [3.0, 4.0], [0.0, 1.0]])
    h = distance_matrix(coords)
    assert h[0, 1] == pytest.approx(5.0)
    assert h[0, 2] == pytest.approx(1.0)
    assert np.allclose(h, h.T)
    assert np.all(np.diag(h) == 0.0)


def test_distance_matrix_triangle_inequality(rng):
    coords = rng.uniform(0, 10, size=(6, 2))
    h = distance_matrix(coords)
    for i in range(6):
        for j in range(6):
            for k in range(6):
                assert h[i, j] <= h[i, k] + h[k, j] + 1e-12


def test_spatial_matrix_single_location():
    r = build_spatial_correlation(np.zeros((1, 1)), "exponential", 1.0)
    assert np.array_equal(r, np.eye(1))


def test_spatial_matrix_line_of_three():
    coords = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    r = build_spatial_correlation(distance_matrix(coords), "exponential", 1.0)
    assert r[0, 1] == pytest.approx(math.exp(-1.0), rel=1e-12)
    assert r[0, 2] == pytest.approx(math.exp(-2.0), rel=1e-12)
    assert np.all(np.diag(r) == 1.0)
    CholeskyFactor(r)  # positive definite


def test_coincident_points_flagged_singular():
    coords = np.array([[1.0, 1.0], [1.0, 1.0]])
    r = build_spatial_correlation(distance_matrix(coords), "exponential", 1.0)
    assert np.allclose(r, np.ones((2, 2)))
    with pytest.raises(NumericalError, match="not positive definite"):
        CholeskyFactor(r)


def test_correlation_matrices_factorize(rng):
    for family in ("exponential", "gaussian", "cubic", "spherical", "matern"):
        nu = 1.4 if family == "matern" else None
        coords = rng.uniform(0, 10, size=(8, 2))
        r = build_spatial_correlation(distance_matrix(coords), family, 1.3, nu)
        assert np.all(np.diag(r) == 1.0)
        assert np.all(np.abs(r) <= 1.0 + 1e-12)
        CholeskyFactor(r, jitter=True)


def test_temporal_matrix_values():
    assert np.array_equal(build_temporal_correlation(1, 0.7), np.eye(1))
    r2 = build_temporal_correlation(2, 0.7)
    assert np.allclose(r2, np.array([[1.0, 0.7], [0.7, 1.0]]))
    assert np.array_equal(build_temporal_correlation(3, 0.0), np.eye(3))
    r4 = build_temporal_correlation(4, -0.5)
    assert r4[0, 3] == pytest.approx(-0.125)


def test_temporal_drho_matrix():
    d = build_temporal_correlation_drho(3, 0.7)
    assert np.all(np.diag(d) == 0.0)
    assert d[0, 1] == pytest.approx(1.0)
    assert d[0, 2] == pytest.approx(1.4)


def test_spatial_dphi_matrix_zero_diagonal(rng):
    coords = rng.uniform(0, 5, size=(5, 2))
    d = build_spatial_correlation_dphi(distance_matrix(coords), "gaussian", 1.1)
    assert np.all(np.diag(d) == 0.0)
    assert np.allclose(d, d.T)


# ---------------------------------------------------------------------------
# Cholesky policy


def test_cholesky_logdet_and_solve(rng):
    a = random_spd(rng, 5)
    c = CholeskyFactor(a)
    assert c.log_det == pytest.approx(np.linalg.slogdet(a)[1], rel=1e-12)
    b = rng.standard_normal((5, 3))
    assert np.allclose(c.solve(b), np.linalg.solve(a, b), atol=1e-10)


def test_cholesky_jitter_policy():
    bad = np.array([[1.0, 1.0], [1.0, 1.0]])
    with pytest.raises(NumericalError):
        CholeskyFactor(bad, jitter=False)
    # the capped escalation makes the factorization succeed for this
    # borderline case, which is exactly what opting in requests
    CholeskyFactor(bad, jitter=True)
    truly_bad = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(NumericalError, match="after jitter"):
        CholeskyFactor(truly_bad, jitter=True)


# ---------------------------------------------------------------------------
# Kronecker operations


def test_kron_apply_identity(rng):
    m = rng.standard_normal((3, 6))
    out = kron_apply(np.eye(2), np.eye(3), m)
    assert np.allclose(out, m)


def test_kron_apply_matches_dense(rng):
    for n_loc, n_time in ((2, 2), (3, 4), (4, 3)):
        a = random_spd(rng, n_loc)
        b = random_spd(rng, n_time)
        m = rng.standard_normal((2, n_loc * n_time))
        assert np.allclose(kron_apply(a, b, m), m @ np.kron(a, b), atol=1e-10)


def test_kron_solve_identity(rng):
    m = rng.standard_normal((2, 4))
    out = kron_solve(CholeskyFactor(np.eye(2)), CholeskyFactor(np.eye(2)), m)
    assert np.allclose(out, m)


def test_kron_solve_scalar_inverse(rng):
    m = rng.standard_normal((3, 4))
    out = kron_solve(CholeskyFactor(2.0 * np.eye(2)), CholeskyFactor(np.eye(2)), m)
    assert np.allclose(out, m / 2.0)


def test_kron_solve_matches_dense_oracle(rng):
    for n_loc, n_time in ((2, 2), (3, 4), (4, 4)):
        a = random_spd(rng, n_loc)
        b = random_spd(rng, n_time)
        m = rng.standard_normal((3, n_loc * n_time))
        want = m @ np.linalg.inv(np.kron(a, b))
        got = kron_solve(CholeskyFactor(a), CholeskyFactor(b), m)
        assert np.allclose(got, want, atol=1e-10)
