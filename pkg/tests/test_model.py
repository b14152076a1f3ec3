import numpy as np
import pytest

from mvstreg import (
    CoefficientStructure,
    CovarianceParams,
    CovarianceSpec,
    DataError,
    Dataset,
    FitOptions,
    SpaceTimeLayout,
    augment_covariates,
)

from conftest import random_layout


def make_layout(n_loc=5, n_time=12):
    locs = [(f"s{i}", float(i), 0.0) for i in range(n_loc)]
    return SpaceTimeLayout(locs, tuple(range(1, n_time + 1)))


# ---------------------------------------------------------------------------
# layout and column mapping


def test_column_index_corners():
    layout = make_layout(5, 12)
    assert layout.column_index(1, 1) == 1
    assert layout.column_index(2, 1) == 13
    assert layout.column_index(5, 12) == 60
    assert layout.n_columns == 60


def test_column_index_round_trip(rng):
    for _ in range(5):
        n_loc = int(rng.integers(1, 7))
        n_time = int(rng.integers(1, 9))
        layout = random_layout(rng, n_loc, n_time)
        seen = set()
        for loc in range(1, n_loc + 1):
            for t in range(1, n_time + 1):
                j = layout.column_index(loc, t)
                assert layout.location_time(j) == (loc, t)
                seen.add(j)
        assert seen == set(range(1, n_loc * n_time + 1))


def test_column_index_bounds():
    layout = make_layout(2, 3)
    with pytest.raises(IndexError):
        layout.column_index(0, 1)
    with pytest.raises(IndexError):
        layout.column_index(1, 4)
    with pytest.raises(IndexError):
        layout.location_time(7)


def test_layout_validation():
    with pytest.raises(DataError):
        SpaceTimeLayout([("a", 0, 0), ("a", 1, 0)], (1, 2))
    with pytest.raises(DataError):
        SpaceTimeLayout([("a", np.inf, 0)], (1,))
    with pytest.raises(DataError):
        SpaceTimeLayout([("a", 0, 0)], (2, 1))
    with pytest.raises(DataError):
        SpaceTimeLayout([], (1,))


def test_dataset_validation():
    layout = make_layout(2, 3)
    y = np.zeros((2, 6))
    with pytest.raises(DataError):
        Dataset(y=y, x=np.zeros((1, 5)), layout=layout)
    with pytest.raises(DataError):
        Dataset(y=np.full((2, 6), np.nan), x=np.zeros((1, 6)), layout=layout)
    ds = Dataset(y=y, x=np.ones((1, 6)), layout=layout)
    assert ds.n_responses == 2 and ds.n_covariates == 1 and ds.n_columns == 6
    with pytest.raises(ValueError):
        ds.y[0, 0] = 1.0  # stored arrays are read-only


# ---------------------------------------------------------------------------
# coefficient structures


def test_free_parameter_counts():
    assert CoefficientStructure("dense").n_free(3, 4) == 12
    assert CoefficientStructure("diagonal").n_free(3, 3) == 3
    assert CoefficientStructure("identity").n_free(3, 3) == 0
    mask = np.array([[1, 0, 1], [0, 1, 0], [1, 0, 0]], dtype=bool)
    assert CoefficientStructure("sparse", mask=mask).n_free(3, 3) == 4
    blocks = (((1, 2), (1, 2)), ((3, 4), (3, 3)))
    assert CoefficientStructure("block", blocks=blocks).n_free(4, 3) == 6


def test_block_free_mask_layout():
    blocks = (((1, 2), (1, 2)), ((3, 4), (3, 3)))
    mask = CoefficientStructure("block", blocks=blocks).free_mask(4, 3)
    want = np.array(
        [[1, 1, 0], [1, 1, 0], [0, 0, 1], [0, 0, 1]], dtype=bool
    )
    assert np.array_equal(mask, want)


def test_structure_validation_errors():
    with pytest.raises(DataError):
        CoefficientStructure("identity").validate(2, 3)
    with pytest.raises(DataError):
        CoefficientStructure("diagonal").validate(3, 2)
    with pytest.raises(DataError):
        CoefficientStructure("sparse", mask=np.zeros((2, 2), dtype=bool))
    with pytest.raises(DataError):
        CoefficientStructure("sparse")
    with pytest.raises(DataError):
        CoefficientStructure("wild")
    # overlapping block rows
    with pytest.raises(DataError):
        CoefficientStructure("block", blocks=(((1, 2), (1, 1)), ((2, 3), (2, 2)))).validate(3, 2)
    # rows not covered
    with pytest.raises(DataError):
        CoefficientStructure("block", blocks=(((1, 2), (1, 2)),)).validate(3, 2)
    # block outside the matrix
    with pytest.raises(DataError):
        CoefficientStructure("block", blocks=(((1, 4), (1, 2)),)).validate(3, 2)


# ---------------------------------------------------------------------------
# covariate augmentation


def test_augment_interaction_row():
    x = np.array([[1.0, 2.0], [3.0, 4.0]])
    structure = CoefficientStructure("dense", augmentation=(("interaction", 1, 2),))
    x_aug, expanded = augment_covariates(x, structure)
    assert np.array_equal(x_aug, np.array([[1.0, 2.0], [3.0, 4.0], [3.0, 8.0]]))
    assert expanded.kind == "dense"


def test_augment_power_row():
    x = np.array([[1.0, 2.0]])
    x_aug, _ = augment_covariates(
        x, CoefficientStructure("dense", augmentation=(("power", 1, 2),))
    )
    assert np.array_equal(x_aug, np.array([[1.0, 2.0], [1.0, 4.0]]))


def test_augment_intercept_row():
    x = np.array([[5.0]])
    x_aug, _ = augment_covariates(
        x, CoefficientStructure("dense", augmentation=(("intercept",),))
    )
    assert np.array_equal(x_aug, np.array([[5.0], [1.0]]))


def test_augment_empty_rules_is_identity():
    x = np.arange(6.0).reshape(2, 3)
    x_aug, structure = augment_covariates(x, CoefficientStructure("dense"))
    assert x_aug is x
    assert structure.kind == "dense"


def test_augment_ordering_deterministic():
    x = np.array([[1.0, 2.0], [2.0, 1.0]])
    rules = (("power", 2, 2), ("intercept",), ("interaction", 1, 2))
    x_aug, _ = augment_covariates(x, CoefficientStructure("dense", augmentation=rules))
    # originals, intercept, interaction, power
    want = np.array(
        [[1.0, 2.0], [2.0, 1.0], [1.0, 1.0], [2.0, 2.0], [4.0, 1.0]]
    )
    assert np.array_equal(x_aug, want)


def test_augment_expands_sparse_mask():
    x = np.array([[1.0, 2.0], [2.0, 1.0]])
    mask = np.array([[True, False], [False, True]])
    structure = CoefficientStructure(
        "sparse", mask=mask, augmentation=(("intercept",),)
    )
    x_aug, expanded = augment_covariates(x, structure)
    assert x_aug.shape == (3, 2)
    assert expanded.mask.shape == (2, 3)
    assert np.array_equal(expanded.mask[:, :2], mask)
    assert expanded.mask[:, 2].all()


def test_augment_rule_errors():
    x = np.ones((2, 3))
    with pytest.raises(DataError):
        augment_covariates(
            x,
            CoefficientStructure(
                "dense", augmentation=(("power", 1, 2), ("power", 1, 2))
            ),
        )
    with pytest.raises(DataError):
        augment_covariates(
            x, CoefficientStructure("dense", augmentation=(("power", 1, 1),))
        )
    with pytest.raises(DataError):
        augment_covariates(
            x, CoefficientStructure("dense", augmentation=(("interaction", 1, 3),))
        )
    with pytest.raises(DataError):
        CoefficientStructure("diagonal", augmentation=(("intercept",),))


# ---------------------------------------------------------------------------
# parameter containers


def test_covariance_params_validation():
    with pytest.raises(DataError):
        CovarianceParams(sigma_s2=0.0, phi_s=1.0, rho=0.0)
    with pytest.raises(DataError):
        CovarianceParams(sigma_s2=1.0, phi_s=-1.0, rho=0.0)
    with pytest.raises(DataError):
        CovarianceParams(sigma_s2=1.0, phi_s=1.0, rho=1.0)
    with pytest.raises(DataError):
        CovarianceParams(sigma_s2=1.0, phi_s=1.0, rho=0.0, nu=0.0)


def test_covariance_spec_nu_consistency():
    params = CovarianceParams(sigma_s2=1.0, phi_s=1.0, rho=0.0)
    with pytest.raises(DataError):
        CovarianceSpec("matern", params)
    with pytest.raises(DataError):
        CovarianceSpec("exponential", params.replace(nu=1.0))
    assert CovarianceSpec("matern", params.replace(nu=1.0)).n_parameters == 4
    assert CovarianceSpec("gaussian", params).n_parameters == 3


def test_fit_options_validation():
    with pytest.raises(DataError):
        FitOptions(max_iter=0)
    with pytest.raises(DataError):
        FitOptions(tol_loglik=0.0)
    with pytest.raises(DataError):
        FitOptions(rho_bounds=(0.9, 0.1))
    with pytest.raises(DataError):
        FitOptions(init="fancy")
    assert FitOptions().max_iter == 200
