import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mvstreg import CovarianceParams, Dataset, SpaceTimeLayout


@pytest.fixture
def rng():
    return np.random.default_rng(20240)


def random_layout(rng, n_loc, n_time, side=8.0):
    """Random distinct planar locations with integer time labels."""
    while True:
        coords = rng.uniform(0.0, side, size=(n_loc, 2))
        diffs = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
        if n_loc == 1 or diffs[np.triu_indices(n_loc, 1)].min() > 1e-3:
            break
    locations = [(f"u{i}", coords[i, 0], coords[i, 1]) for i in range(n_loc)]
    return SpaceTimeLayout(locations, tuple(range(1, n_time + 1)))


def random_params(rng, matern=False):
    return CovarianceParams(
        sigma_s2=float(rng.uniform(0.5, 2.0)),
        phi_s=float(rng.uniform(0.8, 2.5)),
        rho=float(rng.uniform(-0.5, 0.8)),
        nu=float(rng.uniform(0.7, 2.5)) if matern else None,
    )


def random_dataset(rng, p, q, layout):
    y = rng.standard_normal((p, layout.n_columns))
    x = rng.standard_normal((q, layout.n_columns))
    return Dataset(y=y, x=x, layout=layout)
