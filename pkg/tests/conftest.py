"""Shared builders for the test suite."""

import numpy as np
import pytest

from isaacslab.problems import Coefficients, ControlGrid, GameInstance


def make_instance(n=1, d=1, horizon=1.0, b=None, sigma=None, f=None, phi=None,
                  h=None, u_points=None, v_points=None, lipschitz=1.0, growth=10.0,
                  label="custom"):
    """Custom game instance with sensible zero defaults."""
    coeffs = Coefficients(
        b=b or (lambda t, x, u, v: np.zeros_like(x)),
        sigma=sigma or (lambda t, x, u, v: np.zeros(x.shape + (d,))),
        f=f or (lambda t, x, y, z, u, v: np.zeros(x.shape[0])),
        phi=phi or (lambda x: np.zeros(x.shape[0])),
        h=h or (lambda t, x: np.full(x.shape[0], -1e6)),
        declared_lipschitz=lipschitz,
        declared_growth=growth,
    )
    u_grid = ControlGrid(np.atleast_2d(u_points), "u") if u_points is not None \
        else ControlGrid.singleton()
    v_grid = ControlGrid(np.atleast_2d(v_points), "v") if v_points is not None \
        else ControlGrid.singleton()
    return GameInstance(n=n, d=d, T=horizon, coeffs=coeffs,
                        u_grid=u_grid, v_grid=v_grid, label=label)


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
