"""Instance construction, validation probing and built-in benchmarks."""

import numpy as np
import pytest

from isaacslab.errors import EvaluationError, NotFoundError
from isaacslab.problems import (
    BUILTIN_NAMES,
    Coefficients,
    ControlGrid,
    builtin_instance,
    validate_instance,
)

from conftest import make_instance


def test_control_grid_rejects_duplicates_and_empty():
    with pytest.raises(ValueError):
        ControlGrid(points=np.array([[1.0], [1.0]]))
    with pytest.raises(ValueError):
        ControlGrid(points=np.zeros((0, 1)))
    grid = ControlGrid(points=np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert len(grid) == 2 and grid.dim == 2


def test_coefficients_require_positive_declared_constants():
    with pytest.raises(ValueError):
        Coefficients(b=lambda *a: 0, sigma=lambda *a: 0, f=lambda *a: 0,
                     phi=lambda x: 0, h=lambda t, x: 0,
                     declared_lipschitz=0.0, declared_growth=1.0)


def test_validate_constant_instance_passes():
    # all-constant coefficients satisfy every bound
    inst = make_instance(
        sigma=lambda t, x, u, v: np.broadcast_to(np.eye(1), x.shape + (1,)),
        h=lambda t, x: np.full(x.shape[0], -1.0),
        lipschitz=1.0, growth=10.0,
    )
    report = validate_instance(inst, probe_count=32, seed=1)
    assert report.passed
    assert report.violations == []


def test_validate_flags_obstacle_above_terminal():
    inst = make_instance(h=lambda t, x: np.ones(x.shape[0]),
                         phi=lambda x: np.zeros(x.shape[0]))
    report = validate_instance(inst, probe_count=16, seed=2)
    assert not report.passed
    barrier = [v for v in report.violations if v[0] == "barrier:terminal"]
    # h = 1 > 0 = phi fails at every probe point
    assert len(barrier) == 16


def test_validate_flags_quadratic_cost_lipschitz():
    inst = make_instance(f=lambda t, x, y, z, u, v: x[:, 0] ** 2, lipschitz=1.0,
                         growth=60.0)
    report = validate_instance(inst, probe_count=64, seed=3,
                               probe_box=[(-5.0, 5.0)])
    bad = [v for v in report.violations if v[0] == "lipschitz:running_cost"]
    assert bad, "difference quotient 2|x| must exceed the declared bound"
    assert not report.passed
    assert report.estimated_lipschitz["running_cost"] > 1.05


def test_validate_is_deterministic():
    inst = builtin_instance("american_put")
    r1 = validate_instance(inst, probe_count=32, seed=9)
    r2 = validate_instance(inst, probe_count=32, seed=9)
    assert r1.violations == r2.violations
    assert r1.estimated_lipschitz == r2.estimated_lipschitz


@pytest.mark.parametrize("name", BUILTIN_NAMES)
def test_builtin_instances_validate(name):
    inst = builtin_instance(name)
    report = validate_instance(inst, probe_count=64, seed=5)
    assert report.passed, report.violations[:3]


def test_builtin_unknown_name_lists_valid():
    with pytest.raises(NotFoundError) as err:
        builtin_instance("nope")
    for name in BUILTIN_NAMES:
        assert name in str(err.value)


def test_builtin_rejects_unknown_params():
    with pytest.raises(ValueError):
        builtin_instance("american_put", {"strike_typo": 1.0})


def test_lemma45_driver_at_origin():
    # driver value C(|y|+|z|) - theta/2 at y = z = 0
    inst = builtin_instance("lemma45")
    val = inst.coeffs.f(0.0, np.zeros((1, 1)), np.zeros(1), np.zeros((1, 1)),
                        inst.u_grid.points[0], inst.v_grid.points[0])
    assert val[0] == pytest.approx(-0.5, abs=0)


def test_no_obstacle_linear_levels():
    inst = builtin_instance("no_obstacle_linear", {"c0": 0.0, "c1": 3.0})
    x = np.zeros((1, 1))
    assert inst.coeffs.phi(x)[0] == 3.0
    assert inst.coeffs.h(0.3, x)[0] == 2.0


def test_american_put_barrier_holds_with_equality():
    inst = builtin_instance("american_put")
    x = np.linspace(-10, 10, 31)[:, None]
    np.testing.assert_array_equal(inst.coeffs.h(inst.T, x), inst.coeffs.phi(x))


def test_minimax_gap_validates_with_unit_lipschitz():
    inst = builtin_instance("minimax_gap")
    assert inst.coeffs.declared_lipschitz >= 1.0
    assert validate_instance(inst, probe_count=32, seed=4).passed


def test_evaluation_error_carries_offending_point():
    def bad_drift(t, x, u, v):
        raise FloatingPointError("boom")

    inst = make_instance()
    object.__setattr__(inst.coeffs, "b", bad_drift)
    with pytest.raises(EvaluationError) as err:
        validate_instance(inst, probe_count=8, seed=0)
    assert err.value.point is not None
