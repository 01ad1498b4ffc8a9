"""Game-level checks: values, Isaacs gap, dynamic programming, convergence."""

import dataclasses

import numpy as np
import pytest

from isaacslab.analysis import (
    response_feedback,
    dpp_residual,
    feedback_from_field,
    isaacs_gap,
    lower_value,
    penalization_convergence,
    time_continuity_profile,
    upper_value,
    value_comparison,
)
from isaacslab.errors import FitError, PreconditionError
from isaacslab.pde import SpaceTimeGrid, cfl_required_nt
from isaacslab.problems import builtin_instance
from isaacslab.rbsde import RegressionBasis, cost_functional
from isaacslab.sde import ControlPath, TimeMesh

from conftest import make_instance


def sized(instance, box, nx):
    grid = SpaceTimeGrid(box=box, nx=nx, nt=1)
    return dataclasses.replace(grid, nt=cfl_required_nt(instance, grid))


def test_singleton_controls_make_both_values_identical():
    inst = builtin_instance("american_put")
    grid = sized(inst, ((20.0, 300.0),), (71,))
    low = lower_value(inst, grid)
    up = upper_value(inst, grid)
    np.testing.assert_array_equal(low.slices, up.slices)
    assert value_comparison(low, up) == (0.0, 0.0)


def test_minimax_gap_orders_the_values_with_strict_gap():
    inst = builtin_instance("minimax_gap")
    grid = sized(inst, ((-2.0, 2.0),), (41,))
    low, up = lower_value(inst, grid), upper_value(inst, grid)
    violation, gap = value_comparison(low, up)
    assert violation <= 1e-12
    # the two-point bilinear cost accumulates an exact 2 dt gap per step
    assert gap == pytest.approx(2.0, abs=1e-12)
    mask = grid.inner_mask()
    assert (up.slices[0][mask] - low.slices[0][mask]).max() > 1.0


def test_gap_propagates_one_step_at_rate_two_dt():
    # brute-force check on a coarse grid: after j steps the gap is 2 j dt
    inst = builtin_instance("minimax_gap")
    grid = SpaceTimeGrid(box=((-2.0, 2.0),), nx=(11,), nt=20)
    low, up = lower_value(inst, grid), upper_value(inst, grid)
    dt = low.dt
    for j in (1, 2, 5):
        diff = up.slices[grid.nt - j] - low.slices[grid.nt - j]
        np.testing.assert_allclose(diff, 2.0 * j * dt, atol=1e-13)


def test_value_comparison_requires_matching_grids():
    inst = builtin_instance("minimax_gap")
    g1 = sized(inst, ((-2.0, 2.0),), (41,))
    g2 = sized(inst, ((-2.0, 2.0),), (21,))
    with pytest.raises(PreconditionError):
        value_comparison(lower_value(inst, g1), lower_value(inst, g2))


def test_isaacs_gap_samples():
    zero_sample = [(0.0, [0.0], 0.0, [0.0], [[0.0]])]
    assert isaacs_gap(builtin_instance("american_put"),
                      [(0.0, [100.0], 1.0, [0.5], [[0.01]])]) == 0.0
    assert isaacs_gap(builtin_instance("minimax_gap"), zero_sample) == 2.0


def test_isaacs_gap_zero_for_separable_costs(rng):
    # separable cost with control-free dynamics: max-min equals min-max,
    # verified against an exhaustive scan over both control grids
    inst = make_instance(
        u_points=[[-1.0], [0.5]], v_points=[[-1.0], [2.0]],
        sigma=lambda t, x, u, v: np.ones(x.shape + (1,)),
        f=lambda t, x, y, z, u, v: np.full(x.shape[0], u[0] ** 2 - 3.0 * v[0]),
    )
    for _ in range(10):
        x = rng.uniform(-2, 2, 1)
        q = rng.uniform(-1, 1, 1)
        xm = rng.uniform(-1, 1, (1, 1))
        table = np.array([[u[0] ** 2 - 3.0 * v[0] + 0.5 * xm[0, 0]
                           for v in inst.v_grid.points]
                          for u in inst.u_grid.points])
        brute = table.min(axis=1).max() - table.max(axis=0).min()
        assert brute == 0.0
        assert isaacs_gap(inst, [(0.0, x, 0.0, q, xm)]) <= 1e-14


@pytest.mark.parametrize("name,box,nx", [
    ("american_put", ((20.0, 300.0),), (71,)),
    ("minimax_gap", ((-2.0, 2.0),), (41,)),
    ("no_obstacle_linear", ((-1.0, 1.0),), (21,)),
    ("deterministic_stop", ((-1.0, 1.0),), (21,)),
    ("lemma45", ((-1.0, 1.0),), (21,)),
])
def test_dpp_residual_vanishes_on_builtins(name, box, nx):
    inst = builtin_instance(name)
    grid = sized(inst, box, nx)
    field = lower_value(inst, grid)
    for t_frac, d_frac in ((0.0, 0.5), (0.25, 0.25), (0.5, 0.3)):
        t_index = int(round(t_frac * grid.nt))
        steps = max(1, int(round(d_frac * grid.nt)))
        steps = min(steps, grid.nt - t_index)
        report = dpp_residual(field, inst, t_index, steps)
        assert report.max_residual <= 1e-10


def test_dpp_residual_zero_steps_is_exactly_zero():
    inst = builtin_instance("deterministic_stop")
    grid = SpaceTimeGrid(box=((-1.0, 1.0),), nx=(21,), nt=100)
    field = lower_value(inst, grid)
    report = dpp_residual(field, inst, 40, 0)
    assert report.max_residual == 0.0


def test_dpp_residual_index_bounds():
    inst = builtin_instance("deterministic_stop")
    grid = SpaceTimeGrid(box=((-1.0, 1.0),), nx=(21,), nt=200)
    field = lower_value(inst, grid)
    with pytest.raises(PreconditionError):
        dpp_residual(field, inst, 150, 100)


def test_penalization_convergence_slack_obstacle_gaps_vanish():
    inst = builtin_instance("no_obstacle_linear", {"c0": 1.0, "c1": 0.0})
    grid = sized(inst, ((-1.0, 1.0),), (21,))
    table = penalization_convergence(inst, grid, (1.0, 4.0, 16.0))
    assert table.monotone_ok
    assert max(table.sup_gaps) <= 1e-10


def test_penalization_convergence_schedule_must_increase():
    inst = builtin_instance("deterministic_stop")
    grid = SpaceTimeGrid(box=((-1.0, 1.0),), nx=(11,), nt=100)
    with pytest.raises(PreconditionError):
        penalization_convergence(inst, grid, (4.0, 1.0))


def test_time_continuity_exact_affine_profiles():
    inst = builtin_instance("no_obstacle_linear", {"c0": 1.0, "c1": 0.0})
    grid = sized(inst, ((-1.0, 1.0),), (21,))
    field = lower_value(inst, grid)
    fit = time_continuity_profile(field, [0.0], (0.2, 0.1, 0.05, 0.025))
    assert fit.exponent == pytest.approx(1.0, abs=1e-6)
    assert fit.constant == pytest.approx(1.0, rel=1e-4)

    inst2 = builtin_instance("deterministic_stop")
    grid2 = SpaceTimeGrid(box=((-1.0, 1.0),), nx=(21,), nt=400)
    field2 = lower_value(inst2, grid2)
    fit2 = time_continuity_profile(field2, [0.0], (0.2, 0.1, 0.05, 0.025),
                                   instance=inst2)
    assert fit2.exponent == pytest.approx(1.0, abs=1e-6)
    # the obstacle itself moves at the same affine rate
    assert fit2.obstacle_moduli[0] == pytest.approx(0.2, abs=1e-9)


def test_time_continuity_needs_three_deltas():
    inst = builtin_instance("deterministic_stop")
    grid = SpaceTimeGrid(box=((-1.0, 1.0),), nx=(11,), nt=100)
    field = lower_value(inst, grid)
    with pytest.raises(FitError):
        time_continuity_profile(field, [0.0], (0.1, 0.05))


def test_feedback_controls_recover_game_value():
    # optimal feedback pair read off the lower field reproduces the value
    inst = builtin_instance("minimax_gap")
    grid = sized(inst, ((-2.0, 2.0),), (41,))
    field = lower_value(inst, grid)
    u_fb, v_fb = feedback_from_field(field, inst)
    value = cost_functional(inst, 0.0, np.zeros(1), u_fb, v_fb,
                            TimeMesh(0.0, 1.0, 50), paths=64,
                            basis=RegressionBasis(2), seed=5)
    assert value == pytest.approx(field.interp(0, 0.0), abs=0.05)


def test_feedback_is_sandwiched_by_fixed_controls():
    # playing any fixed first-player control against the best response
    # cannot beat the value
    inst = builtin_instance("minimax_gap")
    grid = sized(inst, ((-2.0, 2.0),), (41,))
    field = lower_value(inst, grid)
    w0 = field.interp(0, 0.0)
    for iu in (0, 1):
        v_fb = response_feedback(field, inst, iu)
        value = cost_functional(inst, 0.0, np.zeros(1), ControlPath.constant(iu),
                                v_fb, TimeMesh(0.0, 1.0, 50), paths=64,
                                basis=RegressionBasis(2), seed=6)
        assert value <= w0 + 0.05
