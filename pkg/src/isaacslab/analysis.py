"""Game-level quantities and structural checks.

Lower and upper value functions are computed through the obstacle
equation with the corresponding Hamiltonian.  The checks in this module
express the structural facts the solvers are expected to reproduce:
the one-step re-solve identity of dynamic programming, monotone
convergence of penalized fields, the lower-vs-upper comparison, and
time-regularity fits.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np

from .errors import FitError, PreconditionError
from .pde import (
    _hamiltonian_stack,
    _solve_field,
    hamiltonian_argopt,
    hamiltonian_batch,
    slice_derivatives,
    solve_obstacle_pde,
    solve_penalized_pde,
)
from .problems import eval_obstacle
from .sde import ControlPath


@dataclass(frozen=True)
class DppReport:
    """Residuals of the one-step dynamic-programming re-solve."""

    t: float
    delta: float
    sample_points: np.ndarray
    residuals: np.ndarray
    max_residual: float


@dataclass(frozen=True)
class ConvergenceTable:
    """Penalized fields against the reflected reference field."""

    m_schedule: tuple
    sup_gaps: tuple
    monotone_ok: bool
    max_monotone_violation: float


@dataclass(frozen=True)
class TimeContinuityFit:
    """Log-log fit of the time modulus of a value field."""

    exponent: float
    constant: float
    deltas: tuple
    moduli: tuple
    obstacle_moduli: tuple


def lower_value(instance, grid):
    """Lower value field (max-min Hamiltonian) on the grid."""
    return solve_obstacle_pde("lower", instance, grid)


def upper_value(instance, grid):
    """Upper value field (min-max Hamiltonian) on the grid."""
    return solve_obstacle_pde("upper", instance, grid)


def isaacs_gap(instance, sample_points):
    """Largest upper-minus-lower Hamiltonian gap over the samples.

    ``sample_points`` is an iterable of ``(t, x, y, q, xmat)`` tuples.
    The gap is nonnegative; a zero gap over representative samples
    certifies that both equations coincide there.
    """
    worst = 0.0
    for t, x, y, q, xmat in sample_points:
        x = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
        q = np.atleast_1d(np.asarray(q, dtype=float))[None, :]
        xmat = np.atleast_2d(np.asarray(xmat, dtype=float))[None, :, :]
        yb = np.atleast_1d(float(y))
        low = hamiltonian_batch("lower", instance, t, x, yb, q, xmat)[0]
        up = hamiltonian_batch("upper", instance, t, x, yb, q, xmat)[0]
        worst = max(worst, float(up - low))
    return worst


def dpp_residual(field, instance, t_index, delta_steps):
    """Re-solve the field over ``delta_steps`` and compare at ``t_index``.

    The equation is solved again on ``[t, t + delta]`` only, with
    terminal data taken from the field's slice at ``t + delta``; the
    result is compared with the stored slice at ``t`` on the inner
    sample nodes.  The one-step map composes exactly, so the residual is
    zero up to floating-point noise for any self-consistent field.
    """
    if field.kind not in ("lower", "upper"):
        raise PreconditionError("dynamic-programming residuals need a lower/upper field")
    nt = len(field.times) - 1
    if t_index < 0 or delta_steps < 0 or t_index + delta_steps > nt:
        raise PreconditionError(
            f"index out of range: t_index={t_index}, delta_steps={delta_steps}, nt={nt}"
        )
    grid = field.grid
    mask = grid.inner_mask()
    points = grid.nodes().reshape(grid.shape + (grid.ndim,))[mask]
    base = field.slices[t_index][mask]
    if delta_steps == 0:
        residuals = np.zeros_like(base)
    else:
        sub_times = field.times[t_index : t_index + delta_steps + 1]
        terminal = field.slices[t_index + delta_steps]
        redo = _solve_field(field.kind, instance, grid, sub_times, terminal,
                            None, field.cfl_checked)
        residuals = np.abs(redo.slices[0][mask] - base)
    delta = float(field.times[t_index + delta_steps] - field.times[t_index])
    return DppReport(t=float(field.times[t_index]), delta=delta,
                     sample_points=points, residuals=residuals,
                     max_residual=float(residuals.max()))


def penalization_convergence(instance, grid, m_schedule):
    """Solve the penalized equation along ``m_schedule`` and compare.

    Checks nodewise monotonicity in the penalty weight and reports the
    sup-norm gaps to the reflected reference field over the inner
    sub-box (all time slices).
    """
    m_schedule = tuple(float(m) for m in m_schedule)
    if any(b <= a for a, b in zip(m_schedule, m_schedule[1:])):
        raise PreconditionError("m_schedule must be strictly increasing")
    reference = solve_obstacle_pde("lower", instance, grid)
    mask = grid.inner_mask()
    gaps = []
    worst_violation = 0.0
    previous = None
    for m in m_schedule:
        fld = solve_penalized_pde(instance, grid, m)
        if previous is not None:
            worst_violation = max(worst_violation,
                                  float((previous.slices - fld.slices).max()))
        previous = fld
        gaps.append(float(np.abs(reference.slices[:, mask] - fld.slices[:, mask]).max()))
    return ConvergenceTable(m_schedule=m_schedule, sup_gaps=tuple(gaps),
                            monotone_ok=worst_violation <= 1e-12,
                            max_monotone_violation=worst_violation)


def value_comparison(lower, upper):
    """Nodewise comparison of a lower and an upper field.

    Returns ``(max_violation, max_gap)`` where the violation is the
    largest positive part of lower-minus-upper and the gap the largest
    upper-minus-lower, over every node and slice.
    """
    if lower.grid != upper.grid or len(lower.times) != len(upper.times):
        raise PreconditionError("fields must share one grid")
    diff = lower.slices - upper.slices
    return float(max(diff.max(), 0.0)), float(max(-diff.min(), 0.0))


def time_continuity_profile(field, x_samples, delta_schedule, t_window=None,
                            instance=None):
    """Fit the time modulus ``max_x |w(t, x) - w(t + delta, x)| ~ C delta^e``.

    ``delta_schedule`` entries are snapped to whole numbers of grid
    steps; ``t_window`` restricts the base times ``t``.  When
    ``instance`` is supplied the obstacle's own modulus over the same
    time pairs is reported alongside (relevant for time-dependent
    obstacles, where the clean rate does not apply).
    """
    deltas = tuple(float(d) for d in delta_schedule)
    if len(deltas) < 3:
        raise FitError("need at least three deltas for a modulus fit")
    grid = field.grid
    if grid.ndim != 1:
        raise PreconditionError("time modulus fit is implemented for 1-D grids")
    ax = grid.axes()[0]
    idx = np.unique(np.clip(np.searchsorted(ax, np.asarray(x_samples, dtype=float)),
                            0, len(ax) - 1))
    dt = field.dt
    nt = len(field.times) - 1
    lo_t, hi_t = (0.0, field.horizon) if t_window is None else t_window
    base = [k for k in range(nt + 1) if lo_t - 1e-12 <= field.times[k] <= hi_t + 1e-12]
    if not base:
        raise FitError("empty time window")

    used_deltas, moduli, obstacle_moduli = [], [], []
    for delta in deltas:
        j = max(1, int(round(delta / dt)))
        ks = [k for k in base if k + j <= nt]
        if not ks:
            continue
        mod = 0.0
        obs = 0.0
        x_pts = ax[idx][:, None]
        for k in ks:
            w_lo = field.slices[k][idx]
            w_hi = field.slices[k + j][idx]
            mod = max(mod, float(np.abs(w_hi - w_lo).max()))
            if instance is not None:
                h_lo = eval_obstacle(instance, float(field.times[k]), x_pts)
                h_hi = eval_obstacle(instance, float(field.times[k + j]), x_pts)
                obs = max(obs, float(np.abs(h_hi - h_lo).max()))
        used_deltas.append(j * dt)
        moduli.append(mod)
        obstacle_moduli.append(obs)
    if len(used_deltas) < 3:
        raise FitError("need at least three usable deltas inside the window")
    logd = np.log(np.asarray(used_deltas))
    logm = np.log(np.maximum(np.asarray(moduli), 1e-300))
    slope, intercept = np.polyfit(logd, logm, 1)
    return TimeContinuityFit(exponent=float(slope), constant=float(np.exp(intercept)),
                             deltas=tuple(used_deltas), moduli=tuple(moduli),
                             obstacle_moduli=tuple(obstacle_moduli))


def feedback_from_field(field, instance):
    """Feedback controls read off the field's Hamiltonian optimisers.

    Returns a pair of :class:`ControlPath` feedback controls.  Queries
    snap to the nearest time slice and nearest interior node, form the
    central difference data there and report the attained maximiser and
    minimiser indices.
    """
    if field.kind not in ("lower", "upper"):
        raise PreconditionError("feedback extraction needs a lower/upper field")
    grid = field.grid
    if grid.ndim != 1:
        raise PreconditionError("feedback extraction is implemented for 1-D grids")
    ax = grid.axes()[0]
    lo, dx = ax[0], grid.dx()[0]
    nt = len(field.times) - 1
    dt = field.dt
    cache = {}

    def _slice_data(k):
        if k not in cache:
            x_int, wc, q, xmat = slice_derivatives(field, k)
            cache[k] = (x_int, wc, q, xmat)
        return cache[k]

    def _policy(t, x_batch):
        k = int(np.clip(round(t / dt), 0, nt))
        x_int, wc, q, xmat = _slice_data(min(k, nt - 1) if nt > 0 else 0)
        nodes = np.clip(np.round((x_batch[:, 0] - lo) / dx).astype(int) - 1,
                        0, len(ax) - 3)
        _, iu, iv = hamiltonian_argopt(field.kind, instance, float(field.times[k]),
                                       x_int[nodes], wc[nodes], q[nodes], xmat[nodes])
        return iu, iv

    u_ctrl = ControlPath.from_feedback(lambda t, x: _policy(t, x)[0])
    v_ctrl = ControlPath.from_feedback(lambda t, x: _policy(t, x)[1])
    return u_ctrl, v_ctrl


def response_feedback(field, instance, u_index):
    """Second player's best-response feedback to a fixed first-player control.

    For the lower field this is the pointwise minimiser over the second
    grid of the generator value at the given ``u_index``; it realises the
    knowledge advantage of the responding player against any fixed
    control of the other.
    """
    if field.kind not in ("lower", "upper"):
        raise PreconditionError("response extraction needs a lower/upper field")
    grid = field.grid
    if grid.ndim != 1:
        raise PreconditionError("response extraction is implemented for 1-D grids")
    ax = grid.axes()[0]
    lo, dx = ax[0], grid.dx()[0]
    nt = len(field.times) - 1
    dt = field.dt
    cache = {}

    def _respond(t, x_batch):
        k = int(np.clip(round(t / dt), 0, nt))
        key = min(k, nt - 1) if nt > 0 else 0
        if key not in cache:
            cache[key] = slice_derivatives(field, key)
        x_int, wc, q, xmat = cache[key]
        nodes = np.clip(np.round((x_batch[:, 0] - lo) / dx).astype(int) - 1,
                        0, len(ax) - 3)
        stack = _hamiltonian_stack(instance, float(field.times[k]),
                                   x_int[nodes], wc[nodes], q[nodes], xmat[nodes])
        return stack[u_index].argmin(axis=0)

    return ControlPath.from_feedback(_respond)
