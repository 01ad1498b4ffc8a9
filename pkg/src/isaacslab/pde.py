"""Finite-difference solver for obstacle equations of game type.

The value fields solve

    min{ w - h, -dw/dt - H(t, x, w, Dw, D^2w) } = 0,    w(T, .) = phi,

backwards in time on a truncated box, where H scans the finite control
grids: the lower Hamiltonian maximises over the first player's grid the
minimum over the second player's, the upper Hamiltonian swaps the order.

The scheme is explicit and monotone under the recorded stability bound
``dt <= dx^2 / (n * max sigma sigma^T + 1)``: second derivatives use the
standard three-point stencil, first derivatives are central where the
diffusion dominates the drift on the cell and upwind otherwise, and the
mixed derivative (two dimensions only) uses the sign-split seven-point
stencil.  Each step evolves the previous slice and then applies either
the obstacle projection ``max(., h)`` or the semi-implicit penalty
update, at every node.  Boundary nodes follow the grid policy: linear
extrapolation from the two nearest interior nodes (default, consistent
with linear growth of the value) or freezing at the terminal data.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import CflError, PreconditionError
from .problems import (
    eval_cost_rate,
    eval_diffusion,
    eval_drift,
    eval_obstacle,
    eval_terminal,
)

BOUNDARY_POLICIES = ("linear_extrapolation", "dirichlet_terminal_extension")
HAMILTONIANS = ("lower", "upper")
INNER_FRACTION = 0.6


@dataclass(frozen=True)
class SpaceTimeGrid:
    """Truncated spatial box with a uniform time mesh over ``[0, T]``."""

    box: tuple
    nx: tuple
    nt: int
    boundary: str = "linear_extrapolation"

    def __post_init__(self):
        box = tuple((float(lo), float(hi)) for lo, hi in np.atleast_2d(self.box))
        nx = tuple(int(k) for k in np.atleast_1d(self.nx))
        object.__setattr__(self, "box", box)
        object.__setattr__(self, "nx", nx)
        if not 1 <= len(box) <= 2:
            raise ValueError("grid solves support one or two spatial dimensions")
        if len(nx) != len(box):
            raise ValueError("box and nx must agree in dimension")
        if any(k < 3 for k in nx):
            raise ValueError("need at least three points per dimension")
        if any(lo >= hi for lo, hi in box):
            raise ValueError("box bounds must satisfy lo < hi")
        if self.nt < 1:
            raise ValueError("need at least one time step")
        if self.boundary not in BOUNDARY_POLICIES:
            raise ValueError(f"boundary policy must be one of {BOUNDARY_POLICIES}")

    @property
    def ndim(self):
        return len(self.box)

    @property
    def shape(self):
        return self.nx

    def axes(self):
        return [np.linspace(lo, hi, k) for (lo, hi), k in zip(self.box, self.nx)]

    def dx(self):
        return tuple((hi - lo) / (k - 1) for (lo, hi), k in zip(self.box, self.nx))

    def nodes(self):
        """All node coordinates, C-ordered, shape (num_nodes, n)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    def interior(self):
        return tuple(slice(1, -1) for _ in self.nx)

    def interior_nodes(self):
        grid_coords = self.nodes().reshape(self.shape + (self.ndim,))
        return grid_coords[self.interior()].reshape(-1, self.ndim)

    def inner_mask(self, fraction=INNER_FRACTION):
        """Boolean mask of nodes inside the central ``fraction`` of the box."""
        masks = []
        for (lo, hi), ax in zip(self.box, self.axes()):
            mid, half = 0.5 * (lo + hi), 0.5 * fraction * (hi - lo)
            masks.append(np.abs(ax - mid) <= half + 1e-12)
        if self.ndim == 1:
            return masks[0]
        return masks[0][:, None] & masks[1][None, :]

    def with_stable_nt(self, instance):
        """Copy of the grid with the smallest stable number of time steps."""
        import dataclasses

        return dataclasses.replace(self, nt=cfl_required_nt(instance, self))


@dataclass(frozen=True)
class ValueField:
    """Value samples on a space-time grid."""

    grid: SpaceTimeGrid
    times: np.ndarray       # (nt+1,)
    slices: np.ndarray      # (nt+1, *grid.shape)
    kind: str               # "lower", "upper" or "penalized"
    penalty: Optional[float] = None
    cfl_checked: bool = True

    @property
    def horizon(self):
        return float(self.times[-1])

    @property
    def dt(self):
        return float(self.times[1] - self.times[0])

    def initial(self):
        return self.slices[0]

    def interp(self, t_index, x):
        """Value at off-grid points of one time slice (1-D grids only)."""
        if self.grid.ndim != 1:
            raise PreconditionError("interp is implemented for 1-D grids")
        ax = self.grid.axes()[0]
        return np.interp(np.asarray(x, dtype=float), ax, self.slices[t_index])


def max_diffusion_diagonal(instance, grid):
    """Largest diagonal entry of sigma sigma^T over nodes, controls, endpoints."""
    nodes = grid.nodes()
    worst = 0.0
    for t in (0.0, instance.T):
        for u in instance.u_grid.points:
            for v in instance.v_grid.points:
                sv = eval_diffusion(instance, t, nodes, u, v)
                worst = max(worst, float(np.sum(sv * sv, axis=2).max()))
    return worst


def cfl_dt_bound(instance, grid):
    """Largest stable explicit time step for this instance on this grid."""
    dx2 = min(step * step for step in grid.dx())
    return dx2 / (grid.ndim * max_diffusion_diagonal(instance, grid) + 1.0)


def cfl_required_nt(instance, grid):
    """Smallest number of time steps satisfying the stability bound."""
    bound = cfl_dt_bound(instance, grid)
    nt = int(np.ceil(instance.T / bound))
    while instance.T / nt > bound:
        nt += 1
    return nt


def cfl_ok(instance, grid):
    return instance.T / grid.nt <= cfl_dt_bound(instance, grid) * (1.0 + 1e-12)


def _differences_1d(w, dx):
    wc = w[1:-1]
    wp = w[2:]
    wm = w[:-2]
    d2 = (wp - 2.0 * wc + wm) / (dx * dx)
    central = (wp - wm) / (2.0 * dx)
    fwd = (wp - wc) / dx
    bwd = (wc - wm) / dx
    return wc, d2, central, fwd, bwd


def _differences_2d(w, dx):
    wc = w[1:-1, 1:-1]
    out = {}
    out["d2"] = (
        (w[2:, 1:-1] - 2.0 * wc + w[:-2, 1:-1]) / (dx[0] * dx[0]),
        (w[1:-1, 2:] - 2.0 * wc + w[1:-1, :-2]) / (dx[1] * dx[1]),
    )
    out["central"] = (
        (w[2:, 1:-1] - w[:-2, 1:-1]) / (2.0 * dx[0]),
        (w[1:-1, 2:] - w[1:-1, :-2]) / (2.0 * dx[1]),
    )
    out["fwd"] = (
        (w[2:, 1:-1] - wc) / dx[0],
        (w[1:-1, 2:] - wc) / dx[1],
    )
    out["bwd"] = (
        (wc - w[:-2, 1:-1]) / dx[0],
        (wc - w[1:-1, :-2]) / dx[1],
    )
    denom = 2.0 * dx[0] * dx[1]
    out["cross_plus"] = (
        2.0 * wc + w[2:, 2:] + w[:-2, :-2]
        - w[2:, 1:-1] - w[:-2, 1:-1] - w[1:-1, 2:] - w[1:-1, :-2]
    ) / denom
    out["cross_minus"] = (
        w[2:, 1:-1] + w[:-2, 1:-1] + w[1:-1, 2:] + w[1:-1, :-2]
        - 2.0 * wc - w[2:, :-2] - w[:-2, 2:]
    ) / denom
    return wc, out


def _minimax(which, pair_values):
    """Reduce an (nu, nv, m) stack of generator values to (m,)."""
    if which == "lower":
        return pair_values.min(axis=1).max(axis=0)
    return pair_values.max(axis=0).min(axis=0)


def _step_slice(which, instance, grid, t, dt, w, x_int):
    """One explicit backward step; returns updated interior values, C-ordered."""
    dx = grid.dx()
    nu, nv = len(instance.u_grid), len(instance.v_grid)
    if grid.ndim == 1:
        wc, d2, central, fwd, bwd = _differences_1d(w, dx[0])
        m = wc.size
        pair_vals = np.empty((nu, nv, m))
        for iu, up in enumerate(instance.u_grid.points):
            for iv, vp in enumerate(instance.v_grid.points):
                bv = eval_drift(instance, t, x_int, up, vp)[:, 0]
                sv = eval_diffusion(instance, t, x_int, up, vp)
                a = np.sum(sv[:, 0, :] ** 2, axis=1)
                use_central = a >= np.abs(bv) * dx[0]
                qdrift = np.where(use_central, central, np.where(bv >= 0.0, fwd, bwd))
                z = central[:, None] * sv[:, 0, :]
                fv = eval_cost_rate(instance, t, x_int, wc, z, up, vp)
                pair_vals[iu, iv] = 0.5 * a * d2 + bv * qdrift + fv
        return wc + dt * _minimax(which, pair_vals)

    wc2, diffs = _differences_2d(w, dx)
    wc = wc2.ravel()
    m = wc.size
    d2 = [arr.ravel() for arr in diffs["d2"]]
    central = [arr.ravel() for arr in diffs["central"]]
    fwd = [arr.ravel() for arr in diffs["fwd"]]
    bwd = [arr.ravel() for arr in diffs["bwd"]]
    cr_p = diffs["cross_plus"].ravel()
    cr_m = diffs["cross_minus"].ravel()
    pair_vals = np.empty((nu, nv, m))
    for iu, up in enumerate(instance.u_grid.points):
        for iv, vp in enumerate(instance.v_grid.points):
            bv = eval_drift(instance, t, x_int, up, vp)
            sv = eval_diffusion(instance, t, x_int, up, vp)
            a = np.einsum("mik,mjk->mij", sv, sv)
            second = np.zeros(m)
            drift = np.zeros(m)
            qc = np.stack(central, axis=1)
            for i in range(2):
                aii = a[:, i, i]
                second += 0.5 * aii * d2[i]
                use_central = aii >= np.abs(bv[:, i]) * dx[i]
                qdrift = np.where(use_central, central[i],
                                  np.where(bv[:, i] >= 0.0, fwd[i], bwd[i]))
                drift += bv[:, i] * qdrift
            a01 = a[:, 0, 1]
            second += a01 * np.where(a01 >= 0.0, cr_p, cr_m)
            z = np.einsum("mi,mid->md", qc, sv)
            fv = eval_cost_rate(instance, t, x_int, wc, z, up, vp)
            pair_vals[iu, iv] = second + drift + fv
    return (wc + dt * _minimax(which, pair_vals)).reshape(wc2.shape)


def _fill_boundary(w, grid, terminal_slice):
    if grid.boundary == "dirichlet_terminal_extension":
        if grid.ndim == 1:
            w[0] = terminal_slice[0]
            w[-1] = terminal_slice[-1]
        else:
            w[0, :] = terminal_slice[0, :]
            w[-1, :] = terminal_slice[-1, :]
            w[:, 0] = terminal_slice[:, 0]
            w[:, -1] = terminal_slice[:, -1]
        return
    if grid.ndim == 1:
        w[0] = 2.0 * w[1] - w[2]
        w[-1] = 2.0 * w[-2] - w[-3]
    else:
        w[0, :] = 2.0 * w[1, :] - w[2, :]
        w[-1, :] = 2.0 * w[-2, :] - w[-3, :]
        w[:, 0] = 2.0 * w[:, 1] - w[:, 2]
        w[:, -1] = 2.0 * w[:, -2] - w[:, -3]


def _solve_field(which, instance, grid, times, terminal_slice, penalty_m, cfl_checked):
    shape = grid.shape
    nodes_all = grid.nodes()
    x_int = grid.interior_nodes()
    interior = grid.interior()
    steps = len(times) - 1

    slices = np.empty((steps + 1,) + shape)
    w = np.array(terminal_slice, dtype=float)
    slices[steps] = w
    for k in range(steps - 1, -1, -1):
        t = float(times[k])
        dt = float(times[k + 1] - times[k])
        w_new = np.empty(shape)
        w_new[interior] = _step_slice(which, instance, grid, t, dt, w, x_int)
        _fill_boundary(w_new, grid, terminal_slice)
        h_k = eval_obstacle(instance, t, nodes_all).reshape(shape)
        if penalty_m is None:
            w_new = np.maximum(w_new, h_k)
        else:
            c = penalty_m * dt
            w_new = np.where(w_new < h_k, (w_new + c * h_k) / (1.0 + c), w_new)
        slices[k] = w_new
        w = w_new

    kind = which if penalty_m is None else "penalized"
    return ValueField(grid=grid, times=np.asarray(times, dtype=float).copy(),
                      slices=slices, kind=kind, penalty=penalty_m,
                      cfl_checked=cfl_checked)


def _check_cfl(instance, grid):
    if not cfl_ok(instance, grid):
        bound = cfl_dt_bound(instance, grid)
        nt = cfl_required_nt(instance, grid)
        raise CflError(
            f"explicit step dt={instance.T / grid.nt:.3e} exceeds the stability "
            f"bound {bound:.3e}; need nt >= {nt}",
            required_dt=bound, required_nt=nt,
        )


def solve_obstacle_pde(which, instance, grid, check_cfl=True):
    """Solve the obstacle equation for the lower or upper Hamiltonian.

    Steps the terminal payoff backwards with the explicit monotone
    stencil and projects onto the obstacle after every step.  Refuses to
    run when the stability bound is violated, reporting the smallest
    admissible number of time steps.
    """
    if which not in HAMILTONIANS:
        raise PreconditionError(f"which must be one of {HAMILTONIANS}")
    if check_cfl:
        _check_cfl(instance, grid)
    times = (instance.T / grid.nt) * np.arange(grid.nt + 1)
    terminal = eval_terminal(instance, grid.nodes()).reshape(grid.shape)
    return _solve_field(which, instance, grid, times, terminal, None, check_cfl)


def solve_penalized_pde(instance, grid, m, check_cfl=True):
    """Solve the penalized equation with weight ``m`` (lower Hamiltonian).

    The reflection constraint is replaced by the penalty driver term,
    applied semi-implicitly in closed form so stability is uniform in m.
    """
    if m < 0:
        raise PreconditionError("penalty weight must be nonnegative")
    if check_cfl:
        _check_cfl(instance, grid)
    times = (instance.T / grid.nt) * np.arange(grid.nt + 1)
    terminal = eval_terminal(instance, grid.nodes()).reshape(grid.shape)
    return _solve_field("lower", instance, grid, times, terminal, float(m), check_cfl)


def _hamiltonian_stack(instance, t, x, y, q, xmat):
    """Generator values for every control pair, shape (nu, nv, m)."""
    m = x.shape[0]
    nu, nv = len(instance.u_grid), len(instance.v_grid)
    vals = np.empty((nu, nv, m))
    for iu, up in enumerate(instance.u_grid.points):
        for iv, vp in enumerate(instance.v_grid.points):
            bv = eval_drift(instance, t, x, up, vp)
            sv = eval_diffusion(instance, t, x, up, vp)
            a = np.einsum("mik,mjk->mij", sv, sv)
            trace_term = 0.5 * np.einsum("mij,mij->m", a, xmat)
            drift_term = np.einsum("mi,mi->m", q, bv)
            z = np.einsum("mi,mid->md", q, sv)
            vals[iu, iv] = trace_term + drift_term + eval_cost_rate(
                instance, t, x, y, z, up, vp)
    return vals


def hamiltonian_batch(which, instance, t, x, y, q, xmat):
    """Vectorised Hamiltonian over a batch of (x, y, q, xmat) data."""
    return _minimax(which, _hamiltonian_stack(instance, t, x, y, q, xmat))


def hamiltonian_argopt(which, instance, t, x, y, q, xmat):
    """Hamiltonian values with attained optimiser indices.

    Returns ``(values, u_indices, v_indices)`` with ties broken towards
    the lowest index; the reported indices are the outer and inner
    optimisers actually attained.
    """
    vals = _hamiltonian_stack(instance, t, x, y, q, xmat)
    m = vals.shape[2]
    cols = np.arange(m)
    if which == "lower":
        inner = vals.min(axis=1)                 # (nu, m)
        inner_arg = vals.argmin(axis=1)          # (nu, m)
        iu = inner.argmax(axis=0)                # (m,)
        value = inner[iu, cols]
        iv = inner_arg[iu, cols]
    else:
        inner = vals.max(axis=0)                 # (nv, m)
        inner_arg = vals.argmax(axis=0)          # (nv, m)
        iv = inner.argmin(axis=0)
        value = inner[iv, cols]
        iu = inner_arg[iv, cols]
    return value, iu, iv


def eval_hamiltonian(which, instance, t, x, y, q, xmat):
    """Lower or upper Hamiltonian at one point.

    Parameters
    ----------
    which : str
        "lower" maximises over the first grid the minimum over the
        second; "upper" swaps the order.
    t, y : float
    x, q : array_like, shape (n,)
    xmat : array_like, shape (n, n), symmetric second-order argument.

    Returns
    -------
    (value, argmax_u, arginf_v)
    """
    if which not in HAMILTONIANS:
        raise PreconditionError(f"which must be one of {HAMILTONIANS}")
    x = np.atleast_1d(np.asarray(x, dtype=float))[None, :]
    q = np.atleast_1d(np.asarray(q, dtype=float))[None, :]
    xmat = np.atleast_2d(np.asarray(xmat, dtype=float))[None, :, :]
    yb = np.atleast_1d(float(y))
    value, iu, iv = hamiltonian_argopt(which, instance, t, x, yb, q, xmat)
    return float(value[0]), int(iu[0]), int(iv[0])


def slice_derivatives(field, k):
    """Central difference data of one slice on the interior nodes.

    Returns ``(x_int, w_int, q, xmat)`` with shapes (m, n), (m,),
    (m, n) and (m, n, n).
    """
    grid = field.grid
    w = field.slices[k]
    dx = grid.dx()
    x_int = grid.interior_nodes()
    if grid.ndim == 1:
        wc, d2, central, _, _ = _differences_1d(w, dx[0])
        q = central[:, None]
        xmat = d2[:, None, None]
        return x_int, wc, q, xmat
    wc2, diffs = _differences_2d(w, dx)
    wc = wc2.ravel()
    q = np.stack([arr.ravel() for arr in diffs["central"]], axis=1)
    cross = 0.5 * (diffs["cross_plus"] + diffs["cross_minus"]).ravel()
    m = wc.size
    xmat = np.empty((m, 2, 2))
    xmat[:, 0, 0] = diffs["d2"][0].ravel()
    xmat[:, 1, 1] = diffs["d2"][1].ravel()
    xmat[:, 0, 1] = cross
    xmat[:, 1, 0] = cross
    return x_int, wc, q, xmat


def complementarity_residual(field, instance, inner_only=False):
    """Discrete residual of the min-equation on the interior nodes.

    At each interior node evaluates
    ``r = min(w - h, -dw/dt - H(t, x, w, Dw, D2w))`` with forward time
    quotients and central space quotients.  Returns the supremum of
    ``|r|`` together with the per-slice maxima.  ``inner_only`` restricts
    the spatial maxima to the central sub-box, away from the truncation
    boundary.  Note the residual is a genuine independent measure: it
    does not vanish where the terminal data is not smooth (for a kinked
    payoff the last slices carry an O(1/dx) spike), so convergence is
    read on slices away from the terminal layer.
    """
    if field.kind not in HAMILTONIANS:
        raise PreconditionError("residuals are defined for lower/upper fields")
    grid = field.grid
    nt = len(field.times) - 1
    interior = grid.interior()
    keep = grid.inner_mask()[interior].ravel() if inner_only else slice(None)
    per_slice = np.empty(nt)
    for k in range(nt):
        t = float(field.times[k])
        dt = float(field.times[k + 1] - field.times[k])
        x_int, wc, q, xmat = slice_derivatives(field, k)
        h_int = eval_obstacle(instance, t, x_int)
        ham = hamiltonian_batch(field.kind, instance, t, x_int, wc, q, xmat)
        dwdt = (field.slices[k + 1][interior].ravel() - wc) / dt
        r = np.minimum(wc - h_int, -dwdt - ham)
        per_slice[k] = float(np.abs(r[keep]).max())
    return float(per_slice.max()), per_slice
