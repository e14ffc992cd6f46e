"""Time-stepping solver for the parabolic problem on the truncated ball.

State constraints are discretized by deleting outward information at the
wall: the upwind gradient uses only inward one-sided differences there and
the Laplacian follows the configured boundary policy.  Explicit Euler and
an IMEX variant (implicit diffusion, explicit Hamiltonian) are available.

The wall develops a gradient layer whose slope scales like
((m-1) h)^(-1/(m-1)) independently of f; the CFL machinery accounts for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace as dc_replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .errors import BlowUpError, ConfigurationError
from .gridops import Grid, GridField, _axis_second_diff, upwind_slopes
from .model import ProblemSpec

_CFL_EPS = 1e-6


@dataclass(frozen=True)
class SchemeConfig:
    """Stepping mode, dt policy, horizon and snapshot plan."""

    mode: str = "explicit"            # "explicit" | "imex"
    dt: Optional[float] = None        # None: adaptive CFL; else fixed dt
    safety: float = 0.8
    max_time: float = 1.0
    snapshot_dt: Optional[float] = None
    snapshot_times: Optional[tuple] = None
    lap_policy: str = "drop"

    def __post_init__(self):
        if self.mode not in ("explicit", "imex"):
            raise ConfigurationError(f"unknown scheme mode {self.mode!r}")
        if not (0.0 < self.safety <= 1.0):
            raise ConfigurationError("safety factor must lie in (0, 1]")
        if self.max_time <= 0:
            raise ConfigurationError("max_time must be positive")
        if self.dt is not None and self.dt <= 0:
            raise ConfigurationError("fixed dt must be positive")
        for t in self.resolved_snapshots():
            if t < 0 or t > self.max_time + 1e-12:
                raise ConfigurationError("snapshot times must lie in [0, max_time]")

    def resolved_snapshots(self) -> np.ndarray:
        if self.snapshot_times is not None:
            ts = np.unique(np.asarray(self.snapshot_times, dtype=float))
        else:
            sdt = self.snapshot_dt if self.snapshot_dt is not None else self.max_time / 20.0
            ts = np.arange(0.0, self.max_time + 0.5 * sdt, sdt)
            ts[-1] = min(ts[-1], self.max_time)
        if ts[0] > 0.0:
            ts = np.concatenate([[0.0], ts])
        if ts[-1] < self.max_time - 1e-12:
            ts = np.concatenate([ts, [self.max_time]])
        return ts


@dataclass
class Trajectory:
    """Snapshots of one state-constraint evolution plus the drift series."""

    problem: ProblemSpec
    grid: Grid
    config: SchemeConfig
    snapshots: list = field(default_factory=list)      # [(t, values ndarray)]
    slope_series: list = field(default_factory=list)   # [(t, (u(xref,t)-u(xref,t-d))/d)]
    steps: int = 0

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.snapshots])

    def terminal(self):
        return self.snapshots[-1]

    def field_at(self, t: float) -> GridField:
        for tk, vals in self.snapshots:
            if abs(tk - t) <= 1e-10:
                return GridField(self.grid, vals)
        raise KeyError(f"no snapshot at t={t}")


def layer_slope(m: float, h: float) -> float:
    """Wall-layer slope scale of the discrete state constraint."""
    return ((m - 1.0) * h) ** (-1.0 / (m - 1.0))


def slope_bound_estimate(problem: ProblemSpec, grid: Grid, u0: np.ndarray) -> float:
    """A priori bound on one-sided slopes along the run (margin included)."""
    f = problem.source.evaluate(grid.coords())
    L_f = float(np.max((f - f.min()) + 2.0 * grid.dim + 1.0) ** (1.0 / problem.m))
    L_u0 = 0.0
    for axis in range(grid.dim):
        L_u0 = max(L_u0, float(np.abs(np.diff(u0, axis=axis)).max()) / grid.spacing)
    return 1.3 * max(L_f, layer_slope(problem.m, grid.spacing), L_u0)


def cfl_bound(L: float, m: float, h: float, dim: int, mode: str) -> float:
    """Largest stable dt for slope bound L (no safety factor applied)."""
    ham = h / (m * (L + _CFL_EPS) ** (m - 1.0))
    if mode == "imex":
        return ham
    return min(h * h / (2.0 * dim), ham)


class _Stepper:
    """Cached per-run machinery: source samples, masks, banded solves."""

    def __init__(self, problem: ProblemSpec, grid: Grid, config: SchemeConfig):
        self.problem = problem
        self.grid = grid
        self.config = config
        self.m = problem.m
        self.h = grid.spacing
        self.f = problem.source.evaluate(grid.coords())
        if not np.all(np.isfinite(self.f)):
            raise ConfigurationError("source term is not finite on the grid")
        self.boundary = grid.boundary_mask()
        self._banded_cache = {}

    # -- spatial pieces -------------------------------------------------

    def max_slope(self, u: np.ndarray) -> float:
        L = 0.0
        for axis in range(self.grid.dim):
            d = np.abs(np.diff(u, axis=axis))
            if d.size:
                L = max(L, float(d.max()) / self.h)
        return L

    def hamiltonian(self, u: np.ndarray) -> np.ndarray:
        sq = None
        for axis in range(self.grid.dim):
            minus, plus = upwind_slopes(u, self.h, axis)
            g = np.maximum(np.maximum(minus, 0.0), np.maximum(-plus, 0.0))
            sq = g * g if sq is None else sq + g * g
        return sq ** (0.5 * self.m)

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        out = np.zeros_like(u)
        for axis in range(self.grid.dim):
            out += _axis_second_diff(u, self.h, axis, self.config.lap_policy)
        if self.config.lap_policy == "drop":
            out[self.boundary] = 0.0
        return out

    def _axis_D(self, u: np.ndarray, axis: int) -> np.ndarray:
        """Per-axis diffusion operator used by the ADI splitting."""
        out = _axis_second_diff(u, self.h, axis, self.config.lap_policy)
        if self.config.lap_policy == "drop":
            out[self.boundary] = 0.0
        return out

    def _banded(self, dt: float, n: int):
        """ab-storage of I - dt*D2 for one axis line of length n."""
        key = (round(dt, 16), n)
        mat = self._banded_cache.get(key)
        if mat is not None:
            return mat
        r = dt / (self.h * self.h)
        if self.config.lap_policy == "drop":
            l_and_u = (1, 1)
            ab = np.zeros((3, n))
            ab[0, 2:] = -r
            ab[1, :] = 1.0 + 2.0 * r
            ab[2, :-2] = -r
            # identity rows at the line ends
            ab[1, 0] = ab[1, -1] = 1.0
            ab[0, 1] = 0.0
            ab[2, -2] = 0.0
        else:
            l_and_u = (3, 3)
            ab = np.zeros((7, n))
            ab[2, 2:] = -r          # superdiag (row i, col i+1)
            ab[3, :] = 1.0 + 2.0 * r
            ab[4, :-2] = -r
            # one-sided rows: (I - dt*D2)[0,:] = [1-2r, 5r, -4r, r]
            ab[3, 0] = 1.0 - 2.0 * r
            ab[2, 1] = 5.0 * r
            ab[1, 2] = -4.0 * r
            ab[0, 3] = r
            ab[3, -1] = 1.0 - 2.0 * r
            ab[4, -2] = 5.0 * r
            ab[5, -3] = -4.0 * r
            ab[6, -4] = r
        self._banded_cache[key] = (l_and_u, ab)
        return l_and_u, ab

    # -- steps ----------------------------------------------------------

    def explicit_step(self, u: np.ndarray, dt: float) -> np.ndarray:
        return u + dt * (self.laplacian(u) - self.hamiltonian(u) + self.f)

    def imex_step(self, u: np.ndarray, dt: float) -> np.ndarray:
        ustar = u + dt * (-self.hamiltonian(u) + self.f)
        if self.grid.dim == 1:
            l_and_u, ab = self._banded(dt, u.shape[0])
            return solve_banded(l_and_u, ab, ustar)
        # Peaceman-Rachford ADI with half steps
        half = 0.5 * dt
        v = ustar + half * self._axis_D(ustar, 1)
        v = self._adi_solve(v, half, axis=0)
        w = v + half * self._axis_D(v, 0)
        return self._adi_solve(w, half, axis=1)

    def _adi_solve(self, rhs: np.ndarray, dt: float, axis: int) -> np.ndarray:
        """Solve (I - dt*D2) along ``axis``; columns of the worked array are lines."""
        W = rhs if axis == 0 else rhs.T
        l_and_u, ab = self._banded(dt, W.shape[0])
        if self.config.lap_policy == "drop":
            # lines lying on the transverse boundary carry no diffusion at all
            out = W.copy()
            out[:, 1:-1] = solve_banded(l_and_u, ab, W[:, 1:-1])
        else:
            out = solve_banded(l_and_u, ab, W)
        return out if axis == 0 else out.T

    def step(self, u: np.ndarray, dt: float) -> np.ndarray:
        if self.config.mode == "imex":
            unew = self.imex_step(u, dt)
        else:
            unew = self.explicit_step(u, dt)
        return unew

    def adaptive_dt(self, u: np.ndarray) -> float:
        L = max(self.max_slope(u), layer_slope(self.m, self.h))
        return self.config.safety * cfl_bound(L, self.m, self.h, self.grid.dim,
                                              self.config.mode)


def step(u: GridField, dt: float, problem: ProblemSpec, config: SchemeConfig) -> GridField:
    """One explicit/IMEX update of the state-constraint scheme."""
    st = _Stepper(problem, u.grid, config)
    bound = cfl_bound(max(st.max_slope(u.values), layer_slope(problem.m, u.grid.spacing)),
                      problem.m, u.grid.spacing, u.grid.dim, config.mode)
    if dt > bound * (1.0 + 1e-9):
        raise ConfigurationError(
            f"dt={dt:g} violates the stability bound {bound:g} for this state")
    out = st.step(u.values, dt)
    _raise_if_blowup(out, u.grid, 0.0)
    return GridField(u.grid, out)


def _raise_if_blowup(u: np.ndarray, grid: Grid, t: float):
    if np.all(np.isfinite(u)):
        return
    idx = np.argwhere(~np.isfinite(u))[0]
    coord = tuple(float(grid.axis_coords[i]) for i in idx)
    raise BlowUpError(f"numerical blow-up at node {coord} near t={t:.6g}",
                      node=coord, time=t)


def solve_state_constraint(problem: ProblemSpec, grid: Grid, config: SchemeConfig,
                           u0_values: Optional[np.ndarray] = None,
                           phi_values: Optional[np.ndarray] = None) -> Trajectory:
    """March the state-constraint problem to max_time, recording snapshots.

    Deterministic for fixed inputs.  ``u0_values`` overrides the problem's
    initial-data family (used by pipelines that clip or reuse fields);
    ``phi_values`` feeds the shifted-ergodic family.
    """
    st = _Stepper(problem, grid, config)
    if u0_values is None:
        u = problem.initial_field(grid, phi_values).values.copy()
    else:
        u = np.array(u0_values, dtype=float)
        if u.shape != grid.shape:
            raise ConfigurationError("u0 override has wrong shape")
    snaps_at = config.resolved_snapshots()
    if config.dt is not None:
        bound0 = cfl_bound(max(st.max_slope(u), layer_slope(problem.m, grid.spacing)),
                           problem.m, grid.spacing, grid.dim, config.mode)
        if config.dt > bound0 * (1.0 + 1e-9):
            raise ConfigurationError(
                f"fixed dt={config.dt:g} violates the initial CFL bound {bound0:g}")

    traj = Trajectory(problem, grid, config)
    traj.snapshots.append((0.0, u.copy()))
    ref = grid.ref_index()
    prev_ref = (snaps_at[0], u[ref])

    t = 0.0
    k = 1
    nsteps = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while k < len(snaps_at):
            t_next = snaps_at[k]
            while t < t_next - 1e-12:
                dt = config.dt if config.dt is not None else st.adaptive_dt(u)
                if config.dt is not None:
                    bound = cfl_bound(max(st.max_slope(u), layer_slope(problem.m, grid.spacing)),
                                      problem.m, grid.spacing, grid.dim, config.mode)
                    if config.dt > bound * (1.0 + 1e-9):
                        raise ConfigurationError(
                            f"fixed dt={config.dt:g} violates the CFL bound {bound:g} at t={t:.6g}")
                dt = min(dt, t_next - t)
                u = st.step(u, dt)
                nsteps += 1
                if nsteps % 16 == 0:
                    _raise_if_blowup(u, grid, t + dt)
                t = min(t + dt, t_next)
            _raise_if_blowup(u, grid, t)
            t = t_next
            traj.snapshots.append((t, u.copy()))
            dt_ref = t - prev_ref[0]
            if dt_ref > 0:
                traj.slope_series.append((t, (u[ref] - prev_ref[1]) / dt_ref))
            prev_ref = (t, u[ref])
            k += 1
    traj.steps = nsteps
    return traj


@dataclass
class NestedReport:
    """Monotonicity data for a family of nested truncation radii."""

    radii: tuple
    trajectories: dict
    pair_violations: list      # [(R, R', max over shared nodes/times of u^{R'} - u^R)]
    inner_gap: float           # sup-gap of the two largest radii on the inner quarter
    shared_dt: float


def nested_limit(problem: ProblemSpec, radii, spacing: float,
                 config: SchemeConfig) -> NestedReport:
    """Solve on nested balls with one shared fixed dt and compare on shared nodes.

    The shared dt (CFL of the largest ball, layer-aware) makes the interior
    updates of all runs literally identical, so the comparison isolates the
    wall treatment.
    """
    radii = tuple(float(R) for R in radii)
    if any(b < a for a, b in zip(radii, radii[1:])):
        raise ConfigurationError("radii must be non-decreasing")
    for R in radii:
        ratio = (radii[-1] - R) / spacing
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError(
                f"grids for radii {radii} with spacing {spacing} do not share nodes")

    big = dc_replace(problem, radius=radii[-1])
    big_grid = big.grid(spacing)
    u0_big = big.initial_field(big_grid).values
    L = slope_bound_estimate(big, big_grid, u0_big)
    shared_dt = config.safety * cfl_bound(L, problem.m, spacing, problem.dim, config.mode)
    run_cfg = dc_replace(config, dt=shared_dt)

    trajs = {}
    for R in radii:
        if R in trajs:
            continue
        prob_R = dc_replace(problem, radius=R)
        trajs[R] = solve_state_constraint(prob_R, prob_R.grid(spacing), run_cfg)

    pair_violations = []
    for Ra, Rb in zip(radii, radii[1:]):
        ta, tb = trajs[Ra], trajs[Rb]
        off = int(round((Rb - Ra) / spacing))
        worst = 0.0
        for (t1, ua), (t2, ub) in zip(ta.snapshots, tb.snapshots):
            sub = ub[tuple(slice(off, off + s) for s in ta.grid.shape)]
            worst = max(worst, float((sub - ua).max()))
        pair_violations.append((Ra, Rb, worst))

    Ra, Rb = radii[-2], radii[-1]
    ta, tb = trajs[Ra], trajs[Rb]
    off = int(round((Rb - Ra) / spacing))
    inner = ta.grid.interior_ball_mask(Ra / 4.0)
    gap = 0.0
    for (t1, ua), (t2, ub) in zip(ta.snapshots, tb.snapshots):
        sub = ub[tuple(slice(off, off + s) for s in ta.grid.shape)]
        gap = max(gap, float(np.abs(sub - ua)[inner].max()))
    return NestedReport(radii, trajs, pair_violations, gap, shared_dt)
