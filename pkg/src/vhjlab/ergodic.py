"""The ergodic pair (lambda, phi) of  lambda - Delta phi + |D phi|^m = f.

Two independent routes compute the pair on a grid and cross-validate:

  * ``solve_longtime``  runs the parabolic solver from flat data and reads
    the terminal drift (large-time behavior used in reverse),
  * ``solve_newton``    solves the discrete stationary system directly by a
    damped semismooth Newton iteration with the unknown constant appended.

A third, grid-free ``radial_oracle`` shoots in lambda for exactly radial f;
it serves as an external accuracy yardstick.
"""

from __future__ import annotations

from dataclasses import dataclass, replace as dc_replace
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import cumulative_trapezoid, solve_ivp

from .errors import ConfigurationError, NonConvergenceError, OracleFailureError
from .gridops import Grid, GridField, upwind_slopes
from .model import InitialData, ProblemSpec
from .scheme import SchemeConfig, _Stepper, solve_state_constraint


@dataclass
class ErgodicPair:
    """Ergodic constant and normalized potential on a grid."""

    lambda_: float
    phi: GridField
    x_ref: tuple
    residual: float
    route: str
    iterations: int = 0
    slope_series: Optional[list] = None

    def __post_init__(self):
        ref_val = self.phi.values[self.x_ref]
        if ref_val != 0.0:
            self.phi.values = self.phi.values - ref_val
            self.phi.values[self.x_ref] = 0.0


def discrete_residual(phi: np.ndarray, lam: float, problem: ProblemSpec, grid: Grid,
                      lap_policy: str = "drop") -> np.ndarray:
    """lambda - Delta_h phi + H_G(phi) - f with the scheme's wall treatment."""
    st = _Stepper(problem, grid, SchemeConfig(max_time=1.0, lap_policy=lap_policy))
    return lam - st.laplacian(phi) + st.hamiltonian(phi) - st.f


def interior_residual_norm(phi: np.ndarray, lam: float, problem: ProblemSpec,
                           grid: Grid, lap_policy: str = "drop") -> float:
    res = discrete_residual(phi, lam, problem, grid, lap_policy)
    return float(np.abs(res[~grid.boundary_mask()]).max())


def solve_longtime(problem: ProblemSpec, grid: Grid, config: SchemeConfig,
                   tol: float = 1e-3) -> ErgodicPair:
    """Ergodic pair from the terminal drift of a long parabolic run.

    lambda is the terminal Newton-quotient slope at the reference node, valid
    once successive slope estimates differ by less than ``tol``; phi is the
    terminal profile normalized at the reference node.
    """
    prob = dc_replace(problem, initial=InitialData.zero())
    traj = solve_state_constraint(prob, grid, config)
    slopes = traj.slope_series
    if len(slopes) < 2:
        raise ConfigurationError("longtime route needs at least two snapshot intervals")
    settle = abs(slopes[-1][1] - slopes[-2][1])
    if not settle < tol:
        raise NonConvergenceError(
            f"drift not settled by T={config.max_time:g}: last slope change "
            f"{settle:.3e} >= tol {tol:g}", history=slopes)
    lam = float(slopes[-1][1])
    _, terminal = traj.terminal()
    ref = grid.ref_index()
    phi = GridField(grid, terminal - terminal[ref])
    return ErgodicPair(lam, phi, ref,
                       residual=interior_residual_norm(phi.values, lam, problem, grid,
                                                       config.lap_policy),
                       route="longtime", iterations=traj.steps, slope_series=slopes)


def _newton_residual(phi: np.ndarray, lam: float, st: _Stepper) -> np.ndarray:
    return lam - st.laplacian(phi) + st.hamiltonian(phi) - st.f


def _newton_jacobian(phi: np.ndarray, st: _Stepper) -> sp.csr_matrix:
    """Generalized Jacobian of -Delta_h + H_G at the current iterate.

    At nodes where the Godunov branch is the enclosed minimizer the
    Hamiltonian row is zero, a valid element of the generalized derivative.
    """
    grid, m, h = st.grid, st.m, st.h
    shape = grid.shape
    n_nodes = phi.size
    ih2 = 1.0 / (h * h)
    flat = np.arange(n_nodes).reshape(shape)
    policy = st.config.lap_policy
    boundary = grid.boundary_mask()

    rows, cols, vals = [], [], []

    def idx(axis, k):
        return tuple(k if a == axis else slice(None) for a in range(grid.dim))

    # -Laplacian block
    for axis in range(grid.dim):
        n_ax = shape[axis]
        inner = flat[idx(axis, slice(1, -1))].ravel()
        left = flat[idx(axis, slice(0, -2))].ravel()
        right = flat[idx(axis, slice(2, None))].ravel()
        if policy == "drop":
            keep = ~boundary.reshape(shape)[idx(axis, slice(1, -1))].ravel()
            inner, left, right = inner[keep], left[keep], right[keep]
        rows += [inner, inner, inner]
        cols += [inner, left, right]
        vals += [np.full(inner.size, 2.0 * ih2), np.full(inner.size, -ih2),
                 np.full(inner.size, -ih2)]
        if policy == "one-sided":
            for k, sgn in ((0, 1), (n_ax - 1, -1)):
                nodes = np.atleast_1d(flat[idx(axis, k)]).ravel()
                for w, j in zip((-2.0, 5.0, -4.0, 1.0), range(4)):
                    cols_j = np.atleast_1d(flat[idx(axis, k + sgn * j)]).ravel()
                    rows.append(nodes)
                    cols.append(cols_j)
                    vals.append(np.full(nodes.size, -w * ih2))

    # Hamiltonian block: active upwind branch per axis
    sq = np.zeros_like(phi)
    branches = []
    for axis in range(grid.dim):
        minus, plus = upwind_slopes(phi, h, axis)
        bm = np.maximum(minus, 0.0)
        bp = np.maximum(-plus, 0.0)
        sq += np.maximum(bm, bp) ** 2
        branches.append((bm, bp))
    mag = np.sqrt(sq)
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(mag > 0.0, m * mag ** (m - 2.0), 0.0)
    for axis in range(grid.dim):
        bm, bp = branches[axis]
        g = np.maximum(bm, bp)
        w = (coef * g / h).ravel()
        use_minus = ((bm >= bp) & (bm > 0.0)).ravel()
        use_plus = (bp > bm).ravel()
        stride = int(np.prod(shape[axis + 1:], dtype=int))
        all_i = flat.ravel()
        im = all_i[use_minus]
        rows += [im, im]
        cols += [im, im - stride]
        vals += [w[use_minus], -w[use_minus]]
        ip = all_i[use_plus]
        rows += [ip, ip]
        cols += [ip, ip + stride]
        vals += [w[use_plus], -w[use_plus]]

    rows = np.concatenate([np.asarray(r, dtype=np.int64) for r in rows]) if rows else np.array([], dtype=np.int64)
    cols = np.concatenate([np.asarray(c, dtype=np.int64) for c in cols]) if cols else np.array([], dtype=np.int64)
    vals = np.concatenate([np.asarray(v, dtype=float) for v in vals]) if vals else np.array([])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n_nodes, n_nodes))


def solve_newton(problem: ProblemSpec, grid: Grid, init: Optional[ErgodicPair] = None,
                 tol: float = 1e-9, max_iter: int = 60,
                 lap_policy: str = "drop") -> ErgodicPair:
    """Damped semismooth Newton on the stationary system with unknown constant.

    The square system couples one equation per node (scheme wall treatment at
    boundary nodes) with the normalization phi(x_ref) = 0 paired against the
    unknown lambda.  Backtracking halving enforces Armijo-style residual
    decrease, at most 40 halvings per step.
    """
    st = _Stepper(problem, grid, SchemeConfig(max_time=1.0, lap_policy=lap_policy))
    ref = grid.ref_index()
    ref_flat = int(np.ravel_multi_index(ref, grid.shape))
    if init is None:
        phi = np.zeros(grid.shape)
        lam = float(st.f.min())
    else:
        phi = init.phi.values.copy()
        lam = float(init.lambda_)
    n_nodes = phi.size
    history = []
    hint = "consider initializing from solve_longtime"
    for it in range(max_iter):
        F = _newton_residual(phi, lam, st)
        res = float(np.abs(F).max())
        history.append(res)
        if res < tol:
            return ErgodicPair(lam, GridField(grid, phi), ref,
                               residual=interior_residual_norm(phi, lam, problem,
                                                               grid, lap_policy),
                               route="newton", iterations=it)
        A = _newton_jacobian(phi, st)
        one = sp.csr_matrix(np.ones((n_nodes, 1)))
        norm_row = sp.csr_matrix(([1.0], ([0], [ref_flat])), shape=(1, n_nodes))
        B = sp.bmat([[A, one], [norm_row, None]], format="csc")
        rhs = -np.concatenate([F.ravel(), [phi.flat[ref_flat]]])
        with np.errstate(all="ignore"):
            delta = spla.spsolve(B, rhs)
        if not np.all(np.isfinite(delta)):
            raise NonConvergenceError(
                f"Newton step is singular at iteration {it}; {hint}", history=history)
        dphi = delta[:n_nodes].reshape(grid.shape)
        dlam = float(delta[n_nodes])
        step_len = 1.0
        accepted = False
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(40):
                F2 = _newton_residual(phi + step_len * dphi, lam + step_len * dlam, st)
                r2 = float(np.abs(F2).max()) if np.all(np.isfinite(F2)) else np.inf
                if r2 <= (1.0 - 1e-4 * step_len) * res:
                    accepted = True
                    break
                step_len *= 0.5
        if not accepted:
            raise NonConvergenceError(
                f"Newton stalled at residual {res:.3e} (iteration {it}); {hint}",
                history=history)
        phi = phi + step_len * dphi
        lam = lam + step_len * dlam
    raise NonConvergenceError(
        f"Newton did not reach tol={tol:g} in {max_iter} iterations "
        f"(last residual {history[-1]:.3e}); {hint}", history=history)


# ---------------------------------------------------------------------------
# radial shooting oracle
# ---------------------------------------------------------------------------

def _classify(lam: float, f_r, m: float, N: int, r_max: float, r0: float) -> int:
    """+1 if the shot escapes above the separatrix, -1 if it falls below it."""

    def rhs(r, y):
        g = y[1]
        return [g, lam - f_r(r) + np.abs(g) ** m - (N - 1) / r * g]

    def ev_up(r, y):
        return y[1] - (2.0 * max(f_r(r) - lam, 0.0) ** (1.0 / m) + 5.0)

    ev_up.terminal = True
    ev_up.direction = 1

    def ev_dn(r, y):
        return y[1] + max(1.0, 0.5 * max(f_r(r) - lam, 0.0) ** (1.0 / m))

    ev_dn.terminal = True
    ev_dn.direction = -1

    sol = solve_ivp(rhs, (r0, 1.5 * r_max), [0.0, 0.0],
                    events=[ev_up, ev_dn], method="LSODA", rtol=1e-9, atol=1e-12)
    if sol.t_events[0].size:
        return +1
    if sol.t_events[1].size:
        return -1
    branch = max(f_r(sol.t[-1]) - lam, 0.0) ** (1.0 / m)
    return +1 if sol.y[1, -1] > branch else -1


def radial_oracle(problem: ProblemSpec, r_max: float, tol: float = 1e-10,
                  lambda_range: Optional[tuple] = None,
                  n_profile: int = 801) -> ErgodicPair:
    """Grid-free ergodic pair for exactly radial f by bisection on lambda.

    Shoots the radial reduction  lambda - phi'' - (N-1)/r phi' + |phi'|^m = f(r)
    from the regularized origin (phi(eps) = phi'(eps) = 0, eps = 1e-6 r_max);
    lambda separates escape above the positive branch from falling onto the
    attracting negative branch.  The profile is recovered afterwards by
    backward integration along the separatrix, which is stable in that
    direction, and mirrored onto a symmetric 1D grid.
    """
    if not problem.source.is_radial:
        raise OracleFailureError("radial oracle requires an exactly radial source")
    m, N = problem.m, problem.dim
    f_r = lambda r: float(problem.source.radial(r))
    r0 = 1e-6 * r_max

    if lambda_range is None:
        base = f_r(0.0)
        lo, hi = base - 2.0, base + 2.0
        budget = 60
    else:
        lo, hi = float(lambda_range[0]), float(lambda_range[1])
        budget = 0
    s_lo = _classify(lo, f_r, m, N, r_max, r0)
    s_hi = _classify(hi, f_r, m, N, r_max, r0)
    while s_lo == +1 and budget > 0:
        lo -= max(1.0, abs(lo))
        s_lo = _classify(lo, f_r, m, N, r_max, r0)
        budget -= 1
    while s_hi == -1 and budget > 0:
        hi += max(1.0, abs(hi))
        s_hi = _classify(hi, f_r, m, N, r_max, r0)
        budget -= 1
    if s_lo == +1 or s_hi == -1:
        raise OracleFailureError(
            f"no bisection bracket for lambda in [{lo:g}, {hi:g}]")

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _classify(mid, f_r, m, N, r_max, r0) == +1:
            hi = mid
        else:
            lo = mid
        if hi - lo < max(tol, 1e-14 * max(1.0, abs(mid))):
            break
    lam = 0.5 * (lo + hi)

    g_seed = max(f_r(1.5 * r_max) - lam, 0.0) ** (1.0 / m)

    def rhs_g(r, y):
        g = y[0]
        return [lam - f_r(r) + np.abs(g) ** m - (N - 1) / r * g]

    solb = solve_ivp(rhs_g, (1.5 * r_max, r0), [g_seed], method="LSODA",
                     rtol=1e-11, atol=1e-13, dense_output=True)
    if not solb.success:
        raise OracleFailureError(f"profile integration failed: {solb.message}")
    n_half = n_profile - 1
    rs = np.linspace(0.0, r_max, n_profile)
    gs = np.empty_like(rs)
    gs[0] = 0.0  # symmetry at the origin
    gs[1:] = solb.sol(rs[1:])[0]
    phis = np.concatenate([[0.0], cumulative_trapezoid(gs, rs)])

    spacing = r_max / n_half
    sym_grid = Grid(1, float(r_max), spacing)
    mirrored = np.concatenate([phis[::-1][:-1], phis])
    pair = ErgodicPair(lam, GridField(sym_grid, mirrored), sym_grid.ref_index(),
                       residual=float(hi - lo), route="radial-oracle")
    pair.radial_r = rs
    pair.radial_phi = phis
    pair.radial_dphi = gs
    return pair
