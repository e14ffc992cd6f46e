"""Uniform tensor grids on [-R, R]^dim and the discrete operators used by the solvers.

The gradient magnitude is discretized with the Godunov (Rouy-Tourin) upwind
flux, which is monotone for the convex Hamiltonian |p|^m with minimum at 0.
The Laplacian is the standard centered second difference; at truncation
boundary nodes it follows a selectable policy:

  * ``"drop"``      boundary Laplacian is zero (keeps the update monotone),
  * ``"one-sided"`` second-order one-sided stencil (consistent up to the wall).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError

LAP_POLICIES = ("drop", "one-sided")


@dataclass(frozen=True)
class Grid:
    """Uniform tensor grid covering [-radius, radius]^dim."""

    dim: int
    radius: float
    spacing: float

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ConfigurationError(f"dim must be 1 or 2, got {self.dim}")
        if self.radius <= 0 or self.spacing <= 0:
            raise ConfigurationError("radius and spacing must be positive")
        ratio = 2.0 * self.radius / self.spacing
        if abs(ratio - round(ratio)) > 1e-9:
            raise ConfigurationError(
                f"(2*radius)/spacing = {ratio} is not an integer")
        if self.n_intervals < 2:
            raise ConfigurationError("need at least 3 nodes per axis")

    @property
    def n_intervals(self) -> int:
        return int(round(2.0 * self.radius / self.spacing))

    @property
    def shape(self) -> tuple:
        n = self.n_intervals + 1
        return (n,) * self.dim

    @property
    def axis_coords(self) -> np.ndarray:
        return np.linspace(-self.radius, self.radius, self.n_intervals + 1)

    def coords(self) -> np.ndarray:
        """Node coordinates, shape (*grid.shape, dim)."""
        ax = self.axis_coords
        if self.dim == 1:
            return ax[:, None]
        X, Y = np.meshgrid(ax, ax, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def radii(self) -> np.ndarray:
        """|x| at every node."""
        c = self.coords()
        return np.sqrt((c ** 2).sum(axis=-1))

    def boundary_mask(self) -> np.ndarray:
        """True exactly at nodes with some coordinate equal to +-radius."""
        n = self.n_intervals
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            sl = [slice(None)] * self.dim
            sl[axis] = 0
            mask[tuple(sl)] = True
            sl[axis] = n
            mask[tuple(sl)] = True
        return mask

    def ref_index(self) -> tuple:
        """Index of the node closest to the origin."""
        i = int(np.argmin(np.abs(self.axis_coords)))
        return (i,) * self.dim

    def interior_ball_mask(self, r: float) -> np.ndarray:
        return self.radii() <= r + 1e-12


@dataclass
class GridField:
    """One real value per grid node."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ConfigurationError(
                f"field shape {self.values.shape} != grid shape {self.grid.shape}")

    def check_finite(self):
        if not np.all(np.isfinite(self.values)):
            raise ConfigurationError("field contains non-finite values")
        return self


def _axis_second_diff(u: np.ndarray, h: float, axis: int, policy: str) -> np.ndarray:
    """Second difference along one axis; interior centered, ends per policy."""
    n = u.shape[axis]
    out = np.zeros_like(u)
    mid = [slice(None)] * u.ndim
    lo = [slice(None)] * u.ndim
    hi = [slice(None)] * u.ndim
    mid[axis] = slice(1, -1)
    lo[axis] = slice(0, -2)
    hi[axis] = slice(2, None)
    out[tuple(mid)] = (u[tuple(hi)] - 2.0 * u[tuple(mid)] + u[tuple(lo)]) / (h * h)
    if policy == "one-sided":
        if n < 4:
            raise ConfigurationError("one-sided boundary stencil needs >= 4 nodes per axis")
        idx = lambda k: tuple(k if a == axis else slice(None) for a in range(u.ndim))
        out[idx(0)] = (2.0 * u[idx(0)] - 5.0 * u[idx(1)] + 4.0 * u[idx(2)] - u[idx(3)]) / (h * h)
        out[idx(n - 1)] = (2.0 * u[idx(n - 1)] - 5.0 * u[idx(n - 2)]
                           + 4.0 * u[idx(n - 3)] - u[idx(n - 4)]) / (h * h)
    return out


def laplacian(field: GridField, policy: str = "drop") -> GridField:
    """Discrete Laplacian; boundary nodes handled per ``policy``."""
    if policy not in LAP_POLICIES:
        raise ConfigurationError(f"unknown Laplacian boundary policy {policy!r}")
    out = laplacian_values(field.values, field.grid, policy)
    return GridField(field.grid, out)


def laplacian_values(u: np.ndarray, grid: Grid, policy: str = "drop") -> np.ndarray:
    h = grid.spacing
    out = np.zeros_like(u)
    for axis in range(grid.dim):
        out += _axis_second_diff(u, h, axis, policy)
    if policy == "drop":
        out[grid.boundary_mask()] = 0.0
    return out


def godunov_gradient_power(minus, plus, m: float):
    """Godunov upwind value of |u_x|^m from one-sided slopes.

    ``minus`` is the backward difference, ``plus`` the forward difference.
    Equals |p|^m whenever minus == plus == p; picks the maximizing upwind
    branch otherwise, and 0 when the Hamiltonian's minimizer lies between
    the slopes.
    """
    g = np.maximum(np.maximum(minus, 0.0), np.maximum(-np.asarray(plus), 0.0))
    return g ** m


def upwind_slopes(u: np.ndarray, h: float, axis: int):
    """Per-axis (minus, plus) one-sided differences.

    At the axis-min face ``minus`` is set to 0 and at the axis-max face
    ``plus`` is set to 0, so that only inward information enters the
    upwind branches there (discrete state constraint).
    """
    d = np.diff(u, axis=axis) / h
    pad = [(0, 0)] * u.ndim
    pad[axis] = (1, 0)
    minus = np.pad(d, pad)
    pad[axis] = (0, 1)
    plus = np.pad(d, pad)
    return minus, plus


def godunov_magnitude(u: np.ndarray, grid: Grid) -> np.ndarray:
    """Upwind gradient magnitude |Du| (Rouy-Tourin), inward-only at the wall."""
    sq = np.zeros_like(u)
    for axis in range(grid.dim):
        minus, plus = upwind_slopes(u, grid.spacing, axis)
        g = np.maximum(np.maximum(minus, 0.0), np.maximum(-plus, 0.0))
        sq += g * g
    return np.sqrt(sq)


def hamiltonian(u: np.ndarray, grid: Grid, m: float) -> np.ndarray:
    """Discrete |Du|^m by the Godunov flux."""
    return godunov_magnitude(u, grid) ** m


def centered_gradient_magnitude(u: np.ndarray, grid: Grid) -> np.ndarray:
    """|Du| from centered differences (one-sided at the wall); diagnostics only."""
    h = grid.spacing
    sq = np.zeros_like(u)
    for axis in range(grid.dim):
        g = np.gradient(u, h, axis=axis)
        sq += g * g
    return np.sqrt(sq)
