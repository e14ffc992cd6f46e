"""Problem instances: source terms, growth envelopes, initial data, validation.

A problem is the tuple (m, dim, f, u0, R) for

    u_t - Delta u + |Du|^m = f(x)   on the truncated ball [-R, R]^dim,

with m > 2 and f, u0 bounded from below.  Sources come in three families:

  * ``radial-power``   f(x) = a |x|^alpha_f + b  (|x| optionally smoothed),
  * ``manufactured``   f = lambda_ms - Delta phi_ms + |D phi_ms|^m for a
    closed-form target phi_ms = coeff * |x|^power, so that (lambda_ms,
    phi_ms) is the exact ergodic pair for f,
  * ``expression``     arbitrary closed form in x (and y in 2D) and r.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigurationError, EnvelopeError
from .gridops import Grid, GridField

_EXPR_NAMES = {
    "abs": np.abs, "sqrt": np.sqrt, "exp": np.exp, "log": np.log,
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "tanh": np.tanh,
    "cosh": np.cosh, "sinh": np.sinh, "pi": np.pi, "e": np.e,
    "minimum": np.minimum, "maximum": np.maximum, "where": np.where,
}


def _compile_expression(expr: str) -> Callable:
    code = compile(expr, "<expression>", "eval")
    for name in code.co_names:
        if name not in _EXPR_NAMES and name not in ("x", "y", "r"):
            raise ConfigurationError(f"unknown name {name!r} in expression {expr!r}")

    def evaluate(points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        ns = dict(_EXPR_NAMES)
        ns["x"] = pts[..., 0]
        ns["y"] = pts[..., 1] if pts.shape[-1] > 1 else np.zeros_like(pts[..., 0])
        ns["r"] = np.sqrt((pts ** 2).sum(axis=-1))
        out = eval(code, {"__builtins__": {}}, ns)
        return np.broadcast_to(np.asarray(out, dtype=float), pts.shape[:-1]).copy()

    return evaluate


@dataclass(frozen=True)
class PowerTarget:
    """Closed-form ergodic target phi(x) = coeff * |x|^power (power >= 2)."""

    coeff: float = 1.0
    power: float = 2.0

    def __post_init__(self):
        if self.power < 2.0:
            raise ConfigurationError(
                "power target needs exponent >= 2 (twice differentiable, "
                "gradient term dominating the Laplacian)")
        if self.coeff <= 0:
            raise ConfigurationError("power target needs a positive coefficient")

    def value_r(self, r):
        return self.coeff * np.asarray(r, dtype=float) ** self.power

    def grad_magnitude_r(self, r):
        return self.coeff * self.power * np.asarray(r, dtype=float) ** (self.power - 1.0)

    def laplacian_r(self, r, dim: int):
        p = self.power
        r = np.asarray(r, dtype=float)
        if p == 2.0:
            return np.full_like(r, 2.0 * self.coeff * dim)
        return self.coeff * p * (p + dim - 2.0) * r ** (p - 2.0)


@dataclass(frozen=True)
class SourceTerm:
    """Right-hand side f with evaluators and the best known lower bound."""

    family: str
    params: dict = field(default_factory=dict)
    dim: int = 1
    m: Optional[float] = None          # set for manufactured sources
    lambda_ms: Optional[float] = None  # exact ergodic constant, manufactured only
    target: Optional[PowerTarget] = None

    # ---- constructors ------------------------------------------------

    @staticmethod
    def radial_power(a: float, alpha_f: float, b: float = 0.0, eps: float = 0.0,
                     dim: int = 1) -> "SourceTerm":
        if alpha_f < 1.0 and eps == 0.0:
            raise ConfigurationError(
                "radial-power exponent < 1 requires smoothing eps > 0 "
                "(f must be locally Lipschitz)")
        return SourceTerm("radial-power", {"a": a, "alpha_f": alpha_f, "b": b, "eps": eps},
                          dim=dim)

    @staticmethod
    def manufactured(target: PowerTarget, lambda_ms: float, m: float,
                     dim: int = 1) -> "SourceTerm":
        if m <= 2.0:
            raise ConfigurationError("manufactured sources require m > 2")
        return SourceTerm("manufactured", {}, dim=dim, m=m,
                          lambda_ms=lambda_ms, target=target)

    @staticmethod
    def expression(f_expr: str, df_expr: Optional[str] = None, dim: int = 1) -> "SourceTerm":
        params = {"f": f_expr}
        if df_expr is not None:
            params["df"] = df_expr
        st = SourceTerm("expression", params, dim=dim)
        st.evaluate(np.zeros((1, dim)))  # fail fast on bad expressions
        return st

    # ---- evaluation ---------------------------------------------------

    def _smoothed_r(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.sqrt((pts ** 2).sum(axis=-1))
        eps = self.params.get("eps", 0.0)
        if eps:
            r = np.sqrt(r * r + eps * eps)
        return r

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """f at points of shape (..., dim)."""
        if self.family == "radial-power":
            r = self._smoothed_r(points)
            return self.params["a"] * r ** self.params["alpha_f"] + self.params["b"]
        if self.family == "manufactured":
            r = self._smoothed_r(points)
            return self.radial(r)
        if self.family == "expression":
            return _compile_expression(self.params["f"])(points)
        raise ConfigurationError(f"unknown source family {self.family!r}")

    def radial(self, r) -> np.ndarray:
        """f as a function of |x| (radial families only)."""
        r = np.asarray(r, dtype=float)
        if self.family == "radial-power":
            return self.params["a"] * r ** self.params["alpha_f"] + self.params["b"]
        if self.family == "manufactured":
            t = self.target
            return (self.lambda_ms - t.laplacian_r(r, self.dim)
                    + t.grad_magnitude_r(r) ** self.m)
        raise ConfigurationError(f"source family {self.family!r} is not radial")

    @property
    def is_radial(self) -> bool:
        return self.family in ("radial-power", "manufactured")

    def grad_magnitude(self, points: np.ndarray) -> Optional[np.ndarray]:
        """|Df| where a closed form is known, else None."""
        if self.family == "radial-power":
            r = self._smoothed_r(points)
            a, al = self.params["a"], self.params["alpha_f"]
            return np.abs(a * al) * r ** (al - 1.0)
        if self.family == "manufactured":
            # d/dr of lambda - c p (p+N-2) r^(p-2) + (c p)^m r^((p-1) m)
            r = self._smoothed_r(points)
            t, N, m = self.target, self.dim, self.m
            c, p = t.coeff, t.power
            dlap = 0.0 if p == 2.0 else c * p * (p + N - 2.0) * (p - 2.0) * r ** (p - 3.0)
            dham = (c * p) ** m * (p - 1.0) * m * r ** ((p - 1.0) * m - 1.0)
            return np.abs(dham - dlap)
        if self.family == "expression" and "df" in self.params:
            return np.abs(_compile_expression(self.params["df"])(points))
        return None

    def lower_bound(self, radius: float, samples: int = 4096) -> float:
        """Greatest known constant <= inf f over the ball of this radius."""
        if self.family == "radial-power" and self.params["a"] >= 0:
            eps = self.params.get("eps", 0.0)
            return float(self.params["b"] + self.params["a"] * eps ** self.params["alpha_f"])
        rmax = radius * math.sqrt(self.dim)
        rr = np.linspace(0.0, rmax, samples)
        if self.is_radial:
            return float(self.radial(rr).min())
        xs = np.linspace(-rmax, rmax, samples)
        pts = np.zeros((samples, self.dim))
        pts[:, 0] = xs
        vals = [self.evaluate(pts)]
        if self.dim == 2:
            pts2 = np.zeros((samples, 2))
            pts2[:, 1] = xs
            vals.append(self.evaluate(pts2))
            diag = np.stack([xs, xs], axis=-1) / math.sqrt(2.0)
            vals.append(self.evaluate(diag))
        lb = float(min(v.min() for v in vals))
        if not math.isfinite(lb):
            raise ConfigurationError("source is not bounded below on samples")
        return lb


def manufacture_source(target: PowerTarget, lambda_ms: float, m: float,
                       dim: int = 1) -> SourceTerm:
    """Source with exact ergodic pair (lambda_ms, target) by direct substitution."""
    return SourceTerm.manufactured(target, lambda_ms, m, dim)


@dataclass(frozen=True)
class GrowthEnvelope:
    """Two-sided radial control of f: f0^-1 phi(r) - f0 <= f <= f0 (phi(r)+1)."""

    alpha: float
    phi0: float
    f0: float
    form: str = "power"          # "power": phi(r) = r^alpha, or an expression in r
    expr: Optional[str] = None

    def __post_init__(self):
        if min(self.alpha, self.phi0, self.f0) <= 0:
            raise ConfigurationError("envelope constants alpha, phi0, f0 must be positive")

    def envelope(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        if self.form == "power":
            return r ** self.alpha
        if self.form == "expression":
            fn = _compile_expression(self.expr)
            return fn(np.stack([r], axis=-1))
        raise ConfigurationError(f"unknown envelope form {self.form!r}")


@dataclass(frozen=True)
class InitialData:
    """Initial condition u0, bounded from below."""

    family: str
    params: dict = field(default_factory=dict)

    @staticmethod
    def zero() -> "InitialData":
        return InitialData("zero")

    @staticmethod
    def polynomial(coeffs) -> "InitialData":
        return InitialData("polynomial", {"coeffs": tuple(float(c) for c in coeffs)})

    @staticmethod
    def exponential_growth(rate: float, scale: float = 1.0) -> "InitialData":
        if scale < 0:
            raise ConfigurationError("exponential-growth scale must be >= 0")
        return InitialData("exponential-growth", {"rate": rate, "scale": scale})

    @staticmethod
    def shifted_ergodic(shift: float = 0.0) -> "InitialData":
        return InitialData("shifted-ergodic", {"shift": shift})

    @staticmethod
    def expression(expr: str) -> "InitialData":
        _compile_expression(expr)  # fail fast on bad expressions
        return InitialData("expression", {"u0": expr})

    def values_at(self, points: np.ndarray, phi_values: Optional[np.ndarray] = None):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        r = np.sqrt((pts ** 2).sum(axis=-1))
        if self.family == "zero":
            return np.zeros_like(r)
        if self.family == "polynomial":
            return np.polynomial.polynomial.polyval(r, self.params["coeffs"])
        if self.family == "exponential-growth":
            return self.params["scale"] * np.exp(self.params["rate"] * r)
        if self.family == "shifted-ergodic":
            if phi_values is None:
                raise ConfigurationError(
                    "shifted-ergodic initial data needs an ergodic potential")
            return phi_values + self.params["shift"]
        if self.family == "expression":
            return _compile_expression(self.params["u0"])(pts)
        raise ConfigurationError(f"unknown initial-data family {self.family!r}")


@dataclass(frozen=True)
class ProblemSpec:
    """Full instance: exponent, dimension, source, initial data, truncation radius."""

    m: float
    dim: int
    source: SourceTerm
    initial: InitialData
    radius: float
    envelope: Optional[GrowthEnvelope] = None

    def __post_init__(self):
        if self.m <= 2.0:
            raise ConfigurationError(f"superquadratic regime requires m > 2, got {self.m}")
        if self.dim not in (1, 2):
            raise ConfigurationError("dim must be 1 or 2")
        if self.radius <= 0:
            raise ConfigurationError("radius must be positive")
        if self.source.dim != self.dim:
            raise ConfigurationError("source dimension does not match problem dimension")

    def grid(self, spacing: float) -> Grid:
        return Grid(self.dim, self.radius, spacing)

    def source_field(self, grid: Grid) -> GridField:
        return GridField(grid, self.source.evaluate(grid.coords())).check_finite()

    def initial_field(self, grid: Grid, phi_values: Optional[np.ndarray] = None,
                      clip_values: Optional[np.ndarray] = None) -> GridField:
        u0 = self.initial.values_at(grid.coords(), phi_values)
        if clip_values is not None:
            u0 = np.minimum(u0, clip_values)
        return GridField(grid, u0).check_finite()

    def manufactured_pair(self, grid: Grid):
        """(lambda_ms, phi_ms on the grid) for manufactured sources, else None."""
        if self.source.family != "manufactured":
            return None
        phi = self.source.target.value_r(grid.radii())
        return self.source.lambda_ms, GridField(grid, phi)


@dataclass
class ValidationReport:
    """Outcome of the growth-hypothesis check."""

    passed: bool
    worst_violation: float
    worst_radius: float
    worst_inequality: str
    samples: int
    slack: float = 1e-12

    def __bool__(self):
        return self.passed


def _h1_sample_points(radius: float, dim: int, samples: int):
    """Radii (log-dense per decade plus linear fill) and unit directions."""
    r_hi = radius * math.sqrt(dim)
    log_part = np.logspace(-6, math.log10(r_hi), samples // 2)
    lin_part = np.linspace(0.0, r_hi, samples - samples // 2)
    radii = np.unique(np.concatenate([[0.0], log_part, lin_part]))
    if dim == 1:
        dirs = np.array([[1.0], [-1.0]])
    else:
        th = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
        dirs = np.stack([np.cos(th), np.sin(th)], axis=-1)
    return radii, dirs


def validate_h1(source: SourceTerm, env: GrowthEnvelope, radius: float,
                samples: int = 10000) -> ValidationReport:
    """Check the two-sided growth control of f by the envelope on dense samples.

    Passes iff, within absolute slack 1e-12 at every sampled point,

        phi0^-1 r^alpha <= envelope(r)            (envelope floor)
        f0^-1 envelope(r) - f0 <= f(x)            (lower)
        f(x) <= f0 (envelope(r) + 1)              (upper)
    """
    if samples < 100:
        raise ConfigurationError("validate_h1 requires samples >= 100")
    slack = 1e-12
    radii, dirs = _h1_sample_points(radius, source.dim, samples)
    phi_r = env.envelope(radii)
    if np.any(np.diff(phi_r) < -slack):
        raise EnvelopeError("envelope is not increasing on samples")
    if not np.all(np.isfinite(phi_r)):
        raise EnvelopeError("envelope is not finite on samples")

    worst = -np.inf
    worst_r = 0.0
    worst_which = "none"

    floor_gap = (radii ** env.alpha) / env.phi0 - phi_r   # > 0 means violated
    i = int(np.argmax(floor_gap))
    if floor_gap[i] > worst:
        worst, worst_r, worst_which = floor_gap[i], radii[i], "envelope-floor"

    for d in dirs:
        pts = radii[:, None] * d[None, :]
        try:
            fx = source.evaluate(pts)
        except Exception as exc:
            raise ConfigurationError(f"source not evaluable on samples: {exc}") from exc
        if not np.all(np.isfinite(fx)):
            raise ConfigurationError("source not finite on samples")
        low_gap = (phi_r / env.f0 - env.f0) - fx
        up_gap = fx - env.f0 * (phi_r + 1.0)
        for gap, name in ((low_gap, "lower"), (up_gap, "upper")):
            j = int(np.argmax(gap))
            if gap[j] > worst:
                worst, worst_r, worst_which = gap[j], radii[j], name

    return ValidationReport(passed=bool(worst <= slack), worst_violation=float(worst),
                            worst_radius=float(worst_r), worst_inequality=worst_which,
                            samples=len(radii) * len(dirs), slack=slack)
