"""Volatility-band primitives, problem data, grids, and input validation.

The uncertainty nonlinearity is the sublinear envelope over an interval of
squared volatilities; since it is the maximum of a linear function of the
squared volatility, it is always attained at one of the two band endpoints.
Everything downstream (lattice and PDE solvers) therefore only ever looks
at the two endpoint controls.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex

PROJECTION = "projection"
EXPLICIT = "explicit"
NODEWISE_IMPLICIT = "nodewise-implicit"

#: default Lipschitz bound for the driver in (y, z); cross-checked by sampling
DEFAULT_KAPPA_F = 5.0


class StabilityError(RuntimeError):
    """Raised when a scheme's monotonicity/step-size requirement fails at entry."""


@dataclass(frozen=True)
class VolatilityBand:
    sigma_low: float
    sigma_high: float

    def __post_init__(self):
        if not (0.0 < self.sigma_low <= self.sigma_high):
            raise ValueError("need 0 < sigma_low <= sigma_high, got (%r, %r)"
                             % (self.sigma_low, self.sigma_high))

    @property
    def degenerate(self):
        return self.sigma_low == self.sigma_high


def g_eval(a, band: VolatilityBand):
    """Envelope nonlinearity 0.5*(sigma_high^2 * a+  -  sigma_low^2 * a-).

    Positively homogeneous, monotone, subadditive; accepts arrays.
    """
    a = np.asarray(a, dtype=float) if isinstance(a, np.ndarray) else a
    hi = band.sigma_high ** 2
    lo = band.sigma_low ** 2
    out = 0.5 * (hi * np.maximum(a, 0.0) - lo * np.maximum(-a, 0.0))
    return out if isinstance(out, np.ndarray) else float(out)


@dataclass(frozen=True)
class ProblemSpec:
    """All data for one double-obstacle problem on [0, T] x [x_min, x_max].

    Coefficients are parsed expressions: b, l, sigma, h, h_prime in (t, x);
    f in (t, x, y, z); phi in x alone.
    """
    horizon: float
    x_min: float
    x_max: float
    band: VolatilityBand
    b: ex.Expression
    l: ex.Expression
    sigma: ex.Expression
    f: ex.Expression
    phi: ex.Expression
    h: ex.Expression
    h_prime: ex.Expression
    name: str = ""

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if not self.x_min < self.x_max:
            raise ValueError("need x_min < x_max")

    @classmethod
    def from_strings(cls, *, horizon, x_min, x_max, sigma_low, sigma_high,
                     b="0", l="0", sigma="1", f="0", phi="0",
                     h="-1000000", h_prime="1000000", name=""):
        return cls(
            horizon=float(horizon), x_min=float(x_min), x_max=float(x_max),
            band=VolatilityBand(float(sigma_low), float(sigma_high)),
            b=ex.parse_expr(b), l=ex.parse_expr(l), sigma=ex.parse_expr(sigma),
            f=ex.parse_expr(f), phi=ex.parse_expr(phi),
            h=ex.parse_expr(h), h_prime=ex.parse_expr(h_prime), name=name,
        )


@dataclass(frozen=True)
class Grid:
    """Uniform time-space grid; t_i = i*dt, x_j = x_min + j*dx."""
    n_t: int
    n_x: int
    t_max: float
    x_min: float
    x_max: float

    def __post_init__(self):
        if self.n_t < 1 or self.n_x < 3:
            raise ValueError("need n_t >= 1 and n_x >= 3")

    @classmethod
    def for_problem(cls, spec: ProblemSpec, n_t: int, n_x: int):
        return cls(n_t=n_t, n_x=n_x, t_max=spec.horizon,
                   x_min=spec.x_min, x_max=spec.x_max)

    @property
    def dt(self):
        return self.t_max / self.n_t

    @property
    def dx(self):
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def t(self):
        return self.dt * np.arange(self.n_t + 1)

    @property
    def x(self):
        return self.x_min + self.dx * np.arange(self.n_x)


@dataclass(frozen=True)
class PenaltyParams:
    """Penalty intensities and stepping controls shared by both solvers.

    ``m_lower`` is either a non-negative intensity or the marker
    ``"projection"`` for exact lower reflection.  In explicit mode the
    step size must satisfy dt*(n_upper + m_lower + kappa_f) <= 1.
    """
    n_upper: float = 0.0
    m_lower: object = 0.0  # float or "projection"
    penalty_mode: str = EXPLICIT
    kappa_f: float = DEFAULT_KAPPA_F

    def __post_init__(self):
        if self.n_upper < 0:
            raise ValueError("n_upper must be >= 0")
        if self.m_lower != PROJECTION and float(self.m_lower) < 0:
            raise ValueError("m_lower must be >= 0 or 'projection'")
        if self.penalty_mode not in (EXPLICIT, NODEWISE_IMPLICIT):
            raise ValueError("penalty_mode must be %r or %r" % (EXPLICIT, NODEWISE_IMPLICIT))
        if self.kappa_f < 0:
            raise ValueError("kappa_f must be >= 0")

    @property
    def project_lower(self):
        return self.m_lower == PROJECTION

    @property
    def m_value(self):
        return 0.0 if self.project_lower else float(self.m_lower)

    def check_explicit_cfl(self, dt: float):
        """Monotonicity bound for the explicit penalty update; raises on failure."""
        if self.penalty_mode == EXPLICIT:
            bound = dt * (self.n_upper + self.m_value + self.kappa_f)
            if bound > 1.0:
                raise StabilityError(
                    "explicit penalty CFL violated: dt*(n+m+kappa_f) = %.6g > 1" % bound)
        else:
            if dt * self.kappa_f >= 1.0:
                raise StabilityError(
                    "implicit mode requires dt*kappa_f < 1, got %.6g" % (dt * self.kappa_f))


@dataclass(frozen=True)
class Violation:
    kind: str          # obstacle-crossing | terminal-sandwich | negative-diffusion
    t_index: int
    x_index: int
    t: float
    x: float
    detail: str


@dataclass
class ValidationReport:
    ok: bool
    violations: list = field(default_factory=list)
    f_lipschitz_y: float = 0.0
    f_lipschitz_z: float = 0.0
    warnings: list = field(default_factory=list)

    @property
    def first_violation(self):
        return self.violations[0] if self.violations else None


def _eval_tx(e, t, x):
    return ex.eval_expr(e, {"t": t, "x": x})


def validate_problem(spec: ProblemSpec, grid: Grid,
                     kappa_f: float = DEFAULT_KAPPA_F) -> ValidationReport:
    """Check the standing assumptions on the grid.

    Verifies h <= h' at every node, the terminal sandwich
    h(T,.) <= phi <= h'(T,.), and sigma >= 0; estimates empirical Lipschitz
    constants of f in (y, z) by sampled difference quotients and warns when
    they exceed the configured kappa_f.  Returns violations, never raises.
    """
    x = grid.x
    report = ValidationReport(ok=True)

    def first_bad(mask, i, kind, detail_fmt, *vals):
        js = np.nonzero(mask)[0]
        if js.size:
            j = int(js[0])
            report.violations.append(Violation(
                kind, i, j, float(grid.t[i]), float(x[j]),
                detail_fmt % tuple(v[j] for v in vals)))
            report.ok = False
            return True
        return False

    crossing_seen = diffusion_seen = False
    for i, t in enumerate(grid.t):
        hv = np.broadcast_to(np.asarray(_eval_tx(spec.h, t, x), dtype=float), x.shape)
        hpv = np.broadcast_to(np.asarray(_eval_tx(spec.h_prime, t, x), dtype=float), x.shape)
        sv = np.broadcast_to(np.asarray(_eval_tx(spec.sigma, t, x), dtype=float), x.shape)
        if not crossing_seen:
            crossing_seen = first_bad(hv > hpv, i, "obstacle-crossing",
                                      "h=%.9g > h'=%.9g", hv, hpv)
        if not diffusion_seen:
            diffusion_seen = first_bad(sv < 0, i, "negative-diffusion", "sigma=%.9g < 0", sv)

    phiv = np.broadcast_to(np.asarray(ex.eval_expr(spec.phi, {"x": x}), dtype=float), x.shape)
    hT = np.broadcast_to(np.asarray(_eval_tx(spec.h, spec.horizon, x), dtype=float), x.shape)
    hpT = np.broadcast_to(np.asarray(_eval_tx(spec.h_prime, spec.horizon, x), dtype=float), x.shape)
    first_bad(hT > phiv, grid.n_t, "terminal-sandwich", "h(T)=%.9g > phi=%.9g", hT, phiv)
    first_bad(phiv > hpT, grid.n_t, "terminal-sandwich", "phi=%.9g > h'(T)=%.9g", phiv, hpT)

    # empirical Lipschitz constants of f in (y, z): deterministic sample
    ts = np.linspace(0.0, spec.horizon, 5)
    xs = np.linspace(spec.x_min, spec.x_max, 9)
    base = np.array([-2.0, 0.0, 2.0])
    delta = 0.5
    lip_y = lip_z = 0.0
    for t in ts:
        for y0 in base:
            for z0 in base:
                f0 = np.asarray(ex.eval_expr(spec.f, {"t": t, "x": xs, "y": y0, "z": z0}))
                fy = np.asarray(ex.eval_expr(spec.f, {"t": t, "x": xs, "y": y0 + delta, "z": z0}))
                fz = np.asarray(ex.eval_expr(spec.f, {"t": t, "x": xs, "y": y0, "z": z0 + delta}))
                lip_y = max(lip_y, float(np.max(np.abs(fy - f0))) / delta)
                lip_z = max(lip_z, float(np.max(np.abs(fz - f0))) / delta)
    report.f_lipschitz_y = lip_y
    report.f_lipschitz_z = lip_z
    if max(lip_y, lip_z) > kappa_f:
        report.warnings.append(
            "sampled driver Lipschitz constant %.4g exceeds configured kappa_f %.4g"
            % (max(lip_y, lip_z), kappa_f))
    return report


def obstacle_fields(spec: ProblemSpec, grid: Grid):
    """Lower and upper obstacle values on the full grid, shape (n_t+1, n_x)."""
    x = grid.x
    h = np.empty((grid.n_t + 1, grid.n_x))
    hp = np.empty_like(h)
    for i, t in enumerate(grid.t):
        h[i] = np.broadcast_to(np.asarray(_eval_tx(spec.h, t, x), dtype=float), x.shape)
        hp[i] = np.broadcast_to(np.asarray(_eval_tx(spec.h_prime, t, x), dtype=float), x.shape)
    return h, hp


def contamination_cone_width(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    """Diagnostic cone width sigma_high * max|sigma(t,x)| * sqrt(T - t) per slice."""
    smax = 0.0
    for t in grid.t:
        sv = np.asarray(_eval_tx(spec.sigma, t, grid.x), dtype=float)
        smax = max(smax, float(np.max(np.abs(sv))))
    return spec.band.sigma_high * smax * np.sqrt(grid.t_max - grid.t)


def uncontaminated_mask(spec: ProblemSpec, grid: Grid) -> np.ndarray:
    """Boolean (n_t+1, n_x) mask of nodes outside the boundary cone."""
    cone = contamination_cone_width(spec, grid)[:, None]
    x = grid.x[None, :]
    return (x >= grid.x_min + cone) & (x <= grid.x_max - cone)
