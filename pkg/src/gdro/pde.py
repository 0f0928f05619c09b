"""Monotone explicit finite differences for the penalized and direct
double-obstacle forms of the fully nonlinear parabolic equation.

The reported time grid may be coarser than the scheme's monotonicity bound
allows, so each reported step is internally subdivided into equal substeps
satisfying

    dt_sub * (sigma_high^2 max sigma^2 / dx^2 + |2 l sigma_high^2 + b|_max / dx
              + kappa_f + n_upper + m_lower) <= 1,

and only the requested slices are stored.  Boundary columns use one-sided
first differences with the curvature copied from the adjacent interior
column (quadratic ghost nodes), which is exact for quadratic profiles; the
complementarity residual masks a cone near the boundary where that
extrapolation and the clamped probes pollute the fields.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from ._coeffs import CoeffCache
from ._parallel import ChunkRunner
from .gcore import (EXPLICIT, NODEWISE_IMPLICIT, Grid, PenaltyParams,
                    ProblemSpec, StabilityError, g_eval, obstacle_fields,
                    uncontaminated_mask)
from .lattice import SolutionField, _ceil_eps, _solve_lower, _solve_upper, _z_field

CONSTANT_EXTRAPOLATION = "constant-extrapolation"

#: contact-set exclusion margins for the residual sup, as domain fractions
RESIDUAL_CONTACT_MARGIN_T = 0.03
RESIDUAL_CONTACT_MARGIN_X = 0.025
_CONTACT_TOL = 1e-9


@dataclass(frozen=True)
class PdeSchemeParams:
    grid: Grid
    penalty: PenaltyParams = dc_field(default_factory=PenaltyParams)
    boundary_mode: str = CONSTANT_EXTRAPOLATION
    max_substeps: int = 10_000

    def __post_init__(self):
        if self.boundary_mode != CONSTANT_EXTRAPOLATION:
            raise ValueError("only %r boundaries are supported" % CONSTANT_EXTRAPOLATION)


def f_operator(d2u, du, u, x, t, spec: ProblemSpec):
    """Full spatial operator G(sigma^2 d2u + 2 l du) + b du + f(t,x,u,sigma du)."""
    from . import expr as ex
    bind = {"t": t, "x": x}
    sv = ex.eval_expr(spec.sigma, bind)
    bv = ex.eval_expr(spec.b, bind)
    lv = ex.eval_expr(spec.l, bind)
    out = (g_eval(sv ** 2 * d2u + 2.0 * lv * du, spec.band) + bv * du
           + ex.eval_expr(spec.f, {"t": t, "x": x, "y": u, "z": sv * du}))
    return out if isinstance(out, np.ndarray) else float(out)


def _stability_substeps(spec, grid, penalties, direct, max_substeps):
    """Substeps per reported step so the explicit bound holds for dt_sub."""
    coeffs = CoeffCache(spec, grid.x)
    hi2 = spec.band.sigma_high ** 2
    smax2 = trans = 0.0
    for t in grid.t:
        smax2 = max(smax2, float(np.max(coeffs.sigma(t) ** 2)))
        trans = max(trans, float(np.max(np.abs(2.0 * coeffs.l(t) * hi2 + coeffs.b(t)))))
    rate = hi2 * smax2 / grid.dx ** 2 + trans / grid.dx + penalties.kappa_f
    if not direct and penalties.penalty_mode == EXPLICIT:
        rate += penalties.n_upper + penalties.m_value
    nsub = max(1, int(_ceil_eps(grid.dt * rate)))
    if nsub > max_substeps:
        raise StabilityError(
            "explicit stability needs %d substeps per step (cap %d); "
            "bound dt*rate = %.6g" % (nsub, max_substeps, grid.dt * rate))
    return nsub


def _ghost_row(u):
    """Quadratic ghost values: one-sided first difference, copied curvature."""
    g = np.empty(u.size + 2)
    g[1:-1] = u
    g[0] = 3.0 * u[0] - 3.0 * u[1] + u[2]
    g[-1] = 3.0 * u[-1] - 3.0 * u[-2] + u[-3]
    return g


def _run_pde(spec, grid, penalties, direct, max_substeps, threads=1):
    dt, dx = grid.dt, grid.dx
    if penalties.penalty_mode == NODEWISE_IMPLICIT and dt * penalties.kappa_f >= 1.0:
        raise StabilityError("implicit mode requires dt*kappa_f < 1")
    nsub = _stability_substeps(spec, grid, penalties, direct, max_substeps)
    dts = dt / nsub
    x = grid.x
    n_x = grid.n_x
    coeffs = CoeffCache(spec, x)
    band = spec.band
    lo2, hi2 = band.sigma_low ** 2, band.sigma_high ** 2
    n_up = penalties.n_upper
    m_lo = penalties.m_value
    implicit = penalties.penalty_mode == NODEWISE_IMPLICIT
    project_lower = penalties.project_lower

    shape = (grid.n_t + 1, n_x)
    out = SolutionField(
        grid=grid,
        u=np.zeros(shape), z=np.zeros(shape),
        a_plus=np.zeros(shape), a_minus=np.zeros(shape),
        k_defect=np.zeros(shape), sigma_choice=np.zeros(shape, dtype=np.int8),
    )
    u = coeffs.phi()
    out.u[grid.n_t] = u

    with ChunkRunner(n_x, threads) as runner:
        for i in range(grid.n_t - 1, -1, -1):
            a_plus_acc = np.zeros(n_x)
            a_minus_acc = np.zeros(n_x)
            kdef_acc = np.zeros(n_x)
            choice = np.zeros(n_x, dtype=np.int8)
            for s in range(nsub):
                # anchored at i*dt so the final substep's clamp uses exactly
                # the reported slice time (keeps the sandwich bitwise exact)
                ts = i * dt + (nsub - 1 - s) * dts
                sv, bv, lv = coeffs.sigma(ts), coeffs.b(ts), coeffs.l(ts)
                hv = coeffs.h(ts)
                hpv = coeffs.h_prime(ts)
                g = _ghost_row(u)
                d2 = (g[2:] - 2.0 * u + g[:-2]) / dx ** 2
                d1 = (g[2:] - g[:-2]) / (2.0 * dx)
                u_in = u

                def substep(lo, hi, ts=ts, u_in=u_in, d2=d2, d1=d1,
                            sv=sv, bv=bv, lv=lv, hv=hv, hpv=hpv):
                    harg = sv[lo:hi] ** 2 * d2[lo:hi] + 2.0 * lv[lo:hi] * d1[lo:hi]
                    F = (g_eval(harg, band) + bv[lo:hi] * d1[lo:hi]
                         + coeffs.f(ts, x[lo:hi], u_in[lo:hi], sv[lo:hi] * d1[lo:hi]))
                    val = u_in[lo:hi] + dts * F
                    h = hv[lo:hi]
                    hp = hpv[lo:hi]
                    if direct:
                        lower = np.maximum(h, val)
                        ap = lower - val
                        val2 = np.minimum(hp, lower)
                        am = lower - val2
                    elif implicit:
                        if project_lower:
                            pre = _solve_upper(val, hp, n_up, dts) if n_up else val
                            am = val - pre
                            val2 = np.maximum(h, pre)
                            ap = val2 - pre
                        else:
                            lower = _solve_lower(val, h, m_lo, dts) if m_lo else val
                            ap = lower - val
                            val2 = _solve_upper(lower, hp, n_up, dts) if n_up else lower
                            am = lower - val2
                    else:
                        if project_lower:
                            upper = val - dts * n_up * np.maximum(u_in[lo:hi] - hp, 0.0)
                            am = val - upper
                            val2 = np.maximum(h, upper)
                            ap = val2 - upper
                        else:
                            ap = dts * m_lo * np.maximum(h - u_in[lo:hi], 0.0)
                            am = dts * n_up * np.maximum(u_in[lo:hi] - hp, 0.0)
                            val2 = val + ap - am
                    kd = -0.5 * (hi2 - lo2) * np.abs(harg) * dts
                    ch = (harg > 0.0).astype(np.int8)
                    return val2, ap, am, kd, ch

                u, ap, am, kd, choice = runner.run(substep)
                a_plus_acc += ap
                a_minus_acc += am
                kdef_acc += kd
            out.u[i] = u
            out.a_plus[i] = a_plus_acc
            out.a_minus[i] = a_minus_acc
            out.k_defect[i] = kdef_acc
            out.sigma_choice[i] = choice

    out.z = _z_field(spec, grid, out.u)
    return out


def solve_penalized_pde(spec: ProblemSpec, params: PdeSchemeParams,
                        threads: int = 1) -> SolutionField:
    """Explicit scheme for the doubly penalized equation.

    Penalties are applied on the incoming (later-time) slice in explicit
    mode; nodewise-implicit mode resolves them exactly against the node
    value, matching the lattice semantics so ladders are comparable.
    ``m_lower="projection"`` replaces the lower penalty with the exact
    reflection, mirroring the lattice's reflected sweep.
    """
    return _run_pde(spec, params.grid, params.penalty, direct=False,
                    max_substeps=params.max_substeps, threads=threads)


def solve_double_obstacle_direct(spec: ProblemSpec, params: PdeSchemeParams,
                                 threads: int = 1) -> SolutionField:
    """Explicit step followed by the double projection min(h', max(h, .)).

    Penalty intensities are ignored (and excluded from the stability bound);
    the output satisfies h <= u <= h' exactly at every node.
    """
    return _run_pde(spec, params.grid, params.penalty, direct=True,
                    max_substeps=params.max_substeps, threads=threads)


def _dilate(mask, kt, kx):
    """Boolean dilation by kt rows and kx columns (separable sliding max)."""
    out = mask.copy()
    for axis, k in ((0, kt), (1, kx)):
        if k <= 0:
            continue
        acc = out.copy()
        for s in range(1, k + 1):
            shifted = np.roll(out, s, axis=axis)
            if axis == 0:
                shifted[:s, :] = False
            else:
                shifted[:, :s] = False
            acc |= shifted
            shifted = np.roll(out, -s, axis=axis)
            if axis == 0:
                shifted[-s:, :] = False
            else:
                shifted[:, -s:] = False
            acc |= shifted
        out = acc
    return out


def complementarity_residual(field: SolutionField, spec: ProblemSpec, grid: Grid):
    """Pointwise residual of the double-obstacle equation and its interior sup.

    r = max(u - h', min(u - h, -dt_forward(u) - F)) with central space
    differences on the same slice.  The sup excludes the boundary cone, the
    final slice, the boundary columns, and a fixed physical margin around
    the realized contact set: one-sided time differences straddle the
    derivative kink at the free boundary, so the residual there is O(1) for
    any grid and says nothing about consistency.
    """
    u = field.u
    dt, dx = grid.dt, grid.dx
    x = grid.x
    h, hp = obstacle_fields(spec, grid)
    coeffs = CoeffCache(spec, x)
    r = np.full((grid.n_t + 1, grid.n_x), np.nan)
    for i in range(grid.n_t):
        t = float(grid.t[i])
        ui = u[i]
        d2 = (ui[2:] - 2.0 * ui[1:-1] + ui[:-2]) / dx ** 2
        d1 = (ui[2:] - ui[:-2]) / (2.0 * dx)
        sv, bv, lv = coeffs.sigma(t)[1:-1], coeffs.b(t)[1:-1], coeffs.l(t)[1:-1]
        F = (g_eval(sv ** 2 * d2 + 2.0 * lv * d1, spec.band) + bv * d1
             + coeffs.f(t, x[1:-1], ui[1:-1], sv * d1))
        ddt = (u[i + 1][1:-1] - ui[1:-1]) / dt
        r[i, 1:-1] = np.maximum(ui[1:-1] - hp[i, 1:-1],
                                np.minimum(ui[1:-1] - h[i, 1:-1], -ddt - F))

    contact = (np.abs(u - h) <= _CONTACT_TOL) | (np.abs(u - hp) <= _CONTACT_TOL)
    kt = int(_ceil_eps(RESIDUAL_CONTACT_MARGIN_T * grid.t_max / dt))
    kx = int(_ceil_eps(RESIDUAL_CONTACT_MARGIN_X * (grid.x_max - grid.x_min) / dx))
    near_contact = _dilate(contact, kt, kx)
    keep = uncontaminated_mask(spec, grid) & ~near_contact & ~np.isnan(r)
    keep[grid.n_t, :] = False
    sup = float(np.max(np.abs(np.where(keep, r, 0.0)))) if keep.any() else 0.0
    return r, sup
