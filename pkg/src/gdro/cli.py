"""Config ingestion, run orchestration, and bit-stable CSV/JSON emission.

Usage:
    gdro solve --config run.json [--method pde|lattice|both] [--assert]
               [--out DIR] [--threads N]

Exit codes: 0 success, 2 input validation failure, 3 step-size/stability
rejection, 4 assertion-suite failure under --assert.  Diagnostics go to
stderr as key=value lines; numeric output files are written with 17
significant digits so doubles round-trip exactly and reruns are
byte-identical for any thread count.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

from . import catalog as cat
from . import expr as ex
from ._parallel import resolve_threads
from .convergence import (ConvergenceReport, LadderRow, asc_residuals,
                          asc_residuals_global, monotone_ladder,
                          obstacle_violations, stability_probe)
from .gcore import (Grid, PenaltyParams, ProblemSpec, StabilityError,
                    contamination_cone_width, obstacle_fields,
                    uncontaminated_mask, validate_problem)
from .lattice import DoubleLadderReport, double_ladder, penalized_sweep
from .pde import (PdeSchemeParams, complementarity_residual,
                  solve_double_obstacle_direct, solve_penalized_pde)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STABILITY = 3
EXIT_ASSERT = 4

METHODS = ("pde", "lattice", "both")
EMITS = ("field", "report", "residual")

_PROBLEM_REQUIRED = ("horizon", "x_min", "x_max", "sigma_low", "sigma_high")
_PROBLEM_EXPRS = ("b", "l", "sigma", "f", "phi", "h", "h_prime")


class ConfigError(ValueError):
    """Schema violation; ``pointer`` is the JSON pointer to the bad value."""

    def __init__(self, message, pointer):
        super().__init__("%s at %s" % (message, pointer or "/"))
        self.pointer = pointer


def _diag(record, **fields):
    parts = [record] + ["%s=%s" % (k, v) for k, v in fields.items()]
    print(" ".join(parts), file=sys.stderr)


@dataclass
class RunConfig:
    spec: ProblemSpec
    grid: Grid
    method: str
    penalties: PenaltyParams
    ladders: dict
    output_dir: str
    emit: tuple
    problem_name: str | None = None
    entry: object = None  # CatalogEntry when resolved from the catalog


@dataclass
class RunResults:
    grid: Grid
    fields: dict = dc_field(default_factory=dict)   # method -> SolutionField
    direct_field: object = None
    residual_sup: float | None = None
    cross_gap: float | None = None
    ladder_report: ConvergenceReport | None = None
    double_report: DoubleLadderReport | None = None
    m_ladder: list | None = None
    stability_gaps: list = dc_field(default_factory=list)


def _require(obj, key, pointer):
    if key not in obj:
        raise ConfigError("missing required key", pointer)
    return obj[key]


def _as_number(value, pointer):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number", pointer)
    return float(value)


def _as_int(value, pointer):
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("expected an integer", pointer)
    return value


def _parse_problem(value):
    if isinstance(value, str):
        try:
            entry = cat.get_entry(value)
        except KeyError as err:
            raise ConfigError(str(err), "/problem") from None
        return cat.build_spec(entry), entry
    if not isinstance(value, dict):
        raise ConfigError("expected a catalog name or an object", "/problem")
    known = set(_PROBLEM_REQUIRED) | set(_PROBLEM_EXPRS) | {"name"}
    for key in value:
        if key not in known:
            raise ConfigError("unknown problem key", "/problem/%s" % key)
    kwargs = {}
    for key in _PROBLEM_REQUIRED:
        kwargs[key] = _as_number(_require(value, key, "/problem/%s" % key),
                                 "/problem/%s" % key)
    for key in _PROBLEM_EXPRS:
        if key in value:
            if not isinstance(value[key], str):
                raise ConfigError("expected an expression string", "/problem/%s" % key)
            kwargs[key] = value[key]
    kwargs["name"] = value.get("name", "inline")
    try:
        return ProblemSpec.from_strings(**kwargs), None
    except ex.ParseError as err:
        raise ConfigError("bad expression: %s" % err, "/problem") from None
    except ValueError as err:
        raise ConfigError(str(err), "/problem") from None


def _parse_penalties(value, entry):
    defaults = dict(entry.penalties) if entry is not None else {}
    if value is None:
        return PenaltyParams(**defaults)
    if not isinstance(value, dict):
        raise ConfigError("expected an object", "/penalties")
    known = {"n_upper", "m_lower", "penalty_mode", "kappa_f"}
    for key in value:
        if key not in known:
            raise ConfigError("unknown penalties key", "/penalties/%s" % key)
    merged = dict(defaults)
    if "n_upper" in value:
        merged["n_upper"] = _as_number(value["n_upper"], "/penalties/n_upper")
    if "m_lower" in value:
        m = value["m_lower"]
        if m != "projection":
            m = _as_number(m, "/penalties/m_lower")
        merged["m_lower"] = m
    if "penalty_mode" in value:
        merged["penalty_mode"] = value["penalty_mode"]
    if "kappa_f" in value:
        merged["kappa_f"] = _as_number(value["kappa_f"], "/penalties/kappa_f")
    try:
        return PenaltyParams(**merged)
    except ValueError as err:
        raise ConfigError(str(err), "/penalties") from None


def _parse_ladders(value):
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ConfigError("expected an object", "/ladders")
    out = {}
    for key in value:
        if key not in ("n_list", "m_list", "epsilon_list"):
            raise ConfigError("unknown ladders key", "/ladders/%s" % key)
        seq = value[key]
        if not isinstance(seq, list):
            raise ConfigError("expected an array", "/ladders/%s" % key)
        out[key] = [_as_number(v, "/ladders/%s/%d" % (key, i))
                    for i, v in enumerate(seq)]
    return out


def parse_config(data) -> RunConfig:
    if not isinstance(data, dict):
        raise ConfigError("config must be a single JSON object", "")
    known = {"problem", "grid", "method", "penalties", "ladders", "output_dir", "emit"}
    for key in data:
        if key not in known:
            raise ConfigError("unknown key", "/%s" % key)

    spec, entry = _parse_problem(_require(data, "problem", "/problem"))
    gobj = _require(data, "grid", "/grid")
    if not isinstance(gobj, dict):
        raise ConfigError("expected an object", "/grid")
    n_t = _as_int(_require(gobj, "n_t", "/grid/n_t"), "/grid/n_t")
    n_x = _as_int(_require(gobj, "n_x", "/grid/n_x"), "/grid/n_x")
    try:
        grid = Grid.for_problem(spec, n_t, n_x)
    except ValueError as err:
        raise ConfigError(str(err), "/grid") from None

    method = data.get("method", "both")
    if method not in METHODS:
        raise ConfigError("expected one of {pde, lattice, both}", "/method")

    penalties = _parse_penalties(data.get("penalties"), entry)
    ladders = _parse_ladders(data.get("ladders"))

    emit = data.get("emit", ["field", "report"])
    if not isinstance(emit, list) or any(e not in EMITS for e in emit):
        raise ConfigError("expected a subset of {field, report, residual}", "/emit")

    output_dir = data.get("output_dir", "out")
    if not isinstance(output_dir, str):
        raise ConfigError("expected a string", "/output_dir")

    return RunConfig(spec=spec, grid=grid, method=method, penalties=penalties,
                     ladders=ladders, output_dir=output_dir, emit=tuple(emit),
                     problem_name=entry.name if entry is not None else None,
                     entry=entry)


def load_config(path) -> RunConfig:
    """Parse a JSON run config; raises ConfigError with a JSON pointer."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError("invalid JSON: %s" % err, "") from None
    return parse_config(data)


def _fmt(v):
    return "%.17g" % v


def _write_csv(path, header, rows):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_field_csv(path, fld, grid):
    t, x = grid.t, grid.x

    def rows():
        for i in range(grid.n_t + 1):
            for j in range(grid.n_x):
                yield (t[i], x[j], fld.u[i, j], fld.z[i, j], fld.a_plus[i, j],
                       fld.a_minus[i, j], fld.k_defect[i, j], fld.sigma_choice[i, j])

    _write_csv(path, ("t", "x", "u", "z", "a_plus", "a_minus", "k_defect", "sigma_choice"),
               rows())


def write_report_csv(path, ladder_rows, rate_slope):
    slope = rate_slope if rate_slope is not None else float("nan")

    def rows():
        for r in ladder_rows:
            yield (r.n, r.m, r.sup_upper_violation, r.sup_lower_violation,
                   r.mono_violation, r.asc_plus, r.asc_minus, r.cross_gap, slope)

    _write_csv(path, ("n", "m", "sup_upper_violation", "sup_lower_violation",
                      "mono_violation", "asc_plus", "asc_minus", "cross_gap",
                      "rate_slope"), rows())


def write_residual_csv(path, r_grid, grid):
    t, x = grid.t, grid.x

    def rows():
        for i in range(grid.n_t + 1):
            for j in range(grid.n_x):
                if not np.isnan(r_grid[i, j]):
                    yield (t[i], x[j], r_grid[i, j])

    _write_csv(path, ("t", "x", "r"), rows())


def _perturb_lower(spec, eps):
    h_shift = ex.BinOp("+", spec.h, ex.Num(eps))
    return ProblemSpec(horizon=spec.horizon, x_min=spec.x_min, x_max=spec.x_max,
                       band=spec.band, b=spec.b, l=spec.l, sigma=spec.sigma,
                       f=spec.f, phi=spec.phi, h=h_shift, h_prime=spec.h_prime,
                       name=spec.name + "+eps")


def _ladder_rows(results):
    rows = []
    if results.ladder_report is not None:
        rows.extend(results.ladder_report.rows)
    if results.m_ladder:
        rows.extend(results.m_ladder)
    if results.double_report is not None:
        for cell_row in results.double_report.cells:
            for c in cell_row:
                rows.append(LadderRow(
                    n=c.n, m=c.m,
                    sup_upper_violation=c.sup_upper_violation,
                    sup_lower_violation=c.sup_lower_violation,
                    mono_violation=max(c.mono_gap_n, c.mono_gap_m),
                    asc_plus=c.asc_plus, asc_minus=c.asc_minus,
                    error=c.error))
    return rows


def _generic_assertions(results, spec, grid, penalties):
    out = []
    for method, fld in sorted(results.fields.items()):
        out.append(cat.AssertionResult(
            "nonnegative-increments-%s" % method,
            bool(np.min(fld.a_plus) >= -1e-12 and np.min(fld.a_minus) >= -1e-12),
            float(min(np.min(fld.a_plus), np.min(fld.a_minus))), 0.0))
        out.append(cat.AssertionResult(
            "defect-sign-%s" % method, bool(np.max(fld.k_defect) <= 0.0),
            float(np.max(fld.k_defect)), 0.0))
    if penalties.project_lower and "lattice" in results.fields:
        ap, _ = asc_residuals(results.fields["lattice"], spec, grid)
        out.append(cat.AssertionResult("pushing-minimality", ap == 0.0, ap, 0.0))
    if results.direct_field is not None:
        h, hp = obstacle_fields(spec, grid)
        u = results.direct_field.u
        sandwich = float(max(np.max(h - u), np.max(u - hp)))
        out.append(cat.AssertionResult("direct-sandwich", sandwich <= 0.0, sandwich, 0.0))
    return out


def run(config: RunConfig, threads: int = 1, assert_mode: bool = False,
        out_dir: str | None = None) -> int:
    """Execute one configured run; returns the process exit code."""
    spec, grid, penalties = config.spec, config.grid, config.penalties
    out_path = out_dir if out_dir is not None else config.output_dir

    report = validate_problem(spec, grid, kappa_f=penalties.kappa_f)
    for warning in report.warnings:
        _diag("warn", msg='"%s"' % warning)
    if not report.ok:
        v = report.first_violation
        _diag("validate", status="fail", kind=v.kind, t_index=v.t_index,
              x_index=v.x_index, t=_fmt(v.t), x=_fmt(v.x), detail='"%s"' % v.detail)
        return EXIT_VALIDATION
    _diag("validate", status="ok", f_lipschitz_y=_fmt(report.f_lipschitz_y),
          f_lipschitz_z=_fmt(report.f_lipschitz_z))

    ladders = dict(config.ladders)
    if assert_mode and config.entry is not None and not ladders:
        ladders = dict(config.entry.ladders)

    results = RunResults(grid=grid)
    try:
        if config.method in ("lattice", "both"):
            results.fields["lattice"] = penalized_sweep(spec, grid, penalties,
                                                        threads=threads)
        if config.method in ("pde", "both"):
            results.fields["pde"] = solve_penalized_pde(
                spec, PdeSchemeParams(grid=grid, penalty=penalties), threads=threads)
        if config.method == "both":
            keep = uncontaminated_mask(spec, grid)
            results.cross_gap = float(np.max(np.abs(np.where(
                keep, results.fields["lattice"].u - results.fields["pde"].u, 0.0))))

        if "n_list" in ladders:
            results.ladder_report = monotone_ladder(
                spec, grid, ladders["n_list"],
                penalty_mode=penalties.penalty_mode, kappa_f=penalties.kappa_f,
                threads=threads)
        if "m_list" in ladders:
            rows = []
            for m in ladders["m_list"]:
                row = LadderRow(n=penalties.n_upper, m=float(m))
                try:
                    fld = penalized_sweep(spec, grid, PenaltyParams(
                        n_upper=penalties.n_upper, m_lower=float(m),
                        penalty_mode=penalties.penalty_mode,
                        kappa_f=penalties.kappa_f), threads=threads)
                    row.asc_plus, row.asc_minus = asc_residuals(fld, spec, grid)
                    row.sup_lower_violation, row.sup_upper_violation = \
                        obstacle_violations(fld, spec, grid)
                except (StabilityError, ValueError) as err:
                    row.error = str(err)
                rows.append(row)
            results.m_ladder = rows
            if "n_list" in ladders:
                results.double_report = double_ladder(
                    spec, grid, ladders["n_list"], ladders["m_list"],
                    penalty_mode=penalties.penalty_mode,
                    kappa_f=penalties.kappa_f, threads=threads)
        for eps in ladders.get("epsilon_list", ()):
            gap, _ = stability_probe(spec, _perturb_lower(spec, eps), grid,
                                     penalties, threads=threads)
            results.stability_gaps.append(gap)

        if "residual" in config.emit:
            results.direct_field = solve_double_obstacle_direct(
                spec, PdeSchemeParams(grid=grid, penalty=penalties), threads=threads)
            r_grid, results.residual_sup = complementarity_residual(
                results.direct_field, spec, grid)
        else:
            r_grid = None
    except StabilityError as err:
        _diag("stability", status="rejected", detail='"%s"' % err)
        return EXIT_STABILITY

    os.makedirs(out_path, exist_ok=True)
    if "field" in config.emit:
        for method, fld in sorted(results.fields.items()):
            write_field_csv(os.path.join(out_path, "field_%s.csv" % method), fld, grid)
    ladder_rows = _ladder_rows(results)
    if "report" in config.emit and ladder_rows:
        slope = (results.ladder_report.rate_slope
                 if results.ladder_report is not None else None)
        write_report_csv(os.path.join(out_path, "report.csv"), ladder_rows, slope)
    if r_grid is not None:
        write_residual_csv(os.path.join(out_path, "residual.csv"), r_grid, grid)
    _write_summary(os.path.join(out_path, "summary.json"), config, results)

    if assert_mode:
        checks = _generic_assertions(results, spec, grid, penalties)
        if config.entry is not None:
            checks.extend(cat.run_assertions(config.entry, results))
        failed = 0
        for c in checks:
            _diag("assert", name=c.name, status="PASS" if c.ok else "FAIL",
                  value=_fmt(c.value), budget=_fmt(c.budget))
            failed += 0 if c.ok else 1
        if failed:
            _diag("assert-suite", status="fail", failed=failed, total=len(checks))
            return EXIT_ASSERT
        _diag("assert-suite", status="ok", total=len(checks))
    return EXIT_OK


def _write_summary(path, config, results):
    grid = config.grid
    anchor_x = config.entry.anchor_x if config.entry is not None else \
        0.5 * (grid.x_min + grid.x_max)
    j = int(np.argmin(np.abs(grid.x - anchor_x)))
    summary = {
        "problem": config.problem_name or config.spec.name,
        "method": config.method,
        "contamination_cone_t0": float(contamination_cone_width(config.spec, grid)[0]),
        "grid": {"n_t": grid.n_t, "n_x": grid.n_x, "dt": grid.dt, "dx": grid.dx},
        "penalties": {"n_upper": config.penalties.n_upper,
                      "m_lower": ("projection" if config.penalties.project_lower
                                  else config.penalties.m_value),
                      "penalty_mode": config.penalties.penalty_mode,
                      "kappa_f": config.penalties.kappa_f},
        "anchor_x": float(grid.x[j]),
        "anchor_values": {m: float(f.u[0, j]) for m, f in sorted(results.fields.items())},
        "cross_gap": results.cross_gap,
        "residual_sup": results.residual_sup,
        "rate_slope": (results.ladder_report.rate_slope
                       if results.ladder_report is not None else None),
        "stability_gaps": results.stability_gaps,
    }
    for method, fld in sorted(results.fields.items()):
        ap, am = asc_residuals(fld, config.spec, grid)
        gp, gm = asc_residuals_global(fld, config.spec, grid)
        summary["asc_%s" % method] = {"plus": ap, "minus": am,
                                      "plus_global": gp, "minus_global": gm}
    with open(path, "w", encoding="utf-8", newline="") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="gdro",
                                     description="double-obstacle solvers under volatility uncertainty")
    sub = parser.add_subparsers(dest="command", required=True)
    solve = sub.add_parser("solve", help="run a configured solve")
    solve.add_argument("--config", required=True, help="path to a JSON run config")
    solve.add_argument("--method", choices=METHODS, help="override the config method")
    solve.add_argument("--assert", dest="assert_mode", action="store_true",
                       help="run the problem's assertion suite; exit 4 on failure")
    solve.add_argument("--out", help="output directory (overrides config output_dir)")
    solve.add_argument("--threads", type=int,
                       help="worker threads per slice (or env GDRO_THREADS)")
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
    except (OSError, ConfigError) as err:
        _diag("config", status="error", detail='"%s"' % err)
        return EXIT_VALIDATION
    if args.method:
        config.method = args.method
    return run(config, threads=resolve_threads(args.threads),
               assert_mode=args.assert_mode, out_dir=args.out)


if __name__ == "__main__":
    sys.exit(main())
