import json
import subprocess
import sys

import pytest

from gdro.cli import (EXIT_ASSERT, EXIT_OK, EXIT_STABILITY, EXIT_VALIDATION,
                      ConfigError, load_config, main, parse_config)

INLINE_HEAT = {
    "horizon": 1.0, "x_min": -3.0, "x_max": 3.0,
    "sigma_low": 1.0, "sigma_high": 1.0, "phi": "x*x",
}


def _write(tmp_path, payload, name="run.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def _solve(tmp_path, payload, *extra):
    return main(["solve", "--config", _write(tmp_path, payload),
                 "--out", str(tmp_path / "out"), *extra])


class TestLoadConfig:
    def test_catalog_name(self, tmp_path):
        cfg = load_config(_write(tmp_path, {
            "problem": "gheat-convex", "grid": {"n_t": 10, "n_x": 21}}))
        assert cfg.problem_name == "gheat-convex"
        assert cfg.grid.n_t == 10 and cfg.method == "both"

    def test_inline_problem(self, tmp_path):
        cfg = load_config(_write(tmp_path, {
            "problem": dict(INLINE_HEAT, f="0.5*z"),
            "grid": {"n_t": 10, "n_x": 21}, "method": "lattice"}))
        assert cfg.problem_name is None and cfg.method == "lattice"

    def test_missing_grid_pointer(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(_write(tmp_path, {"problem": "gheat-convex"}))
        assert err.value.pointer == "/grid"

    def test_unknown_catalog_name_lists_valid(self, tmp_path):
        with pytest.raises(ConfigError, match="gheat-convex"):
            load_config(_write(tmp_path, {
                "problem": "no-such-problem", "grid": {"n_t": 4, "n_x": 5}}))

    def test_method_enumeration(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            load_config(_write(tmp_path, {
                "problem": "gheat-convex", "grid": {"n_t": 4, "n_x": 5},
                "method": "spectral"}))
        assert "pde, lattice, both" in str(err.value)
        assert err.value.pointer == "/method"

    def test_unknown_key_pointer(self, tmp_path):
        with pytest.raises(ConfigError) as err:
            parse_config({"problem": "gheat-convex", "grid": {"n_t": 4, "n_x": 5},
                          "turbo": True})
        assert err.value.pointer == "/turbo"

    def test_bad_expression_pointer(self, tmp_path):
        with pytest.raises(ConfigError, match="bad expression"):
            parse_config({"problem": dict(INLINE_HEAT, phi="x +* 2"),
                          "grid": {"n_t": 4, "n_x": 5}})

    def test_penalties_and_ladders(self, tmp_path):
        cfg = parse_config({
            "problem": "double-obstacle-sine", "grid": {"n_t": 10, "n_x": 21},
            "penalties": {"n_upper": 8, "m_lower": "projection"},
            "ladders": {"n_list": [2, 4]}, "emit": ["field"]})
        assert cfg.penalties.project_lower and cfg.penalties.n_upper == 8.0
        assert cfg.ladders == {"n_list": [2.0, 4.0]}
        assert cfg.emit == ("field",)

    def test_not_an_object(self):
        with pytest.raises(ConfigError):
            parse_config([1, 2, 3])


class TestRun:
    def test_success_and_outputs(self, tmp_path):
        rc = _solve(tmp_path, {
            "problem": dict(INLINE_HEAT), "grid": {"n_t": 40, "n_x": 41},
            "method": "both", "emit": ["field", "report", "residual"]})
        assert rc == EXIT_OK
        out = tmp_path / "out"
        assert (out / "field_lattice.csv").exists()
        assert (out / "field_pde.csv").exists()
        assert (out / "residual.csv").exists()
        assert (out / "summary.json").exists()

        lines = (out / "field_lattice.csv").read_text().splitlines()
        assert lines[0] == "t,x,u,z,a_plus,a_minus,k_defect,sigma_choice"
        # 17 significant digits: doubles round-trip through the text exactly
        summary = json.loads((out / "summary.json").read_text())
        anchor = summary["anchor_values"]["lattice"]
        row = next(l for l in lines[1:] if l.startswith("0,"))
        cells = row.split(",")
        assert float(cells[0]) == 0.0
        mid = next(l for l in lines if l.split(",")[0] == "0" and
                   abs(float(l.split(",")[1])) < 1e-12)
        assert float(mid.split(",")[2]) == anchor

    def test_validation_exit(self, tmp_path, capsys):
        rc = _solve(tmp_path, {
            "problem": dict(INLINE_HEAT, h="1", h_prime="0", phi="0.5"),
            "grid": {"n_t": 10, "n_x": 11}})
        assert rc == EXIT_VALIDATION
        err = capsys.readouterr().err
        assert "obstacle-crossing" in err and "x_index=0" in err

    def test_stability_exit(self, tmp_path, capsys):
        rc = _solve(tmp_path, {
            "problem": dict(INLINE_HEAT), "grid": {"n_t": 10, "n_x": 11},
            "penalties": {"n_upper": 1e6}, "method": "lattice"})
        assert rc == EXIT_STABILITY
        assert "CFL" in capsys.readouterr().err

    def test_assert_failure_exit(self, tmp_path):
        # weak penalties cannot pin the coinciding-obstacle band: budget fails
        rc = _solve(tmp_path, {
            "problem": "coinciding-obstacles", "grid": {"n_t": 50, "n_x": 41},
            "penalties": {"n_upper": 1.0, "m_lower": 1.0,
                          "penalty_mode": "nodewise-implicit"},
            "method": "lattice"}, "--assert")
        assert rc == EXIT_ASSERT

    def test_assert_pass(self, tmp_path):
        rc = _solve(tmp_path, {
            "problem": "coinciding-obstacles", "grid": {"n_t": 50, "n_x": 41},
            "emit": ["field", "residual"], "method": "both"}, "--assert")
        assert rc == EXIT_OK

    def test_method_override(self, tmp_path):
        rc = _solve(tmp_path, {
            "problem": dict(INLINE_HEAT), "grid": {"n_t": 10, "n_x": 11},
            "method": "both"}, "--method", "lattice")
        assert rc == EXIT_OK
        assert not (tmp_path / "out" / "field_pde.csv").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        payload = {"problem": "gheat-convex", "grid": {"n_t": 30, "n_x": 31},
                   "method": "both", "emit": ["field", "report", "residual"]}
        cfg = _write(tmp_path, payload)
        main(["solve", "--config", cfg, "--out", str(tmp_path / "a"), "--threads", "1"])
        main(["solve", "--config", cfg, "--out", str(tmp_path / "b"), "--threads", "3"])
        for name in ("field_lattice.csv", "field_pde.csv", "summary.json", "residual.csv"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()

    def test_missing_config_file(self, tmp_path):
        assert main(["solve", "--config", str(tmp_path / "nope.json")]) == EXIT_VALIDATION


def test_threads_env_fallback(monkeypatch):
    from gdro._parallel import resolve_threads
    monkeypatch.delenv("GDRO_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("GDRO_THREADS", "6")
    assert resolve_threads(None) == 6
    assert resolve_threads(2) == 2  # explicit flag wins


def test_console_entry_point(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"problem": dict(INLINE_HEAT),
                               "grid": {"n_t": 10, "n_x": 11},
                               "method": "lattice"}))
    proc = subprocess.run(
        [sys.executable, "-m", "gdro.cli", "solve", "--config", str(cfg),
         "--out", str(tmp_path / "out")],
        capture_output=True, text=True)
    assert proc.returncode == 0
    assert "validate status=ok" in proc.stderr
