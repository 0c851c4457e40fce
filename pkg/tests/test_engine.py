import json
import math

import numpy as np
import pytest
from scipy.linalg import solve_continuous_lyapunov

from smoattack.engine import runner
from smoattack.engine.cli import main
from smoattack.engine.config import load_config, parse_attack_expr, parse_config
from smoattack.engine.io import read_trace, write_trace
from smoattack.engine.plots import emit_plots
from smoattack.engine.runner import SimTrace, compare_runs, run_scenario
from smoattack.errors import ConfigError, GridMismatch, NumericBlowup, TraceIOError
from smoattack.model import Sine, StateFeedback, Step, build_wecc

from conftest import bundled

SHORT = {"integration": {"horizon": 0.5}, "metrics": {"window": [0.2, 0.5]}}

QUIET_WECC = """
[scenario]
name = quiet
[plant]
type = wecc
[observer]
primary = stw
blocks = stw, sparse
[stw]
rho_c = 200
lipschitz = 10, 40, 100
tau_f = 0.005
filter_order = 2
[integration]
horizon = 0.5
[outputs]
decimation = 10
[metrics]
window = 0.2, 0.5
"""

UNSTABLE = """
[scenario]
name = unstable
[plant]
type = linear-custom
A = 1000
B1 = 1
C = 1
open_loop_unstable = true
x0 = 1
[attack]
[observer]
primary = none
[integration]
horizon = 1
"""


def short_wecc(**extra):
    sections = {k: dict(v) for k, v in SHORT.items()}
    for k, v in extra.items():
        sections.setdefault(k, {}).update(v)
    return bundled("wecc", **sections)


class TestConfig:
    def test_unknown_key_names_path(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[stw]\nrho = 1\n")
        assert info.value.key == "stw.rho"

    def test_unknown_section(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[solver]\nx = 1\n")
        assert info.value.key == "solver"

    def test_bad_value(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[integration]\ndt = -1\n")
        assert info.value.key == "integration.dt"

    def test_window_outside_horizon(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[integration]\nhorizon = 1\n[metrics]\nwindow = 0, 2\n")
        assert info.value.key == "metrics.window"

    def test_bad_attack_channel(self):
        with pytest.raises(ConfigError) as info:
            parse_config("[attack]\ndx1 = tan(1, 2)\n")
        assert info.value.key == "attack.dx1"
        with pytest.raises(ConfigError):
            parse_config("[attack]\ndz1 = sin(1, 2)\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.cfg")

    def test_attack_grammar(self):
        terms = parse_attack_expr("step(0) - step(4, 2) + sin(1, 0.5)")
        assert terms[0] == Step(0.0, 1.0)
        assert terms[1] == Step(4.0, -2.0)
        assert isinstance(terms[2], Sine) and terms[2](math.pi) == pytest.approx(math.sin(0.5 * math.pi))
        cos = parse_attack_expr("cos(2, pi)")[0]
        assert cos(0.3) == pytest.approx(2 * math.cos(math.pi * 0.3))
        fb = parse_attack_expr("-fb(4, 2)")[0]
        assert fb == StateFeedback(3, -2.0)
        assert parse_attack_expr("0") == ()
        with pytest.raises(ValueError):
            parse_attack_expr("fb(0, 1)")
        with pytest.raises(ValueError):
            parse_attack_expr("sin(1)")

    def test_attack_overrides(self):
        cfg = short_wecc(attack={"gate_dx": 0.1, "dy2": "const(3)"})
        assert cfg.dx.gate == 0.1 and cfg["attack"]["gate_dx"] == 0.1
        assert cfg.dy.channels[1] == parse_attack_expr("const(3)")
        assert cfg.dy_declared == 5
        # the source file stays untouched
        assert bundled("wecc").dx.gate == 10.0
        with pytest.raises(ConfigError) as info:
            short_wecc(attack={"dx1": "tan(1)"})
        assert info.value.key == "attack.dx1"
        with pytest.raises(ConfigError):
            short_wecc(attack={"bogus": 1})

    def test_bundled_scenarios_load(self):
        for name in ("wecc", "wecc_reference", "smo_fixed", "smo_adaptive", "motivation"):
            assert bundled(name).name == name


class TestRuns:
    def test_deterministic_csv(self, tmp_path):
        cfg = short_wecc()
        for k in range(2):
            trace, _ = run_scenario(cfg)
            write_trace(trace, tmp_path / f"run{k}.csv")
        assert (tmp_path / "run0.csv").read_bytes() == (tmp_path / "run1.csv").read_bytes()

    def test_zero_attack(self):
        trace, m = run_scenario(parse_config(QUIET_WECC))
        assert max(m.dx_rmse) < 1e-2
        assert max(m.dy_rmse) < 1e-2
        assert m.cleanup_ratio == [0.0] * 6

    def test_compare_identical(self):
        trace, _ = run_scenario(parse_config(QUIET_WECC))
        res = compare_runs(trace, trace)
        assert res["corrupted"] == [0.0] * 6 and res["ratio"] == [0.0] * 6

    def test_compare_grid_mismatch(self):
        trace, _ = run_scenario(parse_config(QUIET_WECC))
        with pytest.raises(GridMismatch):
            compare_runs(trace, trace.subsample(2))

    def test_decimation_consistency(self):
        full, _ = run_scenario(short_wecc(outputs={"decimation": 1}))
        dec, _ = run_scenario(short_wecc(outputs={"decimation": 10}))
        ref_full, _ = run_scenario(bundled("wecc_reference", integration={"horizon": 0.5},
                                           outputs={"decimation": 1}, metrics={"window": [0.2, 0.5]}))
        assert np.array_equal(full.subsample(10).data, dec.data)
        a = compare_runs(full.subsample(10), ref_full.subsample(10), window=(0.2, 0.5))
        b = compare_runs(dec, ref_full.subsample(10), window=(0.2, 0.5))
        for key in a:
            assert np.allclose(a[key], b[key], rtol=0, atol=1e-12)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_blowup(self):
        with pytest.raises(NumericBlowup) as info:
            run_scenario(parse_config(UNSTABLE))
        assert info.value.step is not None and info.value.step > 0

    def test_observer_cannot_touch_plant(self, monkeypatch):
        cfg = short_wecc()
        clean, _ = run_scenario(cfg)
        rng = np.random.default_rng(0)
        original = runner._StwBlock._estimates

        def garbage(self, y):
            original(self, y)
            self.x_hat = rng.normal(scale=1e3, size=self.x_hat.shape)
            self.dx_hat = rng.normal(scale=1e3, size=self.dx_hat.shape)

        monkeypatch.setattr(runner._StwBlock, "_estimates", garbage)
        dirty, _ = run_scenario(cfg)
        assert dirty.group("x").tobytes() == clean.group("x").tobytes()
        assert dirty.group("y").tobytes() == clean.group("y").tobytes()
        assert not np.array_equal(dirty.group("dx_hat"), clean.group("dx_hat"))

    def test_energy_decreases_without_attacks(self):
        cfg = bundled("wecc_reference", plant={"x0": [0.1, -0.05, 0.02, 0.1, 0.0, -0.1]},
                      integration={"horizon": 5.0}, outputs={"decimation": 10},
                      metrics={"window": [0, 5]})
        trace, _ = run_scenario(cfg)
        A = build_wecc().A
        P = solve_continuous_lyapunov(A.T, -np.eye(6))
        x = trace.group("x")
        V = np.einsum("ij,jk,ik->i", x, P, x)
        late = V[trace.t >= 0.01 * 5.0]
        assert np.all(np.diff(late) <= 0.0)
        assert late[-1] < late[0]


class TestIO:
    def test_empty_trace_header_only(self, tmp_path):
        trace = SimTrace(("t", "x1"), np.zeros((0, 2)), 1e-4, 1, {})
        write_trace(trace, tmp_path / "empty.csv")
        assert (tmp_path / "empty.csv").read_text().strip() == "t,x1"
        back = read_trace(tmp_path / "empty.csv")
        assert back.data.shape == (0, 2)

    def test_round_trip_full_precision(self, tmp_path):
        rng = np.random.default_rng(0)
        data = rng.normal(size=(20, 3)) * 10.0 ** rng.integers(-300, 300, size=(20, 3))
        data[:, 0] = np.arange(20) * 1e-4
        trace = SimTrace(("t", "a1", "a2"), data, 1e-4, 1, {})
        write_trace(trace, tmp_path / "t.csv")
        back = read_trace(tmp_path / "t.csv")
        assert list(back.columns) == list(trace.columns)
        assert np.array_equal(back.data, data)

    def test_unwritable(self, tmp_path):
        trace = SimTrace(("t",), np.zeros((1, 1)), 1e-4, 1, {})
        with pytest.raises(TraceIOError):
            write_trace(trace, tmp_path)

    def test_read_garbage(self, tmp_path):
        (tmp_path / "bad.csv").write_text("t,x1\n0,abc\n")
        with pytest.raises(TraceIOError):
            read_trace(tmp_path / "bad.csv")

    def test_wecc_figures(self, tmp_path):
        trace, _ = run_scenario(short_wecc())
        emit_plots(trace, tmp_path)
        names = sorted(p.name for p in tmp_path.iterdir())
        assert names == [f"fig{k}.svg" for k in range(4, 9)]
        assert all(p.stat().st_size > 1000 for p in tmp_path.iterdir())


def write_cfg(path, text):
    path.write_text(text)
    return str(path)


class TestCli:
    def test_simulate(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "q.cfg", QUIET_WECC)
        code = main(["simulate", cfg, "--trace", str(tmp_path / "q.csv"),
                     "--metrics", str(tmp_path / "m.json")])
        assert code == 0
        out = json.loads(capsys.readouterr().out)
        assert out["scenario"] == "quiet"
        assert json.loads((tmp_path / "m.json").read_text())["steps"] == 5000
        assert read_trace(tmp_path / "q.csv").data.shape[0] == 501

    def test_config_error_exit(self, tmp_path):
        cfg = write_cfg(tmp_path / "bad.cfg", "[stw]\nrho = 1\n")
        assert main(["simulate", cfg]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_blowup_exit(self, tmp_path):
        cfg = write_cfg(tmp_path / "u.cfg", UNSTABLE)
        assert main(["simulate", cfg]) == 3

    def test_check_transforms(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path / "q.cfg", QUIET_WECC)
        assert main(["check-transforms", cfg]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["relative_degrees"] == [2, 2, 2]
        # the wide sensor distribution has no coordinate chain; the report says why
        assert report["chain"] is None and "chain_error" in report

    def test_check_transforms_threshold(self, tmp_path, capsys):
        smo = str(bundled("smo_fixed").source)
        assert main(["check-transforms", smo]) == 0
        assert main(["check-transforms", smo, "--tol", "-1"]) == 4

    def test_batch(self, tmp_path, capsys):
        d = tmp_path / "cfgs"
        d.mkdir()
        write_cfg(d / "a.cfg", QUIET_WECC.replace("name = quiet", "name = first"))
        write_cfg(d / "b.cfg", QUIET_WECC.replace("name = quiet", "name = second"))
        out = tmp_path / "out"
        assert main(["batch", str(d), "--out", str(out), "--jobs", "2"]) == 0
        assert (out / "first.csv").exists() and (out / "second.csv").exists()
        metrics = json.loads((out / "metrics.json").read_text())
        assert set(metrics) == {"first", "second"}

    def test_batch_duplicate_names(self, tmp_path):
        d = tmp_path / "cfgs"
        d.mkdir()
        write_cfg(d / "a.cfg", QUIET_WECC)
        write_cfg(d / "b.cfg", QUIET_WECC)
        assert main(["batch", str(d), "--out", str(tmp_path / "o")]) == 2

    def test_differentiate(self, tmp_path):
        dt = 1e-4
        t = np.arange(20_001) * dt
        np.savetxt(tmp_path / "s.csv", np.sin(t), delimiter=",")
        out = tmp_path / "d.csv"
        assert main(["differentiate", str(tmp_path / "s.csv"), "--dt", "1e-4", "--order", "1",
                     "--lipschitz", "2", "--out", str(out)]) == 0
        z = np.loadtxt(out, delimiter=",", skiprows=1)
        mask = z[:, 0] >= 1.0
        assert np.max(np.abs(z[mask, 2] - np.cos(z[mask, 0]))) < 1e-2

    def test_sparse_recover(self, tmp_path, capsys):
        from smoattack.model import WECC_D_OMEGA
        np.savetxt(tmp_path / "phi.csv", WECC_D_OMEGA, delimiter=",")
        np.savetxt(tmp_path / "xi.csv", 0.5 * WECC_D_OMEGA[:, 4], delimiter=",")
        assert main(["sparse-recover", str(tmp_path / "phi.csv"), str(tmp_path / "xi.csv"),
                     "--lam", "0.02"]) == 0
        res = json.loads(capsys.readouterr().out)
        assert res["support"] == [5] and res["converged"]

    def test_sparse_recover_shape_error(self, tmp_path):
        np.savetxt(tmp_path / "phi.csv", np.eye(3), delimiter=",")
        np.savetxt(tmp_path / "xi.csv", np.ones(2), delimiter=",")
        assert main(["sparse-recover", str(tmp_path / "phi.csv"), str(tmp_path / "xi.csv")]) == 2
