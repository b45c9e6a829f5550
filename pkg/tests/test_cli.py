import json
import math
import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from skdv import io as skio
from skdv.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_REPLAY_MISMATCH, main
from skdv.config import ConfigError, ExperimentConfig, parse_override
from skdv.spectral import SpectralGrid

MINIMAL = {"grid": {"m": 4}, "solver": {"dt": 0.1, "T": 0.0}}

JD = {
    "grid": {"m": 8},
    "solver": {"dt": 0.001953125, "T": 0.5, "seed": 3},
    "initial": {"terms": [[1, 1.0, 0.0], [2, 0.5, 0.0]]},
    "noise": {
        "marks": [1.0, -1.0],
        "rates": [1.0, 1.0],
        "jumps": {"model": "bounded_multiplicative", "scale": 0.3, "radius": 10.0},
        "diffusion": {"model": "diagonal_damped", "amplitude": 0.3},
    },
    "estimator": {"n_traj": 8, "ms": [8, 16], "p_values": [1, 2], "theta_fractions": [0.0078125, 0.015625, 0.03125, 0.0625]},
    "simulate": {"n_traj": 3},
}


def write_cfg(tmp_path, tree, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(yaml.safe_dump(tree))
    return p


def run_cli(*args):
    return main([str(a) for a in args])


# -- io -----------------------------------------------------------------------------


def test_frames_roundtrip(tmp_path):
    g = SpectralGrid(-1.0, 2.0, 3)
    t = np.array([0.0, 0.1, 0.25])
    s = np.random.default_rng(0).standard_normal((3, g.dim))
    p = skio.write_frames(tmp_path / "a.bin", g, t, s)
    meta, t2, s2 = skio.read_frames(p)
    assert meta == {"x1": -1.0, "x2": 2.0, "m": 3}
    assert np.array_equal(t, t2) and np.array_equal(s, s2)
    raw = p.read_bytes()
    assert raw[:8] == b"SKDVTRJ\0" and len(raw) == 40 + 3 * 8 * (g.dim + 1)


def test_frames_corrupt(tmp_path):
    g = SpectralGrid(0, 1, 2)
    p = skio.write_frames(tmp_path / "a.bin", g, [0.0], np.zeros((1, g.dim)))
    raw = p.read_bytes()
    (tmp_path / "b.bin").write_bytes(b"NOTMAGIC" + raw[8:])
    (tmp_path / "c.bin").write_bytes(raw[:-8])
    (tmp_path / "d.bin").write_bytes(raw[:10])
    for name in ("b.bin", "c.bin", "d.bin"):
        with pytest.raises(skio.FormatError):
            skio.read_frames(tmp_path / name)


def test_text_trajectory_roundtrip(tmp_path):
    g = SpectralGrid(0, 2 * math.pi, 2)
    t = np.array([0.0, 1 / 3])
    s = np.random.default_rng(1).standard_normal((2, g.dim))
    p = skio.write_trajectory_text(tmp_path / "t.txt", g, t, s)
    meta, t2, s2 = skio.read_trajectory_text(p)
    assert meta["m"] == 2 and np.array_equal(t2, t) and np.array_equal(s2, s)
    with pytest.raises(skio.FormatError):
        skio.write_table(tmp_path / "x.txt", ["a"], [[1.0]])
        skio.read_trajectory_text(tmp_path / "x.txt")


def test_json_nonfinite(tmp_path):
    p = skio.write_json(tmp_path / "r.json", {"b": math.inf, "a": [np.float64(1.5), math.nan], "c": np.int64(2)})
    assert skio.read_json(p) == {"a": [1.5, "nan"], "b": "inf", "c": 2}
    assert p.read_text().index('"a"') < p.read_text().index('"b"')


# -- config ----------------------------------------------------------------------------------


def test_config_defaults_and_required():
    cfg = ExperimentConfig(MINIMAL)
    assert cfg["solver"]["scheme"] == "exponential_rk4"
    with pytest.raises(ConfigError, match="solver.dt"):
        ExperimentConfig({"grid": {"m": 4}, "solver": {"T": 1.0}})
    with pytest.raises(ConfigError, match="grid.m"):
        ExperimentConfig({"solver": {"dt": 0.1, "T": 1.0}})


@pytest.mark.parametrize(
    "patch, key",
    [
        ({"solver": {"dt": -1}}, "solver.dt"),
        ({"solver": {"scheme": "rk45"}}, "solver.scheme"),
        ({"solver": {"bogus": 1}}, "solver.bogus"),
        ({"noise": {"marks": [1.0], "rates": [1.0, 2.0]}}, "noise.rates"),
        ({"noise": {"jumps": {"model": "nope"}}}, "noise.jumps.model"),
        ({"grid": {"m": 0}}, "grid.m"),
        ({"estimator": {"p_values": [5.0]}}, "estimator.p_values[0]"),
        ({"estimator": {"thetas": [0.1, 0.2]}}, "estimator.thetas"),
        ({"output": {"formats": ["hdf5"]}}, "output.formats"),
    ],
)
def test_config_errors_name_key(patch, key):
    tree = json.loads(json.dumps(MINIMAL))
    for sect, vals in patch.items():
        tree.setdefault(sect, {}).update(vals)
    with pytest.raises(ConfigError) as info:
        ExperimentConfig(tree)
    assert info.value.key == key


def test_overrides_precedence():
    cfg = ExperimentConfig.from_yaml(yaml.safe_dump(JD), ["solver.dt=0.00390625", "noise.jumps.scale=0.1", "estimator.ms=[8]"])
    assert cfg["solver"]["dt"] == 0.00390625 and cfg["noise"]["jumps"]["scale"] == 0.1 and cfg["estimator"]["ms"] == [8]
    assert parse_override("solver.R=inf") == ("solver.R", "inf")
    with pytest.raises(ConfigError):
        parse_override("no_equals_sign")


def test_config_roundtrip_example():
    cfg = ExperimentConfig(JD)
    assert ExperimentConfig.from_yaml(cfg.to_yaml()) == cfg


@settings(max_examples=40, deadline=None)
@given(
    st.integers(1, 64),
    st.floats(1e-4, 0.5),
    st.floats(0.0, 5.0),
    st.integers(0, 2**31),
    st.sampled_from(["exponential_rk4", "exponential_euler", "semi_implicit_cn"]),
    st.sampled_from(["zero", "additive", "bounded_multiplicative", "linear"]),
    st.floats(0.0, 3.0),
)
def test_config_roundtrip_property(m, dt, T, seed, scheme, jump_model, scale):
    tree = {
        "grid": {"m": m},
        "solver": {"dt": dt, "T": T, "seed": seed, "scheme": scheme},
        "noise": {"marks": [1.0], "rates": [0.5], "jumps": {"model": jump_model, "scale": scale}},
    }
    cfg = ExperimentConfig(tree)
    assert ExperimentConfig.from_yaml(cfg.to_yaml()) == cfg


def test_config_builders():
    cfg = ExperimentConfig(JD)
    g = cfg.grid()
    F, Phi, nu = cfg.models(g)
    assert F.name == "bounded_multiplicative" and Phi.name == "diagonal_damped" and len(nu) == 2
    sc = cfg.solver_config(16, 0.005, 1)
    assert (sc.m, sc.dt, sc.noise_refine) == (16, 0.005, 1)
    u0 = g.interpolate(cfg.initial_function(g))
    assert u0.coeffs[1] == pytest.approx(math.sqrt(math.pi))
    assert cfg.thetas() == pytest.approx([0.5 * f for f in JD["estimator"]["theta_fractions"]])


def test_inflate_scales_noise():
    tree = json.loads(json.dumps(JD))
    tree["noise"]["inflate"] = 100
    cfg = ExperimentConfig(tree)
    F, Phi, _ = cfg.models(cfg.grid())
    assert F.scale == pytest.approx(30.0) and Phi.amplitude == pytest.approx(30.0)


# -- cli -------------------------------------------------------------------------------------


def test_minimal_T0(tmp_path, capsys):
    cfg = write_cfg(tmp_path, MINIMAL)
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_OK
    man = skio.read_json(tmp_path / "o" / "manifest.json")
    assert man["status"] == 0 and man["format"] == "skdv-manifest 1"
    assert set(man["files"]) == {"traj_00000.txt", "traj_00000.bin", "simulate.json"}
    _, t, s = skio.read_frames(tmp_path / "o" / "traj_00000.bin")
    assert t.tolist() == [0.0] and s.shape == (1, 9)


def test_missing_dt_exit2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, {"grid": {"m": 4}, "solver": {"T": 1.0}})
    assert run_cli("simulate", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "solver.dt" in capsys.readouterr().err


def test_missing_file_exit4(tmp_path, capsys):
    assert run_cli("simulate", "--config", tmp_path / "nope.yaml") == EXIT_IO


def test_bad_yaml_exit2(tmp_path):
    p = tmp_path / "bad.yaml"
    p.write_text("grid: {m: [\n")
    assert run_cli("simulate", "--config", p) == EXIT_CONFIG


def test_aldous_empty_thetas_exit2(tmp_path, capsys):
    tree = json.loads(json.dumps(JD))
    tree["estimator"]["theta_fractions"] = []
    cfg = write_cfg(tmp_path, tree)
    assert run_cli("aldous", "--config", cfg, "--out", tmp_path / "o") == EXIT_CONFIG
    assert "estimator.thetas" in capsys.readouterr().err


def test_validate_model_pass(tmp_path):
    cfg = write_cfg(tmp_path, JD)
    assert run_cli("validate-model", "--config", cfg, "--out", tmp_path / "v") == EXIT_OK
    rep = skio.read_json(tmp_path / "v" / "validation.json")
    assert rep["reports"][0]["model"] == "bounded_multiplicative" and rep["reports"][0]["passed"]


def test_simulate_artifacts_and_replay(tmp_path, capsys):
    cfg = write_cfg(tmp_path, JD)
    out = tmp_path / "sim"
    assert run_cli("simulate", "--config", cfg, "--out", out, "--threads", 2) == EXIT_OK
    man = skio.read_json(out / "manifest.json")
    for name, digest in man["files"].items():
        assert skio.sha256_file(out / name) == digest
    _, t_txt, s_txt = skio.read_trajectory_text(out / "traj_00000.txt")
    _, t_bin, s_bin = skio.read_frames(out / "traj_00000.bin")
    assert np.array_equal(t_txt, t_bin) and np.array_equal(s_txt, s_bin)
    assert run_cli("replay", "--config", out / "manifest.json") == EXIT_OK
    for name in man["files"]:
        assert (out / name).read_bytes() == (out / "replay" / name).read_bytes()
    assert "0 mismatches" in capsys.readouterr().out


def test_replay_detects_tampering(tmp_path):
    cfg = write_cfg(tmp_path, JD)
    out = tmp_path / "sim"
    run_cli("simulate", "--config", cfg, "--out", out)
    man = skio.read_json(out / "manifest.json")
    man["files"]["traj_00000.bin"] = "0" * 64
    skio.write_json(out / "manifest.json", man)
    assert run_cli("replay", "--config", out / "manifest.json", "--out", tmp_path / "r") == EXIT_REPLAY_MISMATCH
    assert run_cli("replay", "--config", out / "manifest.json", "--set", "solver.dt=1") == EXIT_CONFIG


def test_moments_and_aldous_replay(tmp_path):
    cfg = write_cfg(tmp_path, JD)
    for cmd in ("moments", "aldous"):
        out = tmp_path / cmd
        status = run_cli(cmd, "--config", cfg, "--out", out)
        assert status in (0, 1)
        assert run_cli("replay", "--config", out / "manifest.json") == EXIT_OK
    meta, header, data = skio.read_table(tmp_path / "moments" / "sup_moment.dat")
    assert header == ["m", "p", "mean", "se"] and data[:, 0].tolist() == [8, 8, 16, 16]
    rep = skio.read_json(tmp_path / "moments" / "moments.json")
    assert {"statistics", "half_dt_statistics", "dt_halving"} <= set(rep)
    assert (tmp_path / "moments" / "v_integral_half_dt.dat").exists()
    ald = skio.read_json(tmp_path / "aldous" / "aldous.json")
    assert len(ald["thetas"]) == 4


def test_blowup_exit3(tmp_path):
    tree = json.loads(json.dumps(JD))
    tree["grid"]["m"] = 16
    tree["solver"].update({"dt": 0.001, "T": 1.0, "R": "inf", "scheme": "exponential_euler", "cutoff": {"forced_one": True}})
    tree["noise"]["inflate"] = 100
    tree["noise"]["jumps"]["model"] = "linear"
    tree["estimator"]["theta_fractions"] = []
    cfg = write_cfg(tmp_path, tree)
    out = tmp_path / "b"
    assert run_cli("simulate", "--config", cfg, "--out", out) == EXIT_BLOWUP
    info = skio.read_json(out / "blowup.json")
    assert info["error"] == "numerical blow-up" and isinstance(info["h_norm"], float)
    assert skio.read_json(out / "manifest.json")["status"] == EXIT_BLOWUP


def test_console_script_and_fallback(tmp_path):
    # the python fallback is selected at import through the environment
    env = dict(os.environ, SKDV_BACKEND="python")
    code = "from skdv import backend; print(backend.NAME)"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
    cfg = write_cfg(tmp_path, MINIMAL)
    res = subprocess.run([sys.executable, "-m", "skdv.cli", "simulate", "--config", str(cfg), "--out", str(tmp_path / "o")], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    assert skio.read_json(tmp_path / "o" / "manifest.json")["backend"] == "python"
