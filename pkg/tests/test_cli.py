import json
import subprocess
import sys

import numpy as np
import pytest

from hankelx.cli import derive_seed, main
from hankelx.signals import condition_number, load_signal


def run_cli(*args):
    return main(list(args))


def test_unknown_command_exit_2(capsys):
    assert run_cli("frobnicate") == 2


def test_unknown_key_exit_2(capsys):
    assert run_cli("gen", "kind=spectral", "n=64", "r=2", "bogus=1") == 2


def test_gen_invalid_rank_exit_2(tmp_path, capsys):
    assert run_cli("gen", "--out", str(tmp_path), "kind=spectral", "n=64", "r=40") == 2


def test_gen_missing_config_file_exit_2(tmp_path, capsys):
    assert run_cli("gen", "--config", str(tmp_path / "nope.json")) == 2


def test_gen_spectral_deterministic(tmp_path):
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    args = ["gen", "--seed", "7", "kind=spectral", "n=255", "r=5", "kappa=10"]
    assert run_cli(*args, "--out", str(out1)) == 0
    assert run_cli(*args, "--out", str(out2)) == 0
    assert (out1 / "signal.hnkz").read_bytes() == (out2 / "signal.hnkz").read_bytes()
    assert (out1 / "observed.hnkz").read_bytes() == (out2 / "observed.hnkz").read_bytes()
    assert (out1 / "pattern.csv").read_text() == (out2 / "pattern.csv").read_text()
    sig = load_signal(out1 / "signal.hnkz")
    assert sig.shape.n == 255
    meta = json.loads((out1 / "meta.json").read_text())
    assert meta["r"] == 5 and meta["m"] == 255


def test_gen_flag_and_kv_forms_agree(tmp_path):
    out1 = tmp_path / "flags"
    out2 = tmp_path / "kv"
    assert run_cli("gen", "--out", str(out1), "--seed", "3",
                   "--kind", "spectral", "--n", "64", "--r", "2") == 0
    assert run_cli("gen", "--out", str(out2), "--seed", "3",
                   "kind=spectral", "n=64", "r=2") == 0
    assert (out1 / "signal.hnkz").read_bytes() == (out2 / "signal.hnkz").read_bytes()


def test_gen_doa_file_condition_number(tmp_path):
    out = tmp_path / "doa"
    assert run_cli("gen", "--out", str(out), "kind=doa", "n=4096",
                   "thetas=87,87.1,87.3") == 0
    sig = load_signal(out / "signal.hnkz")
    est = condition_number(sig, 3, seed=0)
    assert abs(est.kappa - 5742.502) <= 0.01 * 5742.502


def test_recover_clean_instance(tmp_path):
    data = tmp_path / "data"
    out = tmp_path / "result"
    assert run_cli("gen", "--out", str(data), "--seed", "5",
                   "kind=spectral", "n=255", "r=3", "kappa=2") == 0
    assert run_cli("recover", "--out", str(out), f"input={data}") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["success"] is True
    assert summary["err"] <= 1e-5
    trace = (out / "trace.csv").read_text().splitlines()
    assert trace[0] == "iter,residual,err,ms"
    assert len(trace) == summary["iters"] + 2


def test_recover_pathological_graceful(tmp_path):
    data = tmp_path / "data"
    out = tmp_path / "result"
    assert run_cli("gen", "--out", str(data), "--seed", "6", "kind=spectral",
                   "n=125", "r=10", "kappa=10", "m=40", "alpha=0.9") == 0
    assert run_cli("recover", "--out", str(out), f"input={data}", "max_iters=60") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["success"] is False


def test_recover_missing_input_exit_2(tmp_path, capsys):
    assert run_cli("recover", f"input={tmp_path / 'absent'}") == 2


def test_recover_solver_error_exit_1(tmp_path, capsys):
    data = tmp_path / "data"
    # rank-1 data solved at rank 2 collapses the factor Gram matrix
    assert run_cli("gen", "--out", str(data), "--seed", "8",
                   "kind=spectral", "n=64", "r=1") == 0
    code = run_cli("recover", "--out", str(tmp_path / "r"), f"input={data}",
                   "r=2", "tol_residual=0")
    assert code == 1


def test_converge_small_grid(tmp_path):
    out = tmp_path / "conv"
    assert run_cli("converge", "--out", str(out), "--seed", "4", "n=127", "r=2",
                   "kappas=1,5", "trials=2", "max_iters=200") == 0
    lines = (out / "converge.csv").read_text().splitlines()
    assert lines[0] == "solver,kappa,iter,residual,err,seconds,status"
    assert any(line.startswith("hsnld,1.0,0,") for line in lines[1:])
    assert any(line.startswith("plaingd,5.0,") for line in lines[1:])


def test_converge_empty_kappas_exit_2(capsys):
    assert run_cli("converge", "kappas=") == 2


def test_phase_single_cell(tmp_path):
    out = tmp_path / "phase"
    assert run_cli("phase", "--out", str(out), "--seed", "2", "n=64", "r=2",
                   "kappa=2", "m_values=64", "alpha_values=0", "trials=3") == 0
    lines = (out / "phase.csv").read_text().splitlines()
    assert lines[0] == "m,alpha,successes,trials"
    assert lines[1] == "64.0,0.0,3,3"
    assert len(lines) == 2


def test_phase_requires_two_axes(capsys):
    assert run_cli("phase", "m_values=10,20") == 2


def test_phase_thread_count_does_not_change_bytes(tmp_path):
    args = ["phase", "--seed", "9", "n=64", "r=2", "kappa=2",
            "m_values=40,64", "alpha_values=0,0.1", "trials=2", "max_iters=150"]
    out1 = tmp_path / "t1"
    out2 = tmp_path / "t2"
    assert run_cli(*args, "--out", str(out1), "--threads", "1") == 0
    assert run_cli(*args, "--out", str(out2), "--threads", "3") == 0
    assert (out1 / "phase.csv").read_bytes() == (out2 / "phase.csv").read_bytes()


def test_doa_full_observation_variant(tmp_path):
    out = tmp_path / "doa"
    assert run_cli("doa", "--out", str(out), "--seed", "1", "p=1.0", "alpha=0",
                   "max_iters=40") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["success"] is True
    assert 0 <= summary["iters"] <= 40


def test_doa_rank_mismatch_fails_gracefully(tmp_path):
    # the snapshot model is rank 3; forcing a rank-1 solve must not recover
    out = tmp_path / "doa"
    assert run_cli("doa", "--out", str(out), "--seed", "1", "r=1",
                   "max_iters=60") == 0
    summary = json.loads((out / "summary.json").read_text())
    assert summary["success"] is False


def test_env_threads_honored(tmp_path, monkeypatch):
    monkeypatch.setenv("HANKELX_THREADS", "2")
    out = tmp_path / "phase"
    assert run_cli("phase", "--out", str(out), "--seed", "2", "n=64", "r=2",
                   "kappa=2", "m_values=64", "alpha_values=0", "trials=2") == 0
    monkeypatch.setenv("HANKELX_THREADS", "0")
    assert run_cli("phase", "--out", str(out), "--seed", "2", "n=64", "r=2",
                   "kappa=2", "m_values=64", "alpha_values=0", "trials=2") == 2


def test_config_file_with_override(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"kind": "spectral", "n": 64, "r": 2, "seed": 11}))
    out1 = tmp_path / "a"
    out2 = tmp_path / "b"
    assert run_cli("gen", "--config", str(cfg), "--out", str(out1)) == 0
    # override the config's n on the command line
    assert run_cli("gen", "--config", str(cfg), "--out", str(out2), "n=128") == 0
    assert load_signal(out1 / "signal.hnkz").shape.n == 64
    assert load_signal(out2 / "signal.hnkz").shape.n == 128


def test_module_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "hankelx", "gen", "--out", str(tmp_path),
         "kind=spectral", "n=64", "r=2"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "signal.hnkz").is_file()


def test_derive_seed_stable():
    assert derive_seed(1, "phase", 0.1) == derive_seed(1, "phase", 0.1)
    assert derive_seed(1, "phase", 0.1) != derive_seed(2, "phase", 0.1)
