from pathlib import Path

import pytest

from insider_game.cli import main

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_solve_writes_value_and_strategy(tmp_path, capsys):
    code, _, _ = run(capsys, "solve", CONFIGS / "S0.cfg", "--out", tmp_path, "--gnuplot-script")
    assert code == 0
    assert "V=0.108125" in (tmp_path / "value.txt").read_text().splitlines()
    rows = (tmp_path / "strategy.csv").read_text().splitlines()
    assert rows[0] == "t,state,pi,kappa,theta1,theta2,theta3,theta4"
    assert len(rows) == 12
    assert (tmp_path / "plot.gp").read_text().startswith("set datafile separator")


def test_neutral_override(tmp_path, capsys):
    code, _, _ = run(capsys, "solve", "--config", CONFIGS / "S0.cfg", "--out", tmp_path,
                     "--override", "ambiguity.enabled=false")
    assert code == 0
    assert "V~=0.18625" in (tmp_path / "value.txt").read_text()


def test_jump_strategy_row(tmp_path, capsys):
    assert run(capsys, "solve", CONFIGS / "SJ.cfg", "--out", tmp_path)[0] == 0
    assert any(",0.1548457" in r for r in (tmp_path / "strategy.csv").read_text().splitlines()[1:])


def test_outputs_are_byte_identical_on_rerun(tmp_path, capsys):
    for d in ("a", "b"):
        assert run(capsys, "simulate", CONFIGS / "S0.cfg", "--paths", 4096, "--dt", 0.01,
                   "--out", tmp_path / d)[0] == 0
    assert (tmp_path / "a" / "mc.csv").read_bytes() == (tmp_path / "b" / "mc.csv").read_bytes()


def test_timestamp_header_is_opt_in(tmp_path, capsys):
    run(capsys, "solve", CONFIGS / "S0.cfg", "--out", tmp_path, "--timestamp")
    assert (tmp_path / "value.txt").read_text().startswith("# generated ")


@pytest.mark.parametrize("argv, code, label", [
    (("solve", CONFIGS / "SL.cfg"), 2, "ModeMismatch"),
    (("simulate", CONFIGS / "SJ.cfg", "--paths", 512, "--dt", 0.01, "--strategy", "BAD"), 3,
     "AdmissibilityBreach"),
    (("critical-time", "--iota", 0, "--c", 0), 5, "NoBracket"),
    (("solve", CONFIGS / "S0.cfg", "--override", "market.sigma=-1"), 9, "ConstraintViolation"),
    (("solve", CONFIGS / "S0.cfg", "--override", "nope.x=1"), 9, "UnknownKey"),
    (("bsde", CONFIGS / "SJ.cfg"), 2, "ModeMismatch"),
])
def test_exit_codes_and_error_lines(tmp_path, capsys, argv, code, label):
    argv = list(argv)
    if "BAD" in argv:
        bad = tmp_path / "bad.csv"
        bad.write_text("t,pi,kappa,theta1,theta2,theta3,theta4\n0.0,0.5,1.0,0,0,0,0\n")
        argv[argv.index("BAD")] = bad
    got, _, err = run(capsys, *argv, "--out", tmp_path / "o")
    assert got == code
    assert err.startswith(f"ERROR {label}: ")


def test_usage_error_exit(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 9
    assert capsys.readouterr().err.startswith("ERROR Usage:")


def test_critical_time_prints_root(tmp_path, capsys):
    code, out, _ = run(capsys, "critical-time", CONFIGS / "S0.cfg", "--out", tmp_path)
    assert code == 0
    first, second = out.splitlines()
    assert first.startswith("T0*=4.50286")
    assert abs(float(second.split("=")[1])) < 1e-10


def test_critical_time_sweep_decreases(tmp_path, capsys):
    code, _, _ = run(capsys, "critical-time", CONFIGS / "S0.cfg", "--sweep", "0.1,0.2,0.3,0.4,0.5",
                     "--out", tmp_path)
    assert code == 0
    rows = (tmp_path / "critical_time.csv").read_text().splitlines()[1:]
    t0 = [float(r.split(",")[2]) for r in rows]
    assert len(t0) == 5 and all(a > b for a, b in zip(t0, t0[1:]))


def test_bsde_command_dump(tmp_path, capsys):
    code, _, _ = run(capsys, "bsde", CONFIGS / "S0.cfg", "--paths", 4096, "--dt", 0.02, "--out", tmp_path)
    assert code == 0
    head = (tmp_path / "bsde.csv").read_text().splitlines()[0]
    assert head == "t,y_mean,z1_mean,z2_mean,pi_mean,kappa_mean"
    diag = (tmp_path / "diagnostics.txt").read_text()
    assert "shooting_iterations" in diag and "max_condition_number" in diag


def test_verify_small_run_passes(tmp_path, capsys):
    code, out, _ = run(capsys, "verify", CONFIGS / "S0.cfg", "--paths", 20000, "--out", tmp_path)
    assert code == 0, out
    assert (tmp_path / "verify.csv").exists()
    assert out.strip().endswith("(9/9)")
