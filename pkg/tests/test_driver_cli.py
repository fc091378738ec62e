import csv
from pathlib import Path

import numpy as np
import pytest

from estconv.axioms import audit_records, fit_doerfler_contraction
from estconv.cli import main
from estconv.driver import (CSV_COLUMNS, RunConfig, estimate_rate, format_config, load_config,
                            make_boundary_domain, parse_config, read_records, run_adaptive,
                            run_log_csv, write_run)
from estconv.errors import ConfigError, PreconditionError
from estconv.marking import MarkingConfig, verify_marking_condition

FIXTURES = Path(__file__).parent / "fixtures"


def write_config(path, **kw):
    text = "".join(f"{k} = {v}\n" for k, v in kw.items())
    path.write_text(text)
    return path


def test_exactly_one_stopping_value():
    with pytest.raises(ConfigError):
        RunConfig()
    with pytest.raises(ConfigError):
        RunConfig(max_levels=3, max_elements=100)
    with pytest.raises(ConfigError):
        RunConfig(problem="heat", max_levels=3)
    RunConfig(eta_tol=1e-3)


def test_parse_config_errors():
    assert parse_config("problem = symm\ndomain = square:0.4\nmax_levels = 2\n").problem == "symm"
    with pytest.raises(ConfigError, match="line 2"):
        parse_config("max_levels = 2\ncolour = red\n")
    with pytest.raises(ConfigError, match="duplicate"):
        parse_config("max_levels = 2\nmax_levels = 3\n")
    with pytest.raises(ConfigError, match="line 1"):
        parse_config("max_levels two\n")
    with pytest.raises(ConfigError):
        parse_config("max_levels = 2\ntheta = 1.5\n")
    with pytest.raises(ConfigError):
        parse_config("max_levels = 2\nchi = 1 2\n")


def test_config_round_trip():
    cfg = parse_config("problem = obstacle\ndomain = unit_square\nf = -20\nchi = 0 0.5 -1\n"
                       "marking = equidistribution\ntheta = 0.25\nmax_elements = 900\n")
    again = parse_config(format_config(cfg))
    assert again == cfg


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.cfg"
    with pytest.raises(ConfigError, match="nope.cfg"):
        load_config(missing)
    assert main(["run", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert "nope.cfg" in capsys.readouterr().err


def test_boundary_domains():
    assert make_boundary_domain("square:0.4").n_elements == 4
    assert make_boundary_domain("regular:6:0.3", 2).n_elements == 12
    with pytest.raises(ConfigError):
        make_boundary_domain("circle:0.3")
    with pytest.raises(ConfigError):
        make_boundary_domain("square:wide")
    with pytest.raises(PreconditionError):
        make_boundary_domain("square:0.8")


def test_zero_load_stops_at_level_zero():
    log = run_adaptive(RunConfig(f=0.0, max_levels=5))
    assert len(log.records) == 1 and log.stop_reason == "converged"
    assert log.records[0].eta == 0.0 and log.records[0].marked.size == 0


def test_lshape_maximum_reference_run():
    cfg = RunConfig(marking=MarkingConfig("maximum", 0.5), max_elements=20000)
    log = run_adaptive(cfg)
    assert len(log.records) >= 10
    assert log.stop_reason == "max_elements"
    eta = log.etas
    assert np.all(np.diff(eta[3:]) < 0)
    assert log.n_elements[-1] <= 20000
    with open(FIXTURES / "lshape_maximum_20k.csv", newline="") as fh:
        ref = list(csv.DictReader(fh))
    assert [int(r["n_elements"]) for r in ref] == log.n_elements.tolist()
    assert np.allclose([float(r["eta"]) for r in ref], eta, rtol=1e-6, atol=0)
    for rec in log.records:
        assert verify_marking_condition(rec.indicators, rec.marked, cfg.marking)[0]


def test_symm_doerfler_run_passes_audits():
    cfg = RunConfig(problem="symm", domain="square:0.4", marking=MarkingConfig("doerfler_sorted", 0.5),
                    max_levels=12)
    log = run_adaptive(cfg)
    assert len(log.records) == 12
    rows, ok = audit_records(log.records)
    assert ok
    assert fit_doerfler_contraction(log.records, 0.5, delta=0.1).passed
    energies = np.array([r.energy for r in log.records])
    assert np.all(np.diff(energies) >= -1e-10)


def test_max_elements_never_exceeded():
    log = run_adaptive(RunConfig(problem="obstacle", domain="unit_square", f=-20.0,
                                 marking=MarkingConfig("doerfler_sorted", 0.5), max_elements=500))
    assert log.stop_reason == "max_elements"
    assert log.n_elements.max() <= 500


def test_eta_tol_stop():
    log = run_adaptive(RunConfig(eta_tol=0.3))
    assert log.stop_reason == "eta_tol"
    assert log.etas[-1] <= 0.3 < log.etas[-2]


def test_rate_examples(rng):
    n = 2.0 ** np.arange(4, 16)
    assert estimate_rate((n, n**-0.5), 8) == pytest.approx(-0.5, abs=1e-10)
    assert estimate_rate((n, np.full(n.size, 3.0)), 5) == pytest.approx(0.0, abs=1e-12)
    noisy = 7.0 * n**-1.5 * (1 + rng.uniform(-0.01, 0.01, n.size))
    assert -1.55 <= estimate_rate((n, noisy), 10) <= -1.45
    with pytest.raises(PreconditionError):
        estimate_rate((n[:4], n[:4] ** -0.5), 4)


def test_cli_round_trip(tmp_path, capsys):
    cfg = write_config(tmp_path / "run.cfg", problem="poisson", domain="lshape",
                       marking="doerfler_sorted", theta=0.5, max_levels=6)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    header = (out / "run_log.csv").read_text().splitlines()[0]
    assert header == ",".join(CSV_COLUMNS)
    assert (out / "mesh_005.txt").is_file()
    assert main(["audit", "--out", str(out)]) == 0
    report = (out / "axiom_report.csv").read_text().splitlines()
    assert len(report) == 6 and all(line.endswith(",1") for line in report[1:])
    capsys.readouterr()
    assert main(["rates", "--out", str(out), "--window", "4"]) == 0
    assert float(capsys.readouterr().out) < 0


def test_cli_audit_zero_run(tmp_path):
    cfg = write_config(tmp_path / "zero.cfg", f=0.0, max_levels=4)
    out = tmp_path / "zero"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    assert main(["audit", "--out", str(out)]) == 0


def test_cli_rates_on_synthetic_log(tmp_path, capsys):
    out = tmp_path / "synthetic"
    out.mkdir()
    n = 4 ** np.arange(1, 11)
    rows = [",".join(CSV_COLUMNS)] + [f"{k},{m},0,{float(m) ** -0.5!r},0,0,0,,"
                                       for k, m in enumerate(n)]
    (out / "run_log.csv").write_text("\n".join(rows) + "\n")
    assert main(["rates", "--out", str(out), "--window", "8"]) == 0
    assert capsys.readouterr().out.strip() == "-0.5"


def test_cli_solver_failure(tmp_path):
    mesh = tmp_path / "fine.mesh"
    assert main(["dump-mesh", "--domain", "lshape", "--refine", "9", "--out", str(mesh)]) == 0
    cfg = write_config(tmp_path / "bad.cfg", domain=mesh, max_levels=1, solver_rtol=1e-300)
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3


def test_cli_failed_audit(tmp_path):
    cfg = write_config(tmp_path / "run.cfg", marking="maximum", theta=0.5, max_levels=5)
    out = tmp_path / "run"
    assert main(["run", "--config", str(cfg), "--out", str(out)]) == 0
    path = out / "level_003.npz"
    with np.load(path) as z:
        data = dict(z)
    data["indicators"] = data["indicators"] * 1e-3
    np.savez(path, **data)
    assert main(["audit", "--out", str(out)]) == 4
    assert ",0" in (out / "axiom_report.csv").read_text()


def test_read_records_matches_run(tmp_path):
    log = run_adaptive(RunConfig(problem="symm", domain="regular:5:0.3", max_levels=4))
    write_run(log, tmp_path)
    recs = read_records(tmp_path)
    assert [r.eta for r in recs] == [r.eta for r in log.records]
    assert audit_records(recs)[1] == audit_records(log.records)[1]


def test_dump_boundary_mesh(tmp_path):
    out = tmp_path / "b.txt"
    assert main(["dump-mesh", "--domain", "square:0.4", "--refine", "2", "--out", str(out)]) == 0
    assert out.read_text().count("\ns ") == 16


def test_determinism(tmp_path):
    cfg = RunConfig(problem="obstacle", domain="unit_square", f=-20.0, max_levels=6)
    a = run_log_csv(run_adaptive(cfg))
    b = run_log_csv(run_adaptive(cfg))
    assert a == b
    for name in ("x", "y"):
        c = write_config(tmp_path / f"{name}.cfg", problem="symm", domain="square:0.4", max_levels=5)
        assert main(["run", "--config", str(c), "--out", str(tmp_path / name)]) == 0
    assert (tmp_path / "x" / "run_log.csv").read_bytes() == (tmp_path / "y" / "run_log.csv").read_bytes()
