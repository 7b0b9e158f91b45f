import numpy as np
import pytest

from probest.bellmodel import SettingsDistribution
import probest.cli as cli
from probest.cli import EXIT_CONFIG, EXIT_MISMATCH, EXIT_OK, main, resolve_config, reproduction_checks
from probest.datasets import embedded_dataset
from probest.fileio import (
    ParseError,
    ingest_trials,
    read_distribution,
    read_kv,
    read_pef,
    write_distribution,
    write_pef,
    write_trials,
)
from probest.pefopt import PEF
from probest.simulate import sample_trials


def test_ingest_one_trial_per_setting(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("# four trials\n0,0,1,0\n1,0,0,0\n0,1,1,1\n\n1,1,0,1\n")
    trials, freq = ingest_trials(path)
    assert len(trials) == 4
    assert freq.counts.sum(axis=1).tolist() == [1, 1, 1, 1]


def test_ingest_reports_line_number(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("0,0,1,0\n# note\n2,0,1,1\n")
    with pytest.raises(ParseError) as info:
        ingest_trials(path)
    assert info.value.line == 3
    assert "3" in str(info.value)


def test_trial_file_round_trip(tmp_path):
    trials = sample_trials(embedded_dataset("atoms"), SettingsDistribution.uniform(), 10**6, 3)
    write_trials(tmp_path / "t.csv", trials)
    back, freq = ingest_trials(tmp_path / "t.csv")
    for k in ("x", "y", "a", "b"):
        assert np.array_equal(getattr(back, k), getattr(trials, k))
    assert np.array_equal(freq.counts, trials.counts())


def test_distribution_and_pef_files(tmp_path):
    write_distribution(tmp_path / "d.txt", embedded_dataset("ions"))
    assert np.array_equal(read_distribution(tmp_path / "d.txt").table, embedded_dataset("ions").table)
    F = PEF(np.linspace(0.5, 1.5, 16).reshape(4, 4), 0.01)
    write_pef(tmp_path / "f.pef", F)
    assert len((tmp_path / "f.pef").read_text().strip().split(",")) == 17
    back = read_pef(tmp_path / "f.pef")
    assert back.power == F.power and np.array_equal(back.values, F.values)


def test_config_precedence(tmp_path):
    cfg_file = tmp_path / "c.cfg"
    cfg_file.write_text("seed = 5\nbias = 0.01\nmodel = NS,Q\n")
    cfg = resolve_config({"seed": 9}, cfg_file)
    assert cfg.seed == 9 and cfg.bias == 0.01 and cfg.model == ("NS", "Q")
    assert resolve_config({}).seed == 0
    assert main(["rates", "--config", str(cfg_file), "--seed", "9", "--beta", "0.01", "--model", "Q",
                 "--out", str(tmp_path / "o")]) == EXIT_OK
    rep = read_kv(tmp_path / "o" / "rates_Q.txt")
    assert rep["seed"] == "9" and rep["bias"] == "0.01"
    same = resolve_config({"seed": 9, "beta": "0.01", "model": "Q", "out": str(tmp_path / "o")}, cfg_file)
    assert rep["config_hash"] == same.digest() != cfg.digest()


def test_rates_single_beta_single_row(tmp_path):
    assert main(["rates", "--model", "Q", "--beta", "0.01", "--out", str(tmp_path)]) == EXIT_OK
    rows = [ln for ln in (tmp_path / "rates_Q.csv").read_text().splitlines() if not ln.startswith("#")]
    assert len(rows) == 1
    rep = read_kv(tmp_path / "rates_Q.txt")
    assert len(rep["config_hash"]) == 16 and rep["seed"] == "0"


def test_biassweep_final_point(tmp_path):
    assert main(["biassweep", "--model", "Q", "--out", str(tmp_path)]) == EXIT_OK
    data = np.loadtxt(tmp_path / "biassweep_Q.dat", delimiter=",")
    assert data[0, 0] == 0.0 and data[-1, 0] == pytest.approx(0.05)
    assert data[-1, 1] < 1e-3
    assert np.all(np.diff(data[:, 1]) <= 1e-9)


def test_exit_codes(tmp_path):
    assert main(["nonsense"]) == EXIT_CONFIG
    assert main(["fit", "--split", "2"]) == EXIT_CONFIG
    bad = tmp_path / "bad.cfg"
    bad.write_text("colour = blue\n")
    assert main(["fit", "--config", str(bad)]) == EXIT_CONFIG
    trials = tmp_path / "t.csv"
    trials.write_text("0,0,1,7\n")
    assert main(["fit", "--trials", str(trials), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_simulate_then_certify(tmp_path):
    out = tmp_path / "run"
    assert main(["simulate", "--dataset", "ions", "--n", "20000", "--seed", "3", "--out", str(out)]) == EXIT_OK
    assert main(["certify", "--trials", str(out / "trials.csv"), "--model", "Q", "--eps-h", "1e-3",
                 "--out", str(out)]) == EXIT_OK
    rep = read_kv(out / "certify_Q.txt")
    assert rep["mode"] == "split" and float(rep["net_log2_prob"]) > 0
    again = tmp_path / "again"
    main(["simulate", "--dataset", "ions", "--n", "20000", "--seed", "3", "--out", str(again)])
    assert (again / "trials.csv").read_bytes() == (out / "trials.csv").read_bytes()


def test_extract_command(tmp_path):
    assert main(["extract", "--dataset", "ions", "--n", "20000", "--sigma-h", "200", "--eps-h", "1e-3",
                 "--eps-x", "1e-3", "--seed", "4", "--out", str(tmp_path)]) == EXIT_OK
    rep = read_kv(tmp_path / "extract.txt")
    assert rep["pass"] == "1" and rep["sigma"] == "180"
    bits = "".join((tmp_path / "output_bits.txt").read_text().split())
    assert len(bits) == 180


def test_reproduce_passes(tmp_path):
    assert main(["reproduce", "--out", str(tmp_path)]) == EXIT_OK
    rep = read_kv(tmp_path / "reproduce.txt")
    assert rep["all_passed"] in ("True", "1")
    assert "config_hash" in rep and rep["seed"] == "0"


def test_reproduce_detects_mismatch(monkeypatch, tmp_path):
    def broken(include_breakeven=True):
        checks = reproduction_checks(include_breakeven=False)
        return checks[:1] + [cli.Check("forced", 1.0, 0.0, 0.1, False)]
    monkeypatch.setattr(cli, "reproduction_checks", broken)
    assert main(["reproduce", "--out", str(tmp_path)]) == EXIT_MISMATCH
