import csv
import json

import numpy as np
import pytest

from segmarkets import cli
from segmarkets.cli import ConfigError, parse_config
from segmarkets.core import Variant


def test_empty_config_gives_reference_defaults():
    cfg = parse_config({}, {})
    p = cfg.params
    assert p.n_agents == 200
    assert p.theta == (0.3, 0.7)
    assert (p.mu_ask, p.mu_bid) == (0.0, 1.0)
    assert p.sigma_ask == p.sigma_bid == 1.0
    assert p.forgetting_rate == 0.1
    assert p.horizon == 10_000
    assert cfg.n_runs == 100
    assert cfg.record_last == 100


def test_single_override():
    cfg = parse_config({"temperature": 0.14}, {})
    assert cfg.params.temperature == 0.14
    cfg = parse_config({"temperature": 0.14}, {"temperature": 0.29})
    assert cfg.params.temperature == 0.29  # flags win over file


def test_unknown_key_is_named():
    with pytest.raises(ConfigError, match="theta1"):
        parse_config({"theta1": 0.3}, {})


def test_type_mismatch_names_expected_type():
    with pytest.raises(ConfigError, match="float"):
        parse_config({"temperature": "warm"}, {})
    with pytest.raises(ConfigError, match="pair of floats"):
        parse_config({"theta": "x"}, {})


def test_model_validation_passes_through():
    from segmarkets.core import ThetaOutOfRange
    with pytest.raises(ThetaOutOfRange):
        parse_config({"theta": [1.5, 0.7]}, {})


def test_sweep_config_checks():
    with pytest.raises(ConfigError, match="sweep_parameter"):
        parse_config({"sweep_parameter": "n_agents", "sweep_values": [1]}, {})
    with pytest.raises(ConfigError, match="non-empty"):
        parse_config({"sweep_parameter": "temperature", "sweep_values": []}, {})


def _read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


TINY = ["--agents", "20", "--horizon", "60", "--runs", "2", "--seed", "5"]


def test_simulate_outputs(tmp_path):
    out = tmp_path / "run1"
    rc = cli.main(["simulate", "--out", str(out), "--temperature", "0.2"] + TINY)
    assert rc == 0
    for name in ("histogram2d_attr.csv", "histogram2d_pref.csv",
                 "summary.csv", "config.json"):
        assert (out / name).exists()
    rows = _read_csv(out / "summary.csv")
    assert rows[0][:4] == ["temperature", "n_samples", "binder_bs", "binder_12"]
    echo = json.loads((out / "config.json").read_text())
    assert echo["n_agents"] == 20 and echo["temperature"] == 0.2

    out2 = tmp_path / "run2"
    rc = cli.main(["simulate", "--out", str(out2), "--temperature", "0.2"] + TINY)
    assert rc == 0
    for name in ("histogram2d_attr.csv", "histogram2d_pref.csv", "summary.csv"):
        assert (out / name).read_bytes() == (out2 / name).read_bytes()


def test_simulate_respects_env_outdir(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_OUTDIR, str(tmp_path / "envdir"))
    rc = cli.main(["simulate", "--temperature", "0.3"] + TINY)
    assert rc == 0
    assert (tmp_path / "envdir" / "summary.csv").exists()


def test_sweep_outputs(tmp_path):
    out = tmp_path / "sweep"
    rc = cli.main(["sweep", "--out", str(out), "--parameter", "temperature",
                   "--values", "0.2,0.4"] + TINY)
    assert rc == 0
    rows = _read_csv(out / "binder_vs_T.csv")
    assert rows[0] == ["temperature", "binder_bs", "binder_12", "binder_mean", "stderr"]
    assert len(rows) == 3
    assert [float(r[0]) for r in rows[1:]] == [0.2, 0.4]
    prows = _read_csv(out / "persistence_vs_T.csv")
    assert prows[0] == ["temperature", "mean_t", "mean_t_completed", "censored_fraction"]
    assert all(np.isfinite(float(r[1])) for r in prows[1:])


def test_sweep_full_precision_roundtrip(tmp_path):
    out = tmp_path / "sweep"
    cli.main(["sweep", "--out", str(out), "--parameter", "temperature",
              "--values", "0.2"] + TINY)
    rows = _read_csv(out / "binder_vs_T.csv")
    val = float(rows[1][3])
    assert format(val, ".17g") == rows[1][3]   # 17 digits survive the round trip


def test_config_error_exit_code(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"theta": [1.5, 0.7]}))
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text(json.dumps({"unknown_key": 2}))
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 1
    bad.write_text("not json")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == 1


def test_meanfield_tc(tmp_path, capsys):
    rc = cli.main(["meanfield-tc", "--variant", "two_group", "--theta", "0.3",
                   "--out", str(tmp_path)])
    assert rc == 0
    printed = float(capsys.readouterr().out.strip())
    assert printed == pytest.approx(0.308, abs=0.01)
    rows = _read_csv(tmp_path / "tc.csv")
    assert float(rows[1][0]) == pytest.approx(printed, abs=1e-12)


def test_meanfield_tc_invalid_bracket_exit_code(tmp_path):
    rc = cli.main(["meanfield-tc", "--variant", "two_group", "--theta", "0.3",
                   "--bracket", "0.4,0.6", "--out", str(tmp_path)])
    assert rc == 2


def test_meanfield_phase(tmp_path):
    rc = cli.main(["meanfield-phase", "--variant", "two_group",
                   "--thetas", "0.2,0.3", "--out", str(tmp_path)])
    assert rc == 0
    rows = _read_csv(tmp_path / "phase_boundary.csv")
    assert rows[0] == ["theta", "t_c"]
    assert float(rows[2][1]) == pytest.approx(0.308, abs=0.01)
    assert float(rows[1][1]) < float(rows[2][1])


def test_meanfield_phase_rejects_bad_theta(tmp_path):
    rc = cli.main(["meanfield-phase", "--thetas", "0.3,0.7", "--out", str(tmp_path)])
    assert rc == 1


def test_meanfield_flow(tmp_path):
    rc = cli.main(["meanfield-flow", "--variant", "two_group",
                   "--temperature", "0.32", "--resolution", "11",
                   "--out", str(tmp_path)])
    assert rc == 0
    rows = _read_csv(tmp_path / "flowfield.csv")
    assert rows[0] == ["f1", "f2", "df1_dt", "df2_dt"]
    assert len(rows) == 1 + 121
    values = np.array([[float(x) for x in r] for r in rows[1:]])
    assert np.all(np.isfinite(values))
    fp_rows = _read_csv(tmp_path / "fixed_points.csv")
    assert len(fp_rows) == 2          # header + single high-T fixed point
    assert fp_rows[1][5] == "1"       # and it is stable
