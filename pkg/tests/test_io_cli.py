"""Configuration validation, CSV schema, reproducibility and the command-line interface."""
import csv

import numpy as np
import pytest
import yaml

from phaseflow.cli import main
from phaseflow.errors import ConfigError
from phaseflow.io import ExperimentConfig, load_config, trajectory_header, write_trajectory_csv
from phaseflow.observables import Trajectory


def write_yaml(path, data):
    path.write_text(yaml.safe_dump(data))
    return path


SMALL_CPI = dict(experiment="cpi-run", n_realizations=200, t_end=1.0, transient=0.4)


def test_defaults_per_experiment():
    cfg = load_config(None, experiment="cpi-run")
    assert cfg.dt_coarse == [0.2, 0.3] and cfg.n_realizations == 5000 and cfg.M == 8
    assert load_config(None, experiment="slaving-study").n_realizations == 7000
    assert load_config(None, experiment="lift-test").case == 9


@pytest.mark.parametrize("data,field", [
    (dict(experiment="slaving-study", cases=[]), "cases"),
    (dict(experiment="slaving-study", cases=[12]), "cases"),
    (dict(experiment="lift-test", t_interrupt=10.0, t_end=10.0), "t_interrupt"),
    (dict(experiment="lift-test", t_interrupt=12.0, t_end=10.0), "t_interrupt"),
    (dict(experiment="cpi-run", dt_coarse=[0.01]), "dt_coarse"),
    (dict(experiment="cpi-run", fit_steps=[12, 10, 20]), "fit_steps"),
    (dict(experiment="cpi-run", tpt_lower=0.0), "tpt_upper"),
    (dict(experiment="cpi-run", influx=[[0, 1], [1, -2]]), "influx"),
    (dict(experiment="direct-run", n_realizations=0), "n_realizations"),
    (dict(experiment="direct-run", n_realizations=2.5), "n_realizations"),
    (dict(experiment="direct-run", seed=-1), "seed"),
    (dict(experiment="direct-run", bogus=1), "bogus"),
    (dict(experiment="pde-compare", cases=[{"influx": 0.0, "tpt_lower": 0.1, "tpt_upper": 2.0}]), "cases"),
    (dict(experiment="nonsense"), "experiment"),
])
def test_field_level_errors(data, field):
    with pytest.raises(ConfigError, match=f"'{field}'"):
        ExperimentConfig.from_mapping(data)


def test_slaving_defaults_shrink_to_requested_cases():
    cfg = ExperimentConfig.from_mapping(dict(experiment="slaving-study", cases=[1, 3]))
    assert cfg.independent_cases == [3]
    assert cfg.dependence_pairs == [[1, 3]]
    assert cfg.r2_case is None
    with pytest.raises(ConfigError, match="independent_cases"):
        ExperimentConfig.from_mapping(dict(experiment="slaving-study", cases=[1, 3], independent_cases=[9]))


def test_custom_case_mapping():
    cfg = ExperimentConfig.from_mapping(dict(experiment="pde-compare",
                                             cases=[{"name": "ramp", "influx": 15, "tpt_lower": 0.2,
                                                     "tpt_upper": 3.0}]))
    assert cfg.case_specs[0].dist.upper == 3.0


def test_bad_yaml_and_missing_file(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("experiment: [unclosed")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    lst = tmp_path / "list.yaml"
    lst.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(lst)


def test_trajectory_csv_schema(tmp_path):
    traj = Trajectory(np.array([0.0, 0.1]), np.array([0.0, 1.5]), np.array([np.nan, 2.0]), np.ones((2, 9)))
    path = write_trajectory_csv(tmp_path / "t.csv", traj)
    rows = list(csv.reader(path.open()))
    assert rows[0] == trajectory_header(8)
    assert rows[0][:3] == ["t [s]", "wip [items]", "outflux [items/s]"]
    assert rows[1][2] == "nan" and rows[2][0] == "0.1"
    assert float(rows[2][1]) == 1.5


def test_cli_validation_failure_leaves_no_output(tmp_path, capsys):
    cfg = write_yaml(tmp_path / "c.yaml", dict(experiment="lift-test", t_interrupt=5.0, t_end=4.0))
    out = tmp_path / "out"
    assert main(["lift-test", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()
    assert "t_interrupt" in capsys.readouterr().err


def test_cli_wrong_subcommand_for_config(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL_CPI)
    assert main(["direct", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_cli_reproducible_bytes(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL_CPI)
    outs = []
    for name in ("a", "b"):
        main(["cpi", "--config", str(cfg), "--seed", "4", "--out", str(tmp_path / name)])
        outs.append(tmp_path / name)
    files = sorted(p.name for p in outs[0].iterdir())
    assert "direct.csv" in files and "cpi_dtc0.2.csv" in files and "summary.txt" in files
    for f in files:
        if f == "summary.txt":
            continue
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f
    main(["cpi", "--config", str(cfg), "--seed", "5", "--out", str(tmp_path / "c")])
    assert (tmp_path / "c" / "direct.csv").read_bytes() != (outs[0] / "direct.csv").read_bytes()


def test_density_csv_schema_shared_across_sources(tmp_path):
    cfg = write_yaml(tmp_path / "c.yaml", SMALL_CPI)
    main(["cpi", "--config", str(cfg), "--out", str(tmp_path / "cpi")])
    pde_cfg = write_yaml(tmp_path / "p.yaml", dict(experiment="pde-compare", n_realizations=100, t_end=0.5,
                                                   cases=[3]))
    main(["pde-compare", "--config", str(pde_cfg), "--out", str(tmp_path / "pde")])
    headers = {tuple(next(csv.reader(p.open())))
               for p in [tmp_path / "cpi" / "direct.csv", tmp_path / "cpi" / "cpi_dtc0.2.csv",
                         tmp_path / "pde" / "pde_case3.csv", tmp_path / "pde" / "mc_case3.csv"]}
    assert len(headers) == 1


def test_cli_exit_status_reflects_criterion(tmp_path, capsys):
    ok = write_yaml(tmp_path / "ok.yaml", dict(experiment="direct-run", n_realizations=300, t_end=4.0))
    assert main(["direct", "--config", str(ok), "--out", str(tmp_path / "d")]) == 0
    assert "verdict: PASS" in (tmp_path / "d" / "summary.txt").read_text()
    strict = write_yaml(tmp_path / "s.yaml", dict(experiment="direct-run", n_realizations=300, t_end=0.5))
    assert main(["direct", "--config", str(strict), "--out", str(tmp_path / "e")]) == 1


def test_cli_slaving_and_lift_small(tmp_path):
    sl = write_yaml(tmp_path / "s.yaml", dict(experiment="slaving-study", cases=[1, 3], n_realizations=200,
                                              snapshot_time=2.0))
    main(["slaving", "--config", str(sl), "--out", str(tmp_path / "s")])
    rows = list(csv.reader((tmp_path / "s" / "conditional_case3.csv").open()))
    assert rows[0] == ["t [s]", "x_bin", "r_bin", "density [1/s]"]
    assert len(rows) == 1 + 20 * 30
    lt = write_yaml(tmp_path / "l.yaml", dict(experiment="lift-test", case=3, n_realizations=200,
                                              t_interrupt=1.0, t_end=1.5))
    main(["lift-test", "--config", str(lt), "--out", str(tmp_path / "l")])
    assert (tmp_path / "l" / "lifted_seed101.csv").exists()
