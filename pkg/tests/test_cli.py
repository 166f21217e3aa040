import csv
import json

import pytest

from voterlab import cli
from voterlab.stats_harness import ExperimentConfig


def write_config(path, **kw):
    base = dict(d=3, N_list=[10, 20, 40], T=1.0, time_grid=[0.0, 0.5, 1.0], samples=3000,
                replicas=2, profile={"type": "constant", "p": 0.5})
    base.update(kw)
    path.write_text(json.dumps(base))
    return path


def test_constants(tmp_path, capsys):
    assert cli.main(["constants", "--out", str(tmp_path), "--dims", "3,5"]) == 0
    data = json.loads((tmp_path / "constants.json").read_text())
    names = {(r["d"], r["name"]) for r in data["constants"]}
    assert (3, "gamma") in names and (5, "theta_green_integral") in names
    assert "gamma" in capsys.readouterr().out


def test_limit_table(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert cli.main(["limit-table", "--config", str(cfg), "--out", str(tmp_path), "--quiet"]) == 0
    (table,) = tmp_path.glob("*/limit_table.json")
    assert "zeta_cov" in json.loads(table.read_text())


def test_zeta_sample(tmp_path):
    cfg = write_config(tmp_path / "c.json")
    assert cli.main(["zeta-sample", "--config", str(cfg), "--out", str(tmp_path), "--paths", "50",
                     "--quiet"]) == 0
    (f,) = tmp_path.glob("*/limit_paths.csv")
    rows = list(csv.DictReader(f.open()))
    assert len(rows) == 150 and rows[0]["value"] == "0.0"


def test_occupation_cov_exit_codes(tmp_path):
    cfg = write_config(tmp_path / "c.json", params={"t1": 0.5, "t2": 1.0})
    # generous tolerance passes, an impossible one fails
    ok = write_config(tmp_path / "ok.json", params={"t1": 0.5, "t2": 1.0}, tolerances={"rel": 10.0})
    assert cli.main(["occupation-cov", "--config", str(ok), "--out", str(tmp_path), "--quiet"]) == 0
    bad = write_config(tmp_path / "bad.json", params={"t1": 0.5, "t2": 1.0},
                       tolerances={"rel": -1.0}, samples=2000)
    assert cli.main(["occupation-cov", "--config", str(bad), "--out", str(tmp_path), "--quiet"]) == 1
    assert cfg.exists()


def test_seed_and_out_override(tmp_path):
    cfg = write_config(tmp_path / "c.json", time_grid=[0.0], seed=1)
    assert cli.main(["verify", "--config", str(cfg), "--seed", "99", "--out", str(tmp_path / "o"),
                     "--quiet"]) == 0
    (report,) = (tmp_path / "o").glob("*/report.json")
    assert json.loads(report.read_text())["provenance"]["seed"] == 99
    h = ExperimentConfig.from_dict({**json.loads(cfg.read_text()), "seed": 99}).config_hash()
    assert report.parent.name == h


def test_bad_input_exit_code(tmp_path, capsys):
    cfg = write_config(tmp_path / "c.json", N_list=[])
    assert cli.main(["pair-limit", "--config", str(cfg)]) == 2
    assert "error" in capsys.readouterr().err
    assert cli.main(["constants", "--threads", "0"]) == 2
    with pytest.raises(SystemExit):
        cli.main(["constants", "--seed", "-1"])
