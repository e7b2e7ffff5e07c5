import csv
import json

import jsonschema
import numpy as np
import pytest

from wpinn.autodiff import ConfigurationError
from wpinn.cli import (
    RESULTS_SCHEMA,
    bundled_config,
    dump_config,
    export_grid,
    main,
    parse_config,
    parse_grid,
    read_raw,
    sweep_cells,
)
from wpinn.network import MlpParams, save_checkpoint
from wpinn.reference import get_experiment

TINY = """
[problem]
experiment = moving
entropy = kruzkov

[network]
arch_theta = 6x2
arch_eta = 5x2

[training]
N_ep = 3
N_max = 2
N_c = 3
ensemble_size = 2
seed = 1

[sampling]
N_int = 128
N_tb = 32
N_ini = 32
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_config_roundtrip():
    rc = parse_config(TINY)
    assert rc.experiment == "moving" and rc.train.N_int == 128 and rc.train.seed == 1
    again = parse_config(dump_config(rc))
    assert again == rc
    assert dump_config(again, canonical=True) == dump_config(rc, canonical=True)


def test_bundled_config_parses():
    rc = parse_config(bundled_config())
    assert rc.experiment == "standing"
    assert (rc.train.N_int, rc.train.N_ep, rc.train.ensemble_size) == (4096, 500, 3)


def test_config_errors():
    with pytest.raises(ConfigurationError, match="N_ep"):
        parse_config(TINY.replace("N_ep = 3", ""))
    with pytest.raises(ConfigurationError, match="unknown key"):
        parse_config(TINY + "\nlearning_rate = 3\n")
    with pytest.raises(ConfigurationError, match="belongs in"):
        parse_config(TINY.replace("[sampling]", "[sampling]\nrho = 2"))
    with pytest.raises(ConfigurationError, match="unknown section"):
        parse_config(TINY + "\n[extra]\n")
    with pytest.raises(ConfigurationError, match="bad value"):
        parse_config(TINY.replace("N_int = 128", "N_int = many"))
    with pytest.raises(ConfigurationError, match="only allowed for sweep"):
        parse_config(TINY.replace("N_int = 128", "N_int = [128, 256]"))
    with pytest.raises(ConfigurationError):
        parse_config(TINY.replace("experiment = moving", "experiment = tsunami"))


def test_missing_key_exits_2(tmp_path, capsys):
    path = write(tmp_path, TINY.replace("N_ep = 3", ""))
    assert main(["train", str(path), "--out", str(tmp_path / "o")]) == 2
    assert "N_ep" in capsys.readouterr().err


def test_usage_errors_exit_2(tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["verify", "everything"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main([])
    assert e.value.code == 2
    assert main(["train", str(tmp_path / "nope.cfg")]) == 2


def test_train_writes_artifacts(tmp_path, capsys):
    path = write(tmp_path, TINY)
    out = tmp_path / "run"
    assert main(["train", str(path), "--out", str(out)]) == 0
    res = json.loads((out / "results.json").read_text())
    jsonschema.validate(res, RESULTS_SCHEMA)
    assert res["experiment"] == "moving" and len(res["E_T_members"]) == 2 and res["seeds"] == [1, 2]
    manifest = json.loads((out / "manifest.json").read_text())
    assert all((out / p).exists() for p in manifest["outputs"])
    with (out / "member_0" / "loss_log.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert [int(r["epoch"]) for r in rows] == [1, 2, 3]
    assert set(rows[0]) == {"epoch", "L_int", "L_tb", "L_sb", "L_max", "argmax_c"}
    assert parse_config((out / "config.cfg").read_text()) == parse_config(TINY)
    printed = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert printed["E_T_ensemble"] == res["E_T_ensemble"]


def _numeric(path):
    res = json.loads(path.read_text())
    res.pop("wall_time_s")  # elapsed time is the one field that cannot repeat
    return res


def test_seed_override_is_deterministic(tmp_path):
    path = write(tmp_path, TINY)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["train", str(path), "--out", str(a), "--seed", "7"]) == 0
    assert main(["train", str(path), "--out", str(b), "--seed", "7"]) == 0
    assert _numeric(a / "results.json") == _numeric(b / "results.json")
    assert _numeric(a / "results.json")["seeds"] == [7, 8]
    assert (a / "member_1" / "loss_log.csv").read_text() == (b / "member_1" / "loss_log.csv").read_text()


def test_bundled_config_smoke(tmp_path):
    out = tmp_path / "desk"
    assert main(["train", "standing_desk", "--out", str(out), "--epochs", "2", "--ensemble", "1"]) == 0
    assert "E_T_ensemble" in json.loads((out / "results.json").read_text())


def test_export_from_training_run(tmp_path):
    path = write(tmp_path, TINY)
    out = tmp_path / "run"
    main(["train", str(path), "--out", str(out)])
    csv_path = tmp_path / "sol.csv"
    ckpts = [str(out / "member_0" / "theta.ckpt"), str(out / "member_1" / "theta.ckpt")]
    assert main(["export", *ckpts, "--grid", "7,3,4", "--out", str(csv_path)]) == 0
    with csv_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 7 * 3 * 4
    assert list(rows[0]) == ["lambda", "phi", "t", "u_pred", "u_ref", "abs_err"]
    assert main(["export", ckpts[0], "--phi0", "--grid", "5,9,2", "--out", str(csv_path)]) == 0
    with csv_path.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 10 and all(float(r["phi"]) == 0.0 for r in rows)


def test_export_errors(tmp_path):
    assert main(["export", str(tmp_path / "none.ckpt"), "--experiment", "moving"]) == 2
    w = (np.zeros((1, 3)),)
    p = MlpParams((3, 1), "tanh", w, (np.zeros(1),))
    ck = save_checkpoint(tmp_path / "zero.ckpt", p)
    assert main(["export", str(ck), "--grid", "0,3,3", "--experiment", "standing"]) == 2
    assert main(["export", str(ck), "--grid", "", "--experiment", "standing"]) == 2
    # no experiment on the command line or in the header
    assert main(["export", str(ck)]) == 2
    with pytest.raises(ConfigurationError):
        parse_grid("4,4")


def test_zero_network_error_is_reference_magnitude(tmp_path):
    exp = get_experiment("standing")
    rows = export_grid(lambda x: np.zeros(len(x)), exp, 9, 3, 4)
    assert rows.shape == (108, 6)
    np.testing.assert_array_equal(rows[:, 5], np.abs(rows[:, 4]))


def test_exact_predictor_has_no_error():
    for name in ("rarefaction", "sine"):
        exp = get_experiment(name)
        rows = export_grid(exp.exact, exp, 11, 4, 5)
        assert np.max(rows[:, 5]) <= 1e-12


def test_sweep_cells_and_cap():
    raw = read_raw(TINY.replace("arch_theta = 6x2", "arch_theta = [6x2, 6x3]").replace("N_max = 2", "N_max = 2\nrho = [1, 10]"))
    keys, cells = sweep_cells(raw, cap=64)
    assert sorted(keys) == ["arch_theta", "rho"] and len(cells) == 4
    assert {(c.train.arch_theta, c.train.rho) for c in cells} == {("6x2", 1.0), ("6x2", 10.0), ("6x3", 1.0), ("6x3", 10.0)}
    with pytest.raises(ConfigurationError, match="cap"):
        sweep_cells(raw, cap=3)
    with pytest.raises(ConfigurationError):
        sweep_cells(read_raw(TINY), cap=64)


def test_sweep_command(tmp_path):
    text = TINY.replace("optimizer", "").replace("ensemble_size = 2", "ensemble_size = 1")
    text = text.replace("N_max = 2", "N_max = 2\noptimizer = [sgd, adam]\nrho = [1, 10]")
    path = write(tmp_path, text)
    out = tmp_path / "sweep"
    assert main(["sweep", str(path), "--out", str(out)]) == 0
    with (out / "summary.csv").open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4
    errs = [float(r["E_T"]) for r in rows]
    assert errs == sorted(errs)
    assert {r["optimizer"] for r in rows} == {"sgd", "adam"}
    assert main(["sweep", str(path), "--out", str(out), "--cap", "3"]) == 2


@pytest.mark.parametrize("suite", ["construct", "geometry"])
def test_verify_exit_zero(suite, capsys):
    assert main(["verify", suite]) == 0
    out = capsys.readouterr().out
    assert "passed" in out
    if suite == "geometry":
        assert "area" in out


def test_verify_failure_exit_3(monkeypatch):
    from wpinn import verify

    monkeypatch.setitem(verify.SUITES, "geometry", lambda: [verify.Check("geometry", "broken", 1.0, 0.0)])
    assert main(["verify", "geometry"]) == 3


def test_inline_comments_are_ignored():
    rc = parse_config(TINY.replace("N_ep = 3", "N_ep = 3   ; short run").replace("seed = 1", "seed = 1  # fixed"))
    assert rc.train.N_ep == 3 and rc.train.seed == 1
