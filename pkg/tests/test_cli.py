from __future__ import annotations

import csv

import pytest

from radchannels.cli import (COMMANDS, EXIT_CONFIG, EXIT_FAIL, EXIT_PASS, ConfigError, _float, build_config,
                             main, read_csv_body)


def rows(path):
    return list(csv.reader(read_csv_body(path).splitlines()))


def test_every_command_has_a_distinct_criterion():
    crit = [c.criterion for c in COMMANDS.values() if c.criterion]
    assert sorted(crit, key=lambda s: int(s[2:])) == [f"AC{i}" for i in range(1, 11)]


def test_fraction_parsing():
    assert _float("1/512") == 1 / 512 and _float(" 0.25 ") == 0.25


def test_missing_dim_names_key(tmp_path, capsys):
    assert main(["w-tail-rates", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "'dim'" in capsys.readouterr().err


def test_config_file_errors_are_line_anchored(tmp_path, capsys):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nseed = 1\n\n[w-tail-rates]\ndim = 5\nlevels = many\n")
    assert main(["w-tail-rates", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG
    assert f"{cfg}:6" in capsys.readouterr().err
    cfg.write_text("[run]\nbogus = 1\n")
    with pytest.raises(ConfigError, match=r"c\.ini:2: unknown key 'bogus'"):
        build_config("w-tail-rates", {}, cfg)
    assert main(["w-tail-rates", "--config", str(tmp_path / "none.ini")]) == EXIT_CONFIG


def test_flag_overrides_file(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[run]\nseed = 3\n[w-tail-rates]\ndim = 5\nlevels = 4\n")
    c = build_config("w-tail-rates", {"levels": "5"}, cfg)
    assert c.values["dim"] == [5] and c.values["levels"] == 5 and c.values["seed"] == 3


def test_precondition_failure_is_config_error(tmp_path):
    assert main(["w-tail-rates", "--dim", "4", "--out", str(tmp_path)]) == EXIT_CONFIG


def test_check_sequences_example(tmp_path, capsys):
    assert main(["check-sequences", "--trials", "10000", "--seed", "7", "--out", str(tmp_path)]) == EXIT_PASS
    assert "PASS" in capsys.readouterr().out
    body = rows(tmp_path / "check-sequences.csv")
    assert body[0] == ["check", "instance", "param", "observed", "expected", "tolerance", "pass"]
    assert all(r[-1] == "true" for r in body[1:])
    assert (tmp_path / "check-sequences_summary.txt").read_text().count("AC9 check-sequences: PASS") == 1


def test_bodies_are_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["hankel-strictness", "--samples", "40", "--ll-functions", "4", "--seed", "5",
                     "--out", str(out)]) == EXIT_PASS
    assert read_csv_body(a / "hankel-strictness.csv") == read_csv_body(b / "hankel-strictness.csv")
    head = (a / "hankel-strictness.csv").read_text().splitlines()
    assert head[0] == "# radchannels hankel-strictness" and "# seed = 5" in head


def test_config_echoed_into_header(tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[w-tail-rates]\ndim = 3\n")
    assert main(["w-tail-rates", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_PASS
    assert "# | dim = 3" in (tmp_path / "w-tail-rates.csv").read_text()


def test_sweep_w_tail_rates(tmp_path):
    code = main(["sweep", "--target", "w-tail-rates", "--grid", "dim=3|5|7", "--out", str(tmp_path), "--workers", "2"])
    assert code == EXIT_PASS
    body = rows(tmp_path / "sweep.csv")
    assert body[0][:2] == ["case", "dim"] and len(body) == 4
    assert [r[1] for r in body[1:]] == ["3", "5", "7"]


def test_sweep_empty_grid(tmp_path):
    assert main(["sweep", "--target", "w-tail-rates", "--out", str(tmp_path)]) == EXIT_PASS
    assert rows(tmp_path / "sweep.csv") == [["case", "check", "instance", "param", "observed", "expected",
                                             "tolerance", "pass"]]


def test_sweep_records_failing_case(tmp_path):
    dims = "|".join(["3", "5", "7"] * 3 + ["4"])
    assert main(["sweep", "--target", "w-tail-rates", "--grid", f"dim={dims}", "--out", str(tmp_path)]) == EXIT_FAIL
    body = rows(tmp_path / "sweep.csv")[1:]
    assert len(body) == 10
    assert sum(r[-1] == "true" for r in body) == 9
    bad = [r for r in body if r[-1] == "false"]
    assert bad[0][1] == "4" and bad[0][2] == "error"


def test_sweep_config_errors(tmp_path):
    assert main(["sweep", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sweep", "--target", "nope", "--out", str(tmp_path)]) == EXIT_CONFIG
    assert main(["sweep", "--target", "w-tail-rates", "--set", "novalue", "--out", str(tmp_path)]) == EXIT_CONFIG
