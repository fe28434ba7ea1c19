"""Acceptance checks AC1 to AC10, each at its stated tolerance and resolution.

Every check prints one ``ACn: PASS`` or ``ACn: FAIL`` line; run with ``-s``
to see them. The CSV and summary for each land in pytest's tmp directory.
"""
from __future__ import annotations

import csv

import pytest

from radchannels.cli import COMMANDS, EXIT_PASS, build_config, read_csv_body, run

pytestmark = pytest.mark.slow

CASES = [
    ("AC1", "verify-equirepartition", {"dim": "3,5"}),
    ("AC2", "exterior-bound", {"dim": "3,5"}),
    ("AC3", "even-positivity", {"dim": "4"}),
    ("AC4", "hankel-strictness", {}),
    ("AC5", "w-facts", {"dim": "3,5,7"}),
    ("AC6", "theorem1-rates", {"dim": "3,5,7"}),
    ("AC7", "support-law", {"dim": "3,4"}),
    ("AC8", "compact-exclusion", {"dim": "3,4"}),
    ("AC9", "check-sequences", {"seed": "7"}),
    ("AC10", "solver-gates", {}),
]


@pytest.mark.parametrize("label,command,values", CASES, ids=[c[0] for c in CASES])
def test_acceptance(label, command, values, tmp_path, capsys):
    assert COMMANDS[command].criterion == label
    cfg = build_config(command, values | {"out": str(tmp_path)})
    code = run(cfg)
    capsys.readouterr()
    body = list(csv.DictReader(read_csv_body(tmp_path / f"{command}.csv").splitlines()))
    failed = [f"{r['check']} {r['instance']} {r['param']}" for r in body if r["pass"] != "true"]
    with capsys.disabled():
        status = "PASS" if code == EXIT_PASS and not failed else "FAIL"
        print(f"\n{label}: {status} ({command}, {len(body) - len(failed)}/{len(body)} rows)")
    assert body, "no rows produced"
    assert not failed, failed
    assert code == EXIT_PASS
