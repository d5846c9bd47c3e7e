import json
import os
from pathlib import Path

import pytest

from stsep import cli

SNAPSHOTS = Path(__file__).parent / "snapshots"
COMMANDS = [None, "simulate", "estimate", "test", "ci", "reproduce"]


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def simulate(tmp_path, capsys, seed, n=20, T=20, model=0, name="f.csv"):
    path = tmp_path / name
    code, _, err = run(["simulate", "--model", model, "--n", n, "--T", T, "--seed", seed, "--out", path], capsys)
    assert code == 0, err
    return path


def test_simulate_row_counts(tmp_path, capsys):
    path = simulate(tmp_path, capsys, 1)
    assert len(path.read_text().splitlines()) == 1 + 400
    assert len((tmp_path / "f_design.csv").read_text().splitlines()) == 1 + 20


def test_simulate_byte_identical(tmp_path, capsys):
    a = simulate(tmp_path, capsys, 5, name="a.csv")
    b = simulate(tmp_path, capsys, 5, name="b.csv")
    assert a.read_bytes() == b.read_bytes()
    assert (tmp_path / "a_design.csv").read_bytes() == (tmp_path / "b_design.csv").read_bytes()


def test_simulate_cap_exceeded(tmp_path, capsys):
    code, _, err = run(["simulate", "--model", 3, "--n", 200, "--T", 200, "--method", "dense",
                        "--out", tmp_path / "x.csv"], capsys)
    assert code != 0 and "cap" in err


def test_separable_input_mostly_accepted(tmp_path, capsys):
    accepted = 0
    for seed in range(50):
        path = simulate(tmp_path, capsys, seed, n=50, T=50, name=f"s{seed}.csv")
        code, out, err = run(["test", "--input", path, "--test", "exact-svd", "--quantile-mode", "chisquare",
                              "--seed", seed], capsys)
        assert code in (0, 3), err
        assert "statistic" in json.loads(out)
        accepted += code == 0
    assert accepted >= 45


def test_malformed_csv_exit_2(tmp_path, capsys):
    path = simulate(tmp_path, capsys, 1)
    lines = path.read_text().splitlines()
    lines[7] = "3,0.1,0.2,5,notanumber"
    path.write_text("\n".join(lines) + "\n")
    code, _, err = run(["test", "--input", path], capsys)
    assert code == 2 and "line 8" in err


def test_relevant_equiv_huge_delta(tmp_path, capsys):
    for seed in range(3):
        code, out, _ = run(["test", "--model", 3, "--n", 30, "--T", 30, "--seed", seed,
                            "--test", "relevant-equiv", "--delta", 1e9], capsys)
        assert code == 3 and json.loads(out)["reject"] is True


def test_exactly_one_source(capsys):
    code, _, err = run(["estimate"], capsys)
    assert code == 2 and "--input" in err


def test_estimate_and_ci(tmp_path, capsys):
    code, out, _ = run(["estimate", "--model", 1, "--n", 30, "--T", 30, "--out", tmp_path / "e.json"], capsys)
    assert code == 0 and json.loads(out) == json.loads((tmp_path / "e.json").read_text())
    code, out, _ = run(["ci", "--model", 1, "--n", 30, "--T", 30], capsys)
    doc = json.loads(out)
    assert code == 0 and 0 <= doc["lo"] <= doc["hi"]


def test_table_out_of_range(capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(["reproduce", "--table", "9"])
    assert info.value.code == 2


def test_reproduce_deterministic(tmp_path, capsys):
    paths = []
    for name in ("a.csv", "b.csv"):
        p = tmp_path / name
        code, _, err = run(["reproduce", "--table", 1, "--reps", 100, "--seed", 7, "--B", 200,
                            "--cap", 10000, "--out", p], capsys)
        assert code == 0, err
        paths.append(p)

    def strip_seconds(p):
        return [line.rsplit(",", 1)[0] for line in p.read_text().splitlines()]

    a, b = (strip_seconds(p) for p in paths)
    assert a == b and len(a) == 1 + 8 * 2 * 2
    assert sum("—" not in line for line in a[1:]) == 2 * 2 * 2
    assert json.loads(Path(str(paths[0]) + ".json").read_text())["configs"][0]["rootSeed"] == 7


def test_config_precedence(tmp_path, capsys):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"n": 12, "T": 9, "seed": 3, "model": "0"}))
    out = tmp_path / "f.csv"
    code, _, _ = run(["--config", cfg, "simulate", "--T", 11, "--out", out], capsys)
    assert code == 0
    assert len(out.read_text().splitlines()) == 1 + 12 * 11
    bad = tmp_path / "bad.json"
    bad.write_text("[1, 2]")
    code, _, err = run(["--config", bad, "simulate", "--model", 0, "--out", out], capsys)
    assert code == 2


def _help_text(command):
    parser = cli.build_parser()
    if command is None:
        return parser.format_help()
    sub = next(a for a in parser._actions if a.dest == "command")
    return sub.choices[command].format_help()


@pytest.mark.parametrize("command", COMMANDS, ids=lambda c: c or "main")
def test_help_snapshot(command, monkeypatch):
    monkeypatch.setenv("COLUMNS", "100")
    text = _help_text(command)
    path = SNAPSHOTS / f"help_{command or 'main'}.txt"
    if os.environ.get("STSEP_UPDATE_SNAPSHOTS"):
        path.write_text(text)
    assert text == path.read_text()
    if command is not None:
        for action in cli.build_parser()._actions[-1].choices[command]._actions:
            if action.option_strings and action.dest in cli.DEFAULTS:
                assert action.option_strings[0] in text
                assert action.required or "(default:" in action.help
