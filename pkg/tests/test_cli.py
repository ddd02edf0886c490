import argparse
import json
import subprocess
import sys

import pytest

from cellbench.cli import build_parser, run_cli
from cellbench.enumerator import read_index

CHAIN3 = "matrix=010001000;ops=CONV3X3"


@pytest.fixture(scope="module")
def space(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "five.space"
    assert run_cli(["enumerate", "--max-vertices", "5", "--max-edges", "9", "--out", str(path)]) == 0
    return path


def run_to_bytes(tmp_path, argv, name="out"):
    out = tmp_path / name
    assert run_cli(argv + ["--out", str(out)]) == 0
    return out.read_bytes()


def test_enumerate_three(tmp_path):
    path = tmp_path / "mini.space"
    assert run_cli(["enumerate", "--max-vertices", "3", "--max-edges", "9", "--out", str(path)]) == 0
    assert " count=7" in path.read_text().splitlines()[0]
    assert len(read_index(path)) == 7


def test_enumerate_needs_out(capsys):
    assert run_cli(["enumerate", "--max-vertices", "3"]) == 1
    assert capsys.readouterr().err.startswith("cellbench: error:")


def test_stats(space, capsys):
    assert run_cli(["stats", "--index", str(space)]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["total"] == 2532 and doc["vertices"] == {"2": 1, "3": 6, "4": 84, "5": 2441}
    assert doc["raw_encodings"] == 509_607_936


def test_query_determinism(space, tmp_path):
    argv = ["query", "--index", str(space), "--spec", CHAIN3, "--epochs", "108", "--oracle", "synthetic:seed=1", "--seed", "7"]
    a = run_to_bytes(tmp_path, argv, "a")
    b = run_to_bytes(tmp_path, argv, "b")
    assert a == b
    rec = json.loads(a)
    assert rec["epochs"] == 108 and rec["trial"] in (1, 2, 3)


def test_query_fixed_trial(space, capsys):
    assert run_cli(["query", "--index", str(space), "--spec", CHAIN3, "--trial", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["trial"] == 2


def test_index_from_environment(space, capsys, monkeypatch):
    monkeypatch.setenv("NASBENCH_INDEX", str(space))
    assert run_cli(["query", "--spec", CHAIN3]) == 0
    assert json.loads(capsys.readouterr().out)["params"] > 0


def test_params(space, capsys):
    assert run_cli(["params", "--spec", CHAIN3, "--cells-per-stack", "1", "--num-stacks", "1"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["parameter_count"] == 3712 + 164_352 + 1290
    assert run_cli(["params", "--spec", CHAIN3, "--plan"]) == 0
    assert json.loads(capsys.readouterr().out)["layers"][0]["kind"] == "stem"


@pytest.mark.parametrize(
    "argv, needle",
    [
        (["query", "--spec", CHAIN3, "--index", "/nonexistent"], "not found"),
        (["query", "--spec", "matrix=01;ops=", "--index", "{space}"], "matrix"),
        (["query", "--spec", CHAIN3, "--index", "{space}", "--oracle", "tabular:/nope"], "does not exist"),
        (["query", "--spec", CHAIN3, "--index", "{space}", "--oracle", "magic"], "selector"),
        (["query", "--spec", "matrix=0000000000000000;ops=CONV3X3,CONV3X3", "--index", "{space}"], "path"),
        (["bench", "--index", "{space}", "--budget", "-5"], None),
        (["bench", "--index", "{space}", "--algo", "hb", "--eta", "2", "--runs", "1", "--budget", "1e5"], "eta"),
    ],
)
def test_errors_are_one_line(space, capsys, monkeypatch, argv, needle):
    monkeypatch.delenv("NASBENCH_INDEX", raising=False)
    argv = [a.replace("{space}", str(space)) for a in argv]
    try:
        code = run_cli(argv)
    except SystemExit as exc:
        code = exc.code
    err = capsys.readouterr().err
    assert code != 0
    if needle is not None:
        line = err.strip()
        assert "\n" not in line and line.startswith("cellbench: error:")
        assert needle in line


def test_missing_index(capsys, monkeypatch):
    monkeypatch.delenv("NASBENCH_INDEX", raising=False)
    assert run_cli(["stats"]) == 1
    assert "NASBENCH_INDEX" in capsys.readouterr().err


def test_unknown_flag():
    with pytest.raises(SystemExit) as exc:
        run_cli(["stats", "--bogus"])
    assert exc.value.code == 2


BENCH = ["bench", "--budget", "2e5", "--runs", "6", "--grid-points", "12"]

DETERMINISM_CASES = [
    ["stats"],
    ["query", "--spec", CHAIN3],
    ["params", "--spec", CHAIN3],
    BENCH + ["--algo", "rs"],
    BENCH + ["--algo", "re", "--ps", "20", "--ts", "5"],
    BENCH + ["--algo", "nre", "--ps", "20", "--ts", "5"],
    BENCH + ["--algo", "reinforce"],
    BENCH + ["--algo", "hb"],
    ["analyze", "rwa", "--walk-length", "2000", "--max-lag", "10"],
    ["analyze", "fdc", "--sample-size", "500"],
    ["analyze", "opmatrix"],
    ["analyze", "ecdf", "--epochs", "12"],
    ["analyze", "volume", "--max-d", "6", "--sample-size", "2000"],
    ["analyze", "rankcorr"],
    ["analyze", "depthwidth"],
    ["export-metrics"],
]


@pytest.mark.parametrize("argv", DETERMINISM_CASES, ids=lambda a: "-".join(a[:2]))
def test_byte_identical_across_jobs(space, tmp_path, argv):
    full = argv + ["--index", str(space), "--seed", "3"]
    a = run_to_bytes(tmp_path, full + ["--jobs", "1"], "a")
    b = run_to_bytes(tmp_path, full + ["--jobs", "1"], "b")
    c = run_to_bytes(tmp_path, full + ["--jobs", "3"], "c")
    assert a == b == c
    assert a.endswith(b"\n") and b"\r" not in a
    a.decode("utf-8")


def test_seed_changes_stochastic_output(space, tmp_path):
    base = BENCH + ["--index", str(space)]
    assert run_to_bytes(tmp_path, base + ["--seed", "1"], "a") != run_to_bytes(tmp_path, base + ["--seed", "2"], "b")


def test_bench_outputs(space, tmp_path):
    ecdf = tmp_path / "ecdf.csv"
    traces = tmp_path / "traces"
    curve = run_to_bytes(
        tmp_path,
        BENCH + ["--index", str(space), "--ecdf-out", str(ecdf), "--traces-dir", str(traces)],
    ).decode()
    lines = curve.splitlines()
    assert lines[0] == "time_s,mean_regret,q25,q50,q75" and len(lines) == 13
    assert ecdf.read_text().splitlines()[0] == "regret,cum_fraction"
    files = sorted(traces.iterdir())
    assert len(files) == 6
    assert files[0].read_text().splitlines()[0] == "time_s,evals,best_valid_acc,mean_test_acc,test_regret"


def test_metrics_round_trip(space, tmp_path, capsys):
    exported = tmp_path / "m.jsonl"
    assert run_cli(["export-metrics", "--index", str(space), "--out", str(exported)]) == 0
    normalized = tmp_path / "n.jsonl"
    assert run_cli(["convert-metrics", "--index", str(space), "--metrics", str(exported), "--out", str(normalized)]) == 0
    assert normalized.read_bytes() == exported.read_bytes()
    assert "ok:" in capsys.readouterr().err
    q_syn = run_to_bytes(tmp_path, ["query", "--index", str(space), "--spec", CHAIN3], "q1")
    q_tab = run_to_bytes(
        tmp_path, ["query", "--index", str(space), "--spec", CHAIN3, "--oracle", f"tabular:{exported}"], "q2"
    )
    assert q_syn == q_tab


def test_convert_rejects_bad_file(space, tmp_path, capsys):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"digest": "00"}\n')
    assert run_cli(["convert-metrics", "--index", str(space), "--metrics", str(bad)]) == 1
    assert "line 1" in capsys.readouterr().err


def test_help_documents_every_flag():
    parser = build_parser()
    subs = parser._subparsers._group_actions[0].choices
    checked = 0
    for name, sub in subs.items():
        parsers = [sub]
        if name == "analyze":
            parsers = list(sub._subparsers._group_actions[0].choices.values())
        for p in parsers:
            text = p.format_help()
            for action in p._actions:
                if action.option_strings and action.dest != "help":
                    assert action.help, (name, action.dest)
                    assert action.option_strings[-1] in text
                    if action.default not in (None, False, argparse.SUPPRESS):
                        assert "default" in action.help or "(default:" in text
            checked += 1
    assert checked == 14


def test_console_script(space):
    proc = subprocess.run(
        [sys.executable, "-m", "cellbench.cli", "stats", "--index", str(space)],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0 and json.loads(proc.stdout)["total"] == 2532
