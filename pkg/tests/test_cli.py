import json
import subprocess
import sys

import pytest

from tidysim import data_path
from tidysim.cli import main
from tidysim.semantic_map import load_map, render

MODEL = str(data_path("fixture_model.tfm"))
CORPUS = str(data_path("fixture_corpus.csv"))
MAP = str(data_path("apartment.map"))


def test_check_ok_and_misplaced(capsys):
    assert main(["check", "--model", MODEL, "--user", "U1", "--object", "mug", "--room", "kitchen", "--receptacle", "counter", "--k", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "OK" and "kitchen counter" in out[1] and len(out) == 3
    assert main(["check", "--model", MODEL, "--user", "U2", "--object", "mug", "--room", "kitchen", "--receptacle", "sink", "--k", "2"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "MISPLACED" and "livingroom table" in out[1]


def test_check_unknown_object(capsys):
    code = main(["check", "--model", MODEL, "--user", "U1", "--object", "teapot", "--room", "kitchen", "--receptacle", "sink"])
    assert code != 0 and "teapot" in capsys.readouterr().err


def test_train_writes_model_and_is_deterministic(tmp_path, capsys):
    outs = []
    for n in range(2):
        path = tmp_path / f"m{n}.tfm"
        assert main(["train", "--corpus", CORPUS, "--holdout", "0.2", "--seed", "7", "--epochs", "100", "--out", str(path)]) == 0
        outs.append(capsys.readouterr().out)
        assert path.read_bytes()[:6] == b"TIDYFM"
    rmse = [l for l in outs[0].splitlines() if l.startswith("held-out RMSE")]
    assert rmse and outs[0].split("model written")[0] == outs[1].split("model written")[0]
    loss = float(outs[0].splitlines()[0].split()[-1])
    assert loss == loss and loss < float("inf")


def test_train_default_hyperparameters(tmp_path, capsys):
    assert main(["train", "--corpus", CORPUS, "--out", str(tmp_path / "m.tfm")]) == 0
    assert "final loss" in capsys.readouterr().out


def test_train_missing_corpus(capsys):
    assert main(["train", "--corpus", "/no/such/corpus.csv"]) == 1
    assert "ConfigError" in capsys.readouterr().err


def test_run_exit_codes(tmp_path):
    assert main(["run", "--scenario", "long_horizon", "--out", str(tmp_path / "a.jsonl")]) == 0
    assert main(["run", "--scenario", "retry_all_fail", "--out", str(tmp_path / "b.jsonl")]) == 2
    assert main(["run", "--scenario", "long_horizon", "--max-ticks", "5", "--out", str(tmp_path / "c.jsonl")]) == 3
    assert main(["run", "--scenario", "no_such_scenario"]) == 1
    first = json.loads((tmp_path / "a.jsonl").read_text().splitlines()[0])
    assert first["kind"] == "episode"


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as err:
        main(["plan", "--map", MAP, "--from", "3,6"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["bogus"])
    assert err.value.code == 1
    with pytest.raises(SystemExit) as err:
        main(["run", "--scenario", "drawer", "--k", "0"])
    assert err.value.code == 1


def test_plan(tmp_path, capsys):
    assert main(["plan", "--map", MAP, "--from", "3,6", "--to", "5,2", "--carrot", "--out", str(tmp_path / "p.txt")]) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[-1].startswith("cells 3 cost")
    assert out[-2] == "5,3"
    assert (tmp_path / "p.txt").read_text().count("*") == 4
    assert main(["plan", "--map", MAP, "--from", "3,6", "--to", "5,2"]) == 1
    assert main(["plan", "--map", MAP, "--from", "3,6", "--to", "7,6", "--inflate", "1"]) == 0
    # inflating by one cell seals the two-cell doorways
    assert main(["plan", "--map", MAP, "--from", "3,6", "--to", "27,5", "--inflate", "1"]) == 1


def write_log(path, moves):
    lines = [{"kind": "episode", "map": MAP, "tick": 0}]
    lines += [{"kind": "move", "tick": n + 1, "pose": [x, y, "E"]} for n, (x, y) in enumerate(moves)]
    lines.append({"kind": "summary", "terminal_reason": "AllPlaced"})
    path.write_text("".join(json.dumps(l) + "\n" for l in lines))


def test_render_from_log(tmp_path):
    plain = render(load_map(open(MAP).read()), [], show_receptacles=True)
    write_log(tmp_path / "empty.jsonl", [])
    assert main(["render", "--log", str(tmp_path / "empty.jsonl"), "--out", str(tmp_path / "e.txt")]) == 0
    assert (tmp_path / "e.txt").read_text() == plain + "\n"
    write_log(tmp_path / "three.jsonl", [(4, 6), (5, 6), (6, 6)])
    assert main(["render", "--log", str(tmp_path / "three.jsonl"), "--out", str(tmp_path / "t.txt")]) == 0
    assert (tmp_path / "t.txt").read_text().count("*") == 3
    assert main(["render", "--log", str(tmp_path / "three.jsonl"), "--out", str(tmp_path / "t.png")]) == 0
    first = (tmp_path / "t.png").read_bytes()
    main(["render", "--log", str(tmp_path / "three.jsonl"), "--out", str(tmp_path / "t.png")])
    assert (tmp_path / "t.png").read_bytes() == first


def test_render_scenario_and_bad_log(tmp_path, capsys):
    assert main(["render", "--scenario", "drawer"]) == 0
    assert "#" in capsys.readouterr().out
    assert main(["render", "--log", str(tmp_path / "missing.jsonl")]) != 0


def test_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "tidysim.cli", "run", "--scenario", "all_placed"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0 and "AllPlaced" in proc.stderr
