import json
from pathlib import Path

import pytest

from hypoflow import cli

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def write(tmp_path, text, name="cfg.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


SMALL_FLOW = """
experiment: flow
fixture: {name: ContactTorus, n: 9}
target: Circle
initial: {type: winding_perturbed, windings: [[1, 0, 0]], amplitude: 0.3, mode: random, seed: 3}
flow: {T_max: 0.05}
"""


def test_flow_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["flow", "--config", write(tmp_path, SMALL_FLOW), "--out", str(out)]) == 0
    assert sorted(p.name for p in out.iterdir()) == ["flow.csv", "summary.json", "timing.json"]
    doc = json.loads((out / "summary.json").read_text())
    assert doc["stop_reason"] == "t_max" and doc["windings_final"] == [1, 0, 0]
    assert doc["config"]["initial"]["seed"] == 3
    assert "ok" in capsys.readouterr().out


def test_deterministic_bytes(tmp_path):
    cfg = write(tmp_path, SMALL_FLOW)
    for k in range(2):
        assert cli.main(["flow", "--config", cfg, "--out", str(tmp_path / f"r{k}")]) == 0
    for name in ("flow.csv", "summary.json"):
        assert (tmp_path / "r0" / name).read_bytes() == (tmp_path / "r1" / name).read_bytes()


def test_seed_override_changes_output(tmp_path):
    cfg = write(tmp_path, SMALL_FLOW)
    cli.main(["flow", "--config", cfg, "--out", str(tmp_path / "a")])
    cli.main(["flow", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "4"])
    assert (tmp_path / "a" / "flow.csv").read_bytes() != (tmp_path / "b" / "flow.csv").read_bytes()
    assert json.loads((tmp_path / "b" / "summary.json").read_text())["config"]["initial"]["seed"] == 4


def test_output_dir_precedence(tmp_path, monkeypatch):
    cfg = write(tmp_path, "experiment: fixture\nfixture: {name: CommutingTorus, n: 5}\n"
                          f"output: {{dir: {tmp_path / 'from_cfg'}}}\n")
    assert cli.main(["fixture", "--config", cfg]) == 0
    assert (tmp_path / "from_cfg" / "summary.json").exists()
    monkeypatch.setenv(cli.OUT_ENV, str(tmp_path / "from_env"))
    assert cli.main(["fixture", "--config", cfg]) == 0
    assert (tmp_path / "from_env" / "fixture.csv").exists()
    assert cli.main(["fixture", "--config", cfg, "--out", str(tmp_path / "from_arg")]) == 0
    assert (tmp_path / "from_arg" / "fixture.csv").exists()


def test_unknown_fixture_exit_1(tmp_path, capsys):
    code = cli.main(["fixture", "--config", str(CONFIGS / "bad_fixture.yaml"), "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "Engel" in err and "ContactTorus, HeisenbergNilmanifold, CommutingTorus" in err


@pytest.mark.parametrize("text", [
    "experiment: flow\nfixture: {name: ContactTorus, n: 8}\n",
    "experiment: flow\nfixture: {name: ContactTorus, n: 9}\ntarget: Klein\n",
    "experiment: flow\nfixture: {name: ContactTorus, n: 9}\nflow: {speed: 3}\n",
    "experiment: flow\nfixture: {name: ContactTorus, n: 9}\nflow: {scheme: Euler}\n",
    "experiment: flow\nfixture: {name: HeisenbergNilmanifold, n: 9}\ntarget: Circle\n"
    "initial: {type: winding, windings: [[0, 0, 1]]}\n",
    "- not a mapping\n",
    "experiment: flow\ntarget: Circle\n",
    "experiment: kernel\nfixture: {name: ContactTorus, n: 9}\n",
])
def test_config_errors_exit_1(tmp_path, text):
    assert cli.main(["flow", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 1


def test_missing_config_exit_1(tmp_path):
    assert cli.main(["flow", "--config", str(tmp_path / "nope.yaml")]) == 1


def test_failed_expectation_exit_2(tmp_path, capsys):
    text = SMALL_FLOW + "expect:\n  E_H_final: {value: 100.0, rel_tol: 0.01}\n"
    assert cli.main(["flow", "--config", write(tmp_path, text), "--out", str(tmp_path / "o")]) == 2
    assert "expect.E_H_final" in capsys.readouterr().err
    # outputs are still written for inspection
    assert (tmp_path / "o" / "summary.json").exists()


def test_ccvolume_and_kernel(tmp_path):
    cc = "experiment: ccvolume\nfixture: {name: HeisenbergNilmanifold, n: 9}\nccvolume: {window: [0.2, 0.5]}\n"
    assert cli.main(["ccvolume", "--config", write(tmp_path, cc), "--out", str(tmp_path / "c")]) == 0
    doc = json.loads((tmp_path / "c" / "summary.json").read_text())
    assert doc["Q"] == 4 and doc["record_count"] == 30
    k = "experiment: kernel\nfixture: {name: ContactTorus, n: 7}\nkernel: {t_grid: [0.01, 0.05]}\n"
    assert cli.main(["kernel", "--config", write(tmp_path, k, "k.yaml"), "--out", str(tmp_path / "k")]) == 0
    doc = json.loads((tmp_path / "k" / "summary.json").read_text())
    assert doc["spectral"]["lambda1"] > 0


def test_verify_invariant_suite(tmp_path):
    assert cli.main(["verify", "--config", str(CONFIGS / "verify_HeisenbergNilmanifold.yaml"),
                     "--out", str(tmp_path)]) == 0


def test_verify_single_criterion(tmp_path, capsys):
    assert cli.main(["verify", "--config", str(CONFIGS / "acceptance" / "c05_fixture_tensors.yaml"),
                     "--out", str(tmp_path)]) == 0
    assert "[PASS] criterion  5" in capsys.readouterr().out


def test_hartman_config(tmp_path):
    text = """
experiment: hartman
fixture: {name: ContactTorus, n: 9}
target: Circle
hartman:
  lambdas: 5
  initial1: {type: winding_perturbed, windings: [[1, 0, 0]], amplitude: 0.4}
flow: {T_max: 0.02, stride: 5}
"""
    assert cli.main(["hartman", "--config", write(tmp_path, text), "--out", str(tmp_path / "h")]) == 0
    doc = json.loads((tmp_path / "h" / "summary.json").read_text())
    assert doc["Q_sup_max_increase"] <= 1e-8 and doc["windings"] == [1, 0, 0]


def test_shipped_configs_parse():
    for p in sorted(CONFIGS.rglob("*.yaml")):
        cfg = cli.load_config(p)
        assert cfg["experiment"] in cli.EXPERIMENTS, p


def test_csv_recomputation_matches_summary(tmp_path):
    # independent pass over the written trajectory
    from hypoflow.io import read_csv

    out = tmp_path / "o"
    assert cli.main(["flow", "--config", write(tmp_path, SMALL_FLOW), "--out", str(out)]) == 0
    header, data = read_csv(out / "flow.csv")
    col = {name: data[:, k] for k, name in enumerate(header)}
    doc = json.loads((out / "summary.json").read_text())
    verdicts = doc["monotonicity"]["verdicts"]
    eh = col["E_H"]
    assert verdicts["E_H_nonincreasing"] == bool((eh[1:] - eh[:-1] <= 1e-8 * eh[0]).all())
    lhs = -(eh[1:] - eh[:-1]) / (col["t"][1:] - col["t"][:-1])
    rhs = 0.5 * (col["tension_norm2"][1:] + col["tension_norm2"][:-1])
    assert verdicts["dissipation_identity"] == bool((abs(lhs - rhs) <= 0.1 * rhs + 1e-12 * eh[0] / 1e-3).all())
    assert (abs(col["E"] - eh - col["E_V"]) <= 1e-12 * col["E"]).all()
    assert doc["E_H_final"] == eh[-1] and doc["record_count"] == len(eh)
