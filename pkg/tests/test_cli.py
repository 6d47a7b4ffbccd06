import json

import pytest

from shallowlab.cli import main

BASE_CONFIG = {
    "dims": {"d0": 6, "d1": 16, "d2": 1, "n": 8},
    "activation": "tanh",
    "init": {"omega1": 1.0, "omega2": 0.05},
    "optimizer": {"max_iters": 50, "stop_loss": 1e-9, "track_lazy": True,
                  "dt": 0.01, "t_end": 0.1},
    "mc": {"num_samples": 200},
    "master_seed": 3,
}


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(BASE_CONFIG))
    return str(path)


def test_analyze_activation_json(tmp_path, capsys):
    out = tmp_path / "act.json"
    assert main(["analyze-activation", "gelu", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["name"] == "gelu"
    assert doc["hermite"]["coefficients"][1] == pytest.approx(0.5, abs=1e-9)
    assert doc["hermite"]["odd_function_warning"] is False


def test_analyze_activation_csv(tmp_path):
    out = tmp_path / "act.csv"
    assert main(["analyze-activation", "tanh", "--format", "csv", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "i,coefficient"
    assert float(lines[1].split(",")[1]) == 0.0  # tanh c0 snaps to zero


def test_certify_writes_document(config_path, tmp_path):
    out = tmp_path / "cert.json"
    assert main(["certify", config_path, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc["constants"]) == {"mu", "nu", "beta", "rho", "eta"}
    assert "init_margin" in doc["certificates"]
    assert "psi" in doc["certificates"]
    assert doc["certificates"]["width"]["d1_actual"] == 16


def test_train_emits_csv_trace(config_path, tmp_path):
    out = tmp_path / "trace.csv"
    assert main(["train", config_path, "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "iter,loss,grad_norm,dist_from_init,lazy_deviation"
    assert len(lines) >= 3


def test_train_deterministic_bytes(config_path, tmp_path):
    a = tmp_path / "a.csv"
    b = tmp_path / "b.csv"
    assert main(["train", config_path, "--out", str(a)]) == 0
    assert main(["train", config_path, "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_flow_emits_trace(config_path, tmp_path):
    out = tmp_path / "flow.json"
    assert main(["flow", config_path, "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["times"][0] == 0.0
    assert len(doc["loss"]) == len(doc["times"])


def test_gram_mc(config_path, tmp_path):
    out = tmp_path / "mc.json"
    assert main(["gram-mc", config_path, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert doc["num_samples"] == 200
    assert doc["rel_frobenius_error"] < 0.5
    assert "empirical_gram" in doc  # n = 8 <= 16 includes matrices


def test_lazy_sweep(config_path, tmp_path):
    out = tmp_path / "lazy.json"
    assert main(["lazy-sweep", config_path, "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert [p["ratio"] for p in doc["points"]] == [0.01, 0.1, 1.0, 10.0, 100.0]
    assert doc["points"][0]["classification"] == "lazy guaranteed asymptotically"
    assert doc["points"][-1]["classification"] == "non-lazy possible"


def test_unknown_config_key_exit_code_2(tmp_path):
    bad = dict(BASE_CONFIG)
    bad["nonsense"] = 1
    path = tmp_path / "bad.json"
    path.write_text(json.dumps(bad))
    assert main(["certify", str(path)]) == 2


def test_missing_config_file_exit_code_2(tmp_path):
    assert main(["certify", str(tmp_path / "absent.json")]) == 2


def test_divergent_training_exit_code_3(tmp_path):
    cfg = dict(BASE_CONFIG)
    cfg["optimizer"] = {"eta": 100.0, "max_iters": 500, "stop_loss": 0.0}
    path = tmp_path / "diverge.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", str(path)]) == 3


def test_unwritable_output_exit_code_4(config_path, tmp_path):
    target = str(tmp_path / "no_such_dir" / "out.json")
    assert main(["certify", config_path, "--out", target]) == 4


def test_teacher_student_tiny_sweep(tmp_path):
    cfg = {
        "dims": {"d0": 6, "d1": 12, "d2": 2, "n": 16},
        "activation": "tanh",
        "data": {"source": "clusters", "classes": 2, "noise": 0.05, "n_test": 8},
        "teacher": {"stop_loss": 0.5, "max_iters": 200},
        "optimizer": {"eta": "auto", "max_iters": 40, "stop_loss": 1e-9,
                      "track_lazy": True},
        "sweep": {"ratios": [0.1, 10.0], "seeds_per_point": 1, "workers": 1},
        "master_seed": 5,
    }
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(cfg))
    out = tmp_path / "report.json"
    assert main(["teacher-student", str(path), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert len(doc["sweep"]) == 2
    assert {r["ratio"] for r in doc["sweep"]} == {0.1, 10.0}
    assert all("psi" in r["certificates"] for r in doc["sweep"])
    csv_out = tmp_path / "report.csv"
    assert main(["teacher-student", str(path), "--format", "csv",
                 "--out", str(csv_out)]) == 0
    assert csv_out.read_text().startswith("ratio,seed,")


def test_seed_override_changes_result(config_path, tmp_path):
    a = tmp_path / "a.json"
    b = tmp_path / "b.json"
    assert main(["certify", config_path, "--seed", "1", "--out", str(a)]) == 0
    assert main(["certify", config_path, "--seed", "2", "--out", str(b)]) == 0
    assert a.read_bytes() != b.read_bytes()
