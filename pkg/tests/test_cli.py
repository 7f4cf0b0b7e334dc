import json

import numpy as np
import pytest

from chainspec import cli, storage

STAGES = ("generate", "embed", "fit", "evaluate")


def write_config(tmp_path, **sections):
    cfg = {
        "seed": 3,
        "dataset": {"kind": "box2d", "n": 40, "grid_n": 32, "lowdim_n": 16, "test_fraction": 0.25},
        "graph": {"K": 4},
        "fit": {"epochs": 2, "batch_size": 10, "learning_rate": 0.1, "loss_reduction": "mean",
                "mask": "box"},
    }
    for k, v in sections.items():
        if isinstance(v, dict) and isinstance(cfg.get(k), dict):
            cfg[k] = {**cfg[k], **v}
        else:
            cfg[k] = v
    p = tmp_path / "run.json"
    p.write_text(json.dumps(cfg))
    return str(p)


def run_all(config, out):
    for stage in STAGES:
        assert cli.main([stage, "--config", config, "--out", str(out)]) == 0, stage


def test_pipeline_outputs(tmp_path, capsys):
    config = write_config(tmp_path)
    run_all(config, tmp_path / "out")
    text = capsys.readouterr().out
    assert "SNR:" in text and "spacing:" in text and "eigenvalues:" in text
    out = tmp_path / "out"
    data = storage.load_dataset(out / "generate")
    assert len(data) == 40 and data.images.shape == (40, 32)
    phi = storage.read_array(out / "embed" / "phi.cspc")
    assert phi.shape == (40, 4)
    np.testing.assert_allclose(phi.T @ phi, np.eye(4), atol=1e-8)
    assert storage.read_array(out / "fit" / "predictions.cspc").shape == (10, 149, 2)
    hist = (out / "fit" / "history.tsv").read_text().strip().splitlines()
    assert len(hist) == 1 + 3
    summary = json.loads((out / "evaluate" / "summary.json").read_text())
    assert summary["baseline_avg_error"] > 0
    for stage in STAGES:
        resolved = json.loads((out / stage / "resolved_config.json").read_text())
        assert resolved["seed"] == 3 and resolved["graph"]["sigma"] == 96.0


def test_pipeline_is_byte_identical(tmp_path):
    config = write_config(tmp_path)
    run_all(config, tmp_path / "a")
    run_all(config, tmp_path / "b")
    files_a = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(tmp_path / "b") for p in (tmp_path / "b").rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        a, b = (tmp_path / "a" / rel).read_bytes(), (tmp_path / "b" / rel).read_bytes()
        if rel.name == "resolved_config.json":
            a = a.replace(str(tmp_path / "a").encode(), b"")
            b = b.replace(str(tmp_path / "b").encode(), b"")
        assert a == b, rel


def test_thread_count_does_not_change_results(tmp_path, monkeypatch):
    config = write_config(tmp_path)
    run_all(config, tmp_path / "one")
    monkeypatch.setenv("CHAINSPEC_THREADS", "3")
    assert cli.main(["fit", "--config", config, "--out", str(tmp_path / "one"), "--threads", "2"]) == 0
    first = storage.read_array(tmp_path / "one" / "fit" / "A.cspc")
    run_all(config, tmp_path / "three")
    resolved = json.loads((tmp_path / "three" / "fit" / "resolved_config.json").read_text())
    assert resolved["threads"] == 3
    np.testing.assert_array_equal(first, storage.read_array(tmp_path / "three" / "fit" / "A.cspc"))


def test_epochs_zero_writes_baseline_only(tmp_path):
    config = write_config(tmp_path, fit={"epochs": 0})
    run_all(config, tmp_path / "o")
    rows = (tmp_path / "o" / "fit" / "history.tsv").read_text().strip().splitlines()
    assert len(rows) == 2
    s = json.loads((tmp_path / "o" / "evaluate" / "summary.json").read_text())
    assert s["avg_error"] == s["baseline_avg_error"]


def test_evaluate_perfect_predictions_score_zero(tmp_path):
    config = write_config(tmp_path)
    out = tmp_path / "o"
    for stage in ("generate", "embed", "fit"):
        assert cli.main([stage, "--config", config, "--out", str(out)]) == 0
    data = storage.load_dataset(out / "generate")
    storage.write_array(out / "fit" / "predictions.cspc", data.truth[data.test_indices])
    assert cli.main(["evaluate", "--config", config, "--out", str(out)]) == 0
    s = json.loads((out / "evaluate" / "summary.json").read_text())
    assert s["max_error"] == 0.0 and s["avg_error"] == 0.0


def test_seed_override_changes_data(tmp_path):
    config = write_config(tmp_path)
    assert cli.main(["generate", "--config", config, "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["generate", "--config", config, "--out", str(tmp_path / "b"), "--seed", "11"]) == 0
    a = storage.read_array(tmp_path / "a" / "generate" / "images.cspc")
    b = storage.read_array(tmp_path / "b" / "generate" / "images.cspc")
    assert not np.array_equal(a, b)


@pytest.mark.parametrize("sections", [
    {"bogus": 1},
    {"dataset": {"kind": "box2d", "colour": "red"}},
    {"fit": {"learning_rate": -1.0}},
    {"dataset": {"kind": "sphere"}},
    {"fit": {"mask": [0]}},
    {"graph": {"K": 1000}},
    {"seed": -4},
])
def test_validation_errors_exit_1(tmp_path, sections, capsys):
    config = write_config(tmp_path, **sections)
    out = str(tmp_path / "o")
    for stage in ("generate", "embed", "fit"):
        code = cli.main([stage, "--config", config, "--out", out])
        if code:
            break
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_unknown_keys_named(tmp_path):
    with pytest.raises(cli.ConfigError, match="colour"):
        cli.load_config(write_config(tmp_path, dataset={"colour": 1}))


def test_io_errors_exit_2(tmp_path):
    assert cli.main(["generate", "--config", str(tmp_path / "missing.json")]) == 2
    config = write_config(tmp_path)
    assert cli.main(["embed", "--config", config, "--out", str(tmp_path / "empty")]) == 2


def test_malformed_prediction_file_exit_2(tmp_path, capsys):
    config = write_config(tmp_path)
    out = tmp_path / "o"
    for stage in ("generate", "embed", "fit"):
        cli.main([stage, "--config", config, "--out", str(out)])
    (out / "fit" / "predictions.cspc").write_bytes(b"CSPC\x01\x00")
    assert cli.main(["evaluate", "--config", config, "--out", str(out)]) == 2
    assert "offset" in capsys.readouterr().err


def test_bad_arguments_exit_1(tmp_path):
    config = write_config(tmp_path)
    assert cli.main(["transmogrify", "--config", config]) == 1
    assert cli.main(["generate"]) == 1
    assert cli.main(["generate", "--config", config, "--threads", "0"]) == 1
    assert cli.main(["generate", "--config", config, "--seed", str(2 ** 64)]) == 1


def test_malformed_json_is_validation_error(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text("{")
    assert cli.main(["generate", "--config", str(p)]) == 1


def test_backbone_defaults_follow_kind(tmp_path):
    cfg = cli.resolve_config({"dataset": {"kind": "backbone3d"}})
    assert cfg["graph"]["sigma"] == 80.0 and cfg["graph"]["K"] == 10
    cfg = cli.resolve_config({})
    assert cfg["graph"]["sigma"] == 96.0 and cfg["graph"]["K"] == 20
    assert cfg["fit"]["seed"] == cfg["dataset"]["seed"] == cfg["seed"] == 0


def test_backbone_pipeline_with_trajectory_file(tmp_path):
    from chainspec import datasets as ds
    traj = tmp_path / "traj.txt"
    ds.save_trajectory(traj, ds.synthetic_backbone_trajectory(n_frames=3, m=24, seed=2))
    config = write_config(tmp_path, dataset={"kind": "backbone3d", "n": 12, "j0": 12, "grid_n": 12,
                                             "lowdim_n": 5, "trajectory_path": str(traj),
                                             "test_fraction": 0.25},
                          fit={"mask": None, "epochs": 1, "batch_size": 6})
    run_all(config, tmp_path / "o")
    assert storage.read_array(tmp_path / "o" / "fit" / "B.cspc").shape == (22, 4)
    s = json.loads((tmp_path / "o" / "generate" / "summary.json").read_text())
    assert abs(s["trajectory_spacing_mean"] - 3.8412) < 0.05


def test_backbone_bad_trajectory_exit_2(tmp_path):
    traj = tmp_path / "traj.txt"
    traj.write_text("FRAME 0\n1 2\n")
    config = write_config(tmp_path, dataset={"kind": "backbone3d", "trajectory_path": str(traj)})
    assert cli.main(["generate", "--config", config, "--out", str(tmp_path / "o")]) == 2
