import json
import math

import pytest
import yaml

from ikdnav import data, nn
from ikdnav.cli import main
from ikdnav.config import ConfigError, load_run_config

SIDE = 4.0 + 1.5 * math.pi

TRACK = {
    "name": "square",
    "plan": {"closed": True, "corner_radius": 3.0, "waypoints": [[5, 0], [10, 0], [10, 10], [0, 10], [0, 0]]},
    "corridor_half_width": 0.8,
    "gates": [{"label": f"T{i + 1}", "entry_at": 1.5 + i * SIDE, "exit_at": 7.2 + i * SIDE} for i in range(4)],
    "terrain": {"nominal": {"grip": 0.7, "roughness": 0.3, "drag": 0.0}, "patches": []},
    "arena": [-1, -1, 11, 11],
}

CONFIG = {
    "seed": 3,
    "track": "square.yaml",
    "collect": {"duration": 120.0, "policy": {"v_range": [0.5, 3.0]}},
    "train": {"epochs": 3},
    "bench": {"modes": ["baseline", "ablated", "learned"], "speeds": [1.0, 1.5, 2.0, 2.5, 3.0], "laps": 4},
}


def write_config(directory, **overrides):
    (directory / "square.yaml").write_text(yaml.safe_dump(TRACK))
    cfg = {**CONFIG, **overrides}
    path = directory / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root)
    out = str(root / "out")
    assert main(["collect", "--config", cfg, "--out", out]) == 0
    assert main(["train", "--config", cfg, "--out", out]) == 0
    assert main(["train", "--config", cfg, "--out", out, "--ablated"]) == 0
    return root, cfg, out


def provenance_line(path):
    return path.read_text().splitlines()[0]


class TestValidate:
    def test_demo_ok(self, capsys):
        assert main(["validate", "--config", "demo.yaml"]) == 0
        out = capsys.readouterr().out
        assert "backyard.yaml: ok" in out and "hall.yaml: ok" in out

    def test_gate_off_plan(self, capsys):
        assert main(["validate", "--config", "bad_gate.yaml"]) == 1
        assert "T2" in capsys.readouterr().out

    def test_self_intersecting_patch(self, capsys):
        assert main(["validate", "--config", "bad_patch.yaml"]) == 1
        assert "patch 'bowtie': boundary polygon self-intersects" in capsys.readouterr().out

    def test_missing_reference_is_invalid(self, tmp_path, capsys):
        cfg = write_config(tmp_path, track="nowhere.yaml")
        assert main(["validate", "--config", cfg]) == 1
        assert "nowhere.yaml" in capsys.readouterr().err

    def test_unknown_section_key(self, tmp_path):
        cfg = write_config(tmp_path, sim={"warp_drive": 1})
        with pytest.raises(ConfigError, match="warp_drive"):
            load_run_config(cfg)


class TestCollect:
    def test_writes_dataset_with_provenance(self, pipeline, capsys):
        root, cfg, out = pipeline
        ds = data.load(f"{out}/dataset.ikd")
        conf = load_run_config(cfg)
        assert ds.provenance["config_hash"] == conf.hash and ds.provenance["seed"] == 3
        assert ds.provenance["track"] == "square"
        prov = json.loads((root / "out" / "provenance.json").read_text())
        assert prov["dataset.ikd"]["config_hash"] == conf.hash

    def test_prints_count_and_histograms(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["collect", "--config", cfg, "--out", str(tmp_path), "--duration", "10"]) == 0
        text = capsys.readouterr().out
        assert "N = " in text and "coverage" in text and "#" in text

    def test_zero_duration_faults(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["collect", "--config", cfg, "--out", str(tmp_path), "--duration", "0"]) == 2
        assert "duration" in capsys.readouterr().err

    def test_same_seed_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path)
        for name in ("a", "b"):
            assert main(["collect", "--config", cfg, "--out", str(tmp_path / name), "--duration", "15"]) == 0
        assert (tmp_path / "a/dataset.ikd").read_bytes() == (tmp_path / "b/dataset.ikd").read_bytes()
        assert main(["collect", "--config", cfg, "--out", str(tmp_path / "c"), "--duration", "15",
                     "--seed", "4"]) == 0
        assert (tmp_path / "a/dataset.ikd").read_bytes() != (tmp_path / "c/dataset.ikd").read_bytes()


class TestTrain:
    def test_full_and_ablated_files(self, pipeline):
        root, cfg, out = pipeline
        full = nn.load_params(f"{out}/params.ikd")
        ablated = nn.load_params(f"{out}/params_ablated.ikd")
        assert full.spec.use_encoder and not ablated.spec.use_encoder
        assert ablated.metadata["use_encoder"] is False
        assert full.metadata["config_hash"] == load_run_config(cfg).hash
        for name in ("loss.csv", "loss_ablated.csv"):
            lines = (root / "out" / name).read_text().splitlines()
            assert lines[0].startswith("# config_hash=") and "seed=3" in lines[0]
            assert lines[1] == "epoch,train_loss,val_loss" and len(lines) == 2 + 4

    def test_missing_dataset_faults(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["train", "--config", cfg, "--out", str(tmp_path / "empty")]) == 2
        assert "dataset not found" in capsys.readouterr().err

    def test_identity_ratio_printed(self, tmp_path, identity_dataset, capsys):
        cfg = write_config(tmp_path, train={"epochs": 30})
        data.save(identity_dataset, tmp_path / "identity.ikd")
        assert main(["train", "--config", cfg, "--out", str(tmp_path), "--dataset",
                     str(tmp_path / "identity.ikd")]) == 0
        line = [ln for ln in capsys.readouterr().out.splitlines() if "ratio" in ln][0]
        assert float(line.rsplit("ratio", 1)[1].strip().rstrip("%")) < 1.0


class TestBench:
    def test_unknown_mode(self, pipeline, capsys):
        _, cfg, out = pipeline
        assert main(["bench", "--config", cfg, "--out", out, "--controller", "turbo"]) == 2
        assert "valid modes: baseline, ablated, learned" in capsys.readouterr().err

    def test_missing_params_fault(self, tmp_path, capsys):
        cfg = write_config(tmp_path)
        assert main(["bench", "--config", cfg, "--out", str(tmp_path), "--controller", "learned"]) == 2
        assert "params.ikd" in capsys.readouterr().err

    @pytest.mark.slow
    def test_grid_counts_and_provenance(self, pipeline):
        root, cfg, out = pipeline
        assert main(["bench", "--config", cfg, "--out", out]) == 0
        dest = root / "out" / "bench" / "square"
        report = json.loads((dest / "report.json").read_text())
        assert sum(c["laps"] + c["faulted"] for c in report["per_cell"]) == 60
        assert len(report["per_cell"]) == 15
        assert all(report["overall"][m]["laps"] == 20 for m in report["modes"])
        assert len(list((dest / "trajectories").glob("*.csv"))) == 60
        prov = report["provenance"]
        assert prov["config_hash"] == load_run_config(cfg).hash and prov["seed"] == 3
        assert set(prov["params"]) == {"ablated", "learned"}
        assert provenance_line(dest / "failure_by_speed.csv").startswith("# config_hash=")
        assert provenance_line(dest / "trajectories" / "baseline_1.00_00.csv").startswith("# config_hash=")

    def test_controller_subset_is_repeatable(self, pipeline):
        root, cfg, out = pipeline
        sub = str(root / "sub")
        for name in ("params.ikd", "params_ablated.ikd"):
            (root / "sub").mkdir(exist_ok=True)
            (root / "sub" / name).write_bytes((root / "out" / name).read_bytes())
        assert main(["bench", "--config", cfg, "--out", sub, "--controller", "baseline",
                     "--controller", "learned", "--laps", "1"]) == 0
        path = root / "sub" / "bench" / "square" / "report.json"
        first = path.read_bytes()
        report = json.loads(first)
        assert report["modes"] == ["baseline", "learned"] and report["laps_per_cell"] == 1
        assert sum(c["laps"] + c["faulted"] for c in report["per_cell"]) == 10
        assert main(["bench", "--config", cfg, "--out", sub, "--controller", "baseline",
                     "--controller", "learned", "--laps", "1", "--workers", "2"]) == 0
        assert path.read_bytes() == first
