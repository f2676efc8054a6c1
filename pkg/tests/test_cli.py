import csv
import json

import pytest

from fedcspack.cli import main
from fedcspack.config import apply_overrides, config_from_dict, load_config
from fedcspack.errors import ConfigError


def base_doc():
    return {
        "method": "fedcspack",
        "rounds": 3,
        "clients": 6,
        "cpr": 0.5,
        "local_epochs": 1,
        "lr": 0.1,
        "batch_size": 16,
        "pack": 64,
        "cap_ratio": 0.5,
        "seed": 1,
        "partition": {"law": "dirichlet", "num_clients": 6, "seed": 2, "alpha": 0.5},
        "model": {"widths": [12, 16, 5], "activation": "relu"},
        "dataset": {
            "kind": "blobs",
            "num_classes": 5,
            "dim": 12,
            "samples_per_class": 40,
            "spread": 0.3,
            "seed": 3,
        },
    }


@pytest.fixture
def config_path(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(base_doc()))
    return path


class TestConfig:
    def test_loads(self, config_path):
        config = load_config(config_path)
        assert config.method == "fedcspack"
        assert config.model.total_params == 12 * 16 + 16 + 16 * 5 + 5

    def test_unknown_top_level_key(self):
        doc = base_doc()
        doc["bogus"] = 1
        with pytest.raises(ConfigError, match="unknown keys"):
            config_from_dict(doc)

    def test_unknown_nested_key(self):
        doc = base_doc()
        doc["partition"]["bogus"] = 1
        with pytest.raises(ConfigError, match="unknown keys in partition"):
            config_from_dict(doc)

    def test_clients_partition_mismatch(self):
        doc = base_doc()
        doc["clients"] = 7
        with pytest.raises(ConfigError, match="num_clients"):
            config_from_dict(doc)

    def test_overrides(self):
        doc = apply_overrides(base_doc(), ["method=fedavg", "partition.alpha=1.5", "rounds=2"])
        config = config_from_dict(doc)
        assert config.method == "fedavg"
        assert config.partition.alpha == 1.5
        assert config.rounds == 2

    def test_bad_override_path(self):
        with pytest.raises(ConfigError, match="not found"):
            apply_overrides(base_doc(), ["nope.deep=1"])


class TestRunCommand:
    def test_outputs(self, config_path, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["run", "--config", str(config_path), "--out", str(out)]) == 0
        assert (out / "metrics.csv").exists()
        assert (out / "run.json").exists()
        assert (out / "acc_vs_round.csv").exists()
        with open(out / "metrics.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == [
            "round",
            "method",
            "global_acc",
            "personalized_acc",
            "bytes_up",
            "bytes_down",
            "wall_ms",
            "participants",
            "violations",
        ]
        assert len(rows) == 4
        doc = json.loads((out / "run.json").read_text())
        assert doc["config"]["method"] == "fedcspack"
        assert len(doc["rounds"]) == 3
        assert "final_global_acc" in capsys.readouterr().out

    def test_override_flag(self, config_path, tmp_path):
        out = tmp_path / "out2"
        main(
            [
                "run",
                "--config",
                str(config_path),
                "--override",
                "method=fedavg",
                "--out",
                str(out),
            ]
        )
        doc = json.loads((out / "run.json").read_text())
        assert doc["config"]["method"] == "fedavg"


class TestPartitionReport:
    def test_prints_histograms(self, config_path, capsys):
        assert main(["partition-report", "--config", str(config_path)]) == 0
        out = capsys.readouterr().out
        lines = [l for l in out.splitlines() if l and l[0].isspace() or l[:1].isdigit() or l.startswith(" ")]
        # one line per client after the two header lines
        assert len(out.splitlines()) == 2 + 6


class TestSweep:
    def test_grid(self, config_path, tmp_path):
        out = tmp_path / "sweep"
        assert (
            main(
                [
                    "sweep",
                    "--config",
                    str(config_path),
                    "--grid",
                    "cpr=0.5,1.0",
                    "--out",
                    str(out),
                ]
            )
            == 0
        )
        with open(out / "sweep_summary.csv") as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert (out / "cell_000" / "metrics.csv").exists()
        assert (out / "cell_001" / "metrics.csv").exists()
