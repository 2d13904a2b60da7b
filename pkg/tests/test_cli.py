import json

import numpy as np
import pytest

from dtlight.cli import EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, main
from dtlight.config import TrainConfig

FAST = [
    "--set", "scenario=single-2lane",
    "--set", "rate_preset=0",
    "--set", "episodes=2",
    "--set", "batch_size=8",
    "--set", "context_length=4",
    "--set", "teacher_layers=1",
    "--set", "teacher_heads=1",
    "--set", "teacher_d_model=16",
    "--set", "student_layers=1",
    "--set", "student_heads=1",
    "--set", "student_d_model=16",
    "--set", "adapter_bottleneck=4",
    "--set", "dropout=0.0",
    "--set", "teacher_updates=3",
    "--set", "student_updates=3",
    "--set", "warmup_steps=2",
    "--set", "buffer_capacity=2",
    "--set", "finetune_episodes=1",
    "--set", "finetune_updates_per_episode=2",
    "--set", "eval_seeds=2",
]


def run(tmp_path, *argv):
    return main(["--out", str(tmp_path)] + FAST + list(argv))


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig.from_dict({"not_a_key": 1})

    def test_override_typing(self):
        cfg = TrainConfig().with_overrides(["batch_size=32", "lr=0.01"])
        assert cfg.batch_size == 32 and isinstance(cfg.batch_size, int)
        assert cfg.lr == pytest.approx(0.01)

    def test_bad_override_format(self):
        with pytest.raises(ValueError):
            TrainConfig().with_overrides(["batch_size"])

    def test_yaml_round_trip(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("batch_size: 64\nscenario: single-2lane\n")
        cfg = TrainConfig.from_file(p)
        assert cfg.batch_size == 64 and cfg.scenario == "single-2lane"

    def test_yaml_unknown_key(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("nope: 1\n")
        with pytest.raises(ValueError):
            TrainConfig.from_file(p)


class TestExitCodes:
    def test_usage_error_is_1(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["--out", str(tmp_path), "not-a-command"])
        assert exc.value.code == EXIT_USAGE

    def test_missing_dataset_is_2(self, tmp_path):
        assert run(tmp_path, "train-teacher") == EXIT_RUNTIME

    def test_bad_override_is_2(self, tmp_path):
        assert main(["--out", str(tmp_path), "--set", "nope=1",
                     "gen-data"]) == EXIT_RUNTIME

    def test_unknown_eval_method_is_1(self, tmp_path):
        assert run(tmp_path, "eval", "dqn") == EXIT_USAGE

    def test_report_without_evals_is_2(self, tmp_path):
        assert main(["--out", str(tmp_path), "report"]) == EXIT_RUNTIME


class TestGenData:
    def test_writes_dataset(self, tmp_path):
        assert run(tmp_path, "gen-data") == EXIT_OK
        path = tmp_path / "data" / "single-2lane_emp_i0.json"
        assert path.exists()
        doc = json.loads(path.read_text())
        assert len(doc["episodes"]) == 2

    def test_deterministic_bytes(self, tmp_path):
        assert run(tmp_path / "a", "gen-data") == EXIT_OK
        assert run(tmp_path / "b", "gen-data") == EXIT_OK
        fa = (tmp_path / "a" / "data" / "single-2lane_emp_i0.json").read_bytes()
        fb = (tmp_path / "b" / "data" / "single-2lane_emp_i0.json").read_bytes()
        assert fa == fb


class TestPipeline:
    def test_end_to_end(self, tmp_path, capsys):
        assert run(tmp_path, "gen-data") == EXIT_OK
        assert run(tmp_path, "train-teacher") == EXIT_OK
        assert (tmp_path / "teacher_i0.json").exists()
        assert (tmp_path / "teacher_i0.bin").exists()
        assert run(tmp_path, "distill") == EXIT_OK
        assert (tmp_path / "student_i0.json").exists()
        assert run(tmp_path, "finetune") == EXIT_OK
        assert (tmp_path / "finetuned_i0.json").exists()
        for method in ("emp", "fixed_time", "student", "finetuned"):
            assert run(tmp_path, "eval", method) == EXIT_OK
        evals = sorted(p.name for p in tmp_path.glob("eval_*.json"))
        assert evals == [
            "eval_dtlight-finetuned.json", "eval_dtlight-student.json",
            "eval_emp.json", "eval_fixed_time.json",
        ]
        doc = json.loads((tmp_path / "eval_emp.json").read_text())
        assert len(doc["delays"]) == 2 and doc["mean_delay"] > 0
        assert run(tmp_path, "report") == EXIT_OK
        assert (tmp_path / "report.csv").exists()
        assert (tmp_path / "report.txt").exists()
        text = (tmp_path / "report.txt").read_text()
        assert "emp" in text and "single-2lane" in text

    def test_checkpoint_embeds_provenance(self, tmp_path):
        assert run(tmp_path, "gen-data") == EXIT_OK
        assert run(tmp_path, "train-teacher") == EXIT_OK
        doc = json.loads((tmp_path / "teacher_i0.json").read_text())
        extra = doc["extra"]
        assert extra["phase"] == "teacher"
        data_path = str(tmp_path / "data" / "single-2lane_emp_i0.json")
        assert data_path in extra["inputs"]
        assert len(extra["inputs"][data_path]) == 64  # sha256 hex


class TestReportMath:
    def test_improvement_formula(self, tmp_path):
        # behavior baseline 33.3 vs method 18.0 -> 45.9% improvement
        for method, delay in (("emp", 33.3), ("dtlight-finetuned", 18.0)):
            doc = {
                "scenario": "s", "method": method, "seeds": [0],
                "delays": [delay], "returns": [0.0],
                "mean_delay": delay, "std_delay": 0.0,
                "mean_return": 0.0, "std_return": 0.0,
                "param_total": 0, "param_trainable": 0,
                "wall_clock_s": 0.0, "config": {},
            }
            (tmp_path / f"eval_{method}.json").write_text(json.dumps(doc))
        assert main(["--out", str(tmp_path), "report"]) == EXIT_OK
        rows = (tmp_path / "report.csv").read_text().splitlines()
        target = next(r for r in rows if r.startswith("dtlight-finetuned"))
        improvement = float(target.split(",")[-1])
        assert improvement == pytest.approx(100 * (33.3 - 18.0) / 33.3, abs=0.05)
