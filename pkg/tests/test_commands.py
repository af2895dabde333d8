"""
Unit tests for commands module and the orojar_lab entry point
"""
import io
import json

import pytest

from orojar_lab import build_parser, main
from src.checkpoint import load_checkpoint
from src.commands import (
    CHECKPOINT_NAME,
    EXIT_CONFIG,
    EXIT_MISSING_INPUT,
    EXIT_OK,
    CommandHandler,
    classify_error,
    format_error_line,
    report_error,
)
from src.config import ConfigurationError, build_config
from src.data_factory import read_dataset

TINY = {
    "seed": 3,
    "model": {"latent_dim": 3, "resolution": 8, "base_channels": 8, "tap_count": 2},
    "data": {"resolution": 8, "count": 16},
    "penalty": {"layers": [1, 2]},
    "train": {"iters": 2, "batch_size": 4, "eval_every": 0, "checkpoint_every": 0},
    "discovery": {"iters": 2, "batch_size": 4, "traverse_steps": 3},
    "metrics": {"vp_pairs": 1000, "vp_epochs": 1, "vp_repeats": 1, "ppl_paths": 20, "probe_batch": 4},
    "traverse": {"steps": 3},
}

TINY_OVERRIDES = [
    "model.latent_dim=3", "model.resolution=8", "model.base_channels=8", "model.tap_count=2",
    "data.resolution=8", "data.count=16", "penalty.layers=[1,2]",
    "train.iters=2", "train.batch_size=4", "train.eval_every=0", "train.checkpoint_every=0",
]


def tiny_config(output_dir, **top_level):
    return build_config({**TINY, "output_dir": str(output_dir), **top_level})


class TestErrorReporting:
    """Test cases for exit codes and error lines"""

    def test_error_line_is_single_line(self):
        """Test the machine-parsable format"""
        line = format_error_line("config", "bad value\n  for penalty.kind")

        assert line == "error: category=config message=bad value for penalty.kind"

    def test_classification(self):
        """Test categories for the three failure kinds"""
        assert classify_error(ConfigurationError("x")) == "config"
        assert classify_error(FileNotFoundError("x")) == "missing_input"
        assert classify_error(RuntimeError("x")) == "runtime"

    def test_report_error_returns_code(self):
        """Test that reporting prints one line and returns the exit code"""
        stream = io.StringIO()

        assert report_error(FileNotFoundError("no checkpoint"), stream) == EXIT_MISSING_INPUT
        assert stream.getvalue() == "error: category=missing_input message=no checkpoint\n"

    def test_unknown_command(self, tmp_path):
        """Test that the handler rejects commands it does not know"""
        stream = io.StringIO()
        handler = CommandHandler(tiny_config(tmp_path), progress=False)

        assert handler.handle("fit", stream) == EXIT_CONFIG
        assert "Unknown command: fit" in stream.getvalue()
        assert handler.commands == ("make-data", "train", "sefa", "discover", "eval", "traverse")


class TestMain:
    """Test cases for the command line entry point"""

    def test_unknown_key_exits_with_config_code(self, tmp_path, capsys):
        """Test that a misspelled key is a configuration error"""
        code = main(["train", "penalty.lamda=10", f"output_dir={tmp_path}"])

        assert code == 2
        assert "error: category=config" in capsys.readouterr().err

    def test_eval_without_checkpoint(self, tmp_path, capsys):
        """Test that evaluating before training is a missing input"""
        code = main(["eval", f"output_dir={tmp_path}"])

        assert code == 3
        assert "category=missing_input" in capsys.readouterr().err
        assert not (tmp_path / "eval" / "manifest.json").exists()

    def test_missing_config_file(self, tmp_path):
        """Test that a missing --config path is a missing input"""
        assert main(["train", "--config", str(tmp_path / "absent.toml")]) == 3

    def test_invalid_command_rejected_by_parser(self):
        """Test that argparse refuses unknown subcommands"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["fit"])

    def test_make_data(self, tmp_path):
        """Test dataset, contact sheet and manifest outputs"""
        code = main(["make-data", "--log-level", "WARNING", f"output_dir={tmp_path}",
                     "data.count=8", "data.seed=4"])

        out = tmp_path / "make-data"
        assert code == 0
        assert len(read_dataset(out / "dataset.dfac")) == 8
        assert (out / "contact_sheet.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "make-data"
        assert manifest["config"]["data"]["seed"] == 4
        assert manifest["config"]["penalty"]["lambda"] == 10.0

    def test_train_then_traverse(self, tmp_path):
        """Test a tiny training run followed by a traversal grid"""
        overrides = [f"output_dir={tmp_path}", *TINY_OVERRIDES]

        assert main(["train", "--log-level", "WARNING", *overrides]) == 0
        assert main(["traverse", "--log-level", "WARNING", *overrides]) == 0
        assert (tmp_path / "traverse" / "traversal.png").exists()
        manifest = json.loads((tmp_path / "traverse" / "manifest.json").read_text())
        assert manifest["inputs"]["checkpoint"]["path"].endswith(CHECKPOINT_NAME)

    def test_options_between_overrides(self, tmp_path):
        """Test that options may appear before, between and after the overrides"""
        code = main(["make-data", f"output_dir={tmp_path}", "--log-level", "WARNING", "data.count=4",
                     "--config", str(tmp_path / "absent.json")])

        assert code == 3

        assert main(["make-data", f"output_dir={tmp_path}", "--log-level", "WARNING", "data.count=4"]) == 0
        assert len(read_dataset(tmp_path / "make-data" / "dataset.dfac")) == 4

    def test_list_entry_type_exits_with_config_code(self, tmp_path, capsys):
        """Test that a wrongly typed list entry is a configuration error, not a crash"""
        code = main(["train", 'penalty.layers=["a"]', f"output_dir={tmp_path}"])

        assert code == 2
        assert "penalty.layers[0]" in capsys.readouterr().err

    def test_config_file_recorded(self, tmp_path):
        """Test that the config file checksum lands in the manifest"""
        config_file = tmp_path / "experiment.json"
        config_file.write_text(json.dumps({"output_dir": str(tmp_path / "runs"), "data": {"count": 4}}))

        assert main(["make-data", "--config", str(config_file)]) == 0
        manifest = json.loads((tmp_path / "runs" / "make-data" / "manifest.json").read_text())
        assert manifest["config_file"]["path"] == str(config_file)
        assert len(manifest["config_file"]["sha256"]) == 64


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """Output directory holding one tiny trained model"""
    run_dir = tmp_path_factory.mktemp("pipeline")
    assert CommandHandler(tiny_config(run_dir), progress=False).handle("train") == EXIT_OK
    return run_dir


class TestPipeline:
    """Test cases running every command on one tiny model"""

    def test_train_outputs(self, run_dir):
        """Test checkpoint, log and sample sheet"""
        out = run_dir / "train"

        assert load_checkpoint(out / CHECKPOINT_NAME).step == 2
        assert len((out / "train_log.csv").read_text().splitlines()) == 3
        assert (out / "samples.png").exists()
        assert json.loads((out / "resolved_config.json").read_text())["train"]["iters"] == 2

    def test_sefa_outputs(self, run_dir):
        """Test directions, proposition report and strips"""
        assert CommandHandler(tiny_config(run_dir), progress=False).handle("sefa") == EXIT_OK

        out = run_dir / "sefa"
        rows = (out / "directions.csv").read_text().splitlines()
        assert len(rows) == 1 + 3
        report = json.loads((out / "proposition.json").read_text())
        assert report["equivalence_error"] < 1e-3
        assert sorted(p.name for p in (out / "strips").iterdir()) == [
            "direction_00.png", "direction_01.png", "direction_02.png"]

    def test_discover_outputs(self, run_dir):
        """Test direction matrix, penalty history and strips"""
        assert CommandHandler(tiny_config(run_dir), progress=False).handle("discover") == EXIT_OK

        out = run_dir / "discover"
        assert len((out / "penalty_history.csv").read_text().splitlines()) == 1 + 2
        assert len((out / "directions.csv").read_text().splitlines()) == 1 + 3
        assert (out / "strips" / "direction_02.png").exists()

    @pytest.mark.slow
    def test_eval_outputs(self, run_dir):
        """Test the report files"""
        assert CommandHandler(tiny_config(run_dir), progress=False).handle("eval") == EXIT_OK

        out = run_dir / "eval"
        report = json.loads((out / "report.json").read_text())
        assert len(report["activeness"]) == 3
        assert len(report["penalty_per_layer"]) == 2
        assert sorted(report["activeness_ranking"]) == [0, 1, 2]
        assert (out / "activeness.csv").read_text().splitlines()[0] == "dimension,activeness,rank"

    def test_resume_appends_to_log(self, run_dir):
        """Test that training from a checkpoint continues the step count"""
        checkpoint = run_dir / "train" / CHECKPOINT_NAME
        resumed = tiny_config(run_dir / "resumed", checkpoint=str(checkpoint))
        resumed.train.iters = 4

        assert CommandHandler(resumed, progress=False).handle("train") == EXIT_OK
        out = run_dir / "resumed" / "train"
        assert load_checkpoint(out / CHECKPOINT_NAME).step == 4
        lines = (out / "train_log.csv").read_text().splitlines()
        assert [line.split(",")[0] for line in lines[1:]] == ["3", "4"]

    def test_missing_resume_checkpoint(self, run_dir):
        """Test that a checkpoint path that does not exist is a missing input"""
        config = tiny_config(run_dir / "other", checkpoint=str(run_dir / "absent.dgan"))

        assert CommandHandler(config, progress=False).handle("train", io.StringIO()) == EXIT_MISSING_INPUT

    def test_discover_without_penalty_kind(self, run_dir):
        """Test that discovery with penalty kind none is a configuration error"""
        config = tiny_config(run_dir)
        config.penalty.kind = "none"

        assert CommandHandler(config, progress=False).handle("discover", io.StringIO()) == EXIT_CONFIG

    def test_sefa_with_other_first_layer_mode(self, run_dir):
        """Test that loading a generator under a different first-layer mode is a configuration error"""
        config = tiny_config(run_dir)
        config.train.first_layer_mode = "bare"
        stream = io.StringIO()

        assert CommandHandler(config, progress=False).handle("sefa", stream) == EXIT_CONFIG
        assert "first_layer_mode" in stream.getvalue()

    def test_sefa_with_other_model_width(self, run_dir):
        """Test that a checkpoint for another architecture is reported as a configuration error"""
        config = tiny_config(run_dir)
        config.model.base_channels = 16

        assert CommandHandler(config, progress=False).handle("sefa", io.StringIO()) == EXIT_CONFIG
