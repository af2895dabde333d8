"""
Commands module for orojar-lab
Dispatches CLI subcommands and maps failures to exit codes
"""
import json
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Dict, Optional, TextIO, Tuple

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, restore_module, save_checkpoint
from .config import ConfigurationError, ExperimentConfig
from .data_factory import FactorDataset, make_dataset, read_dataset, write_contact_sheet, write_dataset
from .discovery import discover, edit
from .imaging import save_png, save_strip, tile_grid
from .metrics import evaluate, generate
from .models import Generator, build_models
from .sefa import coordinate_traversal, sefa_directions, traverse_direction, verify_proposition
from .training import Trainer, check_architecture
from .utils import atomic_write_text, file_sha256, write_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_INPUT = 3
EXIT_RUNTIME = 4

CATEGORY_CODES = {
    "config": EXIT_CONFIG,
    "missing_input": EXIT_MISSING_INPUT,
    "runtime": EXIT_RUNTIME,
}

CHECKPOINT_NAME = "checkpoint_latest.dgan"
DATASET_NAME = "dataset.dfac"


def classify_error(error: BaseException) -> str:
    """Error category for an exception raised by a command"""
    match error:
        case ConfigurationError():
            return "config"
        case FileNotFoundError():
            return "missing_input"
        case _:
            return "runtime"


def format_error_line(category: str, message: str) -> str:
    """Single machine-parsable line, e.g. `error: category=config message=...`"""
    flat = " ".join(str(message).split())
    return f"error: category={category} message={flat}"


def report_error(error: BaseException, stream: Optional[TextIO] = None) -> int:
    category = classify_error(error)
    print(format_error_line(category, error), file=stream or sys.stderr)
    return CATEGORY_CODES[category]


class CommandHandler:
    """Runs one subcommand against a resolved experiment config"""

    def __init__(self, config: ExperimentConfig, config_path: Optional[Path] = None, progress: bool = True):
        self.config = config
        self.config_path = config_path
        self.progress = progress
        self.inputs: Dict[str, Path] = {}
        self._command_handlers = self._setup_command_handlers()

    def _setup_command_handlers(self) -> Dict[str, Callable[[Path], None]]:
        """Setup mapping of commands to handlers"""
        return {
            "make-data": self.handle_make_data,
            "train": self.handle_train,
            "sefa": self.handle_sefa,
            "discover": self.handle_discover,
            "eval": self.handle_eval,
            "traverse": self.handle_traverse,
        }

    @property
    def commands(self) -> Tuple[str, ...]:
        return tuple(self._command_handlers)

    def handle(self, command: str, stream: Optional[TextIO] = None) -> int:
        """Run a command; returns the process exit code"""
        if (handler := self._command_handlers.get(command)) is None:
            return report_error(ConfigurationError(f"Unknown command: {command}"), stream)
        out_dir = self.config.output_path() / command
        self.inputs = {}
        try:
            handler(out_dir)
            self._write_manifest(out_dir, command)
        except Exception as e:
            logger.error(f"Command {command} failed: {e}", exc_info=logger.isEnabledFor(logging.DEBUG))
            return report_error(e, stream)
        logger.info(f"Command {command} finished; artifacts in {out_dir}")
        return EXIT_OK

    # ------------------------------------------------------------------
    # Shared inputs

    def _run_dir(self, command: str) -> Path:
        return self.config.output_path() / command

    def _checkpoint_path(self) -> Path:
        if self.config.checkpoint:
            return Path(self.config.checkpoint)
        return self._run_dir("train") / CHECKPOINT_NAME

    def _load_generator(self) -> Generator:
        path = self._checkpoint_path()
        if not path.exists():
            raise FileNotFoundError(f"No generator checkpoint at {path}; run `train` first or set checkpoint=")
        self.inputs["checkpoint"] = path
        checkpoint = load_checkpoint(path)
        check_architecture(checkpoint, self.config)
        generator, _ = build_models(self.config)
        restore_module(generator, checkpoint, "generator")
        generator.eval()
        return generator

    def _load_dataset(self) -> FactorDataset:
        data = self.config.data
        if data.dataset_path:
            path = Path(data.dataset_path)
            self.inputs["dataset"] = path
            dataset = read_dataset(path)
            if dataset.resolution != self.config.model.resolution:
                raise ConfigurationError(
                    f"Dataset resolution {dataset.resolution} differs from model.resolution {self.config.model.resolution}"
                )
            return dataset
        return make_dataset(data.seed, data.count, data.resolution, data.workers)

    def _probe_latent(self) -> np.ndarray:
        return np.random.default_rng([self.config.seed, 99]).standard_normal(self.config.model.latent_dim)

    def _write_manifest(self, out_dir: Path, command: str) -> None:
        """Resolved config, seed, tool version and input checksums next to the artifacts"""
        manifest: Dict[str, Any] = {
            "tool": "orojar-lab",
            "version": __version__,
            "command": command,
            "seed": self.config.seed,
            "config": self.config.to_dict(),
            "inputs": {name: {"path": str(path), "sha256": file_sha256(path)} for name, path in self.inputs.items()},
        }
        if self.config_path is not None:
            manifest["config_file"] = {"path": str(self.config_path), "sha256": file_sha256(self.config_path)}
        atomic_write_text(out_dir / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        atomic_write_text(out_dir / "resolved_config.json", json.dumps(self.config.to_dict(), indent=2))

    # ------------------------------------------------------------------
    # Commands

    def handle_make_data(self, out_dir: Path) -> None:
        data = self.config.data
        dataset = make_dataset(data.seed, data.count, data.resolution, data.workers)
        write_dataset(out_dir / DATASET_NAME, dataset)
        write_contact_sheet(out_dir / "contact_sheet.png", dataset, data.contact_sheet_count)

    def handle_train(self, out_dir: Path) -> None:
        dataset = self._load_dataset()
        resume = None
        if self.config.checkpoint:
            path = Path(self.config.checkpoint)
            if not path.exists():
                raise FileNotFoundError(f"Checkpoint to resume from not found: {path}")
            self.inputs["checkpoint"] = path
            resume = load_checkpoint(path)
        trainer = Trainer(self.config, dataset, resume)
        trainer.run(out_dir=out_dir, progress=self.progress)
        save_checkpoint(out_dir / CHECKPOINT_NAME, trainer.checkpoint())
        save_png(out_dir / "samples.png", self._sample_sheet(trainer.g))

    def _sample_sheet(self, g: Generator) -> np.ndarray:
        latents = np.random.default_rng([self.config.seed, 98]).standard_normal((64, self.config.model.latent_dim))
        images = generate(g, latents)[:, 0]
        return tile_grid(images.reshape(8, 8, *images.shape[1:]))

    def handle_sefa(self, out_dir: Path) -> None:
        g = self._load_generator()
        factorization = sefa_directions(g)
        top_k = self.config.traverse.sefa_top_k
        directions = factorization.top(top_k)
        write_csv(
            out_dir / "directions.csv",
            [f"{value:.10g}" for value in factorization.singular_values[:directions.shape[1]]],
            directions.tolist(),
        )
        probe = np.random.default_rng([self.config.seed, 97]).standard_normal((100, g.latent_dim))
        report = verify_proposition(g, probe, factorization)
        atomic_write_text(out_dir / "proposition.json", json.dumps(report.to_dict(), indent=2))
        z = self._probe_latent()
        lo, hi = self.config.discovery.traverse_range
        for index in range(directions.shape[1]):
            frames = traverse_direction(g, z, directions[:, index], (lo, hi), self.config.discovery.traverse_steps)
            save_strip(out_dir / "strips" / f"direction_{index:02d}.png", frames)

    def handle_discover(self, out_dir: Path) -> None:
        g = self._load_generator()
        cfg = self.config.discovery
        rng = np.random.default_rng([self.config.seed, 96])
        result = discover(g, self.config.penalty, cfg.iters, rng, cfg.n_directions, cfg.eta, cfg.lr,
                          cfg.batch_size, progress=self.progress)
        write_csv(out_dir / "directions.csv", [f"direction_{i}" for i in range(result.n_directions)],
                  result.A.tolist())
        write_csv(out_dir / "penalty_history.csv", ["step", "penalty"], enumerate(result.penalty_history, start=1))
        z = self._probe_latent()
        values = np.linspace(cfg.traverse_range[0], cfg.traverse_range[1], cfg.traverse_steps)
        for index in range(result.n_directions):
            frames = np.concatenate([edit(g, z, result, index, eta) for eta in values])
            save_strip(out_dir / "strips" / f"direction_{index:02d}.png", frames)

    def handle_eval(self, out_dir: Path) -> None:
        g = self._load_generator()
        report = evaluate(g, self.config.metrics, self.config.penalty, self.config.seed,
                          tuple(self.config.traverse.value_range), progress=self.progress)
        atomic_write_text(out_dir / "report.json", json.dumps(report.to_dict(), indent=2))
        write_csv(out_dir / "report.csv", ["metric", "value"], report.summary_rows())
        write_csv(out_dir / "activeness.csv", ["dimension", "activeness", "rank"],
                  [(i, score, report.activeness_ranking.index(i) + 1) for i, score in enumerate(report.activeness)])

    def handle_traverse(self, out_dir: Path) -> None:
        g = self._load_generator()
        cfg = self.config.traverse
        grid = coordinate_traversal(g, self._probe_latent(), cfg.value_range, cfg.steps)
        save_png(out_dir / "traversal.png", tile_grid(grid[:, :, 0]))
