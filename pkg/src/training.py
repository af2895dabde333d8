"""
Training module for orojar-lab
Alternating discriminator / generator updates with the non-saturating logistic loss and
an optional disentanglement penalty on the generator
"""
import csv
import logging
import queue
import threading
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from .checkpoint import Checkpoint, restore_module, restore_optimizer, save_checkpoint
from .config import ConfigurationError, ExperimentConfig, PenaltyConfig
from .data_factory import FactorDataset
from .imaging import save_png, tile_grid
from .models import Discriminator, Generator, build_models
from .nn import Module, frozen
from .optim import Adam
from .regularizers import penalty_terms
from .sefa import coordinate_traversal
from .tensor import Tensor, no_grad, softplus
from .utils import arrays_sha256

logger = logging.getLogger(__name__)

# independent rng streams derived as SeedSequence([seed, stream, step])
DATA_STREAM = 1
LATENT_STREAM = 2
PENALTY_STREAM = 3
PROBE_STREAM = 4
ARCHITECTURE_KEYS = ("latent_dim", "resolution", "base_channels", "tap_count", "leaky_slope")


class TrainingDivergedError(RuntimeError):
    """Exception for non-finite losses; carries a diagnostic snapshot"""

    def __init__(self, message: str, snapshot: Dict[str, Any]):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainRecord:
    step: int
    d_loss: float
    g_adv_loss: float
    penalty: List[float]
    d_grad_norm: float
    g_grad_norm: float

    def to_row(self) -> List[Any]:
        return [self.step, self.d_loss, self.g_adv_loss, *self.penalty, self.d_grad_norm, self.g_grad_norm]


@dataclass
class TrainLog:
    """One record per completed iteration"""
    layers: List[int]
    records: List[TrainRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def header(self) -> List[str]:
        return ["step", "d_loss", "g_adv_loss", *[f"penalty_l{layer}" for layer in self.layers],
                "d_grad_norm", "g_grad_norm"]

    def append(self, record: TrainRecord) -> None:
        self.records.append(record)

    def to_dicts(self) -> List[Dict[str, Any]]:
        return [asdict(record) for record in self.records]


def _check_finite(name: str, value: float, snapshot: Dict[str, Any]) -> None:
    if not np.isfinite(value):
        snapshot = {**snapshot, name: value}
        logger.error(f"{name} is not finite: {snapshot}")
        raise TrainingDivergedError(f"{name} became {value}", snapshot)


def _batch_tensor(array: np.ndarray, dtype) -> Tensor:
    return Tensor(array, dtype=dtype)


def _dtype_of(module: Module):
    params = module.parameters()
    return params[0].dtype if params else None


def d_step(d: Discriminator, g: Generator, optimizer: Adam, real: np.ndarray, z: np.ndarray) -> float:
    """One discriminator update: softplus(−D(x)) + softplus(D(G(z))), generator untouched"""
    if len(real) == 0 or len(z) == 0:
        raise ValueError("Zero-size batch")
    if len(real) != len(z):
        raise ValueError(f"Real batch ({len(real)}) and latent batch ({len(z)}) differ in size")
    dtype = _dtype_of(d)
    with no_grad():
        fake = g.forward_with_taps(_batch_tensor(z, dtype)).image.detach()

    real_logits = d(_batch_tensor(real, dtype))
    fake_logits = d(fake)
    loss = softplus(-real_logits).mean() + softplus(fake_logits).mean()
    _check_finite("d_loss", loss.item(), {"real_logit_mean": float(real_logits.data.mean()),
                                          "fake_logit_mean": float(fake_logits.data.mean())})

    optimizer.zero_grad()
    loss.backward()
    optimizer.step()
    return loss.item()


def g_step(
    g: Generator,
    d: Discriminator,
    optimizer: Adam,
    z: np.ndarray,
    config: PenaltyConfig,
    rng: np.random.Generator,
) -> Tuple[float, List[float]]:
    """One generator update on softplus(−D(G(z))) + λ·penalty, discriminator untouched.

    A zero λ or penalty kind "none" skips the penalty entirely (no rng draws, zeros logged).
    """
    if len(z) == 0:
        raise ValueError("Zero-size batch")
    with frozen(d):
        z_tensor = _batch_tensor(z, _dtype_of(g))
        out = g.forward_with_taps(z_tensor)
        adversarial = softplus(-d(out.image)).mean()
        total = adversarial
        penalties = [0.0] * len(config.layers)
        if config.active:
            terms = penalty_terms(g, z_tensor, config, rng=rng, base=out)
            total = adversarial + sum(terms[1:], terms[0]) * config.lam
            penalties = [term.item() for term in terms]

        _check_finite("g_loss", total.item(), {"g_adv_loss": adversarial.item(), "penalty": penalties})
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
    return adversarial.item(), penalties


class BatchPrefetcher:
    """Renders the real batch for each upcoming step on a worker thread.

    Batch contents depend only on (seed, step), and steps are consumed strictly in order.
    """

    _DONE = object()

    def __init__(self, dataset: FactorDataset, seed: int, batch_size: int, start: int, stop: int, depth: int = 4):
        self.dataset = dataset
        self.seed = seed
        self.batch_size = batch_size
        self.queue: "queue.Queue" = queue.Queue(maxsize=max(1, depth))
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._produce, args=(start, stop), daemon=True)
        self._thread.start()

    def batch_for(self, step: int) -> np.ndarray:
        rng = np.random.default_rng([self.seed, DATA_STREAM, step])
        return self.dataset.batch(rng.integers(0, len(self.dataset), size=self.batch_size))

    def _produce(self, start: int, stop: int) -> None:
        for step in range(start, stop):
            if self._stop.is_set():
                return
            self.queue.put((step, self.batch_for(step)))
        self.queue.put(self._DONE)

    def get(self, step: int) -> np.ndarray:
        item = self.queue.get()
        if item is self._DONE or item[0] != step:
            raise RuntimeError(f"Prefetcher out of sync at step {step}")
        return item[1]

    def close(self) -> None:
        self._stop.set()
        while self._thread.is_alive():
            try:
                self.queue.get_nowait()
            except queue.Empty:
                self._thread.join(timeout=0.05)


def architecture_record(config: ExperimentConfig) -> Dict[str, Any]:
    """Generator settings stored beside the weights so later commands rebuild the same network"""
    model = asdict(config.model)
    return {
        "model": {key: model[key] for key in ARCHITECTURE_KEYS},
        "first_layer_mode": config.train.first_layer_mode,
    }


def check_architecture(checkpoint: Checkpoint, config: ExperimentConfig) -> None:
    """Raise ConfigurationError when the checkpoint was written for a different generator"""
    expected = architecture_record(config)
    problems = []
    for key, value in checkpoint.rng_state.get("model", {}).items():
        if key in expected["model"] and expected["model"][key] != value:
            problems.append(f"model.{key}={value!r} (configured {expected['model'][key]!r})")
    mode = checkpoint.rng_state.get("first_layer_mode")
    if mode is not None and mode != expected["first_layer_mode"]:
        problems.append(f"train.first_layer_mode={mode!r} (configured {expected['first_layer_mode']!r})")
    if problems:
        raise ConfigurationError("Checkpoint was trained with " + "; ".join(problems))

class Trainer:
    """Owns both networks, their optimizers and the step counter"""

    def __init__(self, config: ExperimentConfig, dataset: FactorDataset, checkpoint: Optional[Checkpoint] = None):
        if len(dataset) == 0:
            raise ValueError("Training dataset is empty")
        self.config = config
        self.dataset = dataset
        self.g, self.d = build_models(config)
        betas = tuple(config.train.betas)
        self.opt_g = Adam(self.g.named_parameters(), lr=config.train.g_lr, betas=betas)
        self.opt_d = Adam(self.d.named_parameters(), lr=config.train.d_lr, betas=betas)
        self.step = 0
        self.log = TrainLog(list(config.penalty.layers))
        if checkpoint is not None:
            self.restore(checkpoint)

    def restore(self, checkpoint: Checkpoint) -> None:
        check_architecture(checkpoint, self.config)
        restore_module(self.g, checkpoint, "generator")
        restore_module(self.d, checkpoint, "discriminator")
        restore_optimizer(self.opt_g, checkpoint, "optim_g")
        restore_optimizer(self.opt_d, checkpoint, "optim_d")
        if (seed := checkpoint.rng_state.get("seed")) is not None and seed != self.config.seed:
            logger.warning(f"Checkpoint was trained with seed {seed}, resuming with seed {self.config.seed}")
        self.step = int(checkpoint.step)
        logger.info(f"Resumed training at step {self.step}")

    def checkpoint(self) -> Checkpoint:
        ckpt = Checkpoint(
            rng_state={"seed": self.config.seed, "streams": {
                "data": DATA_STREAM, "latent": LATENT_STREAM, "penalty": PENALTY_STREAM},
                **architecture_record(self.config)},
            step=self.step,
        )
        ckpt.add_section("generator", self.g.state_dict())
        ckpt.add_section("discriminator", self.d.state_dict())
        ckpt.add_section("optim_g", self.opt_g.state_dict())
        ckpt.add_section("optim_d", self.opt_d.state_dict())
        return ckpt

    def parameter_checksums(self) -> Dict[str, str]:
        return {
            "generator": arrays_sha256(p.data for p in self.g.parameters()),
            "discriminator": arrays_sha256(p.data for p in self.d.parameters()),
        }

    def step_rngs(self, step: int) -> Tuple[np.random.Generator, np.random.Generator]:
        latent = np.random.default_rng([self.config.seed, LATENT_STREAM, step])
        penalty = np.random.default_rng([self.config.seed, PENALTY_STREAM, step])
        return latent, penalty

    def train_step(self, step: int, real: np.ndarray) -> TrainRecord:
        m = self.config.model.latent_dim
        batch = self.config.train.batch_size
        latent_rng, penalty_rng = self.step_rngs(step)
        z_d = latent_rng.standard_normal((batch, m))
        z_g = latent_rng.standard_normal((batch, m))

        d_loss = d_step(self.d, self.g, self.opt_d, real, z_d)
        g_adv, penalties = g_step(self.g, self.d, self.opt_g, z_g, self.config.penalty, penalty_rng)
        return TrainRecord(step + 1, d_loss, g_adv, penalties, self.opt_d.last_grad_norm, self.opt_g.last_grad_norm)

    def run(self, iters: Optional[int] = None, out_dir: Optional[Path] = None, progress: bool = True) -> TrainLog:
        """Train until `iters` completed steps (default: config.train.iters)"""
        stop = iters if iters is not None else self.config.train.iters
        train_cfg = self.config.train
        writer = _CsvStream(out_dir / "train_log.csv", self.log.header, append=self.step > 0) if out_dir else None
        prefetcher = BatchPrefetcher(self.dataset, self.config.seed, train_cfg.batch_size,
                                     self.step, stop, train_cfg.prefetch)
        try:
            for step in tqdm(range(self.step, stop), desc="train", disable=not progress,
                             initial=self.step, total=stop):
                record = self.train_step(step, prefetcher.get(step))
                self.log.append(record)
                self.step = step + 1
                if writer:
                    writer.write(record.to_row())
                if self.step % train_cfg.log_every == 0:
                    logger.info(
                        f"step {self.step}: d_loss {record.d_loss:.4f} g_adv {record.g_adv_loss:.4f} "
                        f"penalty {[round(p, 6) for p in record.penalty]}"
                    )
                if out_dir and train_cfg.eval_every and self.step % train_cfg.eval_every == 0:
                    self.save_traversal(out_dir / "grids" / f"step_{self.step:06d}.png")
                if out_dir and train_cfg.checkpoint_every and self.step % train_cfg.checkpoint_every == 0:
                    save_checkpoint(out_dir / "checkpoints" / f"step_{self.step:06d}.dgan", self.checkpoint())
        finally:
            prefetcher.close()
            if writer:
                writer.close()
        return self.log

    def save_traversal(self, path: Path) -> Path:
        """Coordinate traversal grid at a fixed probe latent"""
        probe = np.random.default_rng([self.config.seed, PROBE_STREAM]).standard_normal(self.config.model.latent_dim)
        grid = coordinate_traversal(self.g, probe, self.config.traverse.value_range, self.config.traverse.steps)
        return save_png(path, tile_grid(grid[:, :, 0]))


class _CsvStream:
    """Line-buffered CSV log written as training progresses"""

    def __init__(self, path: Path, header: List[str], append: bool = False):
        path.parent.mkdir(parents=True, exist_ok=True)
        fresh = not append or not path.exists()
        self.handle = path.open("w" if fresh else "a", newline="")
        self.writer = csv.writer(self.handle, lineterminator="\n")
        if fresh:
            self.writer.writerow(header)

    def write(self, row: List[Any]) -> None:
        self.writer.writerow(row)
        self.handle.flush()

    def close(self) -> None:
        self.handle.close()


def train(
    config: ExperimentConfig,
    dataset: FactorDataset,
    resume_from: Optional[Checkpoint] = None,
    out_dir: Optional[Path] = None,
    progress: bool = True,
) -> Tuple[Checkpoint, TrainLog]:
    """Run the configured number of iterations and return the final checkpoint and log"""
    trainer = Trainer(config, dataset, resume_from)
    log = trainer.run(out_dir=out_dir, progress=progress)
    return trainer.checkpoint(), log
