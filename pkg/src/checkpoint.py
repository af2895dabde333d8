"""
Checkpoint module for orojar-lab
DGAN1 binary format for named tensors, rng state and step counter
"""
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np

from .nn import Module
from .optim import Adam
from .utils import atomic_write_bytes

logger = logging.getLogger(__name__)

MAGIC = b"DGAN1"
FORMAT_VERSION = 1

DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
TAG_FOR_KIND = {(dtype.kind, dtype.itemsize): tag for tag, dtype in DTYPE_TAGS.items()}

_U8 = struct.Struct("<B")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


class CheckpointError(Exception):
    """Base exception for checkpoint errors"""
    pass


class CheckpointFormatError(CheckpointError):
    """Exception for files that are not DGAN1 checkpoints"""
    pass


class CheckpointVersionError(CheckpointError):
    """Exception for checkpoints written by an unsupported format version"""
    pass


class CheckpointTruncatedError(CheckpointError):
    """Exception for checkpoints that end before their declared contents"""
    pass


class ParameterMismatchError(CheckpointError):
    """Exception for checkpoint tensors that do not fit the target module"""
    pass


@dataclass
class Checkpoint:
    tensors: Dict[str, np.ndarray] = field(default_factory=dict)
    rng_state: Dict[str, Any] = field(default_factory=dict)
    step: int = 0
    version: int = FORMAT_VERSION

    def section(self, prefix: str) -> Dict[str, np.ndarray]:
        """Tensors under `prefix.` with the prefix stripped"""
        head = f"{prefix}."
        return {name[len(head):]: value for name, value in self.tensors.items() if name.startswith(head)}

    def add_section(self, prefix: str, tensors: Dict[str, np.ndarray]) -> None:
        for name, value in tensors.items():
            self.tensors[f"{prefix}.{name}"] = np.array(value, copy=True)


def _encode(checkpoint: Checkpoint) -> bytes:
    parts = [MAGIC, _U32.pack(checkpoint.version), _U32.pack(len(checkpoint.tensors))]
    for name, value in checkpoint.tensors.items():
        array = np.asarray(value)
        if (tag := TAG_FOR_KIND.get((array.dtype.kind, array.dtype.itemsize))) is None:
            raise CheckpointError(f"Unsupported dtype {array.dtype} for tensor {name}")
        encoded = name.encode("utf-8")
        parts += [_U32.pack(len(encoded)), encoded, _U8.pack(tag), _U32.pack(array.ndim)]
        parts += [_U32.pack(dim) for dim in array.shape]
        parts.append(np.ascontiguousarray(array, dtype=DTYPE_TAGS[tag]).tobytes())
    rng_json = json.dumps(checkpoint.rng_state, sort_keys=True).encode("utf-8")
    parts += [_U32.pack(len(rng_json)), rng_json, _U64.pack(checkpoint.step)]
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes, path: Path):
        self.data = data
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise CheckpointTruncatedError(
                f"{self.path}: truncated at byte {len(self.data)}, needed {end}"
            )
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt: struct.Struct) -> int:
        return fmt.unpack(self.take(fmt.size))[0]


def save_checkpoint(path: Union[str, Path], checkpoint: Checkpoint) -> Path:
    path = atomic_write_bytes(path, _encode(checkpoint))
    logger.info(f"Saved checkpoint ({len(checkpoint.tensors)} tensors, step {checkpoint.step}) to {path}")
    return path


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), path)

    if (magic := reader.data[:len(MAGIC)]) != MAGIC:
        raise CheckpointFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    reader.take(len(MAGIC))
    if (version := reader.unpack(_U32)) != FORMAT_VERSION:
        raise CheckpointVersionError(f"{path}: format version {version}, this build reads {FORMAT_VERSION}")

    tensors: Dict[str, np.ndarray] = {}
    for _ in range(reader.unpack(_U32)):
        name = reader.take(reader.unpack(_U32)).decode("utf-8")
        tag = reader.unpack(_U8)
        if (dtype := DTYPE_TAGS.get(tag)) is None:
            raise CheckpointFormatError(f"{path}: unknown dtype tag {tag} for tensor {name}")
        shape = tuple(reader.unpack(_U32) for _ in range(reader.unpack(_U32)))
        count = int(np.prod(shape, dtype=np.int64))
        raw = reader.take(count * dtype.itemsize)
        tensors[name] = np.frombuffer(raw, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))

    rng_state = json.loads(reader.take(reader.unpack(_U32)).decode("utf-8"))
    step = reader.unpack(_U64)
    if reader.offset != len(reader.data):
        raise CheckpointFormatError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")
    logger.info(f"Loaded checkpoint ({len(tensors)} tensors, step {step}) from {path}")
    return Checkpoint(tensors=tensors, rng_state=rng_state, step=step, version=version)


def _check_shapes(expected: Dict[str, np.ndarray], stored: Dict[str, np.ndarray], label: str) -> None:
    missing = sorted(set(expected) - set(stored))
    unexpected = sorted(set(stored) - set(expected))
    mismatched = [
        f"{name}: checkpoint {stored[name].shape} vs model {expected[name].shape}"
        for name in expected
        if name in stored and stored[name].shape != expected[name].shape
    ]
    if missing or unexpected or mismatched:
        diff = [f"shape mismatch {item}" for item in mismatched]
        diff += [f"missing {name}" for name in missing]
        diff += [f"unexpected {name}" for name in unexpected]
        raise ParameterMismatchError(f"Checkpoint does not fit {label}: " + "; ".join(diff))


def restore_module(module: Module, checkpoint: Checkpoint, prefix: str) -> None:
    """Load `prefix.*` tensors into a module after checking names and shapes"""
    stored = checkpoint.section(prefix)
    _check_shapes(module.state_dict(), stored, prefix)
    module.load_state_dict(stored)


def restore_optimizer(optimizer: Adam, checkpoint: Checkpoint, prefix: str) -> None:
    stored = checkpoint.section(prefix)
    _check_shapes(optimizer.state_dict(), stored, prefix)
    optimizer.load_state_dict(stored)
