"""
Checkpoint Storage - Stores and retrieves model parameters as flat binary files

Layout (little-endian):
    magic b"MRANCKPT" | uint32 version | uint64 len + config echo (utf-8) | uint32 count
    per parameter: uint32 len + name (utf-8) | uint32 ndim | uint64 dims... | float64 data (row-major)
"""
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Dict, Optional, Union
import io
import logging
import struct

import numpy as np

from mran.errors import UsageError, ValidationError
from mran.network import MranModel

logger = logging.getLogger(__name__)

MAGIC = b"MRANCKPT"
VERSION = 1


@dataclass
class Checkpoint:
    """Config echo plus named parameter arrays, in insertion order"""
    config_echo: str
    parameters: Dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: MranModel, config_echo: str = "") -> "Checkpoint":
        return cls(config_echo, model.snapshot())


def write_checkpoint(stream: BinaryIO, checkpoint: Checkpoint):
    echo = checkpoint.config_echo.encode("utf-8")
    stream.write(MAGIC)
    stream.write(struct.pack("<IQ", VERSION, len(echo)))
    stream.write(echo)
    stream.write(struct.pack("<I", len(checkpoint.parameters)))
    for name, values in checkpoint.parameters.items():
        encoded = name.encode("utf-8")
        values = np.ascontiguousarray(values, dtype="<f8")
        stream.write(struct.pack("<I", len(encoded)))
        stream.write(encoded)
        stream.write(struct.pack("<I", values.ndim))
        stream.write(struct.pack(f"<{values.ndim}Q", *values.shape))
        stream.write(values.tobytes(order="C"))


def _read_exact(stream: BinaryIO, n: int) -> bytes:
    data = stream.read(n)
    if len(data) != n:
        raise ValidationError(f"truncated checkpoint: wanted {n} bytes, got {len(data)}")
    return data


def _unpack(stream: BinaryIO, fmt: str):
    return struct.unpack(fmt, _read_exact(stream, struct.calcsize(fmt)))


def read_checkpoint(stream: BinaryIO) -> Checkpoint:
    """
    Raises:
        ValidationError: wrong magic, unsupported version or truncated data
    """
    if _read_exact(stream, len(MAGIC)) != MAGIC:
        raise ValidationError("not an mran checkpoint (bad magic)")
    version, echo_len = _unpack(stream, "<IQ")
    if version != VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")
    echo = _read_exact(stream, echo_len).decode("utf-8")
    (count,) = _unpack(stream, "<I")
    parameters: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = _unpack(stream, "<I")
        name = _read_exact(stream, name_len).decode("utf-8")
        (ndim,) = _unpack(stream, "<I")
        shape = _unpack(stream, f"<{ndim}Q") if ndim else ()
        size = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(_read_exact(stream, 8 * size), dtype="<f8")
        parameters[name] = data.astype(np.float64).reshape(shape)
    if stream.read(1):
        raise ValidationError("trailing bytes after the last parameter")
    return Checkpoint(echo, parameters)


class CheckpointStorage:
    """File-based storage for model checkpoints under one root directory"""

    SUFFIX = ".ckpt"

    def __init__(self, root: Union[str, Path]):
        """
        Args:
            root: Directory holding the checkpoint files (created on first save)
        """
        self.root = Path(root)

    def path_for(self, key: str) -> Path:
        if not key or Path(key).is_absolute() or ".." in Path(key).parts:
            raise UsageError(f"invalid checkpoint key '{key}'")
        return self.root / f"{key}{self.SUFFIX}"

    def save_checkpoint(self, key: str, checkpoint: Checkpoint) -> Path:
        """
        Save a checkpoint, replacing any previous one with the same key

        Returns:
            Path of the written file
        """
        path = self.path_for(key)
        path.parent.mkdir(parents=True, exist_ok=True)
        buffer = io.BytesIO()
        write_checkpoint(buffer, checkpoint)
        path.write_bytes(buffer.getvalue())
        logger.info(f"✓ Saved checkpoint: {path}")
        return path

    def save_model(self, key: str, model: MranModel, config_echo: str = "") -> Path:
        return self.save_checkpoint(key, Checkpoint.from_model(model, config_echo))

    def load_checkpoint(self, key: str) -> Optional[Checkpoint]:
        """
        Returns:
            The stored Checkpoint, or None if no file exists for the key
        """
        path = self.path_for(key)
        if not path.is_file():
            return None
        with open(path, "rb") as f:
            return read_checkpoint(f)

    def load_into(self, key: str, model: MranModel) -> Checkpoint:
        """Restore a stored checkpoint's parameters into a model of the same architecture"""
        checkpoint = self.load_checkpoint(key)
        if checkpoint is None:
            raise UsageError(f"no checkpoint stored under '{key}' in {self.root}")
        model.restore(checkpoint.parameters)
        return checkpoint

    def checkpoint_exists(self, key: str) -> bool:
        return self.path_for(key).is_file()

    def delete_checkpoint(self, key: str):
        path = self.path_for(key)
        if path.is_file():
            path.unlink()
            logger.info(f"✓ Deleted checkpoint: {path}")
