"""
Versioned single-file checkpoints.

Layout: 8-byte magic, 4-byte little-endian format version, 32-byte SHA-256
of the payload, then the payload written by torch.save. The payload holds
only plain containers and tensors so it loads with weights_only=True.
"""

import hashlib
import io
import logging
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import torch

from src.config import BackboneConfig, ModelConfig, TrainConfig
from src.errors import CorruptCheckpointError, IncompatibleCheckpointError, ResourceError
from src.networks.dsrnet import DSRNet

logger = logging.getLogger(__name__)

MAGIC = b"DSRNETCK"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<8sI32s")


@dataclass
class Checkpoint:
    """Everything needed to resume a run or rebuild the model."""
    model_state: Dict[str, torch.Tensor]
    model_config: Dict[str, Any]
    optimizer_state: Optional[Dict[str, Any]] = None
    train_config: Dict[str, Any] = field(default_factory=dict)
    epoch: int = 0
    step: int = 0
    version: int = FORMAT_VERSION

    def to_payload(self) -> dict:
        return {
            "model_state": self.model_state,
            "model_config": self.model_config,
            "optimizer_state": self.optimizer_state,
            "train_config": self.train_config,
            "epoch": self.epoch,
            "step": self.step,
        }

    @classmethod
    def from_payload(cls, payload: dict, version: int) -> 'Checkpoint':
        return cls(
            model_state=payload["model_state"],
            model_config=payload["model_config"],
            optimizer_state=payload.get("optimizer_state"),
            train_config=payload.get("train_config", {}),
            epoch=payload.get("epoch", 0),
            step=payload.get("step", 0),
            version=version,
        )

    def get_model_config(self) -> ModelConfig:
        return ModelConfig.from_dict(self.model_config)

    def get_train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.train_config)

    def backbone_config(self) -> BackboneConfig:
        """Backbone the run was trained with, unless the environment names one."""
        env = BackboneConfig.from_env()
        saved = self.train_config.get("backbone")
        if env.weights_path or env.random_init or not saved:
            return env
        return BackboneConfig(**saved)


def capture(model: torch.nn.Module, model_config: ModelConfig,
            optimizer: Optional[torch.optim.Optimizer] = None,
            train_config: Optional[TrainConfig] = None,
            epoch: int = 0, step: int = 0) -> Checkpoint:
    """Snapshot live training state into a Checkpoint."""
    return Checkpoint(
        model_state={k: v.detach().clone() for k, v in model.state_dict().items()},
        model_config=model_config.to_dict(),
        optimizer_state=optimizer.state_dict() if optimizer is not None else None,
        train_config=train_config.to_dict() if train_config is not None else {},
        epoch=epoch,
        step=step,
    )


def save_checkpoint(path: Union[str, Path], ckpt: Checkpoint) -> str:
    """
    Write a checkpoint atomically.

    Returns:
        Path of the written file
    """
    buffer = io.BytesIO()
    torch.save(ckpt.to_payload(), buffer)
    payload = buffer.getvalue()
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, hashlib.sha256(payload).digest())

    output_file = Path(path)
    output_file.parent.mkdir(parents=True, exist_ok=True)
    tmp_file = output_file.with_name(output_file.name + ".tmp")
    tmp_file.write_bytes(header + payload)
    os.replace(tmp_file, output_file)
    logger.debug("Saved checkpoint %s (epoch=%d, step=%d)", output_file, ckpt.epoch, ckpt.step)
    return str(output_file)


def read_header(data: bytes) -> Tuple[int, bytes]:
    """
    Validate the header and digest.

    Returns:
        (version, payload bytes)

    Raises:
        CorruptCheckpointError: For a short file, wrong magic or digest mismatch
        IncompatibleCheckpointError: For a foreign format version
    """
    if len(data) < _HEADER.size:
        raise CorruptCheckpointError(f"checkpoint truncated ({len(data)} bytes)")
    magic, version, digest = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpointError("not a checkpoint file (bad magic)")
    if version != FORMAT_VERSION:
        raise IncompatibleCheckpointError(
            f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})"
        )
    payload = data[_HEADER.size:]
    if hashlib.sha256(payload).digest() != digest:
        raise CorruptCheckpointError("checkpoint payload is truncated or altered (digest mismatch)")
    return version, payload


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint written by save_checkpoint.

    Raises:
        ResourceError: If the file is missing or unreadable
        CorruptCheckpointError: If the file is truncated or altered
        IncompatibleCheckpointError: If the format version differs
    """
    ckpt_file = Path(path)
    try:
        data = ckpt_file.read_bytes()
    except OSError as e:
        raise ResourceError(f"Cannot read checkpoint {ckpt_file}: {e}") from e
    version, payload = read_header(data)
    try:
        content = torch.load(io.BytesIO(payload), map_location="cpu", weights_only=True)
    except Exception as e:
        raise CorruptCheckpointError(f"Cannot decode checkpoint {ckpt_file}: {e}") from e
    return Checkpoint.from_payload(content, version)


def load_model(path: Union[str, Path]):
    """
    Rebuild a network from a checkpoint file.

    Returns:
        (model in eval mode, Checkpoint)
    """
    ckpt = load_checkpoint(path)
    model = DSRNet(ckpt.get_model_config())
    model.load_state_dict(ckpt.model_state)
    logger.info("Loaded model from %s (epoch=%d, step=%d)", path, ckpt.epoch, ckpt.step)
    return model.eval(), ckpt
