"""Versioned model checkpoints: weights, hyperparameters, feature scaling."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .affinity import ModelParams
from .features import CHANNELS, FeatureScaler
from .training import TrainConfig

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint missing, malformed, or incompatible with this build."""


@dataclass
class Checkpoint:
    params: ModelParams
    scaler: FeatureScaler
    train_config: TrainConfig
    channels: tuple[str, ...] = CHANNELS


def save_checkpoint(path: str | Path, ckpt: Checkpoint) -> None:
    blob = {
        "format_version": FORMAT_VERSION,
        "channels": list(ckpt.channels),
        "params": ckpt.params.to_dict(),
        "scaler": ckpt.scaler.to_dict(),
        "train_config": ckpt.train_config.to_dict(),
    }
    Path(path).write_text(json.dumps(blob, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_checkpoint(path: str | Path) -> Checkpoint:
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint file not found: {p}")
    try:
        blob = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"checkpoint is not valid JSON: {exc.msg}") from exc
    version = blob.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format_version {version!r}")
    channels = tuple(blob.get("channels", ()))
    if channels != CHANNELS:
        raise CheckpointError(
            f"feature layout mismatch: checkpoint has {channels}, this build expects {CHANNELS}"
        )
    return Checkpoint(
        params=ModelParams.from_dict(blob["params"]),
        scaler=FeatureScaler.from_dict(blob["scaler"]),
        train_config=TrainConfig.from_dict(blob["train_config"]),
        channels=channels,
    )
