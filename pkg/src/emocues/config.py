"""Run configuration.

Config files are flat JSON objects whose keys are the field names of
:class:`TrainConfig` and :class:`~emocues.audio.AudioConfig`.  A run manifest
written by the CLI (which nests the same keys under ``"config"``) is accepted
too, so a manifest can be replayed as a config.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from emocues.audio import AudioConfig
from emocues.errors import ParseError, ValidationError

TASKS = ("epc", "erc")
MODALITIES = ("T", "S", "T+S")

# Published model settings; the desk-scale defaults below override the widths.
PUBLISHED_SETTINGS = {"model_dim": 1024, "n_heads": 8, "n_layers": 2, "bridge_len": 4,
                  "mfm_blocks": 2, "lr": 1e-4, "batch_size": 32}


@dataclass(frozen=True)
class TrainConfig:
    task: str = "epc"
    modality: str = "T+S"
    lr: float = 1e-4
    batch_size: int = 32
    epochs: int = 200
    seed: int = 0
    model_dim: int = 64
    spectral_dim: int = 64
    n_heads: int = 4
    n_layers: int = 2
    ff_mult: int = 4
    bridge_len: int = 4
    mfm_blocks: int = 2
    mlp_depth: int = 1
    window: int = 3
    no_kwrt: bool = False
    no_pe: bool = False
    no_tmf: bool = False
    dropout: float = 0.0
    mel_mode: str = "frame"
    patch_frames: int = 4
    target_accuracy: float | None = None
    kb: str | None = None
    lexicon: str | None = None

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValidationError(f"task must be one of {TASKS}, got {self.task!r}")
        if self.modality not in MODALITIES:
            raise ValidationError(f"modality must be one of {MODALITIES}, got {self.modality!r}")
        if self.mel_mode not in ("frame", "patch"):
            raise ValidationError(f"mel_mode must be 'frame' or 'patch', got {self.mel_mode!r}")
        for name in ("batch_size", "epochs", "model_dim", "spectral_dim", "n_heads", "n_layers",
                     "ff_mult", "bridge_len", "mfm_blocks", "mlp_depth", "window", "patch_frames"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1")
        if self.lr < 0:
            raise ValidationError("lr must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must be in [0, 1)")
        for dim in ("model_dim", "spectral_dim"):
            if getattr(self, dim) % self.n_heads:
                raise ValidationError(f"{dim}={getattr(self, dim)} not divisible by n_heads={self.n_heads}")

    @property
    def uses_text(self) -> bool:
        return self.modality in ("T", "T+S")

    @property
    def uses_audio(self) -> bool:
        return self.modality in ("S", "T+S")

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)


_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
_AUDIO_KEYS = {f.name for f in fields(AudioConfig)}


def split_config(flat: dict) -> tuple[TrainConfig, AudioConfig]:
    unknown = set(flat) - _TRAIN_KEYS - _AUDIO_KEYS
    if unknown:
        raise ValidationError(f"unknown config keys: {sorted(unknown)}")
    try:
        train = TrainConfig(**{k: v for k, v in flat.items() if k in _TRAIN_KEYS})
        audio = AudioConfig(**{k: v for k, v in flat.items() if k in _AUDIO_KEYS})
    except TypeError as exc:
        raise ValidationError(str(exc)) from None
    return train, audio


def flat_config(train: TrainConfig, audio: AudioConfig) -> dict:
    return {**asdict(train), **asdict(audio)}


def load_config_file(path: str | Path) -> dict:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed JSON ({exc.msg})", path, exc.lineno) from None
    if not isinstance(obj, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    if "config" in obj and isinstance(obj["config"], dict):
        obj = obj["config"]
    return obj
