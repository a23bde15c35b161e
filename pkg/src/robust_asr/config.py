"""Configuration dataclasses, named presets, and JSON loading.

Two presets ship built in: ``paper`` mirrors the published architecture
(seven strided convs, 24x1024 transformer, 1000-step noise schedule) and
``desk`` is a small configuration every test runs on.  A user JSON file
selects a preset and overrides any subset of fields; flags beat the
``ASR_CONFIG`` / ``ASR_SEED`` environment variables.
"""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field

from .exceptions import ConfigError


@dataclass
class ConvLayerSpec:
    kernel: int
    stride: int
    channels: int
    activation: str = "gelu"


@dataclass
class EncoderConfig:
    conv_layers: list
    tf_layers: int
    hidden: int
    heads: int
    ffn: int
    dropout: float
    preset: str = "custom"

    def __post_init__(self):
        self.conv_layers = [
            c if isinstance(c, ConvLayerSpec) else ConvLayerSpec(**c) for c in self.conv_layers
        ]
        if self.hidden % self.heads != 0:
            raise ConfigError(f"hidden {self.hidden} not divisible by heads {self.heads}")
        if self.conv_layers and self.conv_layers[-1].channels != 512:
            raise ConfigError("conv encoder must end at 512 channels")


@dataclass
class DiffusionConfig:
    t_diff: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    denoise_steps: int = 10
    unet_widths: list = field(default_factory=lambda: [512, 256, 128, 64, 32])
    time_dim: int = 128
    apply_at_inference: bool = True


@dataclass
class PhoneticConfig:
    """Frozen random stand-in for a pre-trained frame-level phoneme map."""

    n_phonemes: int = 8
    hidden: int = 64
    seed: int = 20240601


@dataclass
class LossWeights:
    alpha1: float = 1.0   # phonetic term in the joint objective
    alpha2: float = 1.0   # speaker term
    alpha3: float = 1.0   # clean/denoised posterior consistency
    lambda1: float = 1.0  # inside the phonetic loss
    lambda2: float = 1.0  # gender cross-entropy
    lambda3: float = 1.0  # age cross-entropy
    lambda4: float = 1.0  # dialect cross-entropy


@dataclass
class NoiseSourceConfig:
    source: str = "gaussian"  # "gaussian" or a WAV path
    snr_db: dict = field(default_factory=lambda: {"min": 5.0, "max": 20.0})
    weight: float = 1.0


@dataclass
class AugmentConfig:
    speed: dict = field(default_factory=lambda: {"min": 0.9, "max": 1.1, "enabled": True})
    gain_db: dict = field(default_factory=lambda: {"min": -3.0, "max": 3.0, "enabled": True})
    noise: list = field(default_factory=lambda: [NoiseSourceConfig()])
    noise_enabled: bool = True

    def __post_init__(self):
        self.noise = [
            n if isinstance(n, NoiseSourceConfig) else NoiseSourceConfig(**n) for n in self.noise
        ]


@dataclass
class TrainConfig:
    stage: str = "joint"               # "diffusion" or "joint"
    lr: float | None = None            # stage default when None: 5e-5 / 2e-5
    micro_batch: int = 16
    accum_steps: int = 4
    max_audio_s: float = 30.0
    checkpoint_every: int = 1000
    patience: int = 5
    eval_every: int = 50
    max_steps: int = 1000
    epochs: int = 0                    # kept for protocol fidelity; 0 = step-bounded
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    STAGE_LR = {"diffusion": 5e-5, "joint": 2e-5}

    def resolved_lr(self) -> float:
        if self.lr is not None:
            return self.lr
        try:
            return self.STAGE_LR[self.stage]
        except KeyError:
            raise ConfigError(f"unknown training stage {self.stage!r}")


@dataclass
class Config:
    preset: str
    encoder: EncoderConfig
    diffusion: DiffusionConfig
    phonetic: PhoneticConfig
    weights: LossWeights
    train: TrainConfig
    augment: AugmentConfig
    vocab_path: str | None = None
    seed: int = 0


_PAPER = {
    "preset": "paper",
    "encoder": {
        "conv_layers": (
            [{"kernel": 10, "stride": 5, "channels": 512}]
            + [{"kernel": 3, "stride": 2, "channels": 512}] * 4
            + [{"kernel": 2, "stride": 2, "channels": 512}] * 2
        ),
        "tf_layers": 24,
        "hidden": 1024,
        "heads": 16,
        "ffn": 4096,
        "dropout": 0.1,
        "preset": "paper",
    },
    "diffusion": {
        "t_diff": 1000,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "denoise_steps": 10,
        "unet_widths": [512, 256, 128, 64, 32],
        "time_dim": 128,
    },
    "phonetic": {},
    "weights": {},
    "train": {"micro_batch": 16, "accum_steps": 4, "max_steps": 100000},
    "augment": {},
    "seed": 0,
}

# Small enough that the whole verification suite runs on one CPU core.
_DESK = {
    "preset": "desk",
    "encoder": {
        "conv_layers": (
            [{"kernel": 10, "stride": 2, "channels": 512}]
            + [{"kernel": 3, "stride": 1, "channels": 512}] * 4
            + [{"kernel": 2, "stride": 1, "channels": 512}] * 2
        ),
        "tf_layers": 4,
        "hidden": 256,
        "heads": 4,
        "ffn": 1024,
        "dropout": 0.1,
        "preset": "desk",
    },
    "diffusion": {
        "t_diff": 8,
        "beta_start": 1e-4,
        "beta_end": 0.02,
        "denoise_steps": 4,
        "unet_widths": [64, 32],
        "time_dim": 128,
    },
    "phonetic": {},
    "weights": {},
    "train": {
        "lr": 1e-3,
        "micro_batch": 5,
        "accum_steps": 1,
        "checkpoint_every": 100,
        "eval_every": 25,
        "max_steps": 500,
    },
    "augment": {},
    "seed": 0,
}

PRESETS = {"paper": _PAPER, "desk": _DESK}


def deep_merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = deep_merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def config_from_dict(d: dict) -> Config:
    preset_name = d.get("preset", "desk")
    if preset_name not in PRESETS:
        raise ConfigError(f"unknown preset {preset_name!r}; choose from {sorted(PRESETS)}")
    merged = deep_merge(PRESETS[preset_name], d)
    try:
        return Config(
            preset=preset_name,
            encoder=EncoderConfig(**merged["encoder"]),
            diffusion=DiffusionConfig(**merged["diffusion"]),
            phonetic=PhoneticConfig(**merged["phonetic"]),
            weights=LossWeights(**merged["weights"]),
            train=TrainConfig(**merged["train"]),
            augment=AugmentConfig(**merged["augment"]),
            vocab_path=merged.get("vocab_path"),
            seed=int(merged.get("seed", 0)),
        )
    except TypeError as exc:
        raise ConfigError(f"bad config field: {exc}") from exc


def config_to_dict(cfg: Config) -> dict:
    return asdict(cfg)


def load_config(path=None, preset: str | None = None, seed: int | None = None) -> Config:
    """Resolve a Config from file, preset name, and environment.

    Precedence per field source: explicit args beat the config file, which
    beats ASR_CONFIG / ASR_SEED, which beat preset defaults.
    """
    if path is None:
        path = os.environ.get("ASR_CONFIG") or None
    d = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"invalid JSON in {path}: {exc}") from exc
    if preset is not None:
        d["preset"] = preset
    elif "preset" not in d:
        d["preset"] = "desk"
    env_seed = os.environ.get("ASR_SEED")
    if seed is not None:
        d["seed"] = seed
    elif "seed" not in d and env_seed is not None:
        d["seed"] = int(env_seed)
    return config_from_dict(d)
