"""Dataclass configs for the transform, entropy model, and training runs.

Configs round-trip through plain JSON so runs are reproducible from a single
human-readable file.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigurationError

# Rate-distortion operating points; lambda_index in the bitstream header
# indexes this grid.
LAMBDA_GRID = (0.00125, 0.005, 0.01, 0.02, 0.04, 0.08)

# Quantization support and coder precision.
Y_SYMBOL_MAX = 64
Z_SYMBOL_MAX = 128
CDF_PRECISION = 16
LIKELIHOOD_FLOOR = 2.0 ** -16
SIGMA_MIN = 0.11


@dataclass(frozen=True)
class TransformConfig:
    """Shape of the analysis/synthesis transform.

    Four stages; spatial resolution halves and channel width doubles between
    consecutive stages, so stage ``s`` runs at ``base_channels * 2**s``
    channels and 1/2**(s+1) of the input resolution.
    """

    base_channels: int = 32
    stage_depths: tuple[int, ...] = (1, 1, 2, 1)
    window_size: tuple[int, int] = (4, 4)
    num_heads: tuple[int, ...] = (2, 2, 4, 4)
    mlp_ratio: float = 2.0
    se_reduction: int = 4
    latent_channels: int = 192

    def __post_init__(self) -> None:
        if len(self.stage_depths) != 4 or len(self.num_heads) != 4:
            raise ConfigurationError("exactly 4 stages are supported")
        if any(d < 1 for d in self.stage_depths):
            raise ConfigurationError("stage depths must be >= 1")
        for s, heads in enumerate(self.num_heads):
            dim = self.base_channels * 2**s
            if dim % heads != 0:
                raise ConfigurationError(
                    f"stage {s} width {dim} not divisible by {heads} heads"
                )
        if self.window_size[0] < 1 or self.window_size[1] < 1:
            raise ConfigurationError("window dims must be positive")

    @property
    def stage_channels(self) -> tuple[int, ...]:
        return tuple(self.base_channels * 2**s for s in range(4))

    @property
    def divisor(self) -> int:
        """Input dims must be divisible by this so every stage tiles into windows."""
        return 16 * max(self.window_size)


@dataclass(frozen=True)
class EntropyConfig:
    """Entropy model widths and feature toggles.

    ``latent_channels`` is the C of the coded representation; context features
    are 2C wide and the parameter network consumes all four of them (8C).
    Disabled components are replaced by zero feature maps of the same shape,
    so any flag combination runs without shape changes.
    """

    latent_channels: int = 192
    context_kernel: int = 5
    global_heads: int = 4
    attention_reduction: int = 4
    sigma_min: float = SIGMA_MIN
    use_channel_hyper: bool = True
    use_spatial_hyper: bool = True
    use_local_ctx: bool = True
    use_global_ctx: bool = True

    def __post_init__(self) -> None:
        c = self.latent_channels
        if c % 16 != 0:
            raise ConfigurationError(f"latent channels {c} not divisible by 16")
        if self.context_kernel % 2 == 0:
            raise ConfigurationError("context kernel must be odd")
        patch_dim = self.context_kernel**2 * c
        if patch_dim % self.global_heads != 0:
            raise ConfigurationError(
                f"global patch dim {patch_dim} not divisible by "
                f"{self.global_heads} heads"
            )
        if not (self.use_channel_hyper or self.use_spatial_hyper):
            raise ConfigurationError("at least one hyperprior must be enabled")
        if self.sigma_min <= 0:
            raise ConfigurationError("sigma_min must be positive")


@dataclass(frozen=True)
class ModelConfig:
    transform: TransformConfig = field(default_factory=TransformConfig)
    entropy: EntropyConfig = field(default_factory=EntropyConfig)

    def __post_init__(self) -> None:
        if self.transform.latent_channels != self.entropy.latent_channels:
            raise ConfigurationError(
                "transform and entropy model disagree on latent channels"
            )


@dataclass(frozen=True)
class TrainConfig:
    """Desk-scale rate-distortion training protocol."""

    rd_lambda: float = 0.01
    batch_size: int = 8
    crop_size: int = 64
    total_steps: int = 20_000
    lr_initial: float = 1e-4
    lr_final: float = 1.2e-6
    grad_clip: float = 1.0
    seed: int = 0
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.rd_lambda <= 0:
            raise ConfigurationError("lambda must be positive")
        if self.lr_final > self.lr_initial:
            raise ConfigurationError("final lr must not exceed initial lr")
        if self.crop_size % 64 != 0:
            raise ConfigurationError("crop size must be divisible by 64")


# Named ablation presets: which entropy-model components stay enabled.
ABLATION_PRESETS = {
    "full": dict(),
    "no-global": dict(use_global_ctx=False),
    "spatial-hyper-local": dict(use_channel_hyper=False, use_global_ctx=False),
    "channel-hyper-local": dict(use_spatial_hyper=False, use_global_ctx=False),
}


def apply_ablation(cfg: ModelConfig, tag: str) -> ModelConfig:
    """Return a copy of ``cfg`` with the named ablation preset applied."""
    if tag not in ABLATION_PRESETS:
        raise ConfigurationError(
            f"unknown ablation {tag!r}; known: {sorted(ABLATION_PRESETS)}"
        )
    entropy = dataclasses.replace(cfg.entropy, **ABLATION_PRESETS[tag])
    return dataclasses.replace(cfg, entropy=entropy)


def _as_dict(cfg) -> dict:
    d = dataclasses.asdict(cfg)

    def tuples_to_lists(v):
        if isinstance(v, tuple):
            return [tuples_to_lists(x) for x in v]
        if isinstance(v, dict):
            return {k: tuples_to_lists(x) for k, x in v.items()}
        return v

    return tuples_to_lists(d)


def _tupled(d: dict, keys: tuple[str, ...]) -> dict:
    out = dict(d)
    for k in keys:
        if k in out and isinstance(out[k], list):
            out[k] = tuple(out[k])
    return out


def model_config_to_dict(cfg: ModelConfig) -> dict:
    return _as_dict(cfg)


def model_config_from_dict(d: dict) -> ModelConfig:
    t = _tupled(d.get("transform", {}), ("stage_depths", "window_size", "num_heads"))
    e = dict(d.get("entropy", {}))
    return ModelConfig(transform=TransformConfig(**t), entropy=EntropyConfig(**e))


def train_config_from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**d)


def load_config_file(path: str | Path) -> tuple[ModelConfig, TrainConfig]:
    """Read ``{"model": {...}, "train": {...}}`` JSON; missing keys use defaults."""
    with open(path) as f:
        raw = json.load(f)
    model = model_config_from_dict(raw.get("model", {}))
    train = train_config_from_dict(raw.get("train", {}))
    return model, train


def save_config_file(path: str | Path, model: ModelConfig, train: TrainConfig) -> None:
    payload = {"model": _as_dict(model), "train": _as_dict(train)}
    with open(path, "w") as f:
        json.dump(payload, f, indent=2)
        f.write("\n")
