"""Dataclass configs: resolution presets, dataset generation, training."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .errors import ConfigurationError


@dataclass(frozen=True)
class ModelPreset:
    """Architecture sizing for one resolution tier.

    `depths` drive both the matcher feature extractors and the generator
    encoders; the critic reuses the same widths over `critic_blocks`
    downsampling blocks.
    """

    name: str
    height: int
    width: int
    stages: int
    depths: tuple[int, ...]
    critic_blocks: int
    critic_depths: tuple[int, ...]
    k_per_side: int = 5
    theta_clamp: float = 1.0

    def __post_init__(self):
        if len(self.depths) != self.stages:
            raise ConfigurationError(
                f"preset {self.name!r}: {len(self.depths)} depths for {self.stages} stages"
            )
        if len(self.critic_depths) != self.critic_blocks:
            raise ConfigurationError(
                f"preset {self.name!r}: critic depths/blocks mismatch"
            )
        div = 2 ** self.stages
        if self.height % div or self.width % div:
            raise ConfigurationError(
                f"preset {self.name!r}: {self.height}x{self.width} not divisible by {div}"
            )

    @property
    def num_control_points(self) -> int:
        return self.k_per_side ** 2

    @property
    def theta_dim(self) -> int:
        return 2 * self.num_control_points


DESK = ModelPreset(
    name="desk",
    height=64,
    width=48,
    stages=4,
    depths=(16, 32, 64, 128),
    critic_blocks=4,
    critic_depths=(16, 32, 64, 128),
)

PAPER = ModelPreset(
    name="paper",
    height=256,
    width=192,
    stages=5,
    depths=(16, 32, 64, 128, 256),
    critic_blocks=5,
    critic_depths=(32, 64, 128, 256, 512),
)

PRESETS = {"desk": DESK, "paper": PAPER}


def get_preset(name: str) -> ModelPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown preset {name!r}; choose from {sorted(PRESETS)}"
        ) from None


@dataclass(frozen=True)
class DataConfig:
    """Controls the procedural person/cloth scene generator."""

    height: int = 64
    width: int = 48
    num_scales: int = 4
    pattern_classes: int = 4
    warp_bound: float = 0.15          # max |control point offset|, normalized coords
    k_per_side: int = 5
    mask_fill: float = 0.5            # agnostic-person fill value
    neck_box_h: float = 0.15          # fraction of image height
    neck_box_w: float = 0.25          # fraction of image width
    accessory_prob: float = 0.35
    test_fraction: float = 0.2

    def __post_init__(self):
        div = 2 ** self.num_scales
        if self.height <= 0 or self.width <= 0 or self.height % div or self.width % div:
            raise ConfigurationError(
                f"resolution {self.height}x{self.width} must be positive and divisible by {div}"
            )
        if self.pattern_classes < 4:
            raise ConfigurationError("need at least 4 pattern classes")
        if self.warp_bound < 0:
            raise ConfigurationError("warp_bound must be nonnegative")

    @property
    def theta_dim(self) -> int:
        return 2 * self.k_per_side ** 2


def data_config_for(preset: ModelPreset, **overrides) -> DataConfig:
    return DataConfig(
        height=preset.height,
        width=preset.width,
        num_scales=preset.stages,
        k_per_side=preset.k_per_side,
        **overrides,
    )


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four training objective terms; defaults all 1."""

    warp: float = 1.0
    perceptual: float = 1.0
    l1: float = 1.0
    adv: float = 1.0

    def __post_init__(self):
        for name, v in self.as_dict().items():
            if not (v >= 0.0 and v == v and v != float("inf")):
                raise ConfigurationError(f"loss weight {name} must be finite and >= 0, got {v}")

    def as_dict(self) -> dict[str, float]:
        return {"warp": self.warp, "perceptual": self.perceptual, "l1": self.l1, "adv": self.adv}


@dataclass(frozen=True)
class TrainConfig:
    """One training run (teacher or student)."""

    preset: str = "desk"
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 1e-3
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    adv_mode: str = "unpaired"        # unpaired | paired | none
    end_to_end: bool = True
    gp_coeff: float = 10.0
    weights: LossWeights = field(default_factory=LossWeights)
    deterministic: bool = True        # pin single-threaded math for bit-reproducibility
    log_every: int = 10

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.adv_mode not in ("unpaired", "paired", "none"):
            raise ConfigurationError(f"adv_mode {self.adv_mode!r} not in (unpaired, paired, none)")
        if self.steps < 0:
            raise ConfigurationError("steps must be >= 0")

    def with_overrides(self, **kw) -> "TrainConfig":
        return replace(self, **kw)

    @property
    def model_preset(self) -> ModelPreset:
        return get_preset(self.preset)
