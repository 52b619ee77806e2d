"""Data models shared across pixcorr.

Enumerations name the configuration space (loss form, loss domains, loss
metric, experiment variant); dataclasses carry configuration and the plain
numpy payloads that move between modules:

- ``SceneSample`` / ``SceneDataset``: generated images with dense labels.
- ``ClassThresholds`` / ``PseudoLabelMap``: self-training targets.
- ``IoUReport`` / ``EntropyStats``: evaluation results.

Label maps are ``uint8`` grids; ``IGNORE`` (255) marks pixels without a
pseudo label.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ConfigurationError

IGNORE = 255
MAX_THRESHOLD = 0.9
UNATTAINABLE = math.inf


class Domain(enum.Enum):
    """Which side of the adaptation a sample comes from."""

    SOURCE = "source"
    TARGET = "target"

    def __str__(self) -> str:
        return self.value


class SceneClass(enum.IntEnum):
    """Semantic classes of the generated street scenes."""

    SKY = 0
    ROAD = 1
    BUILDING = 2
    VEHICLE = 3
    POLE = 4

    @property
    def label(self) -> str:
        return self.name.lower()


class AttForm(enum.Enum):
    """Reference the self-attention loss pulls z towards."""

    Z_VS_ZPP = "z-zpp"  # z'' = z + z'
    Z_VS_ZP = "z-zp"

    def __str__(self) -> str:
        return self.value


class AttDomains(enum.Enum):
    """Domains the self-attention loss is applied on."""

    BOTH = "both"
    TARGET_ONLY = "target"

    def __str__(self) -> str:
        return self.value


class AttMetric(enum.Enum):
    """Distance between z and its attended reference."""

    L1 = "l1"
    KL = "kl"
    COSINE = "cosine"

    def __str__(self) -> str:
        return self.value


class Variant(enum.Enum):
    """Experiment variants of the ablation and generation tables."""

    NO_PSEUDO = "no-pseudo"
    PSEUDO_ONLY = "pseudo-only"
    OURS = "ours"

    @property
    def title(self) -> str:
        return {
            Variant.NO_PSEUDO: "No Pseudo",
            Variant.PSEUDO_ONLY: "Pseudo-Only",
            Variant.OURS: "Ours",
        }[self]

    def __str__(self) -> str:
        return self.value


class Optimizer(enum.Enum):
    SGD = "sgd"
    ADAM = "adam"

    def __str__(self) -> str:
        return self.value


class LrPolicy(enum.Enum):
    POLY = "poly"
    STEP = "step"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True)
class NetConfig:
    """Architecture of the segmentation network.

    The first log2(downsample) conv blocks use stride 2, the remaining ones
    stride 1, so logits come out at (H / d) x (W / d).

    Attributes:
        input_channels: Image channels (3 for RGB).
        widths: Output channels of each 3x3 conv + ReLU block.
        downsample: Total downsample factor d, a power of two.
        num_classes: Number of classes C of the 1x1 head.
        seed: Parameter-initialization seed.
    """

    input_channels: int = 3
    widths: tuple[int, ...] = (16, 32, 32)
    downsample: int = 4
    num_classes: int = 5
    seed: int = 0

    def __post_init__(self) -> None:
        d = self.downsample
        if d < 1 or d & (d - 1):
            raise ConfigurationError(f"downsample must be a power of 2, got {d}")
        if self.num_classes < 2:
            raise ConfigurationError(f"num_classes must be at least 2, got {self.num_classes}")
        if self.input_channels < 1 or any(w < 1 for w in self.widths):
            raise ConfigurationError("input_channels and widths must be positive")
        if len(self.widths) < self.stride_two_blocks:
            raise ConfigurationError(
                f"{len(self.widths)} conv blocks cannot reach downsample factor {d}"
            )

    @property
    def stride_two_blocks(self) -> int:
        return self.downsample.bit_length() - 1

    @property
    def strides(self) -> tuple[int, ...]:
        return tuple(2 if i < self.stride_two_blocks else 1 for i in range(len(self.widths)))


@dataclass(frozen=True)
class LossConfig:
    """Which self-attention loss to add and how strongly.

    Attributes:
        att_form: z vs z'' or z vs z'.
        att_domains: Apply the loss on both domains or on the target only.
        att_metric: L1, KL divergence or cosine distance.
        lam: Weight of the self-attention loss; 0 disables it entirely.
    """

    att_form: AttForm = AttForm.Z_VS_ZPP
    att_domains: AttDomains = AttDomains.BOTH
    att_metric: AttMetric = AttMetric.L1
    lam: float = 0.1

    def __post_init__(self) -> None:
        if not self.lam >= 0.0:
            raise ConfigurationError(f"lambda must be nonnegative, got {self.lam}")

    @classmethod
    def gta5_like(cls, lam: float = 0.1) -> LossConfig:
        return cls(AttForm.Z_VS_ZPP, AttDomains.BOTH, AttMetric.L1, lam)

    @classmethod
    def synthia_like(cls, lam: float = 0.1) -> LossConfig:
        return cls(AttForm.Z_VS_ZP, AttDomains.TARGET_ONLY, AttMetric.L1, lam)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer, schedule and bookkeeping of one training phase."""

    iterations: int = 6000
    batch_size: int = 1
    base_lr: float = 0.01
    weight_decay: float = 5e-4
    momentum: float = 0.9
    poly_power: float = 0.9
    eval_interval: int = 500
    seed: int = 0
    loss: LossConfig = field(default_factory=LossConfig)
    use_conv: bool = True
    use_skip: bool = True
    generation: int = 1
    optimizer: Optimizer = Optimizer.SGD
    lr_policy: LrPolicy = LrPolicy.POLY
    lr_step_size: int = 2500
    lr_gamma: float = 0.1
    adam_betas: tuple[float, float] = (0.9, 0.99)

    def __post_init__(self) -> None:
        if self.iterations <= 0:
            raise ConfigurationError(f"iterations must be positive, got {self.iterations}")
        if self.poly_power <= 0:
            raise ConfigurationError(f"poly_power must be positive, got {self.poly_power}")
        if self.batch_size != 1:
            raise ConfigurationError("only batch_size = 1 is supported")
        if self.eval_interval <= 0:
            raise ConfigurationError(f"eval_interval must be positive, got {self.eval_interval}")
        if self.base_lr <= 0 or self.weight_decay < 0 or not 0 <= self.momentum < 1:
            raise ConfigurationError(
                "base_lr > 0, weight_decay >= 0 and 0 <= momentum < 1 required"
            )


RGB = tuple[float, float, float]


@dataclass(frozen=True)
class DomainSpec:
    """Appearance and geometry of one synthetic domain.

    Palettes and texture differ between domains; the geometry ranges are the
    same for both so the layout statistics carry across.

    Attributes:
        domain: SOURCE or TARGET.
        palette: Mean RGB colour of each class, indexed by SceneClass.
        noise_std: Std of per-pixel Gaussian colour noise.
        texture_freq: Spatial frequency (cycles per pixel) of the sinusoidal texture.
        texture_amp: Amplitude of the texture.
        gain: Global brightness multiplier applied after colouring.
        sky_fraction: Range of the sky band height as a fraction of H.
        road_fraction: Range of the road band height as a fraction of H.
        vehicles: Inclusive range of vehicle rectangles per image.
        poles: Inclusive range of poles per image.
        seed: Root seed; sample ``i`` uses an rng derived from (seed, i).
    """

    domain: Domain
    palette: tuple[RGB, ...]
    noise_std: float = 0.04
    texture_freq: float = 0.25
    texture_amp: float = 0.05
    gain: float = 1.0
    sky_fraction: tuple[float, float] = (0.2, 0.4)
    road_fraction: tuple[float, float] = (0.25, 0.45)
    vehicles: tuple[int, int] = (0, 3)
    poles: tuple[int, int] = (0, 2)
    seed: int = 0

    @classmethod
    def default_source(cls, seed: int = 0) -> DomainSpec:
        return cls(
            domain=Domain.SOURCE,
            palette=(
                (0.55, 0.75, 0.95),  # sky
                (0.35, 0.35, 0.38),  # road
                (0.70, 0.48, 0.36),  # building
                (0.85, 0.15, 0.15),  # vehicle
                (0.95, 0.85, 0.20),  # pole
            ),
            noise_std=0.04,
            texture_freq=0.25,
            texture_amp=0.05,
            gain=1.0,
            seed=seed,
        )

    @classmethod
    def default_target(cls, seed: int = 0) -> DomainSpec:
        return cls(
            domain=Domain.TARGET,
            palette=(
                (0.72, 0.74, 0.80),
                (0.46, 0.42, 0.40),
                (0.58, 0.54, 0.50),
                (0.60, 0.22, 0.40),
                (0.80, 0.80, 0.55),
            ),
            noise_std=0.07,
            texture_freq=0.4,
            texture_amp=0.08,
            gain=0.7,
            seed=seed + 1,
        )


@dataclass
class SceneSample:
    """One generated image with its dense ground truth.

    Attributes:
        image: ch x H x W float array with values k / 255 in [0, 1].
        label: H x W uint8 class map, every pixel labeled.
        domain: Domain the sample was drawn from.
        id: Index of the sample within its dataset.
    """

    image: np.ndarray
    label: np.ndarray
    domain: Domain
    id: int

    @property
    def height(self) -> int:
        return int(self.image.shape[1])

    @property
    def width(self) -> int:
        return int(self.image.shape[2])


@dataclass
class SceneDataset:
    """An ordered collection of samples from one domain and split."""

    domain: Domain
    samples: list[SceneSample] = field(default_factory=list)
    spec: Optional[DomainSpec] = None

    def __len__(self) -> int:
        return len(self.samples)

    def images(self) -> list[np.ndarray]:
        """Images only; target-domain training never needs more."""
        return [s.image for s in self.samples]

    def __str__(self) -> str:
        if not self.samples:
            return f"SceneDataset({self.domain}, empty)"
        first = self.samples[0]
        return f"SceneDataset({self.domain}, {len(self)} samples, {first.height}x{first.width})"


@dataclass
class ClassThresholds:
    """Per-class confidence thresholds; UNATTAINABLE for never-predicted classes."""

    values: np.ndarray

    @property
    def num_classes(self) -> int:
        return int(self.values.shape[0])

    def __str__(self) -> str:
        return " ".join("inf" if math.isinf(v) else f"{v:.6f}" for v in self.values)


@dataclass
class PseudoLabelMap:
    """H x W pseudo labels; IGNORE marks pixels below their class threshold."""

    labels: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return (int(self.labels.shape[0]), int(self.labels.shape[1]))

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != IGNORE


@dataclass
class IoUReport:
    """Intersection-over-union of a prediction against ground truth.

    Attributes:
        per_class: IoU of each class; NaN for classes absent from both maps.
        miou: Mean over present classes.
        confusion: C x C pixel counts, rows = ground truth, cols = prediction.
    """

    per_class: np.ndarray
    miou: float
    confusion: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.per_class)

    @property
    def pixel_accuracy(self) -> float:
        total = self.confusion.sum()
        return float(np.trace(self.confusion) / total) if total else 0.0

    def __str__(self) -> str:
        cells = ", ".join(
            "-" if np.isnan(v) else f"{v * 100:.1f}" for v in self.per_class
        )
        return f"mIoU {self.miou * 100:.2f} [{cells}]"


@dataclass
class EntropyStats:
    """Mean entropy of correctly and incorrectly classified pixels.

    The means average the per-image group entropies over images where the
    group is populated; NaN when no image has that group.
    """

    mean_correct: float
    mean_incorrect: float
    per_image: list[tuple[float, float]] = field(default_factory=list)

    def __str__(self) -> str:
        return f"entropy correct {self.mean_correct:.4f} / incorrect {self.mean_incorrect:.4f}"
