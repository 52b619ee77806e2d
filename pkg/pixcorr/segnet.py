"""The segmentation network G(x) = S(U(z)).

A feature extractor of 3x3 conv + ReLU blocks followed by a 1x1
classification head produces logits z at 1/d of the input resolution;
``predict`` upsamples them bilinearly and applies a per-pixel softmax.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .checkpoint import load_checkpoint, save_checkpoint
from .errors import DimensionError, FormatError
from .models import NetConfig
from .tensor import Tensor

logger = logging.getLogger(__name__)


def kaiming_uniform(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    """Fan-in scaled uniform init: U(-b, b) with b = sqrt(6 / fan_in), std sqrt(2 / fan_in)."""
    fan_in = int(np.prod(shape[1:]))
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class ConvLayer:
    """One convolution with its parameters; bias always present."""

    weight: Tensor
    bias: Tensor
    stride: int = 1
    padding: int = 0

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


def logits_to_probs(z: Tensor, size: tuple[int, int]) -> Tensor:
    """p = S(U(z)): upsample h x w x C logits to H x W and softmax over classes."""
    chw = T.transpose(z, (2, 0, 1))
    up = T.bilinear_upsample(chw, size)
    return T.softmax(T.transpose(up, (1, 2, 0)), axis=-1)


class SegNet:
    """Feature extractor F (conv + ReLU blocks) and classification head H."""

    def __init__(self, config: NetConfig, features: list[ConvLayer], head: ConvLayer) -> None:
        self.config = config
        self.features = features
        self.head = head

    def parameters(self) -> list[Tensor]:
        """All parameters in declaration order (weight, bias per layer)."""
        params: list[Tensor] = []
        for layer in [*self.features, self.head]:
            params.extend((layer.weight, layer.bias))
        return params

    def zero_grad(self) -> None:
        for param in self.parameters():
            param.zero_grad()

    def _check_input(self, image: np.ndarray | Tensor) -> Tensor:
        x = image if isinstance(image, Tensor) else Tensor(image)
        cfg = self.config
        if x.ndim != 3 or x.shape[0] != cfg.input_channels:
            raise DimensionError(
                f"expected a {cfg.input_channels} x H x W image, got shape {x.shape}"
            )
        d = cfg.downsample
        if x.shape[1] % d or x.shape[2] % d:
            raise DimensionError(
                f"image size {x.shape[1]}x{x.shape[2]} not divisible by downsample factor {d}"
            )
        return x

    def forward_logits(self, image: np.ndarray | Tensor) -> Tensor:
        """Logits z of shape (H/d) x (W/d) x C, with the graph recorded."""
        x = self._check_input(image)
        for layer in self.features:
            x = T.relu(layer(x))
        return T.transpose(self.head(x), (1, 2, 0))

    def predict(self, image: np.ndarray | Tensor) -> tuple[Tensor, Tensor]:
        """Return (p, z): H x W x C class probabilities and the logits they came from."""
        x = self._check_input(image)
        z = self.forward_logits(x)
        return logits_to_probs(z, (x.shape[1], x.shape[2])), z

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise FormatError(f"expected {len(params)} parameter tensors, got {len(arrays)}")
        for param, array in zip(params, arrays):
            if param.shape != array.shape:
                raise FormatError(f"parameter shape {array.shape} does not match {param.shape}")
            param.data = np.array(array, dtype=np.float64)

    def copy(self) -> SegNet:
        clone = init_params(self.config)
        clone.load_state(self.state())
        return clone

    def __str__(self) -> str:
        cfg = self.config
        widths = "->".join(str(w) for w in cfg.widths)
        return f"SegNet({cfg.input_channels}->{widths}->{cfg.num_classes}, d={cfg.downsample})"


def init_params(config: NetConfig, seed: Optional[int] = None) -> SegNet:
    """Build a SegNet with fan-in scaled uniform weights and zero biases.

    Args:
        config: Architecture.
        seed: Overrides ``config.seed`` when given.
    """
    rng = np.random.default_rng(config.seed if seed is None else seed)
    features: list[ConvLayer] = []
    channels = config.input_channels
    for width, stride in zip(config.widths, config.strides):
        features.append(
            ConvLayer(
                weight=Tensor(kaiming_uniform(rng, (width, channels, 3, 3)), requires_grad=True),
                bias=Tensor(np.zeros(width), requires_grad=True),
                stride=stride,
                padding=1,
            )
        )
        channels = width
    head = ConvLayer(
        weight=Tensor(
            kaiming_uniform(rng, (config.num_classes, channels, 1, 1)), requires_grad=True
        ),
        bias=Tensor(np.zeros(config.num_classes), requires_grad=True),
    )
    return SegNet(config, features, head)


def net_manifest(config: NetConfig) -> dict[str, object]:
    return {
        "kind": "segnet",
        "input_channels": config.input_channels,
        "widths": ",".join(str(w) for w in config.widths),
        "downsample": config.downsample,
        "num_classes": config.num_classes,
        "seed": config.seed,
    }


def config_from_manifest(manifest: dict[str, str]) -> NetConfig:
    try:
        return NetConfig(
            input_channels=int(manifest["input_channels"]),
            widths=tuple(int(w) for w in manifest["widths"].split(",")),
            downsample=int(manifest["downsample"]),
            num_classes=int(manifest["num_classes"]),
            seed=int(manifest["seed"]),
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"incomplete network manifest: {exc}") from exc


def save_segnet(
    path: str | os.PathLike[str], net: SegNet, extra: Optional[dict[str, object]] = None
) -> None:
    """Write a network checkpoint; ``extra`` entries are appended to the manifest."""
    manifest = net_manifest(net.config)
    manifest.update(extra or {})
    save_checkpoint(path, manifest, net.state())
    logger.debug("saved %s to %s", net, path)


def load_segnet(path: str | os.PathLike[str]) -> tuple[SegNet, dict[str, str]]:
    """Read a network checkpoint and return it with its manifest."""
    manifest, arrays = load_checkpoint(path)
    if manifest.get("kind") != "segnet":
        raise FormatError(f"{path}: not a segnet checkpoint (kind={manifest.get('kind')})")
    net = init_params(config_from_manifest(manifest))
    net.load_state(arrays)
    return net, manifest
