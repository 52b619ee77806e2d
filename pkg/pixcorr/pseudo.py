"""Class-wise confidence thresholds and pseudo labels for the target domain.

For every class c the threshold is the median confidence of all target pixels
the network assigns to c, capped at ``MAX_THRESHOLD``.  A pixel keeps its
argmax label only when its confidence is strictly above that class's
threshold; everything else becomes ``IGNORE``.

The pseudo-label store on disk is a directory of ``NNNN.pgm`` label maps (one
per target sample id, 255 = IGNORE) plus ``thresholds.txt``.
"""

from __future__ import annotations

import logging
import math
import os
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, FormatError
from .images import load_image, save_image
from .models import (
    IGNORE,
    MAX_THRESHOLD,
    UNATTAINABLE,
    ClassThresholds,
    PseudoLabelMap,
    SceneDataset,
)
from .segnet import SegNet
from .tensor import Tensor

logger = logging.getLogger(__name__)

THRESHOLDS_FILE = "thresholds.txt"


def _as_probs(p: np.ndarray | Tensor) -> np.ndarray:
    return p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)


def lower_median(values: np.ndarray) -> float:
    """Median of a nonempty list; the lower middle value for even lengths."""
    ordered = np.sort(values)
    return float(ordered[(ordered.size - 1) // 2])


def thresholds_from_probs(
    probs: Iterable[np.ndarray | Tensor], num_classes: int
) -> ClassThresholds:
    """Thresholds from precomputed H x W x C probability maps.

    Classes no pixel is assigned to get ``UNATTAINABLE``.
    """
    confidences: list[list[np.ndarray]] = [[] for _ in range(num_classes)]
    seen = 0
    for p in probs:
        array = _as_probs(p)
        pred = array.argmax(axis=-1)
        conf = array.max(axis=-1)
        for c in range(num_classes):
            confidences[c].append(conf[pred == c])
        seen += 1
    if not seen:
        raise ConfigurationError("cannot compute thresholds on an empty target dataset")

    values = np.full(num_classes, UNATTAINABLE)
    for c, chunks in enumerate(confidences):
        merged = np.concatenate(chunks)
        if merged.size:
            values[c] = min(lower_median(merged), MAX_THRESHOLD)
    return ClassThresholds(values)


def compute_thresholds(net: SegNet, images: Sequence[np.ndarray]) -> ClassThresholds:
    """Per-class thresholds of ``net`` over the whole target training set.

    Args:
        net: The pseudo-labeling network.
        images: Target training images (ch x H x W); labels are never needed.

    Returns:
        tau with tau^c = min(median confidence of pixels predicted as c, 0.9).
    """
    if not len(images):
        raise ConfigurationError("cannot compute thresholds on an empty target dataset")
    with T.no_grad():
        probs = [net.predict(image)[0].data for image in images]
    thresholds = thresholds_from_probs(probs, net.config.num_classes)
    logger.info("thresholds images=%d tau=%s", len(images), thresholds)
    return thresholds


def label_from_probs(p: np.ndarray | Tensor, thresholds: ClassThresholds) -> PseudoLabelMap:
    """Gate the argmax of an H x W x C map by the threshold of its class (strict ``>``)."""
    array = _as_probs(p)
    pred = array.argmax(axis=-1)
    conf = array.max(axis=-1)
    keep = conf > thresholds.values[pred]
    labels = np.where(keep, pred, IGNORE).astype(np.uint8)
    return PseudoLabelMap(labels)


def generate_pseudo_labels(
    net: SegNet, image: np.ndarray, thresholds: ClassThresholds
) -> PseudoLabelMap:
    """Full-resolution pseudo labels of one target image."""
    with T.no_grad():
        p, _ = net.predict(image)
    return label_from_probs(p, thresholds)


def pseudo_label_stats(pseudo: PseudoLabelMap, num_classes: int = 5) -> tuple[float, np.ndarray]:
    """Return (coverage, per-class counts): the labeled fraction and pixels per class."""
    labels = pseudo.labels
    labeled = labels[labels != IGNORE].astype(np.int64)
    coverage = labeled.size / labels.size if labels.size else 0.0
    counts = np.bincount(labeled, minlength=num_classes)[:num_classes]
    return float(coverage), counts


# --------------------------------------------------------------------- store


def save_pseudo_store(
    path: str | os.PathLike[str],
    dataset: SceneDataset,
    labels: Sequence[PseudoLabelMap],
    thresholds: ClassThresholds,
) -> None:
    """Write one graymap per target sample and the threshold sidecar."""
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    for sample, pseudo in zip(dataset.samples, labels, strict=True):
        save_image(root / f"{sample.id:04d}.pgm", pseudo.labels)
    text = " ".join("inf" if math.isinf(v) else repr(float(v)) for v in thresholds.values)
    (root / THRESHOLDS_FILE).write_text(text + "\n", encoding="utf-8")


def load_thresholds(path: str | os.PathLike[str]) -> ClassThresholds:
    sidecar = Path(path) / THRESHOLDS_FILE
    if not sidecar.exists():
        raise ConfigurationError(f"missing pseudo-label store: {Path(path)} (no {THRESHOLDS_FILE})")
    try:
        values = [float(v) for v in sidecar.read_text(encoding="utf-8").split()]
    except ValueError as exc:
        raise FormatError(f"{sidecar}: malformed thresholds") from exc
    return ClassThresholds(np.array(values))


def load_pseudo_store(
    path: str | os.PathLike[str], dataset: SceneDataset
) -> tuple[list[PseudoLabelMap], ClassThresholds]:
    """Read the pseudo labels of every sample of ``dataset``.

    Raises:
        ConfigurationError: The store or one of its label maps does not exist.
    """
    root = Path(path)
    thresholds = load_thresholds(root)
    labels: list[PseudoLabelMap] = []
    for sample in dataset.samples:
        file = root / f"{sample.id:04d}.pgm"
        if not file.exists():
            raise ConfigurationError(f"missing pseudo labels for target sample {sample.id}: {file}")
        grid = load_image(file, ndim=2)
        if grid.shape != sample.label.shape:
            raise FormatError(f"{file}: pseudo labels {grid.shape} do not match image size")
        labels.append(PseudoLabelMap(grid))
    return labels, thresholds


def build_pseudo_store(
    net: SegNet, dataset: SceneDataset, path: str | os.PathLike[str]
) -> tuple[list[PseudoLabelMap], ClassThresholds]:
    """Compute thresholds and pseudo labels for ``dataset`` and write the store."""
    images = dataset.images()
    thresholds = compute_thresholds(net, images)
    labels = [generate_pseudo_labels(net, image, thresholds) for image in images]
    save_pseudo_store(path, dataset, labels, thresholds)
    stats = [pseudo_label_stats(m, net.config.num_classes) for m in labels]
    coverage = float(np.mean([s[0] for s in stats])) if stats else 0.0
    counts = sum((s[1] for s in stats), np.zeros(net.config.num_classes, dtype=np.int64))
    logger.info("pseudo store=%s coverage=%.4f counts=%s", path, coverage, counts.tolist())
    return labels, thresholds
