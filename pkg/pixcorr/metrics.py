"""Evaluation: IoU / mIoU, entropy of correct vs incorrect pixels, similarity maps.

All functions here are read-only over predictions and labels.  Target-domain
ground truth is only ever consumed in this module.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from . import tensor as T
from .errors import ClassNotPredictedError, DimensionError
from .models import EntropyStats, IoUReport, SceneDataset
from .segnet import SegNet
from .tensor import Tensor

logger = logging.getLogger(__name__)


def _as_array(value: np.ndarray | Tensor) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


# ----------------------------------------------------------------------- IoU


def confusion_matrix(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """C x C pixel counts, rows indexed by ground truth, columns by prediction."""
    if pred.shape != gt.shape:
        raise DimensionError(f"prediction shape {pred.shape} != ground truth shape {gt.shape}")
    gt = gt.astype(np.int64).ravel()
    pred = pred.astype(np.int64).ravel()
    valid = (gt >= 0) & (gt < num_classes)
    index = num_classes * gt[valid] + pred[valid]
    return np.bincount(index, minlength=num_classes**2).reshape(num_classes, num_classes)


def report_from_confusion(confusion: np.ndarray) -> IoUReport:
    """IoU_c = TP / (TP + FP + FN); classes absent from both maps are NaN and skipped."""
    tp = np.diag(confusion).astype(np.float64)
    union = confusion.sum(axis=0) + confusion.sum(axis=1) - tp
    per_class = np.full(tp.shape, np.nan)
    present = union > 0
    per_class[present] = tp[present] / union[present]
    miou = float(per_class[present].mean()) if present.any() else 0.0
    return IoUReport(per_class=per_class, miou=miou, confusion=confusion.copy())


def iou(pred: np.ndarray, gt: np.ndarray, num_classes: Optional[int] = None) -> IoUReport:
    """IoU report of one H x W argmax map against H x W labels."""
    if num_classes is None:
        num_classes = int(max(pred.max(initial=0), gt.max(initial=0))) + 1
    return report_from_confusion(confusion_matrix(pred, gt, num_classes))


class ConfusionMeter:
    """Accumulates a dataset-level confusion matrix."""

    def __init__(self, num_classes: int) -> None:
        self.num_classes = num_classes
        self.confusion = np.zeros((num_classes, num_classes), dtype=np.int64)

    def add(self, pred: np.ndarray, gt: np.ndarray) -> None:
        self.confusion += confusion_matrix(pred, gt, self.num_classes)

    def reset(self) -> None:
        self.confusion[:] = 0

    def report(self) -> IoUReport:
        return report_from_confusion(self.confusion)


# ------------------------------------------------------------------- entropy


def pixel_entropy(p: np.ndarray | Tensor) -> np.ndarray:
    """Shannon entropy (natural log) of every pixel's class distribution."""
    probs = _as_array(p)
    safe = np.where(probs > 0, probs, 1.0)
    return -(probs * np.log(safe)).sum(axis=-1)


def _group_mean(values: np.ndarray) -> float:
    return float(values.mean()) if values.size else float("nan")


def entropy_analysis(p: np.ndarray | Tensor, gt: np.ndarray) -> EntropyStats:
    """Mean entropy of correctly and incorrectly classified pixels of one image.

    Each group is normalized by its own pixel count; an empty group is NaN.
    """
    probs = _as_array(p)
    if probs.shape[:-1] != gt.shape:
        raise DimensionError(f"probabilities {probs.shape} do not match labels {gt.shape}")
    entropy = pixel_entropy(probs)
    correct = probs.argmax(axis=-1) == gt
    stats = (_group_mean(entropy[correct]), _group_mean(entropy[~correct]))
    return EntropyStats(mean_correct=stats[0], mean_incorrect=stats[1], per_image=[stats])


def merge_entropy(stats: Iterable[EntropyStats]) -> EntropyStats:
    """Average per-image group entropies over the images where each group exists."""
    per_image = [pair for s in stats for pair in s.per_image]
    correct = np.array([c for c, _ in per_image if not np.isnan(c)])
    incorrect = np.array([i for _, i in per_image if not np.isnan(i)])
    return EntropyStats(_group_mean(correct), _group_mean(incorrect), per_image)


# ------------------------------------------------------------ similarity maps


def _unit_rows(v: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    return v / np.where(norms > 0, norms, 1.0)


def pixel_similarity_map(v: np.ndarray | Tensor) -> np.ndarray:
    """ReLU'd cosine self-similarity of hw x C rows, without row normalization.

    One-hot rows give exactly the class-equality indicator matrix.
    """
    rows = _as_array(v).astype(np.float64)
    if rows.ndim != 2:
        raise DimensionError(f"pixel_similarity_map expects hw x C rows, got shape {rows.shape}")
    unit = _unit_rows(rows)
    return np.clip(unit @ unit.T, 0.0, 1.0)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """... x C one-hot encoding; out-of-range labels (IGNORE) become all-zero rows."""
    labels = np.asarray(labels).astype(np.int64)
    valid = (labels >= 0) & (labels < num_classes)
    encoded = np.zeros(labels.shape + (num_classes,))
    encoded[valid, labels[valid]] = 1.0
    return encoded


def nearest_resize_labels(labels: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Nearest-neighbour resize of an H x W label map to h x w (source index floor(i * H / h))."""
    height, width = labels.shape
    rows = (np.arange(size[0]) * height) // size[0]
    cols = (np.arange(size[1]) * width) // size[1]
    return labels[np.ix_(rows, cols)]


def ground_truth_similarity(
    labels: np.ndarray, size: tuple[int, int], num_classes: int
) -> np.ndarray:
    """Pixel similarity of nearest-resized one-hot ground truth at logit resolution."""
    small = nearest_resize_labels(labels, size)
    return pixel_similarity_map(one_hot(small, num_classes).reshape(-1, num_classes))


@dataclass
class AttentionVisualization:
    """Similarity of the most confident pixel of a class to every other pixel.

    Attributes:
        class_index: The visualized class.
        anchor: (row, col) of the anchor pixel at logit resolution.
        anchor_full: The anchor mapped to full resolution (align-corners).
        similarity: h x w cosine similarities to the anchor.
        heatmap: ``similarity`` bilinearly upsampled to H x W.
    """

    class_index: int
    anchor: tuple[int, int]
    anchor_full: tuple[int, int]
    similarity: np.ndarray
    heatmap: np.ndarray


def attention_visualization(
    z: np.ndarray | Tensor, class_index: int, size: tuple[int, int]
) -> AttentionVisualization:
    """Anchor on the max-confidence pixel of ``class_index`` and map its similarities.

    Raises:
        ClassNotPredictedError: No pixel of z is argmax-classified as the class.
    """
    logits = _as_array(z)
    if logits.ndim != 3:
        raise DimensionError(f"expected h x w x C logits, got shape {logits.shape}")
    h, w, c = logits.shape
    with T.no_grad():
        probs = T.softmax(Tensor(logits), axis=-1).data
    candidates = probs.argmax(axis=-1) == class_index
    if not candidates.any():
        raise ClassNotPredictedError(class_index)
    confidence = np.where(candidates, probs[..., class_index], -np.inf)
    flat_anchor = int(np.argmax(confidence))
    anchor = (flat_anchor // w, flat_anchor % w)

    unit = _unit_rows(logits.reshape(h * w, c))
    similarity = np.clip(unit @ unit[flat_anchor], -1.0, 1.0).reshape(h, w)
    with T.no_grad():
        heatmap = T.bilinear_upsample(Tensor(similarity[None]), size).data[0]
    scale_r = (size[0] - 1) / (h - 1) if h > 1 else 0.0
    scale_c = (size[1] - 1) / (w - 1) if w > 1 else 0.0
    anchor_full = (int(round(anchor[0] * scale_r)), int(round(anchor[1] * scale_c)))
    return AttentionVisualization(class_index, anchor, anchor_full, similarity, heatmap)


# ---------------------------------------------------------------- evaluation


@dataclass
class EvalResult:
    """IoU and entropy of a network over one evaluation split."""

    iou: IoUReport
    entropy: EntropyStats

    @property
    def miou(self) -> float:
        return self.iou.miou


def evaluate(net: SegNet, dataset: SceneDataset) -> EvalResult:
    """Predict every sample and score it against its ground truth."""
    meter = ConfusionMeter(net.config.num_classes)
    stats: list[EntropyStats] = []
    with T.no_grad():
        for sample in dataset.samples:
            p, _ = net.predict(sample.image)
            meter.add(p.data.argmax(axis=-1), sample.label)
            stats.append(entropy_analysis(p, sample.label))
    result = EvalResult(meter.report(), merge_entropy(stats))
    logger.debug("evaluated %s on %s: %s, %s", net, dataset, result.iou, result.entropy)
    return result
