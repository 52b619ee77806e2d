"""Training objectives.

All losses are means: cross-entropies over (labeled) pixels, the
self-attention losses over logit elements or logit rows.

    seg_s  source cross-entropy against dense labels
    seg_t  target cross-entropy against pseudo labels, IGNORE pixels skipped
    att    distance between z and the frozen module's z' or z''

The combined objective is ``seg_s + seg_t + lam * (att_s + att_t)`` with
``att_s`` dropped for the target-only configuration.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import tensor as T
from .errors import ConfigurationError, DimensionError
from .metrics import one_hot
from .models import AttDomains, AttForm, AttMetric, LossConfig, PseudoLabelMap, SceneSample
from .sam import SamModule, flatten_logits
from .segnet import SegNet, logits_to_probs
from .tensor import EPS, Tensor


def ce_source(p: Tensor, y: np.ndarray) -> Tensor:
    """Mean over pixels of -sum_c y log p for H x W x C probabilities and one-hot labels."""
    if p.shape != y.shape:
        raise DimensionError(f"probabilities {p.shape} do not match one-hot labels {y.shape}")
    pixels = int(np.prod(p.shape[:-1]))
    return T.mul_scalar(T.tsum(T.mul(T.log(p), y)), -1.0 / pixels)


def ce_target(p: Tensor, pseudo: PseudoLabelMap) -> Tensor:
    """Cross-entropy over pixels with a pseudo label; zero when every pixel is IGNORE."""
    if p.shape[:-1] != pseudo.shape:
        raise DimensionError(f"probabilities {p.shape} do not match pseudo labels {pseudo.shape}")
    labeled = int(pseudo.labeled.sum())
    if labeled == 0:
        return Tensor(0.0)
    y = one_hot(pseudo.labels, p.shape[-1])
    return T.mul_scalar(T.tsum(T.mul(T.log(p), y)), -1.0 / labeled)


def att_loss(z: Tensor, z_prime: Tensor, z_double_prime: Tensor, cfg: LossConfig) -> Tensor:
    """Distance from hw x C logits z to the detached reference picked by ``cfg.att_form``.

    Only z carries a gradient; the reference is cut from any graph it came from.
    """
    reference = z_double_prime if cfg.att_form is AttForm.Z_VS_ZPP else z_prime
    if z.shape != reference.shape:
        raise DimensionError(f"att_loss shape mismatch: {z.shape} vs {reference.shape}")
    ref = T.detach(reference)

    if cfg.att_metric is AttMetric.L1:
        return T.abs_mean(T.sub(z, ref))

    rows = z.shape[0] if z.ndim > 1 else 1
    if cfg.att_metric is AttMetric.KL:
        log_q = T.log_softmax(ref, axis=-1).data
        q = np.exp(log_q)
        divergence = T.tsum(T.mul(q, T.sub(log_q, T.log_softmax(z, axis=-1))))
        return T.mul_scalar(divergence, 1.0 / rows)

    # cosine
    dots = T.tsum(T.mul(z, ref), axis=-1, keepdims=True)
    ref_norms = np.linalg.norm(ref.data, axis=-1, keepdims=True)
    cos = T.div(dots, T.add(T.mul(T.row_l2_norm(z), ref_norms), EPS))
    return T.sub(1.0, T.mean(cos))


def attention_references(sam: SamModule, z: Tensor) -> tuple[Tensor, Tensor]:
    """(z', z'') of the frozen module for hw x C logits, outside any graph."""
    with T.no_grad():
        z_prime, z_double_prime, _ = sam.attend(T.detach(z))
    return z_prime, z_double_prime


def attention_term(sam: SamModule, z: Tensor, cfg: LossConfig) -> Tensor:
    """att_loss of h x w x C logits against the frozen module's output."""
    flat = flatten_logits(z)
    z_prime, z_double_prime = attention_references(sam, flat)
    return att_loss(flat, z_prime, z_double_prime, cfg)


@dataclass
class LossTerms:
    """One step's objective and its parts.

    Attributes:
        total: The scalar to backpropagate.
        seg_s: Source cross-entropy.
        seg_t: Target cross-entropy (0 without a target sample).
        att: Unweighted sum of the self-attention terms that were added.
    """

    total: Tensor
    seg_s: float
    seg_t: float = 0.0
    att: float = 0.0


def total_loss(
    source: SceneSample,
    target: Optional[tuple[np.ndarray, PseudoLabelMap]],
    net: SegNet,
    sam: Optional[SamModule],
    cfg: LossConfig,
) -> LossTerms:
    """Combined objective of one source sample and one pseudo-labeled target image.

    Args:
        source: Labeled source sample.
        target: (image, pseudo labels), or None to train on the source alone.
        net: The network being trained.
        sam: The frozen self-attention module; may be None when ``cfg.lam == 0``.
        cfg: Loss form, domains, metric and weight.

    Returns:
        LossTerms whose ``total`` only has SegNet parameters as leaves.
    """
    use_att = cfg.lam > 0
    if use_att and sam is None:
        raise ConfigurationError("a positive lambda needs a self-attention module")
    if use_att and not sam.frozen:  # type: ignore[union-attr]
        raise ConfigurationError("the self-attention module must be frozen during adaptation")

    num_classes = net.config.num_classes
    p_s, z_s = net.predict(source.image)
    seg_s = ce_source(p_s, one_hot(source.label, num_classes))
    total = seg_s
    seg_t_value = att_value = 0.0

    if use_att and cfg.att_domains is AttDomains.BOTH:
        att_s = attention_term(sam, z_s, cfg)  # type: ignore[arg-type]
        total = T.add(total, T.mul_scalar(att_s, cfg.lam))
        att_value += att_s.item()

    if target is not None:
        image, pseudo = target
        p_t, z_t = net.predict(image)
        seg_t = ce_target(p_t, pseudo)
        total = T.add(total, seg_t)
        seg_t_value = seg_t.item()
        if use_att:
            att_t = attention_term(sam, z_t, cfg)  # type: ignore[arg-type]
            total = T.add(total, T.mul_scalar(att_t, cfg.lam))
            att_value += att_t.item()

    return LossTerms(total=total, seg_s=seg_s.item(), seg_t=seg_t_value, att=att_value)


def sam_segmentation_loss(net: SegNet, sam: SamModule, sample: SceneSample) -> Tensor:
    """Source cross-entropy computed on S(U(z'')), or S(U(z')) without the skip connection."""
    z = net.forward_logits(sample.image)
    h, w, c = z.shape
    attended = T.reshape(sam.output(flatten_logits(z)), (h, w, c))
    p = logits_to_probs(attended, (sample.height, sample.width))
    return ce_source(p, one_hot(sample.label, c))
