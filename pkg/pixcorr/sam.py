"""Self-attention module over segmentation logits.

Given logits z flattened to hw x C (row-major over h, w):

    A   = Conv1x1(z)                      (or z itself without the conv)
    M   = A A^T / (||A|| ||A||^T + eps)   cosine similarity, hw x hw
    M'  = row-L1-normalize(ReLU(M))
    z'  = M' z
    z'' = z + z'

The module is trained on the source domain only, then frozen and used to
produce detached targets for the self-attention loss.
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
from .segnet import kaiming_uniform
from .tensor import EPS, Tensor

logger = logging.getLogger(__name__)


@dataclass
class AttentionMap:
    """Row-stochastic hw x hw attention weights M'.

    Rows whose similarities were all nonpositive stay all zero.
    """

    matrix: Tensor

    def row_sums(self) -> np.ndarray:
        return self.matrix.data.sum(axis=1)

    def zero_rows(self) -> np.ndarray:
        return ~(self.matrix.data > 0).any(axis=1)


def cosine_map(a: Tensor) -> Tensor:
    """Pairwise cosine similarity of the rows of an hw x C tensor."""
    if a.ndim != 2:
        raise DimensionError(f"cosine_map expects hw x C, got shape {a.shape}")
    norms = T.row_l2_norm(a)
    return T.div(T.matmul(a, a.T), T.add(T.matmul(norms, norms.T), EPS))


def normalize_map(m: Tensor) -> AttentionMap:
    """Drop negative similarities and L1-normalize every row."""
    return AttentionMap(T.row_l1_normalize(T.relu(m)))


def flatten_logits(z: Tensor) -> Tensor:
    """h x w x C logits to hw x C rows in row-major (h, w) order."""
    if z.ndim != 3:
        raise DimensionError(f"expected h x w x C logits, got shape {z.shape}")
    h, w, c = z.shape
    return T.reshape(z, (h * w, c))


class SamModule:
    """Self-attention module with the "No Conv" and "No skip-connection" switches.

    Attributes:
        num_classes: C; the 1x1 conv maps C channels to C channels.
        use_conv: Transform z with the 1x1 conv before the similarity.
        use_skip: Downstream consumers use z'' (True) or z' (False).
        weight: C x C conv weight, None without the conv.
        bias: C conv bias, None without the conv.
    """

    def __init__(
        self,
        num_classes: int,
        use_conv: bool = True,
        use_skip: bool = True,
        weight: Optional[Tensor] = None,
        bias: Optional[Tensor] = None,
    ) -> None:
        self.num_classes = num_classes
        self.use_conv = use_conv
        self.use_skip = use_skip
        if use_conv and (weight is None or bias is None):
            raise DimensionError("a SAM with the 1x1 conv needs weight and bias")
        self.weight = weight if use_conv else None
        self.bias = bias if use_conv else None
        if self.weight is not None and self.weight.shape != (num_classes, num_classes):
            raise DimensionError(f"SAM conv weight must be {num_classes}x{num_classes}")
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def parameters(self) -> list[Tensor]:
        if self.weight is None or self.bias is None:
            return []
        return [self.weight, self.bias]

    def trainable_parameters(self) -> list[Tensor]:
        return [] if self._frozen else self.parameters()

    def freeze(self) -> None:
        """Stop updates: parameters no longer require or receive gradients."""
        self._frozen = True
        for param in self.parameters():
            param.requires_grad = False
            param.zero_grad()

    def unfreeze(self) -> None:
        self._frozen = False
        for param in self.parameters():
            param.requires_grad = True

    def transform(self, z: Tensor) -> Tensor:
        """A = Conv1x1(z); on flattened rows a 1x1 conv is z W^T + b."""
        if self.weight is None or self.bias is None:
            return z
        return T.add(T.matmul(z, self.weight.T), self.bias)

    def attend(self, z: Tensor) -> tuple[Tensor, Tensor, AttentionMap]:
        """Self-attend hw x C logits.

        Returns:
            (z', z'', M') with z' = M' z and z'' = z + z'.
        """
        if z.ndim != 2 or z.shape[1] != self.num_classes:
            raise DimensionError(f"attend expects hw x {self.num_classes}, got shape {z.shape}")
        attention = normalize_map(cosine_map(self.transform(z)))
        z_prime = T.matmul(attention.matrix, z)
        return z_prime, T.add(z, z_prime), attention

    def output(self, z: Tensor) -> Tensor:
        """The logits downstream consumers use: z'' with the skip connection, else z'."""
        z_prime, z_double_prime, _ = self.attend(z)
        return z_double_prime if self.use_skip else z_prime

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise FormatError(f"expected {len(params)} SAM tensors, got {len(arrays)}")
        for param, array in zip(params, arrays):
            if param.shape != array.shape:
                raise FormatError(f"SAM tensor shape {array.shape} does not match {param.shape}")
            param.data = np.array(array, dtype=np.float64)

    def __str__(self) -> str:
        parts = [f"C={self.num_classes}"]
        parts.append("conv" if self.use_conv else "no-conv")
        parts.append("skip" if self.use_skip else "no-skip")
        if self._frozen:
            parts.append("frozen")
        return f"SamModule({', '.join(parts)})"


def init_sam(
    num_classes: int, use_conv: bool = True, use_skip: bool = True, seed: int = 0
) -> SamModule:
    """Build a SAM; the conv weight gets the same fan-in init as the network."""
    if not use_conv:
        return SamModule(num_classes, use_conv=False, use_skip=use_skip)
    rng = np.random.default_rng(seed)
    weight = Tensor(kaiming_uniform(rng, (num_classes, num_classes)), requires_grad=True)
    bias = Tensor(np.zeros(num_classes), requires_grad=True)
    return SamModule(num_classes, use_conv=True, use_skip=use_skip, weight=weight, bias=bias)


def save_sam(
    path: str | os.PathLike[str], sam: SamModule, extra: Optional[dict[str, object]] = None
) -> None:
    manifest: dict[str, object] = {
        "kind": "sam",
        "num_classes": sam.num_classes,
        "use_conv": int(sam.use_conv),
        "use_skip": int(sam.use_skip),
    }
    manifest.update(extra or {})
    save_checkpoint(path, manifest, sam.state())
    logger.debug("saved %s to %s", sam, path)


def load_sam(path: str | os.PathLike[str]) -> tuple[SamModule, dict[str, str]]:
    """Read a SAM checkpoint; the returned module is unfrozen."""
    manifest, arrays = load_checkpoint(path)
    if manifest.get("kind") != "sam":
        raise FormatError(f"{path}: not a SAM checkpoint (kind={manifest.get('kind')})")
    try:
        num_classes = int(manifest["num_classes"])
        use_conv = manifest["use_conv"] == "1"
        use_skip = manifest["use_skip"] == "1"
    except KeyError as exc:
        raise FormatError(f"{path}: SAM manifest lacks {exc}") from exc
    sam = init_sam(num_classes, use_conv=use_conv, use_skip=use_skip)
    sam.load_state(arrays)
    return sam, manifest
