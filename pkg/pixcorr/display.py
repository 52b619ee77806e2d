"""Rendering of run results: CSV tables, pixmaps and the text summary.

Report directory layout::

    generations.csv    one row per (generation, variant)
    ablation.csv       first-generation rows with per-class IoU
    entropy.csv        correct / incorrect entropy per (generation, variant)
    summary.txt        text overview of the run
    NNNN-image.ppm     eval image
    NNNN-gt.ppm        ground truth, colorized
    NNNN-pred.ppm      prediction, colorized
    NNNN-gtsim.pgm     ground-truth pixel similarity map (hw x hw)
    NNNN-sim.pgm       pixel similarity of the network logits z
    NNNN-sim-zp.pgm    same for z' and z'' (-zpp) when a module is given
    NNNN-sim-<variant>.pgm, NNNN-sim-compare.pgm
                       per-variant maps and all of them side by side
    NNNN-att-<class>.pgm  similarity of the class anchor to every pixel

Heatmaps are min-max scaled to 8 bits; a ``.txt`` sidecar next to each one
holds the true minimum and maximum, and for attention maps the anchor pixel
(``anchor`` at image and ``anchor_logit`` at logit resolution).
"""

from __future__ import annotations

import logging
import math
import os
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ClassNotPredictedError, FormatError
from .images import image_to_pixels, save_image
from .metrics import attention_visualization, ground_truth_similarity, pixel_similarity_map
from .models import IGNORE, SceneClass, SceneDataset, Variant
from .sam import SamModule, flatten_logits
from .segnet import SegNet
from .trainer import GenerationRow

logger = logging.getLogger(__name__)

# Colours of SceneClass members, in index order
PALETTE = np.array(
    [
        [70, 130, 180],  # sky
        [128, 64, 128],  # road
        [70, 70, 70],  # building
        [0, 0, 142],  # vehicle
        [220, 220, 0],  # pole
    ],
    dtype=np.uint8,
)

GENERATIONS_FILE = "generations.csv"
_CLASS_NAMES = [c.label for c in SceneClass]
GENERATIONS_HEADER = ",".join(
    ["generation", "variant", "miou", "pixel_accuracy", "coverage",
     "entropy_correct", "entropy_incorrect"]
    + [f"iou_{name}" for name in _CLASS_NAMES]
)


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"


def colorize(labels: np.ndarray) -> np.ndarray:
    """H x W class map to H x W x 3 uint8; IGNORE and unknown classes are black."""
    out = np.zeros(labels.shape + (3,), dtype=np.uint8)
    known = (labels < len(PALETTE)) & (labels != IGNORE)
    out[known] = PALETTE[labels[known]]
    return out


def scale_heatmap(values: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Linear min-max scaling to uint8; a constant map becomes all zeros."""
    lo, hi = float(values.min()), float(values.max())
    if hi > lo:
        scaled = np.rint((values - lo) / (hi - lo) * 255.0)
    else:
        scaled = np.zeros_like(values)
    return scaled.astype(np.uint8), lo, hi


def write_heatmap(
    path: str | os.PathLike[str],
    values: np.ndarray,
    extra: Optional[Mapping[str, str]] = None,
) -> Path:
    """Write ``values`` as a P5 heatmap with a min/max sidecar; returns the sidecar path.

    ``extra`` entries are appended to the sidecar as ``key=value`` lines.
    """
    path = Path(path)
    pixels, lo, hi = scale_heatmap(values)
    save_image(path, pixels)
    entries = {"min": f"{lo:.6g}", "max": f"{hi:.6g}", **(extra or {})}
    sidecar = path.with_suffix(".txt")
    sidecar.write_text("".join(f"{k}={v}\n" for k, v in entries.items()), encoding="utf-8")
    return sidecar


# -------------------------------------------------------------------- tables


def _per_class(row: GenerationRow) -> list[float]:
    values = list(row.per_class) if row.per_class.size else []
    return values + [math.nan] * (len(_CLASS_NAMES) - len(values))


def render_generations_csv(rows: Sequence[GenerationRow]) -> str:
    lines = [GENERATIONS_HEADER]
    for row in rows:
        values = [
            row.miou,
            row.pixel_accuracy,
            row.coverage,
            row.entropy_correct,
            row.entropy_incorrect,
            *_per_class(row),
        ]
        lines.append(",".join([str(row.generation), str(row.variant), *(_fmt(v) for v in values)]))
    return "\n".join(lines) + "\n"


def parse_generations_csv(text: str, source: str = GENERATIONS_FILE) -> list[GenerationRow]:
    lines = text.splitlines()
    if not lines or lines[0] != GENERATIONS_HEADER:
        raise FormatError(f"{source}: not a generations table")
    rows: list[GenerationRow] = []
    for line in lines[1:]:
        if not line.strip():
            continue
        parts = line.split(",")
        try:
            numbers = [float(v) for v in parts[2:]]
            rows.append(
                GenerationRow(
                    int(parts[0]), Variant(parts[1]), *numbers[:5], np.array(numbers[5:])
                )
            )
        except (ValueError, TypeError) as exc:
            raise FormatError(f"{source}: malformed row {line!r}") from exc
    return rows


def render_ablation_csv(rows: Sequence[GenerationRow]) -> str:
    """First-generation comparison of the variants."""
    header = ["variant", "title", "miou"] + [f"iou_{name}" for name in _CLASS_NAMES]
    lines = [",".join(header)]
    for row in rows:
        if row.generation != 1:
            continue
        cells = [row.miou, *_per_class(row)]
        lines.append(",".join([str(row.variant), row.variant.title, *(_fmt(v) for v in cells)]))
    return "\n".join(lines) + "\n"


def render_entropy_csv(rows: Sequence[GenerationRow]) -> str:
    lines = ["generation,variant,entropy_correct,entropy_incorrect,gap"]
    for row in rows:
        gap = row.entropy_incorrect - row.entropy_correct
        values = (row.entropy_correct, row.entropy_incorrect, gap)
        lines.append(",".join([str(row.generation), str(row.variant), *(_fmt(v) for v in values)]))
    return "\n".join(lines) + "\n"


def render_run_summary(rows: Sequence[GenerationRow], title: str = "pixcorr run") -> str:
    """Text overview: one block per generation, best variant marked with ``*``."""
    parts: list[str] = []
    parts.append("=" * 60)
    parts.append(f"  {title}")
    gens = sorted({row.generation for row in rows})
    variants = list(dict.fromkeys(row.variant for row in rows))
    parts.append(f"  Generations: {len(gens)}  Variants: {', '.join(v.title for v in variants)}")
    parts.append("=" * 60)

    for g in gens:
        parts.append("")
        parts.append(f"--- GENERATION {g} ---")
        group = [row for row in rows if row.generation == g]
        scored = [row.miou for row in group if not math.isnan(row.miou)]
        best = max(scored) if scored else math.nan
        for row in group:
            mark = "*" if row.miou == best else " "
            coverage = "" if math.isnan(row.coverage) else f"  coverage {row.coverage * 100:5.1f}%"
            parts.append(
                f" {mark} {row.variant.title:<12} mIoU {row.miou * 100:6.2f}"
                f"  acc {row.pixel_accuracy * 100:6.2f}{coverage}"
            )
            parts.append(
                f"     entropy correct {row.entropy_correct:.4f}"
                f"  incorrect {row.entropy_incorrect:.4f}"
            )

    parts.append("")
    parts.append("=" * 60)
    return "\n".join(parts)


# ------------------------------------------------------------------ pixmaps


def _pair(point: tuple[int, int]) -> str:
    return f"{point[0]},{point[1]}"


def similarity_maps(
    net: SegNet, image: np.ndarray, sam: Optional[SamModule] = None
) -> dict[str, np.ndarray]:
    """hw x hw pixel similarity of the logits z, plus z' and z'' when a module is given."""
    with T.no_grad():
        _, z = net.predict(image)
        rows = flatten_logits(z)
        maps = {"z": pixel_similarity_map(rows)}
        if sam is not None:
            z_prime, z_double_prime, _ = sam.attend(rows)
            maps["zp"] = pixel_similarity_map(z_prime)
            maps["zpp"] = pixel_similarity_map(z_double_prime)
    return maps


def side_by_side(panels: Sequence[np.ndarray]) -> np.ndarray:
    """Join equally tall maps left to right with a one-pixel gap of the minimum value."""
    low = min(float(p.min()) for p in panels)
    gap = np.full((panels[0].shape[0], 1), low)
    parts: list[np.ndarray] = []
    for k, panel in enumerate(panels):
        if k:
            parts.append(gap)
        parts.append(panel)
    return np.hstack(parts)


def _write_sample_visuals(
    root: Path,
    net: SegNet,
    dataset: SceneDataset,
    count: int,
    sam: Optional[SamModule],
    variant_nets: Mapping[Variant, SegNet],
) -> list[Path]:
    written: list[Path] = []
    num_classes = net.config.num_classes
    for sample in dataset.samples[:count]:
        stem = f"{sample.id:04d}"
        with T.no_grad():
            p, z = net.predict(sample.image)
        pred = p.data.argmax(axis=-1).astype(np.uint8)
        size = (sample.height, sample.width)

        for name, pixels in (
            ("image.ppm", image_to_pixels(sample.image)),
            ("gt.ppm", colorize(sample.label)),
            ("pred.ppm", colorize(pred)),
        ):
            written.append(save_image(root / f"{stem}-{name}", pixels))

        gt_sim = ground_truth_similarity(sample.label, z.shape[:2], num_classes)
        write_heatmap(root / f"{stem}-gtsim.pgm", gt_sim)
        written.append(root / f"{stem}-gtsim.pgm")

        for key, values in similarity_maps(net, sample.image, sam).items():
            name = "sim.pgm" if key == "z" else f"sim-{key}.pgm"
            write_heatmap(root / f"{stem}-{name}", values)
            written.append(root / f"{stem}-{name}")

        if variant_nets:
            panels = []
            for variant, variant_net in variant_nets.items():
                values = similarity_maps(variant_net, sample.image)["z"]
                write_heatmap(root / f"{stem}-sim-{variant}.pgm", values)
                written.append(root / f"{stem}-sim-{variant}.pgm")
                panels.append(values)
            order = ",".join(str(v) for v in variant_nets)
            write_heatmap(root / f"{stem}-sim-compare.pgm", side_by_side(panels), {"panels": order})
            written.append(root / f"{stem}-sim-compare.pgm")

        for c in range(num_classes):
            name = _CLASS_NAMES[c] if c < len(_CLASS_NAMES) else str(c)
            try:
                vis = attention_visualization(z, c, size)
            except ClassNotPredictedError:
                logger.debug("sample=%d class=%s not predicted, no heatmap", sample.id, name)
                continue
            anchors = {"anchor": _pair(vis.anchor_full), "anchor_logit": _pair(vis.anchor)}
            write_heatmap(root / f"{stem}-att-{name}.pgm", vis.heatmap, anchors)
            written.append(root / f"{stem}-att-{name}.pgm")
    return written


def emit_report(
    report_dir: str | os.PathLike[str],
    rows: Sequence[GenerationRow],
    net: Optional[SegNet] = None,
    eval_ds: Optional[SceneDataset] = None,
    samples: int = 4,
    sam: Optional[SamModule] = None,
    variant_nets: Optional[Mapping[Variant, SegNet]] = None,
) -> list[Path]:
    """Write tables, the summary and (with a network) per-sample visualizations.

    Output bytes depend only on the inputs.

    Args:
        report_dir: Directory to write into; created if missing.
        rows: Generation results.
        net: Network whose predictions and similarity maps are drawn.
        eval_ds: Split the visualized samples come from.
        samples: Number of leading samples of ``eval_ds`` to draw.
        sam: Frozen module; adds the z' and z'' similarity maps of ``net``.
        variant_nets: Networks compared side by side, in panel order.

    Returns:
        Paths of the written tables and pixmaps.
    """
    root = Path(report_dir)
    try:
        root.mkdir(parents=True, exist_ok=True)
        tables = {
            GENERATIONS_FILE: render_generations_csv(rows),
            "ablation.csv": render_ablation_csv(rows),
            "entropy.csv": render_entropy_csv(rows),
            "summary.txt": render_run_summary(rows) + "\n",
        }
        written: list[Path] = []
        for name, text in tables.items():
            (root / name).write_text(text, encoding="utf-8")
            written.append(root / name)
        if net is not None and eval_ds is not None and samples > 0:
            written += _write_sample_visuals(
                root, net, eval_ds, samples, sam, dict(variant_nets or {})
            )
    except OSError as exc:
        raise FormatError(f"cannot write report to {exc.filename or root}: {exc.strerror}") from exc
    logger.info("report dir=%s files=%d", root, len(written))
    return written
