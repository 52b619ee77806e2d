"""Procedural street scenes for source/target domain pairs.

Every scene is laid out in horizontal bands, top to bottom:

    sky        top 20-40% of the rows
    building   everything between, with a ragged skyline reaching into the sky band
    road       bottom 25-45% of the rows

Vehicles are rectangles placed inside the road band; poles are 1-2 px wide
vertical strips standing on the road edge.  The geometry rules are the same
for both domains; only the palette, noise, texture and brightness differ.

Each sample draws from its own rng seeded by (spec.seed, sample id), so a
sample does not depend on how many others were generated before it.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, FormatError
from .images import image_to_pixels, load_image, pixels_to_image, save_image
from .models import Domain, DomainSpec, SceneClass, SceneDataset, SceneSample

logger = logging.getLogger(__name__)

NUM_CLASSES = len(SceneClass)
MIN_SIZE = 8

# Texture orientation per class, in radians
_TEXTURE_ANGLES = np.arange(NUM_CLASSES) * (np.pi / NUM_CLASSES)


def _sample_rng(spec: DomainSpec, sample_id: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, sample_id])


def _layout(rng: np.random.Generator, spec: DomainSpec, height: int, width: int) -> np.ndarray:
    """Draw the H x W label map of one scene."""
    label = np.full((height, width), SceneClass.BUILDING, dtype=np.uint8)

    sky_lo, sky_hi = spec.sky_fraction
    sky_rows = int(rng.integers(math.ceil(sky_lo * height), math.floor(sky_hi * height) + 1))
    road_lo, road_hi = spec.road_fraction
    road_rows = int(rng.integers(math.ceil(road_lo * height), math.floor(road_hi * height) + 1))
    road_top = height - road_rows

    label[:sky_rows] = SceneClass.SKY
    label[road_top:] = SceneClass.ROAD

    # Skyline: building blocks of varying width rise into the sky band
    x = 0
    while x < width:
        block = int(rng.integers(4, 11))
        rise = int(rng.integers(0, sky_rows // 3 + 1))
        label[sky_rows - rise : sky_rows, x : x + block] = SceneClass.BUILDING
        x += block

    v_lo, v_hi = spec.vehicles
    for _ in range(int(rng.integers(v_lo, v_hi + 1))):
        v_h = int(rng.integers(2, max(2, road_rows // 2) + 1))
        v_w = min(int(rng.integers(4, 9)), width)
        top = int(rng.integers(road_top, height - v_h + 1))
        left = int(rng.integers(0, width - v_w + 1))
        label[top : top + v_h, left : left + v_w] = SceneClass.VEHICLE

    p_lo, p_hi = spec.poles
    for _ in range(int(rng.integers(p_lo, p_hi + 1))):
        p_w = int(rng.integers(1, 3))
        p_h = int(rng.integers(4, 9))
        left = int(rng.integers(0, width - p_w + 1))
        label[max(0, road_top - p_h) : road_top, left : left + p_w] = SceneClass.POLE

    return label


def _colorize(rng: np.random.Generator, spec: DomainSpec, label: np.ndarray) -> np.ndarray:
    """Paint a label map: palette + oriented sinusoidal texture + Gaussian noise."""
    height, width = label.shape
    palette = np.asarray(spec.palette, dtype=np.float64)
    base = palette[label]

    rows, cols = np.mgrid[0:height, 0:width].astype(np.float64)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    angle = _TEXTURE_ANGLES[label]
    wave = np.sin(
        2.0 * np.pi * spec.texture_freq * (cols * np.cos(angle) + rows * np.sin(angle)) + phase
    )
    noise = rng.normal(0.0, spec.noise_std, size=(height, width, 3))

    image = np.clip(spec.gain * (base + spec.texture_amp * wave[..., None] + noise), 0.0, 1.0)
    image = np.rint(image * 255.0) / 255.0
    return np.ascontiguousarray(np.transpose(image, (2, 0, 1)))


def generate_sample(spec: DomainSpec, sample_id: int, height: int, width: int) -> SceneSample:
    """Generate the scene with index ``sample_id`` of a domain."""
    rng = _sample_rng(spec, sample_id)
    label = _layout(rng, spec, height, width)
    image = _colorize(rng, spec, label)
    return SceneSample(image=image, label=label, domain=spec.domain, id=sample_id)


def generate(
    spec: DomainSpec,
    n: int,
    height: int = 32,
    width: int = 32,
    num_classes: int = NUM_CLASSES,
    downsample: int = 4,
    start_id: int = 0,
) -> SceneDataset:
    """Generate ``n`` scenes of one domain.

    Args:
        spec: Appearance and geometry of the domain.
        n: Number of samples.
        height: Image rows H, divisible by ``downsample``.
        width: Image columns W, divisible by ``downsample``.
        num_classes: Must equal the five scene classes.
        downsample: Downsample factor of the network that will consume the data.
        start_id: Id of the first sample; splits use disjoint id ranges.

    Returns:
        A SceneDataset with samples ``start_id .. start_id + n - 1``.
    """
    if n < 0:
        raise ConfigurationError(f"sample count must be nonnegative, got {n}")
    if num_classes != NUM_CLASSES:
        raise ConfigurationError(
            f"scenes have {NUM_CLASSES} classes, got num_classes={num_classes}"
        )
    if height < MIN_SIZE or width < MIN_SIZE:
        raise ConfigurationError(
            f"scenes need at least {MIN_SIZE}x{MIN_SIZE} pixels, got {height}x{width}"
        )
    if downsample < 1 or height % downsample or width % downsample:
        raise ConfigurationError(
            f"image size {height}x{width} not divisible by downsample factor {downsample}"
        )
    if len(spec.palette) != NUM_CLASSES:
        raise ConfigurationError(f"palette needs {NUM_CLASSES} colours, got {len(spec.palette)}")

    samples = [generate_sample(spec, start_id + i, height, width) for i in range(n)]
    logger.info(
        "generated domain=%s n=%d size=%dx%d seed=%d", spec.domain, n, height, width, spec.seed
    )
    return SceneDataset(domain=spec.domain, samples=samples, spec=spec)


# ------------------------------------------------------------------- storage


def spec_to_text(spec: DomainSpec) -> str:
    """Echo a DomainSpec as key=value lines."""
    lines = []
    for f in fields(spec):
        value = getattr(spec, f.name)
        if f.name == "palette":
            text = ";".join(",".join(repr(c) for c in rgb) for rgb in value)
        elif isinstance(value, tuple):
            text = ",".join(repr(v) for v in value)
        elif isinstance(value, Domain):
            text = value.value
        else:
            text = repr(value)
        lines.append(f"{f.name}={text}")
    return "\n".join(lines) + "\n"


def spec_from_text(entries: dict[str, str]) -> DomainSpec:
    """Rebuild a DomainSpec from manifest entries."""
    try:
        domain = Domain(entries["domain"])
        palette = tuple(
            tuple(float(c) for c in rgb.split(",")) for rgb in entries["palette"].split(";")
        )
        spec = DomainSpec(domain=domain, palette=palette)  # type: ignore[arg-type]
        updates: dict[str, object] = {}
        for f in fields(spec):
            if f.name in ("domain", "palette") or f.name not in entries:
                continue
            default = getattr(spec, f.name)
            raw = entries[f.name]
            if isinstance(default, tuple):
                kind = type(default[0])
                updates[f.name] = tuple(kind(v) for v in raw.split(","))
            else:
                updates[f.name] = type(default)(raw)
        return replace(spec, **updates)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"incomplete domain manifest: {exc}") from exc


def save_dataset(dataset: SceneDataset, path: str | os.PathLike[str]) -> None:
    """Write ``images/NNNN.ppm``, ``labels/NNNN.pgm`` and ``manifest.txt`` under ``path``."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    for sample in dataset.samples:
        save_image(root / "images" / f"{sample.id:04d}.ppm", image_to_pixels(sample.image))
        save_image(root / "labels" / f"{sample.id:04d}.pgm", sample.label.astype(np.uint8))

    header = [f"count={len(dataset)}"]
    if dataset.samples:
        first = dataset.samples[0]
        header += [f"first_id={first.id}", f"height={first.height}", f"width={first.width}"]
    spec = dataset.spec or DomainSpec(domain=dataset.domain, palette=())
    text = "\n".join(header) + "\n" + spec_to_text(spec)
    (root / "manifest.txt").write_text(text, encoding="utf-8")
    logger.debug("saved %s to %s", dataset, root)


def read_manifest(path: str | os.PathLike[str]) -> dict[str, str]:
    manifest_path = Path(path) / "manifest.txt"
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise FormatError(
            f"{manifest_path}: cannot read dataset manifest ({exc.strerror})"
        ) from exc
    entries: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise FormatError(f"{manifest_path}: malformed line {line!r}")
        entries[key] = value
    return entries


def load_dataset(path: str | os.PathLike[str]) -> SceneDataset:
    """Load a dataset directory written by ``save_dataset``."""
    root = Path(path)
    entries = read_manifest(root)
    try:
        count = int(entries["count"])
        first_id = int(entries.get("first_id", "0"))
        domain = Domain(entries["domain"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{root}/manifest.txt: bad dataset header ({exc})") from exc
    spec = spec_from_text(entries) if entries.get("palette") else None

    samples: list[SceneSample] = []
    for sample_id in range(first_id, first_id + count):
        pixels = load_image(root / "images" / f"{sample_id:04d}.ppm", ndim=3)
        label = load_image(root / "labels" / f"{sample_id:04d}.pgm", ndim=2)
        if pixels.ndim != 3 or label.ndim != 2 or pixels.shape[:2] != label.shape:
            raise FormatError(f"{root}: image/label shape mismatch for sample {sample_id}")
        if label.max(initial=0) >= NUM_CLASSES:
            raise FormatError(f"{root}: label map {sample_id} has out-of-range classes")
        samples.append(SceneSample(pixels_to_image(pixels), label, domain, sample_id))
    return SceneDataset(domain=domain, samples=samples, spec=spec)
