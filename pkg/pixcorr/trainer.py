"""Training phases and the iterative self-training protocol.

    train_sam          source only: a throwaway SegNet and the self-attention
                       module are trained jointly; only the module is kept
    train_source_only  the "No Pseudo" baseline and first pseudo-labeler
    adapt              a fresh SegNet on source + pseudo-labeled target with
                       the frozen module's self-attention loss
    run_generation_loop  pseudo-label, retrain, repeat

Every phase writes ``last.ckpt`` at each save point (every ``eval_interval``
steps and at the end) and resumes from it when rerun in the same directory.
Samples are visited in an order that depends only on (seed, epoch), so a
resumed run ends with the same bytes as an uninterrupted one.
"""

from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from tqdm import tqdm

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import ConfigurationError, DimensionError, DivergenceError, FormatError
from .losses import LossTerms, sam_segmentation_loss, total_loss
from .metrics import EvalResult, evaluate
from .models import (
    LrPolicy,
    NetConfig,
    Optimizer,
    PseudoLabelMap,
    SceneDataset,
    TrainConfig,
    Variant,
)
from .pseudo import build_pseudo_store, load_pseudo_store, pseudo_label_stats
from .sam import SamModule, init_sam, load_sam, save_sam
from .segnet import SegNet, init_params, save_segnet
from .tensor import Tensor

logger = logging.getLogger(__name__)

LAST_CHECKPOINT = "last.ckpt"
BEST_CHECKPOINT = "best.ckpt"
SAM_CHECKPOINT = "sam.ckpt"
METRICS_FILE = "metrics.csv"
METRICS_HEADER = "step,split,miou,loss_seg_s,loss_seg_t,loss_att,entropy_correct,entropy_incorrect"

PHASE_SAM = "sam"
PHASE_SOURCE_ONLY = "source-only"
PHASE_ADAPT = "adapt"

SOURCE_STREAM = 0
TARGET_STREAM = 1


# ------------------------------------------------------------- schedules


def poly_lr(step: int, cfg: TrainConfig) -> float:
    """base * (1 - step / iterations) ** power, with step clamped to [0, iterations]."""
    progress = min(max(step, 0), cfg.iterations) / cfg.iterations
    return cfg.base_lr * (1.0 - progress) ** cfg.poly_power


def step_lr(step: int, cfg: TrainConfig) -> float:
    return cfg.base_lr * cfg.lr_gamma ** (max(step, 0) // cfg.lr_step_size)


def learning_rate(step: int, cfg: TrainConfig) -> float:
    if cfg.lr_policy is LrPolicy.STEP:
        return step_lr(step, cfg)
    return poly_lr(step, cfg)


# ------------------------------------------------------------- optimizers


def _check_shapes(params: Sequence[np.ndarray], *groups: Sequence[np.ndarray]) -> None:
    for group in groups:
        if len(group) != len(params):
            raise DimensionError(f"expected {len(params)} arrays, got {len(group)}")
        for p, g in zip(params, group):
            if p.shape != g.shape:
                raise DimensionError(f"update shape {g.shape} does not match parameter {p.shape}")


def sgd_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    velocities: Sequence[np.ndarray],
    lr: float,
    weight_decay: float,
    momentum: float,
) -> Sequence[np.ndarray]:
    """In-place SGD with momentum and L2 weight decay.

    v <- momentum * v + g + weight_decay * p;  p <- p - lr * v

    Returns:
        ``params``, updated.
    """
    _check_shapes(params, grads, velocities)
    for p, g, v in zip(params, grads, velocities):
        v *= momentum
        v += g + weight_decay * p
        p -= lr * v
    return params


def adam_step(
    params: Sequence[np.ndarray],
    grads: Sequence[np.ndarray],
    first: Sequence[np.ndarray],
    second: Sequence[np.ndarray],
    t: int,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.99),
    weight_decay: float = 0.0,
    eps: float = 1e-8,
) -> Sequence[np.ndarray]:
    """In-place bias-corrected Adam step number ``t`` (1-based) with L2 weight decay."""
    _check_shapes(params, grads, first, second)
    b1, b2 = betas
    for p, g, m, v in zip(params, grads, first, second):
        g = g + weight_decay * p
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        p -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


class SGD:
    """Momentum SGD over a fixed list of parameter tensors."""

    def __init__(self, params: list[Tensor], momentum: float, weight_decay: float) -> None:
        self.params = params
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocities = [np.zeros_like(p.data) for p in params]

    def step(self, lr: float) -> None:
        sgd_step(
            [p.data for p in self.params],
            [p.grad_or_zeros() for p in self.params],
            self.velocities,
            lr,
            self.weight_decay,
            self.momentum,
        )

    def buffers(self) -> list[np.ndarray]:
        return [v.copy() for v in self.velocities]

    def load_buffers(self, arrays: list[np.ndarray]) -> None:
        _check_shapes(self.velocities, arrays)
        self.velocities = [np.array(a, dtype=np.float64) for a in arrays]


class Adam:
    def __init__(
        self, params: list[Tensor], betas: tuple[float, float], weight_decay: float
    ) -> None:
        self.params = params
        self.betas = betas
        self.weight_decay = weight_decay
        self.first = [np.zeros_like(p.data) for p in params]
        self.second = [np.zeros_like(p.data) for p in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        adam_step(
            [p.data for p in self.params],
            [p.grad_or_zeros() for p in self.params],
            self.first,
            self.second,
            self.t,
            lr,
            self.betas,
            self.weight_decay,
        )

    def buffers(self) -> list[np.ndarray]:
        return [m.copy() for m in self.first] + [v.copy() for v in self.second] + [
            np.array([float(self.t)])
        ]

    def load_buffers(self, arrays: list[np.ndarray]) -> None:
        n = len(self.params)
        if len(arrays) != 2 * n + 1:
            raise FormatError(f"expected {2 * n + 1} Adam buffers, got {len(arrays)}")
        _check_shapes(self.first, arrays[:n], arrays[n : 2 * n])
        self.first = [np.array(a, dtype=np.float64) for a in arrays[:n]]
        self.second = [np.array(a, dtype=np.float64) for a in arrays[n : 2 * n]]
        self.t = int(arrays[-1][0])


def make_optimizer(params: list[Tensor], cfg: TrainConfig) -> SGD | Adam:
    if cfg.optimizer is Optimizer.ADAM:
        return Adam(params, cfg.adam_betas, cfg.weight_decay)
    return SGD(params, cfg.momentum, cfg.weight_decay)


# ----------------------------------------------------------- sample order


def sample_order(n: int, seed: int, epoch: int, stream: int = SOURCE_STREAM) -> np.ndarray:
    """Permutation of ``range(n)`` for one epoch of one data stream."""
    return np.random.default_rng([seed, stream, epoch]).permutation(n)


def sample_index(step: int, n: int, seed: int, stream: int = SOURCE_STREAM) -> int:
    """Index of the sample visited at ``step`` (0-based)."""
    if n <= 0:
        raise ConfigurationError("cannot train on an empty dataset")
    epoch, offset = divmod(step, n)
    return int(sample_order(n, seed, epoch, stream)[offset])


# ---------------------------------------------------------------- metrics


def _fmt(value: float) -> str:
    return "nan" if math.isnan(value) else f"{value:.6f}"


@dataclass
class MetricsRow:
    """One save point of a phase; losses are averages since the previous save point."""

    step: int
    split: str
    miou: float
    loss_seg_s: float
    loss_seg_t: float
    loss_att: float
    entropy_correct: float = math.nan
    entropy_incorrect: float = math.nan

    def to_csv(self) -> str:
        values = (
            self.miou,
            self.loss_seg_s,
            self.loss_seg_t,
            self.loss_att,
            self.entropy_correct,
            self.entropy_incorrect,
        )
        return ",".join([str(self.step), self.split, *(_fmt(v) for v in values)])

    @classmethod
    def from_csv(cls, line: str) -> MetricsRow:
        parts = line.strip().split(",")
        if len(parts) != 8:
            raise FormatError(f"malformed metrics row {line!r}")
        try:
            return cls(int(parts[0]), parts[1], *(float(v) for v in parts[2:]))
        except ValueError as exc:
            raise FormatError(f"malformed metrics row {line!r}") from exc


def read_metrics(path: str | os.PathLike[str]) -> list[MetricsRow]:
    path = Path(path)
    if not path.exists():
        return []
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != METRICS_HEADER:
        raise FormatError(f"{path}: not a metrics log")
    return [MetricsRow.from_csv(line) for line in lines[1:] if line.strip()]


def write_metrics(path: str | os.PathLike[str], rows: Sequence[MetricsRow]) -> None:
    text = "\n".join([METRICS_HEADER, *(row.to_csv() for row in rows)]) + "\n"
    Path(path).write_text(text, encoding="utf-8")


@dataclass
class TrainResult:
    """Outcome of a network-training phase.

    Attributes:
        net: The best network by eval mIoU, or the final one without an eval split.
        best_miou: Its eval mIoU (NaN without an eval split).
        best_step: Step of the selected checkpoint.
        rows: Metrics log of the phase.
        evaluation: Eval result of the selected network, when evaluated.
    """

    net: SegNet
    best_miou: float
    best_step: int
    rows: list[MetricsRow] = field(default_factory=list)
    evaluation: Optional[EvalResult] = None


# ------------------------------------------------------------ training run


class _TrainingRun:
    """Shared loop of all phases: optimize, guard, evaluate, checkpoint, resume."""

    def __init__(
        self,
        phase: str,
        net: SegNet,
        cfg: TrainConfig,
        run_dir: Optional[Path],
        sam: Optional[SamModule] = None,
        eval_ds: Optional[SceneDataset] = None,
    ) -> None:
        self.phase = phase
        self.net = net
        self.cfg = cfg
        self.run_dir = run_dir
        self.sam = sam
        self.eval_ds = eval_ds
        self.params = net.parameters() + (sam.trainable_parameters() if sam else [])
        self.optimizer = make_optimizer(self.params, cfg)
        self.step = 0
        self.best_miou = -math.inf
        self.best_step = -1
        self.best_state: Optional[list[np.ndarray]] = None
        self.best_eval: Optional[EvalResult] = None
        self.rows: list[MetricsRow] = []
        self._reset_running()

    def _reset_running(self) -> None:
        self._sums = np.zeros(3)
        self._count = 0

    def _sam_state(self) -> list[np.ndarray]:
        return self.sam.state() if self.sam is not None and not self.sam.frozen else []

    # ------------------------------------------------------------ checkpoint

    def _save(self) -> None:
        if self.run_dir is None:
            return
        net_state = self.net.state()
        sam_state = self._sam_state()
        opt_state = self.optimizer.buffers()
        best_state = self.best_state or []
        manifest: dict[str, object] = {
            "kind": "train-state",
            "phase": self.phase,
            "step": self.step,
            "iterations": self.cfg.iterations,
            "seed": self.cfg.seed,
            "net_tensors": len(net_state),
            "sam_tensors": len(sam_state),
            "opt_tensors": len(opt_state),
            "best_tensors": len(best_state),
            "best_miou": repr(self.best_miou),
            "best_step": self.best_step,
        }
        write_metrics(self.run_dir / METRICS_FILE, self.rows)
        save_checkpoint(
            self.run_dir / LAST_CHECKPOINT, manifest, net_state + sam_state + opt_state + best_state
        )

    def resume(self) -> None:
        """Restore the loop from ``last.ckpt`` when the run directory has one."""
        if self.run_dir is None:
            return
        path = self.run_dir / LAST_CHECKPOINT
        if not path.exists():
            return
        manifest, arrays = load_checkpoint(path)
        if manifest.get("kind") != "train-state":
            raise FormatError(f"{path}: not a training checkpoint")
        if manifest.get("phase") != self.phase:
            raise ConfigurationError(
                f"{path}: checkpoint belongs to phase {manifest.get('phase')}, not {self.phase}"
            )
        try:
            counts = [int(manifest[k]) for k in ("net_tensors", "sam_tensors", "opt_tensors")]
            best_count = int(manifest["best_tensors"])
            iterations = int(manifest["iterations"])
            step = int(manifest["step"])
            best_miou = float(manifest["best_miou"])
            best_step = int(manifest["best_step"])
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: incomplete training manifest ({exc})") from exc
        if iterations != self.cfg.iterations:
            raise ConfigurationError(
                f"{path}: checkpoint was written for iterations={iterations}, "
                f"config says {self.cfg.iterations}"
            )
        if sum(counts) + best_count != len(arrays):
            raise FormatError(f"{path}: tensor count does not match the manifest")

        n_net, n_sam, n_opt = counts
        self.net.load_state(arrays[:n_net])
        if n_sam:
            if self.sam is None:
                raise FormatError(f"{path}: checkpoint carries a SAM this phase does not train")
            self.sam.load_state(arrays[n_net : n_net + n_sam])
        self.optimizer.load_buffers(arrays[n_net + n_sam : n_net + n_sam + n_opt])
        self.best_state = arrays[n_net + n_sam + n_opt :] or None
        self.step = step
        self.best_miou = best_miou
        self.best_step = best_step
        self.rows = [r for r in read_metrics(self.run_dir / METRICS_FILE) if r.step <= step]
        logger.info("phase=%s resumed step=%d from=%s", self.phase, step, path)

    # ------------------------------------------------------------ save point

    def _evaluate(self) -> Optional[EvalResult]:
        if self.eval_ds is None:
            return None
        result = evaluate(self.net, self.eval_ds)
        correct, incorrect = result.entropy.mean_correct, result.entropy.mean_incorrect
        logger.info(
            "phase=%s step=%d miou=%.4f pixel_acc=%.4f entropy_correct=%.4f entropy_incorrect=%.4f",
            self.phase,
            self.step,
            result.miou,
            result.iou.pixel_accuracy,
            correct,
            incorrect,
        )
        late = self.step > self.cfg.iterations / 3
        if late and not (math.isnan(correct) or math.isnan(incorrect)) and incorrect <= correct:
            logger.warning(
                "phase=%s step=%d incorrect pixels are not less confident than correct ones "
                "(entropy_incorrect=%.4f <= entropy_correct=%.4f)",
                self.phase,
                self.step,
                incorrect,
                correct,
            )
        if result.miou > self.best_miou:
            self.best_miou = result.miou
            self.best_step = self.step
            self.best_state = self.net.state()
            self.best_eval = result
        return result

    def _save_point(self) -> None:
        means = self._sums / max(self._count, 1)
        result = self._evaluate()
        if result is None:
            row = MetricsRow(self.step, "train", math.nan, *means)
        else:
            entropy = result.entropy
            row = MetricsRow(
                self.step,
                "target-eval",
                result.miou,
                *means,
                entropy.mean_correct,
                entropy.mean_incorrect,
            )
        self.rows.append(row)
        logger.info(
            "phase=%s step=%d lr=%.6g loss_seg_s=%.4f loss_seg_t=%.4f loss_att=%.4f",
            self.phase,
            self.step,
            learning_rate(self.step, self.cfg),
            *means,
        )
        self._reset_running()
        self._save()

    # ------------------------------------------------------------------ loop

    def run(self, loss_fn: Callable[[int], LossTerms]) -> None:
        cfg = self.cfg
        steps = range(self.step, cfg.iterations)
        for step in tqdm(steps, desc=self.phase, disable=None, leave=False):
            for param in self.params:
                param.zero_grad()
            terms = loss_fn(step)
            value = terms.total.item()
            if not math.isfinite(value):
                raise DivergenceError(self.phase, step, f"loss={value}")
            terms.total.backward()
            self.optimizer.step(learning_rate(step, cfg))

            self._sums += (terms.seg_s, terms.seg_t, terms.att)
            self._count += 1
            self.step = step + 1
            if self.step % cfg.eval_interval == 0 or self.step == cfg.iterations:
                self._save_point()

    def result(self) -> TrainResult:
        if self.best_state is None:
            return TrainResult(self.net, math.nan, self.step, self.rows)
        best = init_params(self.net.config)
        best.load_state(self.best_state)
        evaluation = self.best_eval
        if evaluation is None and self.eval_ds is not None:
            evaluation = evaluate(best, self.eval_ds)
        return TrainResult(best, self.best_miou, self.best_step, self.rows, evaluation)


def _phase_dir(run_dir: Optional[str | os.PathLike[str]]) -> Optional[Path]:
    if run_dir is None:
        return None
    path = Path(run_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _check_source(source: SceneDataset) -> None:
    if not len(source):
        raise ConfigurationError("the source training set is empty")


# ----------------------------------------------------------------- phases


def train_sam(
    source: SceneDataset,
    cfg: TrainConfig,
    net_config: NetConfig,
    run_dir: Optional[str | os.PathLike[str]] = None,
) -> SamModule:
    """Train the self-attention module jointly with a throwaway SegNet on source data.

    The cross-entropy is computed on the module's output (z'' or, without the
    skip connection, z').  Without the 1x1 conv the module has no parameters
    and is returned untrained.  The returned module is frozen.
    """
    path = _phase_dir(run_dir)
    sam_path = path / SAM_CHECKPOINT if path else None
    if sam_path is not None and sam_path.exists():
        sam, _ = load_sam(sam_path)
        if (sam.use_conv, sam.use_skip) != (cfg.use_conv, cfg.use_skip):
            raise ConfigurationError(
                f"{sam_path}: stored module has use_conv={sam.use_conv} use_skip={sam.use_skip}"
            )
        sam.freeze()
        logger.info("phase=%s loaded=%s", PHASE_SAM, sam_path)
        return sam

    sam = init_sam(net_config.num_classes, cfg.use_conv, cfg.use_skip, seed=cfg.seed + 1)
    if cfg.use_conv:
        _check_source(source)
        net = init_params(replace(net_config, seed=cfg.seed))
        run = _TrainingRun(PHASE_SAM, net, cfg, path, sam=sam)
        run.resume()
        samples = source.samples

        def loss_fn(step: int) -> LossTerms:
            sample = samples[sample_index(step, len(samples), cfg.seed, SOURCE_STREAM)]
            loss = sam_segmentation_loss(net, sam, sample)
            return LossTerms(total=loss, seg_s=loss.item())

        run.run(loss_fn)
    else:
        logger.info("phase=%s no-conv module has no parameters, skipping training", PHASE_SAM)

    if sam_path is not None:
        save_sam(sam_path, sam, {"seed": cfg.seed, "iterations": cfg.iterations})
    sam.freeze()
    return sam


def train_source_only(
    source: SceneDataset,
    cfg: TrainConfig,
    net_config: NetConfig,
    eval_ds: Optional[SceneDataset] = None,
    run_dir: Optional[str | os.PathLike[str]] = None,
) -> TrainResult:
    """The "No Pseudo" baseline: a fresh SegNet trained with the source cross-entropy alone."""
    _check_source(source)
    path = _phase_dir(run_dir)
    net = init_params(replace(net_config, seed=cfg.seed))
    run = _TrainingRun(PHASE_SOURCE_ONLY, net, cfg, path, eval_ds=eval_ds)
    run.resume()
    samples = source.samples
    loss_cfg = replace(cfg.loss, lam=0.0)

    def loss_fn(step: int) -> LossTerms:
        sample = samples[sample_index(step, len(samples), cfg.seed, SOURCE_STREAM)]
        return total_loss(sample, None, net, None, loss_cfg)

    run.run(loss_fn)
    return _finish(run, path)


def adapt(
    source: SceneDataset,
    target: SceneDataset,
    sam: Optional[SamModule],
    pseudo_labels: Optional[Sequence[PseudoLabelMap]],
    cfg: TrainConfig,
    net_config: NetConfig,
    eval_ds: Optional[SceneDataset] = None,
    run_dir: Optional[str | os.PathLike[str]] = None,
) -> TrainResult:
    """Train a fresh SegNet on source labels, target pseudo labels and the attention loss.

    Each iteration uses one source sample and one target sample.  With
    ``cfg.loss.lam == 0`` this is the "Pseudo-Only" variant and ``sam`` may
    be None.

    Args:
        source: Labeled source training set.
        target: Target training set; only its images are read.
        sam: Self-attention module; frozen here if it is not already.
        pseudo_labels: One map per target sample, in sample order.
        cfg: Optimizer, schedule and loss configuration.
        net_config: Architecture of the fresh network.
        eval_ds: Target eval split for best-checkpoint selection.
        run_dir: Directory for ``last.ckpt``, ``best.ckpt`` and ``metrics.csv``.

    Raises:
        ConfigurationError: Pseudo labels are missing or do not cover the target set.
    """
    _check_source(source)
    if pseudo_labels is None:
        raise ConfigurationError("adaptation needs pseudo labels for the target set")
    if len(pseudo_labels) != len(target) or not len(target):
        raise ConfigurationError(
            f"{len(pseudo_labels)} pseudo-label maps for {len(target)} target samples"
        )
    if cfg.loss.lam > 0:
        if sam is None:
            raise ConfigurationError("a positive lambda needs a trained self-attention module")
        sam.freeze()

    path = _phase_dir(run_dir)
    net = init_params(replace(net_config, seed=cfg.seed))
    run = _TrainingRun(PHASE_ADAPT, net, cfg, path, eval_ds=eval_ds)
    run.resume()
    sources, targets = source.samples, target.samples

    def loss_fn(step: int) -> LossTerms:
        s = sources[sample_index(step, len(sources), cfg.seed, SOURCE_STREAM)]
        t = sample_index(step, len(targets), cfg.seed, TARGET_STREAM)
        return total_loss(s, (targets[t].image, pseudo_labels[t]), net, sam, cfg.loss)

    run.run(loss_fn)
    return _finish(run, path)


def _finish(run: _TrainingRun, path: Optional[Path]) -> TrainResult:
    result = run.result()
    if path is not None:
        save_segnet(
            path / BEST_CHECKPOINT,
            result.net,
            {
                "phase": run.phase,
                "best_step": result.best_step,
                "best_miou": repr(result.best_miou),
            },
        )
    logger.info(
        "phase=%s done best_step=%d best_miou=%.4f", run.phase, result.best_step, result.best_miou
    )
    return result


# ------------------------------------------------------------- generations


@dataclass
class GenerationRow:
    """One (generation, variant) cell of the results table."""

    generation: int
    variant: Variant
    miou: float
    pixel_accuracy: float
    coverage: float
    entropy_correct: float
    entropy_incorrect: float
    per_class: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _row(generation: int, variant: Variant, result: TrainResult, coverage: float) -> GenerationRow:
    evaluation = result.evaluation
    if evaluation is None:
        return GenerationRow(generation, variant, math.nan, math.nan, coverage, math.nan, math.nan)
    return GenerationRow(
        generation,
        variant,
        evaluation.miou,
        evaluation.iou.pixel_accuracy,
        coverage,
        evaluation.entropy.mean_correct,
        evaluation.entropy.mean_incorrect,
        evaluation.iou.per_class.copy(),
    )


def pseudo_store(
    labeler: SegNet, target: SceneDataset, path: Path
) -> tuple[list[PseudoLabelMap], float]:
    """Load the store at ``path`` or build it with ``labeler``; returns labels and mean coverage."""
    if (path / "thresholds.txt").exists():
        labels, _ = load_pseudo_store(path, target)
    else:
        labels, _ = build_pseudo_store(labeler, target, path)
    num_classes = labeler.config.num_classes
    coverage = [pseudo_label_stats(m, num_classes)[0] for m in labels]
    return labels, float(np.mean(coverage)) if coverage else 0.0


def run_generation_loop(
    gens: int,
    variants: Sequence[Variant],
    source: SceneDataset,
    target: SceneDataset,
    eval_ds: SceneDataset,
    cfg: TrainConfig,
    net_config: NetConfig,
    run_dir: str | os.PathLike[str],
    sam_cfg: Optional[TrainConfig] = None,
) -> list[GenerationRow]:
    """Iterative self-training with every requested variant.

    The "No Pseudo" baseline is trained once and labels Gen 1 for every
    variant.  Each variant then follows its own chain: Gen k+1 pseudo labels
    come from that variant's best Gen k network.  The module is trained once
    and reused in every generation.

    Args:
        gens: Number of generations, at least 1.
        variants: Variants to report; the baseline repeats its one value in
            every generation.
        source: Labeled source training set.
        target: Target training set (images only).
        eval_ds: Target eval split.
        cfg: Configuration of the baseline and adaptation phases.
        net_config: Architecture of every network.
        run_dir: Root of all phase directories.
        sam_cfg: Configuration of the module's training phase; ``cfg`` if omitted.

    Returns:
        One row per (generation, variant), ordered by generation then variant.
    """
    if gens < 1:
        raise ConfigurationError(f"gens must be at least 1, got {gens}")
    if not variants:
        raise ConfigurationError("no variants requested")
    root = Path(run_dir)

    baseline = train_source_only(source, cfg, net_config, eval_ds, root / "source-only")
    sam = None
    if Variant.OURS in variants:
        sam = train_sam(source, sam_cfg or cfg, net_config, root / "sam")
    gen1_labels, gen1_coverage = pseudo_store(baseline.net, target, root / "gen1" / "pseudo")

    results: dict[tuple[int, Variant], GenerationRow] = {}
    for variant in variants:
        if variant is Variant.NO_PSEUDO:
            for g in range(1, gens + 1):
                results[g, variant] = _row(g, variant, baseline, math.nan)
            continue
        labeler = baseline.net
        for g in range(1, gens + 1):
            gen_dir = root / f"gen{g}"
            if g == 1:
                labels, coverage = gen1_labels, gen1_coverage
            else:
                labels, coverage = pseudo_store(labeler, target, gen_dir / str(variant) / "pseudo")
            lam = cfg.loss.lam if variant is Variant.OURS else 0.0
            gen_cfg = replace(cfg, generation=g, loss=replace(cfg.loss, lam=lam))
            result = adapt(
                source,
                target,
                sam if variant is Variant.OURS else None,
                labels,
                gen_cfg,
                net_config,
                eval_ds,
                gen_dir / str(variant),
            )
            results[g, variant] = _row(g, variant, result, coverage)
            logger.info(
                "generation=%d variant=%s miou=%.4f coverage=%.4f",
                g,
                variant,
                results[g, variant].miou,
                coverage,
            )
            labeler = result.net

    return [results[g, v] for g in range(1, gens + 1) for v in variants]
