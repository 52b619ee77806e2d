"""Command-line interface for pixcorr.

Every command resolves the configuration, writes ``config.resolved`` into the
run directory ``<out>/run-<hash>-s<seed>`` and reads or writes artifacts there:

    data/{source-train,target-train,target-eval}   gen-data
    sam/sam.ckpt                                   train-sam
    source-only/best.ckpt, pseudo/                 pseudo
    adapt/best.ckpt                                adapt
    gen<k>/<variant>/, generations.csv             iterate
    report/                                        report

Exit codes: 0 success, 1 configuration or file error, 2 diverged training.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional

from .config import ExperimentConfig
from .display import GENERATIONS_FILE, emit_report, parse_generations_csv, render_generations_csv
from .errors import ConfigurationError, DivergenceError, PixcorrError
from .metrics import evaluate
from .models import SceneDataset, Variant
from .pseudo import build_pseudo_store, load_pseudo_store
from .sam import load_sam
from .scenegen import generate, load_dataset, save_dataset
from .segnet import SegNet, load_segnet
from .trainer import (
    BEST_CHECKPOINT,
    SAM_CHECKPOINT,
    GenerationRow,
    adapt,
    run_generation_loop,
    train_sam,
    train_source_only,
)

logger = logging.getLogger("pixcorr")

COMMANDS = ("gen-data", "train-sam", "pseudo", "adapt", "iterate", "eval", "report")
SPLITS = ("source-train", "target-train", "target-eval")


def parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    """Parse command-line arguments."""
    parser = argparse.ArgumentParser(
        prog="pixcorr",
        description=(
            "Self-training domain adaptation for semantic segmentation with a "
            "source-trained self-attention module, on synthetic street scenes."
        ),
        epilog=(
            "The run directory is named after a hash of every setting except --seed and\n"
            "--out. Commands that read earlier results (adapt, eval, report) must repeat\n"
            "the --config, --set and loss/--gens/--variants flags given to the command\n"
            "that produced them, or they look in a different run directory."
        ),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("command", choices=COMMANDS, help="Step of the workflow to run.")
    parser.add_argument("--config", type=Path, default=None, help="key = value config file.")
    parser.add_argument("--seed", type=int, default=None, help="Random seed. Default: 0")
    parser.add_argument(
        "--lambda",
        dest="lam",
        type=float,
        default=None,
        help="Weight of the self-attention loss. Default: 0.1",
    )
    parser.add_argument(
        "--att-form",
        choices=("z-zpp", "z-zp"),
        default=None,
        help="Reference of the self-attention loss. Default: from the profile",
    )
    parser.add_argument(
        "--att-domains",
        choices=("both", "target"),
        default=None,
        help="Domains the self-attention loss is applied on. Default: from the profile",
    )
    parser.add_argument(
        "--att-metric",
        choices=("l1", "kl", "cosine"),
        default=None,
        help="Distance of the self-attention loss. Default: l1",
    )
    parser.add_argument(
        "--no-conv", action="store_true", help="Self-attention module without the 1x1 conv."
    )
    parser.add_argument(
        "--no-skip", action="store_true", help="Train the module on z' instead of z''."
    )
    parser.add_argument("--gens", type=int, default=None, help="Generations to run. Default: 3")
    parser.add_argument(
        "--variants",
        default=None,
        help="Comma-separated variants: no-pseudo, pseudo-only, ours. Default: all",
    )
    parser.add_argument("--out", default=None, help="Root of run directories. Default: runs")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Override any config key; may be repeated.",
    )
    parser.add_argument(
        "--checkpoint",
        type=Path,
        default=None,
        help="Network checkpoint for pseudo / eval / report.",
    )
    parser.add_argument(
        "--samples", type=int, default=4, help="Eval samples visualized by report. Default: 4"
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only.")
    return parser.parse_args(argv)


def overrides_from_args(args: argparse.Namespace) -> dict[str, str]:
    """Config overrides in precedence order: ``--set`` first, dedicated flags last."""
    overrides: dict[str, str] = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigurationError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    flags = {
        "seed": args.seed,
        "lambda": args.lam,
        "att_form": args.att_form,
        "att_domains": args.att_domains,
        "att_metric": args.att_metric,
        "gens": args.gens,
        "variants": args.variants,
        "out": args.out,
    }
    overrides.update({key: str(value) for key, value in flags.items() if value is not None})
    if args.no_conv:
        overrides["use_conv"] = "false"
    if args.no_skip:
        overrides["use_skip"] = "false"
    return overrides


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logger.handlers[:] = [handler]
    logger.setLevel(level)
    logger.propagate = False


# ------------------------------------------------------------------ helpers


def _generate_splits(cfg: ExperimentConfig) -> dict[str, SceneDataset]:
    source_spec, target_spec = cfg.domain_specs()
    size = dict(
        height=cfg.height, width=cfg.width, num_classes=cfg.num_classes, downsample=cfg.downsample
    )
    return {
        "source-train": generate(source_spec, cfg.train_samples, **size),
        "target-train": generate(target_spec, cfg.train_samples, **size),
        "target-eval": generate(
            target_spec, cfg.eval_samples, start_id=cfg.train_samples, **size
        ),
    }


def _datasets(cfg: ExperimentConfig, run: Path) -> dict[str, SceneDataset]:
    """Load the run's datasets, generating and saving them on first use."""
    data = run / "data"
    if all((data / split / "manifest.txt").exists() for split in SPLITS):
        return {split: load_dataset(data / split) for split in SPLITS}
    splits = _generate_splits(cfg)
    for split, dataset in splits.items():
        save_dataset(dataset, data / split)
    return splits


def _load_net(path: Path) -> SegNet:
    if not path.exists():
        raise ConfigurationError(f"missing network checkpoint: {path}")
    net, _ = load_segnet(path)
    return net


def _default_checkpoint(run: Path, cfg: ExperimentConfig) -> Path:
    """Latest generation's network of the last variant, else adapt, else the baseline."""
    variants = cfg.variant_list()
    candidates = [
        run / f"gen{g}" / str(v) / BEST_CHECKPOINT
        for g in range(cfg.gens, 0, -1)
        for v in reversed(variants)
    ]
    candidates += [run / "adapt" / BEST_CHECKPOINT, run / "source-only" / BEST_CHECKPOINT]
    for path in candidates:
        if path.exists():
            return path
    raise ConfigurationError(f"no trained network under {run}; run adapt or iterate first")


def _variant_nets(run: Path, rows: list[GenerationRow]) -> dict[Variant, SegNet]:
    """Pseudo-Only and Ours networks of the last generation, when both were trained."""
    if not rows:
        return {}
    last = max(row.generation for row in rows)
    paths = {
        variant: run / f"gen{last}" / str(variant) / BEST_CHECKPOINT
        for variant in (Variant.PSEUDO_ONLY, Variant.OURS)
    }
    if not all(path.exists() for path in paths.values()):
        return {}
    return {variant: _load_net(path) for variant, path in paths.items()}


# ----------------------------------------------------------------- commands


def _cmd_gen_data(cfg: ExperimentConfig, run: Path, args: argparse.Namespace) -> None:
    for split, dataset in _generate_splits(cfg).items():
        save_dataset(dataset, run / "data" / split)
        print(f"{split}: {dataset}")


def _cmd_train_sam(cfg: ExperimentConfig, run: Path, args: argparse.Namespace) -> None:
    data = _datasets(cfg, run)
    sam = train_sam(data["source-train"], cfg.sam_train_config(), cfg.net_config(), run / "sam")
    print(f"{sam} -> {run / 'sam' / SAM_CHECKPOINT}")


def _cmd_pseudo(cfg: ExperimentConfig, run: Path, args: argparse.Namespace) -> None:
    data = _datasets(cfg, run)
    if args.checkpoint is not None:
        labeler = _load_net(args.checkpoint)
    else:
        labeler = train_source_only(
            data["source-train"],
            cfg.train_config(),
            cfg.net_config(),
            data["target-eval"],
            run / "source-only",
        ).net
    _, thresholds = build_pseudo_store(labeler, data["target-train"], run / "pseudo")
    print(f"thresholds: {thresholds}")


def _cmd_adapt(cfg: ExperimentConfig, run: Path, args: argparse.Namespace) -> None:
    data = _datasets(cfg, run)
    labels, _ = load_pseudo_store(run / "pseudo", data["target-train"])
    train_cfg = cfg.train_config()
    sam = None
    if train_cfg.loss.lam > 0:
        sam_path = run / "sam" / SAM_CHECKPOINT
        if not sam_path.exists():
            raise ConfigurationError(f"missing self-attention module: {sam_path}; run train-sam")
        sam, _ = load_sam(sam_path)
    result = adapt(
        data["source-train"],
        data["target-train"],
        sam,
        labels,
        train_cfg,
        cfg.net_config(),
        data["target-eval"],
        run / "adapt",
    )
    print(f"best step {result.best_step}: mIoU {result.best_miou * 100:.2f}")


def _cmd_iterate(cfg: ExperimentConfig, run: Path, args: argparse.Namespace) -> None:
    data = _datasets(cfg, run)
    rows = run_generation_loop(
        cfg.gens,
        cfg.variant_list(),
        data["source-train"],
        data["target-train"],
        data["target-eval"],
        cfg.train_config(),
        cfg.net_config(),
        run,
        sam_cfg=cfg.sam_train_config(),
    )
    text = render_generations_csv(rows)
    (run / GENERATIONS_FILE).write_text(text, encoding="utf-8")
    print(text, end="")


def _cmd_eval(cfg: ExperimentConfig, run: Path, args: argparse.Namespace) -> None:
    path = args.checkpoint or _default_checkpoint(run, cfg)
    net = _load_net(path)
    result = evaluate(net, _datasets(cfg, run)["target-eval"])
    print(f"{path}: {result.iou}")
    print(f"pixel accuracy {result.iou.pixel_accuracy * 100:.2f}, {result.entropy}")


def _cmd_report(cfg: ExperimentConfig, run: Path, args: argparse.Namespace) -> None:
    table = run / GENERATIONS_FILE
    if not table.exists():
        raise ConfigurationError(f"missing results table: {table}; run iterate first")
    rows = parse_generations_csv(table.read_text(encoding="utf-8"), str(table))
    net = _load_net(args.checkpoint or _default_checkpoint(run, cfg))
    eval_ds = _datasets(cfg, run)["target-eval"]
    sam_path = run / "sam" / SAM_CHECKPOINT
    sam = load_sam(sam_path)[0] if sam_path.exists() else None
    written = emit_report(
        run / "report", rows, net, eval_ds, args.samples, sam, _variant_nets(run, rows)
    )
    print(f"wrote {len(written)} files to {run / 'report'}")


_DISPATCH = {
    "gen-data": _cmd_gen_data,
    "train-sam": _cmd_train_sam,
    "pseudo": _cmd_pseudo,
    "adapt": _cmd_adapt,
    "iterate": _cmd_iterate,
    "eval": _cmd_eval,
    "report": _cmd_report,
}


def dispatch(args: argparse.Namespace) -> int:
    """Run one command; returns the process exit code."""
    try:
        cfg = ExperimentConfig.load(args.config, overrides_from_args(args))
        run = cfg.run_dir()
        cfg.write_resolved(run)
        logger.info("command=%s run=%s", args.command, run)
        _DISPATCH[args.command](cfg, run, args)
    except DivergenceError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 2
    except PixcorrError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return 1
    return 0


def run(argv: Optional[list[str]] = None) -> int:
    """Parse ``argv``, configure logging and run the command; returns the exit code."""
    args = parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    return dispatch(args)


def main(argv: Optional[list[str]] = None) -> None:
    """Main entry point for the CLI."""
    code = run(argv)
    if code:
        sys.exit(code)


if __name__ == "__main__":
    main()
