"""Tests for the CLI module."""

from pathlib import Path

import pytest

from pixcorr import cli
from pixcorr.cli import dispatch, main, overrides_from_args, parse_args
from pixcorr.config import RESOLVED_FILE, ExperimentConfig
from pixcorr.errors import ConfigurationError, DivergenceError

TINY = [
    "--set", "height=16",
    "--set", "width=16",
    "--set", "train_samples=3",
    "--set", "eval_samples=2",
    "--set", "widths=4,6",
    "--set", "iterations=2",
    "--set", "sam_iterations=2",
    "--set", "eval_interval=2",
]


def tiny_args(command: str, out: Path, *extra: str) -> list[str]:
    return [command, "--out", str(out), "-q", *TINY, *extra]


def run_dir(out: Path, *extra: str) -> Path:
    args = parse_args(tiny_args("eval", out, *extra))
    return ExperimentConfig.load(None, overrides_from_args(args)).run_dir()


class TestParseArgs:
    def test_defaults(self) -> None:
        args = parse_args(["iterate"])
        assert args.command == "iterate"
        assert args.config is None
        assert args.seed is None
        assert args.lam is None
        assert not args.no_conv and not args.no_skip
        assert args.overrides == []
        assert args.samples == 4

    def test_unknown_command(self) -> None:
        with pytest.raises(SystemExit):
            parse_args(["train"])

    def test_verbose_and_quiet_exclusive(self) -> None:
        with pytest.raises(SystemExit):
            parse_args(["eval", "-v", "-q"])

    def test_flags_become_overrides(self) -> None:
        args = parse_args([
            "adapt", "--seed", "7", "--lambda", "0.2", "--att-metric", "kl",
            "--no-conv", "--gens", "2", "--set", "lambda=0.9",
        ])
        overrides = overrides_from_args(args)
        assert overrides["seed"] == "7"
        assert overrides["lambda"] == "0.2"
        assert overrides["att_metric"] == "kl"
        assert overrides["use_conv"] == "false"
        assert overrides["gens"] == "2"
        assert "use_skip" not in overrides

    def test_bad_set(self) -> None:
        with pytest.raises(ConfigurationError):
            overrides_from_args(parse_args(["eval", "--set", "lambda"]))


class TestCommands:
    def test_gen_data_is_deterministic(self, tmp_path: Path) -> None:
        for out in ("a", "b"):
            assert dispatch(parse_args(tiny_args("gen-data", tmp_path / out, "--seed", "7"))) == 0
        first = run_dir(tmp_path / "a", "--seed", "7")
        second = run_dir(tmp_path / "b", "--seed", "7")
        assert first.name.endswith("-s7")
        files = sorted(p.relative_to(first) for p in (first / "data").rglob("*") if p.is_file())
        assert len(files) == 7 + 7 + 5  # manifest, images and labels per split
        for rel in files:
            assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
        assert (first / RESOLVED_FILE).exists()

    def test_adapt_without_pseudo_labels(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        assert dispatch(parse_args(tiny_args("adapt", tmp_path))) == 1
        assert "pseudo" in capsys.readouterr().err

    def test_report_without_results(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        assert dispatch(parse_args(tiny_args("report", tmp_path))) == 1
        assert "iterate" in capsys.readouterr().err

    def test_bad_set_exits_one(self, tmp_path: Path) -> None:
        with pytest.raises(SystemExit) as info:
            main(["eval", "--out", str(tmp_path), "-q", "--set", "colour=red"])
        assert info.value.code == 1

    def test_run_returns_exit_code(self, tmp_path: Path) -> None:
        assert cli.run(["eval", "--out", str(tmp_path), "-q", "--set", "colour=red"]) == 1

    def test_divergence_exits_two(
        self,
        tmp_path: Path,
        capsys: pytest.CaptureFixture[str],
        monkeypatch: pytest.MonkeyPatch,
    ) -> None:
        def diverging(*args, **kwargs):
            raise DivergenceError("source-only", 3, "loss=nan")

        monkeypatch.setattr(cli, "train_source_only", diverging)
        assert cli.run(tiny_args("pseudo", tmp_path)) == 2
        assert "diverged at step 3" in capsys.readouterr().err

    def test_help_explains_run_directory(self, capsys: pytest.CaptureFixture[str]) -> None:
        with pytest.raises(SystemExit) as info:
            parse_args(["--help"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        assert "run directory" in out
        assert "report" in out

    def test_step_by_step_workflow(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        for command in ("train-sam", "pseudo", "adapt", "eval"):
            assert dispatch(parse_args(tiny_args(command, tmp_path))) == 0, command
        run = run_dir(tmp_path)
        assert (run / "sam" / "sam.ckpt").exists()
        assert (run / "pseudo" / "thresholds.txt").exists()
        assert (run / "adapt" / "best.ckpt").exists()
        assert "mIoU" in capsys.readouterr().out

    def test_iterate_and_report(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        args = tiny_args("iterate", tmp_path, "--gens", "3", "--variants", "pseudo-only,ours")
        assert dispatch(parse_args(args)) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 1 + 6
        assert lines[1].startswith("1,pseudo-only,")

        report_args = tiny_args("report", tmp_path, "--gens", "3", "--variants", "pseudo-only,ours")
        assert dispatch(parse_args([*report_args, "--samples", "1"])) == 0
        report = run_dir(tmp_path, "--gens", "3", "--variants", "pseudo-only,ours") / "report"
        assert (report / "summary.txt").exists()
        assert (report / "0003-image.ppm").exists()
        assert (report / "0003-sim-zp.pgm").exists()
        assert (report / "0003-sim-compare.pgm").exists()
        assert "anchor=" in next(report.glob("0003-att-*.txt")).read_text()

    def test_iterate_is_byte_identical(self, tmp_path: Path) -> None:
        flags = ("--gens", "2", "--variants", "pseudo-only,ours")
        for out in ("a", "b"):
            assert dispatch(parse_args(tiny_args("iterate", tmp_path / out, *flags))) == 0
        first = run_dir(tmp_path / "a", *flags)
        second = run_dir(tmp_path / "b", *flags)
        logs = sorted(p.relative_to(first) for p in first.rglob("metrics.csv"))
        assert len(logs) == 1 + 1 + 2 * 2  # source-only, module, generations x variants
        for rel in [Path("generations.csv"), *logs]:
            assert (first / rel).read_bytes() == (second / rel).read_bytes(), rel
