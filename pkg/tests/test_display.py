"""Tests for report rendering."""

import math
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from pixcorr.display import (
    GENERATIONS_FILE,
    PALETTE,
    colorize,
    emit_report,
    parse_generations_csv,
    render_ablation_csv,
    render_entropy_csv,
    render_generations_csv,
    render_run_summary,
    scale_heatmap,
    side_by_side,
    similarity_maps,
    write_heatmap,
)
from pixcorr.errors import FormatError
from pixcorr.images import load_image
from pixcorr.metrics import attention_visualization
from pixcorr.models import IGNORE, NetConfig, SceneClass, SceneDataset, Variant
from pixcorr.sam import init_sam
from pixcorr.segnet import init_params
from pixcorr.trainer import GenerationRow


def make_rows() -> list[GenerationRow]:
    rows = []
    for g in (1, 2):
        for k, variant in enumerate(Variant):
            per_class = np.array([0.9, 0.8, 0.5, 0.3, 0.1 * g]) - 0.05 * k
            coverage = math.nan if variant is Variant.NO_PSEUDO else 0.6 + 0.1 * g
            miou = float(per_class.mean())
            rows.append(GenerationRow(g, variant, miou, 0.8, coverage, 0.2, 0.7, per_class))
    return rows


class TestColorize:
    def test_palette_and_ignore(self) -> None:
        labels = np.array([[0, 4], [IGNORE, 2]], dtype=np.uint8)
        out = colorize(labels)
        assert out.dtype == np.uint8
        assert out[0, 0].tolist() == PALETTE[0].tolist()
        assert out[0, 1].tolist() == PALETTE[4].tolist()
        assert out[1, 0].tolist() == [0, 0, 0]


class TestHeatmap:
    def test_scaling(self) -> None:
        pixels, lo, hi = scale_heatmap(np.array([[-1.0, 0.0], [1.0, 0.5]]))
        assert (lo, hi) == (-1.0, 1.0)
        assert pixels.tolist() == [[0, 128], [255, 191]]

    def test_constant_map(self) -> None:
        pixels, lo, hi = scale_heatmap(np.full((2, 2), 0.3))
        assert not pixels.any()
        assert lo == hi == 0.3

    def test_sidecar(self, tmp_path: Path) -> None:
        sidecar = write_heatmap(tmp_path / "h.pgm", np.array([[0.25, 0.75]]))
        assert sidecar.read_text() == "min=0.25\nmax=0.75\n"
        assert load_image(tmp_path / "h.pgm").tolist() == [[0, 255]]

    def test_sidecar_rounds_and_extends(self, tmp_path: Path) -> None:
        values = np.array([[0.5, 1.0000000000000002]])
        sidecar = write_heatmap(tmp_path / "h.pgm", values, {"anchor": "3,4"})
        assert sidecar.read_text() == "min=0.5\nmax=1\nanchor=3,4\n"


class TestSimilarityMaps:
    def test_side_by_side(self) -> None:
        joined = side_by_side([np.ones((2, 2)), np.full((2, 3), 0.5)])
        assert joined.shape == (2, 6)
        assert joined[:, 2].tolist() == [0.5, 0.5]

    def test_module_adds_attended_maps(
        self, net_config: NetConfig, eval_ds: SceneDataset
    ) -> None:
        net = init_params(net_config)
        sam = init_sam(5, seed=1)
        maps = similarity_maps(net, eval_ds.samples[0].image, sam)
        assert sorted(maps) == ["z", "zp", "zpp"]
        for values in maps.values():
            assert values.shape == (16, 16)
            assert values.min() >= 0.0 and values.max() <= 1.0
        assert list(similarity_maps(net, eval_ds.samples[0].image)) == ["z"]


class TestTables:
    def test_generations_round_trip(self) -> None:
        rows = make_rows()
        parsed = parse_generations_csv(render_generations_csv(rows))
        assert len(parsed) == len(rows)
        for a, b in zip(rows, parsed):
            assert (b.generation, b.variant) == (a.generation, a.variant)
            assert b.miou == pytest.approx(a.miou, abs=1e-6)
            np.testing.assert_allclose(b.per_class, a.per_class, atol=1e-6)
        assert math.isnan(parsed[0].coverage)

    def test_parse_rejects_other_files(self) -> None:
        with pytest.raises(FormatError):
            parse_generations_csv("a,b\n1,2\n")

    def test_parse_rejects_bad_variant(self) -> None:
        text = render_generations_csv(make_rows()[:1]).replace("no-pseudo", "bogus")
        with pytest.raises(FormatError):
            parse_generations_csv(text)

    def test_ablation_has_first_generation_only(self) -> None:
        lines = render_ablation_csv(make_rows()).splitlines()
        assert len(lines) == 1 + len(Variant)
        assert lines[1].startswith("no-pseudo,No Pseudo,")

    def test_entropy_gap(self) -> None:
        lines = render_entropy_csv(make_rows()).splitlines()
        assert lines[0] == "generation,variant,entropy_correct,entropy_incorrect,gap"
        assert lines[1] == "1,no-pseudo,0.200000,0.700000,0.500000"

    def test_summary_marks_best(self) -> None:
        text = render_run_summary(make_rows(), "demo")
        assert "--- GENERATION 2 ---" in text
        best = [line for line in text.splitlines() if line.startswith(" *")]
        assert len(best) == 2
        assert all("No Pseudo" in line for line in best)


class TestEmitReport:
    def test_bytes_stable(
        self, net_config: NetConfig, eval_ds: SceneDataset, tmp_path: Path
    ) -> None:
        net = init_params(net_config)
        first = emit_report(tmp_path / "a", make_rows(), net, eval_ds, samples=2)
        second = emit_report(tmp_path / "b", make_rows(), net, eval_ds, samples=2)
        assert [p.name for p in first] == [p.name for p in second]
        for a, b in zip(first, second):
            assert a.read_bytes() == b.read_bytes()
        names = {p.name for p in first}
        assert GENERATIONS_FILE in names
        assert "0004-gtsim.pgm" in names
        assert "0004-sim.pgm" in names
        assert any(name.startswith("0004-att-") for name in names)

    def test_network_similarity_and_comparison(
        self, net_config: NetConfig, eval_ds: SceneDataset, tmp_path: Path
    ) -> None:
        net = init_params(net_config)
        other = init_params(replace(net_config, seed=4))
        variant_nets = {Variant.PSEUDO_ONLY: other, Variant.OURS: net}
        sam = init_sam(5, seed=1)
        written = emit_report(tmp_path, make_rows(), net, eval_ds, 1, sam, variant_nets)
        names = {p.name for p in written}
        for suffix in ("sim", "sim-zp", "sim-zpp", "sim-pseudo-only", "sim-ours", "sim-compare"):
            assert f"0004-{suffix}.pgm" in names
        compare = load_image(tmp_path / "0004-sim-compare.pgm", ndim=2)
        assert compare.shape == (16, 16 + 1 + 16)
        assert "panels=pseudo-only,ours\n" in (tmp_path / "0004-sim-compare.txt").read_text()

    def test_attention_sidecar_records_anchor(
        self, net_config: NetConfig, eval_ds: SceneDataset, tmp_path: Path
    ) -> None:
        net = init_params(net_config)
        sample = eval_ds.samples[0]
        emit_report(tmp_path, make_rows(), net, eval_ds, 1)
        _, z = net.predict(sample.image)
        sidecars = sorted(tmp_path.glob("0004-att-*.txt"))
        assert sidecars
        for sidecar in sidecars:
            entries = dict(line.split("=") for line in sidecar.read_text().splitlines())
            name = sidecar.stem.removeprefix("0004-att-")
            c = [cls.label for cls in SceneClass].index(name)
            vis = attention_visualization(z, c, (16, 16))
            assert entries["anchor"] == f"{vis.anchor_full[0]},{vis.anchor_full[1]}"
            assert entries["anchor_logit"] == f"{vis.anchor[0]},{vis.anchor[1]}"

    def test_tables_only(self, tmp_path: Path) -> None:
        written = emit_report(tmp_path, make_rows())
        assert sorted(p.name for p in written) == [
            "ablation.csv", "entropy.csv", GENERATIONS_FILE, "summary.txt",
        ]

    def test_unwritable_directory(self, tmp_path: Path) -> None:
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(FormatError):
            emit_report(blocker / "report", make_rows())
