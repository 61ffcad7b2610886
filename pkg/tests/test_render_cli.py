"""Heatmap rendering bytes and end-to-end CLI behavior."""

import json

import numpy as np
import pytest
from PIL import Image

from raproscope import LayerSpec, build_graph, save_model
from raproscope.cli import main
from raproscope.render import channel_sum, heatmap_bytes, render_heatmap

F32 = np.float32


class TestHeatmap:
    def test_all_zero_renders_white(self, tmp_path):
        rgb = render_heatmap(np.zeros((1, 3, 3), dtype=F32), tmp_path / "h.png")
        assert np.all(rgb == 255)
        with Image.open(tmp_path / "h.png") as img:
            assert img.size == (3, 3)
            assert np.all(np.asarray(img) == 255)

    def test_max_positive_is_pure_red(self):
        rel = np.zeros((2, 2))
        rel[0, 1] = 3.0
        rgb = heatmap_bytes(rel)
        assert tuple(rgb[0, 1]) == (255, 0, 0)
        assert tuple(rgb[0, 0]) == (255, 255, 255)

    def test_max_negative_is_pure_blue(self):
        rel = np.zeros((2, 2))
        rel[1, 0] = -1.0
        rgb = heatmap_bytes(rel)
        assert tuple(rgb[1, 0]) == (0, 0, 255)

    def test_scaling_is_byte_identical(self, tmp_path):
        rng = np.random.default_rng(3)
        rel = rng.normal(0, 1, (1, 5, 5)).astype(F32)
        render_heatmap(rel, tmp_path / "a.png")
        render_heatmap(2.0 * rel, tmp_path / "b.png")
        render_heatmap(0.5 * rel, tmp_path / "c.png")
        a = (tmp_path / "a.png").read_bytes()
        assert a == (tmp_path / "b.png").read_bytes()
        assert a == (tmp_path / "c.png").read_bytes()

    def test_channel_sum(self):
        rel = np.stack([np.ones((2, 2)), 2 * np.ones((2, 2))]).astype(F32)
        np.testing.assert_array_equal(channel_sum(rel), 3 * np.ones((2, 2), dtype=F32))

    def test_upscale(self, tmp_path):
        rgb = render_heatmap(np.ones((1, 2, 2), dtype=F32), tmp_path / "h.png", scale=3)
        assert rgb.shape == (6, 6, 3)


def fixture_model(tmp_path):
    rng = np.random.default_rng(77)
    layers = [
        LayerSpec("conv1", "Conv2D", ("input",), stride=1, pad=1,
                  w=rng.normal(0, 0.5, (4, 1, 3, 3)).astype(F32),
                  b=rng.normal(0, 0.1, 4).astype(F32)),
        LayerSpec("relu1", "ReLU", ("conv1",)),
        LayerSpec("pool1", "MaxPool2D", ("relu1",), kernel=2, stride=2),
        LayerSpec("flat", "Flatten", ("pool1",)),
        LayerSpec("fc", "Dense", ("flat",),
                  w=rng.normal(0, 0.3, (4 * 4 * 4, 3)).astype(F32),
                  b=rng.normal(0, 0.1, 3).astype(F32)),
    ]
    graph = build_graph(layers, input_shape=(1, 8, 8), num_classes=3)
    graph.reference_input = rng.random((1, 8, 8)).astype(F32)
    from raproscope import forward

    graph.reference_logits = forward(graph, graph.reference_input).logits
    save_model(graph, tmp_path / "model.json")
    return tmp_path / "model.json"


def fixture_dataset(tmp_path, n=3):
    rng = np.random.default_rng(5)
    lines = []
    for i in range(n):
        arr = (rng.random((8, 8)) * 255).astype(np.uint8)
        Image.fromarray(arr, "L").save(tmp_path / f"img{i}.png")
        lines.append(json.dumps({"image": f"img{i}.png", "label": int(i % 3),
                                 "bbox": [2, 2, 6, 6]}))
    (tmp_path / "data.jsonl").write_text("\n".join(lines) + "\n")
    return tmp_path / "data.jsonl"


class TestCli:
    def test_inspect_prints_nodes(self, tmp_path, capsys):
        model = fixture_model(tmp_path)
        assert main(["inspect", "--model", str(model)]) == 0
        out = capsys.readouterr().out
        for nid in ("input", "conv1", "pool1", "fc", "output"):
            assert nid in out
        assert "topological order" in out
        assert "reference logits" in out and "ok" in out

    def test_attribute_then_render_dimensions(self, tmp_path, capsys):
        model = fixture_model(tmp_path)
        fixture_dataset(tmp_path)
        rel = tmp_path / "out.rel"
        png = tmp_path / "out.png"
        assert main(["attribute", "--model", str(model), "--image",
                     str(tmp_path / "img0.png"), "--method", "rap",
                     "--out", str(rel)]) == 0
        assert main(["render", "--rel", str(rel), "--out", str(png)]) == 0
        with Image.open(png) as img:
            assert img.size == (8, 8)

    def test_render_intermediate_layer(self, tmp_path):
        model = fixture_model(tmp_path)
        fixture_dataset(tmp_path)
        rel = tmp_path / "out.rel"
        assert main(["attribute", "--model", str(model), "--image",
                     str(tmp_path / "img0.png"), "--method", "rap",
                     "--out", str(rel), "--save-layers"]) == 0
        assert main(["render", "--rel", str(rel), "--out",
                     str(tmp_path / "conv1.png"), "--layer", "conv1"]) == 0
        with Image.open(tmp_path / "conv1.png") as img:
            assert img.size == (8, 8)

    def test_render_missing_layer_is_validation_error(self, tmp_path, capsys):
        model = fixture_model(tmp_path)
        fixture_dataset(tmp_path)
        rel = tmp_path / "out.rel"
        main(["attribute", "--model", str(model), "--image",
              str(tmp_path / "img0.png"), "--method", "grad", "--out", str(rel)])
        assert main(["render", "--rel", str(rel), "--out",
                     str(tmp_path / "x.png"), "--layer", "conv1"]) == 1

    def test_evaluate_perturb_zero_steps(self, tmp_path):
        model = fixture_model(tmp_path)
        dataset = fixture_dataset(tmp_path)
        report = tmp_path / "perturb.json"
        assert main(["evaluate", "perturb", "--model", str(model),
                     "--dataset", str(dataset), "--method", "rap",
                     "--report", str(report), "--pixels-per-step", "4",
                     "--steps", "0"]) == 0
        data = json.loads(report.read_text())
        assert len(data["curve"]) == 1
        assert data["curve"][0]["pixels_removed"] == 0
        assert (tmp_path / "perturb.csv").exists()
        assert (tmp_path / "perturb.png").exists()

    def test_evaluate_ratio_report(self, tmp_path):
        model = fixture_model(tmp_path)
        dataset = fixture_dataset(tmp_path)
        report = tmp_path / "ratio.json"
        assert main(["evaluate", "ratio", "--model", str(model),
                     "--dataset", str(dataset), "--method", "lrp-eps",
                     "--report", str(report)]) == 0
        data = json.loads(report.read_text())
        assert data["num_samples"] == 3
        assert (tmp_path / "ratio.png").exists()

    def test_unknown_flag_exit_1(self, tmp_path, capsys):
        assert main(["inspect", "--bogus"]) == 1
        assert "usage" in capsys.readouterr().err

    def test_missing_model_exit_2(self, tmp_path, capsys):
        assert main(["inspect", "--model", str(tmp_path / "none.json")]) == 2
        assert "error" in capsys.readouterr().err

    def test_invalid_target_exit_1(self, tmp_path):
        model = fixture_model(tmp_path)
        fixture_dataset(tmp_path)
        assert main(["attribute", "--model", str(model), "--image",
                     str(tmp_path / "img0.png"), "--method", "rap",
                     "--target", "9", "--out", str(tmp_path / "o.rel")]) == 1

    def test_byte_identical_reruns(self, tmp_path):
        model = fixture_model(tmp_path)
        dataset = fixture_dataset(tmp_path)
        payloads = []
        for tag in ("one", "two"):
            rel = tmp_path / f"{tag}.rel"
            report = tmp_path / f"{tag}.json"
            main(["attribute", "--model", str(model), "--image",
                  str(tmp_path / "img0.png"), "--method", "rap", "--out", str(rel)])
            main(["evaluate", "perturb", "--model", str(model),
                  "--dataset", str(dataset), "--method", "rap",
                  "--report", str(report), "--pixels-per-step", "4", "--steps", "3"])
            payloads.append((
                rel.read_bytes(),
                report.read_bytes(),
                (tmp_path / f"{tag}.csv").read_bytes(),
                (tmp_path / f"{tag}.png").read_bytes(),
            ))
        assert payloads[0] == payloads[1]
