"""Quantitative evaluation protocols for attribution maps.

Three protocols are implemented over channel-summed per-pixel maps:

* outside-inside ratio: how well positive relevance concentrates inside
  a bounding box and negative relevance outside of it;
* segmentation agreement: pixel accuracy and intersection-over-union of
  a thresholded relevance map against a binary object mask;
* least-relevant-first perturbation: progressively zero the pixels the
  map ranks least relevant and track top-1 accuracy.

Per-sample work is independent; ``RAPROSCOPE_THREADS`` caps the thread
pool used to spread it.  Aggregation always happens in sample order, so
reports are deterministic regardless of parallelism.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .attribution import AttributionConfig, attribute
from .errors import ConfigError, DegenerateBboxError, UndefinedRatioError
from .inference import forward
from .model import ModelGraph
from .render import channel_sum
from .tensor import DTYPE


@dataclass
class EvalSample:
    """One labeled image with optional bounding box and object mask."""

    image: np.ndarray
    label: int
    bbox: tuple[int, int, int, int] | None = None  # x0, y0, x1, y1; end-exclusive
    mask: np.ndarray | None = None
    path: str = ""


@dataclass
class PerturbationCurve:
    """Accuracy as a function of pixels removed, starting at 0 removed."""

    steps: list[tuple[int, float]]
    pixels_per_step: int
    total_steps: int

    def __post_init__(self):
        counts = [c for c, _ in self.steps]
        if counts[0] != 0 or any(b <= a for a, b in zip(counts, counts[1:])):
            raise ConfigError("perturbation curve pixel counts must start at 0 and increase")


def load_image(path) -> np.ndarray:
    """Load a PNG or .npy image as a float32 [C,H,W] tensor in [0,1]."""
    path = str(path)
    if path.endswith(".npy"):
        arr = np.load(path).astype(DTYPE)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise ConfigError(f"{path}: raw tensors must be [C,H,W] or [H,W]")
        return np.ascontiguousarray(arr)
    with Image.open(path) as img:
        arr = np.asarray(img, dtype=DTYPE) / DTYPE(255)
    if arr.ndim == 2:
        return arr[None]
    return np.ascontiguousarray(arr.transpose(2, 0, 1))


def _load_mask(path, spatial) -> np.ndarray:
    path = str(path)
    if path.endswith(".npy"):
        mask = np.load(path) != 0
    else:
        with Image.open(path) as img:
            mask = np.asarray(img) != 0
        if mask.ndim == 3:
            mask = mask.any(axis=2)
    if mask.shape != spatial:
        raise ConfigError(f"{path}: mask shape {mask.shape} != image spatial {spatial}")
    return mask


def load_dataset(manifest_path) -> list[EvalSample]:
    """Read a JSON-lines dataset manifest.

    Each record holds ``image`` (PNG or .npy path, relative to the
    manifest), ``label``, optional ``bbox`` [x0, y0, x1, y1]
    (end-exclusive), and optional ``mask`` path.
    """
    from pathlib import Path

    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    samples = []
    with open(manifest_path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            image = load_image(root / rec["image"])
            h, w = image.shape[1:]
            bbox = rec.get("bbox")
            if bbox is not None:
                x0, y0, x1, y1 = (int(v) for v in bbox)
                if not (0 <= x0 <= x1 <= w and 0 <= y0 <= y1 <= h):
                    raise ConfigError(
                        f"{manifest_path}:{line_no}: bbox {bbox} outside {w}x{h} image"
                    )
                bbox = (x0, y0, x1, y1)
            mask = rec.get("mask")
            if mask is not None:
                mask = _load_mask(root / mask, (h, w))
            samples.append(
                EvalSample(
                    image=image,
                    label=int(rec["label"]),
                    bbox=bbox,
                    mask=mask,
                    path=str(rec["image"]),
                )
            )
    return samples


def _map_samples(fn, items):
    threads = int(os.environ.get("RAPROSCOPE_THREADS", "1") or "1")
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def outside_inside_ratio(rel2d: np.ndarray, bbox) -> float:
    """Ratio of misplaced to well-placed relevance around a bounding box.

    Positive relevance outside the box and negative relevance inside it
    count as misplaced (numerator); their counterparts count as
    well-placed (denominator).  Negative relevance enters through its
    absolute value, so negatives inside the box increase the ratio and
    negatives outside decrease it.  Lower is better; an all-positive map
    reduces to mean-outside over mean-inside.
    """
    rel = np.asarray(rel2d, dtype=np.float64)
    if rel.ndim != 2:
        raise ConfigError(f"expected a per-pixel map, got shape {rel.shape}")
    h, w = rel.shape
    x0, y0, x1, y1 = bbox
    inside = np.zeros((h, w), dtype=bool)
    inside[y0:y1, x0:x1] = True
    n_in = int(inside.sum())
    n_out = h * w - n_in
    if n_in == 0 or n_out == 0:
        raise DegenerateBboxError(f"bbox {bbox} leaves an empty region in {w}x{h}")
    pos = np.clip(rel, 0.0, None)
    neg = -np.clip(rel, None, 0.0)
    numerator = pos[~inside].sum() / n_out + neg[inside].sum() / n_in
    denominator = pos[inside].sum() / n_in + neg[~inside].sum() / n_out
    if denominator == 0:
        raise UndefinedRatioError("no well-placed relevance; ratio undefined")
    return float(numerator / denominator)


def segmentation_metrics(
    rel2d: np.ndarray, mask: np.ndarray, mode: str = "positive-only"
) -> tuple[float, float]:
    """Pixel accuracy and foreground IOU of a thresholded relevance map.

    ``positive-only`` zeroes negative relevance and thresholds at the
    map mean; ``signed`` keeps the signed map and thresholds at zero.
    An empty union yields IOU 1.0 (both prediction and mask empty).
    """
    rel = np.asarray(rel2d, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if rel.shape != mask.shape:
        raise ConfigError(f"map shape {rel.shape} != mask shape {mask.shape}")
    if mode == "positive-only":
        posmap = np.clip(rel, 0.0, None)
        pred = posmap > posmap.mean()
    elif mode == "signed":
        pred = rel > 0.0
    else:
        raise ConfigError(f"unknown segmentation mode {mode!r}")
    accuracy = float((pred == mask).mean())
    union = int((pred | mask).sum())
    inter = int((pred & mask).sum())
    iou = 1.0 if union == 0 else inter / union
    return accuracy, float(iou)


def pixel_removal_order(rel2d: np.ndarray) -> np.ndarray:
    """Flat pixel indices sorted by ascending relevance, ties by index."""
    flat = np.asarray(rel2d, dtype=np.float64).ravel()
    return np.argsort(flat, kind="stable")


def lerf_perturbation(
    graph: ModelGraph,
    samples: list[EvalSample],
    rel_maps: list[np.ndarray],
    pixels_per_step: int,
    total_steps: int,
    replace: str = "zero",
) -> PerturbationCurve:
    """Least-relevant-first pixel removal.

    At each step the next ``pixels_per_step`` pixels in ascending
    relevance order are overwritten across all channels (with zero, or
    with the per-channel mean of the original image), the network is
    re-run, and top-1 accuracy over the whole set is recorded.
    """
    if len(samples) != len(rel_maps):
        raise ConfigError("one relevance map per sample is required")
    if replace not in ("zero", "mean"):
        raise ConfigError(f"unknown replacement {replace!r}")
    spatial = samples[0].image.shape[1:]
    n_pixels = int(np.prod(spatial))
    if pixels_per_step * total_steps > n_pixels:
        raise ConfigError(
            f"{pixels_per_step} px * {total_steps} steps exceeds {n_pixels} pixels"
        )

    def run_one(pair) -> np.ndarray:
        sample, rel = pair
        order = pixel_removal_order(channel_sum(rel) if rel.ndim == 3 else rel)
        image = sample.image.copy()
        fill = (
            np.zeros(image.shape[0], dtype=DTYPE)
            if replace == "zero"
            else image.reshape(image.shape[0], -1).mean(axis=1, dtype=DTYPE)
        )
        correct = np.zeros(total_steps + 1, dtype=bool)
        correct[0] = forward(graph, image).predicted == sample.label
        flat = image.reshape(image.shape[0], -1)
        for step in range(1, total_steps + 1):
            chunk = order[(step - 1) * pixels_per_step : step * pixels_per_step]
            flat[:, chunk] = fill[:, None]
            correct[step] = forward(graph, image).predicted == sample.label
        return correct

    results = _map_samples(run_one, list(zip(samples, rel_maps)))
    hits = np.stack(results).mean(axis=0)
    steps = [(k * pixels_per_step, float(hits[k])) for k in range(total_steps + 1)]
    return PerturbationCurve(steps, pixels_per_step, total_steps)


def _attribute_sample(graph: ModelGraph, config: AttributionConfig, sample: EvalSample):
    trace = forward(graph, sample.image)
    rmap = attribute(graph, trace, config)
    return trace, channel_sum(rmap.input_relevance)


def run_ratio(graph: ModelGraph, samples, config: AttributionConfig) -> dict:
    """Outside-inside ratio over a dataset, with and without negatives."""

    def one(indexed):
        idx, sample = indexed
        if sample.bbox is None:
            raise ConfigError(f"sample {idx} ({sample.path}) has no bounding box")
        trace, rel = _attribute_sample(graph, config, sample)
        return {
            "index": idx,
            "image": sample.path,
            "label": sample.label,
            "predicted": trace.predicted,
            "mu_all": outside_inside_ratio(rel, sample.bbox),
            "mu_pos": outside_inside_ratio(np.clip(rel, 0.0, None), sample.bbox),
        }

    rows = _map_samples(one, list(enumerate(samples)))
    return {
        "metric": "outside_inside_ratio",
        "method": config.method,
        "num_samples": len(rows),
        "per_sample": rows,
        "aggregate": {
            "mean_mu_all": float(np.mean([r["mu_all"] for r in rows])),
            "mean_mu_pos": float(np.mean([r["mu_pos"] for r in rows])),
        },
    }


def run_segmentation(
    graph: ModelGraph, samples, config: AttributionConfig, mode: str = "positive-only"
) -> dict:
    """Segmentation agreement over a dataset.

    The aggregate mIOU is the mean over samples of the per-sample mean
    of foreground and background IOU.
    """

    def one(indexed):
        idx, sample = indexed
        if sample.mask is None:
            raise ConfigError(f"sample {idx} ({sample.path}) has no mask")
        trace, rel = _attribute_sample(graph, config, sample)
        accuracy, iou_fg = segmentation_metrics(rel, sample.mask, mode)
        if mode == "positive-only":
            posmap = np.clip(np.asarray(rel, dtype=np.float64), 0.0, None)
            pred = posmap > posmap.mean()
        else:
            pred = np.asarray(rel, dtype=np.float64) > 0.0
        union_bg = int((~pred | ~sample.mask).sum())
        inter_bg = int((~pred & ~sample.mask).sum())
        iou_bg = 1.0 if union_bg == 0 else inter_bg / union_bg
        return {
            "index": idx,
            "image": sample.path,
            "label": sample.label,
            "predicted": trace.predicted,
            "pixel_accuracy": accuracy,
            "iou_foreground": iou_fg,
            "iou_background": iou_bg,
            "miou": (iou_fg + iou_bg) / 2.0,
            "empty_union": not pred.any() and not sample.mask.any(),
        }

    rows = _map_samples(one, list(enumerate(samples)))
    return {
        "metric": "segmentation",
        "mode": mode,
        "method": config.method,
        "num_samples": len(rows),
        "per_sample": rows,
        "aggregate": {
            "pixel_accuracy": float(np.mean([r["pixel_accuracy"] for r in rows])),
            "miou": float(np.mean([r["miou"] for r in rows])),
            "empty_union_samples": [r["index"] for r in rows if r["empty_union"]],
        },
    }


def run_perturbation(
    graph: ModelGraph,
    samples,
    config: AttributionConfig,
    pixels_per_step: int,
    total_steps: int,
    replace: str = "zero",
) -> tuple[dict, PerturbationCurve]:
    """Least-relevant-first perturbation over a dataset."""

    def one(sample):
        _, rel = _attribute_sample(graph, config, sample)
        return rel

    rel_maps = _map_samples(one, list(samples))
    curve = lerf_perturbation(
        graph, samples, rel_maps, pixels_per_step, total_steps, replace
    )
    report = {
        "metric": "lerf_perturbation",
        "method": config.method,
        "num_samples": len(samples),
        "pixels_per_step": pixels_per_step,
        "total_steps": total_steps,
        "replace": replace,
        "curve": [{"pixels_removed": c, "accuracy": a} for c, a in curve.steps],
        "aggregate": {
            "baseline_accuracy": curve.steps[0][1],
            "final_accuracy": curve.steps[-1][1],
            "degradation": curve.steps[0][1] - curve.steps[-1][1],
        },
    }
    return report, curve


def write_report(report: dict, path) -> None:
    """Write a metric report as stable, sorted JSON."""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_curve_csv(curve: PerturbationCurve, path) -> None:
    """Write a perturbation curve as two-column CSV."""
    import csv

    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["pixels_removed", "accuracy"])
        for count, accuracy in curve.steps:
            writer.writerow([count, repr(accuracy)])
