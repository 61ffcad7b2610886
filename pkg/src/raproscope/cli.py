"""Command-line interface.

Subcommands: ``inspect`` (graph summary), ``attribute`` (compute a .rel
file), ``render`` (heatmap PNG from a .rel file), ``evaluate``
(ratio / segmentation / perturb reports with CSV and figure output).
Exit codes: 0 success, 1 validation error, 2 I/O error.
"""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import figures
from .attribution import (
    METHODS,
    AttributionConfig,
    attribute,
    load_relevance,
    save_relevance,
)
from .errors import ConfigError, RaproscopeError
from .evaluation import (
    load_dataset,
    load_image,
    run_perturbation,
    run_ratio,
    run_segmentation,
    write_curve_csv,
    write_report,
)
from .inference import forward
from .model import load_model
from .render import render_heatmap


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse parser that reports usage errors instead of exiting 2."""

    def error(self, message):
        raise _UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_method_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--target", type=int, default=None, help="class index (default: predicted)")
    p.add_argument("--eps", type=float, default=1e-6, help="proportional-rule stabilizer")
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--ig-steps", type=int, default=50)


def _config_from(args) -> AttributionConfig:
    return AttributionConfig(
        method=args.method,
        epsilon=args.eps,
        alpha=args.alpha,
        beta=args.beta,
        ig_steps=args.ig_steps,
        target=args.target,
    )


def _cmd_inspect(args) -> int:
    graph = load_model(args.model)
    print(f"model: {args.model}")
    print(f"input shape: {list(graph.input_shape)}  classes: {graph.num_classes}")
    print("nodes:")
    for nid in graph.order:
        spec = graph.nodes[nid]
        extra = ""
        if spec.kind == "Conv2D":
            extra = f" w{list(spec.w.shape)} stride={spec.stride} pad={spec.pad}"
        elif spec.kind == "Dense":
            extra = f" w{list(spec.w.shape)}"
        elif spec.kind in ("MaxPool2D", "AvgPool2D"):
            extra = f" k={spec.kernel} stride={spec.stride}"
        print(f"  {nid:<12} {spec.kind:<14} -> {list(spec.out_shape)}{extra}")
    print("topological order: " + " -> ".join(graph.order))
    if graph.reference_input is not None and graph.reference_logits is not None:
        logits = forward(graph, graph.reference_input).logits
        gap = float(np.max(np.abs(logits - graph.reference_logits)))
        status = "ok" if gap <= 1e-4 else "MISMATCH"
        print(f"reference logits: max abs diff {gap:.3e} ({status})")
        if status == "MISMATCH":
            return 1
    return 0


def _cmd_attribute(args) -> int:
    graph = load_model(args.model)
    image = load_image(args.image)
    config = _config_from(args)
    trace = forward(graph, image)
    rmap = attribute(graph, trace, config)
    save_relevance(args.out, rmap, config, save_layers=args.save_layers)
    residual = rmap.conservation_residual
    res_txt = "n/a" if residual is None else f"{residual:.3e}"
    print(
        f"{args.method}: target={rmap.target} logit={rmap.logit:.6g} "
        f"conservation residual={res_txt} -> {args.out}"
    )
    return 0


def _cmd_render(args) -> int:
    header, tensors = load_relevance(args.rel)
    name = args.layer or "input"
    if name not in tensors:
        available = ", ".join(tensors)
        raise ConfigError(
            f"layer {name!r} not stored in {args.rel} (available: {available}); "
            "re-run attribute with --save-layers for intermediate maps"
        )
    rel = tensors[name]
    if rel.ndim == 1:
        raise ConfigError(f"layer {name!r} holds a vector; nothing spatial to render")
    render_heatmap(rel, args.out, scale=args.scale)
    print(f"rendered {name} ({header['method']}) -> {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    graph = load_model(args.model)
    samples = load_dataset(args.dataset)
    config = _config_from(args)
    report_path = Path(args.report)
    curve = None
    if args.protocol == "ratio":
        report = run_ratio(graph, samples, config)
    elif args.protocol == "segmentation":
        report = run_segmentation(graph, samples, config, mode=args.seg_mode)
    else:
        report, curve = run_perturbation(
            graph,
            samples,
            config,
            pixels_per_step=args.pixels_per_step,
            total_steps=args.steps,
            replace=args.replace,
        )
    write_report(report, report_path)
    outputs = [str(report_path)]
    if curve is not None:
        csv_path = report_path.with_suffix(".csv")
        write_curve_csv(curve, csv_path)
        outputs.append(str(csv_path))
    if not args.no_figure:
        fig_path = Path(args.figure) if args.figure else report_path.with_suffix(".png")
        if args.protocol == "ratio":
            figures.save_ratio_figure(report, fig_path)
        elif args.protocol == "segmentation":
            figures.save_segmentation_figure(report, fig_path)
        else:
            figures.save_curve_figure(report, fig_path)
        outputs.append(str(fig_path))
    print(json.dumps(report["aggregate"], sort_keys=True))
    print("wrote " + ", ".join(outputs))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="raproscope", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inspect", parents=[], help="print a model graph summary")
    p.add_argument("--model", required=True)
    p.set_defaults(func=_cmd_inspect)

    p = sub.add_parser("attribute", help="compute an attribution (.rel)")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    _add_method_flags(p)
    p.add_argument("--out", required=True)
    p.add_argument(
        "--save-layers", action="store_true", help="store per-layer maps in the .rel"
    )
    p.set_defaults(func=_cmd_attribute)

    p = sub.add_parser("render", help="render a .rel file to a heatmap PNG")
    p.add_argument("--rel", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--layer", default=None, help="node id of an intermediate map")
    p.add_argument("--scale", type=int, default=1, help="nearest-neighbor upscale factor")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("evaluate", help="run an evaluation protocol over a dataset")
    p.add_argument("protocol", choices=("ratio", "segmentation", "perturb"))
    p.add_argument("--model", required=True)
    p.add_argument("--dataset", required=True, help="JSON-lines dataset manifest")
    _add_method_flags(p)
    p.add_argument("--report", required=True, help="output JSON report path")
    p.add_argument("--figure", default=None, help="figure path (default: report stem .png)")
    p.add_argument("--no-figure", action="store_true")
    p.add_argument("--seg-mode", choices=("positive-only", "signed"), default="positive-only")
    p.add_argument("--pixels-per-step", type=int, default=8)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--replace", choices=("zero", "mean"), default="zero")
    p.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except _UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (RaproscopeError, IndexError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"raproscope: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"raproscope: i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
