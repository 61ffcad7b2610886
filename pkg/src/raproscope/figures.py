"""Matplotlib figures saved alongside evaluation reports."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

_SAVE_KW = {"dpi": 120, "metadata": {"Software": "raproscope"}}


def save_ratio_figure(report: dict, out_path) -> None:
    """Histogram of per-sample outside-inside ratios."""
    mu_all = [r["mu_all"] for r in report["per_sample"]]
    mu_pos = [r["mu_pos"] for r in report["per_sample"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist([mu_all, mu_pos], bins=20, label=["all relevance", "positive only"])
    ax.set_xlabel("outside-inside ratio")
    ax.set_ylabel("samples")
    ax.set_title(f"outside-inside ratio ({report['method']})")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def save_segmentation_figure(report: dict, out_path) -> None:
    """Per-sample accuracy and mIOU scatter."""
    acc = [r["pixel_accuracy"] for r in report["per_sample"]]
    miou = [r["miou"] for r in report["per_sample"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.scatter(acc, miou, s=12, alpha=0.7)
    ax.set_xlabel("pixel accuracy")
    ax.set_ylabel("mIOU")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_title(f"segmentation agreement ({report['method']}, {report['mode']})")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)


def save_curve_figure(report: dict, out_path) -> None:
    """Accuracy versus pixels removed for a perturbation run."""
    xs = [p["pixels_removed"] for p in report["curve"]]
    ys = [p["accuracy"] for p in report["curve"]]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, ys, marker="o", markersize=3)
    ax.set_xlabel("pixels removed")
    ax.set_ylabel("top-1 accuracy")
    ax.set_ylim(0, 1.05)
    ax.set_title(f"least-relevant-first perturbation ({report['method']})")
    fig.tight_layout()
    fig.savefig(out_path, **_SAVE_KW)
    plt.close(fig)
