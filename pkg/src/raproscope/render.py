"""Heatmap rendering of relevance maps.

Maps are reduced to one value per pixel by summing over channels, then
normalized symmetrically so the largest magnitude maps to 1 and zero
stays at the colormap midpoint.  The diverging blue-white-red palette
puts pure red at the positive extreme, pure blue at the negative one,
and white at zero, so rendering is invariant to positive rescaling of
the map.
"""

import numpy as np
from PIL import Image

from .errors import ShapeError
from .tensor import DTYPE


def channel_sum(rel: np.ndarray) -> np.ndarray:
    """Reduce a [C,H,W] relevance tensor to one value per pixel."""
    rel = np.asarray(rel)
    if rel.ndim == 2:
        return rel.astype(DTYPE)
    if rel.ndim == 3:
        return rel.sum(axis=0, dtype=DTYPE)
    raise ShapeError(f"cannot reduce shape {rel.shape} to a per-pixel map")


def heatmap_bytes(rel2d: np.ndarray) -> np.ndarray:
    """Map a per-pixel relevance array to uint8 RGB."""
    rel = np.asarray(rel2d, dtype=np.float64)
    if rel.ndim != 2:
        raise ShapeError(f"heatmap expects a 2-D map, got {rel.shape}")
    peak = np.abs(rel).max()
    t = rel / peak if peak > 0 else np.zeros_like(rel)
    fade_pos = np.rint(255.0 * (1.0 - np.clip(t, 0.0, 1.0))).astype(np.uint8)
    fade_neg = np.rint(255.0 * (1.0 + np.clip(t, -1.0, 0.0))).astype(np.uint8)
    rgb = np.empty(rel.shape + (3,), dtype=np.uint8)
    rgb[..., 0] = fade_neg
    rgb[..., 1] = np.minimum(fade_pos, fade_neg)
    rgb[..., 2] = fade_pos
    return rgb


def render_heatmap(rel: np.ndarray, out_path, scale: int = 1) -> np.ndarray:
    """Render a relevance tensor to an 8-bit RGB PNG.

    Accepts either a [C,H,W] tensor (summed over channels first) or a
    per-pixel map.  ``scale`` upsamples by nearest neighbor.  An
    all-zero map renders pure white.
    """
    rgb = heatmap_bytes(channel_sum(rel))
    if scale > 1:
        rgb = np.repeat(np.repeat(rgb, scale, axis=0), scale, axis=1)
    Image.fromarray(rgb, "RGB").save(out_path, format="PNG")
    return rgb
