"""Dense float32 tensor kernels used by every other module.

All kernels take and return contiguous numpy float32 arrays, refuse
non-finite values at their boundaries, and reduce in a fixed order so
repeated runs are bit-identical on the same machine.  There is no
broadcasting beyond the bias-add over output channels.
"""

import numpy as np

from .errors import NumericError, ShapeError

DTYPE = np.float32


def tensor(values, shape=None) -> np.ndarray:
    """Build a validated float32 tensor from nested lists or an array."""
    arr = np.ascontiguousarray(values, dtype=DTYPE)
    if shape is not None:
        arr = arr.reshape(shape)
    check_finite(arr, "tensor")
    return arr


def check_finite(arr: np.ndarray, label: str = "tensor") -> np.ndarray:
    """Raise NumericError if any value is NaN or infinite."""
    if not np.all(np.isfinite(arr)):
        raise NumericError(f"{label} contains non-finite values")
    return arr


def _as_f32(arr, label: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=DTYPE)
    check_finite(arr, label)
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a [M,K] with b [K,N]."""
    a = _as_f32(a, "matmul lhs")
    b = _as_f32(b, "matmul rhs")
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} vs {b.shape}")
    out = a @ b
    return check_finite(out, "matmul result")


def _conv_out_size(size: int, k: int, stride: int, pad: int) -> int:
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise ShapeError(
            f"window {k} with stride {stride} and pad {pad} does not tile extent {size}"
        )
    return span // stride + 1


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Unfold x [C,H,W] into columns [C*kh*kw, Ho*Wo]."""
    c, h, w = x.shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    if pad > 0:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, kh, kw, ho, wo),
        strides=(sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return windows.reshape(c * kh * kw, ho * wo)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    """Fold columns [C*kh*kw, Ho*Wo] back onto x_shape, summing overlaps."""
    c, h, w = x_shape
    ho = _conv_out_size(h, kh, stride, pad)
    wo = _conv_out_size(w, kw, stride, pad)
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=DTYPE)
    cols = cols.reshape(c, kh, kw, ho, wo)
    for u in range(kh):
        for v in range(kw):
            xp[:, u : u + stride * ho : stride, v : v + stride * wo : stride] += cols[:, u, v]
    if pad > 0:
        xp = xp[:, pad : pad + h, pad : pad + w]
    return np.ascontiguousarray(xp)


def conv2d(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None = None,
    stride: int = 1,
    pad: int = 0,
) -> np.ndarray:
    """Cross-correlate x [C,H,W] with kernels w [F,C,kh,kw], zero padding."""
    x = _as_f32(x, "conv2d input")
    w = _as_f32(w, "conv2d kernel")
    if x.ndim != 3 or w.ndim != 4:
        raise ShapeError(f"conv2d expects x [C,H,W] and w [F,C,kh,kw], got {x.shape}, {w.shape}")
    f, cw, kh, kw = w.shape
    if cw != x.shape[0]:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs kernel {w.shape}")
    cols = _im2col(x, kh, kw, stride, pad)
    out = w.reshape(f, -1) @ cols
    if b is not None:
        b = _as_f32(b, "conv2d bias")
        if b.shape != (f,):
            raise ShapeError(f"conv2d bias shape {b.shape} does not match {f} filters")
        out = out + b[:, None]
    ho = _conv_out_size(x.shape[1], kh, stride, pad)
    wo = _conv_out_size(x.shape[2], kw, stride, pad)
    return check_finite(out.reshape(f, ho, wo), "conv2d result")


def conv2d_input_grad(
    g: np.ndarray, w: np.ndarray, x_shape, stride: int = 1, pad: int = 0
) -> np.ndarray:
    """Adjoint of conv2d in its input: fold w^T applied to g [F,Ho,Wo]."""
    g = _as_f32(g, "conv2d upstream")
    w = _as_f32(w, "conv2d kernel")
    f = w.shape[0]
    dcols = w.reshape(f, -1).T @ g.reshape(f, -1)
    out = _col2im(dcols, x_shape, w.shape[2], w.shape[3], stride, pad)
    return check_finite(out, "conv2d input gradient")


def maxpool2d(x: np.ndarray, k: int, stride: int) -> tuple[np.ndarray, np.ndarray]:
    """Max pool x [C,H,W] with a k*k window.

    Returns (pooled, idx) where idx[c, oh, ow] is the flat row-major index
    of the winning element inside channel plane c.  Ties go to the lowest
    linear index.
    """
    x = _as_f32(x, "maxpool2d input")
    if x.ndim != 3:
        raise ShapeError(f"maxpool2d expects [C,H,W], got {x.shape}")
    c, h, w = x.shape
    ho = _conv_out_size(h, k, stride, 0)
    wo = _conv_out_size(w, k, stride, 0)
    sc, sh, sw = x.strides
    windows = np.lib.stride_tricks.as_strided(
        x,
        shape=(c, ho, wo, k, k),
        strides=(sc, sh * stride, sw * stride, sh, sw),
        writeable=False,
    )
    flat = windows.reshape(c, ho, wo, k * k)
    win = flat.argmax(axis=3)
    pooled = np.take_along_axis(flat, win[..., None], axis=3)[..., 0]
    rows = (np.arange(ho) * stride)[None, :, None] + win // k
    cols = (np.arange(wo) * stride)[None, None, :] + win % k
    idx = rows * w + cols
    return np.ascontiguousarray(pooled), np.ascontiguousarray(idx)


def maxpool_regather(x: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Read back the pooled values addressed by maxpool2d indices."""
    c = x.shape[0]
    planes = x.reshape(c, -1)
    return np.take_along_axis(planes, idx.reshape(c, -1), axis=1).reshape(idx.shape)


def maxpool_scatter(values: np.ndarray, idx: np.ndarray, x_shape) -> np.ndarray:
    """Route values [C,Ho,Wo] onto zeros of x_shape at the winner positions."""
    c, h, w = x_shape
    out = np.zeros((c, h * w), dtype=DTYPE)
    gidx = idx.reshape(c, -1) + (np.arange(c) * h * w)[:, None]
    np.add.at(out.reshape(-1), gidx.reshape(-1), values.astype(DTYPE).reshape(-1))
    return out.reshape(c, h, w)


def avgpool2d(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """Average pool x [C,H,W] with a k*k window."""
    x = _as_f32(x, "avgpool2d input")
    if x.ndim != 3:
        raise ShapeError(f"avgpool2d expects [C,H,W], got {x.shape}")
    c = x.shape[0]
    ho = _conv_out_size(x.shape[1], k, stride, 0)
    wo = _conv_out_size(x.shape[2], k, stride, 0)
    cols = _im2col(x, k, k, stride, 0).reshape(c, k * k, ho * wo)
    out = cols.sum(axis=1, dtype=DTYPE) / DTYPE(k * k)
    return out.reshape(c, ho, wo)


def avgpool2d_spread(s: np.ndarray, x_shape, k: int, stride: int) -> np.ndarray:
    """Adjoint of the window sum: add s[c,oh,ow] to every cell of its window."""
    c, h, w = x_shape
    s = np.asarray(s, dtype=DTYPE)
    cols = np.broadcast_to(s.reshape(c, 1, -1), (c, k * k, s.size // c)).reshape(
        c * k * k, -1
    )
    return _col2im(cols, x_shape, k, k, stride, 0)


def global_avgpool2d(x: np.ndarray) -> np.ndarray:
    """Mean over the spatial extent of x [C,H,W], returning [C]."""
    x = _as_f32(x, "global_avgpool2d input")
    if x.ndim != 3:
        raise ShapeError(f"global_avgpool2d expects [C,H,W], got {x.shape}")
    return x.reshape(x.shape[0], -1).mean(axis=1, dtype=DTYPE)


def relu(x: np.ndarray) -> np.ndarray:
    """Elementwise max(x, 0)."""
    x = _as_f32(x, "relu input")
    return np.maximum(x, DTYPE(0))


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise sum of two equal-shaped tensors."""
    a = _as_f32(a, "add lhs")
    b = _as_f32(b, "add rhs")
    if a.shape != b.shape:
        raise ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return a + b


def flatten(x: np.ndarray) -> np.ndarray:
    """Row-major flattening to a vector."""
    x = _as_f32(x, "flatten input")
    return np.ascontiguousarray(x.reshape(-1))
