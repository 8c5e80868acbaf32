"""numpy fallback implementations of the hot kernels.

Contract shared with the compiled backend: float32 inputs accumulate in
float64 and are stored back as float32; float64 inputs stay float64.
"""

import numpy as np

NAME = "python"


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    out = a.astype(np.float64, copy=False) @ b.astype(np.float64, copy=False)
    return out.astype(a.dtype, copy=False)


def _axis_taps(n_in: int, n_out: int):
    """Source index pair and interpolation weight per output coordinate."""
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    lo = np.floor(pos).astype(np.int64)
    w = pos - lo
    w[lo < 0] = 0.0
    w[lo > n_in - 2] = 1.0 if n_in > 1 else 0.0
    lo = np.clip(lo, 0, max(n_in - 2, 0))
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, w


def bilinear_fwd(x: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize C x H x W to C x out_h x out_w (half-pixel centers, edges clamped)."""
    c, h, w = x.shape
    y0, y1, wy = _axis_taps(h, out_h)
    x0, x1, wx = _axis_taps(w, out_w)
    src = x.astype(np.float64, copy=False)
    top = src[:, y0, :] * (1.0 - wy)[None, :, None] + src[:, y1, :] * wy[None, :, None]
    out = top[:, :, x0] * (1.0 - wx)[None, None, :] + top[:, :, x1] * wx[None, None, :]
    return np.ascontiguousarray(out.astype(x.dtype, copy=False))


def bilinear_bwd(g: np.ndarray, in_h: int, in_w: int) -> np.ndarray:
    """Transpose of bilinear_fwd: scatter output gradients to input cells."""
    c, out_h, out_w = g.shape
    y0, y1, wy = _axis_taps(in_h, out_h)
    x0, x1, wx = _axis_taps(in_w, out_w)
    gsrc = g.astype(np.float64, copy=False)
    mid = np.zeros((c, in_h, out_w), dtype=np.float64)
    np.add.at(mid, (slice(None), y0, slice(None)), gsrc * (1.0 - wy)[None, :, None])
    np.add.at(mid, (slice(None), y1, slice(None)), gsrc * wy[None, :, None])
    out = np.zeros((c, in_h, in_w), dtype=np.float64)
    np.add.at(out, (slice(None), slice(None), x0), mid * (1.0 - wx)[None, None, :])
    np.add.at(out, (slice(None), slice(None), x1), mid * wx[None, None, :])
    return out.astype(g.dtype, copy=False)


def adam_step(p, g, m, v, t, lr, beta1, beta2, eps):
    """One bias-corrected Adam update; m and v are updated in place."""
    g64 = g.astype(np.float64, copy=False)
    m64 = m.astype(np.float64, copy=False) * beta1 + (1.0 - beta1) * g64
    v64 = v.astype(np.float64, copy=False) * beta2 + (1.0 - beta2) * g64 * g64
    m[...] = m64.astype(m.dtype, copy=False)
    v[...] = v64.astype(v.dtype, copy=False)
    mhat = m64 / (1.0 - beta1**t)
    vhat = v64 / (1.0 - beta2**t)
    out = p.astype(np.float64, copy=False) - lr * mhat / (np.sqrt(vhat) + eps)
    return out.astype(p.dtype, copy=False)
