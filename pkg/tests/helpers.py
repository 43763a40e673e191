"""Independent oracles shared by the test modules.

Nothing here calls into leafnet's vectorised kernels: convolution is six
nested loops, pooling is a window scan, gradients are central differences.
"""

import numpy as np

H = 1e-4


def rel_error(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def numeric_grad(f, x, h=H):
    """Central differences of scalar ``f()`` w.r.t. array ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def conv2d_loops(x, w, b, stride=1, pad=0):
    n, c, hh, ww = x.shape
    f, _, kh, kw = w.shape
    xp = np.zeros((n, c, hh + 2 * pad, ww + 2 * pad))
    xp[:, :, pad:pad + hh, pad:pad + ww] = x
    ho = (hh + 2 * pad - kh) // stride + 1
    wo = (ww + 2 * pad - kw) // stride + 1
    out = np.zeros((n, f, ho, wo))
    for s in range(n):
        for o in range(f):
            for i in range(ho):
                for j in range(wo):
                    acc = b[o]
                    for ch in range(c):
                        for m in range(kh):
                            for q in range(kw):
                                acc += xp[s, ch, i * stride + m, j * stride + q] * w[o, ch, m, q]
                    out[s, o, i, j] = acc
    return out


def maxpool_scan(x, k, s):
    n, c, hh, ww = x.shape
    ho, wo = (hh - k) // s + 1, (ww - k) // s + 1
    out = np.zeros((n, c, ho, wo))
    for a in range(n):
        for ch in range(c):
            for i in range(ho):
                for j in range(wo):
                    best = -np.inf
                    for m in range(k):
                        for q in range(k):
                            best = max(best, x[a, ch, i * s + m, j * s + q])
                    out[a, ch, i, j] = best
    return out


def reflect_scalar(i, n):
    """Mirror index without repeating the border: ... 2 1 0 1 2 ..."""
    if n == 1:
        return 0
    while i < 0 or i >= n:
        if i < 0:
            i = -i
        if i >= n:
            i = 2 * (n - 1) - i
    return i


def bilinear_scalar(img, r, c):
    """Per-pixel bilinear sample with reflect fill, one channel, scalar code."""
    h, w = img.shape
    r0, c0 = int(np.floor(r)), int(np.floor(c))
    fr, fc = r - r0, c - c0
    total = 0.0
    for dr, wr in ((0, 1 - fr), (1, fr)):
        for dc, wc in ((0, 1 - fc), (1, fc)):
            total += wr * wc * img[reflect_scalar(r0 + dr, h), reflect_scalar(c0 + dc, w)]
    return total


def inverse_map_oracle(img, mapping):
    """Apply ``mapping(r, c) -> (src_r, src_c)`` pixel by pixel to a (H, W) image."""
    h, w = img.shape
    out = np.zeros_like(img)
    for r in range(h):
        for c in range(w):
            sr, sc = mapping(r, c)
            out[r, c] = min(max(bilinear_scalar(img, sr, sc), 0.0), 1.0)
    return out
