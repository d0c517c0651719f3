"""Independent straight-line re-implementations used as test oracles.

Everything here is deliberately naive: nested loops, direct formula
evaluation, scipy reference routines. None of it shares code with the
package under test.
"""

import numpy as np
from scipy import signal


def naive_conv2d(x, w, b=None, stride=1, padding=0):
    """Quadruple-loop cross correlation over (N, C, H, W)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo), dtype=x.dtype)
    for ni in range(n):
        for oi in range(cout):
            for yi in range(ho):
                for xi in range(wo):
                    patch = xp[
                        ni,
                        :,
                        yi * stride : yi * stride + kh,
                        xi * stride : xi * stride + kw,
                    ]
                    out[ni, oi, yi, xi] = (patch * w[oi]).sum()
            if b is not None:
                out[ni, oi] += b[oi]
    return out


def scipy_conv2d(x, w, b=None, padding=0):
    """Stride-1 cross correlation via scipy.signal, for larger inputs."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.zeros((n, cin, h + 2 * padding, wd + 2 * padding), dtype=np.float64)
    xp[:, :, padding : padding + h, padding : padding + wd] = x
    ho = h + 2 * padding - kh + 1
    wo = wd + 2 * padding - kw + 1
    out = np.zeros((n, cout, ho, wo), dtype=np.float64)
    for ni in range(n):
        for oi in range(cout):
            acc = np.zeros((ho, wo), dtype=np.float64)
            for ci in range(cin):
                acc += signal.correlate2d(xp[ni, ci], w[oi, ci], mode="valid")
            out[ni, oi] = acc + (0.0 if b is None else b[oi])
    return out


def naive_maxpool2d(x, k):
    n, c, h, w = x.shape
    out = np.empty((n, c, h // k, w // k), dtype=x.dtype)
    for yi in range(h // k):
        for xi in range(w // k):
            win = x[:, :, yi * k : (yi + 1) * k, xi * k : (xi + 1) * k]
            out[:, :, yi, xi] = win.max(axis=(2, 3))
    return out


def naive_relu(x):
    return np.maximum(x, 0)


def naive_sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def naive_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def naive_linear(x, w, b=None):
    y = np.asarray(x) @ np.asarray(w).T
    return y if b is None else y + b


def naive_bce(pred, target, clamp=1e-7):
    p = np.clip(np.asarray(pred, dtype=np.float64), clamp, 1.0 - clamp)
    t = np.asarray(target, dtype=np.float64)
    return float(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).mean())


def naive_ce(probs, labels):
    p = np.asarray(probs, dtype=np.float64).reshape(len(np.atleast_1d(labels)), -1)
    picked = p[np.arange(p.shape[0]), np.atleast_1d(labels)]
    return float(-np.log(picked).mean())


def gaussian_pdf_direct(x, mean, cov):
    """Direct multivariate normal density, no log-space tricks."""
    d = len(mean)
    diff = np.asarray(x, dtype=np.float64) - mean
    det = np.linalg.det(cov)
    inv = np.linalg.inv(cov)
    norm = 1.0 / np.sqrt(((2.0 * np.pi) ** d) * det)
    return float(norm * np.exp(-0.5 * diff @ inv @ diff))


def bilinear_formula(src, out_h, out_w):
    """Per-pixel half-pixel-convention interpolation, one sample at a time."""
    src = np.asarray(src, dtype=np.float64)
    in_h, in_w = src.shape
    out = np.empty((out_h, out_w), dtype=np.float64)
    for oy in range(out_h):
        sy = min(max((oy + 0.5) * in_h / out_h - 0.5, 0.0), in_h - 1.0)
        y0 = int(np.floor(sy))
        y1 = min(y0 + 1, in_h - 1)
        fy = sy - y0
        for ox in range(out_w):
            sx = min(max((ox + 0.5) * in_w / out_w - 0.5, 0.0), in_w - 1.0)
            x0 = int(np.floor(sx))
            x1 = min(x0 + 1, in_w - 1)
            fx = sx - x0
            top = src[y0, x0] * (1 - fx) + src[y0, x1] * fx
            bot = src[y1, x0] * (1 - fx) + src[y1, x1] * fx
            out[oy, ox] = top * (1 - fy) + bot * fy
    return out


def central_diff(loss_fn, arr, indices, h=1e-3):
    """Central finite differences of loss_fn w.r.t. arr at the given flat indices."""
    flat = arr.reshape(-1)
    grads = np.empty(len(indices), dtype=np.float64)
    for j, i in enumerate(indices):
        old = flat[i]
        flat[i] = old + h
        lp = loss_fn()
        flat[i] = old - h
        lm = loss_fn()
        flat[i] = old
        grads[j] = (lp - lm) / (2.0 * h)
    return grads


def max_rel_err(analytic, numeric, floor=1e-6):
    """Worst-case relative disagreement with a denominators floor."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def sample_indices(rng, size, count):
    """Up to count distinct flat indices into an array of the given size."""
    return rng.choice(size, size=min(count, size), replace=False)
