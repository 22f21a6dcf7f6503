"""Pure NumPy fallback for the metric kernels.

Same API as the compiled module; used when the extension is absent or
INVSTAB_PURE_PYTHON is set. Chunks over the sample axis to bound memory.
"""

import numpy as np

BACKEND = "numpy"

_CHUNK_FLOATS = 8_000_000  # per-chunk scratch budget


def _coord_dist(diff, circle):
    if circle:
        diff = diff - np.round(diff)
    return np.abs(diff)


def point_dist(a, b, circle):
    """Max-metric distance between point arrays of shape (..., d)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return _coord_dist(a - b, circle).max(axis=-1)


def rowwise_d1(A, B, weights, circle):
    """Weighted window distance sum_k w_k * d(A[i,k], B[i,k]) for each row i.

    A, B: (n, W, d); weights: (W,). Returns (n,).
    """
    d = _coord_dist(np.asarray(A) - np.asarray(B), circle).max(axis=-1)
    return d @ np.asarray(weights, dtype=np.float64)


def rowwise_dinf(A, B, circle):
    """Sup window distance max_k d(A[i,k], B[i,k]) for each row i."""
    return _coord_dist(np.asarray(A) - np.asarray(B), circle).max(axis=(-1, -2))


def rowwise_dinf_argmax(A, B, circle):
    """Like rowwise_dinf but also returns the index k attaining the sup."""
    d = _coord_dist(np.asarray(A) - np.asarray(B), circle).max(axis=-1)
    idx = d.argmax(axis=-1)
    return d.max(axis=-1), idx


def pairwise_d1(A, B, weights, circle):
    """Weighted distance matrix between window sets A (n,W,d) and B (m,W,d)."""
    A = np.asarray(A, dtype=np.float64)
    B = np.asarray(B, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    n, W, dd = A.shape
    m = B.shape[0]
    out = np.empty((n, m))
    step = max(1, int(_CHUNK_FLOATS // max(1, n * W * dd)))
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        diff = A[:, None, :, :] - B[None, lo:hi, :, :]
        out[:, lo:hi] = _coord_dist(diff, circle).max(axis=-1) @ w
    return out


def _bump(t):
    # smooth nonnegative profile supported in (-1, 1)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 / (ti * ti - 1.0))
    return out


def bump_convolve(XW, YW, weights, phi, r, circle):
    """Single-pass accumulation of bump-weighted sums over a sample set.

    XW: evaluation windows (n, W, d); YW: sample windows (m, W, d);
    phi: per-sample values (m, C); r: kernel radius for the weighted window
    distance. Returns (num (n,C), den (n,), hits (n,), s_rho2 (n,),
    s_y2 (n,C), s_yrho (n,C)) where rho_s = bump(d1(x_i, y_s)/r) and
    y_s = phi_s * rho_s.
    """
    XW = np.asarray(XW, dtype=np.float64)
    YW = np.asarray(YW, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[:, None]
    n, W, dd = XW.shape
    m, C = phi.shape
    num = np.zeros((n, C))
    den = np.zeros(n)
    hits = np.zeros(n, dtype=np.int64)
    s_rho2 = np.zeros(n)
    s_y2 = np.zeros((n, C))
    s_yrho = np.zeros((n, C))
    step = max(1, int(_CHUNK_FLOATS // max(1, n * W * dd)))
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        diff = XW[:, None, :, :] - YW[None, lo:hi, :, :]
        d1 = _coord_dist(diff, circle).max(axis=-1) @ w  # (n, chunk)
        rho = _bump(d1 / r)
        y = rho[:, :, None] * phi[None, lo:hi, :]  # (n, chunk, C)
        num += y.sum(axis=1)
        den += rho.sum(axis=1)
        hits += (rho > 0.0).sum(axis=1)
        s_rho2 += (rho * rho).sum(axis=1)
        s_y2 += (y * y).sum(axis=1)
        s_yrho += (y * rho[:, :, None]).sum(axis=1)
    return num, den, hits, s_rho2, s_y2, s_yrho
