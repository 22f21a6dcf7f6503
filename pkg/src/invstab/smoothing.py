"""Mollification, the invertible doubled derivative and convolution smoothing.

The derivative of a C1 endomorphism is replaced by the block map
(v1, v2) -> (A v1 + delta v2, delta v1) on the doubled trivialization, which
is invertible in closed form for delta > 0 even across the critical set.
Functions on the sampled inverse limit are smoothed by averaging against a
bump of the weighted orbit distance over a Monte Carlo cloud of product-
measure sequences; partitions of unity normalize mollified indicators of an
eroded cover.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.optimize

from . import _kernels
from .errors import CoverageGap, MonteCarloUnderflow
from .regions import Whole
from .spaces import d1_weights


def bump(t):
    """Smooth nonnegative profile supported in (-1, 1)."""
    t = np.asarray(t, dtype=np.float64)
    out = np.zeros_like(t)
    inside = np.abs(t) < 1.0
    ti = t[inside]
    out[inside] = np.exp(1.0 / (ti * ti - 1.0))
    return out if out.ndim else float(out)


@lru_cache(maxsize=1)
def bump_derivative_bound():
    """sup |d bump / dt|, found numerically once."""

    def neg_abs_deriv(t):
        h = 1e-7
        return -abs((bump(t + h) - bump(t - h)) / (2 * h))

    res = scipy.optimize.minimize_scalar(neg_abs_deriv, bounds=(1e-6, 1 - 1e-6),
                                         method="bounded")
    return float(-res.fun)


@dataclass(frozen=True)
class BumpKernel:
    """Profile plus its derivative bound L, the constant in every Lipschitz
    estimate downstream."""

    derivative_bound: float = field(default_factory=bump_derivative_bound)

    def __call__(self, t):
        return bump(t)


# ---------------------------------------------------------------------------
# grid mollification of C1 data


@dataclass(frozen=True)
class MollifiedMap:
    grid: tuple          # axis arrays
    values: np.ndarray
    delta: float
    c0_distance: float   # measured against the raw input

    def __call__(self, x):
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if len(self.grid) == 1:
            return np.interp(x, self.grid[0], self.values)
        from scipy.interpolate import RegularGridInterpolator
        interp = RegularGridInterpolator(self.grid, self.values)
        return interp(x)


def mollify_c1_map(grid, values, delta, periodic=False):
    """Convolve sampled 1-d or 2-d data with the scaled bump.

    The kernel is discretized on the grid and normalized to unit mass, so
    linear data is reproduced exactly away from the boundary (odd moments
    cancel). delta below the grid spacing is rejected.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        axes = (np.asarray(grid, dtype=np.float64),)
    else:
        axes = tuple(np.asarray(g, dtype=np.float64) for g in grid)
    spacings = [float(a[1] - a[0]) for a in axes]
    for h in spacings:
        if delta < h:
            raise ValueError(f"delta={delta} below grid spacing {h}")
    kernels_1d = []
    for h in spacings:
        k = int(np.floor(delta / h))
        taps = bump(np.arange(-k, k + 1) * h / delta)
        kernels_1d.append(taps / taps.sum())
    mode = "wrap" if periodic else "reflect"
    import scipy.ndimage
    smooth = values
    for axis, taps in enumerate(kernels_1d):
        smooth = scipy.ndimage.convolve1d(smooth, taps, axis=axis, mode=mode)
    c0 = float(np.abs(smooth - values).max())
    return MollifiedMap(axes, smooth, float(delta), c0)


# ---------------------------------------------------------------------------
# the doubled invertible derivative


@dataclass(frozen=True)
class SmoothedDerivative:
    """Bundle map (v1, v2) -> (A_x v1 + delta v2, delta v1) on R^{2N}.

    A_x is the derivative of the (already smooth) map; a mollified
    derivative table can be substituted through df_fn for merely-C1 data.
    """

    base: object
    delta: float
    df_fn: callable = None

    @property
    def ambient_dim(self):
        return self.base.space.dim

    @property
    def doubled_dim(self):
        return 2 * self.base.space.dim

    def tangent_matrix(self, x):
        fn = self.df_fn if self.df_fn is not None else self.base.df
        return fn(x)

    def matrix(self, x):
        """Block matrix at base points x: shape (..., 2N, 2N)."""
        A = np.asarray(self.tangent_matrix(x), dtype=np.float64)
        N = A.shape[-1]
        out = np.zeros(A.shape[:-2] + (2 * N, 2 * N))
        out[..., :N, :N] = A
        idx = np.arange(N)
        out[..., idx, N + idx] = self.delta
        out[..., N + idx, idx] = self.delta
        return out

    def apply(self, x, v):
        v = np.asarray(v, dtype=np.float64)
        N = self.ambient_dim
        A = np.asarray(self.tangent_matrix(x), dtype=np.float64)
        v1, v2 = v[..., :N], v[..., N:]
        top = np.einsum("...ij,...j->...i", A, v1) + self.delta * v2
        return np.concatenate([top, self.delta * v1], axis=-1)

    def apply_inverse(self, x, u):
        """Closed-form inverse; defined only for delta > 0."""
        if self.delta <= 0.0:
            raise ValueError("inverse undefined at delta=0")
        u = np.asarray(u, dtype=np.float64)
        N = self.ambient_dim
        A = np.asarray(self.tangent_matrix(x), dtype=np.float64)
        u1, u2 = u[..., :N], u[..., N:]
        v1 = u2 / self.delta
        v2 = (u1 - np.einsum("...ij,...j->...i", A, v1)) / self.delta
        return np.concatenate([v1, v2], axis=-1)

    def inverse_norm(self, points):
        """Measured sup operator norm of the inverse over sample points."""
        mats = self.matrix(points)
        sv = np.linalg.svd(mats, compute_uv=False)
        return float((1.0 / sv[..., -1]).max())


def smoothed_derivative(system, delta, df_fn=None):
    if delta < 0:
        raise ValueError("delta must be nonnegative")
    return SmoothedDerivative(system, float(delta), df_fn)


# ---------------------------------------------------------------------------
# convolution over the sampled inverse limit


@dataclass(frozen=True)
class ConvolutionResult:
    values: np.ndarray        # phi_r at the evaluation windows, (n, C)
    normalizer: np.ndarray    # 1_r at the evaluation windows, (n,)
    ratio: np.ndarray         # phi_r / 1_r
    sigma: np.ndarray         # delta-method standard error of the ratio
    hits: np.ndarray          # kernel-support sample counts per window
    r: float
    mc_window: int
    n_samples: int
    lipschitz_bound: float    # (L/r) * sup|phi|
    tail_bound: float         # orbit-distance mass beyond the truncation


def _truncate_windows(coords, k_b, mc_window):
    """Restrict window coords (n, W, d) to indices [-K, K] around the center."""
    K = mc_window
    return np.ascontiguousarray(coords[:, k_b - K: k_b + K + 1])


def pick_mc_window(coords, k_b, space, r, n_samples, seed=0, k_max=8,
                   min_hits=40, pilot=20_000):
    """Largest index truncation keeping the kernel-support hit rate workable.

    The weighted distance to a product-measure sample grows with every
    index kept, so the support probability collapses as the truncation
    widens; a pilot batch picks the widest K that still promises at least
    min_hits kernel hits at the requested sample count.
    """
    rng = np.random.default_rng(seed)
    k_cap = min(k_max, k_b, coords.shape[1] - k_b - 1)
    sub = coords[:: max(1, coords.shape[0] // 64)]
    best = 0
    for K in range(k_cap + 1):
        XW = _truncate_windows(sub, k_b, K)
        m = pilot
        YW = space.sample_points(m * (2 * K + 1), rng).reshape(m, 2 * K + 1,
                                                               space.dim)
        w = d1_weights(K, K)
        _, _, hits, *_ = _kernels.bump_convolve(
            XW, YW, w, np.ones(m), float(r), space.periodic)
        rate = hits.min() / m
        if rate * n_samples >= min_hits:
            best = K
        else:
            break
    return best


def convolve_on_inverse_limit(phi_tilde, coords, k_b, space, r, n_samples=100_000,
                              seed=0, mc_window="auto", guard=1e-9):
    """Monte Carlo realization of the bump-weighted averaging operator.

    phi_tilde maps sample sequence coords (m, 2K+1, d) to values (m,) or
    (m, C); coords are evaluation windows (n, W, d) whose center sits at
    index k_b. The product measure is i.i.d. uniform per index, truncated at
    mc_window indices on each side (chosen by a pilot run when "auto"); the
    discarded weighted-distance mass is returned as tail_bound.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if mc_window == "auto":
        mc_window = pick_mc_window(coords, k_b, space, r, n_samples, seed)
    K = int(mc_window)
    if K > k_b or K > coords.shape[1] - k_b - 1:
        raise ValueError("mc_window exceeds the evaluation window lengths")
    rng = np.random.default_rng(seed)
    XW = _truncate_windows(coords, k_b, K)
    m = int(n_samples)
    YW = space.sample_points(m * (2 * K + 1), rng).reshape(m, 2 * K + 1, space.dim)
    phi = np.asarray(phi_tilde(YW), dtype=np.float64)
    if phi.ndim == 1:
        phi = phi[:, None]
    w = d1_weights(K, K)
    num, den, hits, s_rho2, s_y2, s_yrho = _kernels.bump_convolve(
        XW, YW, w, phi, float(r), space.periodic)
    one_r = den / m
    if np.min(one_r) < guard:
        raise MonteCarloUnderflow(
            f"normalizer {np.min(one_r):.3g} below {guard}; enlarge r or samples")
    ratio = num / den[:, None]
    # delta-method error for the ratio of sample means
    mean_y = num / m
    mean_rho = one_r
    var_y = s_y2 / m - mean_y ** 2
    var_rho = s_rho2 / m - mean_rho ** 2
    cov = s_yrho / m - mean_y * mean_rho[:, None]
    sig2 = (var_y - 2 * ratio * cov + ratio ** 2 * var_rho[:, None])
    sigma = np.sqrt(np.maximum(sig2, 0.0) / m) / mean_rho[:, None]
    tail = 2.0 * space.diameter * 2.0 ** (-K)
    L = bump_derivative_bound()
    lip_bound = (L / r) * float(np.abs(phi).max())
    return ConvolutionResult(num / m, one_r, ratio, sigma, hits, float(r), K, m,
                             lip_bound, tail)


def convolution_lipschitz(result, coords, k_b, space, n_pairs=2000, seed=1):
    """Measured weighted-distance Lipschitz quotients of phi_r over window pairs."""
    rng = np.random.default_rng(seed)
    n = coords.shape[0]
    a = rng.integers(0, n, n_pairs)
    b = rng.integers(0, n, n_pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    K = result.mc_window
    XW = _truncate_windows(np.asarray(coords, dtype=np.float64), k_b, K)
    w = d1_weights(K, K)
    d1v = _kernels.rowwise_d1(XW[a], XW[b], w, space.periodic)
    diff = np.linalg.norm(result.values[a] - result.values[b], axis=1)
    keep2 = d1v > 1e-12
    return diff[keep2] / d1v[keep2], d1v[keep2]


@dataclass(frozen=True)
class PartitionResult:
    gammas: np.ndarray      # (q, n) partition values at the evaluation windows
    r: float
    mc_window: int
    lipschitz_estimates: np.ndarray   # measured sup quotient per member
    sum_defect: float
    min_normalizer: float

    @property
    def q(self):
        return self.gammas.shape[0]


def partition_of_unity(covers, margin, coords, k_b, space, r=None,
                       n_samples=100_000, seed=0, mc_window=0, guard=1e-9,
                       n_pairs=2000):
    """Partition of unity subordinate to an open cover of the sampled windows.

    Mollifies the indicator of each cover member eroded by half the margin
    (at radius r = margin/2 the support lands strictly inside the member)
    and normalizes. A single-member cover short-circuits to the constant 1.
    """
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    x0 = coords[:, k_b]
    if len(covers) == 1:
        if not isinstance(covers[0], Whole) and not np.all(covers[0].contains(x0)):
            raise CoverageGap("single cover member misses sampled windows")
        return PartitionResult(np.ones((1, n)), 0.0, 0, np.zeros(1), 0.0, np.inf)

    covered = np.zeros(n, dtype=bool)
    for reg in covers:
        covered |= reg.contains(x0)
    if not covered.all():
        raise CoverageGap(f"{int((~covered).sum())} sampled windows outside the cover")

    if r is None:
        r = margin / 2.0
    eroded = [reg.erode(r) for reg in covers]
    K = int(mc_window)

    def indicators(YW):
        centers = YW[:, K]
        return np.stack([reg.contains(centers) for reg in eroded], axis=1).astype(float)

    res = convolve_on_inverse_limit(indicators, coords, k_b, space, r,
                                    n_samples=n_samples, seed=seed,
                                    mc_window=K, guard=0.0)
    total = res.values.sum(axis=1)
    if np.min(total) < guard:
        raise MonteCarloUnderflow(
            f"cover normalizer {np.min(total):.3g} below {guard}")
    gammas = (res.values / total[:, None]).T
    # support: gamma_i vanishes off its cover member by construction; verify
    for i, reg in enumerate(covers):
        bad = (gammas[i] > 0) & ~reg.contains(x0)
        if np.any(bad):
            raise CoverageGap(f"partition member {i} leaks outside its cover")
    sum_defect = float(np.abs(gammas.sum(axis=0) - 1.0).max())
    lips = np.zeros(len(covers))
    XW = _truncate_windows(coords, k_b, K)
    rng = np.random.default_rng(seed + 1)
    a = rng.integers(0, n, n_pairs)
    b = rng.integers(0, n, n_pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    dinf = _kernels.rowwise_dinf(XW[a], XW[b], space.periodic)
    keep2 = dinf > 1e-4
    for i in range(len(covers)):
        diff = np.abs(gammas[i, a[keep2]] - gammas[i, b[keep2]])
        lips[i] = float((diff / dinf[keep2]).max()) if keep2.any() else 0.0
    return PartitionResult(gammas, float(r), K, lips, sum_defect, float(np.min(total)))
