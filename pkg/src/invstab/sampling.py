"""Sampled inverse-limit points and discretized sections over them.

An orbit sample holds a batch of long true orbits; column j of an orbit is
the window centered at time offset j, so the orbit shift acts by moving one
column. Sections assign a fiber vector to every (orbit, column) pair; reads
past the column range clamp to the boundary column, and verification always
restricts to interior columns where no clamped value can enter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .errors import SpaceMismatch
from .spaces import ORBIT_TOL, OrbitWindow, d1_weights


@dataclass(frozen=True)
class OrbitSample:
    system: object
    coords: np.ndarray     # (n_orbits, T, d) true orbits
    S: int                 # columns -S..S are usable window centers
    k_b: int
    k_f: int
    residual: float

    @property
    def n_orbits(self):
        return self.coords.shape[0]

    @property
    def n_cols(self):
        return 2 * self.S + 1

    @property
    def space(self):
        return self.system.space

    @property
    def weights(self):
        return d1_weights(self.k_b, self.k_f)

    def col_index(self, j):
        if not -self.S <= j <= self.S:
            raise IndexError(f"column {j} outside [-{self.S}, {self.S}]")
        return self.S + j

    def x0(self, j=None):
        """Center points: (n_orbits, d) for one column or (n_orbits, n_cols, d)."""
        if j is None:
            return self.coords[:, self.k_b: self.k_b + self.n_cols]
        t = self.k_b + self.col_index(j)
        return self.coords[:, t]

    def window_slab(self, j):
        """Window coordinates for column j: (n_orbits, k_b+k_f+1, d)."""
        t = self.col_index(j)
        return self.coords[:, t: t + self.k_b + self.k_f + 1]

    def all_window_coords(self):
        """(n_orbits, n_cols, W, d) view of every window."""
        W = self.k_b + self.k_f + 1
        return sliding_window_view(self.coords, W, axis=1).transpose(0, 1, 3, 2)

    def window(self, i, j):
        return OrbitWindow(self.space, np.array(self.window_slab(j)[i]),
                           self.k_b, self.k_f, self.residual)

    def flat_windows(self):
        """(n_orbits * n_cols, W, d) array of all windows, orbit-major."""
        aw = self.all_window_coords()
        return np.ascontiguousarray(aw.reshape(-1, aw.shape[2], aw.shape[3]))

    def interior_cols(self, margin):
        """Column indices at least `margin` away from the sampled range edge."""
        m = int(margin)
        return np.arange(-self.S + m, self.S - m + 1)

    def random_pairs(self, n_pairs, rng):
        """Random (orbit, column) index pairs as flat window indices."""
        total = self.n_orbits * self.n_cols
        a = rng.integers(0, total, size=n_pairs)
        b = rng.integers(0, total, size=n_pairs)
        keep = a != b
        return a[keep], b[keep]


def build_orbit_sample(system, n_orbits=48, S=48, k_b=24, k_f=24, seed=0,
                       include_pieces=True, jitter=0.1):
    """Sample full orbits of a zoo member, one backward branch each.

    Starting points are the known piece orbits (exactly periodic), jittered
    copies near each piece, and random points pushed once into the global
    attractor. Backward branches are drawn uniformly among the valid
    preimages.
    """
    rng = np.random.default_rng(seed)
    space = system.space
    d = space.dim
    n_back = S + k_b
    n_fwd = S + k_f
    T = n_back + n_fwd + 1

    starts = []
    if include_pieces and system.known is not None:
        for piece in system.known.pieces:
            pts = np.atleast_2d(piece.points)
            for k in range(len(pts)):
                starts.append(("periodic", (pts, k)))
        for piece in system.known.pieces:
            for _ in range(2):
                p = piece.points[0] + jitter * (rng.random(d) - 0.5)
                if not space.periodic:
                    lo = np.array([b[0] for b in space.bounds])
                    hi = np.array([b[1] for b in space.bounds])
                    p = np.clip(p, lo, hi)
                starts.append(("random", p))
    while len(starts) < n_orbits:
        starts.append(("random", space.sample_points(1, rng)[0]))
    starts = starts[:n_orbits]

    orbits = np.empty((len(starts), T, d))
    for i, (kind, p) in enumerate(starts):
        if kind == "periodic":
            # tile the exact periodic orbit; its backward branch is itself
            pts, k = p
            per = len(pts)
            for t in range(T):
                orbits[i, t] = pts[(k + t - n_back) % per]
            continue
        x0 = np.array(p, dtype=np.float64)
        if kind == "random":
            x0 = system.f(system.f(space.wrap(x0)))  # settle into the image set
        for _ in range(40):
            if len(system.preimage_branches(x0)) > 0:
                break
            x0 = system.f(space.sample_points(1, rng)[0])
        back = system.orbit_backward(x0, n_back, rng)
        fwd = system.orbit_forward(x0, n_fwd)
        orbits[i, : n_back + 1] = back
        orbits[i, n_back:] = fwd

    fx = np.stack([system.f(orbits[:, t]) for t in range(T - 1)], axis=1)
    residual = float(space.dist(fx, orbits[:, 1:]).max())
    if residual > ORBIT_TOL:
        raise ValueError(f"sampled orbits have defect {residual:.3g} > {ORBIT_TOL}")
    return OrbitSample(system, orbits, S, k_b, k_f, residual)


@dataclass
class Section:
    """Discretized element of the section space: one fiber vector per window."""

    sample: OrbitSample
    values: np.ndarray  # (n_orbits, n_cols, fiber_dim)

    @staticmethod
    def zeros(sample, fiber_dim):
        return Section(sample, np.zeros((sample.n_orbits, sample.n_cols, fiber_dim)))

    @staticmethod
    def constant(sample, vec):
        vec = np.asarray(vec, dtype=np.float64)
        vals = np.broadcast_to(vec, (sample.n_orbits, sample.n_cols, vec.size)).copy()
        return Section(sample, vals)

    @property
    def fiber_dim(self):
        return self.values.shape[2]

    def copy(self):
        return Section(self.sample, self.values.copy())

    def c0_norm(self, interior_margin=0):
        vals = self.values
        if interior_margin:
            m = int(interior_margin)
            vals = vals[:, m: self.values.shape[1] - m]
        if vals.size == 0:
            return 0.0
        return float(np.linalg.norm(vals, axis=2).max())

    def shifted_values(self, k):
        """Values at column j+k with clamped reads at the range edge."""
        idx = np.clip(np.arange(self.values.shape[1]) + k, 0, self.values.shape[1] - 1)
        return self.values[:, idx]

    def __add__(self, other):
        _check_same(self, other)
        return Section(self.sample, self.values + other.values)

    def __sub__(self, other):
        _check_same(self, other)
        return Section(self.sample, self.values - other.values)

    def __mul__(self, scalar):
        return Section(self.sample, self.values * float(scalar))

    __rmul__ = __mul__


def _check_same(a, b):
    if a.sample is not b.sample:
        raise SpaceMismatch("sections live on different orbit samples")
    if a.values.shape != b.values.shape:
        raise SpaceMismatch("sections have different fiber shapes")


def section_dinf_pairs(section, n_pairs=2000, seed=123, min_dinf=1e-4):
    """Sampled Lipschitz quotients |w(x)-w(y)| / d_inf(x, y).

    Pairs closer than min_dinf are discarded to avoid 0/0 noise. Returns
    (ratios, pair_index_arrays, dinf_values).
    """
    rng = np.random.default_rng(seed)
    sample = section.sample
    a, b = sample.random_pairs(n_pairs, rng)
    flat = sample.flat_windows()
    dinf = _kernels.rowwise_dinf(flat[a], flat[b], sample.space.periodic)
    vals = section.values.reshape(-1, section.fiber_dim)
    diff = np.linalg.norm(vals[a] - vals[b], axis=1)
    keep = dinf >= min_dinf
    ratios = np.zeros(keep.sum())
    np.divide(diff[keep], dinf[keep], out=ratios)
    return ratios, (a[keep], b[keep]), dinf[keep]


def lambda_estimate(section, n_pairs=2000, seed=123, min_dinf=1e-4):
    """Measured sup of the Lipschitz quotient with the attaining pair."""
    ratios, (a, b), _ = section_dinf_pairs(section, n_pairs, seed, min_dinf)
    if ratios.size == 0:
        return 0.0, None
    k = int(np.argmax(ratios))
    return float(ratios[k]), (int(a[k]), int(b[k]))
