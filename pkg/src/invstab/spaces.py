"""Flat model spaces, orbit windows and the two orbit-space metrics.

A model space is a circle, a d-torus or a compact box with the trivialized
tangent bundle M x R^d: the exponential map is translation (reduced mod 1 on
periodic factors) and the tangent projection is the identity. Points carry
the max metric over coordinates. An orbit window is a finite two-sided
truncation (x_{-K_b}, ..., x_0, ..., x_{K_f}) of a full orbit; the weighted
metric d1 = sum_n d(x_n, y_n)/2^|n| and the sup metric d_inf are computed on
the index overlap and always reported together with the certified truncation
error.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import SpaceMismatch, WindowExhausted, WraparoundError

ORBIT_TOL = 1e-10  # windows must be true orbit segments up to round-off


@dataclass(frozen=True)
class ModelSpace:
    """Circle, d-torus or axis-aligned box with flat trivialization."""

    kind: str            # "circle" | "torus" | "box"
    dim: int
    bounds: tuple = ()   # ((lo, hi), ...) for boxes; unit lattice otherwise

    @staticmethod
    def circle():
        return ModelSpace("circle", 1)

    @staticmethod
    def torus(d):
        return ModelSpace("torus" if d > 1 else "circle", d)

    @staticmethod
    def box(bounds):
        bounds = tuple((float(lo), float(hi)) for lo, hi in bounds)
        return ModelSpace("box", len(bounds), bounds)

    @property
    def periodic(self):
        return self.kind in ("circle", "torus")

    @property
    def diameter(self):
        if self.periodic:
            return 0.5
        return max(hi - lo for lo, hi in self.bounds)

    def wrap(self, pts):
        pts = np.asarray(pts, dtype=np.float64)
        if self.periodic:
            return np.mod(pts, 1.0)
        return pts

    def exp(self, x, v):
        """exp_x(v): translation, reduced mod 1 on periodic factors."""
        return self.wrap(np.asarray(x, dtype=np.float64) + np.asarray(v, dtype=np.float64))

    def log(self, x, y, max_norm=0.25):
        """exp_x^{-1}(y) via the nearest representative.

        Rejects displacements of max-norm >= max_norm on periodic spaces,
        where the lift would be ambiguous.
        """
        diff = np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64)
        if self.periodic:
            diff = diff - np.round(diff)
            if max_norm is not None and np.any(np.abs(diff) >= max_norm):
                raise WraparoundError(
                    f"displacement reaches {np.abs(diff).max():.3g} >= {max_norm}")
        return diff

    def dist(self, x, y):
        """Max over coordinates of the per-factor distance."""
        return _kernels.point_dist(np.asarray(x, dtype=np.float64),
                                   np.asarray(y, dtype=np.float64), self.periodic)

    def contains(self, pts, tol=1e-9):
        pts = np.asarray(pts, dtype=np.float64)
        if self.periodic:
            return np.ones(pts.shape[:-1], dtype=bool)
        ok = np.ones(pts.shape[:-1], dtype=bool)
        for i, (lo, hi) in enumerate(self.bounds):
            ok &= (pts[..., i] >= lo - tol) & (pts[..., i] <= hi + tol)
        return ok

    def sample_points(self, n, rng):
        if self.periodic:
            return rng.random((n, self.dim))
        lo = np.array([b[0] for b in self.bounds])
        hi = np.array([b[1] for b in self.bounds])
        return lo + (hi - lo) * rng.random((n, self.dim))


def d1_weights(k_b, k_f):
    """Weights 2^{-|n|} for window indices n = -k_b..k_f."""
    idx = np.arange(-k_b, k_f + 1)
    return np.power(2.0, -np.abs(idx))


@dataclass(frozen=True)
class OrbitWindow:
    """Finite truncation of an inverse-limit point, centered at index 0."""

    space: ModelSpace
    coords: np.ndarray       # (k_b + k_f + 1, d)
    k_b: int
    k_f: int
    residual: float = field(default=0.0)

    def __post_init__(self):
        if self.k_b < 1 or self.k_f < 1:
            raise ValueError("window needs at least one index on each side")
        if self.coords.shape != (self.k_b + self.k_f + 1, self.space.dim):
            raise ValueError("coords shape does not match window lengths")

    @staticmethod
    def from_orbit(space, coords, k_b, k_f, orbit_map=None):
        coords = np.asarray(coords, dtype=np.float64)
        residual = 0.0
        if orbit_map is not None:
            residual = float(space.dist(orbit_map(coords[:-1]), coords[1:]).max())
            if residual > ORBIT_TOL:
                raise ValueError(f"pseudo-orbit defect {residual:.3g} exceeds {ORBIT_TOL}")
        return OrbitWindow(space, coords, k_b, k_f, residual)

    @property
    def tail_bound(self):
        """Certified d1 mass of the two discarded tails."""
        diam = self.space.diameter
        return diam * 2.0 ** (1 - self.k_b) + diam * 2.0 ** (1 - self.k_f)

    def point(self, n):
        if not (-self.k_b <= n <= self.k_f):
            raise WindowExhausted(f"index {n} outside window [-{self.k_b}, {self.k_f}]")
        return self.coords[self.k_b + n]

    def shift(self, k):
        """Re-index by the orbit shift; both lengths shrink by |k|."""
        if abs(k) >= min(self.k_b, self.k_f):
            raise WindowExhausted(f"|k|={abs(k)} too large for window ({self.k_b},{self.k_f})")
        kb, kf = self.k_b - abs(k), self.k_f - abs(k)
        lo = self.k_b + k - kb
        hi = self.k_b + k + kf + 1
        return OrbitWindow(self.space, self.coords[lo:hi], kb, kf, self.residual)

    # -- serialization ------------------------------------------------------

    def to_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf)
        for n in range(-self.k_b, self.k_f + 1):
            writer.writerow([n] + [format(v, ".17g") for v in self.point(n)])
        return buf.getvalue()

    @staticmethod
    def from_csv(space, text):
        rows = [r for r in csv.reader(io.StringIO(text)) if r]
        idx = [int(r[0]) for r in rows]
        coords = np.array([[float(v) for v in r[1:]] for r in rows])
        return OrbitWindow(space, coords, -min(idx), max(idx))

    def to_json(self):
        rows = [[format(v, ".17g") for v in self.point(n)]
                for n in range(-self.k_b, self.k_f + 1)]
        return json.dumps({"k_b": self.k_b, "k_f": self.k_f, "coords": rows})

    @staticmethod
    def from_json(space, text):
        obj = json.loads(text)
        coords = np.array([[float(v) for v in row] for row in obj["coords"]])
        return OrbitWindow(space, coords, obj["k_b"], obj["k_f"])


def _overlap(a: OrbitWindow, b: OrbitWindow):
    if a.space != b.space:
        raise SpaceMismatch(f"{a.space.kind}^{a.space.dim} vs {b.space.kind}^{b.space.dim}")
    k_b = min(a.k_b, b.k_b)
    k_f = min(a.k_f, b.k_f)
    ca = a.coords[a.k_b - k_b: a.k_b + k_f + 1]
    cb = b.coords[b.k_b - k_b: b.k_b + k_f + 1]
    return ca, cb, k_b, k_f


def d1(a: OrbitWindow, b: OrbitWindow):
    """Weighted orbit distance on the index overlap.

    Returns (value, tail_bound): the omitted tail mass is certified by the
    window truncation bounds of both arguments.
    """
    ca, cb, k_b, k_f = _overlap(a, b)
    w = d1_weights(k_b, k_f)
    val = float(_kernels.rowwise_d1(ca[None], cb[None], w, a.space.periodic)[0])
    diam = a.space.diameter
    tail = 2 * diam * 2.0 ** (1 - k_b) + 2 * diam * 2.0 ** (1 - k_f)
    return val, tail


def d_inf(a: OrbitWindow, b: OrbitWindow):
    """Sup orbit distance on the overlap.

    Returns (value, interior): interior is True when the sup is attained
    away from both window endpoints, so enlarging the windows could only
    confirm the value.
    """
    ca, cb, k_b, k_f = _overlap(a, b)
    vals, idx = _kernels.rowwise_dinf_argmax(ca[None], cb[None], a.space.periodic)
    interior = bool(0 < idx[0] < k_b + k_f)
    return float(vals[0]), interior


@dataclass(frozen=True)
class Subspace:
    """Element of the Grassmannian of R^n, stored as an orthonormal basis."""

    basis: np.ndarray  # (n, k), orthonormal columns

    @staticmethod
    def from_vectors(vectors):
        """Orthonormalize spanning vectors given as columns of an (n, k) array."""
        v = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        q, r = np.linalg.qr(v)
        keep = np.abs(np.diag(r)) > 1e-12 * max(1.0, np.abs(r).max())
        return Subspace(q[:, keep])

    @staticmethod
    def trivial(n):
        return Subspace(np.zeros((n, 0)))

    @property
    def dim(self):
        return self.basis.shape[1]

    @property
    def ambient_dim(self):
        return self.basis.shape[0]

    def projector(self):
        return self.basis @ self.basis.T

    def orthogonal(self):
        n, k = self.basis.shape
        u, _, _ = np.linalg.svd(np.eye(n) - self.projector())
        return Subspace(u[:, : n - k])

    def contains_defect(self, other: "Subspace"):
        """sup over unit u in other of dist(u, self); 0 iff other is contained."""
        if other.dim == 0:
            return 0.0
        resid = other.basis - self.projector() @ other.basis
        return float(np.linalg.norm(resid, 2))


def grassmann_distance(p: Subspace, q: Subspace):
    """Operator-norm distance between orthogonal projectors."""
    return float(np.linalg.norm(p.projector() - q.projector(), 2))


def principal_angles(p: Subspace, q: Subspace):
    """Principal angles in radians, smallest first."""
    if p.dim == 0 or q.dim == 0:
        return np.array([])
    s = np.linalg.svd(p.basis.T @ q.basis, compute_uv=False)
    return np.arccos(np.clip(s, -1.0, 1.0))


def min_pair_angle(p: Subspace, q: Subspace):
    """Smallest angle between nonzero vectors of the two subspaces."""
    ang = principal_angles(p, q)
    return float(ang[0]) if ang.size else np.pi / 2
