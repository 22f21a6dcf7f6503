"""Catalog of concrete hyperbolic endomorphisms with known invariants.

Every member carries vectorized evaluation, derivative and backward-branch
maps, plus (for the curated members) the exact fixed-point data, basic
pieces, cover and filtration templates used as ground truth by the rest of
the toolkit. Members are addressable by name strings such as "doubling",
"quadratic:c=0", "torus:2,1,1,1", "product_squares" or "delay:m=1,n=2,c=0".
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from . import regions
from .errors import ConfigError
from .regions import Above, Below, Whole, all_of, any_of
from .spaces import ModelSpace

FIXED_POINT_TOL = 1e-12
MULTIPLIER_TOL = 1e-10


@dataclass(frozen=True)
class PieceSpec:
    """One basic piece: a representative periodic orbit plus eigendata."""

    name: str
    points: np.ndarray          # (period, d)
    period: int
    multipliers: np.ndarray     # eigenvalues of Df^period at points[0]
    unstable_dim: int
    unstable_dirs: np.ndarray   # (d, k) tangent basis, k = unstable_dim
    stable_dirs: np.ndarray     # (d, s) tangent basis of the contracted part


@dataclass(frozen=True)
class KnownData:
    """Ground-truth structure for a zoo member.

    Pieces are listed in an enumeration compatible with the heteroclinic
    order: an edge (i, j) says piece i's unstable set reaches piece j.
    Region templates are predicates on x_0.
    """

    pieces: tuple
    order_edges: tuple            # tuples of piece indices (i, j), i above j
    filtration: tuple             # nested masks M_1 c ... c M_q
    covers: tuple                 # open cover W_1..W_q
    cover_margin: float
    stable_domains: tuple         # V_i, where E_i^s is solved
    unstable_domains: tuple       # backward-closed domains for E_i^u
    near_piece: tuple             # neighborhoods where the sharp rates hold
    attractor_region: regions.Region = field(default_factory=Whole)


@dataclass(frozen=True)
class Endomorphism:
    space: ModelSpace
    name: str
    smoothness: str                      # "analytic" | "C1"
    f: callable                          # (..., d) -> (..., d)
    df: callable                         # (..., d) -> (..., d, d)
    preimage_branches: callable          # point (d,) -> (k, d) valid branches
    known: KnownData | None = None

    def __post_init__(self):
        if self.known is not None:
            _verify_known_data(self)

    def orbit_forward(self, x0, n):
        out = np.empty((n + 1,) + np.shape(x0))
        out[0] = x0
        for t in range(n):
            out[t + 1] = self.f(out[t])
        return out

    def orbit_backward(self, x0, n, rng):
        """One random full backward branch (x_{-n}, ..., x_0)."""
        out = np.empty((n + 1, self.space.dim))
        out[n] = x0
        for t in range(n, 0, -1):
            branches = self.preimage_branches(out[t])
            if len(branches) == 0:
                raise ValueError(f"{self.name}: no backward branch at {out[t]}")
            out[t - 1] = branches[rng.integers(len(branches))]
        return out


def _verify_known_data(endo):
    for piece in endo.known.pieces:
        pts = np.atleast_2d(piece.points)
        orbit_closed = endo.space.dist(endo.f(pts[-1]), pts[0])
        if float(np.max(orbit_closed)) > FIXED_POINT_TOL:
            raise ValueError(f"{endo.name}: piece {piece.name} is not periodic")
        jac = np.eye(endo.space.dim)
        for p in pts:
            jac = endo.df(p) @ jac
        eig = np.sort_complex(np.linalg.eigvals(jac))
        ref = np.sort_complex(np.asarray(piece.multipliers, dtype=complex))
        if np.max(np.abs(eig - ref)) > MULTIPLIER_TOL:
            raise ValueError(f"{endo.name}: multipliers of {piece.name} do not match")


# ---------------------------------------------------------------------------
# circle / torus members


def zoo_doubling():
    return zoo_torus_linear(np.array([[2]]))


def zoo_torus_linear(A):
    """x -> A x mod 1 for an integer matrix with no eigenvalue on the unit circle."""
    A = np.asarray(A, dtype=np.float64)
    d = A.shape[0]
    eigvals = np.linalg.eigvals(A)
    if np.any(np.abs(np.abs(eigvals) - 1.0) < 1e-8):
        raise ConfigError("matrix has an eigenvalue of modulus 1; not hyperbolic")
    space = ModelSpace.torus(d)

    def f(x):
        return np.mod(np.asarray(x, dtype=np.float64) @ A.T, 1.0)

    def df(x):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(A, x.shape[:-1] + (d, d)).copy()

    degree = int(round(abs(np.linalg.det(A))))
    Ainv = np.linalg.inv(A)

    def preimage_branches(y):
        # solutions of A x = y mod 1: one representative per coset of A Z^d
        y = np.asarray(y, dtype=np.float64)
        reps = []
        seen = set()
        rng_box = int(np.ceil(np.abs(A).sum())) + 1
        grid = np.arange(0, rng_box)
        for offs in np.stack(np.meshgrid(*([grid] * d)), axis=-1).reshape(-1, d):
            x = np.mod(Ainv @ (y + offs), 1.0)
            key = tuple(np.round(x, 9))
            if key not in seen:
                seen.add(key)
                reps.append(x)
            if len(reps) == degree:
                break
        return np.array(reps)

    unstable = _invariant_subspace(A, lambda lam: np.abs(lam) > 1.0)
    stable = _invariant_subspace(A, lambda lam: np.abs(lam) < 1.0)
    fixed = np.zeros((1, d))
    piece = PieceSpec(
        name="origin",
        points=fixed,
        period=1,
        multipliers=eigvals,
        unstable_dim=unstable.shape[1],
        unstable_dirs=unstable,
        stable_dirs=stable,
    )
    known = KnownData(
        pieces=(piece,),
        order_edges=(),
        filtration=(Whole(),),
        covers=(Whole(),),
        cover_margin=np.inf,
        stable_domains=(Whole(),),
        unstable_domains=(Whole(),),
        near_piece=(Whole(),),
    )
    name = "doubling" if (d == 1 and A[0, 0] == 2) else (
        "torus:" + ",".join(str(int(v)) for v in A.flatten()))
    return Endomorphism(space, name, "analytic", f, df, preimage_branches, known)


def _invariant_subspace(A, select):
    """Orthonormal basis of the invariant subspace for selected eigenvalues."""
    _, Q, k = scipy.linalg.schur(
        A, output="real", sort=lambda re, im: select(re + 1j * im))
    return Q[:, :k]


# ---------------------------------------------------------------------------
# quadratic family and its delay embeddings


def _quadratic_fixed_points(c):
    disc = 1.0 - 4.0 * c
    if disc <= 0:
        raise ConfigError(f"x^2+{c} has no real fixed point")
    r = np.sqrt(disc)
    return (1.0 - r) / 2.0, (1.0 + r) / 2.0


def _quadratic_validate(c):
    # prevalidated: c = 0 and the real window with an attracting fixed point
    p_minus, _ = _quadratic_fixed_points(c)
    if abs(2.0 * p_minus) >= 1.0:
        raise ConfigError(
            f"c={c} outside the prevalidated attracting-fixed-point window")


def _sharp_rate_radius(multiplier, gap, frac=0.15):
    """Neighborhood radius keeping |f'| on the sharp side of 1.

    Derivative 2x moves by 2r over a radius-r ball, so half the gap between
    |multiplier| and 1 bounds the radius where the piece's rate persists.
    """
    return min(frac * gap, abs(abs(multiplier) - 1.0) / 4.0)


def zoo_quadratic(c=0.0):
    """x -> x^2 + c on its bounded invariant interval."""
    c = float(c)
    _quadratic_validate(c)
    p_minus, p_plus = _quadratic_fixed_points(c)
    lo = min(c, 0.0)
    space = ModelSpace.box([(lo, p_plus)])

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        return x * x + c

    def df(x):
        x = np.asarray(x, dtype=np.float64)
        return (2.0 * x)[..., None]

    def preimage_branches(y):
        val = float(np.asarray(y).reshape(-1)[0]) - c
        if val < 0:
            return np.empty((0, 1))
        root = np.sqrt(val)
        branches = [np.array([root])]
        # the mirror branch must itself be backward-extendable and in range
        if -root >= c and -root >= lo:
            branches.append(np.array([-root]))
        return np.array(branches)

    gap = p_plus - p_minus
    phi = p_minus + 0.7 * gap            # upper edge of the attracting cover
    image_sup = max(c * c, phi * phi) + c  # sup f over the attracting cover
    theta = image_sup + 0.03 * gap       # lower edge of the repelling cover
    if not theta < phi:
        raise ConfigError(f"c={c}: cover template degenerates")
    pieces = (
        PieceSpec("attracting", np.array([[p_minus]]), 1,
                  np.array([2.0 * p_minus]), 0, np.zeros((1, 0)), np.eye(1)),
        PieceSpec("repelling", np.array([[p_plus]]), 1,
                  np.array([2.0 * p_plus]), 1, np.eye(1), np.zeros((1, 0))),
    )
    known = KnownData(
        pieces=pieces,
        order_edges=((1, 0),),
        filtration=(Below(0, p_plus - 0.1 * gap), Whole()),
        covers=(Below(0, phi), Above(0, theta)),
        cover_margin=phi - theta,
        stable_domains=(Whole(), Above(0, theta - 0.05 * gap)),
        unstable_domains=(Whole(), Above(0, theta - 0.05 * gap)),
        near_piece=(regions.Ball((p_minus,), _sharp_rate_radius(2 * p_minus, gap)),
                    regions.Ball((p_plus,), _sharp_rate_radius(2 * p_plus, gap))),
        attractor_region=Above(0, c - 1e-12),
    )
    return Endomorphism(space, f"quadratic:c={c:g}", "analytic", f, df,
                        preimage_branches, known)


def zoo_delay(m, n, c=0.0):
    """(x_i) -> (x_m^2 + c, x_1, ..., x_{m-1}, 0, ..., 0) on a box."""
    m, n = int(m), int(n)
    if not 1 <= m <= n:
        raise ConfigError(f"delay map needs 1 <= m <= n, got m={m}, n={n}")
    base = zoo_quadratic(c)
    (lo, hi), = base.space.bounds
    lo0 = min(lo, 0.0)
    space = ModelSpace.box([(lo0, hi)] * n)

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        out[..., 0] = x[..., m - 1] ** 2 + c
        if m > 1:
            out[..., 1:m] = x[..., 0:m - 1]
        return out

    def df(x):
        x = np.asarray(x, dtype=np.float64)
        jac = np.zeros(x.shape[:-1] + (n, n))
        jac[..., 0, m - 1] = 2.0 * x[..., m - 1]
        for j in range(1, m):
            jac[..., j, j - 1] = 1.0
        return jac

    def preimage_branches(y):
        y = np.asarray(y, dtype=np.float64)
        if m < n and np.max(np.abs(y[m:])) > 1e-12:
            return np.empty((0, n))
        heads = base.preimage_branches(y[:1])
        out = []
        for h in heads:
            x = np.zeros(n)
            if m > 1:
                x[: m - 1] = y[1:m]
            x[m - 1] = h[0]
            out.append(x)
        return np.array(out) if out else np.empty((0, n))

    known = None
    if m == 1:
        kq = base.known
        pieces = []
        for p in kq.pieces:
            pt = np.zeros((1, n))
            pt[0, 0] = p.points[0, 0]
            mult = np.zeros(n, dtype=complex)
            mult[0] = p.multipliers[0]
            udirs = np.zeros((n, p.unstable_dim))
            if p.unstable_dim:
                udirs[0, 0] = 1.0
            sdirs = np.zeros((n, n - p.unstable_dim))
            col = 0
            if p.stable_dirs.shape[1]:
                sdirs[0, col] = 1.0
                col += 1
            for j in range(1, n):
                sdirs[j, col] = 1.0
                col += 1
            pieces.append(PieceSpec(p.name, pt, 1, mult, p.unstable_dim, udirs, sdirs))
        known = KnownData(
            pieces=tuple(pieces),
            order_edges=kq.order_edges,
            filtration=tuple(_lift_axis0(r) for r in kq.filtration),
            covers=tuple(_lift_axis0(r) for r in kq.covers),
            cover_margin=kq.cover_margin,
            stable_domains=tuple(_lift_axis0(r) for r in kq.stable_domains),
            unstable_domains=tuple(_lift_axis0(r) for r in kq.unstable_domains),
            near_piece=tuple(
                regions.Ball(tuple(p.points[0]),
                             _sharp_rate_radius(p.multipliers[0].real, 1.0))
                for p in pieces),
            attractor_region=_lift_axis0(kq.attractor_region),
        )
    return Endomorphism(space, f"delay:m={m},n={n},c={c:g}", "analytic", f, df,
                        preimage_branches, known)


def _lift_axis0(region):
    # reuse an interval template as a predicate on the first coordinate
    return region


def zoo_product_squares():
    """(x, y, z) -> (x^2, y^2, 0) restricted to bounded orbits in the unit cube."""
    space = ModelSpace.box([(0.0, 1.0)] * 3)

    def f(x):
        x = np.asarray(x, dtype=np.float64)
        out = np.zeros_like(x)
        out[..., 0] = x[..., 0] ** 2
        out[..., 1] = x[..., 1] ** 2
        return out

    def df(x):
        x = np.asarray(x, dtype=np.float64)
        jac = np.zeros(x.shape[:-1] + (3, 3))
        jac[..., 0, 0] = 2.0 * x[..., 0]
        jac[..., 1, 1] = 2.0 * x[..., 1]
        return jac

    def preimage_branches(y):
        y = np.asarray(y, dtype=np.float64)
        if abs(y[2]) > 1e-12 or y[0] < 0 or y[1] < 0:
            return np.empty((0, 3))
        return np.array([[np.sqrt(y[0]), np.sqrt(y[1]), 0.0]])

    e = np.eye(3)

    def piece(name, a, b):
        mult = np.array([2.0 * a, 2.0 * b, 0.0])
        udim = int(a > 0.5) + int(b > 0.5)
        ucols = [e[:, 0:1]] if a > 0.5 else []
        if b > 0.5:
            ucols.append(e[:, 1:2])
        udirs = np.hstack(ucols) if ucols else np.zeros((3, 0))
        scols = [e[:, j:j + 1] for j, on in ((0, a <= 0.5), (1, b <= 0.5), (2, True)) if on]
        sdirs = np.hstack(scols)
        return PieceSpec(name, np.array([[a, b, 0.0]]), 1, mult, udim, udirs, sdirs)

    pieces = (
        piece("p00", 0.0, 0.0),
        piece("p01", 0.0, 1.0),
        piece("p10", 1.0, 0.0),
        piece("p11", 1.0, 1.0),
    )
    theta, phi = 0.55, 0.70
    covers = (
        all_of(Below(0, phi), Below(1, phi)),
        all_of(Below(0, phi), Above(1, theta)),
        all_of(Above(0, theta), Below(1, phi)),
        all_of(Above(0, theta), Above(1, theta)),
    )
    known = KnownData(
        pieces=pieces,
        order_edges=((3, 0), (3, 1), (3, 2), (1, 0), (2, 0)),
        filtration=(
            all_of(Below(0, 0.9), Below(1, 0.9)),
            Below(0, 0.9),
            any_of(Below(0, 0.9), Below(1, 0.9)),
            Whole(),
        ),
        covers=covers,
        cover_margin=phi - theta,
        stable_domains=(Whole(), Above(1, 0.5), Above(0, 0.5),
                        all_of(Above(0, 0.5), Above(1, 0.5))),
        unstable_domains=(Whole(), Above(1, theta - 0.05), Above(0, theta - 0.05),
                          all_of(Above(0, theta - 0.05), Above(1, theta - 0.05))),
        near_piece=tuple(regions.Ball(tuple(p.points[0]), 0.15) for p in pieces),
    )
    return Endomorphism(space, "product_squares", "analytic", f, df,
                        preimage_branches, known)


# ---------------------------------------------------------------------------
# perturbation families


@dataclass(frozen=True)
class PerturbationFamily:
    """One-parameter C^1 family g_eps with g_0 = base."""

    base: Endomorphism
    kind: str
    make: callable            # eps -> Endomorphism

    def __call__(self, eps):
        return self.make(float(eps))

    def c1_size(self, eps, n=2000, seed=7):
        return measure_c1_distance(self.base, self.make(float(eps)), n, seed)


def measure_c1_distance(f, g, n=2000, seed=7):
    """sup |f-g| + sup |Df-Dg| over a random sample grid."""
    rng = np.random.default_rng(seed)
    pts = f.space.sample_points(n, rng)
    d0 = float(f.space.dist(f.f(pts), g.f(pts)).max())
    d1 = float(np.abs(f.df(pts) - g.df(pts)).max())
    return d0 + d1


def _perturbed(base, name, shift, dshift, eps):
    """Endomorphism x -> f(x) + eps*shift(x) with branch-polished preimages."""

    def f(x):
        return base.space.wrap(base.f(x) + eps * shift(x))

    def df(x):
        return base.df(x) + eps * dshift(x)

    def preimage_branches(y):
        y = np.asarray(y, dtype=np.float64)
        out = []
        for x in base.preimage_branches(y):
            x = np.array(x, dtype=np.float64)
            for _ in range(60):  # Newton polish along the same branch
                r = base.space.log(f(x), y, max_norm=None)
                if np.max(np.abs(r)) < 1e-13:
                    break
                try:
                    x = x + np.linalg.solve(df(x), r)
                except np.linalg.LinAlgError:
                    break
            if np.max(np.abs(base.space.log(f(x), y, max_norm=None))) < 1e-10:
                out.append(base.space.wrap(x))
        return np.array(out) if out else np.empty((0, base.space.dim))

    return Endomorphism(base.space, name, base.smoothness, f, df,
                        preimage_branches, known=None)


def perturb_translation(base, v=None):
    """g_eps = f + eps * v for a constant direction v (default e_1)."""
    d = base.space.dim
    direction = np.zeros(d)
    direction[0] = 1.0
    if v is not None:
        direction = np.asarray(v, dtype=np.float64)

    def shift(x):
        x = np.asarray(x, dtype=np.float64)
        return np.broadcast_to(direction, x.shape)

    def dshift(x):
        x = np.asarray(x, dtype=np.float64)
        return np.zeros(x.shape[:-1] + (d, d))

    def make(eps):
        _check_region(base, shift, eps)
        return _perturbed(base, f"{base.name}+tr:{eps:g}", shift, dshift, eps)

    return PerturbationFamily(base, "translation", make)


def perturb_fourier(base, k=1):
    """g_eps = f + eps * sin(2 pi k x) applied componentwise."""
    d = base.space.dim
    k = int(k)

    def shift(x):
        x = np.asarray(x, dtype=np.float64)
        return np.sin(2.0 * np.pi * k * x)

    def dshift(x):
        x = np.asarray(x, dtype=np.float64)
        jac = np.zeros(x.shape[:-1] + (d, d))
        idx = np.arange(d)
        jac[..., idx, idx] = 2.0 * np.pi * k * np.cos(2.0 * np.pi * k * x)
        return jac

    def make(eps):
        _check_region(base, shift, eps)
        return _perturbed(base, f"{base.name}+fourier{k}:{eps:g}", shift, dshift, eps)

    return PerturbationFamily(base, "fourier", make)


def _check_region(base, shift, eps, n=400, steps=100, seed=11):
    """Reject eps whose forward orbits escape the model box."""
    if base.space.periodic or eps == 0.0:
        return
    rng = np.random.default_rng(seed)
    pts = base.space.sample_points(n, rng)
    if base.known is not None:
        pts = pts[base.known.attractor_region.contains(pts)]
    lo = np.array([b[0] for b in base.space.bounds])
    hi = np.array([b[1] for b in base.space.bounds])
    slack = 0.5 * base.space.diameter
    for _ in range(steps):
        pts = base.f(pts) + eps * shift(pts)
        if np.any(pts < lo - slack) or np.any(pts > hi + slack):
            raise ConfigError(
                f"eps={eps} pushes orbits out of the invariant region")


# ---------------------------------------------------------------------------
# name-based lookup


def parse_system(name):
    """Build a zoo member from its CLI name string."""
    head, _, args = name.partition(":")
    kv = {}
    plain = []
    if args:
        for part in args.split(","):
            if "=" in part:
                k, v = part.split("=", 1)
                kv[k.strip()] = v.strip()
            else:
                plain.append(part.strip())
    if head == "doubling":
        return zoo_doubling()
    if head == "quadratic":
        return zoo_quadratic(float(kv.get("c", 0.0)))
    if head == "product_squares":
        return zoo_product_squares()
    if head == "delay":
        return zoo_delay(int(kv.get("m", 1)), int(kv.get("n", 2)),
                         float(kv.get("c", 0.0)))
    if head == "torus":
        vals = [int(v) for v in plain]
        d = int(round(np.sqrt(len(vals))))
        if d * d != len(vals):
            raise ConfigError("torus:<entries> needs a square matrix")
        return zoo_torus_linear(np.array(vals, dtype=float).reshape(d, d))
    raise ConfigError(f"unknown system {name!r}")


def zoo_names():
    return [
        ("doubling", "circle doubling map x -> 2x mod 1"),
        ("torus:a,b,c,d", "linear torus endomorphism from an integer matrix"),
        ("quadratic:c=<c>", "x -> x^2 + c on its invariant interval"),
        ("delay:m=<m>,n=<n>,c=<c>", "delayed quadratic on a box"),
        ("product_squares", "(x,y,z) -> (x^2, y^2, 0) on the unit cube"),
    ]


def parse_perturbation(base, spec):
    """Build (family, eps) from CLI strings like "translation:0.01"."""
    head, _, arg = spec.partition(":")
    eps = float(arg) if arg else 0.0
    if head in ("translation", "tr"):
        return perturb_translation(base), eps
    if head == "fourier":
        return perturb_fourier(base), eps
    if head in ("none", ""):
        return perturb_translation(base), 0.0
    raise ConfigError(f"unknown perturbation {spec!r}")
