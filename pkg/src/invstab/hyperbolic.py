"""Periodic skeletons, cone-field unstable directions and spectral structure.

The non-wandering set is approximated by Newton-refined periodic points;
basic pieces come from known data or from chain-recurrence clustering of
that skeleton, the heteroclinic order from shooting orbits out of unstable
directions, and adapted filtrations from per-system semi-algebraic
templates validated on a grid.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import regions
from .errors import ConfigError, NotHyperbolicError, RankCollapse
from .spaces import OrbitWindow, Subspace, grassmann_distance, min_pair_angle
from .zoo import PieceSpec

PERIOD_CAP = 12
NEWTON_TOL = 1e-12
CLUSTER_RESOLUTION = 1e-3


@dataclass(frozen=True)
class PeriodicOrbit:
    points: np.ndarray       # (p, d) the orbit in order
    period: int
    multipliers: np.ndarray  # eigenvalues of Df^p
    residual: float


def find_periodic(system, period, grid=None, max_newton=40):
    """Newton-refined periodic orbits of exact minimal period `period`.

    Seeds are drawn from a uniform grid; non-convergent seeds are dropped.
    """
    period = int(period)
    if period < 1 or period > PERIOD_CAP:
        raise ConfigError(f"period must be in [1, {PERIOD_CAP}]")
    space = system.space
    d = space.dim
    if grid is None:
        grid = max(4, int(round(200 ** (1.0 / d))))
    axes = []
    if space.periodic:
        axes = [np.linspace(0.0, 1.0, grid, endpoint=False)] * d
    else:
        axes = [np.linspace(lo, hi, grid) for lo, hi in space.bounds]
    seeds = np.stack(np.meshgrid(*axes), axis=-1).reshape(-1, d)

    found = []
    failures = 0
    eye = np.eye(d)
    for x in seeds:
        x = np.array(x, dtype=np.float64)
        ok = False
        for _ in range(max_newton):
            y = x
            jac = eye.copy()
            for _ in range(period):
                jac = system.df(y) @ jac
                y = system.f(y)
            res = space.log(x, y, max_norm=None)
            if np.max(np.abs(res)) < NEWTON_TOL:
                ok = True
                break
            try:
                step = np.linalg.solve(jac - eye, -res)
            except np.linalg.LinAlgError:
                step, *_ = np.linalg.lstsq(jac - eye, -res, rcond=None)
            if not np.all(np.isfinite(step)) or np.max(np.abs(step)) > 1.0:
                break
            x = space.wrap(x - step)
        if not ok:
            failures += 1
            continue
        if not bool(np.all(space.contains(x))):
            continue
        found.append(space.wrap(x))

    orbits = []
    taken = []
    for x in found:
        orbit = system.orbit_forward(x, period)[:-1]
        # discard points of smaller minimal period
        minimal = True
        for sub in range(1, period):
            if period % sub == 0 and float(space.dist(orbit[0], orbit[sub])) < 1e-8:
                minimal = False
                break
        if not minimal:
            continue
        if any(float(space.dist(orbit[None, 0], prev).min()) < 1e-8 for prev in taken):
            continue
        taken.append(orbit)
        jac = np.eye(d)
        for p in orbit:
            jac = system.df(p) @ jac
        y = system.f(orbit[-1])
        residual = float(space.dist(y, orbit[0]))
        orbits.append(PeriodicOrbit(orbit, period, np.linalg.eigvals(jac), residual))
    return orbits, failures


def cone_iterate_unstable(system, window, seed: Subspace, iters):
    """Push a seed subspace along the backward tail of a window.

    Orthonormalizes after every derivative application and reports the
    Grassmannian increment between the results for `iters` and `iters - 1`
    pushes, which decays like the spectral-gap ratio.
    """
    if iters > window.k_b:
        raise ValueError(f"window past length {window.k_b} < iters {iters}")

    def push(start):
        basis = seed.basis.copy()
        for n in range(start, 0):
            basis = system.df(window.point(n)) @ basis
            q, r = np.linalg.qr(basis)
            if np.min(np.abs(np.diag(r))) < 1e-12 * max(1.0, np.abs(r).max()):
                raise RankCollapse(
                    f"derivative at index {n} kills the seed subspace")
            basis = q
        return Subspace(basis)

    result = push(-iters)
    if iters >= 2:
        previous = push(-(iters - 1))
        increment = grassmann_distance(result, previous)
    else:
        increment = np.inf
    return result, float(increment)


@dataclass(frozen=True)
class SplittingSample:
    """Tangent hyperbolic splitting over windows through the periodic skeleton."""

    windows: tuple           # OrbitWindow per sample point
    stable: tuple            # tangent Subspace per window
    unstable: tuple
    contraction: float       # sup |Df restricted to stable|
    expansion: float         # sup |(Df restricted to unstable)^-1|
    min_angle: float
    invariance_defect: float


def build_splitting(system, pieces, k_b=40, k_f=8, cone_iters=32):
    """Assemble the splitting over windows through each piece's periodic orbit."""
    space = system.space
    windows, stabs, unstabs = [], [], []
    contraction, expansion, defect = 0.0, 0.0, 0.0
    min_angle = np.pi / 2
    for piece in pieces:
        pts = np.atleast_2d(piece.points)
        p = len(pts)
        for k in range(p):
            coords = np.array([pts[(k + n) % p] for n in range(-k_b, k_f + 1)])
            win = OrbitWindow(space, space.wrap(coords), k_b, k_f)
            windows.append(win)
            s = Subspace.from_vectors(piece.stable_dirs) if piece.stable_dirs.size \
                else Subspace.trivial(space.dim)
            u = Subspace.from_vectors(piece.unstable_dirs) if piece.unstable_dim \
                else Subspace.trivial(space.dim)
            if piece.unstable_dim:
                u, _ = cone_iterate_unstable(system, win, u, cone_iters)
            # transport the eigen-data along the periodic orbit
            jac = np.eye(space.dim)
            for n in range(k):
                jac = system.df(pts[n]) @ jac
            if s.dim and k > 0:
                s = Subspace.from_vectors(jac @ s.basis)
            stabs.append(s)
            unstabs.append(u)
            dfx = system.df(win.point(0))
            if s.dim:
                contraction = max(contraction, float(np.linalg.norm(dfx @ s.basis, 2)))
            if u.dim:
                img = dfx @ u.basis
                sv = np.linalg.svd(img, compute_uv=False)
                expansion = max(expansion, 1.0 / float(sv.min()))
            if s.dim and u.dim:
                min_angle = min(min_angle, min_pair_angle(s, u))
    # invariance defect: push each unstable space one step and compare
    n = len(windows)
    for i in range(n):
        u = unstabs[i]
        if not u.dim:
            continue
        win = windows[i]
        img = Subspace.from_vectors(system.df(win.point(0)) @ u.basis)
        shifted = win.shift(1)
        target, _ = cone_iterate_unstable(system, shifted, img, min(8, shifted.k_b))
        defect = max(defect, grassmann_distance(img, target))
    return SplittingSample(tuple(windows), tuple(stabs), tuple(unstabs),
                           contraction, expansion, min_angle, defect)


@dataclass(frozen=True)
class AxiomAReport:
    contraction: float
    expansion: float
    invariance_defect: float
    min_angle: float
    hausdorff_per_omega: float
    passed: bool
    margins: dict

    def to_dict(self):
        return {
            "contraction": self.contraction,
            "expansion": self.expansion,
            "invariance_defect": self.invariance_defect,
            "min_angle": self.min_angle,
            "hausdorff_per_omega": self.hausdorff_per_omega,
            "passed": bool(self.passed),
            "margins": self.margins,
        }


def verify_axiom_A(system, splitting, periods=(1, 2, 3, 4),
                   contraction_margin=1e-9, invariance_tol=1e-8):
    """Measured contraction/expansion/invariance plus the periodic-skeleton
    distance to the non-wandering sample; report-only, never raises."""
    per_points = []
    for p in periods:
        orbits, _ = find_periodic(system, p)
        for orb in orbits:
            per_points.extend(orb.points)
    omega_points = [w.point(0) for w in splitting.windows] + list(per_points)
    hausdorff = _hausdorff(system.space, np.array(per_points), np.array(omega_points))
    passed = (splitting.contraction < 1.0 - contraction_margin
              and splitting.expansion < 1.0 - contraction_margin
              and splitting.invariance_defect <= invariance_tol)
    return AxiomAReport(
        splitting.contraction, splitting.expansion, splitting.invariance_defect,
        splitting.min_angle, hausdorff, passed,
        {"contraction_margin": contraction_margin, "invariance_tol": invariance_tol})


def _hausdorff(space, A, B):
    if len(A) == 0 or len(B) == 0:
        return np.inf
    d = np.stack([space.dist(a[None, :], B) for a in A])
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


# ---------------------------------------------------------------------------
# spectral decomposition and filtrations


@dataclass(frozen=True)
class BasicPieceSet:
    """Spectral decomposition with order, filtration and covers."""

    system: object
    pieces: tuple                 # PieceSpec, enumeration is a linear extension
    order_edges: tuple            # (i, j): piece i's unstable set reaches piece j
    filtration: tuple             # nested region masks, one per piece
    covers: tuple                 # open cover W_i around each piece
    cover_margin: float
    stable_domains: tuple
    unstable_domains: tuple
    near_piece: tuple
    shot_edges: tuple = field(default=())

    @property
    def q(self):
        return len(self.pieces)

    def to_json(self):
        payload = {
            "system": self.system.name,
            "q": self.q,
            "pieces": [
                {
                    "name": p.name,
                    "points": np.atleast_2d(p.points).tolist(),
                    "period": p.period,
                    "multipliers": [[float(np.real(m)), float(np.imag(m))]
                                    for m in np.atleast_1d(p.multipliers)],
                    "unstable_dim": int(p.unstable_dim),
                }
                for p in self.pieces
            ],
            "order_edges": [list(e) for e in self.order_edges],
            "filtration": [regions.describe(m) for m in self.filtration],
            "covers": [regions.describe(m) for m in self.covers],
            "cover_margin": float(self.cover_margin),
        }
        return json.dumps(payload, sort_keys=True)


def order_by_shooting(system, pieces, eps=1e-3, steps=200, tol=1e-3, settle=5):
    """Heteroclinic edges found by shooting orbits out of unstable directions."""
    space = system.space
    reps = [np.atleast_2d(p.points) for p in pieces]
    edges = set()
    for i, piece in enumerate(pieces):
        if piece.unstable_dim == 0:
            continue
        base = np.asarray(piece.points[0], dtype=np.float64)
        dirs = [piece.unstable_dirs[:, k] for k in range(piece.unstable_dim)]
        if piece.unstable_dim > 1:
            dirs.append(piece.unstable_dirs.sum(axis=1) / np.sqrt(piece.unstable_dim))
        for v in dirs:
            for sign in (+1.0, -1.0):
                x = space.wrap(base + sign * eps * v)
                if not bool(np.all(space.contains(x))):
                    continue
                hit = None
                run = 0
                for _ in range(steps):
                    x = system.f(x)
                    if not bool(np.all(space.contains(x, tol=0.5))):
                        break
                    dists = [float(space.dist(x[None, :], r).min()) for r in reps]
                    j = int(np.argmin(dists))
                    if dists[j] < tol and j != i:
                        run = run + 1 if hit == j else 1
                        hit = j
                        if run >= settle:
                            edges.add((i, j))
                            break
                    else:
                        hit, run = None, 0
    return tuple(sorted(edges))


def _transitive_closure(edges, q):
    reach = {i: set() for i in range(q)}
    for i, j in edges:
        reach[i].add(j)
    changed = True
    while changed:
        changed = False
        for i in range(q):
            new = set()
            for j in reach[i]:
                new |= reach[j]
            if not new <= reach[i]:
                reach[i] |= new
                changed = True
    return {(i, j) for i in range(q) for j in reach[i]}


def spectral_decomposition(system, shoot=True):
    """Basic pieces with a validated linear extension of the order.

    Uses the curated data when present (cross-checked by orbit shooting);
    otherwise clusters the refined periodic skeleton at the chain-recurrence
    resolution and orders the clusters by shooting.
    """
    if system.known is not None:
        k = system.known
        for i, j in k.order_edges:
            if not i > j:
                raise ConfigError("piece enumeration is not a linear extension")
        shot = order_by_shooting(system, k.pieces) if shoot else ()
        if shoot:
            known_cl = _transitive_closure(k.order_edges, len(k.pieces))
            if not set(shot) <= known_cl:
                raise ConfigError(f"shot edges {shot} disagree with known order")
        return BasicPieceSet(system, k.pieces, k.order_edges, k.filtration,
                             k.covers, k.cover_margin, k.stable_domains,
                             k.unstable_domains, k.near_piece, shot)
    return _discover_pieces(system)


def _discover_pieces(system, periods=(1, 2, 3, 4, 5, 6)):
    space = system.space
    orbits = []
    for p in periods:
        found, _ = find_periodic(system, p)
        orbits.extend(found)
    if not orbits:
        raise ConfigError("no periodic points found; cannot decompose")
    clusters = []
    for orb in orbits:
        placed = False
        for cl in clusters:
            dmin = min(float(space.dist(q[None, :], orb.points).min()) for q in cl)
            if dmin < CLUSTER_RESOLUTION:
                if dmin > CLUSTER_RESOLUTION / 10:
                    raise ConfigError(
                        "clustering ambiguity at the chain-recurrence resolution; "
                        "supply known data")
                cl.extend(list(orb.points))
                placed = True
                break
        if not placed:
            clusters.append(list(orb.points))
    pieces = []
    for idx, cl in enumerate(clusters):
        rep = min(
            (o for o in orbits
             if float(space.dist(o.points[0][None, :], np.array(cl)).min())
             < CLUSTER_RESOLUTION),
            key=lambda o: o.period)
        mult = rep.multipliers
        udim = int(np.sum(np.abs(mult) > 1.0))
        jac = np.eye(space.dim)
        for p in rep.points:
            jac = system.df(p) @ jac
        from .zoo import _invariant_subspace
        udirs = _invariant_subspace(jac, lambda lam: np.abs(lam) > 1.0)
        sdirs = _invariant_subspace(jac, lambda lam: np.abs(lam) <= 1.0)
        pieces.append(PieceSpec(f"cluster{idx}", rep.points, rep.period, mult,
                                udim, udirs, sdirs))
    edges = order_by_shooting(system, pieces)
    order = _toposort(edges, len(pieces))
    pieces = [pieces[k] for k in order]
    relabel = {old: new for new, old in enumerate(order)}
    edges = tuple(sorted((relabel[i], relabel[j]) for i, j in edges))
    return BasicPieceSet(system, tuple(pieces), edges, (), (), 0.0, (), (), (), edges)


def _toposort(edges, q):
    """Enumeration with sinks (attractors) first, so i above j implies i > j."""
    above = {i: set() for i in range(q)}
    for i, j in edges:
        above[i].add(j)
    order = []
    remaining = set(range(q))
    while remaining:
        sinks = [i for i in remaining if not (above[i] & remaining)]
        if not sinks:
            raise ConfigError("heteroclinic order has a cycle")
        for i in sorted(sinks):
            order.append(i)
            remaining.discard(i)
    return order


def build_filtration(piece_set, grid_points=10_000, seed=5, interior_tol=1e-6):
    """Validate (auto-tightening once) the template filtration masks.

    Checks nesting and forward invariance f(M_i) inside the eroded M_i on a
    random grid; returns the masks actually validated.
    """
    system = piece_set.system
    if not piece_set.filtration:
        raise ConfigError(f"{system.name}: no filtration template available")
    rng = np.random.default_rng(seed)
    pts = system.space.sample_points(grid_points, rng)
    masks = list(piece_set.filtration)
    for attempt in range(2):
        ok = _filtration_valid(system, masks, pts, interior_tol)
        if ok:
            return tuple(masks)
        masks = [m if isinstance(m, regions.Whole) else m.erode(0.05) for m in masks]
    raise ConfigError(f"{system.name}: filtration template fails invariance")


def _filtration_valid(system, masks, pts, interior_tol):
    prev = None
    for mask in masks:
        inside = mask.contains(pts)
        if prev is not None and np.any(prev & ~inside):
            return False
        sel = pts[inside]
        if len(sel):
            img = system.f(sel)
            if not np.all(mask.erode(interior_tol).contains(img)):
                return False
        prev = inside
    return True


def check_piece_isolation(piece_set, sample, span=40, tol=1e-3):
    """Windows staying in M_i minus M_{i-1} for |n| <= span sit near piece i."""
    system = piece_set.system
    span = min(span, sample.S - 1)
    x0 = sample.x0()  # (n_orbits, n_cols, d)
    worst = 0.0
    for i, mask in enumerate(piece_set.filtration):
        rep = np.atleast_2d(piece_set.pieces[i].points)
        inside = mask.contains(x0)
        if i > 0:
            inside &= ~piece_set.filtration[i - 1].contains(x0)
        elif bool(inside.all()):
            # whole-space layer: the piece is the global transitive set
            continue
        js = sample.interior_cols(span)
        for j in js:
            col = sample.col_index(j)
            stay = np.ones(sample.n_orbits, dtype=bool)
            for n in range(-span, span + 1):
                kk = np.clip(col + n, 0, sample.n_cols - 1)
                stay &= inside[:, kk]
            if not stay.any():
                continue
            pts = x0[stay, col]
            dmin = np.stack([system.space.dist(pts, np.broadcast_to(r, pts.shape))
                             for r in rep]).min(axis=0)
            worst = max(worst, float(dmin.max()))
    if worst > tol:
        raise NotHyperbolicError(
            f"filtration fails to isolate pieces: drift {worst:.3g} > {tol}")
    return worst
