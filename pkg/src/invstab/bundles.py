"""Invariant plane-field families on the doubled trivialization.

Per basic piece, the stable field is the fixed point of the pull-back graph
transform seeded from the kernel block plus the known stable tangent
directions, and the unstable field is the fixed point of the push-forward
transform on the angle-guarded set, seeded from the orthocomplement of the
stable field blended toward the pushed unstable fields of higher pieces
(projections parallel to their stable fields, weighted by dump functions).
Fields live on the orbit-sample columns; per-column reads outside a field's
domain hold the current value, which realizes the boundary gluing at desk
scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import (AngleGuardViolation, DivergenceError, NotHyperbolicError,
                     RankCollapse)
from .spaces import Subspace

QR_RANK_TOL = 1e-12


def orthonormalize_batch(B):
    """Batched QR with a rank guard; B has shape (..., n, k)."""
    if B.shape[-1] == 0:
        return B.copy()
    q, r = np.linalg.qr(B)
    diag = np.abs(np.diagonal(r, axis1=-2, axis2=-1))
    scale = np.maximum(np.abs(r).reshape(r.shape[:-2] + (-1,)).max(axis=-1), 1.0)
    if np.any(diag.min(axis=-1) < QR_RANK_TOL * scale):
        raise RankCollapse("plane basis lost rank during transport")
    return q


def grassmann_batch(P, Q):
    """Operator-norm projector distances for stacked orthonormal bases."""
    if P.shape[-1] == 0 and Q.shape[-1] == 0:
        return np.zeros(P.shape[:-2])
    pp = P @ np.swapaxes(P, -1, -2)
    qq = Q @ np.swapaxes(Q, -1, -2)
    s = np.linalg.svd(pp - qq, compute_uv=False)
    return s[..., 0]


def containment_defect_batch(big, small):
    """sup over unit u in span(small) of dist(u, span(big)), batched."""
    if small.shape[-1] == 0:
        return np.zeros(small.shape[:-2])
    proj = big @ np.swapaxes(big, -1, -2)
    resid = small - proj @ small
    s = np.linalg.svd(resid, compute_uv=False)
    return s[..., 0]


def min_angle_batch(P, Q):
    """Smallest principal angle between stacked subspaces (radians)."""
    if P.shape[-1] == 0 or Q.shape[-1] == 0:
        return np.full(P.shape[:-2], np.pi / 2)
    s = np.linalg.svd(np.swapaxes(P, -1, -2) @ Q, compute_uv=False)
    return np.arccos(np.clip(s[..., 0], -1.0, 1.0))


def blend_planes(bases_from, bases_to, weight):
    """Plane through {(1-w) u + w proj_to(u) : u in from}; rank loss is fatal.

    weight may be scalar or broadcastable over the stacked leading axes.
    """
    if bases_from.shape[-1] == 0:
        return bases_from.copy()
    w = np.asarray(weight, dtype=np.float64)[..., None, None]
    proj = bases_to @ np.swapaxes(bases_to, -1, -2)
    vecs = (1.0 - w) * bases_from + w * (proj @ bases_from)
    return orthonormalize_batch(vecs)


@dataclass
class PlaneFieldOnSample:
    """Subspace-per-window field over an orbit sample, with a domain mask."""

    sample: object
    bases: np.ndarray      # (n_orbits, n_cols, N', k)
    mask: np.ndarray       # (n_orbits, n_cols)
    lipschitz_est: float = np.nan

    @property
    def dim(self):
        return self.bases.shape[-1]

    @property
    def doubled_dim(self):
        return self.bases.shape[-2]

    def at(self, i, j):
        return Subspace(self.bases[i, self.sample.col_index(j)])

    def copy(self):
        return PlaneFieldOnSample(self.sample, self.bases.copy(), self.mask.copy(),
                                  self.lipschitz_est)


def field_lipschitz(field, n_pairs=1500, seed=21, min_dinf=1e-4):
    """Measured sup of d_G / d_inf over sampled in-domain window pairs."""
    if field.dim == 0:
        return 0.0
    rng = np.random.default_rng(seed)
    sample = field.sample
    flat_mask = field.mask.reshape(-1)
    idx = np.flatnonzero(flat_mask)
    if len(idx) < 2:
        return 0.0
    a = rng.choice(idx, n_pairs)
    b = rng.choice(idx, n_pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    flat = sample.flat_windows()
    dinf = _kernels.rowwise_dinf(flat[a], flat[b], sample.space.periodic)
    fb = field.bases.reshape(-1, field.bases.shape[-2], field.bases.shape[-1])
    dg = grassmann_batch(fb[a], fb[b])
    keep2 = dinf >= min_dinf
    if not keep2.any():
        return 0.0
    return float((dg[keep2] / dinf[keep2]).max())


# ---------------------------------------------------------------------------
# graph transforms


def _hold_where(new_bases, old_bases, ok):
    out = np.where(ok[..., None, None], new_bases, old_bases)
    return out


def graph_transform_pullback(field, Fd, inv_mats=None):
    """One pull-back step: the plane at a window is the preimage of the plane
    at the shifted window. Columns whose successor leaves the domain keep
    their current plane (boundary gluing)."""
    sample = field.sample
    if field.dim == 0:
        return field.copy()
    if inv_mats is None:
        inv_mats = inverse_matrices(Fd, sample)
    shifted = np.roll(field.bases, -1, axis=1)
    ok = field.mask.copy()
    ok[:, -1] = False
    ok[:, :-1] &= field.mask[:, 1:]
    pulled = orthonormalize_batch(inv_mats @ shifted)
    return PlaneFieldOnSample(sample, _hold_where(pulled, field.bases, ok),
                              field.mask, field.lipschitz_est)


def graph_transform_pushforward(field, Fd, mats=None):
    """One push-forward step: the plane at a window is the image of the plane
    at the backward-shifted window."""
    sample = field.sample
    if field.dim == 0:
        return field.copy()
    if mats is None:
        mats = forward_matrices(Fd, sample)
    prev = np.roll(field.bases, 1, axis=1)
    prev_mat = np.roll(mats, 1, axis=1)
    ok = field.mask.copy()
    ok[:, 0] = False
    ok[:, 1:] &= field.mask[:, :-1]
    pushed = orthonormalize_batch(prev_mat @ prev)
    return PlaneFieldOnSample(sample, _hold_where(pushed, field.bases, ok),
                              field.mask, field.lipschitz_est)


def forward_matrices(Fd, sample):
    """F at every column's center point: (n_orbits, n_cols, N', N')."""
    return Fd.matrix(sample.x0())


def inverse_matrices(Fd, sample):
    """Closed-form block inverses of the forward matrices (delta > 0)."""
    if Fd.delta <= 0.0:
        raise ValueError("inverse undefined at delta=0")
    A = np.asarray(Fd.tangent_matrix(sample.x0()), dtype=np.float64)
    N = A.shape[-1]
    d = Fd.delta
    out = np.zeros(A.shape[:-2] + (2 * N, 2 * N))
    idx = np.arange(N)
    out[..., idx, N + idx] = 1.0 / d
    out[..., N + idx, idx] = 1.0 / d
    out[..., N:, N:] = -A / (d * d)
    return out


# ---------------------------------------------------------------------------
# per-piece solves


def _domain_mask(region, sample):
    return region.contains(sample.x0())


def _embed_tangent(dirs, N):
    """Lift tangent columns (N, k) into the first block of R^{2N}."""
    k = dirs.shape[1] if dirs.ndim == 2 else 0
    out = np.zeros((2 * N, k))
    if k:
        out[:N] = dirs
    return out


def stable_seed_basis(piece, N):
    """Kernel block plus stable tangent directions, orthonormal."""
    cols = [np.vstack([np.zeros((N, N)), np.eye(N)])]
    if piece.stable_dirs.size:
        cols.append(_embed_tangent(piece.stable_dirs, N))
    basis = np.hstack(cols)
    q, _ = np.linalg.qr(basis)
    return q


@dataclass
class FixedPointStats:
    iterations: int
    final_change: float
    contraction_factor: float
    seed_distance: float


def _iterate_to_fixed_point(field, step, eta, iters, tol, label):
    """Run a graph transform to its fixed point inside the eta-ball."""
    seed = field.bases.copy()
    changes = []
    prev = field
    drift = 0.0
    for it in range(iters):
        nxt = step(prev)
        if nxt.dim == 0:
            return nxt, FixedPointStats(it + 1, 0.0, 0.0, 0.0)
        change = grassmann_batch(nxt.bases, prev.bases)
        change = float(np.where(prev.mask, change, 0.0).max())
        changes.append(change)
        drift = grassmann_batch(nxt.bases, seed)
        drift = float(np.where(prev.mask, drift, 0.0).max())
        if drift > eta:
            raise DivergenceError(
                f"{label}: left the eta-ball (drift {drift:.3g} > {eta})")
        prev = nxt
        if change < tol:
            break
    factor = 0.0
    tail = [c for c in changes if c > 0.0]
    if len(tail) >= 2 and tail[-2] > 0:
        factor = tail[-1] / tail[-2]
    return prev, FixedPointStats(len(changes), changes[-1] if changes else 0.0,
                                 factor, drift)


def solve_stable_family(piece_set, Fd, sample, dumps=None, eta=0.5, iters=200,
                        tol=1e-12):
    """Stable fields per piece, by increasing induction.

    Each seed is the kernel block plus the piece's stable tangent
    directions, glued toward the already-solved lower-piece fields by the
    projector blend weighted with dump functions; the pull-back fixed point
    keeps the glued values on the exit ring where the forward read leaves
    the domain.
    """
    from .hyperbolic import _transitive_closure
    comparable = _transitive_closure(piece_set.order_edges, piece_set.q)
    N = Fd.ambient_dim
    inv = inverse_matrices(Fd, sample) if Fd.delta > 0 else None
    fields, stats = [], []
    for i, piece in enumerate(piece_set.pieces):
        mask = _domain_mask(piece_set.stable_domains[i], sample)
        basis = stable_seed_basis(piece, N)
        bases = np.broadcast_to(
            basis, (sample.n_orbits, sample.n_cols) + basis.shape).copy()
        for j in range(i):
            if (i, j) not in comparable:
                continue  # containment only binds along the order
            if fields[j].dim in (0, Fd.doubled_dim):
                continue  # nothing to project toward / containment trivial
            valid = (mask & fields[j].mask
                     & _domain_mask(piece_set.covers[j], sample))
            if not valid.any():
                continue
            # full projection on the lower cover: containment is asserted
            # exactly there, so the dump weight is 1 on the whole zone
            w = valid.astype(float)
            bases = blend_planes(bases, fields[j].bases, w)
        f0 = PlaneFieldOnSample(sample, bases, mask)
        if Fd.delta > 0:
            fixed, st = _iterate_to_fixed_point(
                f0, lambda g: graph_transform_pullback(g, Fd, inv),
                eta, iters, tol, f"stable[{piece.name}]")
        else:
            fixed, st = f0, FixedPointStats(0, 0.0, 0.0, 0.0)
        fixed.lipschitz_est = field_lipschitz(fixed)
        fields.append(fixed)
        stats.append(st)
    return fields, stats


def stable_nesting_defects(piece_set, fields, sample):
    """Same-window containment of the later piece's stable field in the
    earlier one's, on cover overlaps of order-comparable pieces."""
    from .hyperbolic import _transitive_closure
    comparable = _transitive_closure(piece_set.order_edges, piece_set.q)
    out = {}
    covers = [_domain_mask(c, sample) for c in piece_set.covers]
    for k in range(piece_set.q):
        for j in range(k):
            if (k, j) not in comparable:
                continue
            overlap = covers[k] & covers[j] & fields[k].mask & fields[j].mask
            if not overlap.any() or fields[k].dim == 0:
                continue
            d = containment_defect_batch(fields[j].bases, fields[k].bases)
            out[(k, j)] = float(np.where(overlap, d, 0.0).max())
    return out


def unstable_seed(piece_set, i, stable_fields, unstable_fields, Fd, sample,
                  dumps=None):
    """Orthocomplement of the stable field, blended toward the pushed
    unstable fields of the higher pieces (projection parallel to their
    stable fields, weighted by dump functions). Blending only acts on
    columns whose predecessor lies in the higher piece's cover."""
    piece = piece_set.pieces[i]
    k_u = piece.unstable_dim
    mask = _domain_mask(piece_set.unstable_domains[i], sample)
    n, c = sample.n_orbits, sample.n_cols
    Np = Fd.doubled_dim
    if k_u == 0:
        return PlaneFieldOnSample(sample, np.zeros((n, c, Np, 0)), mask)
    sb = stable_fields[i].bases
    proj_s = sb @ np.swapaxes(sb, -1, -2)
    resid = np.broadcast_to(np.eye(Np), (n, c, Np, Np)) - proj_s
    u, _, _ = np.linalg.svd(resid)
    bases = np.ascontiguousarray(u[..., :k_u])
    mats = forward_matrices(Fd, sample)
    for j in range(piece_set.q - 1, i, -1):
        other = unstable_fields.get(j)
        if other is None or other.dim == 0:
            continue
        valid = np.roll(_domain_mask(piece_set.covers[j], sample)
                        & other.mask, 1, axis=1)
        valid[:, 0] = False
        valid &= mask & stable_fields[j].mask
        if not valid.any():
            continue
        w = np.where(valid, dumps[j] if dumps is not None else 1.0, 0.0)
        flat = np.flatnonzero(valid.reshape(-1))
        pushed = orthonormalize_batch(
            (np.roll(mats, 1, axis=1) @ np.roll(other.bases, 1, axis=1))
            .reshape(-1, Np, other.dim)[flat])
        target = _oblique_projection_onto(
            pushed, stable_fields[j].bases.reshape(-1, Np, stable_fields[j].dim)[flat],
            bases.reshape(-1, Np, k_u)[flat])
        wf = w.reshape(-1)[flat][:, None, None]
        blended = bases.reshape(-1, Np, k_u).copy()
        blended[flat] = (1.0 - wf) * blended[flat] + wf * target
        bases = orthonormalize_batch(blended.reshape(n, c, Np, k_u))
    return PlaneFieldOnSample(sample, bases, mask)


def _oblique_projection_onto(target_bases, parallel_bases, vecs):
    """Project columns of vecs onto span(target) parallel to span(parallel)."""
    ku = target_bases.shape[-1]
    ks = parallel_bases.shape[-1]
    Np = target_bases.shape[-2]
    pad = Np - ku - ks
    comps = [target_bases, parallel_bases]
    if pad > 0:
        # complete to a basis so the solve is square; extra components are
        # dropped with the parallel ones
        joint = np.concatenate([target_bases, parallel_bases], axis=-1)
        proj = joint @ np.swapaxes(joint, -1, -2)
        resid = np.broadcast_to(np.eye(Np), proj.shape) - proj
        u, _, _ = np.linalg.svd(resid)
        comps.append(np.ascontiguousarray(u[..., :pad]))
    M = np.concatenate(comps, axis=-1)
    coeff = np.linalg.solve(M, vecs)
    return target_bases @ coeff[..., :ku, :]


def solve_unstable_family(piece_set, Fd, sample, stable_fields, dumps=None,
                          eta_angle=None, eta=0.6, iters=200, tol=1e-12):
    """Unstable fields per piece by push-forward, highest piece first."""
    mats = forward_matrices(Fd, sample)
    fields = {}
    stats = {}
    for i in range(piece_set.q - 1, -1, -1):
        seed = unstable_seed(piece_set, i, stable_fields, fields, Fd, sample,
                             dumps)
        if seed.dim == 0:
            fields[i] = seed
            stats[i] = FixedPointStats(0, 0.0, 0.0, 0.0)
            continue
        guard = eta_angle
        if guard is None:
            ang = min_angle_batch(seed.bases, stable_fields[i].bases)
            guard = 0.5 * float(np.where(seed.mask & stable_fields[i].mask,
                                         ang, np.pi / 2).min())

        def step(g, i=i, guard=guard):
            nxt = graph_transform_pushforward(g, Fd, mats)
            ang = min_angle_batch(nxt.bases, stable_fields[i].bases)
            bad = (ang < guard) & nxt.mask & stable_fields[i].mask
            if np.any(bad):
                raise AngleGuardViolation(
                    f"unstable[{piece_set.pieces[i].name}]: angle "
                    f"{float(ang[bad].min()):.3g} fell below guard {guard:.3g}")
            return nxt

        fixed, st = _iterate_to_fixed_point(
            seed, step, eta, iters, tol, f"unstable[{piece_set.pieces[i].name}]")
        fixed.lipschitz_est = field_lipschitz(fixed)
        fields[i] = fixed
        stats[i] = st
    return [fields[i] for i in range(piece_set.q)], [stats[i] for i in range(piece_set.q)]


# ---------------------------------------------------------------------------
# assembled family with measured constants


@dataclass
class BundleFamily:
    sample: object
    Fd: object
    piece_set: object
    stable: list
    unstable: list
    cover_masks: np.ndarray      # (q, n_orbits, n_cols)
    near_masks: np.ndarray
    min_angle: float = np.nan
    expansion_floor: float = np.nan   # min |F v^u| / |v^u| over covers
    K: float = np.nan
    lam_near: float = np.nan
    proj_norm: float = np.nan         # the constant C: sup oblique projector norm

    @property
    def q(self):
        return self.piece_set.q

    def oblique_projectors(self, i):
        """(pi_s, pi_u) arrays (n, c, N', N') on the joint field domain."""
        Np = self.Fd.doubled_dim
        n, c = self.sample.n_orbits, self.sample.n_cols
        ks = self.stable[i].dim
        ku = self.unstable[i].dim
        eye = np.broadcast_to(np.eye(Np), (n, c, Np, Np))
        if ku == 0:
            return eye.copy(), np.zeros((n, c, Np, Np))
        M = np.concatenate([self.stable[i].bases, self.unstable[i].bases], axis=-1)
        Minv = np.linalg.inv(M)
        pi_s = self.stable[i].bases @ Minv[..., :ks, :]
        pi_u = self.unstable[i].bases @ Minv[..., ks:, :]
        return pi_s, pi_u


def build_bundle_family(piece_set, Fd, sample, dumps=None, iters=200, tol=1e-12):
    stable, _ = solve_stable_family(piece_set, Fd, sample, dumps=dumps,
                                    iters=iters, tol=tol)
    unstable, _ = solve_unstable_family(piece_set, Fd, sample, stable,
                                        dumps=dumps, iters=iters, tol=tol)
    covers = np.stack([_domain_mask(c, sample) for c in piece_set.covers])
    nears = np.stack([_domain_mask(r, sample) for r in piece_set.near_piece]) \
        if piece_set.near_piece else covers.copy()
    fam = BundleFamily(sample, Fd, piece_set, stable, unstable, covers, nears)
    _measure_family(fam)
    return fam


def _measure_family(fam):
    mats = forward_matrices(fam.Fd, fam.sample)
    min_angle = np.pi / 2
    exp_floor = np.inf
    lam_near = 0.0
    proj_norm = 1.0
    for i in range(fam.q):
        s, u = fam.stable[i], fam.unstable[i]
        cover = fam.cover_masks[i] & s.mask & u.mask
        near = fam.near_masks[i] & cover
        if u.dim:
            ang = min_angle_batch(s.bases, u.bases)
            min_angle = min(min_angle, float(np.where(cover, ang, np.pi).min()))
            sv = np.linalg.svd(mats @ u.bases, compute_uv=False)
            exp_floor = min(exp_floor, float(np.where(cover, sv[..., -1], np.inf).min()))
            if near.any():
                lam_near = max(lam_near, 1.0 / float(
                    np.where(near, sv[..., -1], np.inf).min()))
            pi_s, pi_u = fam.oblique_projectors(i)
            ns = np.linalg.svd(pi_s, compute_uv=False)[..., 0]
            nu = np.linalg.svd(pi_u, compute_uv=False)[..., 0]
            proj_norm = max(proj_norm,
                            float(np.where(cover, np.maximum(ns, nu), 0.0).max()))
        if s.dim and near.any():
            sv = np.linalg.svd(mats @ s.bases, compute_uv=False)
            lam_near = max(lam_near, float(np.where(near, sv[..., 0], 0.0).max()))
    fam.min_angle = min_angle
    fam.expansion_floor = exp_floor if np.isfinite(exp_floor) else np.nan
    fam.lam_near = lam_near
    fam.proj_norm = proj_norm
    k_candidates = [1.0 / min_angle]
    if np.isfinite(exp_floor) and exp_floor > 0:
        k_candidates.append(1.0 / exp_floor)
    fam.K = float(max(k_candidates))


# ---------------------------------------------------------------------------
# decay envelope (the constants D and lambda of the geometric bound)


@dataclass(frozen=True)
class DecayEnvelope:
    D: float
    lam: float
    ratios: np.ndarray   # sup transported-norm ratio per step count

    def truncation_depth(self, tol):
        """Smallest n with D lam^n / (1 - lam) below tol."""
        if self.lam >= 1.0:
            raise NotHyperbolicError(f"measured decay rate {self.lam} >= 1")
        n = int(np.ceil(np.log(tol * (1.0 - self.lam) / self.D)
                        / np.log(self.lam)))
        return max(1, n)




# ---------------------------------------------------------------------------
# the per-item verification report for the solved family


def verify_principal(fam, invariance_tol=1e-6, nesting_tol=1e-6,
                     isolation_span=40, isolation_tol=1e-3, lam_cap=0.95,
                     d1_pairs=2000, seed=33):
    """Measured defects for the seven structural properties of the family.

    Report-only: every item carries its measured value, tolerance and
    verdict; `passed` is their conjunction.
    """
    sample = fam.sample
    mats = forward_matrices(fam.Fd, sample)
    items = {}

    # (i) invariance under the bundle map within each cover
    inv_s, inv_u = 0.0, 0.0
    for i in range(fam.q):
        cov = fam.cover_masks[i]
        both = cov[:, :-1] & cov[:, 1:]
        s, u = fam.stable[i], fam.unstable[i]
        both_s = both & s.mask[:, :-1] & s.mask[:, 1:]
        if s.dim and both_s.any():
            img = mats[:, :-1] @ s.bases[:, :-1]
            proj = s.bases[:, 1:] @ np.swapaxes(s.bases[:, 1:], -1, -2)
            resid = img - proj @ img
            rel = np.linalg.norm(resid, axis=-2) / np.maximum(
                np.linalg.norm(img, axis=-2), 1e-300)
            inv_s = max(inv_s, float(np.where(both_s[..., None], rel, 0.0).max()))
        both_u = both & u.mask[:, :-1] & u.mask[:, 1:]
        if u.dim and both_u.any():
            img = orthonormalize_batch(mats[:, :-1] @ u.bases[:, :-1])
            dg = grassmann_batch(img, u.bases[:, 1:])
            inv_u = max(inv_u, float(np.where(both_u, dg, 0.0).max()))
    items["i_invariance"] = {
        "stable_defect": inv_s, "unstable_defect": inv_u,
        "tol": invariance_tol,
        "passed": bool(max(inv_s, inv_u) <= invariance_tol)}

    # (ii) nesting across pieces, same window and one-step transitions;
    # same-window containment only binds along the heteroclinic order
    # (incomparable pieces live on disjoint filtration annuli)
    from .hyperbolic import _transitive_closure
    comparable = _transitive_closure(fam.piece_set.order_edges, fam.q)
    nest = 0.0
    for k in range(fam.q):
        for j in range(k):
            sk, sj = fam.stable[k], fam.stable[j]
            uk, uj = fam.unstable[k], fam.unstable[j]
            overlap = (fam.cover_masks[k] & fam.cover_masks[j]
                       & sk.mask & sj.mask)
            if sk.dim and overlap.any() and (k, j) in comparable:
                d = containment_defect_batch(sj.bases, sk.bases)
                nest = max(nest, float(np.where(overlap, d, 0.0).max()))
            trans = (fam.cover_masks[k][:, :-1] & fam.cover_masks[j][:, 1:]
                     & sk.mask[:, :-1] & sj.mask[:, 1:])
            if sk.dim and trans.any():
                img = mats[:, :-1] @ sk.bases[:, :-1]
                norms = np.maximum(np.linalg.norm(img, axis=-2), 1e-300)
                proj = sj.bases[:, 1:] @ np.swapaxes(sj.bases[:, 1:], -1, -2)
                rel = np.linalg.norm(img - proj @ img, axis=-2) / norms
                nest = max(nest, float(np.where(trans[..., None], rel, 0.0).max()))
            trans_u = (fam.cover_masks[k][:, :-1] & fam.cover_masks[j][:, 1:]
                       & uk.mask[:, :-1] & uj.mask[:, 1:])
            if uk.dim and uj.dim and trans_u.any():
                img = orthonormalize_batch(mats[:, :-1] @ uk.bases[:, :-1])
                d = containment_defect_batch(img, uj.bases[:, 1:])
                nest = max(nest, float(np.where(trans_u, d, 0.0).max()))
    items["ii_nesting"] = {"defect": nest, "tol": nesting_tol,
                           "passed": bool(nest <= nesting_tol)}

    # (iii) direct sum with a uniform angle bound
    dims_ok = all(fam.stable[i].dim + fam.unstable[i].dim == fam.Fd.doubled_dim
                  for i in range(fam.q))
    angle_ok = fam.min_angle >= 1.0 / fam.K - 1e-12
    items["iii_direct_sum"] = {
        "dims_ok": bool(dims_ok), "min_angle": fam.min_angle, "K": fam.K,
        "passed": bool(dims_ok and angle_ok)}

    # (iv) continuity: finite sup Lipschitz quotients and a d1 modulus scan
    rng = np.random.default_rng(seed)
    lips = [max(f.lipschitz_est for f in (fam.stable[i], fam.unstable[i])
                if f.dim) for i in range(fam.q) if
            (fam.stable[i].dim or fam.unstable[i].dim)]
    flat = sample.flat_windows()
    from .spaces import d1_weights
    w = d1_weights(sample.k_b, sample.k_f)
    modulus = 0.0
    for i in range(fam.q):
        fld = fam.unstable[i] if fam.unstable[i].dim else fam.stable[i]
        if fld.dim == 0:
            continue
        idx = np.flatnonzero((fam.cover_masks[i] & fld.mask).reshape(-1))
        if len(idx) < 2:
            continue
        a = rng.choice(idx, d1_pairs)
        b = rng.choice(idx, d1_pairs)
        keep = a != b
        d1v = _kernels.rowwise_d1(flat[a[keep]], flat[b[keep]], w,
                                  sample.space.periodic)
        fb = fld.bases.reshape(-1, fld.bases.shape[-2], fld.dim)
        dg = grassmann_batch(fb[a[keep]], fb[b[keep]])
        close = d1v < 0.05
        if close.any():
            modulus = max(modulus, float(dg[close].max()))
    lip_max = float(max(lips)) if lips else 0.0
    items["iv_continuity"] = {
        "lipschitz_sup": lip_max, "d1_modulus_at_0.05": modulus,
        "passed": bool(np.isfinite(lip_max))}

    # (v) expansion floor on the covers
    items["v_expansion"] = {
        "floor": fam.expansion_floor, "K": fam.K,
        "passed": bool(fam.expansion_floor >= 1.0 / fam.K - 1e-12)}

    # (vi) cover order under the shift plus isolation of the pieces
    order_ok = True
    for i in range(fam.q):
        for j in range(i + 1, fam.q):
            bad = fam.cover_masks[i][:, :-1] & fam.cover_masks[j][:, 1:]
            if bad.any():
                order_ok = False
    drift = _cover_isolation(fam, isolation_span)
    items["vi_cover_order"] = {
        "order_ok": bool(order_ok), "isolation_drift": drift,
        "tol": isolation_tol,
        "passed": bool(order_ok and drift <= isolation_tol)}

    # (vii) sharp rates near the pieces
    items["vii_rates_near_pieces"] = {
        "lambda": fam.lam_near, "cap": lam_cap,
        "passed": bool(0.0 <= fam.lam_near <= lam_cap)}

    passed = all(v["passed"] for v in items.values())
    return {"items": items, "passed": passed,
            "constants": {"K": fam.K, "lambda_near": fam.lam_near,
                          "min_angle": fam.min_angle,
                          "projector_norm": fam.proj_norm}}


def _cover_isolation(fam, span):
    """Drift of windows that stay in one cover for |n| <= span.

    Vacuous for a whole-space cover: there the piece is the global
    transitive set, not its finite representative."""
    sample = fam.sample
    span = min(span, sample.S - 1)
    x0 = sample.x0()
    worst = 0.0
    for i in range(fam.q):
        if bool(fam.cover_masks[i].all()):
            continue
        rep = np.atleast_2d(fam.piece_set.pieces[i].points)
        inside = fam.cover_masks[i]
        for j in sample.interior_cols(span):
            col = sample.col_index(j)
            stay = np.ones(sample.n_orbits, dtype=bool)
            for nn in range(-span, span + 1):
                stay &= inside[:, np.clip(col + nn, 0, sample.n_cols - 1)]
            if not stay.any():
                continue
            pts = x0[stay, col]
            dmin = np.stack([
                sample.space.dist(pts, np.broadcast_to(r, pts.shape))
                for r in rep]).min(axis=0)
            worst = max(worst, float(dmin.max()))
    return worst
