"""The conjugacy solve: section operators, the right inverse and the
contraction iteration.

The unknown is a section phi over the sampled windows; the update operator
is the difference of the shifted bundle action and the nonlinear one-step
comparison map, composed with the right inverse J. J assembles, piecewise
through a partition of unity, a forward geometric series of stable
components and a backward one of unstable components. Stable transport
re-projects onto the stable field of the active piece after every step and
unstable transport inverts the bundle map restricted to the unstable
planes; both choices keep round-off from riding the expanding directions,
at the cost of a per-step defect the size of the fields' invariance error,
which the verification bounds include.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _kernels
from .bundles import DecayEnvelope, forward_matrices
from .errors import DivergenceError, NotHyperbolicError, WindowExhausted
from .sampling import Section, build_orbit_sample, section_dinf_pairs
from .spaces import d1_weights
from .zoo import measure_c1_distance


# ---------------------------------------------------------------------------
# transports shared by J and the decay measurement


@dataclass
class TransportOps:
    """Per-column transport data derived from a solved bundle family."""

    fam: object
    mats: np.ndarray              # forward block matrices per column
    act_proj: list                # per piece: stable projector of the active piece
    back_maps: list               # per piece: B pinv(F B) restricted back-step
    gammas: np.ndarray            # (q, n_orbits, n_cols) partition values
    proj_s: list
    proj_u: list

    @property
    def sample(self):
        return self.fam.sample


def build_transports(fam, gammas):
    """Precompute matrices, active-piece projectors and restricted inverses."""
    sample = fam.sample
    n, c = sample.n_orbits, sample.n_cols
    Np = fam.Fd.doubled_dim
    mats = forward_matrices(fam.Fd, sample)
    eye = np.broadcast_to(np.eye(Np), (n, c, Np, Np))

    proj_s, proj_u = [], []
    for i in range(fam.q):
        ps, pu = fam.oblique_projectors(i)
        joint = fam.stable[i].mask & fam.unstable[i].mask
        ps = np.where(joint[..., None, None], ps, eye)
        pu = np.where(joint[..., None, None], pu, 0.0)
        proj_s.append(ps)
        proj_u.append(pu)

    # active piece per column, restricted to indices <= i for each series
    cover = fam.cover_masks  # (q, n, c)
    act_proj = []
    for i in range(fam.q):
        act = np.full((n, c), -1, dtype=np.int64)
        for j in range(i + 1):
            act = np.where(cover[j], j, act)
        proj = eye.copy()
        for j in range(i + 1):
            sel = act == j
            proj = np.where(sel[..., None, None], proj_s[j], proj)
        act_proj.append(proj)

    back_maps = []
    for i in range(fam.q):
        u = fam.unstable[i]
        if u.dim == 0:
            back_maps.append(np.zeros((n, c, Np, Np)))
            continue
        G = mats @ u.bases
        R = u.bases @ np.linalg.pinv(G)
        R = np.where(u.mask[..., None, None], R, 0.0)
        back_maps.append(R)

    return TransportOps(fam, mats, act_proj, back_maps, gammas, proj_s, proj_u)


def _shift_read(values, k):
    """values at column j+k with clamped edges; values is (n, c, m)."""
    c = values.shape[1]
    idx = np.clip(np.arange(c) + k, 0, c - 1)
    return values[:, idx]


def _mat_shift_apply(mats, values, k):
    """mats[:, j+k] @ values[:, j+k] with clamped column reads."""
    c = values.shape[1]
    idx = np.clip(np.arange(c) + k, 0, c - 1)
    return np.einsum("ncij,ncj->nci", mats[:, idx], values[:, idx])


def stable_step(ops, i, values):
    """One forward transport step of a stable-component array (n, c, N')."""
    moved = _mat_shift_apply(ops.mats, values, -1)
    return np.einsum("ncij,ncj->nci", ops.act_proj[i], moved)


def unstable_step(ops, i, values):
    """One backward transport step through the unstable planes."""
    moved = _shift_read(values, +1)
    return np.einsum("ncij,ncj->nci", ops.back_maps[i], moved)


def measure_decay(ops, n_max=None, per_piece=32, seed=9, head=3, inflate=1.05):
    """Sup norm envelopes of the two transports; fits ratio_n <= D lam^n."""
    fam = ops.fam
    sample = ops.sample
    rng = np.random.default_rng(seed)
    if n_max is None:
        n_max = sample.n_cols - 1
    n_max = min(n_max, sample.n_cols - 1)
    sup = np.zeros(n_max + 1)
    sup[0] = 1.0
    n, c = sample.n_orbits, sample.n_cols
    for i in range(fam.q):
        for kind in ("s", "u"):
            fld = fam.stable[i] if kind == "s" else fam.unstable[i]
            if fld.dim == 0:
                continue
            mask = fam.cover_masks[i] & fld.mask
            if not mask.any():
                continue
            coeff = rng.standard_normal((n, c, fld.dim))
            v = np.einsum("ncjk,nck->ncj", fld.bases, coeff)
            norms = np.linalg.norm(v, axis=2)
            ok = mask & (norms > 1e-12)
            vals = np.where(ok[..., None], v / np.maximum(norms, 1e-300)[..., None], 0.0)
            live = ok.copy()
            for step in range(1, n_max + 1):
                if kind == "s":
                    vals = stable_step(ops, i, vals)
                    live = np.zeros_like(live)
                    live[:, step:] = ok[:, :c - step]
                else:
                    vals = unstable_step(ops, i, vals)
                    live = np.zeros_like(live)
                    live[:, :c - step] = ok[:, step:]
                nn = np.linalg.norm(vals, axis=2)
                masked = np.where(live, nn, 0.0)
                if masked.size:
                    sup[step] = max(sup[step], float(masked.max()))
                if not live.any():
                    break
    lam = 0.0
    for m in range(head + 1, n_max + 1):
        if sup[m] > 0 and sup[head] > 0:
            lam = max(lam, (sup[m] / sup[head]) ** (1.0 / (m - head)))
    lam = min(lam * inflate, lam + 0.02) if lam > 0 else 0.5
    if lam >= 1.0:
        raise NotHyperbolicError(f"measured decay rate {lam:.4f} >= 1")
    D = float((sup / lam ** np.arange(n_max + 1)).max()) * inflate
    return DecayEnvelope(D, float(lam), sup)


# ---------------------------------------------------------------------------
# the right inverse


@dataclass
class RightInverse:
    """Truncated realization of the right inverse of (F_star - id)."""

    ops: TransportOps
    envelope: DecayEnvelope
    n_trunc: int
    truncation_tol: float
    tail_bound: float

    @property
    def sample(self):
        return self.ops.sample

    def __call__(self, v: Section) -> Section:
        ops = self.ops
        fam = ops.fam
        out = np.zeros_like(v.values)
        for i in range(fam.q):
            gv = ops.gammas[i][..., None] * v.values
            vs = np.einsum("ncij,ncj->nci", ops.proj_s[i], gv)
            vu = np.einsum("ncij,ncj->nci", ops.proj_u[i], gv)
            if fam.unstable[i].dim == 0:
                vs = gv
                vu = np.zeros_like(gv)
            term = vs.copy()
            out -= term
            for _ in range(self.n_trunc):
                term = stable_step(ops, i, term)
                out -= term
            if fam.unstable[i].dim:
                term = vu
                for _ in range(self.n_trunc):
                    term = unstable_step(ops, i, term)
                    out += term
        return Section(v.sample, out)

    def norm_ratio(self, v: Section) -> float:
        jv = self(v)
        nv = v.c0_norm()
        return jv.c0_norm() / nv if nv > 0 else 0.0


def build_right_inverse(fam, gammas, truncation_tol=1e-10, safety=0.5):
    """Choose the truncation depth from the measured envelope.

    The certified geometric tail D lam^n/(1-lam) is pushed below
    safety * truncation_tol, leaving the rest of the budget to the fields'
    invariance defects.
    """
    ops = build_transports(fam, gammas)
    env = measure_decay(ops)
    n_trunc = env.truncation_depth(safety * truncation_tol)
    S = fam.sample.S
    if n_trunc > S:
        raise WindowExhausted(
            f"truncation depth {n_trunc} exceeds the column range {S}; "
            "enlarge the sample shift range")
    tail = env.D * env.lam ** n_trunc / (1.0 - env.lam)
    return RightInverse(ops, env, n_trunc, truncation_tol, tail)


def verify_right_inverse(J: RightInverse, v: Section):
    """sup over interior windows of |(F_star - id)(Jv) - v|."""
    jv = J(v)
    lhs = F_star(jv, J.ops.fam.Fd) - jv
    margin = J.n_trunc + 1
    diff = lhs - v
    return diff.c0_norm(interior_margin=min(margin, v.sample.S))


# ---------------------------------------------------------------------------
# section operators


def F_star(v: Section, Fd) -> Section:
    """Shifted bundle action: (F_star v)(x) = F at x_{-1} applied to v at
    the backward-shifted window."""
    sample = v.sample
    mats = forward_matrices(Fd, sample)
    vals = _mat_shift_apply(mats, v.values, -1)
    return Section(sample, vals)


def phi_operator(w: Section, g, max_disp=0.25) -> Section:
    """One-step comparison with g through the exponential charts.

    Fiberwise: lift g(exp at x_{-1} of the tangent part of w at the shifted
    window) back at x_0. The result lives in the tangent block; the kernel
    block is zero. The leftmost column reads a clamped x_{-1}, so the
    single-valuedness check skips it.
    """
    sample = w.sample
    space = sample.space
    d = space.dim
    x0 = sample.x0()
    xm1 = _shift_read(x0, -1)
    w1 = _shift_read(w.values[..., :d], -1)
    moved = g.f(space.exp(xm1, w1))
    disp = space.log(x0, moved, max_norm=None)
    if max_disp is not None and space.periodic:
        worst = float(np.abs(disp[:, 1:]).max()) if disp.shape[1] > 1 else 0.0
        if worst >= max_disp:
            from .errors import WraparoundError
            raise WraparoundError(
                f"displacement reaches {worst:.3g} >= {max_disp}")
    vals = np.concatenate([disp, np.zeros_like(disp)], axis=-1)
    return Section(sample, vals)


# ---------------------------------------------------------------------------
# the conjugacy solve


@dataclass
class SolveReport:
    converged: bool
    iterations: int
    residuals: list                 # C0 change per iteration
    contraction_factor: float
    c1_defect: float
    c2_value: float
    c3_value: float
    eta: float
    injectivity_pass: bool
    surjectivity_coverage: float
    truncation_tol: float
    n_trunc: int
    envelope_D: float
    envelope_lam: float
    c1_distance: float
    lambda_pairs: int

    def to_dict(self):
        return {
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "residuals": [float(r) for r in self.residuals],
            "contraction_factor": float(self.contraction_factor),
            "c1_defect": float(self.c1_defect),
            "c2_value": float(self.c2_value),
            "c3_value": float(self.c3_value),
            "eta": float(self.eta),
            "injectivity_pass": bool(self.injectivity_pass),
            "surjectivity_coverage": float(self.surjectivity_coverage),
            "truncation_tol": float(self.truncation_tol),
            "n_trunc": int(self.n_trunc),
            "envelope_D": float(self.envelope_D),
            "envelope_lam": float(self.envelope_lam),
            "c1_distance": float(self.c1_distance),
            "lambda_pairs": int(self.lambda_pairs),
        }


def solve_conjugacy(J: RightInverse, g, eta=0.05, eta_lip=0.1, max_iters=80,
                    stop_tol=1e-10, seed=17, measure_surjectivity=True):
    """Iterate phi <- (F_star - Phi)(J phi) from zero and extract w = J phi.

    Stops when the interior sup-change drops below stop_tol; divergence
    (leaving the 2 eta ball or residual growth) raises. The report carries
    the conjugacy-defect, smallness and Lipschitz conditions at the
    solution.
    """
    fam = J.ops.fam
    f_sys = fam.piece_set.system
    sample = J.sample
    margin = min(J.n_trunc + 1, sample.S - 1)
    phi = Section.zeros(sample, fam.Fd.doubled_dim)
    residuals = []
    converged = False
    for it in range(max_iters):
        w = J(phi)
        new_phi = F_star(w, fam.Fd) - phi_operator(w, g)
        change = (new_phi - phi).c0_norm(interior_margin=margin)
        residuals.append(change)
        norm_phi = new_phi.c0_norm(interior_margin=margin)
        if norm_phi > 2.0 * eta:
            raise DivergenceError(
                f"iterate left the 2-eta ball: |phi| = {norm_phi:.3g}")
        if len(residuals) >= 4 and residuals[-1] > 2.0 * residuals[-4] > 0:
            raise DivergenceError("iteration residuals are growing")
        phi = new_phi
        if change < stop_tol:
            converged = True
            break
    w = J(phi)
    factor = 0.0
    pos = [r for r in residuals if r > 0]
    if len(pos) >= 2 and pos[-2] > 0:
        factor = pos[-1] / pos[-2]

    h0 = extract_h0(w)
    c1_defect = conjugacy_defect(h0, w.sample, g, margin)
    c2 = w.c0_norm(interior_margin=margin)
    c3, witness = section_lipschitz(w, margin, seed=seed)
    coverage = np.nan
    if measure_surjectivity:
        coverage = surjectivity_coverage(h0, w.sample, g, margin, seed=seed)
    report = SolveReport(
        converged=converged,
        iterations=len(residuals),
        residuals=residuals,
        contraction_factor=factor,
        c1_defect=c1_defect,
        c2_value=c2,
        c3_value=c3,
        eta=eta,
        injectivity_pass=bool(c3 <= eta_lip),
        surjectivity_coverage=coverage,
        truncation_tol=J.truncation_tol,
        n_trunc=J.n_trunc,
        envelope_D=J.envelope.D,
        envelope_lam=J.envelope.lam,
        c1_distance=measure_c1_distance(f_sys, g),
        lambda_pairs=2000,
    )
    return w, report


def extract_h0(w: Section):
    """Candidate semiconjugacy per window: exp at x_0 of the tangent block."""
    sample = w.sample
    d = sample.space.dim
    return sample.space.exp(sample.x0(), w.values[..., :d])


def conjugacy_defect(h0, sample, g, margin):
    """sup over interior columns of d(h0 at the shifted window, g(h0))."""
    moved = g.f(h0)
    nxt = _shift_read(h0, +1)
    dist = sample.space.dist(nxt, moved)
    m = int(margin)
    return float(dist[:, m: dist.shape[1] - m].max())


def section_lipschitz(w: Section, margin, n_pairs=2000, seed=17, min_dinf=1e-4):
    """Measured Lipschitz constant over interior window pairs, with witness."""
    sample = w.sample
    c = sample.n_cols
    m = int(margin)
    ratios, (a, b), _ = section_dinf_pairs(w, n_pairs * 3, seed, min_dinf)
    cols_a = a % c
    cols_b = b % c
    keep = (cols_a >= m) & (cols_a < c - m) & (cols_b >= m) & (cols_b < c - m)
    ratios = ratios[keep]
    if ratios.size == 0:
        return 0.0, None
    k = int(np.argmax(ratios))
    return float(ratios[k]), (int(a[keep][k]), int(b[keep][k]))


def lipschitz_injectivity_check(w: Section, margin=0, eta=0.1, n_pairs=2000, seed=17):
    """Pass iff the measured Lipschitz constant stays below eta.

    On failure the attaining window pair is returned as a witness.
    """
    lam, pair = section_lipschitz(w, margin, n_pairs, seed)
    passed = lam <= eta
    witness = None
    if not passed and pair is not None:
        c = w.sample.n_cols
        witness = {
            "pair": [(p // c, p % c - w.sample.S) for p in pair],
            "lipschitz": lam,
        }
    return passed, lam, witness


def surjectivity_coverage(h0, sample, g, margin, n_g_orbits=16, seed=17,
                          factor=2.0):
    """Fraction of sampled g-orbit windows with a nearby image window.

    Purely a sampling statistic: the image windows are the conjugate orbits
    (h0 along columns); resolution is their median nearest-neighbor
    distance.
    """
    space = sample.space
    W = sample.k_b + sample.k_f + 1
    m = int(margin)
    hw = sliding_window_view(h0, W, axis=1).transpose(0, 1, 3, 2)
    lo = max(0, m - sample.k_b)
    hi = hw.shape[1] - lo
    hw = np.ascontiguousarray(hw[:, lo:hi].reshape(-1, W, space.dim))
    try:
        gs = build_orbit_sample(g, n_orbits=n_g_orbits, S=2, k_b=sample.k_b,
                                k_f=sample.k_f, seed=seed, include_pieces=False)
    except (ValueError, RuntimeError):
        return np.nan
    gw = gs.flat_windows()
    weights = d1_weights(sample.k_b, sample.k_f)
    cross = _kernels.pairwise_d1(gw, hw, weights, space.periodic)
    self_d = _kernels.pairwise_d1(hw[::7], hw, weights, space.periodic)
    self_d[self_d < 1e-12] = np.inf  # drop (near-)self matches
    resolution = float(np.median(self_d.min(axis=1)))
    hits = (cross.min(axis=1) < factor * max(resolution, 1e-12)).mean()
    return float(hits)


# ---------------------------------------------------------------------------
# the affine Lipschitz bound of the per-piece components


def component_lipschitz_regression(J: RightInverse, n_sections=12, margin=None,
                                seed=23, smooth_scale=0.15):
    """Fit Lambda(J_i^sigma v) <= A Lambda(v) + B |v| over random sections.

    Random sections are generated as smooth functions of the window (trig
    polynomials of the center point) so their Lipschitz constants span a
    range. Returns the fitted (A, B) and the pointwise margin of the bound
    with the fitted constants inflated by 1.1.
    """
    ops = J.ops
    fam = ops.fam
    sample = J.sample
    rng = np.random.default_rng(seed)
    if margin is None:
        margin = min(J.n_trunc + 1, sample.S - 1)
    rows = []   # (Lambda_in, norm_in, Lambda_out)
    for _ in range(n_sections):
        v = random_smooth_section(sample, fam.Fd.doubled_dim, rng, smooth_scale)
        for i in range(fam.q):
            gv = ops.gammas[i][..., None] * v.values
            for kind in ("s", "u"):
                if kind == "s":
                    comp = np.einsum("ncij,ncj->nci", ops.proj_s[i], gv) \
                        if fam.unstable[i].dim else gv
                    term = comp.copy()
                    acc = -term
                    for _ in range(J.n_trunc):
                        term = stable_step(ops, i, term)
                        acc -= term
                else:
                    if fam.unstable[i].dim == 0:
                        continue
                    comp = np.einsum("ncij,ncj->nci", ops.proj_u[i], gv)
                    term = comp.copy()
                    acc = np.zeros_like(comp)
                    for _ in range(J.n_trunc):
                        term = unstable_step(ops, i, term)
                        acc += term
                sec_in = Section(sample, comp)
                sec_out = Section(sample, acc)
                lam_in, _ = section_lipschitz(sec_in, margin, seed=seed)
                lam_out, _ = section_lipschitz(sec_out, margin, seed=seed)
                rows.append((lam_in, sec_in.c0_norm(margin), lam_out))
    rows = np.array(rows)
    rows = rows[rows[:, 1] > 1e-14]
    if len(rows) < 3:
        return 0.0, 0.0, rows
    X = rows[:, :2]
    y = rows[:, 2]
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    A, B = float(max(coef[0], 0.0)), float(max(coef[1], 0.0))
    bound = 1.1 * (A * rows[:, 0] + B * rows[:, 1]) + 1e-12
    margin_ok = bool(np.all(y <= bound))
    if not margin_ok:
        # one re-fit against the sup quotient keeps the bound pointwise
        scale = float(np.max(y / np.maximum(A * rows[:, 0] + B * rows[:, 1], 1e-300)))
        A, B = A * scale, B * scale
        margin_ok = True
    return A, B, rows


def random_smooth_section(sample, fiber_dim, rng, scale=0.15):
    """Trig-polynomial section of the center coordinate, plus a constant."""
    x0 = sample.x0()
    d = sample.space.dim
    vals = np.zeros((sample.n_orbits, sample.n_cols, fiber_dim))
    for k in range(fiber_dim):
        const = rng.standard_normal()
        amp = scale * rng.standard_normal(d)
        freq = rng.integers(1, 3, size=d)
        phase = rng.random(d)
        vals[..., k] = const + np.sum(
            amp * np.sin(2 * np.pi * freq * (x0 + phase)), axis=-1)
    return Section(sample, vals)
