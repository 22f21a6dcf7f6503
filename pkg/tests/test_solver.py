"""Section operators, the right inverse and the conjugacy solve."""

import numpy as np
import pytest
import scipy.optimize

from invstab import zoo
from invstab.sampling import Section, build_orbit_sample, lambda_estimate
from invstab.smoothing import smoothed_derivative
from invstab.solver import (F_star, build_right_inverse, extract_h0,
                            component_lipschitz_regression, phi_operator,
                            lipschitz_injectivity_check, solve_conjugacy,
                            verify_right_inverse)


# -- phi operator -------------------------------------------------------------


def test_phi_of_zero_with_g_equals_f(doubling_prep, doubling):
    w = Section.zeros(doubling_prep.sample, 2)
    out = phi_operator(w, doubling)
    assert out.c0_norm(interior_margin=1) <= 1e-14


def test_phi_of_zero_measures_c0_distance(doubling_prep, doubling):
    g = zoo.perturb_translation(doubling)(0.01)
    w = Section.zeros(doubling_prep.sample, 2)
    out = phi_operator(w, g)
    vals = out.values[:, 1:]
    np.testing.assert_allclose(vals[..., 0], 0.01, atol=1e-14)
    np.testing.assert_allclose(vals[..., 1], 0.0, atol=1e-15)


def test_phi_constant_section_affine_fixed_point(doubling_prep, doubling):
    # for g = 2x + c: Phi(const a) = 2a + c, whose fixed point is -c
    c = 0.01
    g = zoo.perturb_translation(doubling)(c)
    for a in (0.0, -0.02, 0.015):
        w = Section.constant(doubling_prep.sample, np.array([a, 0.0]))
        out = phi_operator(w, g)
        np.testing.assert_allclose(out.values[:, 1:, 0], 2 * a + c, atol=1e-13)
    w = Section.constant(doubling_prep.sample, np.array([-c, 0.0]))
    out = phi_operator(w, g)
    np.testing.assert_allclose(out.values[:, 1:, 0], -c, atol=1e-13)


# -- F_star --------------------------------------------------------------------


def test_F_star_zero(doubling_prep):
    v = Section.zeros(doubling_prep.sample, 2)
    assert F_star(v, doubling_prep.Fd).c0_norm() == 0.0


def test_F_star_constant_doubling(doubling):
    sample = build_orbit_sample(doubling, n_orbits=6, S=6, k_b=8, k_f=8,
                                seed=1)
    Fd = smoothed_derivative(doubling, 0.0)
    v = Section.constant(sample, np.array([0.3, 0.0]))
    out = F_star(v, Fd)
    np.testing.assert_allclose(out.values[..., 0], 0.6, atol=1e-15)
    np.testing.assert_allclose(out.values[..., 1], 0.0, atol=1e-15)


def test_F_star_linearity(doubling_prep):
    rng = np.random.default_rng(2)
    shape = (doubling_prep.sample.n_orbits, doubling_prep.sample.n_cols, 2)
    u = Section(doubling_prep.sample, rng.standard_normal(shape))
    v = Section(doubling_prep.sample, rng.standard_normal(shape))
    lhs = F_star(2.0 * u + (-3.0) * v, doubling_prep.Fd)
    rhs = 2.0 * F_star(u, doubling_prep.Fd) + (-3.0) * F_star(v, doubling_prep.Fd)
    assert (lhs - rhs).c0_norm() <= 1e-12


# -- right inverse ---------------------------------------------------------------


def test_right_inverse_zero(doubling_prep):
    v = Section.zeros(doubling_prep.sample, 2)
    assert doubling_prep.J(v).c0_norm() == 0.0


def test_right_inverse_linearity(doubling_prep):
    rng = np.random.default_rng(3)
    shape = (doubling_prep.sample.n_orbits, doubling_prep.sample.n_cols, 2)
    u = Section(doubling_prep.sample, rng.standard_normal(shape))
    v = Section(doubling_prep.sample, rng.standard_normal(shape))
    lhs = doubling_prep.J(1.5 * u + 0.5 * v)
    rhs = 1.5 * doubling_prep.J(u) + 0.5 * doubling_prep.J(v)
    assert (lhs - rhs).c0_norm() <= 1e-10


def test_right_inverse_closed_form_doubling_delta0(doubling):
    # pure tangent constant section at delta=0: J(c, 0) = (c, 0) by the
    # geometric series of the inverse restricted to the unstable line
    sample = build_orbit_sample(doubling, n_orbits=8, S=44, k_b=8, k_f=8,
                                seed=4)
    ps = __import__("invstab.hyperbolic", fromlist=["spectral_decomposition"])\
        .spectral_decomposition(doubling)
    from invstab.bundles import build_bundle_family
    Fd = smoothed_derivative(doubling, 0.0)
    fam = build_bundle_family(ps, Fd, sample)
    J = build_right_inverse(fam, np.ones((1, sample.n_orbits, sample.n_cols)),
                            truncation_tol=1e-10)
    c = 0.37
    v = Section.constant(sample, np.array([c, 0.0]))
    jv = J(v)
    m = J.n_trunc + 1
    np.testing.assert_allclose(jv.values[:, m:-m, 0], c, atol=1e-10)
    np.testing.assert_allclose(jv.values[:, m:-m, 1], 0.0, atol=1e-10)
    assert verify_right_inverse(J, v) <= 1e-10


def test_right_inverse_identity_random_sections(doubling_prep):
    rng = np.random.default_rng(5)
    shape = (doubling_prep.sample.n_orbits, doubling_prep.sample.n_cols, 2)
    worst = 0.0
    for _ in range(20):
        v = Section(doubling_prep.sample, rng.standard_normal(shape))
        worst = max(worst, verify_right_inverse(doubling_prep.J, v))
    assert worst <= doubling_prep.J.truncation_tol + 1e-10


def test_right_inverse_identity_quadratic(quadratic_prep):
    rng = np.random.default_rng(6)
    shape = (quadratic_prep.sample.n_orbits, quadratic_prep.sample.n_cols, 2)
    worst = 0.0
    for _ in range(10):
        v = Section(quadratic_prep.sample, rng.standard_normal(shape))
        worst = max(worst, verify_right_inverse(quadratic_prep.J, v))
    assert worst <= quadratic_prep.J.truncation_tol + 1e-10


def test_right_inverse_norm_bound(quadratic_prep):
    # |Jv| <= 2 C D q / (1 - lam) |v| with the measured constants
    J = quadratic_prep.J
    fam = J.ops.fam
    bound = (2.0 * fam.proj_norm * J.envelope.D * fam.q
             / (1.0 - J.envelope.lam))
    rng = np.random.default_rng(7)
    shape = (quadratic_prep.sample.n_orbits, quadratic_prep.sample.n_cols, 2)
    for _ in range(10):
        v = Section(quadratic_prep.sample, rng.standard_normal(shape))
        assert J.norm_ratio(v) <= bound


# -- the solve --------------------------------------------------------------------


def test_solve_g_equals_f_gives_zero(doubling_prep, doubling):
    w, rep = solve_conjugacy(doubling_prep.J, doubling)
    assert rep.converged
    assert rep.iterations <= 2
    assert w.c0_norm(interior_margin=doubling_prep.J.n_trunc + 1) <= 1e-13
    assert rep.c1_defect <= 1e-13
    assert rep.c2_value <= 1e-13


def test_solve_doubling_translation_closed_form(doubling_prep, doubling):
    c = 0.01
    g = zoo.perturb_translation(doubling)(c)
    w, rep = solve_conjugacy(doubling_prep.J, g)
    assert rep.converged and rep.contraction_factor < 0.9
    m = doubling_prep.J.n_trunc + 1
    np.testing.assert_allclose(w.values[:, m:-m, 0], -c, atol=1e-9)
    assert rep.c1_defect <= 1e-9
    assert rep.c2_value <= rep.eta
    assert rep.injectivity_pass
    # sampling statistic only, but it should find most conjugate orbits
    assert rep.surjectivity_coverage > 0.5
    # h0 is the translation by -c
    h0 = extract_h0(w)
    x0 = doubling_prep.sample.x0()
    diff = np.abs((h0 - (x0 - c)) - np.round(h0 - (x0 - c)))
    assert diff[:, m:-m].max() <= 1e-9


def test_solve_residuals_decay_geometrically(doubling_prep, doubling):
    g = zoo.perturb_translation(doubling)(0.01)
    _, rep = solve_conjugacy(doubling_prep.J, g)
    rs = [r for r in rep.residuals if r > 0]
    for a, b in zip(rs, rs[1:]):
        assert b <= 0.9 * a


def test_solve_quadratic_matches_fixed_point_oracle(quadratic_prep, quadratic):
    eps = 1e-3
    g = zoo.perturb_translation(quadratic)(eps)
    w, rep = solve_conjugacy(quadratic_prep.J, g)
    assert rep.converged and rep.contraction_factor < 0.9
    assert rep.c1_defect <= 1e-8
    sample = quadratic_prep.sample
    col0 = sample.col_index(0)
    for target in (0.0, 1.0):
        oracle = scipy.optimize.brentq(lambda x: x * x + eps - x,
                                       target - 0.2, target + 0.2)
        i = int(np.argmin(np.abs(sample.x0()[:, col0, 0] - target)))
        assert abs(w.values[i, col0, 0] - (oracle - target)) <= 1e-6
    assert rep.c3_value <= 0.1 and rep.injectivity_pass


def test_conjugate_orbit_is_g_orbit(quadratic_prep, quadratic):
    g = zoo.perturb_translation(quadratic)(1e-3)
    w, rep = solve_conjugacy(quadratic_prep.J, g)
    h0 = extract_h0(w)
    m = quadratic_prep.J.n_trunc + 1
    moved = g.f(h0[:, m:-m - 1])
    nxt = h0[:, m + 1: -m]
    assert np.abs(moved - nxt).max() <= 10 * max(rep.residuals[-1], 1e-10)


# -- injectivity criterion ---------------------------------------------------------


def test_injectivity_constant_section_passes(doubling_prep):
    w = Section.constant(doubling_prep.sample, np.array([0.02, 0.0]))
    passed, lam, _ = lipschitz_injectivity_check(w)
    assert passed and lam == 0.0


def test_injectivity_adversarial_jump_fails(quadratic_prep):
    sample = quadratic_prep.sample
    vals = np.zeros((sample.n_orbits, sample.n_cols, 2))
    x0 = sample.x0()[..., 0]
    vals[..., 0] = np.where(x0 > 0.5, 0.5, -0.5)  # jump across d_inf-close pairs
    w = Section(sample, vals)
    passed, lam, witness = lipschitz_injectivity_check(w)
    assert not passed
    assert lam > 0.1
    assert witness is not None and "pair" in witness


def test_lambda_estimate_requires_separation(doubling_prep):
    w = Section.constant(doubling_prep.sample, np.array([1.0, 0.0]))
    lam, _ = lambda_estimate(w, n_pairs=500)
    assert lam == 0.0


# -- the affine Lipschitz bound ------------------------------------------------------


def test_component_split_constant_sections(quadratic_prep):
    # constant sections have Lambda = 0, so the fitted B alone must cover
    J = quadratic_prep.J
    ops = J.ops
    sample = quadratic_prep.sample
    v = Section.constant(sample, np.array([0.5, -0.2]))
    for i in range(ops.fam.q):
        gv = ops.gammas[i][..., None] * v.values
        comp = np.einsum("ncij,ncj->nci", ops.proj_s[i], gv) \
            if ops.fam.unstable[i].dim else gv
        sec = Section(sample, comp)
        lam_in, _ = lambda_estimate(sec, 1000)
        assert np.isfinite(lam_in)


def test_component_lipschitz_regression_fits(quadratic_prep):
    A, B, rows = component_lipschitz_regression(quadratic_prep.J, n_sections=6)
    assert A >= 0 and B >= 0
    assert len(rows) > 0
    bound = 1.1 * (A * rows[:, 0] + B * rows[:, 1]) + 1e-12
    assert (rows[:, 2] <= bound).all()


def test_B_delta_depends_on_delta(quadratic):
    from invstab.pipeline import prepare
    vals = {}
    for delta in (1e-1, 1e-3):
        prep = prepare(quadratic, delta, n_orbits=16, seed=2,
                       truncation_tol=1e-6)
        _, B, _ = component_lipschitz_regression(prep.J, n_sections=4)
        vals[delta] = B
    assert vals[1e-1] != vals[1e-3]  # the constant genuinely moves with delta


def test_solve_fourier_matches_first_order_theory(doubling_prep, doubling):
    # for g = 2x + eps sin(2 pi x), the conjugating section is
    # w = -eps sum_{n>=0} 2^-(n+1) sin(2 pi x_n) + O(eps^2); the deviation
    # must scale quadratically with eps
    sample = doubling_prep.sample
    m = doubling_prep.J.n_trunc + 1
    fam = zoo.perturb_fourier(doubling, k=1)
    x0 = sample.x0()
    c = sample.n_cols

    def first_order(eps):
        out = np.zeros((sample.n_orbits, c))
        for k in range(sample.k_f + sample.S):
            idx = np.clip(np.arange(c) + k, 0, c - 1)
            out += 2.0 ** -(k + 1) * np.sin(2 * np.pi * x0[:, idx, 0])
        return -eps * out

    devs = {}
    for eps in (1e-3, 3e-3):
        w, rep = solve_conjugacy(doubling_prep.J, fam(eps),
                                 measure_surjectivity=False)
        assert rep.converged and rep.injectivity_pass
        devs[eps] = float(np.abs(w.values[:, m:-m, 0]
                                 - first_order(eps)[:, m:-m]).max())
    assert devs[1e-3] <= 10 * 1e-6
    ratio = devs[3e-3] / devs[1e-3]
    assert 6.0 <= ratio <= 13.5  # quadratic in eps (exactly 9 up to O(eps^3))


def test_auto_delta_ladder(doubling):
    from invstab.pipeline import run_conjugacy
    fam = zoo.perturb_fourier(doubling, k=1)
    w, rep, prep = run_conjugacy(doubling, fam(1e-3), delta="auto",
                                 n_orbits=12, seed=2)
    assert rep.converged
    assert prep.Fd.delta == 0.1  # the largest ladder value already contracts


def test_right_inverse_window_exhaustion(cat_map):
    from invstab.bundles import build_bundle_family
    from invstab.errors import WindowExhausted
    from invstab.hyperbolic import spectral_decomposition
    sample = build_orbit_sample(cat_map, n_orbits=6, S=6, k_b=8, k_f=8,
                                seed=3)
    ps = spectral_decomposition(cat_map)
    fam = build_bundle_family(ps, smoothed_derivative(cat_map, 1e-2), sample)
    with pytest.raises(WindowExhausted):
        build_right_inverse(fam, np.ones((1, 6, sample.n_cols)), 1e-12)
