"""Graph transforms, plane-field solves and the structural report."""

import numpy as np
import pytest

from invstab.bundles import (blend_planes, build_bundle_family,
                             graph_transform_pullback,
                             graph_transform_pushforward, min_angle_batch,
                             solve_stable_family, stable_nesting_defects,
                             verify_principal)
from invstab.errors import RankCollapse
from invstab.hyperbolic import spectral_decomposition
from invstab.sampling import build_orbit_sample
from invstab.smoothing import smoothed_derivative


def two_block_eigvecs(a, delta):
    """Eigen pair of [[a, d], [d, 0]]: unstable then stable direction."""
    lam_u = (a + np.sqrt(a * a + 4 * delta * delta)) / 2
    lam_s = (a - np.sqrt(a * a + 4 * delta * delta)) / 2
    eu = np.array([1.0, delta / lam_u])
    es = np.array([1.0, delta / lam_s])
    return eu / np.linalg.norm(eu), es / np.linalg.norm(es), lam_u, lam_s


def test_doubling_fixed_fields_match_block_eigvecs(doubling_prep):
    fam = doubling_prep.family
    delta = fam.Fd.delta
    eu, es, lam_u, lam_s = two_block_eigvecs(2.0, delta)
    bu = fam.unstable[0].bases[0, 0, :, 0]
    bs = fam.stable[0].bases[0, 0, :, 0]
    assert abs(abs(bu @ eu) - 1.0) < 1e-10
    assert abs(abs(bs @ es) - 1.0) < 1e-10


def test_pullback_preserves_dimension(doubling_prep):
    fam = doubling_prep.family
    out = graph_transform_pullback(fam.stable[0], fam.Fd)
    assert out.dim == fam.stable[0].dim


def test_pullback_contracts_tilted_plane(cat_map):
    # seed the stable solve from a tilted plane and watch the contraction
    sample = build_orbit_sample(cat_map, n_orbits=4, S=10, k_b=8, k_f=8,
                                seed=5)
    Fd = smoothed_derivative(cat_map, 1e-2)
    ps = spectral_decomposition(cat_map)
    fields, stats = solve_stable_family(ps, Fd, sample)
    # measured contraction factor of the pullback is the spectral-gap ratio
    gap = (3 - np.sqrt(5)) / (3 + np.sqrt(5))
    assert stats[0].contraction_factor <= gap + 0.05


def test_pushforward_fixed_point_near_unstable_eigenplane(cat_map):
    sample = build_orbit_sample(cat_map, n_orbits=4, S=10, k_b=8, k_f=8,
                                seed=5)
    ps = spectral_decomposition(cat_map)
    for delta, tol in ((1e-2, 2e-2), (1e-3, 2e-3)):
        Fd = smoothed_derivative(cat_map, delta)
        fam = build_bundle_family(ps, Fd, sample)
        eu = ps.pieces[0].unstable_dirs[:, 0]
        target = np.concatenate([eu, np.zeros(2)])
        got = fam.unstable[0].bases[0, 0, :, 0]
        # fixed point differs from the tangent eigenplane by O(delta)
        assert np.abs(got - target * np.sign(got @ target)).max() <= tol


def test_pushforward_increases_angle(doubling_prep):
    fam = doubling_prep.family
    seed = fam.unstable[0].copy()
    # tilt the seed toward the stable field and push once
    tilted = blend_planes(seed.bases, fam.stable[0].bases, 0.2)
    seed.bases = tilted
    before = min_angle_batch(tilted, fam.stable[0].bases).min()
    out = graph_transform_pushforward(seed, fam.Fd)
    after = min_angle_batch(out.bases[:, 1:], fam.stable[0].bases[:, 1:]).min()
    assert after > before


def test_stable_dims_by_system(quadratic_prep, product_prep, doubling_prep):
    assert [f.dim for f in doubling_prep.family.stable] == [1]
    assert [f.dim for f in quadratic_prep.family.stable] == [2, 1]
    assert [f.dim for f in quadratic_prep.family.unstable] == [0, 1]
    assert [f.dim for f in product_prep.family.stable] == [6, 5, 5, 4]
    assert [f.dim for f in product_prep.family.unstable] == [0, 1, 1, 2]


def test_equivariance_of_solved_fields(quadratic_prep):
    rep = verify_principal(quadratic_prep.family)
    assert rep["items"]["i_invariance"]["stable_defect"] <= 1e-8
    assert rep["items"]["i_invariance"]["unstable_defect"] <= 1e-8


def test_nesting_defects(product_prep):
    nest = stable_nesting_defects(product_prep.piece_set,
                                  product_prep.family.stable,
                                  product_prep.sample)
    assert nest  # comparable overlapping pairs exist
    assert max(nest.values()) <= 1e-6


def test_direct_sum_and_angles(product_prep):
    fam = product_prep.family
    for i in range(fam.q):
        assert fam.stable[i].dim + fam.unstable[i].dim == fam.Fd.doubled_dim
    assert fam.min_angle >= 1.0 / fam.K - 1e-12


def test_verify_principal_passes(doubling_prep, quadratic_prep, product_prep):
    for prep, lam_bound in ((doubling_prep, 0.51), (quadratic_prep, 0.6),
                            (product_prep, 0.6)):
        rep = verify_principal(prep.family)
        assert rep["passed"], rep
        assert rep["constants"]["lambda_near"] <= lam_bound


def test_verify_principal_doubling_constants(doubling_prep):
    rep = verify_principal(doubling_prep.family)
    assert rep["constants"]["lambda_near"] == pytest.approx(0.5, abs=5e-3)
    assert rep["constants"]["K"] <= 2.0


def test_verify_principal_deterministic(doubling_prep):
    a = verify_principal(doubling_prep.family)
    b = verify_principal(doubling_prep.family)
    assert a == b


def test_delta_uniformity_of_K(doubling, product_squares):
    for system in (doubling, product_squares):
        ps = spectral_decomposition(system)
        sample = build_orbit_sample(system, n_orbits=20, S=20, k_b=12, k_f=12,
                                    seed=7)
        Ks = []
        for delta in (1e-1, 1e-2, 1e-3):
            fam = build_bundle_family(ps, smoothed_derivative(system, delta),
                                      sample)
            Ks.append(fam.K)
        spread = (max(Ks) - min(Ks)) / min(Ks)
        assert spread < 0.10


def test_blend_planes_formula():
    rng = np.random.default_rng(12)
    p = np.linalg.qr(rng.standard_normal((4, 2)))[0]
    q = np.linalg.qr(rng.standard_normal((4, 2)))[0]
    at0 = blend_planes(p[None], q[None], 0.0)[0]
    assert np.linalg.norm(at0 @ at0.T - p @ p.T, 2) < 1e-12
    at1 = blend_planes(p[None], q[None], 1.0)[0]
    assert np.linalg.norm(at1 @ at1.T - q @ q.T, 2) < 1e-10


def test_blend_rank_collapse_fatal():
    p = np.eye(3)[:, :1][None]
    q = np.eye(3)[:, 1:2][None]  # orthogonal line: projection kills p
    with pytest.raises(RankCollapse):
        blend_planes(p, q, 1.0)


def test_decay_envelope_doubling(doubling_prep):
    env = doubling_prep.J.envelope
    assert 0.49 <= env.lam <= 0.56
    assert env.D <= 1.5
    assert env.truncation_depth(1e-10) <= 45


def test_decay_envelope_respects_measured_ratios(quadratic_prep):
    env = quadratic_prep.J.envelope
    n = np.arange(len(env.ratios))
    assert (env.ratios <= env.D * env.lam ** n + 1e-12).all()
