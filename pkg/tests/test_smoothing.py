"""Mollification, the doubled derivative and inverse-limit convolution."""

import numpy as np
import pytest

from invstab import zoo
from invstab.errors import CoverageGap, MonteCarloUnderflow
from invstab.regions import Above, Below, Whole
from invstab.sampling import build_orbit_sample
from invstab.smoothing import (bump, bump_derivative_bound,
                               convolution_lipschitz,
                               convolve_on_inverse_limit, mollify_c1_map,
                               partition_of_unity, smoothed_derivative)


def test_bump_profile_support():
    t = np.linspace(-2, 2, 401)
    vals = bump(t)
    assert (vals >= 0).all()
    assert vals[np.abs(t) >= 1].max() == 0.0
    assert bump(0.0) == pytest.approx(np.exp(-1))


def test_bump_derivative_bound_finite():
    L = bump_derivative_bound()
    # numerical check against a fine grid
    t = np.linspace(-1 + 1e-9, 1 - 1e-9, 20001)
    grad = np.gradient(bump(t), t)
    assert L >= np.abs(grad).max() - 1e-3
    assert L < 1.0


# -- grid mollification --------------------------------------------------------


def test_mollify_linear_exact_in_the_interior():
    grid = np.linspace(0, 1, 1001)
    smooth = mollify_c1_map(grid, 3 * grid - 0.2, 0.05)
    inner = slice(100, 901)
    np.testing.assert_allclose(smooth.values[inner], (3 * grid - 0.2)[inner],
                               atol=1e-12)


def test_mollify_kink():
    grid = np.linspace(0, 1, 2001)
    smooth = mollify_c1_map(grid, np.abs(grid - 0.5), 0.1)
    assert smooth.c0_distance <= 0.05
    # the smoothed map is callable through interpolation
    assert smooth(np.array([0.5]))[0] > 0.0


def test_mollify_rejects_subgrid_delta():
    grid = np.linspace(0, 1, 11)
    with pytest.raises(ValueError):
        mollify_c1_map(grid, grid, 0.01)


def test_mollify_2d():
    ax = np.linspace(0, 1, 101)
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    vals = np.abs(xx - 0.5) + 0.3 * yy
    smooth = mollify_c1_map((ax, ax), vals, 0.05)
    assert smooth.c0_distance <= 0.05


def test_analytic_zoo_bypass(doubling):
    # analytic members expose their own derivative unchanged
    Fd = smoothed_derivative(doubling, 0.05)
    assert Fd.tangent_matrix(np.array([0.3]))[0, 0] == 2.0


# -- the doubled derivative ----------------------------------------------------


def test_smoothed_derivative_doubling_block(doubling):
    Fd = smoothed_derivative(doubling, 0.1)
    out = Fd.apply(np.array([0.2]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(out, [2.0, 0.1])


def test_smoothed_derivative_critical_point(quadratic):
    Fd = smoothed_derivative(quadratic, 0.1)
    out = Fd.apply(np.array([0.0]), np.array([1.0, 0.0]))
    np.testing.assert_allclose(out, [0.0, 0.1])
    assert np.linalg.norm(out) > 0.0


def test_smoothed_derivative_delta_zero(quadratic):
    Fd = smoothed_derivative(quadratic, 0.0)
    out = Fd.apply(np.array([0.3]), np.array([1.0, 1.0]))
    np.testing.assert_allclose(out, [0.6, 0.0])
    with pytest.raises(ValueError):
        Fd.apply_inverse(np.array([0.3]), out)


# round-off in the closed-form inverse scales like eps*|f'|/delta, so the
# 1e-10 relative bound holds down to delta ~ 1e-5 in double precision
@pytest.mark.parametrize("delta", [1e-1, 1e-2, 1e-3, 1e-5])
def test_inverse_roundtrip(quadratic, delta):
    Fd = smoothed_derivative(quadratic, delta)
    rng = np.random.default_rng(3)
    x = quadratic.space.sample_points(20, rng)
    v = rng.standard_normal((20, 2))
    rt = Fd.apply_inverse(x, Fd.apply(x, v))
    assert np.abs(rt - v).max() / np.abs(v).max() <= 1e-10


def test_perturbation_bound_sqrt2_delta(doubling):
    # |F - (A (+) 0)| <= sqrt(2) delta in operator norm
    delta = 0.07
    Fd = smoothed_derivative(doubling, delta)
    x = np.array([0.4])
    M = Fd.matrix(x)
    M0 = np.zeros_like(M)
    M0[:1, :1] = doubling.df(x)
    diff = np.linalg.norm(M - M0, 2)
    assert diff <= np.sqrt(2) * delta + 1e-12


def test_inverse_norm_blowup_scale(quadratic):
    # |F^-1| grows like |f'|/delta^2 and stays below (|f'| + 2 delta)/delta^2
    rng = np.random.default_rng(4)
    pts = quadratic.space.sample_points(200, rng)
    c1 = float(np.abs(quadratic.df(pts)).max())
    for delta in (1e-1, 1e-2):
        Fd = smoothed_derivative(quadratic, delta)
        measured = Fd.inverse_norm(pts)
        assert measured <= (c1 + 2 * delta) / delta ** 2 + 1e-9
        assert measured >= 1.0 / delta  # the blow-up is real


# -- convolution on the inverse limit -------------------------------------------


@pytest.fixture(scope="module")
def circle_windows(doubling):
    sample = build_orbit_sample(doubling, n_orbits=30, S=4, k_b=10, k_f=10,
                                seed=2)
    return sample, sample.flat_windows()


def test_convolution_constant_factors_out(doubling, circle_windows):
    sample, flat = circle_windows
    res = convolve_on_inverse_limit(lambda Y: np.full(Y.shape[0], 0.7), flat,
                                    sample.k_b, doubling.space, 0.08,
                                    n_samples=20_000, seed=5)
    np.testing.assert_allclose(res.ratio, 0.7, atol=1e-12)


def test_convolution_c0_error_bound(doubling, circle_windows):
    sample, flat = circle_windows
    r = 0.05

    def phi(Y):
        K = (Y.shape[1] - 1) // 2
        return np.minimum(Y[:, K, 0], 1.0 - Y[:, K, 0])

    res = convolve_on_inverse_limit(phi, flat, sample.k_b, doubling.space, r,
                                    n_samples=100_000, seed=6)
    exact = np.minimum(flat[:, sample.k_b, 0], 1.0 - flat[:, sample.k_b, 0])
    err = np.abs(res.ratio[:, 0] - exact)
    assert (err <= r + 3.0 * res.sigma[:, 0]).all()


def test_convolution_support_inflation(doubling, circle_windows):
    sample, flat = circle_windows
    r = 0.05

    def indicator(Y):
        K = (Y.shape[1] - 1) // 2
        return (Y[:, K, 0] <= 0.25).astype(float)

    res = convolve_on_inverse_limit(indicator, flat, sample.k_b,
                                    doubling.space, r, n_samples=50_000,
                                    seed=7, mc_window=0)
    x0 = flat[:, sample.k_b, 0]
    dist = np.where(x0 <= 0.25, 0.0, np.minimum(x0 - 0.25, 1.0 - x0))
    assert not ((res.values[:, 0] > 0) & (dist >= r)).any()


def test_convolution_lipschitz_bound(doubling, circle_windows):
    sample, flat = circle_windows

    def phi(Y):
        K = (Y.shape[1] - 1) // 2
        return np.minimum(Y[:, K, 0], 1.0 - Y[:, K, 0])

    res = convolve_on_inverse_limit(phi, flat, sample.k_b, doubling.space,
                                    0.05, n_samples=50_000, seed=8)
    ratios, _ = convolution_lipschitz(res, flat, sample.k_b, doubling.space)
    assert ratios.max() <= res.lipschitz_bound


def test_convolution_underflow_guard(doubling, circle_windows):
    sample, flat = circle_windows
    with pytest.raises(MonteCarloUnderflow):
        convolve_on_inverse_limit(lambda Y: np.ones(Y.shape[0]), flat,
                                  sample.k_b, doubling.space, 0.01,
                                  n_samples=200, seed=9, mc_window=6)


def test_deterministic_given_seed(doubling, circle_windows):
    sample, flat = circle_windows

    def phi(Y):
        return Y[:, 0, 0]

    a = convolve_on_inverse_limit(phi, flat, sample.k_b, doubling.space, 0.08,
                                  n_samples=5_000, seed=10)
    b = convolve_on_inverse_limit(phi, flat, sample.k_b, doubling.space, 0.08,
                                  n_samples=5_000, seed=10)
    np.testing.assert_array_equal(a.ratio, b.ratio)


# -- partitions of unity --------------------------------------------------------


def test_partition_single_cover(doubling, circle_windows):
    sample, flat = circle_windows
    part = partition_of_unity([Whole()], np.inf, flat, sample.k_b,
                              doubling.space)
    np.testing.assert_array_equal(part.gammas, 1.0)


def test_partition_two_arcs(quadratic):
    sample = build_orbit_sample(quadratic, n_orbits=24, S=6, k_b=10, k_f=10,
                                seed=3)
    flat = sample.flat_windows()
    covers = [Below(0, 0.7), Above(0, 0.52)]
    part = partition_of_unity(covers, 0.18, flat, sample.k_b, quadratic.space,
                              n_samples=50_000, seed=11)
    assert part.sum_defect <= 1e-9
    assert (part.gammas >= 0).all() and (part.gammas <= 1 + 1e-12).all()
    x0 = flat[:, sample.k_b, 0]
    assert (part.gammas[0][x0 > 0.7] == 0).all()
    assert (part.gammas[1][x0 < 0.52] == 0).all()
    assert np.isfinite(part.lipschitz_estimates).all()


def test_partition_product_cover(product_prep):
    part = product_prep.partition
    assert part.q == 4
    assert part.sum_defect <= 1e-9
    assert part.min_normalizer > 1e-9


def test_partition_coverage_gap(quadratic):
    sample = build_orbit_sample(quadratic, n_orbits=8, S=4, k_b=8, k_f=8,
                                seed=3)
    flat = sample.flat_windows()
    with pytest.raises(CoverageGap):
        partition_of_unity([Below(0, 0.2), Above(0, 0.9)], 0.1, flat,
                           sample.k_b, quadratic.space, n_samples=5_000)
