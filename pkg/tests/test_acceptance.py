"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its measured value and elapsed time.

Run with `pytest tests/test_acceptance.py -v -s` to see every line.
"""

import time

import numpy as np
import pytest
import scipy.optimize

from invstab import _kernels, zoo
from invstab.bundles import build_bundle_family
from invstab.hyperbolic import cone_iterate_unstable, spectral_decomposition
from invstab.pipeline import prepare
from invstab.sampling import Section, build_orbit_sample
from invstab.smoothing import (convolution_lipschitz,
                               convolve_on_inverse_limit, smoothed_derivative)
from invstab.solver import (lipschitz_injectivity_check, solve_conjugacy,
                            verify_right_inverse)
from invstab.spaces import Subspace, d1_weights, grassmann_distance

ZOO_NAMES = ["doubling", "quadratic:c=0", "torus:2,1,1,1", "product_squares",
             "delay:m=1,n=2,c=0"]

_accepted_solves = {}


class Timer:
    def __enter__(self):
        self.t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.t0


def report(num, ok, detail, elapsed, budget):
    state = "PASS" if ok and elapsed < budget else "FAIL"
    print(f"criterion {num:2d}: {state}  {detail}  [{elapsed:.2f}s / "
          f"budget {budget:g}s]")
    assert ok, detail
    assert elapsed < budget, f"criterion {num} overran: {elapsed:.1f}s"


def test_criterion_01_metric_inequality():
    with Timer() as t:
        worst = -np.inf
        for name in ZOO_NAMES:
            system = zoo.parse_system(name)
            sample = build_orbit_sample(system, n_orbits=100, S=50, k_b=24,
                                        k_f=24, seed=1)
            rng = np.random.default_rng(2)
            a, b = sample.random_pairs(10_000, rng)
            flat = sample.flat_windows()
            w = d1_weights(24, 24)
            d1v = _kernels.rowwise_d1(flat[a], flat[b], w,
                                      system.space.periodic)
            dinfv = _kernels.rowwise_dinf(flat[a], flat[b],
                                          system.space.periodic)
            tail = 4.0 * system.space.diameter * 2.0 ** (1 - 24)
            excess = float((d1v - 3.0 * dinfv - tail).max())
            worst = max(worst, excess)
    report(1, worst <= 0.0, f"max(d1 - 3 d_inf - tail) = {worst:.3g}",
           t.elapsed, 5.0)


def test_criterion_02_cone_field_convergence():
    cat = zoo.parse_system("torus:2,1,1,1")
    with Timer() as t:
        sample = build_orbit_sample(cat, n_orbits=3, S=2, k_b=62, k_f=2,
                                    seed=3)
        win = sample.window(1, 0)
        seed = Subspace.from_vectors(np.array([[1.0], [0.0]]))
        got, _ = cone_iterate_unstable(cat, win, seed, 60)
        exact = Subspace.from_vectors(np.array([[1.0],
                                                [(np.sqrt(5) - 1) / 2]]))
        dist = grassmann_distance(got, exact)
    report(2, dist <= 1e-8, f"d_G to exact eigenline = {dist:.3g}",
           t.elapsed, 1.0)


def test_criterion_03_invertibility_at_critical_point():
    q = zoo.zoo_quadratic(0.0)
    with Timer() as t:
        rng = np.random.default_rng(4)
        worst = 0.0
        x = np.array([0.0])  # the critical point
        for delta in (1e-1, 1e-2, 1e-3):
            Fd = smoothed_derivative(q, delta)
            v = rng.standard_normal((200, 2))
            rt = Fd.apply_inverse(x, Fd.apply(x, v))
            worst = max(worst, float(np.abs(rt - v).max() / np.abs(v).max()))
    report(3, worst <= 1e-10, f"roundtrip relative error = {worst:.3g}",
           t.elapsed, 1.0)


def test_criterion_04_convolution_bounds():
    dbl = zoo.zoo_doubling()
    with Timer() as t:
        sample = build_orbit_sample(dbl, n_orbits=30, S=4, k_b=24, k_f=24,
                                    seed=5)
        flat = sample.flat_windows()
        r = 0.05

        def phi(Y):
            mid = (Y.shape[1] - 1) // 2
            return np.minimum(Y[:, mid, 0], 1.0 - Y[:, mid, 0])

        res = convolve_on_inverse_limit(phi, flat, sample.k_b, dbl.space, r,
                                        n_samples=100_000, seed=6)
        exact = np.minimum(flat[:, sample.k_b, 0],
                           1.0 - flat[:, sample.k_b, 0])
        err = np.abs(res.ratio[:, 0] - exact)
        c0_ok = bool((err <= r + 3.0 * res.sigma[:, 0]).all())
        ratios, _ = convolution_lipschitz(res, flat, sample.k_b, dbl.space)
        lip_ok = float(ratios.max()) <= res.lipschitz_bound

        def indicator(Y):
            mid = (Y.shape[1] - 1) // 2
            return (Y[:, mid, 0] <= 0.25).astype(float)

        res2 = convolve_on_inverse_limit(indicator, flat, sample.k_b,
                                         dbl.space, r, n_samples=100_000,
                                         seed=6, mc_window=0)
        x0 = flat[:, sample.k_b, 0]
        dist = np.where(x0 <= 0.25, 0.0, np.minimum(x0 - 0.25, 1.0 - x0))
        support_ok = not ((res2.values[:, 0] > 0) & (dist >= r)).any()
    ok = c0_ok and lip_ok and support_ok
    report(4, ok, f"c0 bound {c0_ok}, lipschitz {lip_ok} "
                  f"({ratios.max():.3g} <= {res.lipschitz_bound:.3g}), "
                  f"support {support_ok}", t.elapsed, 30.0)


def test_criterion_05_partition_of_unity():
    system = zoo.zoo_product_squares()
    with Timer() as t:
        pieces = spectral_decomposition(system)
        sample = build_orbit_sample(system, n_orbits=32, S=8, k_b=12, k_f=12,
                                    seed=7)
        from invstab.pipeline import sample_partition
        gammas, part = sample_partition(pieces, sample, n_samples=100_000,
                                        seed=8)
        defect = part.sum_defect
    report(5, defect <= 1e-9, f"max |sum gamma - 1| = {defect:.3g}",
           t.elapsed, 10.0)


def test_criterion_06_right_inverse_identity():
    with Timer() as t:
        # doubling at delta = 0: closed-form J(const c) = c
        dbl = zoo.zoo_doubling()
        sample0 = build_orbit_sample(dbl, n_orbits=8, S=44, k_b=8, k_f=8,
                                     seed=9)
        ps = spectral_decomposition(dbl)
        fam0 = build_bundle_family(ps, smoothed_derivative(dbl, 0.0), sample0)
        from invstab.solver import build_right_inverse
        J0 = build_right_inverse(
            fam0, np.ones((1, sample0.n_orbits, sample0.n_cols)), 1e-10)
        c = 0.3
        jv = J0(Section.constant(sample0, np.array([c, 0.0])))
        m = J0.n_trunc + 1
        closed_form = float(np.abs(jv.values[:, m:-m, 0] - c).max())

        worst = 0.0
        for name, tol in (("doubling", 1e-10), ("quadratic:c=0", 1e-8)):
            system = zoo.parse_system(name)
            prep = prepare(system, 1e-2, n_orbits=16, seed=9,
                           truncation_tol=tol)
            rng = np.random.default_rng(10)
            shape = (prep.sample.n_orbits, prep.sample.n_cols, 2)
            for _ in range(100):
                v = Section(prep.sample, rng.standard_normal(shape))
                defect = verify_right_inverse(prep.J, v)
                worst = max(worst, defect - tol)
    ok = closed_form <= 1e-9 and worst <= 1e-10
    report(6, ok, f"closed-form dev {closed_form:.3g}, "
                  f"max(defect - tol) = {worst:.3g}", t.elapsed, 60.0)


def test_criterion_07_delta_uniformity_of_K():
    with Timer() as t:
        spreads = {}
        for name in ("doubling", "product_squares"):
            system = zoo.parse_system(name)
            pieces = spectral_decomposition(system)
            sample = build_orbit_sample(system, n_orbits=24, S=24, k_b=16,
                                        k_f=16, seed=11)
            Ks = []
            for delta in (1e-1, 1e-2, 1e-3):
                fam = build_bundle_family(
                    pieces, smoothed_derivative(system, delta), sample)
                Ks.append(fam.K)
            spreads[name] = (max(Ks) - min(Ks)) / min(Ks)
        worst = max(spreads.values())
    report(7, worst < 0.10,
           "K spread " + ", ".join(f"{k}={v:.2%}" for k, v in spreads.items()),
           t.elapsed, 120.0)


def test_criterion_08_conjugacy_closed_form():
    dbl = zoo.zoo_doubling()
    with Timer() as t:
        prep = prepare(dbl, 1e-2, n_orbits=32, seed=12)
        c = 0.01
        g = zoo.perturb_translation(dbl)(c)
        w, rep = solve_conjugacy(prep.J, g)
        m = prep.J.n_trunc + 1
        dev = float(np.abs(w.values[:, m:-m, 0] + c).max())
        ok = (rep.converged and dev <= 1e-9 and rep.c1_defect <= 1e-9
              and rep.c2_value <= rep.eta and rep.injectivity_pass)
        _accepted_solves["doubling"] = (w, rep, m)
    report(8, ok, f"|w + c| = {dev:.3g}, c1 defect = {rep.c1_defect:.3g}, "
                  f"Lambda(w) = {rep.c3_value:.3g}", t.elapsed, 30.0)


def test_criterion_09_conjugacy_nonlinear():
    q = zoo.zoo_quadratic(0.0)
    with Timer() as t:
        prep = prepare(q, 1e-2, n_orbits=32, seed=13, truncation_tol=1e-8)
        eps = 1e-3
        g = zoo.perturb_translation(q)(eps)
        w, rep = solve_conjugacy(prep.J, g)
        col0 = prep.sample.col_index(0)
        x0 = prep.sample.x0()[:, col0, 0]
        worst_oracle = 0.0
        for target in (0.0, 1.0):
            oracle = scipy.optimize.brentq(lambda x: x * x + eps - x,
                                           target - 0.2, target + 0.2)
            i = int(np.argmin(np.abs(x0 - target)))
            worst_oracle = max(worst_oracle,
                               abs(w.values[i, col0, 0] - (oracle - target)))
        ok = (rep.converged and rep.contraction_factor < 0.9
              and rep.c1_defect <= 1e-8 and worst_oracle <= 1e-6)
        _accepted_solves["quadratic"] = (w, rep, prep.J.n_trunc + 1)
    report(9, ok, f"factor = {rep.contraction_factor:.3g}, "
                  f"c1 defect = {rep.c1_defect:.3g}, "
                  f"oracle dev = {worst_oracle:.3g}", t.elapsed, 60.0)


def test_criterion_10_injectivity_criterion():
    assert "doubling" in _accepted_solves and "quadratic" in _accepted_solves, \
        "criteria 8 and 9 must run first"
    with Timer() as t:
        lams = {}
        for name, (w, rep, margin) in _accepted_solves.items():
            passed, lam, _ = lipschitz_injectivity_check(w, margin=margin,
                                                      eta=0.1)
            lams[name] = lam
            assert passed, f"{name}: Lambda(w) = {lam:.3g} > 0.1"
        # adversarial synthetic section with a jump must fail with a witness
        sample = _accepted_solves["quadratic"][0].sample
        vals = np.zeros((sample.n_orbits, sample.n_cols, 2))
        vals[..., 0] = np.where(sample.x0()[..., 0] > 0.5, 0.5, -0.5)
        bad = Section(sample, vals)
        failed, lam_bad, witness = lipschitz_injectivity_check(bad, eta=0.1)
        ok = (not failed) and witness is not None
    report(10, ok, "Lambda(w): "
           + ", ".join(f"{k}={v:.3g}" for k, v in lams.items())
           + f"; adversarial fails with witness (lam={lam_bad:.3g})",
           t.elapsed, 10.0)
