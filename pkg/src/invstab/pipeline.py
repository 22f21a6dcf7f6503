"""End-to-end assembly of the conjugacy machinery for one system.

Sizes the sampled window columns from a measured decay envelope (two-phase:
a probe sample fixes the truncation depth, the production sample adds that
margin), builds the partition of unity over the covers, solves the bundle
family and wires the right inverse.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bundles import build_bundle_family
from .errors import DivergenceError, NotHyperbolicError, WraparoundError
from .hyperbolic import build_filtration, spectral_decomposition
from .sampling import build_orbit_sample
from .smoothing import partition_of_unity, smoothed_derivative
from .solver import (build_right_inverse, build_transports, measure_decay,
                     solve_conjugacy)

DELTA_LADDER = (1e-1, 1e-2, 1e-3, 1e-4)


@dataclass
class Prepared:
    system: object
    piece_set: object
    sample: object
    Fd: object
    gammas: np.ndarray
    partition: object     # None for single-piece systems
    family: object
    J: object


def sample_partition(piece_set, sample, n_samples=100_000, seed=101,
                     mc_window=0):
    """Partition values over every sampled window, shaped (q, n_orbits, n_cols)."""
    n, c = sample.n_orbits, sample.n_cols
    if piece_set.q == 1:
        return np.ones((1, n, c)), None
    flat = sample.flat_windows()
    part = partition_of_unity(piece_set.covers, piece_set.cover_margin, flat,
                              sample.k_b, sample.space, n_samples=n_samples,
                              seed=seed, mc_window=mc_window)
    return part.gammas.reshape(piece_set.q, n, c), part


def prepare(system, delta, n_orbits=48, S=None, k_b=24, k_f=24, seed=0,
            truncation_tol=1e-10, mc_samples=100_000, core_margin=8,
            bundle_iters=200, bundle_tol=1e-12):
    """Build sample, partition, bundle family and right inverse for a system."""
    piece_set = spectral_decomposition(system)
    if piece_set.filtration:
        build_filtration(piece_set)
    Fd = smoothed_derivative(system, delta)
    S_probe = S if S is not None else 40

    def assemble(S_now):
        sample = build_orbit_sample(system, n_orbits, S_now, k_b, k_f, seed)
        gammas, part = sample_partition(piece_set, sample, mc_samples,
                                        seed + 1)
        family = build_bundle_family(piece_set, Fd, sample,
                                     dumps=gammas if piece_set.q > 1 else None,
                                     iters=bundle_iters, tol=bundle_tol)
        return sample, gammas, part, family

    sample, gammas, part, family = assemble(S_probe)
    # probe the decay envelope first: weakly contracting systems need a
    # longer column range than the default before J can be truncated
    ops = build_transports(family, gammas)
    depth = measure_decay(ops).truncation_depth(0.5 * truncation_tol)
    if S is None and depth + core_margin > S_probe:
        sample, gammas, part, family = assemble(depth + core_margin)
    J = build_right_inverse(family, gammas, truncation_tol)
    return Prepared(system, piece_set, sample, Fd, gammas, part, family, J)


def auto_delta(system, g, ladder=DELTA_LADDER, probe_iters=6, factor_cap=0.9,
               **kwargs):
    """Largest delta on the ladder whose probe solve contracts below the cap."""
    last_err = None
    for delta in ladder:
        try:
            prep = prepare(system, delta, **kwargs)
            _, rep = solve_conjugacy(prep.J, g, max_iters=probe_iters,
                                     measure_surjectivity=False)
            if rep.contraction_factor < factor_cap:
                return delta, prep
        except (DivergenceError, NotHyperbolicError, WraparoundError) as err:
            last_err = err
    raise DivergenceError(
        f"no delta on the ladder contracts below {factor_cap}"
        + (f" (last: {last_err})" if last_err else ""))


def run_conjugacy(system, g, delta="auto", eta=0.05, eta_lip=0.1,
                  truncation_tol=1e-10, max_iters=80, stop_tol=1e-10,
                  **kwargs):
    """Full pipeline: prepare at delta (or pre-pass) and solve against g."""
    if delta == "auto":
        _, prep = auto_delta(system, g, truncation_tol=truncation_tol, **kwargs)
    else:
        prep = prepare(system, float(delta), truncation_tol=truncation_tol,
                       **kwargs)
    w, report = solve_conjugacy(prep.J, g, eta=eta, eta_lip=eta_lip,
                                max_iters=max_iters, stop_tol=stop_tol)
    return w, report, prep
