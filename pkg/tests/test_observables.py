"""Tests for closed-form and Monte Carlo solution observables.

The Monte Carlo oracle samples (phi, f) through the weak-solution pairing
(eta, D^-1 f) seed by seed; closed forms are checked against it and against
hand-computable single-mode values.
"""

import numpy as np
import pytest
from scipy import stats

from covspde.lattice import Lattice, rotate_vector_field
from covspde.operators import FractionalOperator, proca_operator
from covspde.representations import builtin_representation
from covspde.noise import NoiseSpec, builtin_levy, sample_noise
from covspde.solve import TestFunction
from covspde.observables import (SchwingerEstimate, charfunc_solution,
                                 connected_four_point, npoint_mc,
                                 pairing_samples, two_point_closed)


# ---------------------------------------------------------------------------
# oracle: direct pairing sampler, independent of the closed forms
# ---------------------------------------------------------------------------

def mc_pairings(op, spec, lat, fs, seeds):
    """(phi, f_i) per seed via (eta, D^-1 f_i), computed directly."""
    gs = [f.green_apply(op) for f in fs]
    dense = [g.values(lat) for g in gs]
    out = np.empty((len(seeds), len(fs)))
    for row, seed in enumerate(seeds):
        noise = sample_noise(spec, lat, seed)
        for k in range(len(fs)):
            val = np.sum(noise.lattice_values * dense[k]) * lat.cell_volume
            if noise.n_atoms:
                val += float(np.sum(noise.marks * gs[k](noise.points)))
            out[row, k] = val
    return out


def random_test_function(L, dim, n_modes, kmax, rng, amp=1.0):
    modes = []
    for _ in range(n_modes):
        q = tuple(int(v) for v in rng.integers(-kmax, kmax + 1, size=3))
        c = amp * (rng.standard_normal(dim) + 1j * rng.standard_normal(dim))
        modes.append((q, c))
    return TestFunction(L, dim, modes)


def mixed_proca_spec(rho=0.3):
    rep = builtin_representation("vector+vector", 3)
    levy = builtin_levy("radial_gauss", rep, {"rho": rho, "mean_square": 0.8})
    return NoiseSpec(rep, gaussian_cov=0.5 * np.eye(6), levy=levy)


# ---------------------------------------------------------------------------
# characteristic functional
# ---------------------------------------------------------------------------

def test_charfunc_zero_function_is_one():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    f = TestFunction(lat.L, 6, [])
    assert charfunc_solution(op, spec, f, lat) == 1.0 + 0.0j


def test_charfunc_single_mode_gaussian_fractional():
    # pure Gaussian white noise, scalar fractional family: for a single
    # supplied mode (q, c) the exponent is -V |c|^2 / (1 + |p|^2)
    op = FractionalOperator(0.5)
    lat = Lattice(8.0, 16)
    spec = NoiseSpec(builtin_representation("trivial", 3),
                     gaussian_cov=np.array([[1.0]]))
    q = (2, 1, 0)
    c = np.array([0.35 - 0.2j])
    f = TestFunction(lat.L, 1, [(q, c)])
    p = 2.0 * np.pi * np.asarray(q, dtype=float) / lat.L
    want = np.exp(-lat.volume * abs(c[0]) ** 2 / (1.0 + p @ p))
    got = charfunc_solution(op, spec, f, lat)
    assert abs(got - want) < 1e-12 * abs(want)


def test_charfunc_matches_mc():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    rng = np.random.default_rng(101)
    fs = [random_test_function(lat.L, 6, 3, 2, rng, amp=0.01)
          for _ in range(3)]
    seeds = range(300_000, 306_000)
    samples = mc_pairings(op, spec, lat, fs, seeds)
    for k, f in enumerate(fs):
        closed = charfunc_solution(op, spec, f, lat)
        re, im = np.cos(samples[:, k]), np.sin(samples[:, k])
        se_re = re.std(ddof=1) / np.sqrt(len(re))
        se_im = im.std(ddof=1) / np.sqrt(len(im))
        assert abs(re.mean() - closed.real) < 3.0 * se_re
        assert abs(im.mean() - closed.imag) < 3.0 * max(se_im, 1e-12)
        assert 0.05 < abs(closed) < 0.95  # informative fixture


def test_charfunc_modulus_bound_and_conjugation():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    rng = np.random.default_rng(103)
    for amp in (0.1, 0.5, 2.0, 8.0):
        f = random_test_function(lat.L, 6, 4, 3, rng, amp=amp)
        val = charfunc_solution(op, spec, f, lat)
        assert abs(val) <= 1.0 + 1e-12
        neg = charfunc_solution(op, spec, -1.0 * f, lat)
        assert abs(neg - np.conj(val)) < 1e-12


def test_charfunc_rotation_invariance():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    rep = builtin_representation("vector+vector", 3)
    spec = NoiseSpec(rep, gaussian_cov=np.eye(6),
                     levy=builtin_levy("radial_gauss", rep,
                                       {"rho": 0.4, "mean_square": 1.0}))
    rng = np.random.default_rng(107)
    f = random_test_function(lat.L, 6, 4, 3, rng, amp=0.4).values(lat)
    base = charfunc_solution(op, spec, f, lat)
    for plane in ((0, 1), (1, 2), (0, 2)):
        rot = rotate_vector_field(f, rep, plane)
        got = charfunc_solution(op, spec, rot, lat)
        assert abs(got - base) < 1e-8


# ---------------------------------------------------------------------------
# two-point function
# ---------------------------------------------------------------------------

def test_two_point_gaussian_fractional_mode_sum():
    op = FractionalOperator(0.5)
    lat = Lattice(8.0, 16)
    spec = NoiseSpec(builtin_representation("trivial", 3),
                     gaussian_cov=np.array([[1.0]]))
    q = (1, 2, 0)
    c = np.array([0.4 + 0.15j])
    f = TestFunction(lat.L, 1, [(q, c)])
    p = 2.0 * np.pi * np.asarray(q, dtype=float) / lat.L
    # E (phi,f)^2 = V * sum over the mode pair of |c|^2 / (1+|p|^2)^(2 lam)
    want = 2.0 * lat.volume * abs(c[0]) ** 2 / (1.0 + p @ p)
    got = two_point_closed(op, spec, f, f, lat)
    assert abs(got - want) < 1e-12 * want


def test_two_point_distinct_modes_orthogonal():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    c = np.array([0.3, -0.2, 0.5, 0.1, 0.0, 0.4]) + 0.1j
    f = TestFunction(lat.L, 6, [((1, 0, 2), c)])
    g = TestFunction(lat.L, 6, [((2, 1, -1), c[::-1])])
    val = two_point_closed(op, spec, f, g, lat)
    assert abs(val) < 1e-10


def test_two_point_matches_mc():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    rng = np.random.default_rng(109)
    f = random_test_function(lat.L, 6, 3, 2, rng)
    g = random_test_function(lat.L, 6, 3, 2, rng)
    closed = two_point_closed(op, spec, f, g, lat)
    samples = mc_pairings(op, spec, lat, [f, g], range(310_000, 314_000))
    prod = samples[:, 0] * samples[:, 1]
    se = prod.std(ddof=1) / np.sqrt(len(prod))
    assert abs(prod.mean() - closed) < 3.0 * se
    assert abs(closed) > 5.0 * se  # distinguishable from zero


# ---------------------------------------------------------------------------
# Monte Carlo moments
# ---------------------------------------------------------------------------

def test_npoint_rejects_high_order():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    rng = np.random.default_rng(113)
    fs = [random_test_function(lat.L, 6, 2, 2, rng) for _ in range(5)]
    with pytest.raises(ValueError, match="moment order above supported range"):
        npoint_mc(op, spec, fs, 100, lat)


def test_npoint_single_mean_zero():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    rng = np.random.default_rng(127)
    f = random_test_function(lat.L, 6, 3, 2, rng)
    est = npoint_mc(op, spec, [f], 3000, lat, seed_start=320_000)
    assert est.method == "monte_carlo"
    assert est.n_samples == 3000
    assert abs(est.value) < 3.0 * est.std_error


def test_npoint_pair_matches_closed_form():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    rng = np.random.default_rng(131)
    f = random_test_function(lat.L, 6, 3, 2, rng)
    g = random_test_function(lat.L, 6, 3, 2, rng)
    est = npoint_mc(op, spec, [f, g], 4000, lat, seed_start=330_000)
    closed = two_point_closed(op, spec, f, g, lat)
    assert abs(est.value - closed) < 3.0 * est.std_error


def test_npoint_four_gaussian_wick_sum():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    rep = builtin_representation("vector+vector", 3)
    spec = NoiseSpec(rep, gaussian_cov=np.eye(6))
    rng = np.random.default_rng(137)
    # strongly correlated family: the Wick sum then dominates the product
    # variance while all six pairings stay distinct
    base = random_test_function(lat.L, 6, 3, 2, rng)
    fs = [base + random_test_function(lat.L, 6, 2, 2, rng, amp=0.3)
          for _ in range(4)]
    pair = {}
    for i in range(4):
        for j in range(i + 1, 4):
            pair[(i, j)] = two_point_closed(op, spec, fs[i], fs[j], lat)
    wick = (pair[(0, 1)] * pair[(2, 3)] + pair[(0, 2)] * pair[(1, 3)]
            + pair[(0, 3)] * pair[(1, 2)])
    est = npoint_mc(op, spec, fs, 8000, lat, seed_start=340_000)
    assert abs(est.value - wick) < 3.0 * est.std_error
    assert abs(wick) > 5.0 * est.std_error


# ---------------------------------------------------------------------------
# connected four-point function (non-Gaussianity witness)
# ---------------------------------------------------------------------------

def test_connected_four_point_closed_vs_isotropic_shortcut():
    # generic moment-contraction formula against the direct isotropic form:
    # Gaussian marks N(0, s^2 I) give E <a, g>^4 = 3 s^4 |g|^4, hence
    # kappa_4 = 3 rho s^4 * integral |D^-1 f|^4
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    rep = builtin_representation("vector+vector", 3)
    rho, mean_square = 0.5, 0.8
    levy = builtin_levy("radial_gauss", rep,
                        {"rho": rho, "mean_square": mean_square})
    spec = NoiseSpec(rep, levy=levy)
    rng = np.random.default_rng(139)
    f = random_test_function(lat.L, 6, 3, 2, rng)
    closed = connected_four_point(op, spec, f, lat)

    g = f.green_apply(op).values(lat)
    sigma2 = mean_square / 6.0
    shortcut = (3.0 * rho * sigma2 ** 2
                * np.sum(np.sum(g * g, axis=-1) ** 2) * lat.cell_volume)
    assert abs(closed - shortcut) < 1e-10 * abs(shortcut)


def test_connected_four_point_matches_mc():
    op = FractionalOperator(0.5)
    lat = Lattice(8.0, 16)
    rep = builtin_representation("trivial", 3)
    # sparse atoms: the excess kurtosis of the pairing scales like the
    # inverse atom count, so a low intensity keeps the witness visible
    spec = NoiseSpec(rep, levy=builtin_levy("radial_gauss", rep,
                                            {"rho": 0.02, "mean_square": 1.0}))
    rng = np.random.default_rng(149)
    f = random_test_function(lat.L, 1, 3, 2, rng)
    closed = connected_four_point(op, spec, f, lat)
    assert closed > 0.0  # pure jump noise is a non-Gaussianity witness

    n_batch, per_batch = 20, 600
    samples = mc_pairings(op, spec, lat, [f],
                          range(350_000, 350_000 + n_batch * per_batch))[:, 0]
    k4s = np.array([stats.kstat(chunk, 4)
                    for chunk in samples.reshape(n_batch, per_batch)])
    se = k4s.std(ddof=1) / np.sqrt(n_batch)
    assert abs(k4s.mean() - closed) < 3.0 * se
    assert closed > 5.0 * se


def test_pairing_samples_deterministic_and_matches_oracle():
    op = proca_operator(1.0)
    lat = Lattice(8.0, 16)
    spec = mixed_proca_spec()
    rng = np.random.default_rng(151)
    fs = [random_test_function(lat.L, 6, 2, 2, rng) for _ in range(2)]
    seeds = range(500, 540)
    got = pairing_samples(op, spec, lat, fs, seeds)
    want = mc_pairings(op, spec, lat, fs, seeds)
    assert np.allclose(got, want, atol=1e-12)
    again = pairing_samples(op, spec, lat, fs, seeds)
    assert np.array_equal(got, again)


def test_schwinger_estimate_closed_form_semantics():
    est = SchwingerEstimate(1.25, 0.0, 0, "closed_form", "fixture")
    assert est.std_error == 0.0
    assert "closed_form" in repr(est)
