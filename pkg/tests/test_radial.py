import numpy as np
import pytest

from covspde.radial import (kv_ratio, yukawa, yukawa_terms, terms_deriv,
                            terms_dmu, eval_terms)


def fd_gradient(fun, x, h=1e-5):
    """Richardson-extrapolated central difference, per axis."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(len(x)):
        e = np.zeros_like(x)
        e[i] = 1.0
        d1 = (fun(x + h * e) - fun(x - h * e)) / (2 * h)
        d2 = (fun(x + h / 2 * e) - fun(x - h / 2 * e)) / h
        grad[i] = (4 * d2 - d1) / 3.0
    return grad


def test_yukawa_closed_form_d3():
    # In d=3 the Yukawa profile is e^(-m r)/(4 pi r).
    r = np.array([0.3, 1.0, 2.5, 6.0])
    for m in [0.5, 1.0, 2.0]:
        expect = np.exp(-m * r) / (4 * np.pi * r)
        assert np.allclose(yukawa(m, r, 3), expect, rtol=1e-12)


def test_kv_ratio_half_integer():
    # k_{1/2}(z) = sqrt(pi/2) e^(-z) / z
    z = np.array([0.2, 1.0, 3.7])
    assert np.allclose(kv_ratio(0.5, z), np.sqrt(np.pi / 2) * np.exp(-z) / z,
                       rtol=1e-12)


def test_yukawa_terms_match_direct():
    terms = yukawa_terms(3)
    X = np.array([[0.5, -0.2, 1.0], [2.0, 1.0, -1.5]])
    r = np.linalg.norm(X, axis=1)
    for m in [0.7, 1.3]:
        assert np.allclose(eval_terms(terms, m, X), yukawa(m, r, 3),
                           rtol=1e-12)


def test_terms_deriv_matches_finite_difference():
    m = 1.1
    base = yukawa_terms(3)
    # differentiate twice along mixed axes and compare to finite differences
    d0 = terms_deriv(base, 0)
    d01 = terms_deriv(d0, 1)
    x = np.array([0.8, -0.6, 1.2])

    def f(y):
        return eval_terms(base, m, y[None, :])[0]

    def f0(y):
        return eval_terms(d0, m, y[None, :])[0]

    g = fd_gradient(f, x)
    assert abs(f0(x) - g[0]) < 1e-9 * max(1.0, abs(g[0]))
    g0 = fd_gradient(f0, x)
    assert abs(eval_terms(d01, m, x[None, :])[0] - g0[1]) < 1e-8


def test_terms_dmu_matches_finite_difference():
    base = yukawa_terms(3)
    dmu = terms_dmu(base)
    dmu2 = terms_dmu(dmu)
    x = np.array([0.4, 1.1, -0.9])[None, :]
    mu = 1.3
    h = 1e-6

    def at(mu_val, terms):
        return eval_terms(terms, np.sqrt(mu_val), x)[0]

    fd1 = (at(mu + h, base) - at(mu - h, base)) / (2 * h)
    assert abs(at(mu, dmu) - fd1) < 1e-8
    fd2 = (at(mu + h, dmu) - at(mu - h, dmu)) / (2 * h)
    assert abs(at(mu, dmu2) - fd2) < 1e-8


def test_laplacian_reproduces_pole_equation():
    # (-Laplace + m^2) Y_m = 0 away from the origin.
    base = yukawa_terms(3)
    lap = {}
    for i in range(3):
        di = terms_deriv(terms_deriv(base, i), i)
        for k, c in di.items():
            lap[k] = lap.get(k, 0.0) + c
    X = np.array([[1.0, 0.5, -0.3], [0.2, -2.0, 1.4], [3.0, 1.0, 2.0]])
    for m in [0.6, 1.0, 1.8]:
        residual = -eval_terms(lap, m, X) + m ** 2 * eval_terms(base, m, X)
        assert np.max(np.abs(residual)) < 1e-12
