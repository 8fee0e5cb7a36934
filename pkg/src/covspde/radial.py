"""Closed-form radial profiles built from modified Bessel functions.

Position-space kernels of operators with a strictly positive mass spectrum
reduce to finite linear combinations of terms

    mu^q * x^alpha * r^(2b) * k_{nu+j}(m r),      mu = m^2,  nu = d/2 - 1,

where k_nu(z) = z^(-nu) K_nu(z).  The inverse Fourier transform of a simple
pole 1/(|p|^2 + m^2) is the Yukawa profile

    Y_m(x) = (2 pi)^(-d/2) m^(d-2) k_nu(m |x|),

a single such term.  The family is closed under partial derivatives and under
differentiation with respect to mu, which is all that is needed to turn
momentum-space polynomial numerators and repeated poles into position-space
formulas:

    d/dx_i [x^alpha r^2b h_j] = alpha_i x^(alpha-e_i) r^2b h_j
                                + 2b x^(alpha+e_i) r^(2b-2) h_j
                                - mu x^(alpha+e_i) r^2b h_(j+1)
    d/dmu  [mu^q X h_j]       = q mu^(q-1) X h_j - (1/2) mu^q X r^2 h_(j+1)

with h_j = k_{nu+j}(m r), using (1/z) d/dz k_nu(z) = -k_{nu+1}(z).

A term set is a dict mapping the key (q2, alpha, b, j) to a scalar
coefficient, where q2 = 2q keeps half-integer powers of mu exact, alpha is a
multi-index tuple of length d, and b, j are nonnegative integers.
"""

import numpy as np
from scipy import special


def _half_integer_coeffs(n):
    # K_{n+1/2}(z) = sqrt(pi/(2z)) e^(-z) sum_k (n+k)!/(k! (n-k)! 2^k) z^(-k)
    return [special.factorial(n + k, exact=True)
            // (special.factorial(k, exact=True)
                * special.factorial(n - k, exact=True)) / 2.0 ** k
            for k in range(n + 1)]


_HALF_INTEGER_CACHE = {}


def kv_ratio(nu, z):
    """k_nu(z) = z^(-nu) K_nu(z), vectorized; z > 0.

    Half-integer orders, the only ones arising in odd dimension, reduce
    to an exponential times a polynomial in 1/z and skip the generic
    Bessel routine.
    """
    z = np.asarray(z, dtype=float)
    n = abs(nu) - 0.5
    if n == int(n) and n <= 16:
        n = int(n)
        if n not in _HALF_INTEGER_CACHE:
            _HALF_INTEGER_CACHE[n] = _half_integer_coeffs(n)
        coeffs = _HALF_INTEGER_CACHE[n]
        inv = 1.0 / z
        poly = np.full_like(z, coeffs[-1])
        for c in coeffs[-2::-1]:
            poly = poly * inv + c
        # z^(-nu) sqrt(pi/(2z)) -> integer power of 1/z when nu = n + 1/2
        head = np.sqrt(np.pi / 2.0) * np.exp(-z) * poly
        if nu > 0:
            return head * inv ** (n + 1)
        return head * z ** n
    return z ** (-nu) * special.kv(nu, z)


def yukawa(m, r, d=3):
    """The d-dimensional Yukawa profile Y_m at radius r."""
    nu = d / 2.0 - 1.0
    return (2.0 * np.pi) ** (-d / 2.0) * m ** (d - 2) * kv_ratio(nu, m * r)


def yukawa_terms(d):
    """Term set of Y_m (mass left symbolic): one term, coeff (2 pi)^(-d/2)."""
    key = (d - 2, (0,) * d, 0, 0)
    return {key: (2.0 * np.pi) ** (-d / 2.0)}


def terms_add(target, source, factor=1.0):
    """target += factor * source, in place; drops exact zeros.

    Coefficients may be scalars or ndarrays (matrix-valued term sets).
    """
    for key, c in source.items():
        val = target.get(key, 0.0) + factor * c
        if np.all(val == 0.0):
            target.pop(key, None)
        else:
            target[key] = val
    return target


def terms_deriv(terms, axis):
    """Partial derivative of a term set along the given axis."""
    out = {}
    for (q2, alpha, b, j), c in terms.items():
        ai = alpha[axis]
        if ai > 0:
            down = alpha[:axis] + (ai - 1,) + alpha[axis + 1:]
            terms_add(out, {(q2, down, b, j): 1.0}, c * ai)
        up = alpha[:axis] + (ai + 1,) + alpha[axis + 1:]
        if b > 0:
            terms_add(out, {(q2, up, b - 1, j): 1.0}, c * 2 * b)
        terms_add(out, {(q2 + 2, up, b, j + 1): 1.0}, -c)
    return out


def terms_dmu(terms):
    """Derivative of a term set with respect to mu = m^2."""
    out = {}
    for (q2, alpha, b, j), c in terms.items():
        if q2 != 0:
            terms_add(out, {(q2 - 2, alpha, b, j): 1.0}, c * q2 / 2.0)
        terms_add(out, {(q2, alpha, b + 1, j + 1): 1.0}, -c / 2.0)
    return out


def eval_terms(terms, m, X, d=None):
    """Evaluate a term set at mass m on points X of shape (..., d).

    Returns an array of shape X.shape[:-1].  Bessel factors are computed once
    per distinct order j.
    """
    X = np.asarray(X, dtype=float)
    if d is None:
        d = X.shape[-1]
    nu = d / 2.0 - 1.0
    r = np.sqrt(np.sum(X * X, axis=-1))
    out = np.zeros(r.shape)
    bessel = {}
    for (q2, alpha, b, j), c in terms.items():
        if j not in bessel:
            bessel[j] = kv_ratio(nu + j, m * r)
        val = c * m ** q2 * bessel[j]
        for axis, a in enumerate(alpha):
            if a:
                val = val * X[..., axis] ** a
        if b:
            val = val * (r * r) ** b
        out = out + val
    return out
