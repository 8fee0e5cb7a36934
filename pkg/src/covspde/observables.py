"""Schwinger functions of the solution field, closed form and Monte Carlo.

Every observable here is a function of pairings (phi, f).  The weak-solution
identity (phi, f) = (eta, D^-1 f) turns each of them into a noise
functional: the characteristic functional of phi is the noise functional
evaluated at g = D^-1 f, the two-point function is the quadratic form of
the noise covariance density in g, and the connected four-point function
contracts the fourth moments of the jump measure against g.  Monte Carlo
estimates sample the same pairing seed by seed and never solve the full
field, which keeps 1e4-seed runs cheap and exactly reproducible.

g is computed spectrally: for a sparse band-limited test function the
Green multiplier acts mode by mode, for dense site values it acts through
the lattice Green grid.  All x-integrals are lattice cell sums.
"""

import itertools
import math

import numpy as np

from .green import green_hat_grid, require_strictly_positive
from .noise import charfunc_noise, sample_noise
from .solve import TestFunction


class SchwingerEstimate:
    """A moment value with its uncertainty and provenance.

    method is "closed_form" (std_error 0) or "monte_carlo" (std_error is
    the sample standard deviation over the seed range divided by
    sqrt(n_samples)).
    """

    def __init__(self, value, std_error, n_samples, method, descriptor):
        self.value = float(value)
        self.std_error = float(std_error)
        self.n_samples = int(n_samples)
        self.method = str(method)
        self.descriptor = str(descriptor)

    def as_dict(self):
        return {"value": self.value, "std_error": self.std_error,
                "n_samples": self.n_samples, "method": self.method,
                "descriptor": self.descriptor}

    def __repr__(self):
        return ("SchwingerEstimate(%r, std_error=%r, n_samples=%d, "
                "method=%r, descriptor=%r)"
                % (self.value, self.std_error, self.n_samples, self.method,
                   self.descriptor))


def _green_values(op, lat, f):
    """Dense site values of g = D^-1 f on the lattice.

    Accepts a band-limited TestFunction or a dense real array of site
    values with one entry per operator component.
    """
    if isinstance(f, TestFunction):
        return f.green_apply(op).values(lat)
    f = np.asarray(f, dtype=float)
    if f.shape != lat.shape + (op.n_in,):
        raise ValueError("dense test function has wrong lattice shape")
    spatial = tuple(range(lat.d))
    f_hat = np.fft.fftn(f, axes=spatial)
    g_hat = np.einsum("...ab,...b->...a", green_hat_grid(op, lat), f_hat)
    g = np.fft.ifftn(g_hat, axes=spatial)
    scale = np.max(np.abs(g)) or 1.0
    if np.max(np.abs(g.imag)) > 1e-8 * scale:
        raise ValueError("transformed test function has a non-real part")
    return np.ascontiguousarray(g.real)


def charfunc_solution(op, noise_spec, f, lat):
    """Characteristic functional E e^{i(phi,f)} of the solution field.

    Equals the noise characteristic functional at D^-1 f, so the modulus
    never exceeds one and f = 0 gives exactly one.
    """
    require_strictly_positive(op)
    g = _green_values(op, lat, f)
    return charfunc_noise(noise_spec, g, lat)


def _mean_vector(noise_spec):
    """First moment of the jump measure, integral alpha dlambda."""
    dim = noise_spec.rep.dim
    if not noise_spec.has_poisson:
        return np.zeros(dim)
    unit = [0] * dim
    out = np.empty(dim)
    for i in range(dim):
        unit[i] = 1
        out[i] = noise_spec.levy.moment(tuple(unit))
        unit[i] = 0
    return out


def two_point_closed(op, noise_spec, f, g, lat):
    """E [(phi,f)(phi,g)] from the closed covariance form.

    The covariance part contracts D^-1 f against (A + C) D^-1 g with C the
    second moment matrix of the jump measure; an asymmetric jump measure
    adds the product of the two field means.
    """
    require_strictly_positive(op)
    gf = _green_values(op, lat, f)
    gg = _green_values(op, lat, g)
    dens = noise_spec.covariance_density()
    val = float(np.sum(gf * (gg @ dens.T))) * lat.cell_volume
    mean = _mean_vector(noise_spec)
    if np.any(mean):
        val += (float(np.sum(gf @ mean)) * lat.cell_volume
                * float(np.sum(gg @ mean)) * lat.cell_volume)
    return val


def connected_four_point(op, noise_spec, f, lat):
    """Fourth cumulant of (phi, f) in closed form.

    Only the jump part contributes: kappa_4 = integral dx of the fourth
    moment tensor of the jump measure contracted four times with D^-1 f.
    Pure Gaussian noise returns zero, so a nonzero value is a direct
    non-Gaussianity witness.
    """
    require_strictly_positive(op)
    if not noise_spec.has_poisson:
        return 0.0
    g = _green_values(op, lat, f)
    dim = noise_spec.rep.dim
    total = 0.0
    for combo in itertools.combinations_with_replacement(range(dim), 4):
        beta = [0] * dim
        for i in combo:
            beta[i] += 1
        mom = noise_spec.levy.moment(tuple(beta))
        if mom == 0.0:
            continue
        weight = 24.0
        for b in beta:
            weight /= math.factorial(b)
        prod = g[..., combo[0]]
        for i in combo[1:]:
            prod = prod * g[..., i]
        total += weight * mom * float(np.sum(prod))
    return total * lat.cell_volume


def pairing_samples(op, noise_spec, lat, fs, seeds):
    """Sample (phi, f_i) for each seed via the weak-solution pairing.

    Returns an array of shape (n_seeds, n_functions), one row per seed in
    iteration order.  Rows depend only on their own seed, so any
    partition of the seed range reassembles to the same array.
    """
    require_strictly_positive(op)
    for f in fs:
        if not isinstance(f, TestFunction):
            raise TypeError("pairing samples need band-limited test "
                            "functions")
    gs = [f.green_apply(op) for f in fs]
    dense = np.stack([g.values(lat).reshape(-1) for g in gs])
    cell = lat.cell_volume
    seeds = list(seeds)
    out = np.empty((len(seeds), len(fs)))
    for row, seed in enumerate(seeds):
        noise = sample_noise(noise_spec, lat, seed)
        vals = dense @ noise.lattice_values.reshape(-1) * cell
        if noise.n_atoms:
            for k, g in enumerate(gs):
                vals[k] += float(np.sum(noise.marks * g(noise.points)))
        out[row] = vals
    return out


def npoint_mc(op, noise_spec, fs, n_seeds, lat, seed_start=0):
    """Monte Carlo moment E [(phi,f_1) ... (phi,f_n)] for n up to four.

    Deterministic in (fs, seed_start, n_seeds): each seed contributes one
    product sample and the estimate is their mean with its standard error.
    """
    if not fs:
        raise ValueError("moment needs at least one test function")
    if len(fs) > 4:
        raise ValueError("moment order above supported range")
    if n_seeds < 2:
        raise ValueError("moment estimate needs at least two seeds")
    samples = pairing_samples(op, noise_spec, lat, fs,
                              range(seed_start, seed_start + n_seeds))
    prod = np.prod(samples, axis=1)
    value = float(prod.mean())
    std_error = float(prod.std(ddof=1) / math.sqrt(n_seeds))
    descriptor = ("order %d moment, seeds [%d, %d)"
                  % (len(fs), seed_start, seed_start + n_seeds))
    return SchwingerEstimate(value, std_error, n_seeds, "monte_carlo",
                             descriptor)
