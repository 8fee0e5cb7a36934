"""Rotation-covariant noise: Gaussian white noise plus compound Poisson jumps.

The noise law is the product of a Gaussian factor with covariance matrix A
and a compound-Poisson factor driven by a finite jump measure dlambda:

    Gamma_eta(f) = exp(-1/2 int <f(x), A f(x)> dx)
                 * exp(int dx int dlambda(alpha) (e^{i<alpha, f(x)>} - 1)).

Both ingredients must be invariant under the lifted rotation action tau: A
commutes with tau(R) and dlambda is tau-invariant.  Built-in measure families
keep total mass, mixed moments through order four and the cumulant transform
int (e^{i<alpha,y>} - 1) dlambda in closed form, so sampled statistics can be
checked against exact values.

Sampling is counter-based and keyed by (seed, component tag): a realization
depends only on its seed, never on evaluation order or worker count.
"""

import numpy as np
from scipy import special

from .representations import random_rotation_coeffs

__all__ = [
    "LevyMeasure",
    "NoiseSpec",
    "NoiseRealization",
    "builtin_levy",
    "sample_noise",
    "charfunc_noise",
    "sphere_moment",
]

_MOMENT_ORDER = 4

# stream tags for the counter-based generator
_TAG_GAUSS = 1
_TAG_POISSON = 2
_TAG_MARKS = 3


def keyed_rng(seed, tag):
    """Counter-based generator keyed by (seed, tag).

    The draw sequence depends only on the key, so independent noise
    components and independent seeds never share or shift streams.
    """
    key = np.array([np.uint64(int(seed) & 0xFFFFFFFFFFFFFFFF),
                    np.uint64(tag)], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def sphere_moment(dim, beta):
    """E prod_i u_i^beta_i for u uniform on the unit sphere in R^dim.

    Zero unless every exponent is even; for beta = 2*gamma the value is
    prod (2 gamma_i - 1)!! / prod_{j<|gamma|} (dim + 2 j).
    """
    beta = tuple(int(b) for b in beta)
    if len(beta) != dim:
        raise ValueError("exponent tuple does not match dimension")
    if any(b < 0 for b in beta):
        raise ValueError("negative exponent")
    if any(b % 2 for b in beta):
        return 0.0
    gamma = [b // 2 for b in beta]
    num = 1.0
    for g in gamma:
        num *= float(special.factorial2(2 * g - 1)) if g > 0 else 1.0
    den = 1.0
    for j in range(sum(gamma)):
        den *= dim + 2 * j
    return num / den


def _check_moment_order(beta):
    if sum(beta) > _MOMENT_ORDER:
        raise ValueError("moments exposed through order %d only"
                         % _MOMENT_ORDER)


class LevyMeasure:
    """Finite rotation-invariant jump measure with closed-form statistics.

    total_mass is lambda(R^N); marks are distributed as dlambda/total_mass.
    moment(beta) returns the mixed moment int alpha^beta dlambda (measure
    included, through total order four); cumulant_transform(y) returns
    int (e^{i<alpha,y>} - 1) dlambda and real_cumulant_transform the same
    with the oscillatory exponential replaced by a real one.
    """

    def __init__(self, family, rep, total_mass, params, sampler, moment_fn,
                 cumulant_fn, real_cumulant_fn, radial=None):
        self.family = family
        self.rep = rep
        self.total_mass = float(total_mass)
        self.params = dict(params)
        self._sampler = sampler
        self._moment_fn = moment_fn
        self._cumulant_fn = cumulant_fn
        self._real_cumulant_fn = real_cumulant_fn
        self._radial = radial
        if self.total_mass <= 0:
            raise ValueError("jump measure needs positive total mass")
        self._check_invariance()

    def sample_marks(self, count, rng):
        """Draw count i.i.d. marks, shape (count, rep.dim)."""
        if count == 0:
            return np.zeros((0, self.rep.dim))
        return self._sampler(count, rng)

    def moment(self, beta):
        beta = tuple(int(b) for b in beta)
        if len(beta) != self.rep.dim:
            raise ValueError("exponent tuple does not match mark dimension")
        _check_moment_order(beta)
        return self._moment_fn(beta)

    def second_moment_matrix(self):
        """int alpha alpha^T dlambda."""
        dim = self.rep.dim
        out = np.zeros((dim, dim))
        for i in range(dim):
            for j in range(i, dim):
                beta = [0] * dim
                beta[i] += 1
                beta[j] += 1
                out[i, j] = out[j, i] = self._moment_fn(tuple(beta))
        return out

    def cumulant_transform(self, y):
        """int (e^{i<alpha,y>} - 1) dlambda, vectorized over leading axes."""
        return self._cumulant_fn(np.asarray(y, dtype=float))

    def real_cumulant_transform(self, y):
        """int (e^{<alpha,y>} - 1) dlambda (real-exponent reading)."""
        return self._real_cumulant_fn(np.asarray(y, dtype=float))

    def radial_density(self):
        """(density callable, r_max) for radial families; None otherwise."""
        return self._radial

    def _check_invariance(self):
        rng = np.random.default_rng(0x1e7)
        d = self.rep.d
        for _ in range(16):
            tau = self.rep.rotation_from_coeffs(random_rotation_coeffs(d, rng))
            ys = rng.normal(size=(16, self.rep.dim))
            ys *= rng.uniform(0.1, 3.0, size=(16, 1))
            a = self.cumulant_transform(ys @ tau)
            b = self.cumulant_transform(ys)
            if np.max(np.abs(a - b)) > 1e-8:
                raise ValueError("Lévy measure is not τ-invariant for the "
                                 "given representation")


def _gaussian_moment(beta, sigma2):
    """Mixed moment of N(0, sigma2 * I): product of (b-1)!! sigma^b terms."""
    if any(b % 2 for b in beta):
        return 0.0
    out = 1.0
    for b in beta:
        if b:
            out *= float(special.factorial2(b - 1)) * sigma2 ** (b // 2)
    return out


def _radial_gauss(rep, params):
    rho = float(params.get("rho", 1.0))
    s2 = float(params.get("mean_square", 1.0))
    dim = rep.dim
    sigma2 = s2 / dim
    sigma = np.sqrt(sigma2)
    r_max = 8.0 * np.sqrt(s2)

    def sampler(count, rng):
        z = sigma * rng.standard_normal((count, dim))
        # the truncation sphere sits 8 mean radii out; resampling beyond it
        # keeps the support compact without measurable bias
        for _ in range(64):
            bad = np.linalg.norm(z, axis=1) > r_max
            if not bad.any():
                break
            z[bad] = sigma * rng.standard_normal((bad.sum(), dim))
        return z

    def moment_fn(beta):
        return rho * _gaussian_moment(beta, sigma2)

    def cumulant_fn(y):
        q = np.sum(y * y, axis=-1)
        return rho * (np.exp(-0.5 * sigma2 * q) - 1.0)

    def real_cumulant_fn(y):
        q = np.sum(y * y, axis=-1)
        return rho * (np.exp(0.5 * sigma2 * q) - 1.0)

    def density(r):
        return r ** (dim - 1) * np.exp(-0.5 * r ** 2 / sigma2)

    return LevyMeasure("radial_gauss", rep, rho, params, sampler, moment_fn,
                       cumulant_fn, real_cumulant_fn,
                       radial=(density, r_max))


def _sphere_points(count, dim, rng):
    z = rng.standard_normal((count, dim))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def _exp_radial_moment(k, theta, r_max):
    """E r^k for density ~ e^(-r/theta) truncated to [0, r_max]."""
    x = r_max / theta
    num = theta ** k * special.gamma(k + 1) * special.gammainc(k + 1, x)
    den = special.gammainc(1.0, x)
    return num / den


def _radial_exponential(rep, params):
    rho = float(params.get("rho", 1.0))
    theta = float(params.get("theta", 1.0))
    r_max = float(params.get("r_max", 8.0 * theta))
    dim = rep.dim
    if theta <= 0 or r_max <= 0:
        raise ValueError("radial_exponential needs positive theta and r_max")
    if dim not in (1, 3):
        raise ValueError("radial_exponential cumulant transform implemented "
                         "for 1- and 3-dimensional mark spaces")
    tail = 1.0 - np.exp(-r_max / theta)

    def sampler(count, rng):
        u = rng.uniform(size=count)
        r = -theta * np.log1p(-tail * u)
        return r[:, None] * _sphere_points(count, dim, rng)

    def moment_fn(beta):
        return rho * _exp_radial_moment(sum(beta), theta, r_max) * \
            sphere_moment(dim, beta)

    def mean_sphere_cf(a):
        """E_r of the sphere characteristic function at radius a = |y|."""
        a = np.asarray(a, dtype=float)
        b = 1.0 / theta
        small = a < 1e-7
        a_safe = np.where(small, 1.0, a)
        if dim == 1:
            w = b - 1j * a_safe
            integral = ((1.0 - np.exp(-w * r_max)) / w).real
            out = integral / (theta * tail)
        else:
            w = (b - 1j * a_safe) * r_max
            # int_0^R e^(-br) sin(ar)/r dr = -Im Ein(w),
            # Ein(z) = gamma + log z + E1(z)
            ein = np.log(w) + special.exp1(w)
            integral = -(ein.imag)
            out = integral / (a_safe * theta * tail)
        m2 = _exp_radial_moment(2, theta, r_max)
        quad = 1.0 - a ** 2 * m2 / (2.0 * dim)
        return np.where(small, quad, out)

    def cumulant_fn(y):
        a = np.linalg.norm(np.atleast_1d(y), axis=-1)
        return rho * (mean_sphere_cf(a) - 1.0)

    def real_cumulant_fn(y):
        # real-exponent reading via the same radial average with the sphere
        # function continued to imaginary argument (cosh / sinh profiles)
        a = np.linalg.norm(np.atleast_1d(y), axis=-1)
        a = np.atleast_1d(a)
        out = np.empty(a.shape)
        grid = np.linspace(0.0, r_max, 4097)
        dens = np.exp(-grid / theta)
        dens /= np.trapz(dens, grid)
        for idx in np.ndindex(a.shape):
            z = grid * a[idx]
            if dim == 1:
                prof = np.cosh(z)
            else:
                prof = np.ones_like(z)
                nz = z > 1e-12
                prof[nz] = np.sinh(z[nz]) / z[nz]
            out[idx] = np.trapz(dens * prof, grid) - 1.0
        return rho * out.reshape(np.shape(y)[:-1])

    def density(r):
        return np.exp(-r / theta)

    return LevyMeasure("radial_exponential", rep, rho, params, sampler,
                       moment_fn, cumulant_fn, real_cumulant_fn,
                       radial=(density, r_max))


def _two_point(rep, params):
    rho = float(params.get("rho", 1.0))
    scale = float(params.get("scale", 1.0))
    v = np.asarray(params["direction"], dtype=float)
    if v.shape != (rep.dim,):
        raise ValueError("direction has wrong dimension")
    norm = np.linalg.norm(v)
    if norm == 0:
        raise ValueError("direction must be nonzero")
    defect = max(np.max(np.abs(s @ v)) for s in rep.generators)
    if defect > 1e-10 * norm:
        # the orbit of v is not the two-point set {v, -v}, so the measure
        # cannot be rotation invariant
        raise ValueError("Lévy measure is not τ-invariant for the given "
                         "representation")
    sv = scale * v

    def sampler(count, rng):
        signs = np.where(rng.uniform(size=count) < 0.5, 1.0, -1.0)
        return signs[:, None] * sv[None, :]

    def moment_fn(beta):
        if sum(beta) % 2:
            return 0.0
        return rho * float(np.prod(sv ** np.asarray(beta)))

    def cumulant_fn(y):
        return rho * (np.cos(y @ sv) - 1.0)

    def real_cumulant_fn(y):
        return rho * (np.cosh(y @ sv) - 1.0)

    return LevyMeasure("two_point", rep, rho, params, sampler, moment_fn,
                       cumulant_fn, real_cumulant_fn)


_FAMILIES = {
    "radial_gauss": _radial_gauss,
    "radial_exponential": _radial_exponential,
    "two_point": _two_point,
}


def builtin_levy(family, rep, params=None):
    """Construct a built-in jump-measure family for a representation."""
    if family not in _FAMILIES:
        raise ValueError("unknown Lévy family %r (have %s)"
                         % (family, ", ".join(sorted(_FAMILIES))))
    return _FAMILIES[family](rep, params or {})


class NoiseSpec:
    """Noise law: Gaussian covariance A plus optional jump measure.

    A must be symmetric positive semidefinite and commute with the lifted
    rotation action of the representation.
    """

    def __init__(self, rep, gaussian_cov=None, levy=None):
        self.rep = rep
        dim = rep.dim
        if gaussian_cov is None:
            gaussian_cov = np.zeros((dim, dim))
        a_mat = np.asarray(gaussian_cov, dtype=float)
        if a_mat.shape != (dim, dim):
            raise ValueError("Gaussian covariance has wrong shape")
        if np.max(np.abs(a_mat - a_mat.T)) > 1e-12:
            raise ValueError("Gaussian covariance must be symmetric")
        eigvals = np.linalg.eigvalsh(a_mat)
        if eigvals.min() < -1e-10:
            raise ValueError("Gaussian covariance must be positive "
                             "semidefinite")
        rng = np.random.default_rng(0xa5)
        for _ in range(8):
            tau = rep.rotation_from_coeffs(random_rotation_coeffs(rep.d, rng))
            if np.max(np.abs(tau @ a_mat - a_mat @ tau)) > 1e-10:
                raise ValueError("Gaussian covariance does not commute with "
                                 "the representation")
        if levy is not None and levy.rep.dim != dim:
            raise ValueError("jump measure and representation dimensions "
                             "differ")
        self.gaussian_cov = a_mat
        self.levy = levy

    @property
    def has_gaussian(self):
        return bool(np.any(self.gaussian_cov))

    @property
    def has_poisson(self):
        return self.levy is not None and self.levy.total_mass > 0

    def covariance_density(self):
        """A + int alpha alpha^T dlambda: second cumulant per unit volume."""
        out = self.gaussian_cov.copy()
        if self.has_poisson:
            out = out + self.levy.second_moment_matrix()
        return out


class NoiseRealization:
    """One sampled noise configuration.

    lattice_values holds the white-noise increments per cell (variance
    A / a^d); points and marks hold the Poisson atoms of the jump part,
    sampled on the box enlarged by the padding on every side.
    """

    def __init__(self, spec, box, seed, lattice_values, points, marks,
                 padding=0.0):
        self.spec = spec
        self.box = box
        self.seed = seed
        self.lattice_values = lattice_values
        self.points = points
        self.marks = marks
        self.padding = float(padding)

    @property
    def n_atoms(self):
        return len(self.points)


def sample_noise(spec, box, seed, padding=0.0):
    """Sample the noise on a lattice box.

    The Gaussian part is i.i.d. N(0, A / a^d) per cell; the Poisson part
    has count ~ Poisson(total_mass * padded volume), uniform positions and
    i.i.d. marks.  Each component uses its own keyed stream, so the draws
    are reproducible and independent of evaluation order.
    """
    dim = spec.rep.dim
    if spec.has_gaussian:
        rng = keyed_rng(seed, _TAG_GAUSS)
        z = rng.standard_normal(size=box.shape + (dim,))
        w, u = np.linalg.eigh(spec.gaussian_cov)
        root = (u * np.sqrt(np.clip(w, 0.0, None))) @ u.T
        lattice_values = z @ root.T / box.cell_volume ** 0.5
    else:
        lattice_values = np.zeros(box.shape + (dim,))

    if spec.has_poisson:
        side = box.L + 2.0 * padding
        rng = keyed_rng(seed, _TAG_POISSON)
        count = rng.poisson(spec.levy.total_mass * side ** box.d)
        points = rng.uniform(-padding, box.L + padding,
                             size=(count, box.d))
        marks = spec.levy.sample_marks(count, keyed_rng(seed, _TAG_MARKS))
    else:
        points = np.zeros((0, box.d))
        marks = np.zeros((0, dim))
    return NoiseRealization(spec, box, seed, lattice_values, points, marks,
                            padding=padding)


def charfunc_noise(spec, f, lat):
    """Characteristic functional E e^{i(eta,f)} for lattice site values f.

    Gaussian factor exp(-1/2 sum <f, A f> a^d) times the Poisson factor
    exp(sum psi(f) a^d) with psi the cumulant transform; the x-integrals
    are lattice cell sums.  The modulus never exceeds one.
    """
    f = np.asarray(f, dtype=float)
    if f.shape != lat.shape + (spec.rep.dim,):
        raise ValueError("test function has wrong lattice shape")
    cell = lat.cell_volume
    log_val = 0.0
    if spec.has_gaussian:
        quad = np.sum(f * (f @ spec.gaussian_cov.T))
        log_val += -0.5 * quad * cell
    if spec.has_poisson:
        log_val += np.sum(spec.levy.cumulant_transform(f)) * cell
    return complex(np.exp(log_val))
