"""Green functions of covariant operators, in momentum and position space.

Four backends share the mass-spectrum factorization det(sigma(p) + M) =
c * prod_k (|p|^2 + m_k^2)^(r_k):

* momentum_green: the exact inverse full symbol (sigma(p) + M)^(-1).
* partial_fractions: the residue decomposition G_hat(p) = sum R(p)/(t+m^2)^s
  with polynomial matrix numerators (confluent powers for repeated masses).
* lattice_kernel: inverse FFT of the continuum symbol inverse sampled on the
  momentum grid of a periodic box (spectral discretization).
* point_kernel: closed-form off-lattice evaluation G(x) = A(-i grad) U(x),
  where A is the adjugate polynomial of the full symbol and U the inverse
  Fourier transform of 1/det, a combination of Yukawa-type Bessel profiles
  (repeated poles handled by d/d(m^2) of the simple-pole profile).

Kernels are cached per (operator, lattice) behind a lock; caches are
write-once read-many, evaluation is pure afterwards.
"""

import struct
import threading
from math import comb, factorial

import numpy as np

from .lattice import Lattice
from .radial import yukawa_terms, terms_add, terms_deriv, terms_dmu, kv_ratio

_ADJ_SEED = 49017
_CACHE_LOCK = threading.Lock()
_LATTICE_CACHE = {}
_POINT_CACHE = {}

SNAPSHOT_MAGIC = b"CSPG"
SNAPSHOT_VERSION = 1


def require_strictly_positive(op):
    """Raise unless the operator's Green function is defined with a mass gap."""
    if hasattr(op, "green_symbol"):
        return  # pseudo-differential family with built-in gap
    spec = op.spectrum()
    if not spec.admissible:
        raise ValueError("Green function undefined: non-admissible mass spectrum")
    if not spec.strictly_positive:
        raise ValueError("zero mode at p=0: mass spectrum is not strictly positive")


def momentum_green(op, p):
    """(sigma(p) + M)^(-1) at momenta p of shape (..., d)."""
    require_strictly_positive(op)
    if hasattr(op, "green_symbol"):
        return op.green_symbol(p)
    return np.linalg.inv(op.full_symbol(p))


# ---------------------------------------------------------------------------
# adjugate polynomial fit
# ---------------------------------------------------------------------------

def _monomials(d, max_degree):
    """All exponent tuples of total degree <= max_degree, by degree."""
    monos = []
    for total in range(max_degree + 1):
        stack = [((), total)]
        level = []

        def fill(prefix, remaining):
            if len(prefix) == d - 1:
                level.append(prefix + (remaining,))
                return
            for k in range(remaining + 1):
                fill(prefix + (k,), remaining - k)

        fill((), total)
        monos.extend(sorted(level, reverse=True))
        del stack
    return monos


def _eval_monomials(monos, p):
    """Vandermonde block: p of shape (B, d) -> (B, n_monos)."""
    p = np.asarray(p, dtype=float)
    cols = np.empty((p.shape[0], len(monos)))
    for i, beta in enumerate(monos):
        col = np.ones(p.shape[0])
        for axis, a in enumerate(beta):
            if a:
                col = col * p[:, axis] ** a
        cols[:, i] = col
    return cols


def _adjugate_fit(op):
    """Fit adj(sigma(p) + M) as a matrix of polynomials in p.

    Entries of the adjugate are polynomials of total degree <= N-1 (each is a
    sum of products of N-1 entries of the full symbol, which is affine in p).
    Sampled as det * inverse at random momenta and recovered by least squares
    on a scaled Vandermonde system.

    Returns (monos, coefs, residual) with coefs of shape (n_monos, N, N).
    """
    n = op.n_in
    monos = _monomials(op.d, n - 1)
    rng = np.random.default_rng(_ADJ_SEED)
    n_samples = 3 * len(monos)
    scale = 1.0 + float(np.max(np.abs(op.M))) if op.M.size else 1.0
    p = rng.normal(scale=scale, size=(n_samples, op.d))
    symb = op.full_symbol(p)
    det = np.linalg.det(symb)
    adj = det[:, None, None] * np.linalg.inv(symb)

    vand = _eval_monomials(monos, p / scale)
    rhs = adj.reshape(n_samples, n * n)
    coef_s, _, _, _ = np.linalg.lstsq(vand, rhs, rcond=None)
    resid = np.max(np.abs(vand @ coef_s - rhs)) / max(np.max(np.abs(rhs)), 1e-300)
    degrees = np.array([sum(b) for b in monos], dtype=float)
    coefs = coef_s / scale ** degrees[:, None]
    return monos, coefs.reshape(len(monos), n, n), resid


# ---------------------------------------------------------------------------
# partial fractions
# ---------------------------------------------------------------------------

def _pole_weights(grouped):
    """Scalar partial-fraction weights for 1/prod_k (t + mu_k)^{r_k}.

    Returns {k: [w_{k,1}, ..., w_{k,r_k}]} so that the sum of
    w_{k,s}/(t+mu_k)^s reproduces the product inverse; confluent weights come
    from the Taylor expansion of the co-factor product around t = -mu_k.
    """
    mus = [m * m for m, _ in grouped]
    weights = {}
    for k, (m_k, r_k) in enumerate(grouped):
        series = np.zeros(r_k)
        series[0] = 1.0
        for l, (m_l, r_l) in enumerate(grouped):
            if l == k:
                continue
            delta = mus[l] - mus[k]
            fac = np.array([(-1) ** j * comb(r_l + j - 1, j)
                            * delta ** (-r_l - j) for j in range(r_k)])
            series = np.convolve(series, fac)[:r_k]
        weights[k] = [series[r_k - s] for s in range(1, r_k + 1)]
    return weights


class PoleTerm:
    """One summand R(p)/(|p|^2 + mass^2)^power of the residue decomposition."""

    def __init__(self, mass, power, monos, coefs):
        self.mass = float(mass)
        self.power = int(power)
        self.monos = monos
        self.coefs = coefs

    def numerator_at(self, p):
        p2 = np.atleast_2d(np.asarray(p, dtype=float))
        vand = _eval_monomials(self.monos, p2)
        return np.tensordot(vand, self.coefs, axes=(1, 0))


class ResidueDecomposition:
    """G_hat as a sum of polynomial numerators over mass-pole denominators."""

    def __init__(self, op, terms, reconstruction_residual):
        self.op = op
        self.terms = terms
        self.reconstruction_residual = reconstruction_residual

    def green_at(self, p):
        p2 = np.atleast_2d(np.asarray(p, dtype=float))
        t = np.sum(p2 * p2, axis=-1)
        out = np.zeros((p2.shape[0], self.op.n_in, self.op.n_in), dtype=complex)
        for term in self.terms:
            denom = (t + term.mass ** 2) ** term.power
            out += term.numerator_at(p2) / denom[:, None, None]
        p = np.asarray(p)
        if p.ndim == 1:
            return out[0]
        return out.reshape(p.shape[:-1] + out.shape[1:])


def partial_fractions(op):
    """Decompose the momentum Green function over its mass poles."""
    require_strictly_positive(op)
    spec = op.spectrum()
    if spec.degree == 0:
        return ResidueDecomposition(op, [], 0.0)
    monos, adj_coefs, _ = _adjugate_fit(op)
    weights = _pole_weights(spec.grouped)
    c = spec.prefactor
    terms = []
    for k, (m_k, r_k) in enumerate(spec.grouped):
        for s in range(1, r_k + 1):
            w = weights[k][s - 1]
            if w == 0.0:
                continue
            terms.append(PoleTerm(m_k, s, monos, adj_coefs * (w / c)))
    dec = ResidueDecomposition(op, terms, 0.0)

    rng = np.random.default_rng(_ADJ_SEED + 1)
    p = rng.normal(scale=2.0, size=(64, op.d))
    direct = momentum_green(op, p)
    resid = np.max(np.abs(dec.green_at(p) - direct)) / np.max(np.abs(direct))
    dec.reconstruction_residual = float(resid)
    if resid > 1e-6:
        raise ValueError(
            "partial fraction reconstruction failed (residual %.2e)" % resid)
    return dec


# ---------------------------------------------------------------------------
# point kernel
# ---------------------------------------------------------------------------

class _CompiledKernel:
    """Batched evaluator for matrix-valued Bessel term sets.

    term_maps is a list of (mass, {key: (N_out, N_in) array}) pairs with keys
    (q2, alpha, b, j) as in the radial module.  Coefficients are folded into
    a (n_keys, N*N) matrix; evaluation is one Bessel call per distinct
    (mass, j) followed by a single matrix product.
    """

    def __init__(self, d, n_out, n_in, term_maps, imag_tol=1e-7):
        self.d = d
        self.n_out = n_out
        self.n_in = n_in
        self.nu = d / 2.0 - 1.0
        keys = []      # (mass_index, alpha, b, j)
        coefs = []
        self.masses = []
        scale = 0.0
        for k, (mass, tmap) in enumerate(term_maps):
            self.masses.append(float(mass))
            for (q2, alpha, b, j), cmat in tmap.items():
                folded = np.asarray(cmat, dtype=complex) * mass ** q2
                keys.append((k, alpha, b, j))
                coefs.append(folded)
                scale = max(scale, np.max(np.abs(folded)))
        coefs = np.array(coefs)
        imag = np.max(np.abs(coefs.imag)) / scale if len(coefs) else 0.0
        if imag > imag_tol:
            raise ValueError(
                "kernel coefficients are not real (residual %.2e)" % imag)
        self.imag_residual = float(imag)
        # merge keys that coincide after folding
        merged = {}
        for key, cmat in zip(keys, coefs.real):
            if key in merged:
                merged[key] = merged[key] + cmat
            else:
                merged[key] = cmat
        self.keys = sorted(merged.keys())
        self.coef_matrix = np.array([merged[k].ravel() for k in self.keys])
        self.max_alpha = [max((k[1][axis] for k in self.keys), default=0)
                          for axis in range(d)]
        self.max_b = max((k[2] for k in self.keys), default=0)
        # evaluation plan: distinct monomials x^alpha r^2b shared across
        # keys, and keys grouped by radial factor so each group is one
        # scaled matrix product
        monos = sorted({(alpha, b) for (_, alpha, b, _) in self.keys})
        mono_index = {mb: i for i, mb in enumerate(monos)}
        self.monomials = monos
        groups = {}
        for i, (k, alpha, b, j) in enumerate(self.keys):
            groups.setdefault((k, j), []).append(
                (mono_index[(alpha, b)], i))
        self.groups = [
            (k, j, np.array([m for m, _ in members]),
             self.coef_matrix[[i for _, i in members]])
            for (k, j), members in sorted(groups.items())]

    def __call__(self, x, chunk=16384):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = np.atleast_2d(x).reshape(-1, self.d)
        out = np.empty((len(pts), self.n_out, self.n_in))
        for lo in range(0, len(pts), chunk):
            out[lo:lo + chunk] = self._eval_chunk(pts[lo:lo + chunk])
        if single:
            return out[0]
        return out.reshape(x.shape[:-1] + (self.n_out, self.n_in))

    def _eval_chunk(self, pts):
        r = np.sqrt(np.sum(pts * pts, axis=-1))
        if np.any(r == 0.0):
            raise ValueError("kernel singular at origin")
        powers = [None] * self.d
        for axis in range(self.d):
            deg = self.max_alpha[axis]
            cols = np.empty((deg + 1, len(pts)))
            cols[0] = 1.0
            for a in range(1, deg + 1):
                cols[a] = cols[a - 1] * pts[:, axis]
            powers[axis] = cols
        r2pow = np.empty((self.max_b + 1, len(pts)))
        r2pow[0] = 1.0
        for b in range(1, self.max_b + 1):
            r2pow[b] = r2pow[b - 1] * (r * r)
        mono = np.empty((len(pts), len(self.monomials)))
        for i, (alpha, b) in enumerate(self.monomials):
            col = r2pow[b]
            for axis, a in enumerate(alpha):
                if a:
                    col = col * powers[axis][a]
            mono[:, i] = col
        flat = np.zeros((len(pts), self.n_out * self.n_in))
        for k, j, idx, cmat in self.groups:
            kv = kv_ratio(self.nu + j, self.masses[k] * r)
            flat += kv[:, None] * (mono[:, idx] @ cmat)
        return flat.reshape(len(pts), self.n_out, self.n_in)


class PointKernel:
    """Closed-form position-space Green function of a covariant operator.

    Built once per operator: the adjugate polynomial A(p) (so that
    G_hat = A/det), scalar partial-fraction weights of 1/det, and the
    Bessel term sets obtained by applying A(-i grad) to the radial profiles.
    Evaluation is defined away from x = 0.
    """

    def __init__(self, op):
        require_strictly_positive(op)
        spec = op.spectrum()
        if spec.degree == 0:
            raise ValueError(
                "operator has no massive poles; position kernel is distributional")
        self.op = op
        self.spectrum = spec
        self.d = op.d
        self.n_out = op.n_out
        self.n_in = op.n_in
        monos, adj_coefs, adj_resid = self._fit = _adjugate_fit(op)
        weights = _pole_weights(spec.grouped)
        c = spec.prefactor

        # scalar profiles U_{k,s} = IFT[(t + mu_k)^(-s)] as term sets with the
        # mass symbolic, then their spatial derivatives per adjugate monomial
        self._entry_terms = []
        self._deriv_cache = {}
        for k, (m_k, r_k) in enumerate(spec.grouped):
            base = yukawa_terms(self.d)
            profiles = {1: base}
            for s in range(2, r_k + 1):
                # IFT[(t+mu)^-s] = (-1)^(s-1)/(s-1)! d^(s-1)/dmu^(s-1) Y
                prev = profiles[s - 1]
                nxt = {}
                terms_add(nxt, terms_dmu(prev), -1.0 / (s - 1))
                profiles[s] = nxt
            tmap = {}
            for s in range(1, r_k + 1):
                w = weights[k][s - 1]
                if w == 0.0:
                    continue
                for beta, cmat in zip(monos, adj_coefs):
                    if np.all(cmat == 0.0):
                        continue
                    db = self._spatial_deriv(k, s, beta, profiles[s])
                    order = sum(beta)
                    factor = cmat * ((-1j) ** order * (w / c))
                    for key, cc in db.items():
                        prev = tmap.get(key)
                        tmap[key] = cc * factor if prev is None else prev + cc * factor
            self._entry_terms.append((m_k, tmap))
        self._deriv_cache = None
        self._compiled = _CompiledKernel(op.d, op.n_out, op.n_in,
                                         self._entry_terms)
        self.adjugate_residual = adj_resid
        self.imag_residual = self._compiled.imag_residual

    def _spatial_deriv(self, k, s, beta, base):
        """d^beta applied to the profile term set, memoized incrementally."""
        key = (k, s, beta)
        cached = self._deriv_cache.get(key)
        if cached is not None:
            return cached
        if sum(beta) == 0:
            result = base
        else:
            axis = next(i for i, b in enumerate(beta) if b > 0)
            down = beta[:axis] + (beta[axis] - 1,) + beta[axis + 1:]
            result = terms_deriv(self._spatial_deriv(k, s, down, base), axis)
        self._deriv_cache[key] = result
        return result

    def __call__(self, x):
        return self._compiled(x)

    def derivative_combo(self, combo):
        """Compiled evaluator of sum_i c_i * d^(beta_i) G.

        combo is a list of (beta, coeff) pairs with beta a multi-index tuple.
        Used for mollifier Taylor expansions of smeared kernels.
        """
        maps = []
        for mass, tmap in self._entry_terms:
            acc = {}
            for beta, coeff in combo:
                part = tmap
                for axis, reps in enumerate(beta):
                    for _ in range(reps):
                        part = terms_deriv(part, axis)
                terms_add(acc, part, coeff)
            maps.append((mass, acc))
        return _CompiledKernel(self.op.d, self.op.n_out, self.op.n_in, maps)


class FractionalPointKernel:
    """Radial position kernel of the scalar pseudo-differential family.

    IFT[(1 + |p|^2)^(-lam)] in d dimensions is c r^(lam - d/2) K_(d/2-lam)(r)
    with c = 2^(1-lam) / ((2 pi)^(d/2) Gamma(lam)): positive, monotone, and
    singular at the origin for lam < d/2.  Matches the (n_out, n_in) matrix
    calling convention of PointKernel with 1x1 values.
    """

    def __init__(self, lam, d):
        from scipy import special
        self.lam = float(lam)
        self.d = int(d)
        self.n_out = self.n_in = 1
        self._coef = 2.0 ** (1.0 - lam) / (
            (2.0 * np.pi) ** (d / 2.0) * special.gamma(lam))
        self._nu = d / 2.0 - lam

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        r = np.sqrt(np.sum(np.atleast_2d(x) ** 2, axis=-1))
        if np.any(r == 0.0):
            raise ValueError("kernel singular at origin")
        val = self._coef * kv_ratio(self._nu, r)
        out = val[..., None, None]
        if single:
            return out[0]
        return out.reshape(x.shape[:-1] + (1, 1))


def point_kernel(op, x=None):
    """Position-space kernel of op; returns the evaluator or its value at x."""
    key = op.cache_key()
    with _CACHE_LOCK:
        kern = _POINT_CACHE.get(key)
    if kern is None:
        if hasattr(op, "green_symbol"):
            kern = FractionalPointKernel(op.lam, op.d)
        else:
            kern = PointKernel(op)
        with _CACHE_LOCK:
            _POINT_CACHE.setdefault(key, kern)
    if x is None:
        return kern
    return kern(x)


# ---------------------------------------------------------------------------
# lattice kernel
# ---------------------------------------------------------------------------

class LatticeKernel:
    """Position-space kernel sampled on a periodic lattice.

    values has shape lat.shape + (N_out, N_in); value_at looks up the nearest
    lattice site (exact for site-commensurate arguments).
    """

    def __init__(self, lat, values, op=None):
        self.lat = lat
        self.values = values
        self.op = op

    @property
    def shape(self):
        return self.values.shape

    def value_at_site(self, idx):
        return self.values[tuple(int(i) % self.lat.n for i in idx)]

    def value_at(self, x):
        return self.values[self.lat.site_index(x)]


def _negate_mode_indices(arr, d):
    """Reindex a lattice grid array by i -> (-i) mod n on each spatial axis."""
    for ax in range(d):
        arr = np.roll(np.flip(arr, axis=ax), 1, axis=ax)
    return arr


def green_hat_grid(op, lat, chunk=65536):
    """Momentum Green function sampled on the lattice grid, cached.

    The grid is the pointwise inverse of the exact continuum symbol,
    Hermitian-projected so that Ghat(-k) = conj(Ghat(k)) holds mode by
    mode.  The projection only matters on the Nyquist planes: there the
    grid momentum is its own negative, so an odd (first-order) symbol
    cannot be conjugate-symmetric and the position kernel would pick up
    a spurious imaginary part.  Averaging each mode with the conjugate
    of its index-negated partner restores the symmetry exactly while
    leaving every interior mode untouched.
    """
    if getattr(op, "d", lat.d) != lat.d:
        raise ValueError("operator and lattice dimensions differ")
    cache_key = ("ghat", op.cache_key(), lat.key())
    with _CACHE_LOCK:
        cached = _LATTICE_CACHE.get(cache_key)
    if cached is not None:
        return cached

    n = op.n_in
    p_flat = lat.momentum_grid().reshape(-1, lat.d)
    out = np.empty((len(p_flat), n, n), dtype=complex)
    use_symbol = hasattr(op, "green_symbol")
    for lo in range(0, len(p_flat), chunk):
        pc = p_flat[lo:lo + chunk]
        if use_symbol:
            out[lo:lo + chunk] = op.green_symbol(pc)
        else:
            out[lo:lo + chunk] = np.linalg.inv(op.full_symbol(pc))
    out = out.reshape(lat.shape + (n, n))
    if not use_symbol:
        out = 0.5 * (out + _negate_mode_indices(out, lat.d).conj())
    with _CACHE_LOCK:
        _LATTICE_CACHE.setdefault(cache_key, out)
        out = _LATTICE_CACHE[cache_key]
    return out


def lattice_symbol_grid(op, lat, chunk=65536):
    """Forward full symbol on the lattice momentum grid.

    Defined as the pointwise matrix inverse of green_hat_grid, so the
    forward-times-Green identity holds exactly on every mode including
    the Hermitian-projected Nyquist planes.  Even pseudo-differential
    symbols are their own exact inverses-of-inverses, so those are
    evaluated directly.
    """
    if getattr(op, "d", lat.d) != lat.d:
        raise ValueError("operator and lattice dimensions differ")
    if hasattr(op, "green_symbol"):
        return op.full_symbol(lat.momentum_grid())
    ghat = green_hat_grid(op, lat)
    n = ghat.shape[-1]
    flat = ghat.reshape(-1, n, n)
    out = np.empty_like(flat)
    for lo in range(0, len(flat), chunk):
        out[lo:lo + chunk] = np.linalg.inv(flat[lo:lo + chunk])
    return out.reshape(ghat.shape)


def lattice_kernel(op, lat, allow_small_box=False):
    """Inverse FFT of the sampled momentum Green function.

    Requires m_min * L >= 5 unless allow_small_box is set: the position
    kernel wraps around the torus with relative weight ~ e^(-m_min L).
    """
    require_strictly_positive(op)
    cache_key = (op.cache_key(), lat.key())
    with _CACHE_LOCK:
        cached = _LATTICE_CACHE.get(cache_key)
    if cached is not None:
        return cached

    if hasattr(op, "green_symbol"):
        m_min = op.m_min
    else:
        spec = op.spectrum()
        m_min = min(np.real(spec.masses)) if len(spec.masses) else None
    if m_min is not None and m_min * lat.L < 5.0 and not allow_small_box:
        raise ValueError(
            "box too small for mass gap: wrap-around exceeds tolerance "
            "(m_min*L = %.3g < 5)" % (m_min * lat.L))

    ghat = green_hat_grid(op, lat)
    n = ghat.shape[-1]
    spatial = tuple(range(lat.d))
    values = np.empty(lat.shape + (n, n))
    scale = np.max(np.abs(ghat))
    for row in range(n):
        for col in range(n):
            g = np.fft.ifftn(ghat[..., row, col], axes=spatial)
            imag = np.max(np.abs(g.imag))
            if imag > 1e-8 * scale:
                raise ValueError(
                    "lattice kernel has a non-real part (%.2e)" % imag)
            values[..., row, col] = g.real / lat.cell_volume
    kern = LatticeKernel(lat, values, op=op)
    with _CACHE_LOCK:
        _LATTICE_CACHE.setdefault(cache_key, kern)
        kern = _LATTICE_CACHE[cache_key]
    return kern


def lattice_delta_residual(op, kern):
    """Max deviation of (full symbol) * FFT(kernel) from the identity.

    The lattice delta has value a^(-d) at the origin site, so a perfect
    kernel satisfies this identity exactly up to FFT roundoff.
    """
    lat = kern.lat
    spatial = tuple(range(lat.d))
    n = kern.values.shape[-1]
    ghat = np.empty(lat.shape + (n, n), dtype=complex)
    for row in range(n):
        for col in range(n):
            ghat[..., row, col] = np.fft.fftn(kern.values[..., row, col],
                                              axes=spatial) * lat.cell_volume
    symb = lattice_symbol_grid(op, lat)
    resid = symb @ ghat - np.eye(n)
    return float(np.max(np.abs(resid)))


def fractional_kernel(lam, lat):
    """Scalar lattice kernel of (1 - Laplacian)^(-lam), lam in (0, 1/2]."""
    from .operators import FractionalOperator
    op = FractionalOperator(lam, d=lat.d)
    return lattice_kernel(op, lat)


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------

def save_kernel_snapshot(path, kern):
    """Binary kernel dump: header (magic, version, d, n, N, L) + f64 values."""
    lat = kern.lat
    n_comp = kern.values.shape[-1]
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<IIIId", SNAPSHOT_VERSION, lat.d, lat.n,
                             n_comp, lat.L))
        fh.write(np.ascontiguousarray(kern.values, dtype="<f8").tobytes())


def load_kernel_snapshot(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SNAPSHOT_MAGIC:
            raise ValueError("not a kernel snapshot (bad magic)")
        version, d, n, n_comp, L = struct.unpack("<IIIId", fh.read(24))
        if version != SNAPSHOT_VERSION:
            raise ValueError("unsupported snapshot version %d" % version)
        lat = Lattice(L=L, n=n, d=d)
        count = lat.n_sites * n_comp * n_comp
        data = np.frombuffer(fh.read(count * 8), dtype="<f8", count=count)
        values = data.reshape(lat.shape + (n_comp, n_comp)).copy()
    return LatticeKernel(lat, values)


# ---------------------------------------------------------------------------
# decay profile
# ---------------------------------------------------------------------------

class DecayProfile:
    """Shell maxima of |G| and the fitted exponential decay rate."""

    def __init__(self, radii, shell_max, rate, passed, m_min):
        self.radii = np.asarray(radii, dtype=float)
        self.shell_max = np.asarray(shell_max, dtype=float)
        self.rate = rate
        self.passed = passed
        self.m_min = m_min

    def __repr__(self):
        return "DecayProfile(rate=%s, passed=%s)" % (self.rate, self.passed)


def decay_profile(op, radii=None, n_dirs=16):
    """Sample max |G| on spherical shells and fit the exponential rate.

    The fit runs on log(r^((d-1)/2) * shell max), compensating the algebraic
    prefactor of massive kernels, and passes if the fitted rate is at least
    0.8 * m_min.
    """
    kern = point_kernel(op)
    m_min = op.m_min
    if radii is None:
        radii = np.linspace(2.0, 6.0, 9) / m_min
    radii = np.asarray(radii, dtype=float)
    if radii.size == 0:
        return DecayProfile([], [], float("nan"), False, m_min)
    rng = np.random.default_rng(_ADJ_SEED + 2)
    dirs = rng.normal(size=(n_dirs, op.d))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    shell_max = np.empty(len(radii))
    for i, r in enumerate(radii):
        vals = kern(r * dirs)
        shell_max[i] = np.max(np.abs(vals))
    comp = shell_max * radii ** ((op.d - 1) / 2.0)
    slope = np.polyfit(radii, np.log(comp), 1)[0]
    rate = -float(slope)
    return DecayProfile(radii, shell_max, rate, rate >= 0.8 * m_min, m_min)
