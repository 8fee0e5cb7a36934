"""First-order operator multiplets D = sum_i B_i d_i + M and their symbols.

An operator maps fields transforming under rep_in to fields transforming
under rep_out.  Its momentum symbol is sigma(p) = i * sum_j B_j p_j and the
full symbol sigma(p) + M.  Rotation equivariance of D is the commuting of

    D (tau_in(R) f)(R^-1 x)  =  tau_out(R) (D f)(R^-1 x)

which in infinitesimal form (one condition per rotation plane a) reads

    S'_a M - M S_a = 0
    S'_a B_m - B_m S_a = sum_l (l_a)_{lm} B_l

with l_a the defining-representation generator.  check_covariance tests both,
plus finite-rotation conjugation of the full symbol as a second route.

For an equivariant operator det(sigma(p) + M) depends on p only through
t = |p|^2 and factors as c * prod_k (t + m_k^2) with at most N/2 factors;
mass_spectrum recovers the masses m_k and prefactor c by polynomial fitting
along one ray plus a rotation-invariance cross-check at random momenta.
"""

import hashlib

import numpy as np

from .representations import builtin_representation, defining_generators, so_planes

__all__ = [
    "CovariantOperator",
    "CovarianceReport",
    "MassSpectrum",
    "check_covariance",
    "mass_spectrum",
    "proca_operator",
    "scalar_mass_operator",
    "euclidean_dirac_operator",
    "operator_direct_sum",
    "FractionalOperator",
]

_SPECTRUM_SEED = 20260823
_FINITE_ANGLES = (np.pi / 2, 1.0, 2.37)


def _as_rep(rep, d):
    if rep is None:
        return None
    if isinstance(rep, str):
        return builtin_representation(rep, d)
    return rep


class CovariantOperator:
    """First-order operator given by its coefficient matrices.

    Parameters
    ----------
    B : array_like, shape (d, N_out, N_in)
        Coefficients of the partial derivatives, B[i] multiplying d/dx_i.
    M : array_like, shape (N_out, N_in)
        Constant (mass) term.
    rep_in, rep_out : Representation or str or None
        How source and target multiplets transform; strings are resolved
        through builtin_representation.
    """

    def __init__(self, B, M, rep_in=None, rep_out=None, name=""):
        B = np.asarray(B, dtype=float)
        M = np.asarray(M, dtype=float)
        if B.ndim != 3:
            raise ValueError("B must have shape (d, N_out, N_in)")
        d = B.shape[0]
        if M.shape != B.shape[1:]:
            raise ValueError(
                "M shape %s does not match B blocks %s" % (M.shape, B.shape[1:])
            )
        self.d = d
        self.B = B
        self.M = M
        self.n_out, self.n_in = M.shape
        self.rep_in = _as_rep(rep_in, d)
        self.rep_out = _as_rep(rep_out, d)
        if self.rep_in is not None and self.rep_in.dim != self.n_in:
            raise ValueError("rep_in dimension does not match operator columns")
        if self.rep_out is not None and self.rep_out.dim != self.n_out:
            raise ValueError("rep_out dimension does not match operator rows")
        self.name = name
        self._spectrum = None

    def __repr__(self):
        return "CovariantOperator(d=%d, %dx%d, name=%r)" % (
            self.d, self.n_out, self.n_in, self.name,
        )

    def symbol(self, p):
        """Principal symbol i * sum_j B_j p_j, vectorized over momenta.

        p has shape (..., d); the result has shape (..., N_out, N_in).
        """
        p = np.asarray(p, dtype=float)
        return 1j * np.tensordot(p, self.B, axes=(-1, 0))

    def full_symbol(self, p):
        """sigma(p) + M."""
        return self.symbol(p) + self.M

    def spectrum(self):
        """Cached mass_spectrum of this operator."""
        if self._spectrum is None:
            self._spectrum = mass_spectrum(self)
        return self._spectrum

    @property
    def m_min(self):
        masses = self.spectrum().masses
        if len(masses) == 0:
            raise ValueError("operator has no mass poles")
        return float(np.min(np.real(masses)))

    def cache_key(self):
        """Content hash used to key kernel caches."""
        h = hashlib.sha1()
        h.update(np.int64(self.d).tobytes())
        h.update(np.ascontiguousarray(self.B).tobytes())
        h.update(np.ascontiguousarray(self.M).tobytes())
        return h.hexdigest()


class CovarianceReport:
    """Result of check_covariance: residuals of the equivariance conditions."""

    def __init__(self, mass_residual, gradient_residual, finite_residual, tol):
        self.mass_residual = mass_residual
        self.gradient_residual = gradient_residual
        self.finite_residual = finite_residual
        self.residual = max(mass_residual, gradient_residual)
        self.tol = tol
        self.passed = self.residual < tol and finite_residual < max(tol, 1e-8)

    def __repr__(self):
        return (
            "CovarianceReport(residual=%.3e, finite=%.3e, passed=%s)"
            % (self.residual, self.finite_residual, self.passed)
        )


def check_covariance(op, tol=1e-10):
    """Test rotation equivariance of an operator.

    Evaluates the infinitesimal intertwining conditions for every rotation
    plane and, as an independent route, conjugates the full symbol by finite
    rotations (angles pi/2, 1.0, 2.37 in each plane) at 8 random momenta:

        tau_out(R) (sigma(p) + M) tau_in(R)^T  =  sigma(R p) + M

    Returns a CovarianceReport; residuals are max-abs-entry defects.
    """
    if op.rep_in is None or op.rep_out is None:
        raise ValueError("operator carries no representations to check against")
    ell = defining_generators(op.d)
    s_in = op.rep_in.generators
    s_out = op.rep_out.generators
    # Frobenius defect norms: exactly invariant under orthogonal basis changes
    mass_res = 0.0
    grad_res = 0.0
    for a in range(len(so_planes(op.d))):
        mass_res = max(mass_res, np.linalg.norm(s_out[a] @ op.M - op.M @ s_in[a]))
        for m in range(op.d):
            lhs = s_out[a] @ op.B[m] - op.B[m] @ s_in[a]
            rhs = np.tensordot(ell[a][:, m], op.B, axes=(0, 0))
            grad_res = max(grad_res, np.linalg.norm(lhs - rhs))

    rng = np.random.default_rng(_SPECTRUM_SEED)
    momenta = rng.normal(size=(8, op.d))
    finite_res = 0.0
    for a, plane in enumerate(so_planes(op.d)):
        for angle in _FINITE_ANGLES:
            r_def = builtin_representation("vector", op.d).rotation(plane, angle)
            r_in = op.rep_in.rotation(plane, angle)
            r_out = op.rep_out.rotation(plane, angle)
            for p in momenta:
                lhs = r_out @ op.full_symbol(p) @ r_in.T
                rhs = op.full_symbol(r_def @ p)
                finite_res = max(finite_res, np.max(np.abs(lhs - rhs)))
    return CovarianceReport(mass_res, grad_res, finite_res, tol)


class MassSpectrum:
    """Factorization det(sigma(p)+M) = c * prod_k (|p|^2 + m_k^2).

    masses lists each m_k with multiplicity, sorted ascending; grouped pairs
    (mass, multiplicity) cluster numerically coincident roots.
    """

    def __init__(self, masses, prefactor, degree, admissible, strictly_positive,
                 fit_residual, invariance_residual, grouped):
        self.masses = np.asarray(masses)
        self.prefactor = prefactor
        self.degree = degree
        self.admissible = admissible
        self.strictly_positive = strictly_positive
        self.fit_residual = fit_residual
        self.invariance_residual = invariance_residual
        self.grouped = grouped

    def det_at(self, p):
        """Evaluate the fitted factorization at momenta p (..., d)."""
        t = np.sum(np.asarray(p, dtype=float) ** 2, axis=-1)
        out = np.full(np.shape(t), self.prefactor, dtype=complex)
        for m, r in self.grouped:
            out = out * (t + m ** 2) ** r
        return out

    def __repr__(self):
        return "MassSpectrum(masses=%s, prefactor=%s, admissible=%s)" % (
            np.round(self.masses, 6).tolist(), self.prefactor, self.admissible,
        )


def _cluster_roots(roots, rel_tol=1e-3):
    """Group nearly coincident polynomial roots into (value, multiplicity).

    Repeated roots of a fitted polynomial split by roughly the multiplicity-th
    root of the coefficient noise, so the radius is deliberately loose;
    centers are re-polished afterwards.
    """
    roots = sorted(roots, key=lambda z: (z.real, z.imag))
    groups = []
    for z in roots:
        if groups:
            zs, count = groups[-1]
            center = zs / count
            if abs(z - center) <= rel_tol * max(1.0, abs(center)):
                groups[-1] = (zs + z, count + 1)
                continue
        groups.append((z, 1))
    return [(zs / count, count) for zs, count in groups]


def _polish_root(coef_lowfirst, center, mult, iters=8):
    """Newton-polish a root of multiplicity mult.

    A root of multiplicity r of p is a simple root of the (r-1)-th
    derivative, where Newton converges quadratically.
    """
    poly = np.polynomial.polynomial.Polynomial(coef_lowfirst)
    for _ in range(mult - 1):
        poly = poly.deriv()
    dpoly = poly.deriv()
    z = center
    for _ in range(iters):
        dz = dpoly(z)
        if dz == 0:
            break
        step = poly(z) / dz
        z = z - step
        if abs(step) < 1e-15 * max(1.0, abs(z)):
            break
    return z


def mass_spectrum(op, rel_tol=1e-8):
    """Extract masses and prefactor from det(sigma(p) + M).

    The determinant is sampled along one random ray at Chebyshev nodes in
    t = |p|^2 over [0, 4 (N max|B|)^2 + 4 max|M|^2], fitted by a polynomial of
    degree at most N/2 (least squares on the scaled Vandermonde), and the
    factorization is cross-checked against direct determinant evaluation at 32
    random momenta.  Raises if the determinant fails that rotation-invariance
    check.
    """
    if op.n_in != op.n_out:
        raise ValueError("mass spectrum needs a square operator")
    n_comp = op.n_in
    rng = np.random.default_rng(_SPECTRUM_SEED)
    u = rng.normal(size=op.d)
    u /= np.linalg.norm(u)

    b_max = np.max(np.abs(op.B)) if op.B.size else 0.0
    m_max = np.max(np.abs(op.M)) if op.M.size else 0.0
    horizon = 4.0 * (n_comp * b_max) ** 2 + 4.0 * m_max ** 2
    if horizon <= 0.0:
        horizon = 1.0
    deg_max = n_comp // 2
    n_nodes = max(2 * deg_max + 6, 12)
    # Chebyshev nodes on [0, horizon]
    theta = (2 * np.arange(n_nodes) + 1) * np.pi / (2 * n_nodes)
    t_nodes = horizon * 0.5 * (1.0 - np.cos(theta))
    dets = np.linalg.det(op.full_symbol(np.sqrt(t_nodes)[:, None] * u))

    s = t_nodes / horizon
    vand = s[:, None] ** np.arange(deg_max + 1)
    coef_s, _, _, _ = np.linalg.lstsq(vand, dets, rcond=None)
    coef = coef_s / horizon ** np.arange(deg_max + 1)
    det_scale = max(np.max(np.abs(dets)), 1e-300)
    fit_res = np.max(np.abs(vand @ coef_s - dets)) / det_scale

    coef_scale = np.max(np.abs(coef))
    if coef_scale < 1e-12 * max(1.0, det_scale / max(horizon, 1.0) ** deg_max):
        # identically vanishing determinant (degenerate operator)
        spec = MassSpectrum([], 0.0, 0, False, False, fit_res, 0.0, [])
        return spec
    if fit_res > max(1e-6, rel_tol):
        raise ValueError(
            "determinant not a function of |p|^2 (ray fit residual %.2e); "
            "operator is not rotation covariant" % fit_res
        )
    degree = deg_max
    while degree > 0 and abs(coef[degree]) < 1e-9 * coef_scale:
        degree -= 1
    coef = coef[: degree + 1]
    prefactor = coef[-1]
    if degree > 0:
        roots = np.roots(coef[::-1])
        grouped_roots = _cluster_roots([complex(z) for z in roots])
        grouped_roots = [(_polish_root(coef, z, mult), mult)
                         for z, mult in grouped_roots]
    else:
        grouped_roots = []

    grouped = []
    masses = []
    admissible = abs(prefactor) > 0.0
    for root, mult in grouped_roots:
        msq = -root
        if abs(msq.imag) > 1e-6 * max(1.0, abs(msq)) or msq.real < -1e-9 * max(1.0, abs(msq)):
            admissible = False
            m_val = complex(np.sqrt(msq + 0j))
        else:
            m_val = float(np.sqrt(max(msq.real, 0.0)))
        grouped.append((m_val, mult))
        masses.extend([m_val] * mult)

    if abs(prefactor.imag) < 1e-8 * max(1.0, abs(prefactor)):
        prefactor = prefactor.real

    order = np.argsort([np.real(m) for m in masses], kind="stable")
    masses = [masses[i] for i in order]
    grouped = sorted(grouped, key=lambda mr: np.real(mr[0]))
    strictly_positive = admissible and all(np.real(m) > 1e-6 for m in masses)

    spec = MassSpectrum(masses, prefactor, degree, admissible, strictly_positive,
                        fit_res, 0.0, grouped)

    # rotation-invariance cross-check at random momenta
    momenta = rng.normal(scale=np.sqrt(horizon) / 3.0, size=(32, op.d))
    direct = np.linalg.det(op.full_symbol(momenta))
    model = spec.det_at(momenta)
    inv_res = np.max(np.abs(direct - model) / np.maximum(np.abs(direct), det_scale * 1e-6))
    spec.invariance_residual = inv_res
    if inv_res > max(rel_tol, 100.0 * fit_res):
        raise ValueError(
            "determinant not a function of |p|^2 (invariance residual %.2e); "
            "operator is not rotation covariant" % inv_res
        )
    return spec


def proca_operator(m, b=1.0, c=-1.0):
    """Massive vector-field operator on a double vector multiplet in d=3.

    The 6x6 block layout couples two 3-vectors (u, v) through curls:

        D (u, v) = (m u + b curl-block v,  c curl-block u + m v)

    with the curl block C = [[0, dz, -dy], [-dz, 0, dx], [dy, -dx, 0]].
    Requires m > 0 and b*c = -1, which makes det(sigma(p)+M) equal to
    m^2 (|p|^2 + m^2)^2 with the real double mass m.
    """
    if m <= 0:
        raise ValueError("proca operator requires m > 0")
    if abs(b * c + 1.0) > 1e-12:
        raise ValueError("proca operator requires b*c = -1")
    B = np.zeros((3, 6, 6))
    # curl block coefficient matrices: C = sum_l Chat_l d_l with
    # Chat_1 = [[0,0,0],[0,0,1],[0,-1,0]], Chat_2 = [[0,0,-1],[0,0,0],[1,0,0]],
    # Chat_3 = [[0,1,0],[-1,0,0],[0,0,0]]
    chat = np.zeros((3, 3, 3))
    chat[0, 1, 2] = 1.0
    chat[0, 2, 1] = -1.0
    chat[1, 0, 2] = -1.0
    chat[1, 2, 0] = 1.0
    chat[2, 0, 1] = 1.0
    chat[2, 1, 0] = -1.0
    for l in range(3):
        B[l, :3, 3:] = b * chat[l]
        B[l, 3:, :3] = c * chat[l]
    M = m * np.eye(6)
    rep = builtin_representation("vector+vector", 3)
    return CovariantOperator(B, M, rep_in=rep, rep_out=rep, name="proca")


def scalar_mass_operator(m, d=3):
    """Multiplication by m on a scalar field (B = 0)."""
    B = np.zeros((d, 1, 1))
    M = np.array([[float(m)]])
    rep = builtin_representation("trivial", d)
    return CovariantOperator(B, M, rep_in=rep, rep_out=rep, name="scalar_mass")


def euclidean_dirac_operator(m):
    """4x4 operator with anticommuting symmetric B matrices, d=3.

    B_1 = sx (x) I, B_2 = sz (x) sx, B_3 = sz (x) sz with real Pauli-type
    blocks; det(sigma(p)+M) = (|p|^2 + m^2)^2.  Used as a single-pole kernel
    fixture; it is not rotation equivariant for any builtin representation
    and carries trivial component labels only.
    """
    sx = np.array([[0.0, 1.0], [1.0, 0.0]])
    sz = np.array([[1.0, 0.0], [0.0, -1.0]])
    eye = np.eye(2)
    B = np.stack([np.kron(sx, eye), np.kron(sz, sx), np.kron(sz, sz)])
    M = m * np.eye(4)
    rep = builtin_representation("trivial+trivial+trivial+trivial", 3)
    return CovariantOperator(B, M, rep_in=rep, rep_out=rep, name="dirac4")


def operator_direct_sum(op1, op2, name=""):
    """Block-diagonal direct sum of two operators on the same space dim."""
    if op1.d != op2.d:
        raise ValueError("operators act on different space dimensions")
    d = op1.d
    n_out = op1.n_out + op2.n_out
    n_in = op1.n_in + op2.n_in
    B = np.zeros((d, n_out, n_in))
    M = np.zeros((n_out, n_in))
    B[:, : op1.n_out, : op1.n_in] = op1.B
    B[:, op1.n_out:, op1.n_in:] = op2.B
    M[: op1.n_out, : op1.n_in] = op1.M
    M[op1.n_out:, op1.n_in:] = op2.M
    rep_in = rep_out = None
    if op1.rep_in is not None and op2.rep_in is not None:
        from .representations import direct_sum
        rep_in = direct_sum(op1.rep_in, op2.rep_in)
        rep_out = direct_sum(op1.rep_out, op2.rep_out)
    return CovariantOperator(B, M, rep_in=rep_in, rep_out=rep_out,
                             name=name or (op1.name + "+" + op2.name))


class FractionalOperator:
    """Scalar pseudo-differential operator (1 - Laplacian)^lam.

    Not first order; exposed with the same symbol interface so the lattice
    solver and observables can treat it interchangeably.  Requires
    lam in (0, 1/2].
    """

    def __init__(self, lam, d=3):
        if not (0.0 < lam <= 0.5):
            raise ValueError("fractional exponent must lie in (0, 1/2]")
        self.lam = float(lam)
        self.d = d
        self.n_in = self.n_out = 1
        self.rep_in = self.rep_out = builtin_representation("trivial", d)
        self.name = "fractional(%g)" % lam
        self.m_min = 1.0

    def symbol(self, p):
        p = np.asarray(p, dtype=float)
        t = np.sum(p ** 2, axis=-1)
        return ((1.0 + t) ** self.lam)[..., None, None] + 0j

    def full_symbol(self, p):
        return self.symbol(p)

    def green_symbol(self, p):
        """(1 + |p|^2)^(-lam), the momentum Green function."""
        p = np.asarray(p, dtype=float)
        t = np.sum(p ** 2, axis=-1)
        return ((1.0 + t) ** (-self.lam))[..., None, None] + 0j

    def cache_key(self):
        return "fractional-%r-%d" % (self.lam, self.d)

    def __repr__(self):
        return "FractionalOperator(lam=%g, d=%d)" % (self.lam, self.d)
