"""Real orthogonal representations of SO(d) in generator form.

A representation is stored as its d(d-1)/2 antisymmetric generators, one per
rotation plane (i, j) with i < j in lexicographic order (zero-based indices).
The defining (vector) generator of plane (i, j) has entry -1 at (i, j) and +1
at (j, i), so exp(theta * S) rotates e_i towards e_j:

    exp((pi/2) * S_(0,1)) e_0 = e_1,   exp((pi/2) * S_(0,1)) e_1 = -e_0.

Finite rotations of arbitrary group elements are taken through the exponential
map: a Lie algebra coordinate vector xi gives R = expm(sum_a xi_a l_a) in the
defining representation and tau(R) = expm(sum_a xi_a S_a) in any other one,
which is how random group elements are drawn for invariance tests.

Builtins: "trivial" (dim 1), "vector" (dim d), "skew2" (antisymmetric rank-2
tensors, dim d(d-1)/2), and "+"-joined direct sums such as "vector+vector".
"""

import numpy as np
from scipy.linalg import expm

__all__ = [
    "Representation",
    "so_planes",
    "defining_generators",
    "builtin_representation",
    "direct_sum",
    "commutation_defect",
    "random_rotation_coeffs",
]

_ANTISYM_TOL = 1e-10


def so_planes(d):
    """Rotation planes of SO(d): zero-based (i, j), i < j, lexicographic."""
    if d < 2:
        raise ValueError("need d >= 2 for a nontrivial rotation group")
    return [(i, j) for i in range(d) for j in range(i + 1, d)]


def defining_generators(d):
    """Generators of the vector representation, shape (d(d-1)/2, d, d)."""
    planes = so_planes(d)
    gens = np.zeros((len(planes), d, d))
    for a, (i, j) in enumerate(planes):
        gens[a, i, j] = -1.0
        gens[a, j, i] = 1.0
    return gens


class Representation:
    """Representation of SO(d) given by one generator per rotation plane.

    Parameters
    ----------
    d : int
        Spatial dimension (the group is SO(d)).
    generators : array_like, shape (d(d-1)/2, N, N)
        Antisymmetric generator matrices ordered like :func:`so_planes`.
    name : str
        Label, e.g. "vector+vector".
    """

    def __init__(self, d, generators, name=""):
        generators = np.asarray(generators, dtype=float)
        planes = so_planes(d)
        if generators.ndim != 3 or generators.shape[0] != len(planes):
            raise ValueError(
                "expected %d generators for SO(%d), got shape %s"
                % (len(planes), d, generators.shape)
            )
        if generators.shape[1] != generators.shape[2]:
            raise ValueError("generators must be square matrices")
        skew = np.max(np.abs(generators + np.swapaxes(generators, 1, 2)))
        if skew > _ANTISYM_TOL:
            raise ValueError(
                "generators are not antisymmetric (defect %.3e); "
                "only orthogonal representations are supported" % skew
            )
        self.d = d
        self.planes = planes
        self.generators = generators
        self.dim = generators.shape[1]
        self.name = name

    def __repr__(self):
        return "Representation(d=%d, dim=%d, name=%r)" % (self.d, self.dim, self.name)

    def _plane_index(self, plane):
        if isinstance(plane, (int, np.integer)):
            return int(plane)
        try:
            return self.planes.index(tuple(plane))
        except ValueError:
            raise ValueError(
                "unknown rotation plane %r; expected one of %r" % (plane, self.planes)
            ) from None

    def generator(self, plane):
        """Generator matrix of a rotation plane (tuple or index)."""
        return self.generators[self._plane_index(plane)]

    def rotation(self, plane, angle):
        """Finite rotation matrix exp(angle * S_plane)."""
        return expm(angle * self.generator(plane))

    def rotation_from_coeffs(self, coeffs):
        """Group element for a Lie algebra coordinate vector.

        Returns expm(sum_a coeffs[a] * S_a); with the same coeffs applied to
        the vector representation this is the lift tau(R) of that rotation.
        """
        coeffs = np.asarray(coeffs, dtype=float)
        return expm(np.tensordot(coeffs, self.generators, axes=(0, 0)))


def _skew2_generators(d):
    """Generators on antisymmetric rank-2 tensors, basis E_kl - E_lk (k < l)."""
    planes = so_planes(d)
    ell = defining_generators(d)
    basis = []
    for (k, l) in planes:
        b = np.zeros((d, d))
        b[k, l] = 1.0
        b[l, k] = -1.0
        basis.append(b)
    gens = np.zeros((len(planes), len(planes), len(planes)))
    for a in range(len(planes)):
        for beta, b in enumerate(basis):
            comm = ell[a] @ b - b @ ell[a]
            for gamma, (k, l) in enumerate(planes):
                gens[a, gamma, beta] = comm[k, l]
    return gens


def direct_sum(*reps):
    """Block-diagonal direct sum of representations of the same SO(d)."""
    if not reps:
        raise ValueError("direct_sum needs at least one representation")
    d = reps[0].d
    if any(r.d != d for r in reps):
        raise ValueError("all summands must represent the same SO(d)")
    n_planes = len(so_planes(d))
    dim = sum(r.dim for r in reps)
    gens = np.zeros((n_planes, dim, dim))
    off = 0
    for r in reps:
        gens[:, off:off + r.dim, off:off + r.dim] = r.generators
        off += r.dim
    name = "+".join(r.name for r in reps)
    return Representation(d, gens, name=name)


_BUILTIN_NAMES = ("trivial", "vector", "skew2")


def builtin_representation(name, d):
    """Look up a builtin representation of SO(d) by name.

    Supported: "trivial", "vector", "skew2", and "+"-joined direct sums of
    those, e.g. "vector+vector" or "trivial+skew2".
    """
    name = name.strip()
    if "+" in name:
        parts = [p.strip() for p in name.split("+")]
        return direct_sum(*[builtin_representation(p, d) for p in parts])
    if name == "trivial":
        n_planes = len(so_planes(d))
        return Representation(d, np.zeros((n_planes, 1, 1)), name="trivial")
    if name == "vector":
        return Representation(d, defining_generators(d), name="vector")
    if name == "skew2":
        return Representation(d, _skew2_generators(d), name="skew2")
    raise ValueError(
        "unknown representation %r; builtins are %s and '+' sums of them"
        % (name, ", ".join(_BUILTIN_NAMES))
    )


def _structure_constants(d):
    """Expand [l_a, l_b] = sum_c f_abc l_c in the defining representation."""
    ell = defining_generators(d)
    n = ell.shape[0]
    flat = ell.reshape(n, -1)
    f = np.zeros((n, n, n))
    for a in range(n):
        for b in range(n):
            comm = (ell[a] @ ell[b] - ell[b] @ ell[a]).ravel()
            coef, res, _, _ = np.linalg.lstsq(flat.T, comm, rcond=None)
            f[a, b] = coef
    return f


def commutation_defect(rep):
    """Largest violation of the so(d) commutation relations by rep's generators.

    Returns max_ab || [S_a, S_b] - sum_c f_abc S_c ||_max with structure
    constants taken from the defining representation.  Zero (to roundoff) for
    any honest representation.
    """
    f = _structure_constants(rep.d)
    gens = rep.generators
    worst = 0.0
    n = gens.shape[0]
    for a in range(n):
        for b in range(n):
            comm = gens[a] @ gens[b] - gens[b] @ gens[a]
            target = np.tensordot(f[a, b], gens, axes=(0, 0))
            worst = max(worst, np.max(np.abs(comm - target)))
    return worst


def random_rotation_coeffs(d, rng, scale=1.0):
    """Draw Lie algebra coordinates for a random finite rotation."""
    return rng.normal(scale=scale, size=len(so_planes(d)))
