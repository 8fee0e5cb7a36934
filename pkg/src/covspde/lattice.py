"""Periodic lattice geometry: site and momentum grids, binning, 90-degree moves.

All field computations run on a periodic box [0, L)^d sampled at n sites per
axis (n a power of two), with the momentum grid 2*pi/L * {-n/2, ..., n/2-1}
per axis in FFT ordering.
"""

import numpy as np


def _is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


class Lattice:
    """Periodic cubic lattice with side L, n sites per axis, spacing a = L/n."""

    def __init__(self, L, n, d=3):
        if d < 1:
            raise ValueError("lattice dimension must be >= 1")
        if not _is_power_of_two(int(n)) or n < 8:
            raise ValueError("sites per axis must be a power of two, at least 8")
        if not (L > 0):
            raise ValueError("box side must be positive")
        self.L = float(L)
        self.n = int(n)
        self.d = int(d)
        self.a = self.L / self.n
        self._p_grid = None

    @property
    def shape(self):
        return (self.n,) * self.d

    @property
    def n_sites(self):
        return self.n ** self.d

    @property
    def volume(self):
        return self.L ** self.d

    @property
    def cell_volume(self):
        return self.a ** self.d

    def axis_momenta(self):
        return 2.0 * np.pi * np.fft.fftfreq(self.n, d=self.a)

    def momentum_grid(self):
        """Array of shape (n, ..., n, d) with the momentum vector at each node."""
        if self._p_grid is None:
            axes = [self.axis_momenta()] * self.d
            mesh = np.meshgrid(*axes, indexing="ij")
            self._p_grid = np.stack(mesh, axis=-1)
        return self._p_grid

    def momentum_norm2(self):
        p = self.momentum_grid()
        return np.sum(p * p, axis=-1)

    def site_axis(self):
        return self.a * np.arange(self.n)

    def site_index(self, x):
        """Nearest-site index tuple for a point x, wrapped periodically."""
        x = np.asarray(x, dtype=float)
        idx = np.rint(x / self.a).astype(int) % self.n
        return tuple(int(i) for i in idx)

    def bin_points(self, points):
        """Flat cell indices for an array of points, shape (k, d) -> (k,)."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        idx = np.rint(points / self.a).astype(int) % self.n
        flat = np.zeros(len(idx), dtype=np.int64)
        for axis in range(self.d):
            flat = flat * self.n + idx[:, axis]
        return flat

    def key(self):
        return (self.d, self.n, self.L)

    def __eq__(self, other):
        return isinstance(other, Lattice) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return "Lattice(L=%g, n=%d, d=%d)" % (self.L, self.n, self.d)


def rotate_site_field(field, plane, d=None):
    """Rotate a lattice field's sites by +90 degrees in the given plane.

    field has shape (n, ..., n, ...) with the first d axes spatial; returns
    g with g[k] = field[R^-1 k] where R maps e_i -> e_j for plane (i, j)
    (periodic index arithmetic, exact for 90-degree turns).  Component mixing
    is up to the caller.
    """
    i, j = plane
    if d is None:
        d = field.ndim
    if not (0 <= i < j < d):
        raise ValueError("unknown rotation plane")
    # R^-1 sends e_j -> e_i and e_i -> -e_j, so the lookup index is
    # (k_i, k_j) -> (k_j, -k_i mod n).
    out = np.swapaxes(field, i, j)
    out = np.flip(out, axis=i)
    out = np.roll(out, 1, axis=i)
    return out


def rotate_vector_field(field, rep, plane):
    """Full lifted 90-degree rotation: permute sites and mix components.

    field has shape (n, ..., n, N) with N = rep.dim; implements
    (T(R) f)(x) = tau(R) f(R^-1 x) for the quarter turn in the given plane.
    """
    d = field.ndim - 1
    moved = rotate_site_field(field, plane, d=d)
    R = rep.rotation(plane, np.pi / 2.0)
    return moved @ R.T
