import numpy as np
import pytest

from covspde.lattice import Lattice, rotate_site_field, rotate_vector_field
from covspde.representations import builtin_representation


def brute_force_rotate(field, plane, d):
    """Index-by-index oracle for the quarter-turn site permutation."""
    i, j = plane
    n = field.shape[0]
    out = np.empty_like(field)
    for idx in np.ndindex(*field.shape[:d]):
        src = list(idx)
        src[i] = idx[j]
        src[j] = (-idx[i]) % n
        out[idx] = field[tuple(src)]
    return out


def test_lattice_basic_geometry():
    lat = Lattice(L=16.0, n=64, d=3)
    assert lat.a == pytest.approx(0.25)
    assert lat.shape == (64, 64, 64)
    assert lat.n_sites == 64 ** 3
    assert lat.volume == pytest.approx(16.0 ** 3)
    assert lat.cell_volume == pytest.approx(0.25 ** 3)


def test_lattice_validation():
    with pytest.raises(ValueError):
        Lattice(L=8.0, n=48)  # not a power of two
    with pytest.raises(ValueError):
        Lattice(L=8.0, n=4)  # too small
    with pytest.raises(ValueError):
        Lattice(L=-1.0, n=16)


def test_momentum_grid_values():
    lat = Lattice(L=8.0, n=8, d=2)
    k = lat.axis_momenta()
    # 2*pi/L * {0, 1, 2, 3, -4, -3, -2, -1}
    expect = 2.0 * np.pi / 8.0 * np.array([0, 1, 2, 3, -4, -3, -2, -1], float)
    assert np.allclose(k, expect, atol=1e-14)
    grid = lat.momentum_grid()
    assert grid.shape == (8, 8, 2)
    assert np.allclose(grid[2, 5], [expect[2], expect[5]], atol=1e-14)
    assert np.allclose(lat.momentum_norm2()[3, 1],
                       expect[3] ** 2 + expect[1] ** 2, atol=1e-14)


def test_site_binning_wraps():
    lat = Lattice(L=8.0, n=8, d=3)
    assert lat.site_index([1.0, 2.04, 7.9]) == (1, 2, 0)
    flat = lat.bin_points([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    assert flat[0] == 1
    assert flat[1] == 64


def test_rotate_site_field_matches_bruteforce():
    rng = np.random.default_rng(7)
    field = rng.normal(size=(8, 8, 8, 2))
    for plane in [(0, 1), (0, 2), (1, 2)]:
        fast = rotate_site_field(field, plane, d=3)
        slow = brute_force_rotate(field, plane, d=3)
        assert np.array_equal(fast, slow)


def test_rotate_site_field_order_four():
    rng = np.random.default_rng(8)
    field = rng.normal(size=(8, 8, 8))
    out = field
    for _ in range(4):
        out = rotate_site_field(out, (0, 1), d=3)
    assert np.array_equal(out, field)


def test_rotate_vector_field_consistency():
    # Rotating the coordinate function x -> x (sampled componentwise) must
    # reproduce the sampled rotated coordinates: tau(R) R^-1 x = x for the
    # vector representation, so the field x stays fixed up to periodic wrap.
    lat = Lattice(L=8.0, n=8, d=2)
    rep = builtin_representation("vector", 2)
    ax = lat.site_axis()
    # use periodic sawtooth coordinates centered so the wrap is symmetric
    c = np.where(ax > lat.L / 2, ax - lat.L, ax)
    X = np.stack(np.meshgrid(c, c, indexing="ij"), axis=-1)
    rotated = rotate_vector_field(X, rep, (0, 1))
    # interior sites (away from the wrap seam) must match exactly
    interior = (np.abs(X[..., 0]) < 3.0) & (np.abs(X[..., 1]) < 3.0)
    assert np.allclose(rotated[interior], X[interior], atol=1e-12)
