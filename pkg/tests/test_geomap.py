import numpy as np
import pytest

from rb_operon.geomap import (RadialMap, eim_build, eim_reconstruct,
                              tensor_field_per_triangle, tensor_snapshot)

RM = RadialMap()


def test_radial_map_validates():
    with pytest.raises(ValueError):
        RadialMap(r_minus=0.2, r0=0.1)
    with pytest.raises(ValueError):
        RM.mapped_radius(np.array([0.1]), 0.5)   # outside [r_min, r_max]


@pytest.mark.parametrize("r", [0.05, 0.13, 0.2, 0.31, 0.45])
def test_mapped_radius_pins_and_monotone(r):
    rho = np.linspace(0.0, 1.0, 2001)
    s, ds = RM.mapped_radius(rho, r)
    assert np.isclose(np.interp(RM.r0, rho, s), r)
    assert np.isclose(np.interp(RM.r_minus, rho, s), RM.r_minus)
    assert np.isclose(np.interp(RM.r_plus, rho, s), RM.r_plus)
    outside = (rho <= RM.r_minus) | (rho >= RM.r_plus)
    assert np.allclose(s[outside], rho[outside])
    assert np.all(np.diff(s) > 0)               # bijective for admissible r
    assert np.all(ds > 0)


def test_phi_values():
    assert np.isclose(RM.phi(RM.r0, 0.37), 0.37 / RM.r0)
    assert np.isclose(RM.phi(0.0, 0.1), 1.0)
    assert np.isclose(RM.phi(0.9, 0.1), 1.0)


def test_map_points_moves_ring():
    ang = np.linspace(0, 2 * np.pi, 7)[:-1]
    ring = RM.r0 * np.column_stack([np.cos(ang), np.sin(ang)])
    mapped = RM.map_points(ring, 0.3)
    assert np.allclose(np.linalg.norm(mapped, axis=1), 0.3)


def test_jacobian_matches_finite_differences(rng):
    r = 0.33
    pts = rng.uniform(-0.45, 0.45, size=(60, 2))
    # keep clear of the piecewise-linear kinks where J jumps
    rho = np.linalg.norm(pts, axis=1)
    keep = np.all(np.abs(rho[:, None] - np.array([RM.r_minus, RM.r0, RM.r_plus]))
                  > 1e-3, axis=1) & (rho > 1e-2)
    pts = pts[keep]
    jac = RM.jacobian(pts, r)
    h = 1e-6
    for d in range(2):
        e = np.zeros(2)
        e[d] = h
        fd = (RM.map_points(pts + e, r) - RM.map_points(pts - e, r)) / (2 * h)
        assert np.allclose(jac[:, :, d], fd, rtol=1e-5, atol=1e-7)


def test_tensor_equals_jacobian_algebra(rng):
    r = 0.12
    pts = rng.uniform(-0.45, 0.45, size=(40, 2))
    pts = pts[np.linalg.norm(pts, axis=1) > 1e-2]
    g = RM.jacobian_tensor(pts, r)
    jac = RM.jacobian(pts, r)
    det = np.linalg.det(jac)
    assert np.all(det > 0)
    inv = np.linalg.inv(jac)
    expect = det[:, None, None] * np.einsum("nki,nkj->nij", inv, inv)
    assert np.allclose(g, expect, rtol=1e-10)


def test_tensor_identity_at_reference_radius(rng):
    pts = rng.uniform(-0.5, 0.5, size=(50, 2))
    g = RM.jacobian_tensor(pts, RM.r0)
    assert np.allclose(g, np.tile(np.eye(2), (len(pts), 1, 1)), atol=1e-14)


def eim_fixture(n_pts=40, n_train=32, q_max=8):
    rng = np.random.default_rng(3)
    pts = rng.uniform(-0.45, 0.45, size=(n_pts, 2))
    radii = np.linspace(RM.r_min, RM.r_max, n_train)
    return pts, radii, eim_build(RM, pts, radii, q_max=q_max)


def test_eim_reproduces_selected_snapshots():
    pts, radii, sur = eim_fixture()
    assert sur.rank <= 8
    for r in sur.selected:
        snap = tensor_snapshot(RM, pts, r)
        assert np.allclose(eim_reconstruct(sur, r), snap, atol=1e-11 * np.abs(snap).max())


def test_eim_interpolates_at_pivots(rng):
    pts, radii, sur = eim_fixture()
    for r in rng.uniform(RM.r_min, RM.r_max, size=8):
        snap = tensor_snapshot(RM, pts, r)
        rec = eim_reconstruct(sur, r)
        assert np.allclose(rec[sur.pivots], snap[sur.pivots], rtol=1e-10)


def test_eim_trace_strictly_decreasing():
    pts, radii, sur = eim_fixture(q_max=10)
    assert np.all(np.diff(sur.trace) < 0)


def test_eim_pivot_matrix_unit_lower_triangular():
    _, _, sur = eim_fixture()
    t = sur.tri_mat
    assert np.allclose(np.diag(t), 1.0)
    assert np.allclose(np.triu(t, 1), 0.0)
    # each basis field is normalized at its own pivot and vanishes at the
    # pivots chosen before it
    for q in range(sur.rank):
        assert np.isclose(sur.basis[q, sur.pivots[q]], 1.0)
        assert np.allclose(sur.basis[q, sur.pivots[:q]], 0.0, atol=1e-9)


def test_eim_early_stop_via_tol():
    pts = np.random.default_rng(4).uniform(-0.45, 0.45, size=(30, 2))
    radii = np.linspace(RM.r_min, RM.r_max, 24)
    sur = eim_build(RM, pts, radii, q_max=20, tol=1e-2)
    assert sur.rank < 20
    # training error after the kept basis is at or below the threshold
    errs = []
    for r in radii:
        snap = tensor_snapshot(RM, pts, r)
        errs.append(np.abs(eim_reconstruct(sur, r) - snap).max())
    assert max(errs) <= 1e-2


def test_pivot_values_match_full_snapshot():
    pts, radii, sur = eim_fixture()
    r = 0.27
    snap = tensor_snapshot(RM, pts, r)
    assert np.allclose(sur.pivot_values(r), snap[sur.pivots])


def test_tensor_field_reshape_symmetry():
    flat = np.arange(12, dtype=float)
    t = tensor_field_per_triangle(flat, 4)
    assert t.shape == (4, 2, 2)
    assert np.allclose(t[:, 0, 1], t[:, 1, 0])
    assert np.allclose(t[1], [[3.0, 4.0], [4.0, 5.0]])
