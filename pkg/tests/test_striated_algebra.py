from __future__ import annotations

import numpy as np
import pytest

from striated.grid import Grid, J
from striated.oracles import patch_profile, radial_A, radial_corrected, radial_gradu
from striated.striated_algebra import (A_from_vector, a3_identity_residual, agoal_residuals,
                                       bump_holder_norm, correction_matrix_2d, correction_matrix_3d,
                                       corrected_gradient, family_infimum, gradient_linf_bound,
                                       graduT_identity_3d, omega_decomposition, opnorm,
                                       partition_of_unity_2d, projector_identity_residual, q_inverse,
                                       q_map, select_members, serfati_bound_2d, serfati_bound_general,
                                       serfati_polynomials, vorticity_vector, wedge)


def random_sym(rng, n, d):
    B = rng.normal(size=(n, d, d))
    return 0.5 * (B + np.swapaxes(B, -1, -2))


def mtilde(rng, n, d):
    """Random M with last column equal to the wedge of the others."""
    cols = rng.normal(size=(n, d, d - 1))
    last = wedge([cols[..., k] for k in range(d - 1)])
    return np.concatenate([cols, last[..., None]], -1)


def test_wedge_examples():
    assert np.array_equal(wedge([np.array([1.0, 2.0])]), [-2.0, 1.0])
    assert np.array_equal(wedge([np.array([1.0, 0, 0]), np.array([0, 1.0, 0])]), [0, 0, 1.0])
    assert np.array_equal(wedge([np.array([1.0, 2, 3]), np.array([2.0, 4, 6])]), [0, 0, 0])
    with pytest.raises(ValueError):
        wedge([np.ones(3)])
    with pytest.raises(ValueError):
        wedge([np.ones(2), np.ones(3)])


def test_family_infimum():
    e1 = np.zeros((10, 2))
    e1[:, 0] = 1.0
    assert family_infimum([e1]) == 1.0
    a = np.tile([1.0, 0, 0], (5, 1))
    b = np.tile([0, 1.0, 0], (5, 1))
    assert family_infimum([a, b]) == 1.0
    with pytest.raises(ValueError):
        family_infimum([])


def test_family_infimum_two_members_cover():
    x = np.linspace(-1, 1, 101)
    Y = np.stack([np.clip(x, 0, None), np.zeros_like(x)], -1)
    Z = np.stack([np.zeros_like(x), np.clip(-x, 0, None) + 0.2], -1)
    assert family_infimum([Y, Z]) == pytest.approx(0.2)
    assert family_infimum([Y]) == 0.0


def test_opnorm_closed_form():
    rng = np.random.default_rng(0)
    for d in (2, 3):
        M = rng.normal(size=(200, d, d))
        assert np.allclose(opnorm(M), np.linalg.norm(M, ord=2, axis=(-2, -1)), rtol=1e-10)


def test_serfati_2d_examples():
    r = serfati_bound_2d(np.diag([1.0, -1.0]), np.eye(2))
    assert r.lhs == pytest.approx(1.0) and r.bound == pytest.approx(2.0) and r.holds
    r = serfati_bound_2d(np.zeros((2, 2)), np.eye(2))
    assert r.lhs == 0.0 and r.holds
    with pytest.raises(ValueError):
        serfati_bound_2d(np.eye(2), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        serfati_bound_2d(np.array([[0.0, 1.0], [0.0, 0.0]]), np.eye(2))


def test_serfati_2d_printed_form_counterexample():
    lam = 0.5
    r = serfati_bound_2d(np.diag([1.0, -1.0]), lam * np.eye(2), printed_form=True)
    assert not r.holds
    assert serfati_bound_2d(np.diag([1.0, -1.0]), lam * np.eye(2)).holds


def test_serfati_2d_random():
    rng = np.random.default_rng(1)
    B = random_sym(rng, 20000, 2)
    M = rng.normal(size=(20000, 2, 2)) * np.exp(rng.uniform(-3, 3, (20000, 1, 1)))
    assert np.all(serfati_bound_2d(B, M).holds)


def test_serfati_general_example_and_random():
    M = np.stack([np.eye(3)[:, 0], np.eye(3)[:, 1], np.eye(3)[:, 2]], -1)
    r = serfati_bound_general(np.diag([1.0, 1.0, -2.0]), M)
    assert r.lhs == pytest.approx(2.0) and r.holds
    rng = np.random.default_rng(2)
    B = random_sym(rng, 5000, 3)
    Ms = mtilde(rng, 5000, 3)
    res = serfati_bound_general(B, Ms)
    assert np.all(res.holds)
    assert np.all(res.lhs <= res.extra["bound_P1"] * (1 + 1e-9))


def test_serfati_general_rejects_bad_M():
    with pytest.raises(ValueError):
        serfati_bound_general(np.eye(3), np.diag([1.0, 1.0, 2.0]))
    M = np.zeros((3, 3))
    with pytest.raises(ValueError):
        serfati_bound_general(np.eye(3), M)


@pytest.mark.parametrize("d", [2, 3])
def test_serfati_polynomial_degrees(d):
    rng = np.random.default_rng(3)
    M = mtilde(rng, 50, d)
    N1, P1 = serfati_polynomials(M)
    for lam in (0.3, 2.5):
        # scaling the first d-1 columns scales the wedge column by lam^(d-1)
        Ml = M.copy()
        Ml[..., :, : d - 1] *= lam
        Ml[..., :, d - 1] *= lam ** (d - 1)
        N2, P2 = serfati_polynomials(Ml)
        assert np.allclose(N2, lam ** (4 * d - 5) * N1, rtol=1e-9)
        assert np.allclose(P2, lam ** (2 * d - 2) * P1, rtol=1e-9)


def test_serfati_bound_scale_invariant():
    rng = np.random.default_rng(4)
    B = random_sym(rng, 100, 3)
    M = mtilde(rng, 100, 3)
    b1 = serfati_bound_general(B, M).bound
    Ml = M.copy()
    Ml[..., :, :2] *= 3.0
    Ml[..., :, 2] *= 9.0
    assert np.allclose(serfati_bound_general(B, Ml).bound, b1, rtol=1e-9)


def test_gradient_linf_bound_examples():
    Y = [np.array([0.0, 1.0])]  # e_theta at (0.5, 0)
    G = 0.5 * J
    Om = G - G.T
    assert gradient_linf_bound(Y, Om, [G @ Y[0]]) >= 0.5
    S = np.array([[0.3, 0.7], [0.7, -0.3]])
    w, V = np.linalg.eigh(S)
    y = V[:, 1] * 2.0
    assert gradient_linf_bound([y], np.zeros((2, 2)), [S @ y]) >= opnorm(S) * (1 - 1e-12)
    assert gradient_linf_bound([y], np.zeros((2, 2)), [np.zeros(2)]) == 0.0
    with pytest.raises(ValueError):
        gradient_linf_bound([np.zeros(2)], np.zeros((2, 2)), [np.zeros(2)])


def test_gradient_linf_bound_3d_random():
    rng = np.random.default_rng(5)
    G = rng.normal(size=(500, 3, 3))
    G -= np.trace(G, axis1=-2, axis2=-1)[:, None, None] * np.eye(3) / 3
    Y1, Y2 = rng.normal(size=(500, 3)), rng.normal(size=(500, 3))
    Om = G - np.swapaxes(G, -1, -2)
    b = gradient_linf_bound([Y1, Y2], Om, [np.einsum("pij,pj->pi", G, Y1), np.einsum("pij,pj->pi", G, Y2)])
    assert np.all(opnorm(G) <= b * (1 + 1e-9))


def test_partition_sums_to_one_and_multiplicity():
    part = partition_of_unity_2d(0.3, 1.0)
    rng = np.random.default_rng(6)
    x = rng.uniform(-1, 1, (10000, 2))
    assert np.max(np.abs(part.total(x) - 1.0)) <= 1e-10
    assert part.multiplicity(x).max() <= 3
    assert max(part.neighbour_counts()) <= 9


def test_partition_errors():
    with pytest.raises(ValueError):
        partition_of_unity_2d(0.01, 1.0, spacing=0.01)
    with pytest.raises(ValueError):
        partition_of_unity_2d(-1.0, 1.0)
    with pytest.raises(ValueError):
        partition_of_unity_2d(0.3, 1.0, layout="hex")


def test_product_layout_is_partition_away_from_edges():
    part = partition_of_unity_2d(0.5, 1.0, layout="product")
    rng = np.random.default_rng(7)
    x = rng.uniform(-1, 1, (5000, 2))
    assert np.max(np.abs(part.total(x) - 1.0)) <= 1e-10


def test_bump_holder_norm_scaling():
    alpha = 0.5
    vals = []
    for R in (0.4, 0.2):
        part = partition_of_unity_2d(R, 1.0)
        vals.append(max(bump_holder_norm(part, k, alpha) for k in range(3)))
    # the seminorm part scales like R^-alpha
    assert 0.8 * 2 ** alpha <= (vals[1] - 1) / (vals[0] - 1) <= 1.25 * 2 ** alpha


def test_select_members_and_errors():
    g = Grid(64, 1.0)
    P = g.points()
    part = partition_of_unity_2d(0.25, 1.0, spacing=g.spacing)
    Y = np.zeros_like(P)
    Y[..., 0] = 1.0
    Z = np.zeros_like(P)
    Z[..., 1] = 2.0
    select_members(part, [Y, Z], P, 1.0)
    assert all(b.member == 1 for b in part.bumps if b.member is not None)
    part = partition_of_unity_2d(0.25, 1.0, spacing=g.spacing)
    with pytest.raises(ValueError):
        select_members(part, [0.1 * Y], P, 1.0)


def test_A_from_constant_vector():
    assert np.array_equal(A_from_vector(np.array([1.0, 0.0])), [[0.0, -1.0], [0.0, 0.0]])


def test_correction_matrix_2d_identities():
    g = Grid(64, 1.0)
    P = g.points()
    Y = np.stack([1.0 + 0.3 * np.sin(3 * P[..., 1]), 0.5 * np.cos(2 * P[..., 0])], -1)
    part = partition_of_unity_2d(0.25, 1.0, spacing=g.spacing)
    select_members(part, [Y], P, family_infimum([Y]))
    cm = correction_matrix_2d([Y], part, P)
    assert cm.checks["AY_rel"] <= 1e-12 and cm.checks["AYperp_rel"] <= 1e-12
    # single member: A Y = 0 and A Y^perp = -Y for the assembled A too
    assert np.max(np.abs(np.einsum("...ij,...j->...i", cm.A, Y))) <= 1e-12
    Yp = wedge([Y])
    assert np.max(np.abs(np.einsum("...ij,...j->...i", cm.A, Yp) + Y)) <= 1e-12
    omega = np.sin(P[..., 0] * 2) * np.cos(P[..., 1])
    assert projector_identity_residual(cm, omega) <= 1e-12


def test_correction_matrix_needs_selection():
    g = Grid(32, 1.0)
    P = g.points()
    part = partition_of_unity_2d(0.25, 1.0, spacing=g.spacing)
    with pytest.raises(ValueError):
        correction_matrix_2d([np.ones_like(P)], part, P)


def test_q_map():
    assert np.allclose(q_map(np.array([1.0, 0, 0])) @ np.array([0, 1.0, 0]), [0, 0, 1.0])
    assert np.array_equal(q_map(np.zeros(3)), np.zeros((3, 3)))
    rng = np.random.default_rng(8)
    phi, v = rng.normal(size=(1000, 3)), rng.normal(size=(1000, 3))
    Q = q_map(phi)
    assert np.max(np.abs(np.einsum("pij,pj->pi", Q, v) - np.cross(phi, v))) <= 1e-14
    assert np.array_equal(q_inverse(Q), phi)
    with pytest.raises(ValueError):
        q_inverse(np.eye(3))


def test_correction_matrix_3d_frame():
    e1, e2 = np.array([1.0, 0, 0]), np.array([0, 1.0, 0])
    cm = correction_matrix_3d(e1[None], e2[None])
    assert np.allclose(cm.A[0], np.diag([1.0, 1.0, 0.0]), atol=1e-15)
    rng = np.random.default_rng(9)
    Om = q_map(rng.normal(size=(100, 3)))
    e3 = np.array([0, 0, 1.0])
    lhs = np.einsum("ij,pjk,k->pi", cm.A[0], Om, e3)
    assert np.max(np.abs(lhs - Om @ e3)) <= 1e-12


def test_correction_matrix_3d_agoal_random():
    rng = np.random.default_rng(10)
    Y1 = rng.normal(size=(2000, 3))
    Y2 = rng.normal(size=(2000, 3))
    keep = np.linalg.norm(np.cross(Y1, Y2), axis=-1) > 0.5
    Y1, Y2 = Y1[keep], Y2[keep]
    cm = correction_matrix_3d(Y1, Y2, threshold=0.25)
    res = agoal_residuals(cm, Y1, Y2, rng.normal(size=(len(Y1), 3)))
    assert max(res.values()) <= 1e-12


def test_correction_matrix_3d_rejects_parallel():
    Y1 = np.array([[1.0, 0, 0]])
    with pytest.raises(ValueError):
        correction_matrix_3d(Y1, 2 * Y1)


def test_omega_decomposition_roundtrip():
    rng = np.random.default_rng(11)
    Y1, Y2, a = rng.normal(size=(50, 3)), rng.normal(size=(50, 3)), rng.normal(size=(50, 3))
    w = a[:, :1] * Y1 + a[:, 1:2] * Y2 + a[:, 2:] * np.cross(Y1, Y2)
    assert np.allclose(omega_decomposition(w, Y1, Y2), a)


def solenoidal_polynomial_grad(rng, x):
    """grad u of u = curl(psi) with psi a random quadratic vector potential."""
    # psi_k = sum c_kij x_i x_j ; u = curl psi ; grad u computed exactly
    c = rng.normal(size=(3, 3, 3))
    c = 0.5 * (c + np.swapaxes(c, 1, 2))
    # d_m psi_k = 2 c_kmj x_j ; d_l d_m psi_k = 2 c_kml
    H = 2 * c  # H[k, m, l] = d_l d_m psi_k (constant)
    eps = np.zeros((3, 3, 3))
    eps[0, 1, 2] = eps[1, 2, 0] = eps[2, 0, 1] = 1
    eps[0, 2, 1] = eps[2, 1, 0] = eps[1, 0, 2] = -1
    # u_i = eps_imk d_m psi_k ; d_l u_i = eps_imk H[k, m, l]
    G = np.einsum("imk,kml->il", eps, H)
    return np.broadcast_to(G, x.shape[:-1] + (3, 3))


def test_graduT_identity_examples():
    x = np.random.default_rng(12).normal(size=(200, 3))
    G = np.zeros((200, 3, 3))
    G[:, 0, 1] = np.cos(x[:, 1])  # u = (sin x2, 0, 0)
    e1 = np.tile([1.0, 0, 0], (200, 1))
    e2 = np.tile([0, 1.0, 0], (200, 1))
    r = graduT_identity_3d(G, e1, e2)
    assert r["residual"] <= 1e-12 and r["first_component"] <= 1e-12
    assert graduT_identity_3d(np.zeros((3, 3)), e1[0], e2[0])["residual"] == 0.0
    with pytest.raises(ValueError):
        graduT_identity_3d(np.eye(3), e1[0], e2[0])


def test_graduT_identity_random_polynomials():
    rng = np.random.default_rng(13)
    worst = 0.0
    for _ in range(1000):
        G = solenoidal_polynomial_grad(rng, np.zeros((1, 3)))[0]
        Y1, Y2 = rng.normal(size=3), rng.normal(size=3)
        r = graduT_identity_3d(G, Y1, Y2)
        worst = max(worst, r["residual"], r["first_component"])
    assert worst <= 1e-10


def test_a3_coefficient_identity():
    rng = np.random.default_rng(14)
    G = rng.normal(size=(300, 3, 3))
    e1 = np.tile([1.0, 0, 0], (300, 1))
    e2 = np.tile([0, 1.0, 0], (300, 1))
    assert a3_identity_residual(G, e1, e2) <= 1e-12
    # orthonormal frames: a3 is the third coefficient of curl u
    Q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    Y1, Y2 = np.tile(Q[:, 0], (300, 1)), np.tile(Q[:, 1], (300, 1))
    a = omega_decomposition(vorticity_vector(G), Y1, Y2)
    rhs = (np.sum(np.einsum("pij,pj->pi", G, Y1) * Y2, -1) - np.sum(np.einsum("pij,pj->pi", G, Y2) * Y1, -1))
    assert np.max(np.abs(a[:, 2] - rhs)) <= 1e-12


def test_corrected_gradient():
    G = np.random.default_rng(15).normal(size=(10, 2, 2))
    A = np.ones((10, 2, 2))
    assert np.array_equal(corrected_gradient(G, np.zeros(10), A), G)
    with pytest.raises(ValueError):
        corrected_gradient(G, np.zeros(10), np.ones((10, 3, 3)))
    with pytest.raises(ValueError):
        corrected_gradient(G, np.zeros(9), A)
    G3 = np.zeros((4, 3, 3))
    assert np.array_equal(corrected_gradient(G3, np.ones((4, 3, 3)), np.zeros((4, 3, 3))), G3)


def test_radial_corrected_gradient_matches_closed_form():
    prof = patch_profile(1.0)
    rng = np.random.default_rng(16)
    r = rng.uniform(0.5, 1.8, 300)  # chi = 1 for r >= delta
    th = rng.uniform(0, 2 * np.pi, 300)
    x = np.stack([r * np.cos(th), r * np.sin(th)], -1)
    w = prof(r)
    res = corrected_gradient(radial_gradu(prof, x), w, radial_A(prof, x, delta=0.5))
    assert np.allclose(res, radial_corrected(prof, x), atol=1e-12)
