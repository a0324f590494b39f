"""Edge-patch tensor space, parity constraint, two-normal reconstruction and nn constructions."""

import math

import numpy as np
import pytest

from elastix.mesh import EdgeKind, build_all_patches, build_edge_patch, gen_kuhn_box, gen_kuhn_mesh, synthetic_patch
from elastix.patch_tensors import (
    AssumptionViolated,
    ColinearNormals,
    IncompatibleData,
    InfeasiblePrescription,
    NotEvenInterior,
    NotInterior,
    PatchTensor,
    angle_identity_residual,
    even_beta,
    even_constraint_coeffs,
    expected_dim,
    norm_bound,
    nn_pair_tensor,
    nn_unit_tensor,
    nn_unit_tensor_boundary,
    prescribe_nn,
    random_patch,
    sym_from_two_normals,
    tt_e_basis,
)


def kuhn_diagonal():
    m = gen_kuhn_mesh(1)
    return build_edge_patch(m, m.edge_index[(0, 7)])


def stack_singular():
    return next(p for p in build_all_patches(gen_kuhn_box(1, 1, 2, 0.5)) if p.kind is EdgeKind.SINGULAR)


def brute_force_dim(patch):
    """Dimension of per-element cross-section tensors with normal continuity, by sampling rank."""
    # parametrize blocks by full 3x3 symmetric matrices and impose T t = 0 explicitly
    m = patch.m
    rows = []
    sym = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)]

    def mat_row(k, vec_left, vec_right=None):
        # coefficients of (T_k vec)_d over the 6 symmetric entries of block k
        out = np.zeros((3, 6 * m))
        for c, (i, j) in enumerate(sym):
            E = np.zeros((3, 3))
            E[i, j] = E[j, i] = 1.0
            out[:, 6 * k + c] = E @ vec_left
        return out

    for k in range(m):
        rows.append(mat_row(k, patch.t))
    for j in patch.interior_faces():
        rows.append(mat_row((j - 1) % m, patch.normals[j]) - mat_row(j, patch.normals[j]))
    C = np.vstack(rows)
    return 6 * m - np.linalg.matrix_rank(C, tol=1e-10)


# =============================================================================
# TT_e basis
# =============================================================================


def test_single_element_boundary_dim():
    p = synthetic_patch([1.0], boundary=True)
    assert len(tt_e_basis(p)) == 3


@pytest.mark.parametrize(
    "kind,m",
    [
        (EdgeKind.BOUNDARY, 1),
        (EdgeKind.BOUNDARY, 2),
        (EdgeKind.BOUNDARY, 4),
        (EdgeKind.INTERIOR_ODD, 3),
        (EdgeKind.INTERIOR_ODD, 5),
        (EdgeKind.INTERIOR_EVEN, 4),
        (EdgeKind.INTERIOR_EVEN, 6),
        (EdgeKind.INTERIOR_EVEN, 8),
        (EdgeKind.SINGULAR, 4),
    ],
)
def test_dimension_pattern(rng, kind, m):
    for _ in range(5):
        p = random_patch(rng, m, kind)
        basis = tt_e_basis(p)
        assert len(basis) == expected_dim(p) == brute_force_dim(p)
        G = np.array([[np.sum(a.blocks * b.blocks) for b in basis] for a in basis])
        assert np.allclose(G, np.eye(len(basis)), atol=1e-12)
        for T in basis:
            assert T.continuity_residual() <= 1e-12
            assert T.tangent_residual() <= 1e-12
            assert T.symmetry_residual() <= 1e-14


def test_kuhn_diagonal_dim():
    p = kuhn_diagonal()
    assert len(tt_e_basis(p)) == 6 == brute_force_dim(p)


def test_mesh_patches_dims():
    for p in build_all_patches(gen_kuhn_mesh(2)):
        assert len(tt_e_basis(p)) == expected_dim(p)


# =============================================================================
# Parity constraint and angle identity
# =============================================================================


def test_even_coeffs_kuhn():
    c = even_constraint_coeffs(kuhn_diagonal())
    expect = np.array([(-1) ** j * 2 / math.sqrt(3) for j in range(1, 7)])
    assert np.allclose(c, expect, atol=1e-14)


def test_even_coeffs_singular_vanish():
    assert np.allclose(even_constraint_coeffs(stack_singular()), 0, atol=1e-12)


def test_even_coeffs_reject_odd(rng):
    with pytest.raises(NotEvenInterior):
        even_constraint_coeffs(random_patch(rng, 3, EdgeKind.INTERIOR_ODD))
    with pytest.raises(NotEvenInterior):
        even_constraint_coeffs(random_patch(rng, 2, EdgeKind.BOUNDARY))


def test_even_coeffs_annihilate_basis(rng):
    for m in (4, 6, 8):
        p = random_patch(rng, m, EdgeKind.INTERIOR_EVEN)
        c = even_constraint_coeffs(p)
        for T in tt_e_basis(p):
            assert abs(c @ T.nn_values()) <= 1e-12


def test_nn_map_rank(rng):
    # rank m-1 (even non-singular), m (singular, odd)
    cases = [(EdgeKind.INTERIOR_EVEN, 6, 5), (EdgeKind.SINGULAR, 4, 4), (EdgeKind.INTERIOR_ODD, 5, 5)]
    for kind, m, rank in cases:
        p = random_patch(rng, m, kind)
        N = np.array([T.nn_values() for T in tt_e_basis(p)])
        assert np.linalg.matrix_rank(N, tol=1e-10) == rank


def test_angle_identity_on_kuhn_basis():
    p = kuhn_diagonal()
    for T in tt_e_basis(p):
        for j in range(p.m):
            assert abs(angle_identity_residual(p, T, j)) <= 1e-12


def test_angle_identity_zero_tensor():
    p = kuhn_diagonal()
    assert angle_identity_residual(p, PatchTensor(p, np.zeros((6, 3, 3))), 0) == 0.0


def test_angle_identity_two_face_boundary():
    # one element, two faces: t1 t1^T on the only block
    p = synthetic_patch([1.1], boundary=True, t=(0.3, -0.2, 0.9))
    T = PatchTensor(p, np.outer(p.tangents[0], p.tangents[0])[None])
    assert abs(angle_identity_residual(p, T, 0)) <= 1e-12


# =============================================================================
# Two-normal reconstruction
# =============================================================================


def frame(theta):
    t = np.array([0.0, 0.0, 1.0])
    n1 = np.array([1.0, 0.0, 0.0])
    t1 = np.cross(n1, t)
    n2 = math.cos(theta) * n1 - math.sin(theta) * t1
    return t, n1, t1, n2


def test_reconstruct_right_angle_unit():
    t, n1, _, n2 = frame(math.pi / 2)
    T = sym_from_two_normals(n1, n2, t, n1, np.zeros(3))
    assert np.allclose(T, np.outer(n1, n1), atol=1e-15)
    assert np.linalg.norm(T) ** 2 <= norm_bound(math.pi / 2, n1, np.zeros(3))


def test_reconstruct_right_angle_swap():
    t, n1, t1, n2 = frame(math.pi / 2)
    T = sym_from_two_normals(n1, n2, t, n2, n1)
    assert np.allclose(T, -(np.outer(n1, t1) + np.outer(t1, n1)), atol=1e-15)
    assert np.linalg.norm(T) ** 2 == pytest.approx(2.0)
    assert 2.0 <= norm_bound(math.pi / 2, n2, n1)


def random_compatible(rng, n1, n2, t1, t2):
    # pick l1 freely in the plane, then l2 with l2.n1 = l1.n2
    l1 = rng.normal() * n1 + rng.normal() * t1
    a = rng.normal()
    # l2 = x n2 + a t2, solve (x n2 + a t2).n1 = l1.n2
    x = (l1 @ n2 - a * (t2 @ n1)) / (n2 @ n1)
    return l1, x * n2 + a * t2


def test_reconstruct_random_quarter_pi(rng):
    theta = math.pi / 4
    t, n1, t1, n2 = frame(theta)
    t2 = np.cross(n2, t)
    slack = np.inf
    for _ in range(1000):
        l1, l2 = random_compatible(rng, n1, n2, t1, t2)
        T = sym_from_two_normals(n1, n2, t, l1, l2)
        assert np.allclose(T @ n1, l1, atol=1e-12) and np.allclose(T @ n2, l2, atol=1e-12)
        assert np.allclose(T @ t, 0, atol=1e-14)
        slack = min(slack, norm_bound(theta, l1, l2) - np.linalg.norm(T) ** 2)
    assert slack >= 0


def test_reconstruct_incompatible():
    t, n1, t1, n2 = frame(1.0)
    with pytest.raises(IncompatibleData):
        sym_from_two_normals(n1, n2, t, n1, t1)


def test_reconstruct_colinear():
    t, n1, _, _ = frame(1.0)
    with pytest.raises(ColinearNormals):
        sym_from_two_normals(n1, n1, t, n1, n1)


# =============================================================================
# nn constructions
# =============================================================================


def test_odd_equal_angles():
    p = synthetic_patch([2 * math.pi / 3] * 3, boundary=False)
    T = nn_unit_tensor(p)
    assert np.allclose(T.nn_values(), [1, 0, 0], atol=1e-14)
    assert np.allclose(T.nn_values(), nn_unit_tensor(p, oracle=True).nn_values(), atol=1e-12)
    # alpha_1 = 0, alpha_2 = cot(2 pi / 3): T n_j = nn_j n_j + alpha_j t_j
    a = [float(p.tangents[j] @ T.face_block(j) @ p.normals[j]) for j in range(3)]
    assert a[0] == pytest.approx(0.0, abs=1e-14)
    assert a[1] == pytest.approx(-1 / math.sqrt(3), abs=1e-14)


def test_kuhn_diagonal_even_case():
    p = kuhn_diagonal()
    T = nn_unit_tensor(p, kappa=0.1)
    assert even_beta(p.theta) == pytest.approx(1.0, abs=1e-14)
    assert np.allclose(T.nn_values(), [1, 1, 0, 0, 0, 0], atol=1e-14)
    a = [float(p.tangents[j] @ T.face_block(j) @ p.normals[j]) for j in range(6)]
    assert a[1] == pytest.approx(0.0, abs=1e-14)
    assert a[2] == pytest.approx(1 / math.sqrt(3), abs=1e-14)
    O = nn_unit_tensor(p, oracle=True)
    assert np.allclose(O.nn_values(), T.nn_values(), atol=1e-12)


def test_singular_case():
    th = math.pi / 3
    p = synthetic_patch([th, math.pi - th, th, math.pi - th], boundary=False)
    assert p.kind is EdgeKind.SINGULAR
    T = nn_unit_tensor(p)
    assert np.allclose(T.nn_values(), [1, 0, 0, 0], atol=1e-14)
    a = [float(p.tangents[j] @ T.face_block(j) @ p.normals[j]) for j in range(4)]
    assert np.allclose(a, [1 / math.sqrt(3), 0, 0, 0], atol=1e-14)
    assert np.allclose(nn_unit_tensor(p, oracle=True).nn_values(), T.nn_values(), atol=1e-12)


def test_nn_unit_requires_interior():
    with pytest.raises(NotInterior):
        nn_unit_tensor(synthetic_patch([1.0, 1.0], boundary=True))


def test_four_element_even_fails_strict(rng):
    p = random_patch(rng, 4, EdgeKind.INTERIOR_EVEN)
    with pytest.raises(AssumptionViolated):
        nn_unit_tensor(p)
    T = nn_unit_tensor(p, strict=False)
    assert np.allclose(T.nn_values()[[0, 2, 3]], [1, 0, 0], atol=1e-12)


def test_boundary_prescriptions():
    p1 = synthetic_patch([1.2], boundary=True)
    T = nn_unit_tensor_boundary(p1, 0)
    assert np.allclose(T.nn_values(), [1, 0], atol=1e-12)
    p2 = synthetic_patch([1.2, 0.9], boundary=True)
    T = nn_unit_tensor_boundary(p2, 0)
    assert np.allclose(T.nn_values(), [1, 0, 0], atol=1e-12)
    assert T.continuity_residual() <= 1e-12


def test_even_prescription_violating_parity():
    p = kuhn_diagonal()
    with pytest.raises(InfeasiblePrescription):
        prescribe_nn(p, [1, 0, 0, 0, 0, 0])


def test_pair_tensors_on_mesh():
    for p in build_all_patches(gen_kuhn_mesh(2)):
        for j in range(p.m):
            T = nn_pair_tensor(p, j)
            v = T.nn_values()
            pos = {j, j + 1} if not p.interior else {j, (j + 1) % p.m}
            assert all(v[i] > 0 for i in pos)
            assert all(abs(v[i]) <= 1e-12 for i in range(len(v)) if i not in pos)
            assert T.continuity_residual() <= 1e-12
