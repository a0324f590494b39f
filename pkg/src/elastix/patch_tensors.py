"""Piecewise-constant cross-section tensors on an edge patch.

A patch tensor assigns one symmetric 3x3 tensor to every element around an
edge. All blocks annihilate the edge tangent and the normal component is
continuous across the faces shared by two patch elements.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import EdgeKind, EdgePatch, check_assumption, synthetic_patch

RANK_RTOL = 1e-10


class PatchTensorError(ValueError):
    pass


class NotEvenInterior(PatchTensorError):
    pass


class NotInterior(PatchTensorError):
    pass


class AssumptionViolated(PatchTensorError):
    pass


class IncompatibleData(PatchTensorError):
    pass


class ColinearNormals(PatchTensorError):
    pass


class InfeasiblePrescription(PatchTensorError):
    pass


@dataclass
class PatchTensor:
    patch: EdgePatch
    blocks: np.ndarray  # (m, 3, 3)

    def face_block(self, j: int) -> np.ndarray:
        return self.blocks[self.patch.element_of_face(j)]

    def nn(self, j: int) -> float:
        n = self.patch.normals[j]
        return float(n @ self.face_block(j) @ n)

    def nn_values(self) -> np.ndarray:
        """Normal-normal components on every distinct face of the patch."""
        nf = self.patch.m + (0 if self.patch.interior else 1)
        return np.array([self.nn(j) for j in range(nf)])

    def norm(self) -> float:
        return float(np.linalg.norm(self.blocks))

    def block_norms(self) -> np.ndarray:
        return np.linalg.norm(self.blocks, axis=(1, 2))

    def continuity_residual(self) -> float:
        p = self.patch
        r = 0.0
        for j in p.interior_faces():
            a, b = self.blocks[(j - 1) % p.m], self.blocks[j]
            r = max(r, float(np.linalg.norm((a - b) @ p.normals[j])))
        return r

    def tangent_residual(self) -> float:
        return float(np.max(np.linalg.norm(self.blocks @ self.patch.t, axis=1)))

    def symmetry_residual(self) -> float:
        return float(np.max(np.abs(self.blocks - self.blocks.transpose(0, 2, 1))))

    def __add__(self, other: "PatchTensor") -> "PatchTensor":
        return PatchTensor(self.patch, self.blocks + other.blocks)

    def __mul__(self, s: float) -> "PatchTensor":
        return PatchTensor(self.patch, self.blocks * s)

    __rmul__ = __mul__


def cross_section_frame(t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u1 = a - (a @ t) * t
    u1 /= np.linalg.norm(u1)
    return u1, np.cross(t, u1)


def _cross_section_basis(t):
    # Frobenius-orthonormal basis of symmetric tensors acting in the plane normal to t
    u1, u2 = cross_section_frame(t)
    return np.array([np.outer(u1, u1), np.outer(u2, u2), (np.outer(u1, u2) + np.outer(u2, u1)) / math.sqrt(2.0)])


def _continuity_matrix(patch: EdgePatch) -> np.ndarray:
    m = patch.m
    E = _cross_section_basis(patch.t)
    u = cross_section_frame(patch.t)
    faces = patch.interior_faces()
    C = np.zeros((2 * len(faces), 3 * m))
    for r, j in enumerate(faces):
        n = patch.normals[j]
        En = E @ n  # (3 basis, 3 space)
        for side, sign in (((j - 1) % m, 1.0), (j, -1.0)):
            for a in range(2):
                C[2 * r + a, 3 * side:3 * side + 3] += sign * (En @ u[a])
    return C


def _null_space(M: np.ndarray, ncols: int) -> np.ndarray:
    if M.size == 0:
        return np.eye(ncols)
    _, s, Vt = np.linalg.svd(M)
    tol = RANK_RTOL * (s[0] if len(s) else 0.0)
    rank = int(np.sum(s > tol))
    return Vt[rank:].T


def tt_e_basis(patch: EdgePatch) -> list[PatchTensor]:
    """Orthonormal basis (block-Frobenius) of the patch tensor space."""
    m = patch.m
    E = _cross_section_basis(patch.t)
    N = _null_space(_continuity_matrix(patch), 3 * m)
    out = []
    for k in range(N.shape[1]):
        coef = N[:, k].reshape(m, 3)
        out.append(PatchTensor(patch, np.einsum("ea,aij->eij", coef, E)))
    return out


def expected_dim(patch: EdgePatch) -> int:
    return {
        EdgeKind.BOUNDARY: patch.m + 2,
        EdgeKind.INTERIOR_ODD: patch.m,
        EdgeKind.INTERIOR_EVEN: patch.m,
        EdgeKind.SINGULAR: patch.m + 1,
    }[patch.kind]


def _cot(x):
    return 1.0 / np.tan(x)


def even_constraint_coeffs(patch: EdgePatch) -> np.ndarray:
    """Weights c with sum_j c_j nn_j = 0 on every patch tensor of an even interior patch.

    Entry ``j`` (0-based face index) is (-1)^(j+1) (cot theta_{j-1} + cot theta_j)
    with cyclic indexing.
    """
    if not patch.interior or patch.m % 2:
        raise NotEvenInterior(f"patch is {patch.kind.value} with m={patch.m}")
    th = patch.theta
    cot = _cot(th)
    sign = np.array([(-1.0) ** (j + 1) for j in range(patch.m)])
    return sign * (np.roll(cot, 1) + cot)


def angle_identity_residual(patch: EdgePatch, T: PatchTensor, j: int) -> float:
    """(nn_j - nn_{j+1}) cot theta_j - (n_j.T t_j + n_{j+1}.T t_{j+1}) on element j."""
    B = T.blocks[j]
    n0, n1 = patch.normals[j], patch.normals[j + 1]
    t0, t1 = patch.tangents[j], patch.tangents[j + 1]
    return float((n0 @ B @ n0 - n1 @ B @ n1) / math.tan(patch.theta[j]) - (n0 @ B @ t0 + n1 @ B @ t1))


def sym_from_two_normals(n1, n2, t, l1, l2, rtol: float = 1e-10) -> np.ndarray:
    """Unique symmetric T with T t = 0, T n1 = l1 and T n2 = l2."""
    n1, n2, t, l1, l2 = (np.asarray(v, dtype=float) for v in (n1, n2, t, l1, l2))
    t1 = np.cross(n1, t)
    cos = float(n1 @ n2)
    sin = -float(t1 @ n2)
    if abs(sin) < 1e-12:
        raise ColinearNormals("normals are colinear")
    scale = max(np.linalg.norm(l1), np.linalg.norm(l2), 1e-300)
    if abs(l1 @ n2 - l2 @ n1) > rtol * scale:
        raise IncompatibleData(f"l1.n2 - l2.n1 = {l1 @ n2 - l2 @ n1:.3e}")
    A = float(l1 @ n1)
    C = float(l1 @ t1)
    B = (C * cos - float(l2 @ t1)) / sin
    return A * np.outer(n1, n1) + B * np.outer(t1, t1) + C * (np.outer(n1, t1) + np.outer(t1, n1))


def norm_bound(theta: float, l1, l2) -> float:
    """Right-hand side (3/2 + 2 cot^2 theta)(|l1|^2 + |l2|^2) of the reconstruction bound."""
    return (1.5 + 2.0 / math.tan(theta) ** 2) * (float(np.dot(l1, l1)) + float(np.dot(l2, l2)))


def tensor_from_face_data(patch: EdgePatch, nn: np.ndarray, alpha: np.ndarray) -> PatchTensor:
    """Blocks with T n_j = nn_j n_j + alpha_j t_j on every face."""
    m = patch.m
    l = nn[:, None] * patch.normals[: len(nn)] + alpha[:, None] * patch.tangents[: len(nn)]
    blocks = np.empty((m, 3, 3))
    for j in range(m):
        jn = (j + 1) % len(nn)
        blocks[j] = sym_from_two_normals(patch.normals[j], patch.normals[j + 1], patch.t, l[j], l[jn])
    return PatchTensor(patch, blocks)


def even_beta(theta: np.ndarray) -> float:
    cot = _cot(np.asarray(theta))
    return float((cot[0] + cot[-1]) / (cot[0] + cot[1]))


def nn_unit_tensor(patch: EdgePatch, oracle: bool = False, strict: bool = True, kappa: float = 0.0) -> PatchTensor:
    """Patch tensor with nn = 1 on the first face and 0 on faces 3..m.

    On even non-singular patches the second face carries the positive value
    beta; elsewhere it is 0. ``strict`` enforces the angle assumption with
    margin ``kappa``; otherwise only the closed form's denominators are checked.
    """
    if not patch.interior:
        raise NotInterior("use nn_unit_tensor_boundary for boundary patches")
    m = patch.m
    if m < 3:
        raise AssumptionViolated(f"interior patch with m={m} < 3")
    kind = patch.kind
    if strict:
        rep = check_assumption(patch, kappa)
        if not rep.passed:
            raise AssumptionViolated("; ".join(rep.violations))
    if oracle:
        target = np.zeros(m)
        target[0] = 1.0
        free = [1] if kind is EdgeKind.INTERIOR_EVEN else []
        return prescribe_nn(patch, target, free=free)

    cot = _cot(patch.theta)
    nn = np.zeros(m)
    nn[0] = 1.0
    alpha = np.zeros(m)
    if kind is EdgeKind.INTERIOR_ODD:
        alpha[0] = (cot[0] - cot[-1]) / 2.0
        a2 = (cot[0] + cot[-1]) / 2.0
        for j in range(1, m):
            alpha[j] = (-1.0) ** (j + 1) * a2
    elif kind is EdgeKind.INTERIOR_EVEN:
        denom = cot[0] + cot[1]
        if abs(denom) < 1e-12:
            raise AssumptionViolated("cot(theta_1) + cot(theta_2) vanishes")
        beta = (cot[0] + cot[-1]) / denom
        if strict and beta <= 0:
            raise AssumptionViolated(f"beta = {beta:.6g} is not positive")
        nn[1] = beta
        alpha[1] = (1.0 - beta) * cot[0]
        for j in range(2, m):
            alpha[j] = (-1.0) ** (j - 2) * cot[-1]
    else:
        alpha[0] = cot[0]
    return tensor_from_face_data(patch, nn, alpha)


def _nn_matrix(patch: EdgePatch, basis: list[PatchTensor]) -> np.ndarray:
    return np.array([T.nn_values() for T in basis]).T


def prescribe_nn(patch: EdgePatch, target, free=(), tol: float = 1e-10) -> PatchTensor:
    """Least-norm patch tensor with the given nn values (faces in ``free`` unconstrained)."""
    basis = tt_e_basis(patch)
    N = _nn_matrix(patch, basis)
    target = np.asarray(target, dtype=float)
    rows = [j for j in range(N.shape[0]) if j not in set(free)]
    x, *_ = np.linalg.lstsq(N[rows], target[rows], rcond=RANK_RTOL)
    res = float(np.linalg.norm(N[rows] @ x - target[rows]))
    if res > tol * max(1.0, float(np.linalg.norm(target))):
        raise InfeasiblePrescription(f"nn prescription residual {res:.3e}")
    blocks = np.tensordot(x, np.array([T.blocks for T in basis]), axes=1)
    return PatchTensor(patch, blocks)


def nn_unit_tensor_boundary(patch: EdgePatch, face: int = 0) -> PatchTensor:
    if patch.interior:
        raise PatchTensorError("boundary patch expected")
    target = np.zeros(patch.m + 1)
    target[face] = 1.0
    return prescribe_nn(patch, target)


def nn_pair_tensor(patch: EdgePatch, j: int, strict: bool = True, kappa: float = 0.0) -> PatchTensor:
    """Patch tensor with positive nn on both faces of element ``j`` and zero elsewhere."""
    m = patch.m
    if not patch.interior:
        target = np.zeros(m + 1)
        target[j] = target[j + 1] = 1.0
        return prescribe_nn(patch, target)

    def unrotate(T: PatchTensor, s: int) -> PatchTensor:
        return PatchTensor(patch, np.roll(T.blocks, s, axis=0))

    first = unrotate(nn_unit_tensor(patch.rotated(j), strict=strict, kappa=kappa), j)
    if patch.kind is EdgeKind.INTERIOR_EVEN:
        return first
    s = (j + 1) % m
    return first + unrotate(nn_unit_tensor(patch.rotated(s), strict=strict, kappa=kappa), s)


# ---------------------------------------------------------------------------
# random patches for property tests


def _random_frame(rng):
    t = rng.normal(size=3)
    t /= np.linalg.norm(t)
    n1 = rng.normal(size=3)
    return t, n1


def random_angles(rng, m: int, kind: EdgeKind, kappa: float = 0.2, max_tries: int = 100000) -> np.ndarray:
    if kind is EdgeKind.SINGULAR:
        if m != 4:
            raise ValueError("singular patches have m = 4")
        a = rng.uniform(kappa, math.pi - kappa)
        return np.array([a, math.pi - a, a, math.pi - a])
    total = 2 * math.pi
    if kind is EdgeKind.BOUNDARY:
        total = rng.uniform(m * kappa, min(2 * math.pi, m * (math.pi - kappa)))
    for _ in range(max_tries):
        th = kappa + (total - m * kappa) * rng.dirichlet(np.ones(m))
        if np.any(th >= math.pi - kappa):
            continue
        if kind is EdgeKind.INTERIOR_EVEN:
            if m % 2:
                raise ValueError("even kind needs even m")
            if m >= 6 and np.any(th + np.roll(th, -1) >= math.pi - kappa):
                continue
            if m == 4 and abs(th[0] + th[1] - math.pi) < 1e-3:
                continue
        elif kind is EdgeKind.INTERIOR_ODD and m % 2 == 0:
            raise ValueError("odd kind needs odd m")
        return th
    raise RuntimeError("could not sample angles")


def random_patch(rng, m: int, kind: EdgeKind, kappa: float = 0.2) -> EdgePatch:
    """Mesh-free patch with random angles and orientation.

    Even patches with m >= 6 satisfy the adjacent-sum condition; m = 4 even
    patches cannot and only avoid the singular configuration.
    """
    th = random_angles(rng, m, kind, kappa)
    t, n1 = _random_frame(rng)
    p = synthetic_patch(th, boundary=kind is EdgeKind.BOUNDARY, t=t, n1=n1)
    assert p.kind is kind, (p.kind, kind)
    return p
