"""The global stress space as a constrained subspace of discontinuous P3 tensors.

Each element carries 120 nodal values: 6 components at the 20 degree-3
lattice nodes, stored at index ``120*k + 20*c + i``. Normal continuity on a
face is equivalent to matching tau n at the 10 lattice nodes of that face,
and vertex continuity is pointwise, so every continuity row only couples the
values that live on one geometric node. The constraint system is therefore
block diagonal over geometric nodes and is rank-reduced node by node.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .element import DofTable, dof_functionals, dof_matrix_rows, eval_dof_quadrature
from .mesh import EdgePatch, TetMesh, build_all_patches, check_assumption
from .patch_tensors import AssumptionViolated, PatchTensor, nn_pair_tensor
from .poly import SymTensorPoly, lagrange_nodes, monomial_exponents, sym_to_vec
from .quadrature import quadrature_rule

NODE_RTOL = 1e-10
LOCAL_DIM = 120


class RankFailure(RuntimeError):
    pass


class SingularDofMatrix(RuntimeError):
    pass


class DegenerateCombination(RuntimeError):
    pass


def node_key(tet, exponent) -> tuple:
    """Geometric identity of a lattice node: sorted (vertex, exponent) pairs."""
    return tuple(sorted((int(v), int(a)) for v, a in zip(tet, exponent) if a > 0))


def disc_index(k: int, c: int, i: int) -> int:
    return LOCAL_DIM * k + 20 * c + i


@dataclass
class ContinuityConstraints:
    """Face and vertex matching rows, plus their node-wise rank reduction.

    ``rows`` is the full (redundant) row set; ``reduced`` has orthonormal rows
    spanning the same row space.
    """

    rows: sp.csr_matrix
    reduced: sp.csr_matrix

    @property
    def rank(self) -> int:
        return self.reduced.shape[0]


@dataclass
class StressSpace:
    mesh: TetMesh
    patches: list
    constraints: ContinuityConstraints
    basis: sp.csr_matrix  # (120 nK, dim), orthonormal columns

    @property
    def n_disc(self) -> int:
        return LOCAL_DIM * self.mesh.n_tets

    @property
    def dim(self) -> int:
        return self.basis.shape[1]

    def expand(self, y: np.ndarray) -> np.ndarray:
        """Discontinuous nodal vector of the space member with coordinates ``y``."""
        return self.basis @ y

    def project(self, x: np.ndarray) -> np.ndarray:
        return self.basis.T @ x

    def element_polys(self, x: np.ndarray, elements=None) -> dict:
        """Per-element SymTensorPoly of a discontinuous nodal vector."""
        ks = range(self.mesh.n_tets) if elements is None else elements
        return {k: element_poly(x, k) for k in ks}

    def constraint_residual(self, x: np.ndarray) -> float:
        r = self.constraints.rows @ x
        return float(np.max(np.abs(r))) if r.size else 0.0


def element_poly(x: np.ndarray, k: int) -> SymTensorPoly:
    return SymTensorPoly.from_nodal(np.asarray(x[LOCAL_DIM * k:LOCAL_DIM * (k + 1)]).reshape(6, 20))


def _node_table(mesh: TetMesh) -> dict:
    exps = monomial_exponents(3, 4)
    nodes: dict[tuple, list] = {}
    for k, tet in enumerate(mesh.tets.tolist()):
        for i, e in enumerate(exps):
            nodes.setdefault(node_key(tet, e), []).append((k, i))
    return nodes


def _node_rows(mesh: TetMesh, key, members, face_normals):
    """Dense constraint rows on the 6*len(members) values of one geometric node."""
    verts = {v for v, _ in key}
    pos = {k: a for a, (k, _) in enumerate(members)}
    nloc = 6 * len(members)
    rows = []
    if len(verts) == 1:
        # full tensor match along a chain of the elements at this vertex
        for a in range(len(members) - 1):
            for c in range(6):
                r = np.zeros(nloc)
                r[6 * a + c] = 1.0
                r[6 * (a + 1) + c] = -1.0
                rows.append(r)
    # normal-trace match on every interior face through the node
    ks = [k for k, _ in members]
    candidate_faces = set()
    for k in ks:
        for f in mesh.tet_faces[k]:
            candidate_faces.add(int(f))
    for f in sorted(candidate_faces):
        owners = mesh.face_tets[f]
        if len(owners) != 2 or not verts.issubset(set(mesh.faces[f].tolist())):
            continue
        n = face_normals[f]
        for d in range(3):
            r = np.zeros(nloc)
            for k, sign in zip(owners, (1.0, -1.0)):
                a = pos[k]
                # (tau n)_d = sum_j tau_dj n_j
                for c, (i, j) in enumerate(((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))):
                    if i == d:
                        r[6 * a + c] += sign * n[j]
                    elif j == d:
                        r[6 * a + c] += sign * n[i]
            rows.append(r)
    return np.array(rows).reshape(-1, nloc)


def build_space(mesh: TetMesh, patches: list[EdgePatch] | None = None) -> StressSpace:
    """Continuity constraints and an orthonormal, node-local basis of the stress space."""
    if patches is None:
        patches = build_all_patches(mesh)
    normals = mesh.face_normals()
    nodes = _node_table(mesh)
    full_r, full_c, full_v = [], [], []
    red_r, red_c, red_v = [], [], []
    z_r, z_c, z_v = [], [], []
    nrow_full = nrow_red = ncol = 0
    for key in sorted(nodes):
        members = sorted(nodes[key])
        gidx = np.array([disc_index(k, c, i) for k, i in members for c in range(6)])
        C = _node_rows(mesh, key, members, normals)
        nloc = len(gidx)
        if len(C):
            _, s, Vt = np.linalg.svd(C)
            if not np.all(np.isfinite(s)):
                raise RankFailure(f"SVD failed at node {key}")
            rank = int(np.sum(s > NODE_RTOL * s[0]))
            R, Z = Vt[:rank], Vt[rank:]
            rr, cc = np.nonzero(C)
            full_r.append(rr + nrow_full)
            full_c.append(gidx[cc])
            full_v.append(C[rr, cc])
            nrow_full += len(C)
        else:
            rank = 0
            R, Z = np.zeros((0, nloc)), np.eye(nloc)
        for mat, (rl, cl, vl), off in ((R, (red_r, red_c, red_v), nrow_red), (Z, (z_r, z_c, z_v), ncol)):
            if mat.size:
                rr, cc = np.nonzero(np.abs(mat) > 1e-15)
                rl.append(rr + off)
                cl.append(gidx[cc])
                vl.append(mat[rr, cc])
        nrow_red += rank
        ncol += nloc - rank

    n = LOCAL_DIM * mesh.n_tets

    def coo(r, c, v, shape):
        if not r:
            return sp.csr_matrix(shape)
        return sp.csr_matrix((np.concatenate(v), (np.concatenate(r), np.concatenate(c))), shape=shape)

    rows = coo(full_r, full_c, full_v, (nrow_full, n))
    reduced = coo(red_r, red_c, red_v, (nrow_red, n))
    # basis columns are stored transposed while collecting (row = column index)
    Zt = coo(z_r, z_c, z_v, (ncol, n))
    return StressSpace(mesh, list(patches), ContinuityConstraints(rows, reduced), Zt.T.tocsr())


# ---------------------------------------------------------------------------
# unisolvence


def dof_matrix(space: StressSpace, table: DofTable) -> sp.csr_matrix:
    r, c, v = dof_matrix_rows(space.mesh, table)
    return sp.csr_matrix((v, (r, c)), shape=(len(table), space.n_disc))


@dataclass
class UnisolvenceReport:
    n_dofs: int
    dim: int
    square: bool
    rank: int
    sigma_min: float
    sigma_max: float
    counts: dict

    @property
    def condition(self) -> float:
        return self.sigma_max / self.sigma_min if self.sigma_min > 0 else float("inf")

    @property
    def nonsingular(self) -> bool:
        return self.square and self.sigma_min > 1e-10 * self.sigma_max

    @property
    def passed(self) -> bool:
        return self.nonsingular

    def to_dict(self) -> dict:
        return {
            "counts": dict(self.counts),
            "n_dofs": self.n_dofs,
            "dim_sigma_h": self.dim,
            "square": self.square,
            "rank": self.rank,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "condition": self.condition,
            "pass": self.passed,
        }


def verify_unisolvence(space: StressSpace, table: DofTable) -> UnisolvenceReport:
    M = (dof_matrix(space, table) @ space.basis).toarray()
    s = np.linalg.svd(M, compute_uv=False)
    smax = float(s[0]) if len(s) else 0.0
    smin = float(s[-1]) if M.shape[0] == M.shape[1] and len(s) else 0.0
    rank = int(np.sum(s > 1e-10 * smax)) if len(s) else 0
    return UnisolvenceReport(len(table), space.dim, M.shape[0] == M.shape[1], rank, smin, smax, dict(table.counts))


def write_dof_report(report: UnisolvenceReport, path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n")


# ---------------------------------------------------------------------------
# interpolation


def canonical_interpolation(sigma, space: StressSpace, table: DofTable, degree: int = 10) -> np.ndarray:
    """Discontinuous nodal vector of the space member sharing all DoF values of ``sigma``.

    ``sigma`` maps physical points (npts, 3) to tensors (npts, 3, 3), or is a
    dict of per-element SymTensorPoly for piecewise fields.
    """
    M = (dof_matrix(space, table) @ space.basis).toarray()
    if M.shape[0] != M.shape[1]:
        raise SingularDofMatrix(f"DoF matrix is {M.shape[0]}x{M.shape[1]}")
    b = np.array([eval_dof_quadrature(f, sigma, space.mesh, degree) for f in table])
    try:
        y = np.linalg.solve(M, b)
    except np.linalg.LinAlgError as exc:
        raise SingularDofMatrix(str(exc)) from exc
    return space.expand(y)


# ---------------------------------------------------------------------------
# dual face bubbles


def _bubble_nodal(mesh: TetMesh, patch: EdgePatch, T: PatchTensor, x0: int, xs: int) -> np.ndarray:
    """Nodal vector of lambda_0 lambda_s (lambda_0 - 1/3) T over the patch of edge (x0, xs)."""
    out = np.zeros(LOCAL_DIM * mesh.n_tets)
    nodes = lagrange_nodes(3, 4)
    for j, k in enumerate(patch.elements):
        tet = mesh.tets[k].tolist()
        l0 = nodes[:, tet.index(x0)]
        ls = nodes[:, tet.index(xs)]
        phi = l0 * ls * (l0 - 1.0 / 3.0)
        out[LOCAL_DIM * k:LOCAL_DIM * (k + 1)] = np.outer(sym_to_vec(T.blocks[j]), phi).ravel()
    return out


def _patch_face_position(patch: EdgePatch, face: int) -> int:
    return patch.faces.index(face)


@dataclass
class DualFaceBubble:
    face: int
    index: int
    nodal: np.ndarray  # discontinuous nodal vector
    ratios: tuple  # (r1, r2)
    denominator: float
    tensors: tuple  # (T1, T2, T3)


def dual_face_bubble(
    mesh: TetMesh, patches: list[EdgePatch], face: int, i: int, kappa: float = 0.0, strict: bool = True
) -> DualFaceBubble:
    """Member of the space whose nn moments against P1 vanish on every face but ``face``.

    On ``face`` its moment against the barycentric function of vertex ``i``
    (position in the sorted face triple) is |F| and the other two vanish.
    """
    by_edge = {p.edge: p for p in patches}
    fverts = [int(v) for v in mesh.faces[face]]
    k = mesh.face_tets[face][0]
    tet = [int(v) for v in mesh.tets[k]]
    x0 = fverts[i]
    x2 = next(v for v in tet if v not in fverts)
    x1, x3 = [v for v in fverts if v != x0]
    x = {0: x0, 1: x1, 2: x2, 3: x3}
    # face of K opposite local vertex x_r
    F = {r: int(mesh.tet_faces[k][tet.index(x[r])]) for r in range(4)}

    Ts, deltas, pats = {}, {}, {}
    for s in (1, 2, 3):
        e = mesh.edge_index[tuple(sorted((x0, x[s])))]
        p = by_edge[e]
        if strict:
            rep = check_assumption(p, kappa)
            if not rep.passed:
                raise AssumptionViolated(f"edge {e}: " + "; ".join(rep.violations))
        j = p.elements.index(k)
        Ts[s] = nn_pair_tensor(p, j, strict=strict, kappa=kappa)
        pats[s] = p
        deltas[s] = _bubble_nodal(mesh, p, Ts[s], x0, x[s])

    def nn(s, r):
        return Ts[s].nn(_patch_face_position(pats[s], F[r]))

    d23, d31 = nn(2, 3), nn(3, 1)
    if min(abs(d23), abs(d31)) < 1e-12:
        raise DegenerateCombination("vanishing nn value in the elimination ratios")
    r1 = nn(1, 3) / d23
    r2 = nn(2, 1) / d31
    denom = nn(1, 2) + r1 * r2 * nn(3, 2)
    if abs(denom) < 1e-12:
        raise DegenerateCombination(f"combination nn value {denom:.3e}")
    comb = deltas[1] - r1 * deltas[2] + r1 * r2 * deltas[3]
    return DualFaceBubble(face, i, 180.0 * comb / denom, (r1, r2), denom, (Ts[1], Ts[2], Ts[3]))


def face_nn_moments(mesh: TetMesh, x: np.ndarray, face: int, side: int = 0) -> np.ndarray:
    """Moments of n^T tau n against the three face barycentrics, read from one owner."""
    k = mesh.face_tets[face][min(side, len(mesh.face_tets[face]) - 1)]
    fverts = [int(v) for v in mesh.faces[face]]
    tet = mesh.tets[k].tolist()
    rule = quadrature_rule(2, 6)
    bary = np.zeros((len(rule.points), 4))
    for a, v in enumerate(fverts):
        bary[:, tet.index(v)] = rule.points[:, a]
    n = mesh.face_normals()[face]
    tau = element_poly(x, k).evaluate(bary)
    nn = np.einsum("i,pij,j->p", n, tau, n)
    area = float(mesh.face_areas()[face])
    return np.array([rule.integrate(nn * rule.points[:, a], area) for a in range(3)])
