"""Local element algebra: H(div) bubbles, face Nedelec fields and DoF functionals."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .mesh import TET_EDGES, EdgeKind, EdgePatch, TetMesh
from .poly import (
    SymTensorPoly,
    contraction_vector,
    elevation_matrix,
    eval_monomials,
    monomial_index,
    moment_table,
    multiply_table,
    restriction_matrix,
    vandermonde_inv,
)
from .quadrature import quadrature_rule


class MissingElementData(KeyError):
    pass


class UnclassifiedEdge(ValueError):
    pass


# ---------------------------------------------------------------------------
# bubbles


def bubble_basis(vertices) -> tuple[list[SymTensorPoly], int]:
    """Spanning set lambda_i lambda_j lambda_k T_ij of the degree-3 H(div) bubbles.

    Returns the 24 polynomials (6 edges times 4 linear factors) and the rank of
    the set.
    """
    x = np.asarray(vertices, dtype=float)
    idx = monomial_index(3, 4)
    out = []
    for i, j in TET_EDGES:
        t = x[j] - x[i]
        t /= np.linalg.norm(t)
        T = np.outer(t, t)
        for k in range(4):
            e = [0, 0, 0, 0]
            e[i] += 1
            e[j] += 1
            e[k] += 1
            c = np.zeros(20)
            c[idx[tuple(e)]] = 1.0
            out.append(SymTensorPoly.scalar_times_tensor(c, 3, T))
    M = np.array([p.coeffs.ravel() for p in out])
    rank = int(np.linalg.matrix_rank(M))
    return out, rank


# ---------------------------------------------------------------------------
# Nedelec fields on a face


def face_frame(face_vertices):
    """Centroid, orthonormal in-plane axes (e1, e2) and unit normal of a triangle."""
    x = np.asarray(face_vertices, dtype=float)
    c = x.mean(axis=0)
    e1 = x[1] - x[0]
    e1 /= np.linalg.norm(e1)
    n = np.cross(x[1] - x[0], x[2] - x[0])
    n /= np.linalg.norm(n)
    return c, e1, np.cross(n, e1), n


@dataclass(frozen=True, eq=False)
class NedelecBasis:
    """Eight tangential fields, each a degree-2 polynomial in face barycentrics.

    ``coeffs[k, b, :]`` is the vector coefficient of monomial ``b`` of field ``k``.
    """

    coeffs: np.ndarray  # (8, 6, 3)
    normal: np.ndarray

    def __len__(self):
        return len(self.coeffs)

    def evaluate(self, bary) -> np.ndarray:
        """(8, npts, 3) field values."""
        return np.einsum("pb,kbi->kpi", eval_monomials(2, bary), self.coeffs)


def nedelec_face_basis(face_vertices) -> NedelecBasis:
    """P1 tangent fields plus the two quadratic fields l(xi) (xi2, -xi1), l in {xi1, xi2}.

    Local coordinates xi are centred at the centroid and scaled by sqrt(|F|).
    """
    x = np.asarray(face_vertices, dtype=float)
    c, e1, e2, n = face_frame(x)
    area = 0.5 * np.linalg.norm(np.cross(x[1] - x[0], x[2] - x[0]))
    s = math.sqrt(area)
    # xi_a as linear barycentric polynomials (coefficients at lambda_0..lambda_2)
    xi = np.array([[(x[v] - c) @ e / s for v in range(3)] for e in (e1, e2)])
    one = elevation_matrix(0, 3, 1)[:, 0]
    E2_from_1 = elevation_matrix(1, 3, 1)
    P = multiply_table(1, 1, 3)

    def quad(a, b):  # product of two linear polys -> degree 2
        return np.einsum("cab,a,b->c", P, a, b)

    fields = []
    for e in (e1, e2):
        fields.append(np.outer(E2_from_1 @ one, e))
    for e in (e1, e2):
        for a in range(2):
            fields.append(np.outer(E2_from_1 @ xi[a], e))
    # l(xi) (xi2, -xi1) = l xi2 e1 - l xi1 e2
    for l in range(2):
        f = np.outer(quad(xi[l], xi[1]), e1) - np.outer(quad(xi[l], xi[0]), e2)
        fields.append(f)
    return NedelecBasis(np.array(fields), n)


# ---------------------------------------------------------------------------
# DoF functionals

KINDS = ("VertexValue", "FaceNN", "FaceTangential", "Interior", "EdgeNN", "EdgeCrossNN")


@dataclass(frozen=True, eq=False)
class DofFunctional:
    """tau -> integral over ``support`` of sum_c tau_c w_c.

    ``weights[b, c]`` multiplies monomial ``b`` (degree ``weight_degree`` in the
    support's barycentrics) for component ``c``. ``owners`` lists the elements
    the trace is read from with averaging weights. Point evaluation is the
    zero-dimensional case with measure 1.
    """

    kind: str
    attach: tuple
    support: tuple
    owners: tuple
    weight_degree: int
    weights: np.ndarray
    measure: float

    @property
    def key(self) -> tuple:
        return (self.kind,) + tuple(self.attach)

    def local_row(self, mesh: TetMesh, k: int) -> np.ndarray:
        """(6, 20) weights on the monomial coefficients of element ``k``."""
        tet = mesh.tets[k].tolist()
        try:
            sub = tuple(tet.index(v) for v in self.support)
        except ValueError as exc:
            raise MissingElementData(f"element {k} does not contain the support {self.support}") from exc
        return _local_row(sub, self.weight_degree, self.weights) * self.measure

    def nodal_rows(self, mesh: TetMesh) -> list[tuple[int, np.ndarray]]:
        """Per owner, (6, 20) weights on nodal values."""
        return [(k, w * (self.local_row(mesh, k) @ vandermonde_inv(3, 4))) for k, w in self.owners]


def _local_row(sub, wdeg, weights):
    R = restriction_matrix(3, 4, sub)
    M = moment_table(3, wdeg, len(sub))
    return (R.T @ M @ weights).T


def _vertex_functionals(mesh):
    out = []
    for v in range(mesh.n_vertices):
        k = mesh.vertex_tets[v][0]
        for c in range(6):
            w = np.zeros((1, 6))
            w[0, c] = 1.0
            out.append(DofFunctional("VertexValue", (v, c), (v,), ((k, 1.0),), 0, w, 1.0))
    return out


def _face_functionals(mesh):
    out = []
    areas = mesh.face_areas()
    for f in range(mesh.n_faces):
        verts = tuple(int(v) for v in mesh.faces[f])
        k = mesh.face_tets[f][0]
        nd = nedelec_face_basis(mesh.vertices[list(verts)])
        n = nd.normal
        w = contraction_vector(n, n)[None, :]
        out.append(DofFunctional("FaceNN", (f,), verts, ((k, 1.0),), 0, w, float(areas[f])))
        for q in range(len(nd)):
            w = np.array([contraction_vector(nd.coeffs[q, b], n) for b in range(nd.coeffs.shape[1])])
            out.append(DofFunctional("FaceTangential", (f, q), verts, ((k, 1.0),), 2, w, float(areas[f])))
    return out


def _interior_functionals(mesh):
    out = []
    vols = mesh.volumes()
    for k in range(mesh.n_tets):
        verts = tuple(int(v) for v in mesh.tets[k])
        for a in range(4):
            for c in range(6):
                w = np.zeros((4, 6))
                w[a, c] = 1.0
                out.append(DofFunctional("Interior", (k, 6 * a + c), verts, ((k, 1.0),), 1, w, float(vols[k])))
    return out


def edge_face_sets(patch: EdgePatch) -> tuple[bool, list[int]]:
    """Whether a cross term is used, and the face positions carrying nn moments."""
    m = patch.m
    kind = patch.kind
    if kind is EdgeKind.BOUNDARY:
        return True, list(range(m + 1))
    if kind is EdgeKind.INTERIOR_ODD:
        return False, list(range(m))
    if kind is EdgeKind.INTERIOR_EVEN:
        return True, list(range(1, m))
    if kind is EdgeKind.SINGULAR:
        return True, list(range(4))
    raise UnclassifiedEdge(f"edge {patch.edge}: {kind}")


def _edge_functionals(mesh, patches):
    out = []
    for p in patches:
        e = p.edge
        verts = tuple(int(v) for v in mesh.edges[e])
        length = float(np.linalg.norm(mesh.vertices[verts[1]] - mesh.vertices[verts[0]]))
        cross, nn_faces = edge_face_sets(p)
        if cross:
            n1, n2 = p.normals[0], p.normals[1]
            owners = ((p.elements[0], 1.0),) if not p.interior else ((p.elements[0], 0.5), (p.elements[1], 0.5))
            face_pos = 0 if not p.interior else 1
            for q in range(2):
                w = np.zeros((2, 6))
                w[q] = contraction_vector(n1, n2)
                out.append(DofFunctional("EdgeCrossNN", (e, face_pos, q), verts, owners, 1, w, length))
        for i in nn_faces:
            n = p.normals[i]
            k = p.elements[p.element_of_face(i)]
            for q in range(2):
                w = np.zeros((2, 6))
                w[q] = contraction_vector(n, n)
                out.append(DofFunctional("EdgeNN", (e, i, q), verts, ((k, 1.0),), 1, w, length))
    return out


@dataclass
class DofTable:
    functionals: list
    counts: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.functionals)

    def __iter__(self):
        return iter(self.functionals)

    def __getitem__(self, i):
        return self.functionals[i]


def dof_functionals(mesh: TetMesh, patches: list[EdgePatch]) -> DofTable:
    """All degrees of freedom: vertex values, face moments, interior moments, edge moments."""
    if len(patches) != mesh.n_edges:
        raise ValueError("one patch per edge is required")
    fs = _vertex_functionals(mesh) + _face_functionals(mesh) + _interior_functionals(mesh)
    fs += _edge_functionals(mesh, sorted(patches, key=lambda p: p.edge))
    counts = {k: 0 for k in KINDS}
    for f in fs:
        counts[f.kind] += 1
    return DofTable(fs, counts)


def expected_dof_count(mesh: TetMesh, patches: list[EdgePatch]) -> int:
    edge = 0
    for p in patches:
        edge += {
            EdgeKind.BOUNDARY: 2 * (p.m + 2),
            EdgeKind.INTERIOR_ODD: 2 * p.m,
            EdgeKind.INTERIOR_EVEN: 2 * p.m,
            EdgeKind.SINGULAR: 10,
        }[p.kind]
    return 6 * mesh.n_vertices + 9 * mesh.n_faces + 24 * mesh.n_tets + edge


# ---------------------------------------------------------------------------
# evaluation


def eval_dof(f: DofFunctional, tau: dict, mesh: TetMesh) -> float:
    """Exact value from per-element SymTensorPoly data ``tau[k]``."""
    val = 0.0
    for k, w in f.owners:
        if k not in tau:
            raise MissingElementData(f"{f.kind}{f.attach} reads element {k}")
        val += w * float(np.sum(f.local_row(mesh, k) * tau[k].coeffs))
    return val


def support_points(mesh: TetMesh, f: DofFunctional, degree: int):
    """Quadrature points (support barycentrics, physical coordinates) and weights on the support."""
    dim = len(f.support) - 1
    rule = quadrature_rule(dim, degree)
    xs = rule.points @ mesh.vertices[list(f.support)]
    return rule, xs


def eval_dof_quadrature(f: DofFunctional, tau, mesh: TetMesh, degree: int = 8) -> float:
    """Value by quadrature on the support.

    ``tau`` is either a dict of per-element SymTensorPoly or a callable mapping
    physical points (npts, 3) to tensors (npts, 3, 3).
    """
    rule, xs = support_points(mesh, f, degree)
    wvals = eval_monomials(f.weight_degree, rule.points) @ f.weights  # (npts, 6)
    if callable(tau):
        T = np.asarray(tau(xs), dtype=float).reshape(-1, 3, 3)
        comps = np.stack([T[:, i, j] for i, j in ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))], axis=1)
        return float(rule.integrate(np.sum(comps * wvals, axis=1), f.measure))
    val = 0.0
    for k, w in f.owners:
        if k not in tau:
            raise MissingElementData(f"{f.kind}{f.attach} reads element {k}")
        tet = mesh.tets[k].tolist()
        bary = np.zeros((len(rule.points), 4))
        for a, v in enumerate(f.support):
            bary[:, tet.index(v)] = rule.points[:, a]
        vals = tau[k].evaluate_vec(bary)
        val += w * float(rule.integrate(np.sum(vals * wvals, axis=1), f.measure))
    return val


def dof_matrix_rows(mesh: TetMesh, table: DofTable):
    """Sparse triplets of the functionals on the discontinuous nodal layout k*120 + c*20 + i."""
    rows, cols, vals = [], [], []
    base = np.arange(120).reshape(6, 20)
    for r, f in enumerate(table):
        for k, row in f.nodal_rows(mesh):
            nz = np.abs(row) > 0
            rows.append(np.full(int(nz.sum()), r))
            cols.append(120 * k + base[nz])
            vals.append(row[nz])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)
