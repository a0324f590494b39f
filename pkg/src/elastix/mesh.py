"""Tetrahedral meshes: topology, edge patches, Kuhn generators and file I/O."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Sequence

import numpy as np

SINGULAR_TOL = 1e-9

# local vertex pairs of a tetrahedron, in the order used by ``TetMesh.tet_edges``
TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))


class MeshError(ValueError):
    pass


class NonConforming(MeshError):
    pass


class DegenerateTet(MeshError):
    pass


class BrokenRing(MeshError):
    pass


class ParseError(MeshError):
    pass


class UnsupportedElementType(MeshError):
    pass


class EdgeKind(str, Enum):
    BOUNDARY = "Boundary"
    INTERIOR_ODD = "InteriorOdd"
    INTERIOR_EVEN = "InteriorEvenNonsingular"
    SINGULAR = "Singular"


def signed_volumes(vertices: np.ndarray, tets: np.ndarray) -> np.ndarray:
    x = vertices[tets]
    d = x[:, 1:] - x[:, :1]
    return np.linalg.det(d) / 6.0


class TetMesh:
    """Conforming tetrahedral mesh with derived face/edge adjacency.

    Build instances with :func:`build_topology`; the arrays are read-only.

    Attributes
    ----------
    vertices : (nV, 3) float
    tets : (nK, 4) int, positively oriented
    faces : (nF, 3) int, sorted vertex triples
    face_tets : list of tuples, owning tets (1 or 2) per face
    edges : (nE, 2) int, sorted vertex pairs
    edge_faces, edge_tets : incident faces / tets per edge (sorted)
    tet_faces : (nK, 4) face index opposite each local vertex
    tet_edges : (nK, 6) edge index per local pair in ``TET_EDGES``
    """

    def __init__(self, vertices, tets, faces, face_tets, edges, edge_faces, edge_tets, tet_faces, tet_edges):
        self.vertices = vertices
        self.tets = tets
        self.faces = faces
        self.face_tets = face_tets
        self.edges = edges
        self.edge_faces = edge_faces
        self.edge_tets = edge_tets
        self.tet_faces = tet_faces
        self.tet_edges = tet_edges
        for a in (vertices, tets, faces, edges, tet_faces, tet_edges):
            a.setflags(write=False)
        self.face_index = {tuple(f): i for i, f in enumerate(faces.tolist())}
        self.edge_index = {tuple(e): i for i, e in enumerate(edges.tolist())}
        self.vertex_tets = [[] for _ in range(len(vertices))]
        for k, tet in enumerate(tets.tolist()):
            for v in tet:
                self.vertex_tets[v].append(k)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_tets(self) -> int:
        return len(self.tets)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    def is_boundary_face(self, f: int) -> bool:
        return len(self.face_tets[f]) == 1

    def is_boundary_edge(self, e: int) -> bool:
        return any(len(self.face_tets[f]) == 1 for f in self.edge_faces[e])

    def volumes(self) -> np.ndarray:
        return signed_volumes(self.vertices, self.tets)

    def face_areas(self) -> np.ndarray:
        x = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0]), axis=1)

    def face_normals(self) -> np.ndarray:
        """Unit normals of the sorted vertex triples (right-hand rule)."""
        x = self.vertices[self.faces]
        n = np.cross(x[:, 1] - x[:, 0], x[:, 2] - x[:, 0])
        return n / np.linalg.norm(n, axis=1)[:, None]

    def diameters(self) -> np.ndarray:
        x = self.vertices[self.tets]
        d = [np.linalg.norm(x[:, i] - x[:, j], axis=1) for i, j in TET_EDGES]
        return np.max(d, axis=0)

    @property
    def h(self) -> float:
        return float(self.diameters().max())

    def grad_barycentric(self, k: int) -> np.ndarray:
        """(4, 3) gradients of the barycentric coordinates of tet ``k``."""
        x = self.vertices[self.tets[k]]
        J = (x[1:] - x[0]).T
        Jinv = np.linalg.inv(J)
        g = np.empty((4, 3))
        g[1:] = Jinv
        g[0] = -Jinv.sum(axis=0)
        return g

    def barycentric_to_physical(self, k: int, bary: np.ndarray) -> np.ndarray:
        return np.asarray(bary) @ self.vertices[self.tets[k]]

    def to_json(self) -> dict:
        return {"vertices": self.vertices.tolist(), "tets": self.tets.tolist()}


def build_topology(vertices, tets, check_hanging: bool = True) -> TetMesh:
    """Derive faces and edges, reorient tets, and validate conformity."""
    V = np.array(vertices, dtype=float).reshape(-1, 3)
    T = np.array(tets, dtype=np.int64).reshape(-1, 4).copy()
    if T.size and (T.min() < 0 or T.max() >= len(V)):
        raise MeshError("tet references a missing vertex")
    if any(len(set(t)) != 4 for t in T.tolist()):
        raise DegenerateTet("tet with repeated vertex")
    keys = np.sort(T, axis=1)
    if len(np.unique(keys, axis=0)) != len(T):
        raise MeshError("duplicate tets")

    vol = signed_volumes(V, T)
    x = V[T]
    lengths = np.max([np.linalg.norm(x[:, i] - x[:, j], axis=1) for i, j in TET_EDGES], axis=0)
    small = np.abs(vol) <= 1e-12 * lengths**3
    if np.any(small):
        raise DegenerateTet(f"zero-volume tet(s): {np.flatnonzero(small).tolist()}")
    flip = vol < 0
    T[flip, 2], T[flip, 3] = T[flip, 3].copy(), T[flip, 2].copy()

    face_owner: dict[tuple, list[int]] = {}
    tet_face_keys = []
    for k, t in enumerate(T.tolist()):
        row = []
        for i in range(4):
            key = tuple(sorted(t[:i] + t[i + 1:]))
            face_owner.setdefault(key, []).append(k)
            row.append(key)
        tet_face_keys.append(row)
    bad = [f for f, own in face_owner.items() if len(own) > 2]
    if bad:
        raise NonConforming(f"face shared by more than two tets: {bad[0]}")

    faces = np.array(sorted(face_owner), dtype=np.int64).reshape(-1, 3)
    face_index = {f: i for i, f in enumerate(map(tuple, faces.tolist()))}
    face_tets = [tuple(face_owner[tuple(f)]) for f in faces.tolist()]
    tet_faces = np.array([[face_index[key] for key in row] for row in tet_face_keys], dtype=np.int64).reshape(-1, 4)

    edge_set = set()
    for t in T.tolist():
        for i, j in TET_EDGES:
            edge_set.add(tuple(sorted((t[i], t[j]))))
    edges = np.array(sorted(edge_set), dtype=np.int64).reshape(-1, 2)
    edge_index = {e: i for i, e in enumerate(map(tuple, edges.tolist()))}
    tet_edges = np.array(
        [[edge_index[tuple(sorted((t[i], t[j])))] for i, j in TET_EDGES] for t in T.tolist()], dtype=np.int64
    ).reshape(-1, 6)
    edge_faces: list[list[int]] = [[] for _ in range(len(edges))]
    for fi, f in enumerate(faces.tolist()):
        for a, b in ((0, 1), (0, 2), (1, 2)):
            edge_faces[edge_index[(f[a], f[b])]].append(fi)
    edge_tets: list[list[int]] = [[] for _ in range(len(edges))]
    for k, row in enumerate(tet_edges.tolist()):
        for e in row:
            edge_tets[e].append(k)

    mesh = TetMesh(
        V,
        T,
        faces,
        face_tets,
        edges,
        [tuple(sorted(ef)) for ef in edge_faces],
        [tuple(sorted(et)) for et in edge_tets],
        tet_faces,
        tet_edges,
    )
    if check_hanging:
        _check_hanging_vertices(mesh)
    return mesh


def _check_hanging_vertices(mesh: TetMesh) -> None:
    # a conforming mesh has no vertex inside a boundary face (or its edges) except the corners
    bfaces = [f for f in range(mesh.n_faces) if mesh.is_boundary_face(f)]
    if not bfaces:
        return
    V = mesh.vertices
    F = mesh.faces[bfaces]
    p0, p1, p2 = V[F[:, 0]], V[F[:, 1]], V[F[:, 2]]
    e1, e2 = p1 - p0, p2 - p0
    nrm = np.cross(e1, e2)
    area2 = np.linalg.norm(nrm, axis=1)
    scale = np.sqrt(area2)
    for v in range(len(V)):
        d = V[v] - p0
        dist = np.abs(np.einsum("ij,ij->i", d, nrm)) / area2
        near = np.flatnonzero(dist <= 1e-10 * scale)
        for i in near:
            if v in F[i]:
                continue
            # barycentric coordinates inside the face plane
            M = np.stack([e1[i], e2[i]], axis=1)
            ab, *_ = np.linalg.lstsq(M, d[i], rcond=None)
            l1, l2 = ab
            l0 = 1.0 - l1 - l2
            if min(l0, l1, l2) >= -1e-10:
                raise NonConforming(f"vertex {v} lies on boundary face {tuple(F[i])} (hanging)")


# ---------------------------------------------------------------------------
# edge patches


def classify(theta: np.ndarray, boundary: bool, tol: float = SINGULAR_TOL) -> EdgeKind:
    m = len(theta)
    if boundary:
        return EdgeKind.BOUNDARY
    if m == 4 and abs(theta[0] + theta[1] - math.pi) <= tol and abs(theta[1] + theta[2] - math.pi) <= tol:
        return EdgeKind.SINGULAR
    return EdgeKind.INTERIOR_ODD if m % 2 else EdgeKind.INTERIOR_EVEN


@dataclass(frozen=True)
class EdgePatch:
    """Ordered ring of tets and faces around an edge.

    ``faces`` has m+1 entries; for interior edges the last equals the first.
    ``normals[j]`` and ``tangents[j]`` belong to ``faces[j]`` and satisfy
    ``normals[j+1] = cos(theta[j]) normals[j] - sin(theta[j]) tangents[j]``.
    """

    edge: int
    vertices: tuple[int, int]
    elements: tuple[int, ...]
    faces: tuple[int, ...]
    t: np.ndarray
    normals: np.ndarray
    tangents: np.ndarray
    theta: np.ndarray
    kind: EdgeKind

    @property
    def m(self) -> int:
        return len(self.elements)

    @property
    def interior(self) -> bool:
        return self.kind is not EdgeKind.BOUNDARY

    def element_of_face(self, j: int) -> int:
        """Position (0-based) of a patch element containing face ``j``."""
        return min(j, self.m - 1)

    def interior_faces(self) -> list[int]:
        """Face positions across which normal continuity is imposed."""
        return list(range(self.m)) if self.interior else list(range(1, self.m))

    def reversed(self) -> "EdgePatch":
        """The same patch walked the other way around ``-t``."""
        m = self.m
        if self.interior:
            order = [0] + list(range(m - 1, 0, -1)) + [0]
            elements = tuple(self.elements[(-j) % m] for j in range(1, m + 1))
            theta = self.theta[::-1].copy()
        else:
            order = list(range(m, -1, -1))
            elements = self.elements[::-1]
            theta = self.theta[::-1].copy()
        return EdgePatch(
            edge=self.edge,
            vertices=self.vertices[::-1],
            elements=tuple(elements),
            faces=tuple(self.faces[j] for j in order),
            t=-self.t,
            normals=-self.normals[order],
            tangents=self.tangents[order].copy(),
            theta=theta,
            kind=self.kind,
        )

    def rotated(self, j: int) -> "EdgePatch":
        """Interior patch re-indexed so that face ``j`` becomes the first."""
        if not self.interior:
            raise ValueError("only interior patches can be rotated")
        m = self.m
        order = [(j + i) % m for i in range(m)] + [j]
        theta = np.roll(self.theta, -j)
        return EdgePatch(
            edge=self.edge,
            vertices=self.vertices,
            elements=tuple(self.elements[(j + i) % m] for i in range(m)),
            faces=tuple(self.faces[i] for i in order),
            t=self.t,
            normals=self.normals[order].copy(),
            tangents=self.tangents[order].copy(),
            theta=theta,
            kind=classify(theta, False),
        )


def _unit(v: np.ndarray) -> np.ndarray:
    return v / np.linalg.norm(v)


def _ccw_angle(w1: np.ndarray, w2: np.ndarray, t: np.ndarray) -> float:
    return math.atan2(float(np.dot(np.cross(w1, w2), t)), float(np.dot(w1, w2)))


def build_edge_patch(mesh: TetMesh, e: int) -> EdgePatch:
    a, b = (int(v) for v in mesh.edges[e])
    xa = mesh.vertices[a]
    t = _unit(mesh.vertices[b] - xa)
    faces = mesh.edge_faces[e]
    tets = set(mesh.edge_tets[e])
    w = {}
    for f in faces:
        c = next(v for v in mesh.faces[f] if v != a and v != b)
        d = mesh.vertices[c] - xa
        w[f] = _unit(d - np.dot(d, t) * t)
    tet_pair = {}
    for k in tets:
        pair = [mesh.tet_faces[k][i] for i in range(4) if mesh.tets[k][i] not in (a, b)]
        tet_pair[k] = tuple(int(f) for f in pair)

    def ccw_step(f, k):
        f2 = tet_pair[k][1] if tet_pair[k][0] == f else tet_pair[k][0]
        return f2, _ccw_angle(w[f], w[f2], t)

    bfaces = [f for f in faces if mesh.is_boundary_face(f)]
    boundary = bool(bfaces)
    start = None
    if boundary:
        for f in bfaces:
            k = mesh.face_tets[f][0]
            if ccw_step(f, k)[1] > 0:
                start = f
                break
        if start is None:
            raise BrokenRing(f"edge {e}: no boundary face opens the ring")
    else:
        start = faces[0]

    order_f = [start]
    order_k = []
    theta = []
    f, prev = start, None
    for _ in range(len(tets) + 1):
        cands = [k for k in mesh.face_tets[f] if k in tets and k != prev]
        nxt = None
        for k in cands:
            f2, ang = ccw_step(f, k)
            if ang > 0 and (prev is not None or True):
                nxt = (k, f2, ang)
                break
        if nxt is None:
            break
        k, f2, ang = nxt
        if k in order_k:
            break
        order_k.append(k)
        theta.append(ang)
        order_f.append(f2)
        prev, f = k, f2
        if f == start:
            break
    if len(order_k) != len(tets):
        raise BrokenRing(f"edge {e}: walk visited {len(order_k)} of {len(tets)} tets")
    if not boundary and order_f[-1] != start:
        raise BrokenRing(f"edge {e}: ring does not close")
    if boundary and not mesh.is_boundary_face(order_f[-1]):
        raise BrokenRing(f"edge {e}: walk ended on an interior face")

    W = np.array([w[f] for f in order_f])
    normals = np.cross(t, W)
    theta = np.array(theta)
    return EdgePatch(
        edge=e,
        vertices=(a, b),
        elements=tuple(order_k),
        faces=tuple(order_f),
        t=t,
        normals=normals,
        tangents=W,
        theta=theta,
        kind=classify(theta, boundary),
    )


def build_all_patches(mesh: TetMesh) -> list[EdgePatch]:
    return [build_edge_patch(mesh, e) for e in range(mesh.n_edges)]


def synthetic_patch(theta: Sequence[float], boundary: bool, t=None, n1=None) -> EdgePatch:
    """Mesh-free patch with frames generated from the rotation recursion."""
    theta = np.asarray(theta, dtype=float)
    m = len(theta)
    t = _unit(np.asarray(t if t is not None else (0.0, 0.0, 1.0), dtype=float))
    if n1 is None:
        n1 = np.array([1.0, 0.0, 0.0]) if abs(t[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    n1 = np.asarray(n1, dtype=float)
    n1 = _unit(n1 - np.dot(n1, t) * t)
    normals = [n1]
    for th in theta:
        n = normals[-1]
        tj = np.cross(n, t)
        normals.append(math.cos(th) * n - math.sin(th) * tj)
    normals = np.array(normals)
    if not boundary:
        normals[-1] = normals[0]
    tangents = np.cross(normals, t)
    faces = tuple(range(m + 1)) if boundary else tuple(range(m)) + (0,)
    return EdgePatch(
        edge=-1,
        vertices=(-1, -1),
        elements=tuple(range(m)),
        faces=faces,
        t=t,
        normals=normals,
        tangents=tangents,
        theta=theta,
        kind=classify(theta, boundary),
    )


@dataclass
class AssumptionReport:
    kind: EdgeKind
    clause1: bool
    clause2: bool | None  # None when the clause does not apply
    margin: float  # smallest slack over all applicable inequalities (negative = violated)
    violations: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.clause1 and self.clause2 is not False


def check_assumption(patch: EdgePatch, kappa: float) -> AssumptionReport:
    """Minimum-angle and adjacent-angle-sum conditions on one edge patch."""
    th = patch.theta
    slack = np.minimum(th - kappa, math.pi - kappa - th)
    violations = [f"theta[{j}]={th[j]:.6g} outside ({kappa:.6g}, pi-{kappa:.6g})" for j in np.flatnonzero(slack <= 0)]
    margin = float(slack.min())
    clause1 = bool(np.all(slack > 0))
    clause2 = None
    if patch.kind is EdgeKind.INTERIOR_EVEN:
        sums = th + np.roll(th, -1)
        s2 = math.pi - kappa - sums
        bad = np.flatnonzero(s2 <= 0)
        violations += [f"theta[{j}]+theta[{(j + 1) % len(th)}]={sums[j]:.6g} >= pi-kappa" for j in bad]
        margin = min(margin, float(s2.min()))
        clause2 = bool(len(bad) == 0)
    return AssumptionReport(patch.kind, clause1, clause2, margin, violations)


# ---------------------------------------------------------------------------
# generators


def gen_kuhn_box(nx: int, ny: int, nz: int, h: float = 1.0) -> TetMesh:
    """Box of nx*ny*nz cubes of side ``h``, each split into 6 tets on its main diagonal."""
    if min(nx, ny, nz) < 1:
        raise ValueError("subdivision counts must be >= 1")
    g = np.stack(np.meshgrid(np.arange(nx + 1), np.arange(ny + 1), np.arange(nz + 1), indexing="ij"), axis=-1)
    vertices = g.reshape(-1, 3) * float(h)

    def vid(i, j, k):
        return (i * (ny + 1) + j) * (nz + 1) + k

    perms = ((0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0))
    tets = []
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                for p in perms:
                    c = [0, 0, 0]
                    path = [vid(i, j, k)]
                    for ax in p:
                        c[ax] = 1
                        path.append(vid(i + c[0], j + c[1], k + c[2]))
                    tets.append(path)
    return build_topology(vertices, tets)


def gen_kuhn_mesh(n: int) -> TetMesh:
    """Unit cube split into n^3 Kuhn-subdivided cubes."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return gen_kuhn_box(n, n, n, h=1.0 / n)


def reference_tet() -> TetMesh:
    return build_topology([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


def two_tets() -> TetMesh:
    return build_topology(
        [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]],
        [[0, 1, 2, 3], [1, 2, 3, 4]],
    )


# ---------------------------------------------------------------------------
# I/O


def load_json(path) -> TetMesh:
    try:
        data = json.loads(Path(path).read_text())
        return build_topology(data["vertices"], data["tets"])
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def save_json(mesh: TetMesh, path) -> None:
    Path(path).write_text(json.dumps(mesh.to_json()))


# Gmsh element types: node counts for the ones we tolerate, and volume types we reject
_GMSH_SKIP = {1: 2, 2: 3, 3: 4, 8: 3, 9: 6, 15: 1}
_GMSH_VOLUME = {5: "hexahedron", 6: "prism", 7: "pyramid", 11: "tet10", 12: "hex27", 17: "hex20"}


def load_msh(path) -> TetMesh:
    """Read the tet subset of a Gmsh ASCII v2.2 file."""
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(str(exc)) from exc
    it = iter(enumerate(lines))
    nodes: dict[int, list[float]] = {}
    tets: list[list[int]] = []
    seen_nodes = False
    try:
        for _, line in it:
            tag = line.strip()
            if tag == "$MeshFormat":
                _, fmt = next(it)
                version, ftype = fmt.split()[:2]
                if not version.startswith("2") or ftype != "0":
                    raise ParseError(f"unsupported MSH format {fmt!r}")
            elif tag == "$Nodes":
                _, cnt = next(it)
                for _ in range(int(cnt)):
                    _, row = next(it)
                    p = row.split()
                    nodes[int(p[0])] = [float(p[1]), float(p[2]), float(p[3])]
                seen_nodes = True
            elif tag == "$Elements":
                _, cnt = next(it)
                for _ in range(int(cnt)):
                    _, row = next(it)
                    p = [int(s) for s in row.split()]
                    etype, ntags = p[1], p[2]
                    conn = p[3 + ntags:]
                    if etype == 4:
                        if len(conn) != 4:
                            raise ParseError(f"bad tet record: {row!r}")
                        tets.append(conn)
                    elif etype in _GMSH_VOLUME:
                        raise UnsupportedElementType(f"element type {etype} ({_GMSH_VOLUME[etype]})")
                    elif etype not in _GMSH_SKIP:
                        raise UnsupportedElementType(f"element type {etype}")
    except (StopIteration, ValueError, IndexError) as exc:
        if isinstance(exc, MeshError):
            raise
        raise ParseError(f"{path}: malformed MSH ({exc})") from exc
    if not seen_nodes or not tets:
        raise ParseError(f"{path}: no nodes or no tetrahedra")
    ids = sorted(nodes)
    remap = {nid: i for i, nid in enumerate(ids)}
    try:
        conn = [[remap[n] for n in t] for t in tets]
    except KeyError as exc:
        raise ParseError(f"element references unknown node {exc}") from exc
    return build_topology([nodes[i] for i in ids], conn)


def save_msh(mesh: TetMesh, path) -> None:
    out = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$Nodes", str(mesh.n_vertices)]
    out += [f"{i + 1} {x!r} {y!r} {z!r}" for i, (x, y, z) in enumerate(mesh.vertices.tolist())]
    out += ["$EndNodes", "$Elements", str(mesh.n_tets)]
    out += [f"{k + 1} 4 2 0 1 " + " ".join(str(v + 1) for v in t) for k, t in enumerate(mesh.tets.tolist())]
    out += ["$EndElements", ""]
    Path(path).write_text("\n".join(out))
