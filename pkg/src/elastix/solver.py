"""Assembly and solution of the mixed stress-displacement problem.

Unknowns: the stress as a discontinuous nodal vector (120 per element), tied
together by the rank-reduced continuity rows, and the displacement as
per-element coefficients of degree-2 barycentric monomials (30 per element).
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TetMesh
from .poly import SYM_IJ, SYM_WEIGHT, diff_matrices, eval_monomials, monomial_exponents, moment_table, vandermonde_inv
from .quadrature import quadrature_rule
from .space import LOCAL_DIM, StressSpace

RESIDUAL_TOL = 1e-10


class SolveFailure(RuntimeError):
    def __init__(self, msg, residual=float("nan")):
        super().__init__(msg)
        self.residual = residual


class EigensolveFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class ComplianceTensor:
    """A sigma = (sigma - lam / (3 lam + 2 mu) tr(sigma) I) / (2 mu)."""

    lam: float = 1.0
    mu: float = 1.0

    def __post_init__(self):
        if self.mu <= 0 or 3 * self.lam + 2 * self.mu <= 0:
            raise ValueError(f"compliance not positive definite for lam={self.lam}, mu={self.mu}")

    def apply(self, sigma: np.ndarray) -> np.ndarray:
        tr = np.trace(sigma, axis1=-2, axis2=-1)
        k = self.lam / (3 * self.lam + 2 * self.mu)
        return (sigma - k * tr[..., None, None] * np.eye(3)) / (2 * self.mu)

    def gram(self) -> np.ndarray:
        """6x6 matrix G with (A s):t = s_vec^T G t_vec in the symmetric component order."""
        d = np.array([1.0, 1.0, 1.0, 0.0, 0.0, 0.0])
        k = self.lam / (3 * self.lam + 2 * self.mu)
        return (np.diag(SYM_WEIGHT) - k * np.outer(d, d)) / (2 * self.mu)

    def min_eigenvalue(self) -> float:
        # eigenvalues relative to the Frobenius product
        W = np.diag(1.0 / np.sqrt(SYM_WEIGHT))
        return float(np.linalg.eigvalsh(W @ self.gram() @ W).min())


# ---------------------------------------------------------------------------
# local matrices


@lru_cache(maxsize=None)
def _nodal_to_coeff() -> np.ndarray:
    return np.kron(np.eye(6), vandermonde_inv(3, 4))


def _comp_index():
    comp = {}
    for c, (i, j) in enumerate(SYM_IJ):
        comp[(i, j)] = comp[(j, i)] = c
    return comp


_COMP = _comp_index()


def div_matrix(grad_bary: np.ndarray) -> np.ndarray:
    """(30, 120) map from monomial coefficients of tau to those of div tau (degree 2)."""
    D = diff_matrices(3, 4)
    Dx = np.einsum("kj,kab->jab", grad_bary, D)  # d/dx_j, (3, 10, 20)
    out = np.zeros((30, 120))
    for i in range(3):
        for j in range(3):
            c = _COMP[(i, j)]
            out[10 * i:10 * i + 10, 20 * c:20 * c + 20] += Dx[j]
    return out


def stress_mass_ref(G: np.ndarray) -> np.ndarray:
    """Per unit volume: nodal Gram of (G-weighted) products of two degree-3 tensors."""
    P = _nodal_to_coeff()
    return P.T @ np.kron(G, moment_table(3, 3, 4)) @ P


def local_div_coupling(mesh: TetMesh, k: int, disp_degree: int = 2) -> np.ndarray:
    """(3 n_p, 120) entries (div tau, v) for nodal tau and monomial-coefficient v."""
    vol = _volume(mesh, k)
    DvP = div_matrix(mesh.grad_barycentric(k)) @ _nodal_to_coeff()
    return vol * np.kron(np.eye(3), moment_table(disp_degree, 2, 4)) @ DvP


def _volume(mesh: TetMesh, k: int) -> float:
    x = mesh.vertices[mesh.tets[k]]
    return float(np.linalg.det(x[1:] - x[0]) / 6.0)


def n_threads() -> int:
    try:
        return max(1, int(os.environ.get("ELASTIX_THREADS", "1")))
    except ValueError:
        return 1


def _map_elements(fn, n: int):
    """Apply fn to every element index; results returned in element order."""
    nt = n_threads()
    if nt == 1 or n < 2:
        return [fn(k) for k in range(n)]
    with ThreadPoolExecutor(max_workers=nt) as ex:
        return list(ex.map(fn, range(n)))


def _block_diag(blocks, row_size, col_size):
    n = len(blocks)
    rr = np.arange(row_size)[:, None] * np.ones((1, col_size), dtype=np.int64)
    cc = np.ones((row_size, 1), dtype=np.int64) * np.arange(col_size)[None, :]
    rows = np.concatenate([rr.ravel() + row_size * k for k in range(n)])
    cols = np.concatenate([cc.ravel() + col_size * k for k in range(n)])
    vals = np.concatenate([b.ravel() for b in blocks])
    return sp.csr_matrix((vals, (rows, cols)), shape=(row_size * n, col_size * n))


# ---------------------------------------------------------------------------
# assembly


@dataclass
class SaddleSystem:
    space: StressSpace
    compliance: ComplianceTensor
    A: sp.csr_matrix
    B: sp.csr_matrix
    C: sp.csr_matrix
    rhs: np.ndarray  # load moments (f, v) for the displacement basis
    disp_degree: int = 2

    @property
    def n_stress(self) -> int:
        return self.A.shape[0]

    @property
    def n_disp(self) -> int:
        return self.B.shape[0]

    def kkt_matrix(self) -> sp.csc_matrix:
        return sp.bmat(
            [[self.A, self.B.T, self.C.T], [self.B, None, None], [self.C, None, None]], format="csc"
        )

    def kkt_rhs(self) -> np.ndarray:
        return np.concatenate([np.zeros(self.n_stress), self.rhs, np.zeros(self.C.shape[0])])


def load_vector(mesh: TetMesh, f, degree: int = 10, disp_degree: int = 2) -> np.ndarray:
    """Moments (f_i, lambda^b) on every element, ordered k*3n + i*n + b."""
    rule = quadrature_rule(3, degree)
    phi = eval_monomials(disp_degree, rule.points)
    vols = mesh.volumes()

    def one(k):
        xs = rule.points @ mesh.vertices[mesh.tets[k]]
        fv = np.asarray(f(xs), dtype=float).reshape(-1, 3)
        return np.array([rule.integrate(fv[:, i:i + 1] * phi, vols[k]) for i in range(3)]).ravel()

    return np.concatenate(_map_elements(one, mesh.n_tets)) if mesh.n_tets else np.zeros(0)


def assemble(space: StressSpace, compliance: ComplianceTensor | None = None, f=None, disp_degree: int = 2) -> SaddleSystem:
    """Compliance Gram, divergence coupling, reduced continuity rows and load."""
    compliance = compliance or ComplianceTensor()
    mesh = space.mesh
    Aref = stress_mass_ref(compliance.gram())
    vols = mesh.volumes()
    A_blocks = _map_elements(lambda k: vols[k] * Aref, mesh.n_tets)
    B_blocks = _map_elements(lambda k: local_div_coupling(mesh, k, disp_degree), mesh.n_tets)
    npv = len(monomial_exponents(disp_degree, 4))
    A = _block_diag(A_blocks, LOCAL_DIM, LOCAL_DIM)
    A = ((A + A.T) * 0.5).tocsr()
    B = _block_diag(B_blocks, 3 * npv, LOCAL_DIM)
    if f is None:
        rhs = np.zeros(B.shape[0])
    else:
        rhs = load_vector(mesh, f, 10, disp_degree)
    return SaddleSystem(space, compliance, A, B, space.constraints.reduced, rhs, disp_degree)


# ---------------------------------------------------------------------------
# solve


@dataclass
class SolutionFields:
    sigma: np.ndarray  # discontinuous nodal stress vector
    u: np.ndarray  # per-element displacement coefficients
    residual: float
    method: str


def _refine(K, b, lu, x, iters=3):
    for _ in range(iters):
        r = b - K @ x
        x = x + lu.solve(r)
    return x


def solve(system: SaddleSystem, method: str = "nullspace") -> SolutionFields:
    """Solve the saddle point system; the contract is a relative residual <= 1e-10.

    ``"kkt"`` factors the full system with multipliers for the reduced
    continuity rows. ``"nullspace"`` eliminates them through the orthonormal
    space basis and factors the much smaller reduced saddle system.
    """
    b_load = system.rhs
    ns, nd = system.n_stress, system.n_disp
    if not np.any(b_load):
        return SolutionFields(np.zeros(ns), np.zeros(nd), 0.0, method)
    if method == "kkt":
        K = system.kkt_matrix()
        b = system.kkt_rhs()
        lu = spla.splu(K, permc_spec="COLAMD")
        x = _refine(K, b, lu, lu.solve(b))
        res = float(np.linalg.norm(K @ x - b) / np.linalg.norm(b))
        sigma, u = x[:ns], x[ns:ns + nd]
    elif method == "nullspace":
        Z = system.space.basis
        Ar = (Z.T @ system.A @ Z).tocsc()
        Br = (system.B @ Z).tocsc()
        K = sp.bmat([[Ar, Br.T], [Br, None]], format="csc")
        b = np.concatenate([np.zeros(Ar.shape[0]), b_load])
        lu = spla.splu(K, permc_spec="COLAMD")
        x = _refine(K, b, lu, lu.solve(b))
        res = float(np.linalg.norm(K @ x - b) / np.linalg.norm(b))
        sigma, u = Z @ x[:Ar.shape[0]], x[Ar.shape[0]:]
    else:
        raise ValueError(f"unknown method {method!r}")
    if not np.isfinite(res) or res > RESIDUAL_TOL:
        raise SolveFailure(f"relative residual {res:.3e} above {RESIDUAL_TOL:g}", res)
    return SolutionFields(sigma, u, res, method)


# ---------------------------------------------------------------------------
# manufactured solution


@dataclass(frozen=True)
class ManufacturedCase:
    u: object
    sigma: object
    f: object
    div_sigma: object


def manufactured_case(lam: float = 1.0, mu: float = 1.0) -> ManufacturedCase:
    """u = sin(pi x) sin(pi y) sin(pi z) (1, 1, 1) on the unit cube, with matching stress and load."""
    pi = math.pi

    def parts(x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        s = np.sin(pi * x)
        c = np.cos(pi * x)
        return s, c

    def u(x):
        s, _ = parts(x)
        v = s.prod(axis=1)
        return np.repeat(v[:, None], 3, axis=1)

    def grad_s(s, c):
        # g[:, j] = d/dx_j of prod sin
        return pi * np.stack([c[:, 0] * s[:, 1] * s[:, 2], s[:, 0] * c[:, 1] * s[:, 2], s[:, 0] * s[:, 1] * c[:, 2]], 1)

    def hess_s(s, c):
        H = np.empty((len(s), 3, 3))
        p2 = pi * pi
        prod = s.prod(axis=1)
        for i in range(3):
            for j in range(3):
                if i == j:
                    H[:, i, j] = -p2 * prod
                else:
                    k = 3 - i - j
                    H[:, i, j] = p2 * c[:, i] * c[:, j] * s[:, k]
        return H

    def sigma(x):
        s, c = parts(x)
        g = grad_s(s, c)
        grad_u = np.repeat(g[:, None, :], 3, axis=1)  # (grad u)_ij = d_j s
        div_u = g.sum(axis=1)
        return mu * (grad_u + grad_u.transpose(0, 2, 1)) + lam * div_u[:, None, None] * np.eye(3)

    def div_sigma(x):
        s, c = parts(x)
        H = hess_s(s, c)
        lap = np.trace(H, axis1=1, axis2=2)
        grad_div = H.sum(axis=2)  # d_i sum_j d_j s
        return mu * (lap[:, None] + grad_div) + lam * grad_div

    return ManufacturedCase(u, sigma, div_sigma, div_sigma)


# ---------------------------------------------------------------------------
# errors


@dataclass
class ErrorNorms:
    stress_l2: float
    stress_div: float
    disp_l2: float

    def as_tuple(self):
        return (self.stress_l2, self.stress_div, self.disp_l2)


def stress_coeffs(sigma: np.ndarray, k: int) -> np.ndarray:
    return (_nodal_to_coeff() @ sigma[LOCAL_DIM * k:LOCAL_DIM * (k + 1)]).reshape(6, 20)


def error_norms(mesh: TetMesh, sol: SolutionFields, case: ManufacturedCase, degree: int = 10, disp_degree: int = 2) -> ErrorNorms:
    rule = quadrature_rule(3, degree)
    phi3 = eval_monomials(3, rule.points)
    phi2 = eval_monomials(2, rule.points)
    phiu = eval_monomials(disp_degree, rule.points)
    npv = phiu.shape[1]
    vols = mesh.volumes()

    def one(k):
        xs = rule.points @ mesh.vertices[mesh.tets[k]]
        c = stress_coeffs(sol.sigma, k)
        sh = phi3 @ c.T  # (npts, 6)
        se = np.stack([case.sigma(xs)[:, i, j] for i, j in SYM_IJ], axis=1)
        es = ((sh - se) ** 2 * SYM_WEIGHT).sum(axis=1)
        dcoef = (div_matrix(mesh.grad_barycentric(k)) @ c.ravel()).reshape(3, 10)
        dh = phi2 @ dcoef.T
        ed = ((dh - case.div_sigma(xs)) ** 2).sum(axis=1)
        uh = phiu @ sol.u[3 * npv * k:3 * npv * (k + 1)].reshape(3, npv).T
        eu = ((uh - case.u(xs)) ** 2).sum(axis=1)
        return [rule.integrate(e, vols[k]) for e in (es, ed, eu)]

    tot = np.sum(_map_elements(one, mesh.n_tets), axis=0)
    return ErrorNorms(*(float(math.sqrt(max(t, 0.0))) for t in tot))


# ---------------------------------------------------------------------------
# stability


def hdiv_gram(space: StressSpace) -> sp.csr_matrix:
    """Frobenius L2 plus divergence Gram on the discontinuous nodal layout."""
    mesh = space.mesh
    Mref = stress_mass_ref(np.diag(SYM_WEIGHT))
    M22 = np.kron(np.eye(3), moment_table(2, 2, 4))
    vols = mesh.volumes()

    def one(k):
        DvP = div_matrix(mesh.grad_barycentric(k)) @ _nodal_to_coeff()
        return vols[k] * (Mref + DvP.T @ M22 @ DvP)

    return _block_diag(_map_elements(one, mesh.n_tets), LOCAL_DIM, LOCAL_DIM)


def displacement_mass(mesh: TetMesh, disp_degree: int = 2) -> sp.csr_matrix:
    Mloc = np.kron(np.eye(3), moment_table(disp_degree, disp_degree, 4))
    vols = mesh.volumes()
    return _block_diag([v * Mloc for v in vols], Mloc.shape[0], Mloc.shape[1])


def infsup_constant(space: StressSpace, disp_degree: int = 2) -> float:
    """Smallest singular value of the divergence pairing in the H(div) x L2 norms."""
    sysm = assemble(space, disp_degree=disp_degree)
    Z = space.basis
    X = (Z.T @ hdiv_gram(space) @ Z).toarray()
    Bh = (sysm.B @ Z).toarray()
    Mv = displacement_mass(space.mesh, disp_degree).toarray()
    try:
        L = sla.cholesky(X, lower=True)
        W = sla.solve_triangular(L, Bh.T, lower=True)
        S = W.T @ W
        S = 0.5 * (S + S.T)
        ev = sla.eigh(S, Mv, eigvals_only=True)
    except (np.linalg.LinAlgError, sla.LinAlgError) as exc:
        raise EigensolveFailure(str(exc)) from exc
    lmin = float(ev[0])
    return math.sqrt(max(lmin, 0.0))


def kernel_basis(system: SaddleSystem) -> np.ndarray:
    """Discontinuous nodal vectors spanning the kernel of the divergence pairing."""
    Z = system.space.basis
    Bh = (system.B @ Z).toarray()
    _, s, Vt = np.linalg.svd(Bh)
    rank = int(np.sum(s > 1e-10 * s[0])) if len(s) else 0
    return np.asarray(Z @ Vt[rank:].T)


def max_divergence(mesh: TetMesh, x: np.ndarray, degree: int = 6) -> tuple[float, float]:
    """Max |div tau| and max |tau| over quadrature points of all elements."""
    rule = quadrature_rule(3, degree)
    phi3 = eval_monomials(3, rule.points)
    phi2 = eval_monomials(2, rule.points)
    dmax = tmax = 0.0
    for k in range(mesh.n_tets):
        c = stress_coeffs(x, k)
        tmax = max(tmax, float(np.abs(phi3 @ c.T).max()))
        d = phi2 @ (div_matrix(mesh.grad_barycentric(k)) @ c.ravel()).reshape(3, 10).T
        dmax = max(dmax, float(np.abs(d).max()))
    return dmax, tmax


@dataclass
class KernelReport:
    dim: int
    max_relative_div: float


def kernel_div_check(system: SaddleSystem, vectors: np.ndarray | None = None) -> KernelReport:
    """Pointwise divergence of kernel vectors, relative to their size."""
    V = kernel_basis(system) if vectors is None else np.atleast_2d(np.asarray(vectors).T).T
    worst = 0.0
    for j in range(V.shape[1]):
        dmax, tmax = max_divergence(system.space.mesh, V[:, j])
        worst = max(worst, dmax / tmax if tmax > 0 else 0.0)
    return KernelReport(V.shape[1], worst)
