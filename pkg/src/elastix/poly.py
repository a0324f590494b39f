"""Barycentric monomials, exact simplex moments and symmetric-tensor polynomials.

Polynomials on a d-simplex are stored as homogeneous polynomials of fixed
degree in its d+1 barycentric coordinates. Since the coordinates sum to one,
every polynomial of degree <= p has such a representation of degree p.
"""

from __future__ import annotations

import itertools
import math
from fractions import Fraction
from functools import lru_cache

import numpy as np

# symmetric component order and index pairs
SYM_IJ = ((0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1))
SYM_NAMES = ("xx", "yy", "zz", "yz", "xz", "xy")
# multiplicity of each component in the Frobenius product
SYM_WEIGHT = np.array([1.0, 1.0, 1.0, 2.0, 2.0, 2.0])


@lru_cache(maxsize=None)
def monomial_exponents(degree: int, nvars: int) -> tuple[tuple[int, ...], ...]:
    """Exponent tuples of total ``degree`` in ``nvars`` variables, descending lexicographic."""
    out = [e for e in itertools.product(range(degree, -1, -1), repeat=nvars) if sum(e) == degree]
    return tuple(out)


@lru_cache(maxsize=None)
def monomial_index(degree: int, nvars: int) -> dict:
    return {e: i for i, e in enumerate(monomial_exponents(degree, nvars))}


def exact_simplex_integral(exponents, measure=1):
    """Integral of prod(lambda_i ** a_i) over a simplex with the given measure.

    The simplex dimension is ``len(exponents) - 1``. Integer or Fraction
    measures give an exact Fraction; float measures give a float.
    """
    exps = [int(a) for a in exponents]
    if any(a < 0 for a in exps):
        raise ValueError("exponents must be nonnegative")
    dim = len(exps) - 1
    num = math.prod(math.factorial(a) for a in exps) * math.factorial(dim)
    val = Fraction(num, math.factorial(sum(exps) + dim))
    if isinstance(measure, (int, Fraction)):
        return val * measure
    return float(val) * float(measure)


@lru_cache(maxsize=None)
def moment_table(deg_a: int, deg_b: int, nvars: int) -> np.ndarray:
    """Normalized moments: M[a, b] = integral(lambda^a lambda^b) / |S|."""
    ea = monomial_exponents(deg_a, nvars)
    eb = monomial_exponents(deg_b, nvars)
    M = np.empty((len(ea), len(eb)))
    for i, a in enumerate(ea):
        for j, b in enumerate(eb):
            M[i, j] = float(exact_simplex_integral([x + y for x, y in zip(a, b)]))
    M.setflags(write=False)
    return M


def eval_monomials(degree: int, bary: np.ndarray) -> np.ndarray:
    """(npts, nmon) values of all monomials of ``degree`` at barycentric points."""
    bary = np.atleast_2d(np.asarray(bary, dtype=float))
    E = np.array(monomial_exponents(degree, bary.shape[1]))
    return np.prod(bary[:, None, :] ** E[None, :, :], axis=2)


@lru_cache(maxsize=None)
def lagrange_nodes(degree: int, nvars: int) -> np.ndarray:
    """Principal lattice nodes, one per monomial, in barycentric coordinates."""
    E = np.array(monomial_exponents(degree, nvars), dtype=float)
    N = E / degree if degree else np.full((1, nvars), 1.0 / nvars)
    N.setflags(write=False)
    return N


@lru_cache(maxsize=None)
def vandermonde(degree: int, nvars: int) -> np.ndarray:
    V = eval_monomials(degree, lagrange_nodes(degree, nvars))
    V.setflags(write=False)
    return V


@lru_cache(maxsize=None)
def vandermonde_inv(degree: int, nvars: int) -> np.ndarray:
    Vi = np.linalg.inv(vandermonde(degree, nvars))
    Vi.setflags(write=False)
    return Vi


@lru_cache(maxsize=None)
def diff_matrices(degree: int, nvars: int) -> np.ndarray:
    """D[k] maps coefficients of degree p to those of d/dlambda_k (degree p-1)."""
    src = monomial_exponents(degree, nvars)
    idx = monomial_index(degree - 1, nvars)
    D = np.zeros((nvars, len(idx), len(src)))
    for j, a in enumerate(src):
        for k in range(nvars):
            if a[k]:
                b = list(a)
                b[k] -= 1
                D[k, idx[tuple(b)], j] = a[k]
    D.setflags(write=False)
    return D


@lru_cache(maxsize=None)
def elevation_matrix(degree: int, nvars: int, steps: int = 1) -> np.ndarray:
    """Multiply by (sum lambda)^steps: coefficients of degree p -> degree p+steps."""
    E = np.eye(len(monomial_exponents(degree, nvars)))
    for s in range(steps):
        d = degree + s
        src = monomial_exponents(d, nvars)
        idx = monomial_index(d + 1, nvars)
        step = np.zeros((len(idx), len(src)))
        for j, a in enumerate(src):
            for k in range(nvars):
                b = list(a)
                b[k] += 1
                step[idx[tuple(b)], j] += 1.0
        E = step @ E
    E.setflags(write=False)
    return E


def sym_to_vec(T: np.ndarray) -> np.ndarray:
    T = np.asarray(T, dtype=float)
    return np.stack([T[..., i, j] for i, j in SYM_IJ], axis=-1)


def vec_to_sym(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    T = np.empty(v.shape[:-1] + (3, 3))
    for c, (i, j) in enumerate(SYM_IJ):
        T[..., i, j] = v[..., c]
        T[..., j, i] = v[..., c]
    return T


def contraction_vector(a, b) -> np.ndarray:
    """Weights w with a^T tau b = sum_c w_c tau_c for symmetric tau."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return np.array(
        [
            a[0] * b[0],
            a[1] * b[1],
            a[2] * b[2],
            a[1] * b[2] + a[2] * b[1],
            a[0] * b[2] + a[2] * b[0],
            a[0] * b[1] + a[1] * b[0],
        ]
    )


@lru_cache(maxsize=None)
def restriction_matrix(degree: int, nvars: int, sub: tuple[int, ...]) -> np.ndarray:
    """Map coefficients on the parent simplex to those on the face spanned by ``sub``.

    Monomials involving a coordinate outside ``sub`` vanish on that face.
    """
    src = monomial_exponents(degree, nvars)
    idx = monomial_index(degree, len(sub))
    R = np.zeros((len(idx), len(src)))
    others = [k for k in range(nvars) if k not in sub]
    for j, a in enumerate(src):
        if all(a[k] == 0 for k in others):
            R[idx[tuple(a[k] for k in sub)], j] = 1.0
    R.setflags(write=False)
    return R


@lru_cache(maxsize=None)
def multiply_table(deg_a: int, deg_b: int, nvars: int) -> np.ndarray:
    """P[c, a, b] = 1 when lambda^a lambda^b is monomial c of degree deg_a + deg_b."""
    ea = monomial_exponents(deg_a, nvars)
    eb = monomial_exponents(deg_b, nvars)
    idx = monomial_index(deg_a + deg_b, nvars)
    P = np.zeros((len(idx), len(ea), len(eb)))
    for i, a in enumerate(ea):
        for j, b in enumerate(eb):
            P[idx[tuple(x + y for x, y in zip(a, b))], i, j] = 1.0
    P.setflags(write=False)
    return P


def poly_multiply(ca: np.ndarray, deg_a: int, cb: np.ndarray, deg_b: int, nvars: int) -> np.ndarray:
    """Product of scalar coefficient vectors; trailing axis of ``cb`` may carry components."""
    P = multiply_table(deg_a, deg_b, nvars)
    return np.einsum("cab,a,b...->c...", P, ca, cb)


class SymTensorPoly:
    """Symmetric-tensor polynomial of degree ``degree`` on a tetrahedron.

    ``coeffs[c, a]`` multiplies ``lambda^exponents[a]`` in component ``c``
    with the component order (xx, yy, zz, yz, xz, xy).
    """

    nvars = 4

    def __init__(self, coeffs, degree: int = 3):
        coeffs = np.asarray(coeffs, dtype=float)
        n = len(monomial_exponents(degree, 4))
        if coeffs.shape != (6, n):
            raise ValueError(f"expected coeffs of shape (6, {n}), got {coeffs.shape}")
        self.coeffs = coeffs
        self.degree = degree

    @classmethod
    def zero(cls, degree: int = 3) -> "SymTensorPoly":
        return cls(np.zeros((6, len(monomial_exponents(degree, 4)))), degree)

    @classmethod
    def constant(cls, T, degree: int = 3) -> "SymTensorPoly":
        ones = elevation_matrix(0, 4, degree)[:, 0]
        return cls(np.outer(sym_to_vec(T), ones), degree)

    @classmethod
    def from_nodal(cls, nodal) -> "SymTensorPoly":
        """From values at the degree-3 lattice nodes, shape (6, 20)."""
        return cls(np.asarray(nodal, dtype=float) @ vandermonde_inv(3, 4).T, 3)

    @classmethod
    def scalar_times_tensor(cls, scalar_coeffs, degree: int, T) -> "SymTensorPoly":
        return cls(np.outer(sym_to_vec(T), scalar_coeffs), degree)

    def to_nodal(self) -> np.ndarray:
        if self.degree != 3:
            raise ValueError("nodal values are defined for degree 3")
        return self.coeffs @ vandermonde(3, 4).T

    def __add__(self, other: "SymTensorPoly") -> "SymTensorPoly":
        return SymTensorPoly(self.coeffs + other.coeffs, self.degree)

    def __sub__(self, other: "SymTensorPoly") -> "SymTensorPoly":
        return SymTensorPoly(self.coeffs - other.coeffs, self.degree)

    def __mul__(self, s: float) -> "SymTensorPoly":
        return SymTensorPoly(self.coeffs * s, self.degree)

    __rmul__ = __mul__

    def evaluate_vec(self, bary) -> np.ndarray:
        """(npts, 6) component values."""
        return eval_monomials(self.degree, bary) @ self.coeffs.T

    def evaluate(self, bary) -> np.ndarray:
        """(npts, 3, 3) tensor values."""
        return vec_to_sym(self.evaluate_vec(bary))

    def divergence(self, grad_bary: np.ndarray) -> np.ndarray:
        """Coefficients (3, n_{p-1}) of the row-wise divergence, given (4, 3) barycentric gradients."""
        D = diff_matrices(self.degree, 4)
        # dc[j, c, :] = d/dx_j of component c
        dc = np.einsum("kj,kab,cb->jca", grad_bary, D, self.coeffs)
        comp = {}
        for c, (i, j) in enumerate(SYM_IJ):
            comp[(i, j)] = comp[(j, i)] = c
        return np.array([sum(dc[j, comp[(i, j)]] for j in range(3)) for i in range(3)])

    def normal_trace(self, bary, normal) -> np.ndarray:
        """(npts, 3) values of tau n."""
        return self.evaluate(bary) @ np.asarray(normal, dtype=float)
