"""Collapsed-coordinate Gauss-Jacobi rules on the reference simplex."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 10


class UnsupportedDegree(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureRule:
    """Points in barycentric coordinates; weights sum to the reference measure 1/d!."""

    dim: int
    degree: int
    points: np.ndarray
    weights: np.ndarray

    def integrate(self, values: np.ndarray, measure: float) -> float:
        """Integral over a simplex of the given measure from values at ``points``."""
        return measure * _FACT[self.dim] * np.tensordot(self.weights, values, axes=(0, 0))


_FACT = (1, 1, 2, 6)


def _gauss_jacobi_01(n: int, alpha: float):
    # nodes/weights on [0, 1] for the weight (1 - t)^alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return (1.0 + x) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    if dim not in (0, 1, 2, 3):
        raise ValueError(f"unsupported simplex dimension {dim}")
    if degree < 0 or degree > MAX_DEGREE:
        raise UnsupportedDegree(f"degree {degree} not in [0, {MAX_DEGREE}]")
    if dim == 0:
        pts, w = np.ones((1, 1)), np.ones(1)
    else:
        n = degree // 2 + 1
        t1, w1 = _gauss_jacobi_01(n, 0.0)
        if dim == 1:
            x = t1[:, None]
            w = w1
        elif dim == 2:
            t2, w2 = _gauss_jacobi_01(n, 1.0)
            s, t = np.meshgrid(t1, t2, indexing="ij")
            x = np.stack([s * (1 - t), t], axis=-1).reshape(-1, 2)
            w = np.outer(w1, w2).ravel()
        else:
            t2, w2 = _gauss_jacobi_01(n, 1.0)
            t3, w3 = _gauss_jacobi_01(n, 2.0)
            a, b, c = np.meshgrid(t1, t2, t3, indexing="ij")
            x = np.stack([a * (1 - b) * (1 - c), b * (1 - c), c], axis=-1).reshape(-1, 3)
            w = np.einsum("i,j,k->ijk", w1, w2, w3).ravel()
        pts = np.hstack([1.0 - x.sum(axis=1, keepdims=True), x])
    pts.setflags(write=False)
    w.setflags(write=False)
    return QuadratureRule(dim, degree, pts, w)
