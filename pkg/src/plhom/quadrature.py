"""Positive-weight quadrature on reference simplices.

Rules are collapsed (conical product) Gauss-Jacobi rules, so every weight
is positive and any polynomial degree is available in dimensions 1 to 3.
Points are returned in barycentric coordinates and weights are normalised
to sum to one, so an integral over a simplex ``K`` is ``|K| * sum(w * f)``.
"""
from functools import lru_cache
import math

import numpy as np
from scipy.special import roots_jacobi


def _gauss_jacobi01(n, alpha):
    # nodes/weights on [0, 1] for the weight (1 - t)**alpha
    x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim, degree):
    """Return ``(bary, weights)`` exact for polynomials of total ``degree``.

    ``bary`` has shape ``(nq, dim + 1)``; ``weights`` sums to one.
    """
    if dim not in (1, 2, 3):
        raise ValueError(f"no simplex rule for dimension {dim}")
    n = max(1, math.ceil((degree + 1) / 2))
    if dim == 1:
        t, w = _gauss_jacobi01(n, 0.0)
        ref = t[:, None]
    elif dim == 2:
        a, wa = _gauss_jacobi01(n, 1.0)
        b, wb = _gauss_jacobi01(n, 0.0)
        A, B = np.meshgrid(a, b, indexing="ij")
        ref = np.stack([A.ravel(), (B * (1.0 - A)).ravel()], axis=1)
        w = np.outer(wa, wb).ravel()
    else:
        a, wa = _gauss_jacobi01(n, 2.0)
        b, wb = _gauss_jacobi01(n, 1.0)
        c, wc = _gauss_jacobi01(n, 0.0)
        A, B, C = np.meshgrid(a, b, c, indexing="ij")
        ref = np.stack(
            [A.ravel(), (B * (1.0 - A)).ravel(), (C * (1.0 - A) * (1.0 - B)).ravel()],
            axis=1,
        )
        w = np.einsum("i,j,k->ijk", wa, wb, wc).ravel()
    bary = np.hstack([1.0 - ref.sum(axis=1, keepdims=True), ref])
    w = w / w.sum()
    bary.setflags(write=False)
    w.setflags(write=False)
    return bary, w
