"""Tensor-product Legendre polynomials on grid coordinates normalised to [-1, 1]."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np
from numpy.polynomial import legendre


def monomial_degrees(degree: int, include_constant: bool = True) -> List[Tuple[int, int, int]]:
    """Exponent triples (i, j, k) with i + j + k <= degree, constant term first."""
    terms = [
        (i, j, k)
        for total in range(degree + 1)
        for i in range(total, -1, -1)
        for j in range(total - i, -1, -1)
        for k in [total - i - j]
    ]
    return terms if include_constant else terms[1:]


def normalized_axes(shape) -> List[np.ndarray]:
    return [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in shape]


def _leg(x: np.ndarray, order: int) -> np.ndarray:
    coef = np.zeros(order + 1)
    coef[order] = 1.0
    return legendre.legval(x, coef)


def basis_at(coords: np.ndarray, degree: int, include_constant: bool = True) -> np.ndarray:
    """Design matrix (N, n_terms) at normalised coordinates ``coords`` of shape (N, 3)."""
    cols = []
    for i, j, k in monomial_degrees(degree, include_constant):
        cols.append(_leg(coords[:, 0], i) * _leg(coords[:, 1], j) * _leg(coords[:, 2], k))
    return np.stack(cols, axis=1) if cols else np.zeros((coords.shape[0], 0))


def evaluate_field(shape, coefficients, degree: int, include_constant: bool = True) -> np.ndarray:
    """Polynomial sum_t c_t L_t(x, y, z) over a full grid of ``shape``."""
    terms = monomial_degrees(degree, include_constant)
    coefficients = np.asarray(coefficients, dtype=np.float64)
    if coefficients.size != len(terms):
        raise ValueError(f"degree {degree} needs {len(terms)} coefficients, got {coefficients.size}")
    ax = normalized_axes(shape)
    px = [_leg(ax[0], d) for d in range(degree + 1)]
    py = [_leg(ax[1], d) for d in range(degree + 1)]
    pz = [_leg(ax[2], d) for d in range(degree + 1)]
    out = np.zeros(tuple(shape))
    for c, (i, j, k) in zip(coefficients, terms):
        if c != 0.0:
            out += c * px[i][:, None, None] * py[j][None, :, None] * pz[k][None, None, :]
    return out
