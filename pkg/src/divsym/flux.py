"""Triangle flux and moment integrals over simplices of cube centers.

``B[alpha]`` is the average of ``w_alpha(xi) . nu`` over the triangle (the
area-weighted normal makes this the actual flux of row alpha), and
``G[alpha, beta]`` the first moment ``avg of xi_beta * (w_alpha . nu)``.
From these the moment function is affine in the evaluation point:

    A(alpha, beta)(y) = y_beta B_alpha - G_ab - y_alpha B_beta + G_ba

Quadrature is Grundmann-Moller: fully symmetric under vertex permutations
(so the antisymmetry of B and A under index swaps is exact up to rounding)
with polynomial degree 2s+1 at C(s+3,3) nodes.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np

from .fields import PreconditionError, TrigSymField, assert_div_free

DEGENERACY_TOL = 1e-12


@dataclass
class QuadratureRule:
    """Barycentric nodes and averaging weights (summing to 1) on the triangle."""

    points: np.ndarray   # (q, 3) barycentric
    weights: np.ndarray  # (q,), sum 1
    degree: int

    def __post_init__(self):
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("quadrature weights must sum to 1")


def grundmann_moeller(s: int) -> QuadratureRule:
    """Symmetric simplex rule of degree 2s+1 on the triangle (d = 2)."""
    d = 2
    points, weights = [], []
    for i in range(s + 1):
        denom = d + 1 + 2 * (s - i)
        w = (
            (-1.0) ** i
            * 2.0 ** (-2 * s)
            * float(denom) ** (2 * s + 1)
            / (factorial(i) * factorial(d + 2 * s + 1 - i))
        )
        for k0 in range(s - i + 1):
            for k1 in range(s - i - k0 + 1):
                k2 = s - i - k0 - k1
                points.append([(2 * k0 + 1) / denom, (2 * k1 + 1) / denom, (2 * k2 + 1) / denom])
                weights.append(w)
    points = np.array(points)
    weights = np.array(weights)
    # Grundmann-Moller weights integrate against volume 1/d!; renormalize to averages
    weights = weights / weights.sum()
    return QuadratureRule(points=points, weights=weights, degree=2 * s + 1)


def rule_for_degree(degree: int) -> QuadratureRule:
    """Smallest Grundmann-Moller rule of polynomial degree >= ``degree``."""
    return grundmann_moeller(max(0, degree // 2))


def normal(x_i, x_j, x_k, tol=DEGENERACY_TOL):
    """Area-weighted normal ``0.5 (x_i - x_j) x (x_k - x_j)``; zero if degenerate."""
    x_i, x_j, x_k = (np.asarray(v, dtype=float) for v in (x_i, x_j, x_k))
    nu = 0.5 * np.cross(x_i - x_j, x_k - x_j)
    edges = max(
        np.linalg.norm(x_i - x_j),
        np.linalg.norm(x_k - x_j),
        np.linalg.norm(x_i - x_k),
    )
    if np.linalg.norm(nu) < tol * edges**2:
        return np.zeros(3)
    return nu


@dataclass
class TriangleMoments:
    """Cached flux vector and first moments of one triangle of centers."""

    vertices: np.ndarray  # (3, 3) rows x_i, x_j, x_k in a common frame
    nu: np.ndarray        # (3,)
    B: np.ndarray         # (3,)
    G: np.ndarray         # (3, 3)

    @property
    def degenerate(self):
        return not self.nu.any()


def triangle_moments(w: TrigSymField, x_i, x_j, x_k, rule: QuadratureRule) -> TriangleMoments:
    """Flux vector B and moment matrix G of ``w`` over one triangle.

    Degenerate simplices get all-zero data by convention.  Vertices are taken
    verbatim (no wrapping): callers on the torus unwrap them into a common
    frame first, and must evaluate ``A`` in the same frame.
    """
    verts = np.stack([np.asarray(v, dtype=float) for v in (x_i, x_j, x_k)])
    nu = normal(*verts)
    if not nu.any():
        return TriangleMoments(vertices=verts, nu=np.zeros(3), B=np.zeros(3), G=np.zeros((3, 3)))
    pts = rule.points @ verts
    vals = w.eval_many(pts)                      # (q, 3, 3)
    flux = np.einsum("qab,b->qa", vals, nu)      # rows dotted with nu
    b = rule.weights @ flux
    g = np.einsum("q,qb,qa->ab", rule.weights, pts, flux)
    return TriangleMoments(vertices=verts, nu=nu, B=b, G=g)


def eval_A(m: TriangleMoments, y, alpha: int, beta: int) -> float:
    """The affine moment function at ``y`` (same frame as the cached triangle)."""
    y = np.asarray(y, dtype=float)
    return float(y[beta] * m.B[alpha] - m.G[alpha, beta] - y[alpha] * m.B[beta] + m.G[beta, alpha])


def _tetra_defect(w, x_i, x_j, x_k, x_l, rule, extract):
    m_ijk = triangle_moments(w, x_i, x_j, x_k, rule)
    m_ljk = triangle_moments(w, x_l, x_j, x_k, rule)
    m_ilk = triangle_moments(w, x_i, x_l, x_k, rule)
    m_ijl = triangle_moments(w, x_i, x_j, x_l, rule)
    return extract(m_ijk) - extract(m_ljk) - extract(m_ilk) - extract(m_ijl)


def gauss_green_defect_B(w: TrigSymField, x_i, x_j, x_k, x_l, alpha: int, rule: QuadratureRule) -> float:
    """Closed-surface flux combination over the tetrahedron; zero for exact moments."""
    assert_div_free(w, what="gauss_green_defect_B input")
    return float(_tetra_defect(w, x_i, x_j, x_k, x_l, rule, lambda m: m.B[alpha]))


def gauss_green_defect_A(w: TrigSymField, x_i, x_j, x_k, x_l, y, alpha: int, beta: int, rule: QuadratureRule) -> float:
    """Same four-term combination for the moment function evaluated at ``y``."""
    assert_div_free(w, what="gauss_green_defect_A input")
    return float(_tetra_defect(w, x_i, x_j, x_k, x_l, rule, lambda m: eval_A(m, y, alpha, beta)))


def permutation_sign(perm):
    """Parity sign of a sequence of distinct items relative to sorted order."""
    items = list(perm)
    sign = 1
    for a in range(len(items)):
        m = min(range(a, len(items)), key=lambda i: items[i])
        if m != a:
            items[a], items[m] = items[m], items[a]
            sign = -sign
    return sign
