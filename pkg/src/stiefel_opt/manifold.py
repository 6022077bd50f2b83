"""Geometry of the orthonormal-frame manifold {X : X^T X = I}.

Tangent vectors at X are matrices D with X^T D + D^T X = 0.  They split as
D = X Y + V with Y skew (the rotational block) and V perpendicular to the
columns of X; most of the package works in the (Y, V) coordinates because the
metric and the update maps decouple there.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .linalg import gram_product, right_multiply
from .validation import NotTangentError, check_matrix, check_skew

__all__ = [
    "MetricParams",
    "TangentYV",
    "metric_inner",
    "decompose_tangent",
    "compose_tangent",
    "gradient_terms",
    "perp_project",
    "structure_errors",
]


@dataclass(frozen=True)
class MetricParams:
    """One-parameter family of metrics  <D1, D2> = Tr(D1^T (I - a X X^T) D2).

    a = 0 is the Euclidean metric, a = 1/2 the canonical one.  The companion
    constant b = a/(a-1) shows up in the gradient formulas and is always
    recomputed from a, never stored.
    """

    a: float = 0.5

    def __post_init__(self):
        if not self.a < 1.0:
            raise ValueError(f"metric parameter must satisfy a < 1, got {self.a}")

    @property
    def b(self) -> float:
        return self.a / (self.a - 1.0)


class TangentYV(NamedTuple):
    """Tangent vector in split coordinates: skew m-by-m Y plus perpendicular V."""

    Y: np.ndarray
    V: np.ndarray


def metric_inner(x: np.ndarray, d1: np.ndarray, d2: np.ndarray, mp: MetricParams) -> float:
    """Metric pairing Tr(D1^T (I - a X X^T) D2).

    Total in D1, D2 (tangency is not required); positive definite on the
    tangent space for a < 1.
    """
    x = check_matrix(x, "X")
    d1 = check_matrix(d1, "D1", shape=x.shape)
    d2 = check_matrix(d2, "D2", shape=x.shape)
    euclid = float(np.tensordot(d1, d2))
    if mp.a == 0.0:
        return euclid
    xd1 = x.T @ d1
    xd2 = x.T @ d2
    return euclid - mp.a * float(np.tensordot(xd1, xd2))


def decompose_tangent(x: np.ndarray, q: np.ndarray, tol: float = 1e-8) -> TangentYV:
    """Split a tangent matrix Q at X into (Y, V) with Y = X^T Q skew and
    V = Q - X Y perpendicular to X.

    Raises NotTangentError when X^T Q + Q^T X deviates from zero beyond tol.
    """
    x = check_matrix(x, "X")
    q = check_matrix(q, "Q", shape=x.shape)
    y = x.T @ q
    skew_dev = np.linalg.norm(y + y.T)
    if skew_dev > tol:
        raise NotTangentError(
            f"matrix is not tangent at X (|X^T Q + Q^T X|_F = {skew_dev:.3e} > {tol:.1e})"
        )
    v = q - x @ y
    return TangentYV(Y=y, V=v)


def compose_tangent(x: np.ndarray, t: TangentYV) -> np.ndarray:
    """Reassemble the ambient tangent matrix X Y + V."""
    x = check_matrix(x, "X")
    y = check_skew(t.Y, "Y", tol=1e-10)
    v = check_matrix(t.V, "V", shape=x.shape)
    return x @ y + v


def gradient_terms(x: np.ndarray, g: np.ndarray, mp: MetricParams) -> tuple[np.ndarray, np.ndarray]:
    """The two 'gradient' blocks consumed by the optimizers.

    Given the ambient Euclidean gradient G at X, returns

        f_skew = (1-b)/2 (X^T G - G^T X)        (exactly skew)
        g_perp = (I - X X^T) G                  (perpendicular when X^T X = I)

    g_perp is evaluated as G - X (X^T G) so the cost stays O(n m^2).  When X
    is square the perpendicular complement of its column span is trivial, so
    g_perp is exactly zero; we return hard zeros in that case, which keeps
    square-frame runs bitwise on the rotational subsystem.

    Called once per optimizer step, so validation is shape-only.
    """
    x = np.asarray(x, dtype=np.float64)
    g = np.asarray(g, dtype=np.float64)
    if x.ndim != 2 or g.shape != x.shape:
        raise ValueError(f"gradient shape {g.shape} does not match position shape {x.shape}")
    xtg = gram_product(x, g)
    f_skew = (0.5 * (1.0 - mp.b)) * (xtg - xtg.T)
    if x.shape[0] == x.shape[1]:
        g_perp = np.zeros_like(g)
    else:
        g_perp = g - right_multiply(x, xtg)
    return f_skew, g_perp


def perp_project(x: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Project u onto the orthogonal complement of span(X) using the exact
    Gram inverse: (I - X (X^T X)^{-1} X^T) u.

    Correct even when X is only approximately orthonormal (mid-step states).
    """
    x = check_matrix(x, "X")
    u = check_matrix(u, "U", shape=x.shape)
    if x.shape[0] == x.shape[1]:
        return np.zeros_like(u)
    gram = x.T @ x
    return u - x @ np.linalg.solve(gram, x.T @ u)


def structure_errors(x: np.ndarray, z: np.ndarray, u: np.ndarray) -> tuple[float, float, float]:
    """Raw Frobenius norms of the three structure residuals.

    Returns (|X^T X - I|_F, |Z + Z^T|_F, |X^T U|_F); callers pick thresholds.
    """
    x = check_matrix(x, "X")
    z = check_matrix(z, "Z", shape=(x.shape[1], x.shape[1]))
    u = check_matrix(u, "U", shape=x.shape)
    feas = float(np.linalg.norm(x.T @ x - np.eye(x.shape[1])))
    skew = float(np.linalg.norm(z + z.T))
    perp = float(np.linalg.norm(x.T @ u))
    return feas, skew, perp
