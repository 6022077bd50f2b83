"""Input validation helpers shared by the whole package.

Every public entry point funnels its array arguments through these checks so
that shape/symmetry/feasibility errors surface early with a clear message
instead of as a cryptic downstream numpy failure.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "DivergedError",
    "NonFiniteError",
    "NotTangentError",
    "RankDeficientError",
    "check_matrix",
    "check_square",
    "check_skew",
    "check_symmetric",
    "check_stiefel",
    "check_weights",
]


class DivergedError(RuntimeError):
    """An iterative kernel failed to contract (precondition violated)."""


class NonFiniteError(FloatingPointError):
    """A computation produced inf or nan."""


class NotTangentError(ValueError):
    """A matrix claimed to be tangent violates the tangency constraint."""


class RankDeficientError(np.linalg.LinAlgError):
    """A random draw was numerically rank deficient."""


def check_matrix(a, name: str = "matrix", shape: tuple[int, int] | None = None) -> np.ndarray:
    """Coerce to a C-ordered float64 2-D array with finite entries."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ValueError(f"{name} must be a 2-D matrix, got shape {a.shape}")
    if shape is not None and a.shape != shape:
        raise ValueError(f"{name} must have shape {shape}, got {a.shape}")
    if not np.isfinite(a).all():
        raise NonFiniteError(f"{name} contains non-finite entries")
    return a


def check_square(a, name: str = "matrix") -> np.ndarray:
    a = check_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise ValueError(f"{name} must be square, got shape {a.shape}")
    return a


def check_skew(a, name: str = "matrix", tol: float = 1e-12) -> np.ndarray:
    a = check_square(a, name)
    dev = np.linalg.norm(a + a.T)
    if dev > tol:
        raise ValueError(f"{name} is not skew-symmetric (|A + A^T|_F = {dev:.3e} > {tol:.1e})")
    return a


def check_symmetric(a, name: str = "matrix", tol: float = 1e-12) -> np.ndarray:
    a = check_square(a, name)
    dev = np.linalg.norm(a - a.T)
    if dev > tol:
        raise ValueError(f"{name} is not symmetric (|A - A^T|_F = {dev:.3e} > {tol:.1e})")
    return a


def check_stiefel(x, name: str = "X", tol: float = 1e-8) -> np.ndarray:
    """Check that x has orthonormal columns up to `tol` in Frobenius norm."""
    x = check_matrix(x, name)
    n, m = x.shape
    if n < m:
        raise ValueError(f"{name} must be tall (rows >= cols), got shape {x.shape}")
    dev = np.linalg.norm(x.T @ x - np.eye(m))
    if dev > tol:
        raise ValueError(
            f"{name} does not have orthonormal columns (|X^T X - I|_F = {dev:.3e} > {tol:.1e})"
        )
    return x


def check_weights(w, size: int, name: str = "weights", tol: float = 1e-9) -> np.ndarray:
    """Validate a probability vector: nonnegative entries summing to one."""
    w = np.ascontiguousarray(w, dtype=np.float64).ravel()
    if w.size != size:
        raise ValueError(f"{name} must have length {size}, got {w.size}")
    if (w < 0).any():
        raise ValueError(f"{name} must be nonnegative")
    if abs(w.sum() - 1.0) > tol:
        raise ValueError(f"{name} must sum to 1, got {w.sum():.12g}")
    return w
