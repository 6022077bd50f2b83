"""Dense small-matrix kernels: inverse square root, Cayley map, skew expm,
orthogonal initialization, and the plain-text matrix format used by the CLI
and golden tests.

Everything is double precision and pure (no in-place mutation of inputs).
Randomness comes from numpy's PCG64 generator, so a fixed seed reproduces the
exact bit stream.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
from scipy.linalg import blas as _blas

from .validation import (
    DivergedError,
    NonFiniteError,
    RankDeficientError,
    check_matrix,
    check_skew,
    check_square,
    check_symmetric,
)

__all__ = [
    "make_rng",
    "spawn_rngs",
    "cached_eye",
    "right_multiply",
    "gram_product",
    "inv_sqrt_newton_schulz",
    "inv_sqrt_retraction",
    "inv_sqrt_eigh",
    "cayley",
    "cayley_general",
    "expm_skew",
    "orthogonal_init",
    "skew_part",
    "sym_part",
    "write_matrix",
    "read_matrix",
    "format_float",
]

NS_TOL = 1e-14
NS_MAX_ITER = 20


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic PCG64 generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(seed))


def spawn_rngs(seed: int, n: int) -> list[np.random.Generator]:
    """Fork `n` independent deterministic streams from one seed."""
    return [np.random.Generator(np.random.PCG64(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def inv_sqrt_newton_schulz(
    a: np.ndarray,
    tol: float = NS_TOL,
    max_iter: int = NS_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Coupled quadratic iteration for the square root and inverse square root
    of a symmetric positive-definite matrix.

    Iterates ``Y <- Y(3I - ZY)/2``, ``Z <- (3I - ZY)Z/2`` from ``Y = A``,
    ``Z = I`` until ``|Y^2 - A|_F < tol``.  Converges quadratically when the
    spectrum of A lies in (0, 2); callers ensure A is a small perturbation of
    the identity.

    Returns (sqrt, inv_sqrt, iterations).  Raises DivergedError if the
    residual grows for two consecutive iterations or the cap is reached.
    """
    a = check_symmetric(a, "A", tol=1e-12)
    m = a.shape[0]
    eye = np.eye(m)
    y = a.copy()
    z = eye.copy()
    residual = np.linalg.norm(y @ y - a)
    grew = 0
    for k in range(max_iter):
        if residual < tol:
            return y, z, k
        t = 1.5 * eye - 0.5 * (z @ y)
        y = y @ t
        z = t @ z
        new_residual = np.linalg.norm(y @ y - a)
        if not np.isfinite(new_residual):
            raise DivergedError("newton-schulz produced non-finite iterates")
        grew = grew + 1 if new_residual >= residual else 0
        if grew >= 2:
            raise DivergedError(
                f"newton-schulz residual grew twice in a row ({new_residual:.3e}); "
                "input is outside the contraction region"
            )
        residual = new_residual
    if residual < tol:
        return y, z, max_iter
    raise DivergedError(f"newton-schulz did not reach tol={tol:.1e} in {max_iter} iterations")


def right_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a @ b for a tall C-ordered a and small square b.

    Feeds the transposed views (which are Fortran-ordered, hence zero-copy)
    straight to dgemm; the row-major path through the generic matmul pays a
    layout conversion on every call, which dominates at these shapes.
    """
    if a.flags.c_contiguous and b.flags.c_contiguous:
        return _blas.dgemm(1.0, b.T, a.T).T
    return a @ b


def gram_product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """a^T @ b for two tall C-ordered matrices (a small square result)."""
    if a.flags.c_contiguous and b.flags.c_contiguous:
        return _blas.dgemm(1.0, b.T, a.T, trans_b=1).T
    return a.T @ b


_EYE_CACHE: dict[int, np.ndarray] = {}


def cached_eye(m: int) -> np.ndarray:
    """Shared read-only identity; avoids rebuilding eye(m) in step loops."""
    eye = _EYE_CACHE.get(m)
    if eye is None:
        eye = np.eye(m)
        eye.setflags(write=False)
        _EYE_CACHE[m] = eye
    return eye


def inv_sqrt_retraction(a: np.ndarray, tol: float = NS_TOL) -> np.ndarray:
    """Inverse square root tuned for the retraction hot loop.

    Same quadratic contraction as :func:`inv_sqrt_newton_schulz`, with three
    loop-hygiene differences: the iteration count is decided upfront from the
    initial deviation |A - I| (the contraction satisfies e_{k+1} <= e_k^2 for
    e <= 1, so the count is a provable bound); the two iterates advance in
    one stacked product (they are commuting polynomials in A, so the update
    may multiply both from the right); and the final residual is verified
    once at the end, skipped only where the bound makes it redundant.  Falls
    back to the monitored kernel, and from there to the eigendecomposition
    path, whenever the input is outside the contraction region.
    """
    m = a.shape[0]
    eye = cached_eye(m)
    dev = (a - eye).ravel()
    r0 = math.sqrt(float(dev @ dev))
    if r0 >= 0.9:
        return _inv_sqrt_fallback(a, tol)
    target = 0.25 * tol
    if r0 < target:
        # already within tolerance: hand back the shared read-only identity,
        # which callers may use to skip the final multiplication
        return eye
    steps = 0
    e = r0
    while e >= target and steps < NS_MAX_ITER:
        e = e * e
        steps += 1
    t = 1.5 * eye - 0.5 * a
    y = right_multiply(a, t)
    z = t
    for _ in range(steps - 1):
        t = -0.5 * right_multiply(z, y)
        t.flat[:: m + 1] += 1.5
        y = right_multiply(y, t)
        z = right_multiply(z, t)
    # rounding keeps the achievable residual near 1e-15, so only verify when
    # the requested tolerance is tighter than the skip bound guarantees
    if tol < 1e-14 or r0 > 1e-5:
        resid = (right_multiply(y, y) - a).ravel()
        if math.sqrt(float(resid @ resid)) > tol:
            return _inv_sqrt_fallback(a, tol)
    return z


def _inv_sqrt_fallback(a: np.ndarray, tol: float) -> np.ndarray:
    try:
        _, inv_root, _ = inv_sqrt_newton_schulz(a, tol=tol)
        return inv_root
    except DivergedError:
        return inv_sqrt_eigh(a)[1]


def inv_sqrt_eigh(a: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition route for (sqrt, inv_sqrt) of an SPD matrix.

    Fallback for inputs outside the Newton-Schulz contraction region, and the
    independent oracle used by the tests.
    """
    a = check_symmetric(a, "A", tol=1e-12)
    w, v = np.linalg.eigh(a)
    if w.min() <= 0:
        raise np.linalg.LinAlgError("matrix is not positive definite")
    root = np.sqrt(w)
    return (v * root) @ v.T, (v / root) @ v.T


def cayley(w: np.ndarray, h: float = 1.0) -> np.ndarray:
    """Cayley map ``(I - hW/2)^{-1} (I + hW/2)`` of a skew matrix.

    Orthogonal for skew W and real h; agrees with expm(hW) to third order.
    """
    w = check_skew(w, "W", tol=1e-12)
    return cayley_general(h * w)


def cayley_general(a: np.ndarray) -> np.ndarray:
    """Rational map ``(I - A/2)^{-1} (I + A/2)`` for an arbitrary square A.

    Used internally where the argument has a symmetric (contracting) part and
    orthogonality of the output is not expected.
    """
    a = check_square(a, "A")
    eye = np.eye(a.shape[0])
    return np.linalg.solve(eye - 0.5 * a, eye + 0.5 * a)


def expm_skew(w: np.ndarray) -> np.ndarray:
    """Matrix exponential of a skew matrix; the result is orthogonal."""
    w = check_skew(w, "W", tol=1e-12)
    r = scipy.linalg.expm(w)
    if not np.isfinite(r).all():
        raise NonFiniteError("expm overflowed")
    return r


def orthogonal_init(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    """Random n-by-m matrix with orthonormal columns.

    Draws i.i.d. standard normals, takes the thin QR factorization, and fixes
    the sign of each column by the sign of the corresponding diagonal entry of
    R.  The sign fix makes the draw a well-defined function of the Gaussian
    sample (plain QR is only unique up to column signs).
    """
    if not 1 <= m <= n:
        raise ValueError(f"need n >= m >= 1, got n={n}, m={m}")
    for attempt in range(2):
        g = rng.standard_normal((n, m))
        q, r = np.linalg.qr(g)
        d = np.diag(r)
        if np.min(np.abs(d)) > 1e-12 * np.sqrt(n):
            return q * np.sign(d)
    raise RankDeficientError("gaussian draw was numerically rank deficient twice")


def skew_part(a: np.ndarray) -> np.ndarray:
    """(A - A^T)/2; exactly skew by construction."""
    a = check_square(a, "A")
    return 0.5 * (a - a.T)


def sym_part(a: np.ndarray) -> np.ndarray:
    """(A + A^T)/2; exactly symmetric by construction."""
    a = check_square(a, "A")
    return 0.5 * (a + a.T)


def format_float(x: float) -> str:
    """Render a double with 17 significant digits (round-trip exact)."""
    return f"{x:.17g}"


def write_matrix(path, a: np.ndarray) -> None:
    """Write a matrix in the plain-text exchange format.

    First line is "rows cols"; each following line is one whitespace-separated
    row at 17 significant digits.
    """
    a = check_matrix(a, "matrix")
    lines = [f"{a.shape[0]} {a.shape[1]}"]
    for row in a:
        lines.append(" ".join(format_float(v) for v in row))
    text = "\n".join(lines) + "\n"
    if hasattr(path, "write"):
        path.write(text)
    else:
        with open(path, "w", encoding="ascii") as fh:
            fh.write(text)


def read_matrix(path) -> np.ndarray:
    """Read a matrix written by :func:`write_matrix`."""
    if hasattr(path, "read"):
        text = path.read()
    else:
        with open(path, "r", encoding="ascii") as fh:
            text = fh.read()
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty matrix file")
    rows, cols = (int(t) for t in lines[0].split())
    if len(lines) - 1 != rows:
        raise ValueError(f"expected {rows} data rows, found {len(lines) - 1}")
    data = np.array([[float(t) for t in ln.split()] for ln in lines[1:]], dtype=np.float64)
    if data.shape != (rows, cols):
        raise ValueError(f"row length mismatch: header says {cols} cols, data has {data.shape[1]}")
    return data
