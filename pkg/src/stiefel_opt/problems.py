"""Objective libraries with analytic gradients and independent oracles:
leading-eigenvalue subspace extraction, projection-robust optimal transport
(with a Sinkhorn inner solver), small Procrustes/quadratic toys, and a
central-difference gradient checker.

Gradients here are plain ambient (Euclidean) gradients; the optimizers turn
them into manifold updates.  Sign convention: every `*_value_grad` returns
the quantity the caller would feed to a MINIMIZER, except `prw_value_grad`
which returns the transport value being maximized (its callers negate).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np
from scipy.special import logsumexp

from .linalg import make_rng
from .validation import check_matrix, check_symmetric, check_weights

__all__ = [
    "LevProblem",
    "lev_generate",
    "lev_value_grad",
    "lev_optimum",
    "PrwProblem",
    "PrwTraceRow",
    "prw_two_gaussian",
    "prw_cost_matrix",
    "prw_value_grad",
    "prw_solve",
    "SinkhornResult",
    "sinkhorn",
    "procrustes_value_grad",
    "procrustes_optimum",
    "quadratic_value_grad",
    "finite_diff_grad",
]


# -- leading eigenvalue -------------------------------------------------------

@dataclass(frozen=True)
class LevProblem:
    """Find the m-dimensional dominant invariant subspace of a symmetric A by
    minimizing f(X) = -Tr(X^T A X) over frames with orthonormal columns."""

    A: np.ndarray
    m: int

    def __post_init__(self):
        a = check_symmetric(self.A, "A", tol=1e-12)
        object.__setattr__(self, "A", a)
        if not 1 <= self.m <= a.shape[0]:
            raise ValueError(f"need 1 <= m <= n, got m={self.m}, n={a.shape[0]}")


def lev_generate(n: int, m: int, rng_or_seed) -> LevProblem:
    """Gaussian symmetric test matrix A = (Xi + Xi^T) / (2 sqrt(n)) with Xi
    i.i.d. standard normal; deterministic per seed."""
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else make_rng(int(rng_or_seed))
    xi = rng.standard_normal((n, n))
    a = (xi + xi.T) / (2.0 * math.sqrt(n))
    return LevProblem(A=a, m=m)


def lev_value_grad(p: LevProblem, x: np.ndarray) -> tuple[float, np.ndarray]:
    """f(X) = -Tr(X^T A X) and its ambient gradient -2 A X."""
    x = check_matrix(x, "X", shape=(p.A.shape[0], p.m))
    ax = p.A @ x
    return -float(np.tensordot(x, ax)), -2.0 * ax


def lev_optimum(p: LevProblem) -> float:
    """Reference optimum -sum(top-m eigenvalues) from a dense decomposition."""
    w = np.linalg.eigvalsh(p.A)
    return -float(np.sum(w[-p.m :]))


# -- entropic optimal transport ----------------------------------------------

class SinkhornResult(NamedTuple):
    """Transport plan with its worst marginal residual and iteration count."""

    plan: np.ndarray
    residual: float
    iters: int
    converged: bool


def sinkhorn(
    c: np.ndarray,
    r: np.ndarray,
    col: np.ndarray,
    reg: float,
    tol: float = 1e-6,
    max_iter: int = 1000,
) -> SinkhornResult:
    """Alternating scaling for the entropic transport problem.

    Minimizes <pi, C> + reg <pi, log pi - 1> subject to row sums r and column
    sums col.  Uses plain scaling on K = exp(-C/reg); switches to the
    log-domain recursion when reg is small relative to the costs or when the
    kernel underflows.  On hitting max_iter the best plan is returned with
    converged=False rather than raising.
    """
    c = check_matrix(c, "cost")
    n_rows, n_cols = c.shape
    r = check_weights(r, n_rows, "row weights")
    col = check_weights(col, n_cols, "column weights")
    if not reg > 0:
        raise ValueError(f"entropic regularization must be positive, got {reg}")

    use_log = reg < 0.05 * float(np.median(c))
    if not use_log:
        k = np.exp(-c / reg)
        if k.min() <= 0.0 or not np.isfinite(k).all():
            use_log = True

    if use_log:
        return _sinkhorn_log(c, r, col, reg, tol, max_iter)

    u = np.ones(n_rows)
    v = np.ones(n_cols)
    residual = math.inf
    for it in range(1, max_iter + 1):
        u = r / (k @ v)
        v = col / (k.T @ u)
        if not (np.isfinite(u).all() and np.isfinite(v).all()):
            return _sinkhorn_log(c, r, col, reg, tol, max_iter)
        plan = (u[:, None] * k) * v[None, :]
        residual = _marginal_residual(plan, r, col)
        if residual <= tol:
            return SinkhornResult(plan, residual, it, True)
    return SinkhornResult(plan, residual, max_iter, False)


def _sinkhorn_log(c, r, col, reg, tol, max_iter) -> SinkhornResult:
    log_r = np.log(r)
    log_c = np.log(col)
    neg_c = -c / reg
    f = np.zeros_like(log_r)
    g = np.zeros_like(log_c)
    residual = math.inf
    plan = None
    for it in range(1, max_iter + 1):
        f = log_r - logsumexp(neg_c + g[None, :], axis=1)
        g = log_c - logsumexp(neg_c + f[:, None], axis=0)
        plan = np.exp(neg_c + f[:, None] + g[None, :])
        residual = _marginal_residual(plan, r, col)
        if residual <= tol:
            return SinkhornResult(plan, residual, it, True)
    return SinkhornResult(plan, residual, max_iter, False)


def _marginal_residual(plan, r, col) -> float:
    return max(
        float(np.abs(plan.sum(axis=1) - r).max()),
        float(np.abs(plan.sum(axis=0) - col).max()),
    )


# -- projection-robust transport ----------------------------------------------

@dataclass(frozen=True)
class PrwProblem:
    """Two weighted point clouds and a target projection dimension k.

    The projection-robust transport value is the maximum over k-frames U of
    the entropic transport cost between the projected clouds; `reg` is the
    entropic regularization strength of the inner solver.
    """

    xs: np.ndarray
    ys: np.ndarray
    r: np.ndarray
    c: np.ndarray
    k: int
    reg: float

    def __post_init__(self):
        xs = check_matrix(self.xs, "xs")
        ys = check_matrix(self.ys, "ys")
        if xs.shape[1] != ys.shape[1]:
            raise ValueError("point clouds must share the ambient dimension")
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ys", ys)
        object.__setattr__(self, "r", check_weights(self.r, xs.shape[0], "r"))
        object.__setattr__(self, "c", check_weights(self.c, ys.shape[0], "c"))
        if not 1 <= self.k <= xs.shape[1]:
            raise ValueError(f"need 1 <= k <= d, got k={self.k}, d={xs.shape[1]}")
        if not self.reg > 0:
            raise ValueError("reg must be positive")

    @property
    def d(self) -> int:
        return self.xs.shape[1]


def prw_two_gaussian(
    n_points: int,
    d: int,
    rng_or_seed,
    k: int = 2,
    reg: float = 0.5,
    sep: float = 2.0,
    in_plane_std: float = 1.5,
    off_plane_std: float = 0.05,
) -> PrwProblem:
    """Synthetic instance: two Gaussian clouds whose displacement and spread
    live in the first two coordinates, with faint isotropic noise elsewhere.
    The best 2-frame is therefore (close to) the span of e1, e2."""
    if d < 2:
        raise ValueError("generator needs d >= 2")
    rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else make_rng(int(rng_or_seed))
    mean_x = np.zeros(d)
    mean_y = np.zeros(d)
    mean_x[0], mean_x[1] = sep, -sep
    mean_y[0], mean_y[1] = -sep, sep
    scale = np.full(d, off_plane_std)
    scale[:2] = in_plane_std
    xs = mean_x + rng.standard_normal((n_points, d)) * scale
    ys = mean_y + rng.standard_normal((n_points, d)) * scale
    w = np.full(n_points, 1.0 / n_points)
    return PrwProblem(xs=xs, ys=ys, r=w, c=w.copy(), k=k, reg=reg)


def prw_cost_matrix(p: PrwProblem, u: np.ndarray) -> np.ndarray:
    """Pairwise squared distances between the clouds projected through u."""
    px = p.xs @ u
    py = p.ys @ u
    sq = (px * px).sum(axis=1)[:, None] + (py * py).sum(axis=1)[None, :] - 2.0 * (px @ py.T)
    return np.maximum(sq, 0.0)


def _displacement_second_moment(p: PrwProblem, plan: np.ndarray) -> np.ndarray:
    """Sum_ij pi_ij (x_i - y_j)(x_i - y_j)^T, assembled in O(N^2 d + N d^2)."""
    row = plan.sum(axis=1)
    col = plan.sum(axis=0)
    cross = p.xs.T @ (plan @ p.ys)
    second = (p.xs.T * row) @ p.xs + (p.ys.T * col) @ p.ys - cross - cross.T
    return 0.5 * (second + second.T)


def prw_value_grad(
    p: PrwProblem, u: np.ndarray, plan: np.ndarray
) -> tuple[float, np.ndarray]:
    """Transport term sum_ij pi_ij |U^T(x_i - y_j)|^2 and its gradient
    2 V U in the frame, with the plan held fixed; V is the second moment of
    the displacements under the plan.  The entropic term does not depend on U
    and is excluded from the value."""
    u = check_matrix(u, "U", shape=(p.d, p.k))
    plan = check_matrix(plan, "plan", shape=(p.xs.shape[0], p.ys.shape[0]))
    second = _displacement_second_moment(p, plan)
    su = second @ u
    return float(np.tensordot(u, su)), 2.0 * su


class PrwTraceRow(NamedTuple):
    """Per-outer-iteration record of the alternating solver."""

    outer: int
    value: float
    marginal_residual: float
    sinkhorn_iters: int
    feas: float
    skew: float
    perp: float
    wall_ns: int


def prw_solve(
    p: PrwProblem,
    hyper,
    n_outer: int,
    u0: np.ndarray | None = None,
    sinkhorn_tol: float = 1e-6,
    sinkhorn_max_iter: int = 1000,
    inner_steps: int = 1,
    rng_or_seed=0,
):
    """Alternating maximization of the projection-robust transport value.

    Each outer iteration solves the transport plan to tolerance for the
    current frame, then improves the frame with `inner_steps` manifold ascent
    steps (descent on the negated transport term) holding the plan fixed.
    Runs a fixed number of outer iterations; no early termination.

    Returns (frame, value, trace) with PrwTraceRow entries; the traced value
    is recomputed from the current (frame, plan) pair each iteration, never
    cached.
    """
    import time

    from .linalg import orthogonal_init
    from .manifold import structure_errors
    from .optimizers import AdamHyper, SgdHyper, adam_state, adam_step, sgd_state, sgd_step

    if n_outer < 1:
        raise ValueError("n_outer must be >= 1")
    if inner_steps < 1:
        raise ValueError("inner_steps must be >= 1")
    if u0 is None:
        rng = rng_or_seed if isinstance(rng_or_seed, np.random.Generator) else make_rng(int(rng_or_seed))
        u0 = orthogonal_init(p.d, p.k, rng)

    if isinstance(hyper, SgdHyper):
        state = sgd_state(u0)
        step = sgd_step
    elif isinstance(hyper, AdamHyper):
        state = adam_state(u0)
        step = adam_step
    else:
        raise TypeError("hyper must be SgdHyper or AdamHyper")

    trace: list[PrwTraceRow] = []
    plan = None
    t0 = time.perf_counter_ns()
    for outer in range(1, n_outer + 1):
        cost = prw_cost_matrix(p, state.X)
        sres = sinkhorn(cost, p.r, p.c, p.reg, tol=sinkhorn_tol, max_iter=sinkhorn_max_iter)
        plan = sres.plan
        for _ in range(inner_steps):
            def neg_grad(u, plan=plan):
                _, g = prw_value_grad(p, u, plan)
                return -g

            state = step(state, neg_grad, hyper)
        value, _ = prw_value_grad(p, state.X, plan)
        feas, skew, perp = structure_errors(state.X, state.Z, state.U)
        trace.append(
            PrwTraceRow(
                outer, value, sres.residual, sres.iters, feas, skew, perp,
                time.perf_counter_ns() - t0,
            )
        )
    final_value, _ = prw_value_grad(p, state.X, plan)
    return state.X, final_value, trace


# -- toys -----------------------------------------------------------------

def procrustes_value_grad(d: np.ndarray, x: np.ndarray) -> tuple[float, np.ndarray]:
    """Alignment toy f(X) = -Tr(D^T X) with gradient -D; over rotations the
    minimizer is the orthogonal polar factor of D."""
    d = check_matrix(d, "D")
    x = check_matrix(x, "X", shape=d.shape)
    return -float(np.tensordot(d, x)), -d


def procrustes_optimum(d: np.ndarray) -> np.ndarray:
    """Closed-form optimum of the alignment toy over rotations: U V^T from the
    singular value decomposition, with the last column sign-flipped when the
    determinant is negative (stays in the rotation component)."""
    u, _, vt = np.linalg.svd(d)
    r = u @ vt
    if np.linalg.det(r) < 0:
        u = u.copy()
        u[:, -1] = -u[:, -1]
        r = u @ vt
    return r


def quadratic_value_grad(
    a: np.ndarray, b: np.ndarray, x: np.ndarray
) -> tuple[float, np.ndarray]:
    """Quadratic toy f(X) = 0.5 Tr(X^T A X) + Tr(B^T X) with symmetric A."""
    a = check_symmetric(a, "A", tol=1e-12)
    x = check_matrix(x, "X")
    b = check_matrix(b, "B", shape=x.shape)
    ax = a @ x
    return 0.5 * float(np.tensordot(x, ax)) + float(np.tensordot(b, x)), ax + b


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Entrywise central differences (f(x+h e) - f(x-h e)) / 2h."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = check_matrix(x, "X")
    g = np.zeros_like(x)
    for idx in np.ndindex(*x.shape):
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g
