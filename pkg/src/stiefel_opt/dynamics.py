"""Continuous-time reference dynamics and integration oracles.

This module owns the damped flows that the discrete optimizers approximate:
the ambient position/momentum system, its split-coordinate form, the three
summand vector fields, the exact flow of the damping/forcing piece, a fixed
step fourth-order reference integrator, the Lyapunov energy, and a
convergence-order estimator.  Nothing here is used inside the optimizers;
it exists so the optimizers can be validated against an independent path.
"""

from __future__ import annotations

import math
from typing import Callable, NamedTuple

import numpy as np
import scipy.linalg

from .manifold import MetricParams, gradient_terms, metric_inner
from .validation import NonFiniteError, check_matrix

__all__ = [
    "OdeStateXQ",
    "OdeStateXYV",
    "FrictionSpec",
    "xq_field",
    "xyv_field",
    "split_field",
    "phi2_exact",
    "reference_integrate",
    "energy",
    "estimate_order",
    "learning_rate_and_momentum",
    "momentum_scale",
]


class OdeStateXQ(NamedTuple):
    """Position X and ambient momentum Q = dX/dt."""

    X: np.ndarray
    Q: np.ndarray


class OdeStateXYV(NamedTuple):
    """Position X with momentum in split coordinates (Y skew, V perpendicular)."""

    X: np.ndarray
    Y: np.ndarray
    V: np.ndarray


class FrictionSpec(NamedTuple):
    """Constant friction coefficient; must be positive for dissipation."""

    gamma: float

    def validate(self) -> "FrictionSpec":
        if not self.gamma > 0:
            raise ValueError(f"friction coefficient must be positive, got {self.gamma}")
        return self


def learning_rate_and_momentum(gamma: float, h: float) -> tuple[float, float]:
    """Map a step size h at friction gamma to the (eta, mu) parameters of the
    discrete optimizers:  mu = exp(-gamma h),  eta = h (1 - mu) / gamma.

    Shared by every optimizer-versus-flow test so both sides agree on one
    definition of the bridge.
    """
    mu = math.exp(-gamma * h)
    return h * (1.0 - mu) / gamma, mu


def momentum_scale(gamma: float, h: float) -> float:
    """Scale s relating split momentum to optimizer state: Z = Y/s, U = V/s."""
    return (1.0 - math.exp(-gamma * h)) / gamma


def xq_field(
    s: OdeStateXQ, g: np.ndarray, gamma: float, mp: MetricParams
) -> OdeStateXQ:
    """Right-hand side of the damped flow in ambient (X, Q) coordinates.

    dX = Q
    dQ = -gamma Q - X Q^T Q - (3a/2)(I - X X^T) Q Q^T X
         - G + (1+b)/2 X X^T G + (1-b)/2 X G^T X
    """
    x, q = s
    g = check_matrix(g, "G", shape=x.shape)
    qtq = q.T @ q
    qtx = q.T @ x
    xtg = x.T @ g
    dq = -gamma * q - x @ qtq - g + (0.5 * (1.0 + mp.b)) * (x @ xtg) + (0.5 * (1.0 - mp.b)) * (
        x @ xtg.T
    )
    if mp.a != 0.0:
        qqtx = q @ qtx
        dq -= (1.5 * mp.a) * (qqtx - x @ (x.T @ qqtx))
    return OdeStateXQ(X=q, Q=dq)


def xyv_field(
    s: OdeStateXYV, g: np.ndarray, gamma: float, mp: MetricParams
) -> OdeStateXYV:
    """Right-hand side of the damped flow in split (X, Y, V) coordinates.

    dX = X Y + V
    dY = -gamma Y - (1-b)/2 (X^T G - G^T X)
    dV = -gamma V + (3a-2)/2 V Y - X V^T V - (I - X X^T) G
    """
    x, y, v = s
    f_skew, g_perp = gradient_terms(x, g, mp)
    dx = x @ y + v
    dy = -gamma * y - f_skew
    dv = -gamma * v + (0.5 * (3.0 * mp.a - 2.0)) * (v @ y) - x @ (v.T @ v) - g_perp
    return OdeStateXYV(X=dx, Y=dy, V=dv)


def split_field(
    k: int, s: OdeStateXYV, g: np.ndarray, gamma: float, mp: MetricParams
) -> OdeStateXYV:
    """One of the three summand fields whose sum is :func:`xyv_field`.

    k=1 rotates X and damps/forces Y; k=2 damps/forces V; k=3 translates X
    along V and removes the normal component growth of V.
    """
    x, y, v = s
    f_skew, g_perp = gradient_terms(x, g, mp)
    zero_x = np.zeros_like(x)
    zero_y = np.zeros_like(y)
    if k == 1:
        return OdeStateXYV(X=x @ y, Y=-gamma * y - f_skew, V=zero_x)
    if k == 2:
        dv = -gamma * v + (0.5 * (3.0 * mp.a - 2.0)) * (v @ y) - g_perp
        return OdeStateXYV(X=zero_x, Y=zero_y, V=dv)
    if k == 3:
        return OdeStateXYV(X=v, Y=zero_y, V=-x @ (v.T @ v))
    raise ValueError(f"split index must be 1, 2 or 3, got {k}")


def phi2_exact(
    s: OdeStateXYV, g: np.ndarray, gamma: float, mp: MetricParams, t: float
) -> OdeStateXYV:
    """Closed-form time-t flow of the k=2 split field.

    X and Y are constant along this flow.  With M = gamma I - (3a-2)/2 Y
    (Y taken from the initial condition; it does not move under k=2) and
    g_perp the perpendicular gradient block at the initial X,

        V(t) = V(0) expm(-M t) - g_perp M^{-1} (I - expm(-M t)).
    """
    x, y, v = s
    _, g_perp = gradient_terms(x, g, mp)
    m_mat = gamma * np.eye(y.shape[0]) - (0.5 * (3.0 * mp.a - 2.0)) * y
    decay = scipy.linalg.expm(-t * m_mat)
    try:
        forced = np.linalg.solve(m_mat.T, (np.eye(y.shape[0]) - decay).T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("damping matrix of the momentum flow is singular") from exc
    return OdeStateXYV(X=x.copy(), Y=y.copy(), V=v @ decay - g_perp @ forced)


def _axpy(s, ds, c: float):
    """s + c * ds over a state that is an ndarray or a (named) tuple of them."""
    if isinstance(s, np.ndarray):
        return s + c * ds
    return type(s)(*(si + c * dsi for si, dsi in zip(s, ds)))


def _rk4_step(field: Callable, s, dt: float):
    k1 = field(s)
    k2 = field(_axpy(s, k1, 0.5 * dt))
    k3 = field(_axpy(s, k2, 0.5 * dt))
    k4 = field(_axpy(s, k3, dt))
    out = _axpy(s, k1, dt / 6.0)
    out = _axpy(out, k2, dt / 3.0)
    out = _axpy(out, k3, dt / 3.0)
    return _axpy(out, k4, dt / 6.0)


def _state_finite(s) -> bool:
    if isinstance(s, np.ndarray):
        return bool(np.isfinite(s).all())
    return all(np.isfinite(si).all() for si in s)


def reference_integrate(field: Callable, s0, t_final: float, dt: float):
    """Classical fourth-order one-step integration with fixed dt.

    `field` maps a state to its derivative, where a state is an ndarray or a
    tuple of ndarrays.  Test oracle only; never called by the optimizers.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if t_final < 0:
        raise ValueError("t_final must be nonnegative")
    n_steps = int(t_final / dt + 1e-9)
    remainder = t_final - n_steps * dt
    s = s0
    for _ in range(n_steps):
        s = _rk4_step(field, s, dt)
    if remainder > 1e-12:
        s = _rk4_step(field, s, remainder)
    if not _state_finite(s):
        raise NonFiniteError("reference integration produced non-finite state")
    return s


def energy(s: OdeStateXQ, f_value: float, mp: MetricParams) -> float:
    """Lyapunov energy: half the metric norm of the momentum plus the
    objective value supplied by the caller.  Nonincreasing along the flow."""
    return 0.5 * metric_inner(s.X, s.Q, s.Q, mp) + f_value


def _state_dist(a, b) -> float:
    if isinstance(a, np.ndarray):
        return float(np.linalg.norm(a - b))
    return math.sqrt(sum(float(np.linalg.norm(ai - bi)) ** 2 for ai, bi in zip(a, b)))


def estimate_order(
    step_map: Callable,
    field: Callable,
    s0,
    h_list,
    t_final: float = 1.0,
    dt_ref: float = 1e-4,
) -> float:
    """Least-squares slope of log(global error) against log(step size).

    `step_map(state, h)` advances one step of the scheme under test; the
    reference solution comes from :func:`reference_integrate` on `field`
    with a dt small enough that its own error is negligible.
    """
    h_list = list(h_list)
    if len(h_list) < 3:
        raise ValueError("need at least three step sizes to fit an order")
    reference = reference_integrate(field, s0, t_final, dt_ref)
    errors = []
    for h in h_list:
        n_steps = round(t_final / h)
        if abs(n_steps * h - t_final) > 1e-9 * t_final:
            raise ValueError(f"step size {h} does not divide the horizon {t_final}")
        s = s0
        for _ in range(n_steps):
            s = step_map(s, h)
        errors.append(_state_dist(s, reference))
    errors = np.asarray(errors)
    if errors.max() < 1e-14:
        raise ValueError("errors underflow the reference accuracy; order fit is degenerate")
    slope, _ = np.polyfit(np.log(np.asarray(h_list, dtype=float)), np.log(errors), 1)
    return float(slope)
