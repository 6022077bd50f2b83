"""Structure-preserving optimizers with momentum on the orthonormal-frame
manifold, plus the square-frame (rotation-group) specializations, a
momentumless Cayley-retraction baseline, and the run driver that produces
iteration traces.

Each iteration composes three maps: a momentum update for the perpendicular
block (phi2), a rotation update for the position and skew block (phi1), and a
translation plus polar retraction that restores all constraints (phi3).  The
maps are exposed individually so their per-map guarantees can be tested; the
steps compose them in the order phi3 o phi1 o phi2 by default, with both
gradient blocks evaluated once at the incoming position.

State layout is (X, Z, U): position with orthonormal columns, skew rotational
momentum, and perpendicular momentum, in the learning-rate-rescaled
convention (Z and U absorb the step-size factor so that eta and mu play the
roles familiar from momentum SGD).
"""

from __future__ import annotations

import io
import math
import time
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, NamedTuple, Sequence

import numpy as np
import scipy.linalg

from .linalg import (
    cached_eye,
    expm_skew,
    gram_product,
    inv_sqrt_retraction,
    right_multiply,
    skew_part,
    read_matrix,
    write_matrix,
)
from .manifold import MetricParams, gradient_terms, perp_project, structure_errors
from .validation import NonFiniteError, check_matrix, check_skew, check_stiefel

__all__ = [
    "Phi1Mode",
    "Phi2Mode",
    "SgdHyper",
    "AdamHyper",
    "SgdState",
    "AdamState",
    "SonSgdState",
    "SonAdamState",
    "CayleyGdState",
    "sgd_state",
    "adam_state",
    "son_sgd_state",
    "son_adam_state",
    "phi1_step",
    "phi2_step",
    "phi3_step",
    "sgd_step",
    "adam_step",
    "son_sgd_step",
    "son_adam_step",
    "momentumless_cayley_step",
    "euclidean_sgd_step",
    "euclidean_adam_step",
    "EuclideanSgdState",
    "EuclideanAdamState",
    "run",
    "run_mixed",
    "TraceRow",
    "save_state",
    "load_state",
]


class Phi1Mode(Enum):
    """How the position is rotated along the skew momentum."""

    FORWARD_EULER = "euler"
    CAYLEY = "cayley"
    EXPM = "expm"


class Phi2Mode(Enum):
    """How the perpendicular momentum damping is discretized."""

    FORWARD_EULER = "euler"
    CAYLEY = "cayley"
    EXACT = "exact"


def _coerce(mode, enum_cls):
    return mode if isinstance(mode, enum_cls) else enum_cls(str(mode))


@dataclass(frozen=True)
class SgdHyper:
    """Hyperparameters of the momentum step.

    eta > 0 is the learning rate and mu in [0, 1) the momentum parameter.
    `use_updated_z` switches the position rotation in forward-Euler mode from
    the pre-update momentum (the default) to the freshly updated one; the two
    differ at second order in the step size.  `apply_order` exists for
    integrator-order experiments; the default (2, 1, 3) is the composition
    with full structure preservation.
    """

    eta: float
    mu: float = 0.9
    metric: MetricParams = field(default_factory=MetricParams)
    phi1_mode: Phi1Mode = Phi1Mode.FORWARD_EULER
    phi2_mode: Phi2Mode = Phi2Mode.FORWARD_EULER
    use_updated_z: bool = False
    apply_order: tuple[int, int, int] = (2, 1, 3)
    skew_scrub_every: int = 1000

    def __post_init__(self):
        object.__setattr__(self, "phi1_mode", _coerce(self.phi1_mode, Phi1Mode))
        object.__setattr__(self, "phi2_mode", _coerce(self.phi2_mode, Phi2Mode))
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not 0.0 <= self.mu < 1.0:
            raise ValueError(f"mu must lie in [0, 1), got {self.mu}")
        if sorted(self.apply_order) != [1, 2, 3]:
            raise ValueError(f"apply_order must be a permutation of (1, 2, 3), got {self.apply_order}")
        if self.skew_scrub_every < 0:
            raise ValueError("skew_scrub_every must be >= 0 (0 disables)")

    @property
    def drag_coeff(self) -> float:
        """Coefficient (3a - 2)/2 of the momentum-rotation drag term."""
        return 0.5 * (3.0 * self.metric.a - 2.0)


@dataclass(frozen=True)
class AdamHyper:
    """Hyperparameters of the adaptive step (defaults are the recommended
    eta = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8)."""

    eta: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    metric: MetricParams = field(default_factory=MetricParams)
    skew_scrub_every: int = 1000

    def __post_init__(self):
        if not self.eta > 0:
            raise ValueError(f"eta must be positive, got {self.eta}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.skew_scrub_every < 0:
            raise ValueError("skew_scrub_every must be >= 0 (0 disables)")

    @property
    def drag_coeff(self) -> float:
        return 0.5 * (3.0 * self.metric.a - 2.0)


@dataclass(frozen=True)
class SgdState:
    """Momentum-SGD state: position X, skew momentum Z, perpendicular momentum U."""

    X: np.ndarray
    Z: np.ndarray
    U: np.ndarray


@dataclass(frozen=True)
class AdamState:
    """Adam state: SGD state plus elementwise second moments of the two
    gradient blocks (p for the skew block, q for the perpendicular block)."""

    X: np.ndarray
    Z: np.ndarray
    U: np.ndarray
    p: np.ndarray
    q: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class SonSgdState:
    """Square-frame momentum state: orthogonal X and skew momentum Y."""

    X: np.ndarray
    Y: np.ndarray


@dataclass(frozen=True)
class SonAdamState:
    X: np.ndarray
    Y: np.ndarray
    p: np.ndarray
    step_index: int = 0


@dataclass(frozen=True)
class CayleyGdState:
    """Momentumless baseline carries only the position."""

    X: np.ndarray


def sgd_state(x, z=None, u=None, check: bool = True) -> SgdState:
    """Build a valid initial state; momenta default to zero.

    With check=True (the default) the position must have orthonormal columns
    to 1e-8, Z must be skew and U perpendicular.  check=False admits raw
    matrices; one step of the optimizer restores feasibility.
    """
    x = check_stiefel(x, "X", tol=1e-8) if check else check_matrix(x, "X")
    m = x.shape[1]
    z = np.zeros((m, m)) if z is None else check_matrix(z, "Z", shape=(m, m))
    u = np.zeros_like(x) if u is None else check_matrix(u, "U", shape=x.shape)
    if check:
        feas, skew, perp = structure_errors(x, z, u)
        if skew > 1e-10:
            raise ValueError(f"Z must be skew-symmetric (deviation {skew:.3e})")
        if perp > 1e-8:
            raise ValueError(f"U must be perpendicular to X (deviation {perp:.3e})")
    return SgdState(X=x, Z=z, U=u)


def adam_state(x, z=None, u=None, p=None, q=None, step_index: int = 0, check: bool = True) -> AdamState:
    base = sgd_state(x, z, u, check=check)
    m = base.X.shape[1]
    p = np.zeros((m, m)) if p is None else check_matrix(p, "p", shape=(m, m))
    q = np.zeros_like(base.X) if q is None else check_matrix(q, "q", shape=base.X.shape)
    if check:
        if np.linalg.norm(p - p.T) > 1e-12:
            raise ValueError("p must be symmetric")
        if (p < 0).any() or (q < 0).any():
            raise ValueError("second moments must be entrywise nonnegative")
    return AdamState(X=base.X, Z=base.Z, U=base.U, p=p, q=q, step_index=step_index)


def son_sgd_state(x, y=None, check: bool = True) -> SonSgdState:
    x = check_stiefel(x, "X", tol=1e-8) if check else check_matrix(x, "X")
    if x.shape[0] != x.shape[1]:
        raise ValueError("square-frame optimizers need n = m")
    y = np.zeros_like(x) if y is None else check_skew(y, "Y", tol=1e-10)
    return SonSgdState(X=x, Y=y)


def son_adam_state(x, y=None, p=None, step_index: int = 0, check: bool = True) -> SonAdamState:
    base = son_sgd_state(x, y, check=check)
    p = np.zeros_like(base.X) if p is None else check_matrix(p, "p", shape=base.X.shape)
    return SonAdamState(X=base.X, Y=base.Y, p=p, step_index=step_index)


# -- the three split maps ----------------------------------------------------

def _polar_retract(x_mid: np.ndarray) -> np.ndarray:
    """Pull a full-rank matrix back to orthonormal columns via the inverse
    square root of its Gram matrix; skips the multiplication when the Gram
    matrix is already within tolerance of the identity."""
    a = gram_product(x_mid, x_mid)
    inv_root = inv_sqrt_retraction(a)
    if inv_root is cached_eye(a.shape[0]):
        return x_mid
    return right_multiply(x_mid, inv_root)


def phi2_step(state: SgdState, g_perp: np.ndarray, hyper: SgdHyper) -> SgdState:
    """Damp the perpendicular momentum and kick it with the gradient block.

    Only U changes.  The drag term rotates U along the skew momentum with
    coefficient (3a-2)/2; the three discretizations agree to second order in
    the step size.
    """
    x, z, u = state.X, state.Z, state.U
    mode = hyper.phi2_mode
    eye = cached_eye(z.shape[0])
    if mode is Phi2Mode.FORWARD_EULER:
        damp = hyper.mu * eye + (hyper.drag_coeff * hyper.eta) * z
        u_new = right_multiply(u, damp) - g_perp
        return SgdState(X=x, Z=z, U=u_new)
    if hyper.mu <= 0.0:
        raise ValueError("cayley/exact momentum damping requires mu > 0")
    w = math.log(hyper.mu) * eye + (hyper.drag_coeff * hyper.eta) * z
    if mode is Phi2Mode.CAYLEY:
        damp = np.linalg.solve(eye - 0.5 * w, eye + 0.5 * w)
        u_new = right_multiply(u, damp) - g_perp
        return SgdState(X=x, Z=z, U=u_new)
    # exact flow of the damping equation, in rescaled variables
    decay = scipy.linalg.expm(w)
    try:
        forced = np.linalg.solve(w, eye - decay)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular damping matrix in exact momentum flow") from exc
    h_over_s = -math.log(hyper.mu) / (1.0 - hyper.mu)
    u_new = right_multiply(u, decay) + h_over_s * right_multiply(g_perp, forced)
    return SgdState(X=x, Z=z, U=u_new)


def phi1_step(state: SgdState, f_skew: np.ndarray, hyper: SgdHyper) -> SgdState:
    """Update the skew momentum and rotate the position along it.

    Z always becomes mu Z - f_skew.  The position update depends on the mode:
    forward Euler moves along the pre-update momentum (or the updated one
    with `use_updated_z`); the Cayley and exponential modes rotate by an
    orthogonal factor built from the updated momentum and therefore preserve
    feasibility exactly on their own.
    """
    x, z, u = state.X, state.Z, state.U
    z_new = hyper.mu * z - f_skew
    mode = hyper.phi1_mode
    eye = cached_eye(z.shape[0])
    if mode is Phi1Mode.FORWARD_EULER:
        z_used = z_new if hyper.use_updated_z else z
        x_new = right_multiply(x, eye + hyper.eta * z_used)
    elif mode is Phi1Mode.CAYLEY:
        half = (0.5 * hyper.eta) * z_new
        x_new = right_multiply(x, np.linalg.solve(eye - half, eye + half))
    else:
        x_new = right_multiply(x, expm_skew(hyper.eta * z_new))
    return SgdState(X=x_new, Z=z_new, U=u)


def phi3_step(state: SgdState, hyper: SgdHyper) -> SgdState:
    """Translate the position along U, retract it back to orthonormal columns
    through the inverse square root of its Gram matrix, and correct U.

    The translation uses X^T X (not the identity) and the momentum correction
    uses the pre-retraction position; both choices make the map restore the
    perpendicularity constraint even from infeasible inputs.
    """
    x, z, u = state.X, state.Z, state.U
    eta = hyper.eta
    gram = gram_product(x, x)
    x_mid = x + right_multiply(u, eta * gram)
    x_new = _polar_retract(x_mid)
    u_new = u - right_multiply(x, eta * gram_product(u, u))
    return SgdState(X=x_new, Z=z, U=u_new)


def _sgd_apply(state: SgdState, f_skew: np.ndarray, g_perp: np.ndarray, hyper: SgdHyper) -> SgdState:
    if (
        hyper.phi1_mode is Phi1Mode.FORWARD_EULER
        and hyper.phi2_mode is Phi2Mode.FORWARD_EULER
        and not hyper.use_updated_z
        and hyper.apply_order == (2, 1, 3)
    ):
        return _sgd_apply_default(state, f_skew, g_perp, hyper)
    for k in hyper.apply_order:
        if k == 2:
            state = phi2_step(state, g_perp, hyper)
        elif k == 1:
            state = phi1_step(state, f_skew, hyper)
        else:
            state = phi3_step(state, hyper)
    return state


def _sgd_apply_default(
    state: SgdState, f_skew: np.ndarray, g_perp: np.ndarray, hyper: SgdHyper
) -> SgdState:
    """Fused default composition (forward-Euler modes, order 2-1-3).

    Kept operation-for-operation identical to
    phi3_step(phi1_step(phi2_step(...))) so results agree bitwise; the fusion
    only removes interpreter glue from the benchmark-critical loop.
    """
    x, z, u = state.X, state.Z, state.U
    eta, mu = hyper.eta, hyper.mu
    eye = cached_eye(z.shape[0])
    u = right_multiply(u, mu * eye + (hyper.drag_coeff * eta) * z) - g_perp
    z_new = mu * z - f_skew
    x = right_multiply(x, eye + eta * z)
    x_mid = x + right_multiply(u, eta * gram_product(x, x))
    x_new = _polar_retract(x_mid)
    u_new = u - right_multiply(x, eta * gram_product(u, u))
    return SgdState(X=x_new, Z=z_new, U=u_new)


def sgd_step(state: SgdState, grad_fn: Callable[[np.ndarray], np.ndarray], hyper: SgdHyper) -> SgdState:
    """One momentum step.  The gradient oracle is called exactly once, at the
    incoming position; both gradient blocks are derived from that call."""
    g = grad_fn(state.X)
    f_skew, g_perp = gradient_terms(state.X, g, hyper.metric)
    return _sgd_apply(state, f_skew, g_perp, hyper)


def adam_step(state: AdamState, grad_fn: Callable[[np.ndarray], np.ndarray], hyper: AdamHyper) -> AdamState:
    """One adaptive step.

    Second moments of the two gradient blocks are tracked elementwise; the
    skew block stays skew under the elementwise rescaling because p is
    symmetric, while the perpendicular block is re-projected with the exact
    Gram inverse because the mid-step position is not feasible.  Only the
    second moment carries a bias factor sqrt(1 - beta2^(i+1)).
    """
    x, z, u = state.X, state.Z, state.U
    g = grad_fn(x)
    f_skew, g_perp = gradient_terms(x, g, hyper.metric)
    b1, b2, eta, eps = hyper.beta1, hyper.beta2, hyper.eta, hyper.eps
    p_new = b2 * state.p + (1.0 - b2) * np.square(f_skew)
    q_new = b2 * state.q + (1.0 - b2) * np.square(g_perp)
    bias = math.sqrt(1.0 - b2 ** (state.step_index + 1))
    u_half = b1 * u - right_multiply(u, (hyper.drag_coeff * eta) * z) - (1.0 - b1) * g_perp
    z_new = b1 * z - (1.0 - b1) * f_skew
    x_half = x + (eta * bias) * right_multiply(x, z_new / (np.sqrt(p_new) + eps))
    u_tilde = bias * perp_project(x_half, u_half / (np.sqrt(q_new) + eps))
    x_mid = x_half + right_multiply(u_tilde, eta * gram_product(x_half, x_half))
    x_new = _polar_retract(x_mid)
    u_new = u_half - right_multiply(x_half, eta * gram_product(u_tilde, u_half))
    if not np.isfinite(x_new).all():
        raise NonFiniteError("adaptive step overflowed")
    return AdamState(X=x_new, Z=z_new, U=u_new, p=p_new, q=q_new, step_index=state.step_index + 1)


def son_sgd_step(state: SonSgdState, grad_fn, hyper: SgdHyper) -> SonSgdState:
    """Momentum step on square orthogonal frames: the momentum is a single
    skew matrix, the position moves by its exponential, and a polar cleanup
    guards against arithmetic drift (an exact identity in real arithmetic)."""
    x, y = state.X, state.Y
    g = grad_fn(x)
    f_skew, _ = gradient_terms(x, g, hyper.metric)
    y_new = hyper.mu * y - f_skew
    x_mid = right_multiply(x, expm_skew(hyper.eta * y_new))
    x_new = _polar_retract(x_mid)
    return SonSgdState(X=x_new, Y=y_new)


def son_adam_step(state: SonAdamState, grad_fn, hyper: AdamHyper) -> SonAdamState:
    """Adaptive step on square orthogonal frames.

    The elementwise rescaling Y / (sqrt(p) + eps) is exactly skew whenever p
    is symmetric and Y skew; the exponential asserts that.
    """
    x, y = state.X, state.Y
    g = grad_fn(x)
    f_skew, _ = gradient_terms(x, g, hyper.metric)
    b1, b2 = hyper.beta1, hyper.beta2
    p_new = b2 * state.p + (1.0 - b2) * np.square(f_skew)
    y_new = b1 * y - (1.0 - b1) * f_skew
    bias = math.sqrt(1.0 - b2 ** (state.step_index + 1))
    w = (hyper.eta * bias) * (y_new / (np.sqrt(p_new) + hyper.eps))
    x_mid = right_multiply(x, expm_skew(w))
    x_new = _polar_retract(x_mid)
    return SonAdamState(X=x_new, Y=y_new, p=p_new, step_index=state.step_index + 1)


def momentumless_cayley_step(x: np.ndarray, g: np.ndarray, eta: float) -> np.ndarray:
    """Momentumless feasible descent step via a Cayley rotation of the
    projected gradient, computed in the low-rank form so the cost stays
    O(n m^2): only a 2m-by-2m system is solved."""
    x = check_matrix(x, "X")
    g = check_matrix(g, "G", shape=x.shape)
    m = x.shape[1]
    left = np.hstack([g, x])
    right = np.hstack([x, -g])
    k = right.T @ left
    rhs = right.T @ x
    coef = np.linalg.solve(np.eye(2 * m) + (0.5 * eta) * k, rhs)
    return x - eta * (left @ coef)


# -- Euclidean companions for mixed parameter groups -------------------------

@dataclass(frozen=True)
class EuclideanSgdState:
    """Heavy-ball state for an unconstrained parameter block."""

    w: np.ndarray
    z: np.ndarray


@dataclass(frozen=True)
class EuclideanAdamState:
    w: np.ndarray
    z: np.ndarray
    p: np.ndarray
    step_index: int = 0


def euclidean_sgd_state(w) -> EuclideanSgdState:
    w = np.ascontiguousarray(w, dtype=np.float64)
    return EuclideanSgdState(w=w, z=np.zeros_like(w))


def euclidean_adam_state(w) -> EuclideanAdamState:
    w = np.ascontiguousarray(w, dtype=np.float64)
    return EuclideanAdamState(w=w, z=np.zeros_like(w), p=np.zeros_like(w))


def euclidean_sgd_step(state: EuclideanSgdState, g: np.ndarray, hyper: SgdHyper) -> EuclideanSgdState:
    """Flat-space counterpart of the manifold step (heavy ball with the same
    eta/mu convention), so one learning rate drives mixed parameter groups."""
    z_new = hyper.mu * state.z - g
    return EuclideanSgdState(w=state.w + hyper.eta * z_new, z=z_new)


def euclidean_adam_step(state: EuclideanAdamState, g: np.ndarray, hyper: AdamHyper) -> EuclideanAdamState:
    b1, b2 = hyper.beta1, hyper.beta2
    p_new = b2 * state.p + (1.0 - b2) * np.square(g)
    z_new = b1 * state.z - (1.0 - b1) * g
    bias = math.sqrt(1.0 - b2 ** (state.step_index + 1))
    w_new = state.w + (hyper.eta * bias) * (z_new / (np.sqrt(p_new) + hyper.eps))
    return EuclideanAdamState(w=w_new, z=z_new, p=p_new, step_index=state.step_index + 1)


# -- run driver ---------------------------------------------------------------

class TraceRow(NamedTuple):
    """Per-iteration record: objective, the three structure residuals, and
    cumulative wall time in nanoseconds."""

    iteration: int
    objective: float
    feas: float
    skew: float
    perp: float
    wall_ns: int


_STEP_FNS = {
    "sgd": sgd_step,
    "adam": adam_step,
    "son-sgd": son_sgd_step,
    "son-adam": son_adam_step,
}


def _structure_of(state) -> tuple[float, float, float]:
    if isinstance(state, (SgdState, AdamState)):
        return structure_errors(state.X, state.Z, state.U)
    if isinstance(state, (SonSgdState, SonAdamState)):
        m = state.X.shape[1]
        feas = float(np.linalg.norm(state.X.T @ state.X - np.eye(m)))
        return feas, float(np.linalg.norm(state.Y + state.Y.T)), 0.0
    if isinstance(state, CayleyGdState):
        m = state.X.shape[1]
        return float(np.linalg.norm(state.X.T @ state.X - np.eye(m))), 0.0, 0.0
    raise TypeError(f"unknown state type {type(state).__name__}")


def _scrub(state, kind: str):
    if kind in ("sgd", "adam"):
        return replace(state, Z=skew_part(state.Z))
    if kind in ("son-sgd", "son-adam"):
        return replace(state, Y=skew_part(state.Y))
    return state


def run(
    kind: str,
    state,
    grad_fn: Callable[[np.ndarray], np.ndarray],
    hyper,
    n_iters: int,
    trace_every: int = 1,
    objective: Callable[[np.ndarray], float] | None = None,
):
    """Drive an optimizer for `n_iters` iterations, recording a trace row at
    iteration 0, every `trace_every` iterations, and at the end.

    Aborts with NonFiniteError (carrying the partial trace in `.trace`) if
    the objective or the position stops being finite.  Purely deterministic
    for a deterministic oracle, except for the wall-clock column.
    """
    if kind not in _STEP_FNS and kind != "cayley-gd":
        raise ValueError(f"unknown optimizer kind {kind!r}")
    if trace_every < 1:
        raise ValueError("trace_every must be >= 1")
    has_objective = objective is not None
    objective_fn = objective if has_objective else (lambda x: float("nan"))
    scrub_every = getattr(hyper, "skew_scrub_every", 0)

    trace: list[TraceRow] = []
    t0 = time.perf_counter_ns()

    def record(i: int, st) -> None:
        feas, skew, perp = _structure_of(st)
        val = float(objective_fn(st.X))
        trace.append(TraceRow(i, val, feas, skew, perp, time.perf_counter_ns() - t0))
        if has_objective and not math.isfinite(val):
            err = NonFiniteError(f"objective became non-finite at iteration {i}")
            err.trace = trace
            raise err
        if not np.isfinite(st.X).all():
            err = NonFiniteError(f"state became non-finite at iteration {i}")
            err.trace = trace
            raise err

    record(0, state)
    for i in range(1, n_iters + 1):
        try:
            if kind == "cayley-gd":
                g = check_matrix(grad_fn(state.X), "gradient", shape=state.X.shape)
                state = CayleyGdState(X=momentumless_cayley_step(state.X, g, hyper.eta))
            else:
                state = _STEP_FNS[kind](state, grad_fn, hyper)
        except NonFiniteError as err:
            err.trace = trace
            raise
        if scrub_every and i % scrub_every == 0:
            state = _scrub(state, kind)
        if i % trace_every == 0 or i == n_iters:
            record(i, state)
    return state, trace


def run_mixed(
    states: Sequence,
    oracle: Callable[[list[np.ndarray]], tuple[float, list[np.ndarray]]],
    hyper,
    n_iters: int,
) -> tuple[list, list[float]]:
    """Drive a mixed list of parameter groups with one shared learning rate.

    Each state is a manifold state (SgdState/AdamState) or a Euclidean one
    (EuclideanSgdState/EuclideanAdamState).  The oracle maps the list of
    current parameter values to (objective, list of gradients); every group
    advances once per iteration.  Returns the final states and the objective
    history.
    """
    states = list(states)
    values: list[float] = []
    for _ in range(n_iters):
        params = [st.X if isinstance(st, (SgdState, AdamState)) else st.w for st in states]
        value, grads = oracle(params)
        values.append(float(value))
        new_states = []
        for st, g in zip(states, grads):
            g = np.asarray(g, dtype=np.float64)
            if isinstance(st, SgdState):
                f_skew, g_perp = gradient_terms(st.X, g, hyper.metric)
                new_states.append(_sgd_apply(st, f_skew, g_perp, hyper))
            elif isinstance(st, AdamState):
                new_states.append(adam_step(st, lambda _: g, hyper))
            elif isinstance(st, EuclideanSgdState):
                new_states.append(euclidean_sgd_step(st, g, hyper))
            elif isinstance(st, EuclideanAdamState):
                new_states.append(euclidean_adam_step(st, g, hyper))
            else:
                raise TypeError(f"unknown state type {type(st).__name__}")
        states = new_states
    return states, values


# -- state snapshots ----------------------------------------------------------

_BLOCKS = {
    SgdState: ("X", "Z", "U"),
    AdamState: ("X", "Z", "U", "p", "q", "step_index"),
    SonSgdState: ("X", "Y"),
    SonAdamState: ("X", "Y", "p", "step_index"),
    CayleyGdState: ("X",),
}


def save_state(path, state) -> None:
    """Serialize a state as named blocks in the matrix text format: each block
    is a line with its name followed by the matrix (or a bare integer for
    step_index)."""
    blocks = _BLOCKS.get(type(state))
    if blocks is None:
        raise TypeError(f"cannot serialize state of type {type(state).__name__}")
    with open(path, "w", encoding="ascii") as fh:
        for name in blocks:
            value = getattr(state, name)
            fh.write(f"{name}\n")
            if name == "step_index":
                fh.write(f"{int(value)}\n")
            else:
                write_matrix(fh, value)


def load_state(path, kind: str):
    """Load a snapshot written by :func:`save_state`.

    kind is one of sgd | adam | son-sgd | son-adam | cayley-gd.
    """
    cls = {
        "sgd": SgdState,
        "adam": AdamState,
        "son-sgd": SonSgdState,
        "son-adam": SonAdamState,
        "cayley-gd": CayleyGdState,
    }.get(kind)
    if cls is None:
        raise ValueError(f"unknown state kind {kind!r}")
    with open(path, "r", encoding="ascii") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    fields = {}
    pos = 0
    while pos < len(lines):
        name = lines[pos].strip()
        pos += 1
        if name == "step_index":
            fields[name] = int(lines[pos])
            pos += 1
            continue
        rows, _cols = (int(t) for t in lines[pos].split())
        block = "\n".join(lines[pos : pos + rows + 1])
        fields[name] = read_matrix(io.StringIO(block))
        pos += rows + 1
    expected = set(_BLOCKS[cls])
    if set(fields) != expected:
        raise ValueError(f"snapshot blocks {sorted(fields)} do not match {sorted(expected)}")
    return cls(**fields)
