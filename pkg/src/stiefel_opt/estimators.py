"""Scikit-learn style estimators wrapping the two applications, so they
compose with pipelines, grid search, and `clone`.

The heavy lifting lives in :mod:`problems` and :mod:`optimizers`; these
classes only hold configuration, validate inputs, and expose fitted
attributes the sklearn way.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .linalg import make_rng, orthogonal_init
from .manifold import MetricParams
from .optimizers import AdamHyper, SgdHyper, adam_state, run, sgd_state
from .problems import LevProblem, PrwProblem, lev_optimum, lev_value_grad, prw_solve
from .validation import check_matrix, check_symmetric, check_weights

__all__ = ["LeadingEigenSubspace", "ProjectionRobustWasserstein"]


def _manifold_hyper(optimizer, eta, momentum, beta1, beta2, eps, metric_a):
    metric = MetricParams(a=metric_a)
    if optimizer == "sgd":
        return SgdHyper(eta=eta, mu=momentum, metric=metric)
    if optimizer == "adam":
        return AdamHyper(eta=eta, beta1=beta1, beta2=beta2, eps=eps, metric=metric)
    raise ValueError(f"optimizer must be 'sgd' or 'adam', got {optimizer!r}")


class LeadingEigenSubspace(TransformerMixin, BaseEstimator):
    """Dominant invariant subspace of a symmetric matrix by manifold descent.

    fit(A) maximizes Tr(X^T A X) over n-by-k frames with orthonormal columns.

    Parameters
    ----------
    n_components : subspace dimension k.
    optimizer : "sgd" (momentum) or "adam" (adaptive).
    eta, momentum : learning rate and momentum for "sgd".
    beta1, beta2, eps : moment parameters for "adam".
    metric_a : metric family parameter (0 Euclidean, 0.5 canonical).
    n_iter : number of optimizer iterations.
    random_state : seed for the orthonormal initialization.

    Attributes
    ----------
    components_ : (n_components, n) array, the fitted frame transposed.
    eigenvalue_sum_ : achieved Tr(X^T A X).
    optimality_gap_ : dense-eigendecomposition top-k sum minus the achieved
        value (nonnegative up to round-off).
    trace_ : per-iteration TraceRow records.
    """

    def __init__(
        self,
        n_components: int = 2,
        optimizer: str = "sgd",
        eta: float = 0.1,
        momentum: float = 0.9,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        metric_a: float = 0.5,
        n_iter: int = 1000,
        trace_every: int = 100,
        random_state: int = 0,
    ):
        self.n_components = n_components
        self.optimizer = optimizer
        self.eta = eta
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.metric_a = metric_a
        self.n_iter = n_iter
        self.trace_every = trace_every
        self.random_state = random_state

    def fit(self, X, y=None):
        """Fit on a symmetric matrix (the operator itself, not samples)."""
        a = check_symmetric(X, "A", tol=1e-10)
        problem = LevProblem(A=0.5 * (a + a.T), m=self.n_components)
        hyper = _manifold_hyper(
            self.optimizer, self.eta, self.momentum, self.beta1, self.beta2, self.eps, self.metric_a
        )
        x0 = orthogonal_init(a.shape[0], self.n_components, make_rng(self.random_state))
        state = sgd_state(x0) if self.optimizer == "sgd" else adam_state(x0)

        def grad(x):
            return lev_value_grad(problem, x)[1]

        def objective(x):
            return lev_value_grad(problem, x)[0]

        state, trace = run(
            self.optimizer, state, grad, hyper, self.n_iter, max(1, self.trace_every), objective
        )
        self.subspace_ = state.X
        self.components_ = state.X.T
        self.eigenvalue_sum_ = -trace[-1].objective
        self.optimality_gap_ = -lev_optimum(problem) - self.eigenvalue_sum_
        self.trace_ = trace
        return self

    def transform(self, X):
        """Project row vectors onto the fitted subspace coordinates."""
        if not hasattr(self, "subspace_"):
            raise NotFittedError("call fit before transform")
        X = check_matrix(X, "X")
        if X.shape[1] != self.subspace_.shape[0]:
            raise ValueError(
                f"expected {self.subspace_.shape[0]} features, got {X.shape[1]}"
            )
        return X @ self.subspace_

    def score(self, X, y=None):
        """Achieved trace value (larger is better)."""
        if not hasattr(self, "subspace_"):
            raise NotFittedError("call fit before score")
        return float(self.eigenvalue_sum_)


class ProjectionRobustWasserstein(TransformerMixin, BaseEstimator):
    """Projection-robust entropic transport distance between two point clouds.

    fit(X, Y) alternates a full inner transport solve with one manifold
    ascent step on the projection frame, for a fixed number of outer
    iterations.

    Attributes
    ----------
    projection_ : (d, n_components) frame maximizing the projected cost.
    value_ : transport term at the fitted pair (entropic term excluded).
    trace_ : rows (outer_iter, value, marginal_residual, sinkhorn_iters).
    """

    def __init__(
        self,
        n_components: int = 2,
        reg: float = 0.5,
        optimizer: str = "sgd",
        eta: float = 1e-3,
        momentum: float = 0.5,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        metric_a: float = 0.5,
        n_outer: int = 50,
        inner_steps: int = 1,
        sinkhorn_tol: float = 1e-6,
        sinkhorn_max_iter: int = 1000,
        random_state: int = 0,
    ):
        self.n_components = n_components
        self.reg = reg
        self.optimizer = optimizer
        self.eta = eta
        self.momentum = momentum
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.metric_a = metric_a
        self.n_outer = n_outer
        self.inner_steps = inner_steps
        self.sinkhorn_tol = sinkhorn_tol
        self.sinkhorn_max_iter = sinkhorn_max_iter
        self.random_state = random_state

    def fit(self, X, Y, r=None, c=None):
        """Fit from two point clouds (one point per row); weights default to
        uniform."""
        xs = check_matrix(X, "X")
        ys = check_matrix(Y, "Y")
        r = np.full(xs.shape[0], 1.0 / xs.shape[0]) if r is None else check_weights(r, xs.shape[0], "r")
        c = np.full(ys.shape[0], 1.0 / ys.shape[0]) if c is None else check_weights(c, ys.shape[0], "c")
        problem = PrwProblem(xs=xs, ys=ys, r=r, c=c, k=self.n_components, reg=self.reg)
        hyper = _manifold_hyper(
            self.optimizer, self.eta, self.momentum, self.beta1, self.beta2, self.eps, self.metric_a
        )
        u, value, trace = prw_solve(
            problem,
            hyper,
            n_outer=self.n_outer,
            sinkhorn_tol=self.sinkhorn_tol,
            sinkhorn_max_iter=self.sinkhorn_max_iter,
            inner_steps=self.inner_steps,
            rng_or_seed=self.random_state,
        )
        self.projection_ = u
        self.value_ = value
        self.trace_ = trace
        return self

    def transform(self, X):
        """Project points into the fitted low-dimensional frame."""
        if not hasattr(self, "projection_"):
            raise NotFittedError("call fit before transform")
        X = check_matrix(X, "X")
        if X.shape[1] != self.projection_.shape[0]:
            raise ValueError(
                f"expected {self.projection_.shape[0]} features, got {X.shape[1]}"
            )
        return X @ self.projection_
