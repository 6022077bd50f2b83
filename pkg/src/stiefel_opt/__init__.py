"""Structure-preserving optimization on matrices with orthonormal columns.

Momentum SGD and Adam variants whose iterates keep the position exactly on
the constraint set and the momentum exactly in its tangent space, the damped
continuous flows they discretize (used as correctness oracles), and two
applications: dominant-eigensubspace extraction and projection-robust
entropic transport.
"""

from . import dynamics, linalg, manifold, optimizers, problems, validation
from .estimators import LeadingEigenSubspace, ProjectionRobustWasserstein
from .linalg import (
    cayley,
    expm_skew,
    inv_sqrt_newton_schulz,
    make_rng,
    orthogonal_init,
    read_matrix,
    skew_part,
    write_matrix,
)
from .manifold import (
    MetricParams,
    TangentYV,
    compose_tangent,
    decompose_tangent,
    gradient_terms,
    metric_inner,
    structure_errors,
)
from .optimizers import (
    AdamHyper,
    AdamState,
    SgdHyper,
    SgdState,
    adam_state,
    adam_step,
    momentumless_cayley_step,
    run,
    run_mixed,
    sgd_state,
    sgd_step,
    son_adam_step,
    son_sgd_step,
)
from .problems import (
    LevProblem,
    PrwProblem,
    finite_diff_grad,
    lev_generate,
    lev_value_grad,
    prw_solve,
    prw_two_gaussian,
    sinkhorn,
)

__version__ = "0.1.0"
