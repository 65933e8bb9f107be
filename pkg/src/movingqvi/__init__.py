"""Moving-set quasi-variational inequalities: solvers, sensitivity and control."""

from .control import (
    ControlProblem,
    check_b_stationarity,
    check_strong_stationarity,
    recover_multipliers,
    solve_control_descent,
)
from .exceptions import (
    ConditionViolated,
    MaxIterations,
    NonCoercive,
    NonContractive,
    QviError,
)
from .operators import (
    Certificate,
    ComposedOperator,
    LinearMap,
    LinearOperator,
    NonlinearMap,
    NonlinearOperator,
    ScalarMap,
    ZeroMap,
    check_uniqueness,
    composed_constants,
    estimate_constants,
    invert_i_minus_phi,
    jacobian_B,
    thresholds,
)
from .qvi_solver import QviProblem, solve_qvi, solve_qvi_localized, solve_qvi_sequential
from .sensitivity import directional_derivative, fd_check, linearize, verify_linearized_qvi
from .sets import Ball, Box, Span, WholeSpace, critical_cone, project
from .space import Space, stiffness_space
from .vi_solver import ViProblem, solve_vi

__version__ = "0.1.0"
