"""Shared numerical kernels: ODE integration with event localization, damped
Newton, CARE, dense active-set QP, and an augmented-Lagrangian NLP solver."""

from gaitlab.numerics.ode import IntegrationResult, integrate
from gaitlab.numerics.newton import NewtonResult, newton_fd
from gaitlab.numerics.care import solve_care
from gaitlab.numerics.qp import QpProblem, QpSolution, QpInfeasibleError, solve_qp
from gaitlab.numerics.nlp import NlpProblem, NlpSolution, NlpError, solve_nlp

__all__ = [
    "IntegrationResult",
    "integrate",
    "NewtonResult",
    "newton_fd",
    "solve_care",
    "QpProblem",
    "QpSolution",
    "QpInfeasibleError",
    "solve_qp",
    "NlpProblem",
    "NlpSolution",
    "NlpError",
    "solve_nlp",
]
