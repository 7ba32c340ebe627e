"""Variance-reduced primal-dual fixed point solvers for ``min (1/n) sum f_i(x) + g(Bx)``."""

from .linops import Dense, Grad2D, Identity, LinearMap, Stacked, rho_max_bound, spectral_bound
from .metrics import Evaluator, ReferenceSolution, compute_reference, psnr, r_value
from .objective import BatchScheme, LeastSquares, Logistic, RidgeLogistic
from .prox import L1, Huber, SqL2, Zero
from .solvers import (
    ProblemSpec,
    SolverParams,
    StopRule,
    run_pdfp,
    run_spdfp,
    run_svrg_pdfp_gc,
    run_svrg_pdfp_sc,
    solve,
    suggest_params,
    validate_params,
)

__version__ = "0.1.0"
