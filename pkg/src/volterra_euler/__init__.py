"""Euler schemes for stochastic Volterra integral equations, forward and backward."""
from .errors import *  # noqa: F401,F403
from .grid import Partition, make_uniform, pi_index, tau
from .problems import (BsvieProblem, ClosedFormOracle, SeparableTerm, SvieProblem,
                       bsvie_residual, example_section5, example_svie_benchmark,
                       validate_problem)
from .paths import PathEnsemble, coarsen, sample
from .svie import SviePaths, evaluate_offgrid, solve_forward
from .condexp import (BinaryTree, CondExpEstimator, Projector, StateFeatures, evaluate,
                      fit, tree_expectation)
from .bsvie import (BsvieSolution, LsmcBackend, TreeBackend, picard_step,
                    solve_backward, z_on_grid)

__version__ = "0.1.0"
