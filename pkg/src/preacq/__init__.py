"""Physics-residual acquisition for active learning of PDE surrogates."""

from .acquisition import normalize, score_pool, select_random, select_sbal, select_topk
from .core import Candidate, Family, Field, Grid, IcParameters, LabeledSample, PdeParameters, Trajectory, make_grid
from .loop import ExperimentConfig, evaluate_rmse, run_experiment, run_round
from .residual import pre_burgers, pre_ns2d, score
from .solvers import IcGeneratorSpec, SolverConfig, generate_ic, simulate, solve_burgers, solve_ns2d
from .surrogate import fit_spectral_ridge, fit_stencil_net, rollout

__version__ = "0.1.0"
