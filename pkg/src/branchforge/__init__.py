"""Learned variable selection for branch-and-bound: an LP-based B&B with pluggable
branching policies, a bipartite graph network imitating strong branching,
dataset aggregation and weight-space averaging of the resulting models."""
from .bnb import BnbTrace, dual_integral, run_bnb
from .branching import make_policy
from .dagger import DaggerConfig, run_dagger
from .ensemble import epoch_weight_average, kida_average, select_top_k
from .gcnn import ArchConfig, ModelParams, TrainConfig, init_model, load_model, save_model, train
from .lp import solve_lp
from .milp import MilpInstance, canonicalize, gen_assignment, gen_set_cover

__version__ = "0.1.0"
