"""Multi-task value-function learning: fitted Q-iteration and policy iteration
with shared-representation regression on tabular grid worlds."""

from .evaluation import (
    EvalReport, RolloutConfig, evaluate, normalized_return, q_distance, regret, rollout_value,
)
from .experience import ExperienceSet, Transition, collect
from .features import FeatureMap, SharedSubspace, augment, one_hot_map, project
from .mdp import (
    GridLayout, OracleSolution, TabularMDP, TaskReward, build_four_rooms, make_task, sample_tasks, solve_exact,
)
from .planners import (
    DivergenceError, GreedyPolicy, PlannerConfig, PlannerTrace, extract_policy, greedy_policies, mt_fqi,
    mt_pe, mt_pi,
)
from .solvers import (
    MultiTaskModel, RegressionProblemSet, SolverConfig, fit, fit_aso, fit_independent, fit_mtfl, predict,
)
from .transfer import (
    Option, OptionMDP, build_exit_option_mdp, build_room_option_mdp, option_model, recover_option_policy,
    transfer_curve,
)

__version__ = "0.1.0"
