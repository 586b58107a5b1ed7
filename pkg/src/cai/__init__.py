"""Control-as-inference toolkit.

Small, fully-known environments with an exact enumeration oracle, soft
dynamic programming, amortised learners (policy gradients, soft
Q-learning, actor-critic), iterative planners (reweight-and-refit, CEM,
MPPI, sequential Monte Carlo, MPC), hybrid schemes, and exact bound
diagnostics tying everything together.
"""

__version__ = "0.1.0"

from .dists import (ActionPrior, Categorical, CategoricalSeq, DiagGaussianSeq,
                    PolicyTable, frequency_refit, kl, moment_match)
from .envs import (ContinuousEnv, OptimalityModel, TabularMDP, Trajectory,
                   TrajectorySet, enumerate_trajectories, make_env, random_mdp,
                   rollout, rollout_batch, trajectory_return)
from .softdp import (HardValues, SoftValues, evidence_from_soft_values,
                     hard_value_iteration, optimal_posterior, soft_backward_pass)
from .diagnostics import (ElboReport, elbo_exact, elbo_mc, enumeration_posterior,
                          log_evidence)
from .learners import (QFunctionApprox, ReplayDataset, SoftmaxPolicy, TrainConfig,
                       Transition, evaluate_policy, policy_gradient_step,
                       soft_actor_critic_loop, soft_q_step)
from .planners import (MPCConfig, OptimalityLikelihood, ParticleSet, PlanPosterior,
                       PlannerSpec, cem_reference, mirror_descent_exact_update,
                       mirror_descent_update, mppi_reference, plan_mpc, smc_plan)
from .hybrid import (AmortisedPlanHead, IterativePolicyState,
                     adaptive_refinement_policy, amortised_plan_as_warm_start,
                     amortised_plan_train, iterative_policy_refine)
