"""Variational-bound diagnostics: exact and Monte Carlo ELBO, the
three-term decomposition, log-evidence, and the enumeration posterior.

This module is the measuring instrument the rest of the toolkit is
verified against. Everything exact goes through the trajectory
enumeration of :mod:`cai.envs`, with all evidence sums in log space.

Two ELBO conventions appear side by side in every report:

* ``elbo``              -- expected reward minus state and action
  complexity (the KL-against-generative-model form, prior included);
* ``entropy_form_elbo`` -- expected reward plus action entropy.

Under a uniform prior and matched dynamics they differ by the constant
``T log |A|``, reported as ``prior_constant`` so the two forms reconcile
exactly rather than silently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dists import ActionPrior, CategoricalSeq, PolicyTable, kl, Categorical
from .envs import (EnumeratedSupport, OptimalityModel, TabularMDP,
                   enumerate_support, rollout, stream)
from .errors import InvalidInputError
from .numerics import logsumexp, plogp


@dataclass(eq=False)
class ElboReport:
    """Bound value with its decomposition and estimator metadata."""

    elbo: float
    expected_reward: float
    state_complexity: float
    action_complexity: float
    entropy_form_elbo: float
    prior_constant: float
    log_evidence: float | None = None
    estimator: str = "exact"
    n: int | None = None
    stderr: float | None = None
    reward_stderr: float | None = None

    def to_json(self) -> str:
        return json.dumps({
            "elbo": self.elbo,
            "expected_reward": self.expected_reward,
            "state_complexity": self.state_complexity,
            "action_complexity": self.action_complexity,
            "entropy_form_elbo": self.entropy_form_elbo,
            "prior_constant": self.prior_constant,
            "log_evidence": self.log_evidence,
            "estimator": self.estimator,
            "n": self.n,
            "stderr": self.stderr,
            "reward_stderr": self.reward_stderr,
        })


def as_log_policy_table(policy_or_plan, horizon: int, n_states: int) -> np.ndarray:
    """Normalize a policy or plan into a (T, S, A) log-probability table.

    Plans are state-independent per-step categoricals, so their rows are
    broadcast across states.
    """
    obj = policy_or_plan
    if hasattr(obj, "dist") and hasattr(obj, "horizon") and not isinstance(obj, PolicyTable):
        # a PlanPosterior wrapper: unwrap to its distribution
        obj = obj.dist
    if isinstance(obj, PolicyTable):
        return obj.log_table(horizon)
    if isinstance(obj, CategoricalSeq):
        if obj.horizon != horizon:
            raise InvalidInputError("plan horizon does not match the MDP horizon")
        lp = obj.log_probs()
        return np.broadcast_to(lp[:, None, :], (horizon, n_states, lp.shape[1])).copy()
    if hasattr(obj, "log_table"):
        return np.asarray(obj.log_table(horizon), dtype=np.float64)
    if isinstance(obj, np.ndarray) or isinstance(obj, (list, tuple)):
        return PolicyTable(np.asarray(obj, dtype=np.float64)).log_table(horizon)
    raise InvalidInputError(f"cannot interpret {type(policy_or_plan)!r} as a policy or plan")


def log_evidence(mdp: TabularMDP, optimality: OptimalityModel,
                 prior: ActionPrior | None = None, *,
                 support: EnumeratedSupport | None = None,
                 cap: int | None = None) -> float:
    """log sum_tau p(tau) exp(return(tau) / beta), p(tau) built from the
    action prior and the environment dynamics. Log-space throughout."""
    if prior is None:
        prior = ActionPrior.uniform(mdp.n_actions)
    if support is None:
        support = enumerate_support(mdp, cap=cap)
    log_prior = prior.log_table(mdp.horizon, mdp.n_states)
    log_p = support.log_p_dyn + support.policy_log_probs(log_prior)
    scores = log_p + support.returns(mdp.discount) / optimality.beta
    return float(logsumexp(scores))


def elbo_exact(mdp: TabularMDP, policy_or_plan, optimality: OptimalityModel,
               prior: ActionPrior | None = None,
               q_dynamics: np.ndarray | None = None, *,
               support: EnumeratedSupport | None = None,
               cap: int | None = None) -> ElboReport:
    """Exact bound and its three-term decomposition via enumeration.

    ``q_dynamics=None`` pins the variational dynamics to the environment
    kernel, making the state-complexity term exactly zero. An explicit
    (S, A, S) table computes the term against the environment kernel.
    """
    if prior is None:
        prior = ActionPrior.uniform(mdp.n_actions)
    same_dynamics = q_dynamics is None
    if support is None:
        support = enumerate_support(
            mdp, cap=cap, transition=None if same_dynamics else q_dynamics)
    log_pi = as_log_policy_table(policy_or_plan, mdp.horizon, mdp.n_states)
    log_prior = prior.log_table(mdp.horizon, mdp.n_states)

    traj_log_pi = support.policy_log_probs(log_pi)
    traj_log_prior = support.policy_log_probs(log_prior)
    q_traj = np.exp(support.log_p_dyn + traj_log_pi)

    beta = optimality.beta
    expected_reward = float(q_traj @ support.returns(mdp.discount)) / beta
    action_complexity = float(q_traj @ (traj_log_pi - traj_log_prior))
    if same_dynamics:
        state_complexity = 0.0
    else:
        # support.log_p_dyn is under q; recompute the same paths under p
        t_idx = np.arange(mdp.horizon)[None, :]
        with np.errstate(divide="ignore"):
            log_p_steps = np.log(mdp.transition)[
                support.states[:, :-1], support.actions, support.states[:, 1:]]
        log_init = np.log(mdp.initial_dist[support.states[:, 0]])
        log_p_dyn_env = log_init + log_p_steps.sum(axis=1)
        state_complexity = float(q_traj @ (support.log_p_dyn - log_p_dyn_env))
        del t_idx
    elbo = expected_reward - state_complexity - action_complexity
    entropy_form = expected_reward - float(q_traj @ traj_log_pi)
    evidence = log_evidence(mdp, optimality, prior,
                            support=support if same_dynamics else None, cap=cap)
    return ElboReport(
        elbo=elbo,
        expected_reward=expected_reward,
        state_complexity=state_complexity,
        action_complexity=action_complexity,
        entropy_form_elbo=entropy_form,
        prior_constant=entropy_form - elbo,
        log_evidence=evidence,
        estimator="exact",
    )


def elbo_mc(env, policy_or_plan, optimality: OptimalityModel, n: int, seed: int) -> ElboReport:
    """Monte Carlo bound estimate from seeded rollouts.

    The reward term is a sample mean of return / beta; entropy and
    action-complexity terms use exact per-visited-state values, so a
    deterministic environment with a deterministic-limit policy has zero
    reward standard error.
    """
    if n < 2:
        raise InvalidInputError("elbo_mc needs n >= 2")
    if not isinstance(env, TabularMDP):
        raise InvalidInputError("elbo_mc operates on tabular MDPs")
    prior = ActionPrior.uniform(env.n_actions)
    log_pi = as_log_policy_table(policy_or_plan, env.horizon, env.n_states)
    log_prior = prior.log_table(env.horizon, env.n_states)
    probs = np.exp(log_pi)
    row_entropy = -np.sum(plogp(probs, log_pi), axis=-1)  # (T, S)
    row_kl = np.sum(plogp(probs, np.where(probs > 0, log_pi - log_prior, 0.0)), axis=-1)

    actor = PolicyTable(probs)
    beta = optimality.beta
    reward_terms = np.empty(n)
    entropy_terms = np.empty(n)
    kl_terms = np.empty(n)
    for i in range(n):
        traj = rollout(env, actor, stream(seed, "elbo-mc", i))
        t_idx = np.arange(env.horizon)
        visited = traj.states[:-1]
        weights = env.discount ** t_idx
        reward_terms[i] = float(weights @ traj.rewards) / beta
        entropy_terms[i] = float(row_entropy[t_idx, visited].sum())
        kl_terms[i] = float(row_kl[t_idx, visited].sum())

    elbo_samples = reward_terms - kl_terms
    entropy_samples = reward_terms + entropy_terms
    return ElboReport(
        elbo=float(elbo_samples.mean()),
        expected_reward=float(reward_terms.mean()),
        state_complexity=0.0,
        action_complexity=float(kl_terms.mean()),
        entropy_form_elbo=float(entropy_samples.mean()),
        prior_constant=float((entropy_samples - elbo_samples).mean()),
        log_evidence=None,
        estimator="monte-carlo",
        n=n,
        stderr=float(elbo_samples.std(ddof=1) / np.sqrt(n)),
        reward_stderr=float(reward_terms.std(ddof=1) / np.sqrt(n)),
    )


def enumeration_posterior(mdp: TabularMDP, optimality: OptimalityModel,
                          prior: ActionPrior | None = None, *,
                          support: EnumeratedSupport | None = None,
                          cap: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Brute-force per-step action posterior given optimality of the whole
    episode.

    Returns a (T, S, A) table and a (T, S) reachability mask; rows of
    unreachable (t, s) pairs are left uniform and masked out.
    """
    if prior is None:
        prior = ActionPrior.uniform(mdp.n_actions)
    if support is None:
        support = enumerate_support(mdp, cap=cap)
    log_prior = prior.log_table(mdp.horizon, mdp.n_states)
    log_w = (support.log_p_dyn + support.policy_log_probs(log_prior)
             + support.returns(mdp.discount) / optimality.beta)
    # weights can be tiny for small beta: normalize by the max first
    w = np.exp(log_w - log_w.max())

    horizon, s_count, a_count = mdp.horizon, mdp.n_states, mdp.n_actions
    mass = np.zeros((horizon, s_count, a_count))
    for t in range(horizon):
        np.add.at(mass[t], (support.states[:, t], support.actions[:, t]), w)
    totals = mass.sum(axis=-1)
    reachable = totals > 0
    posterior = np.full((horizon, s_count, a_count), 1.0 / a_count)
    posterior[reachable] = mass[reachable] / totals[reachable][..., None]
    return posterior, reachable
