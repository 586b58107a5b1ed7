"""Exact soft dynamic programming on tabular MDPs.

The backward pass computes soft values in reward units:

    Q[t, s, a] = r(s, a) + gamma * backup over successors of V[t+1]
    V[t, s]    = beta * log sum_a p(a) exp(Q[t, s, a] / beta)

so ``exp(Q / beta)`` and ``exp(V / beta)`` are the backward messages
(probability of acting optimally from here on) and the per-step optimal
posterior is ``p(a) * exp((Q - V) / beta)``, which normalizes exactly
because the action prior sits inside the V aggregation.

Two successor backups are provided:

* ``expected``   (default): Q = r + gamma * E[V'], the value recursion of
  the variational problem whose dynamics are pinned to the environment's.
* ``optimistic``: Q = r + gamma * beta * log E[exp(V'/beta)], the literal
  backward message, risk-seeking under stochastic dynamics.

They coincide on deterministic kernels. With the optimistic backup (or on
deterministic kernels), the initial values reproduce the enumeration
evidence exactly; the identity is stated for gamma = 1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dists import ActionPrior, PolicyTable
from .envs import OptimalityModel, TabularMDP
from .errors import InvalidInputError, NumericError
from .numerics import logsumexp

BACKUP_VARIANTS = ("expected", "optimistic")


@dataclass(eq=False)
class SoftValues:
    """Soft Q/V tables (reward units) plus the prior used to aggregate V."""

    q_table: np.ndarray    # (T, S, A)
    v_table: np.ndarray    # (T, S)
    beta: float
    backup_variant: str
    log_prior: np.ndarray  # (T, S, A)

    @property
    def horizon(self) -> int:
        return self.q_table.shape[0]

    @property
    def n_states(self) -> int:
        return self.q_table.shape[1]

    @property
    def n_actions(self) -> int:
        return self.q_table.shape[2]

    def to_json(self) -> str:
        return json.dumps({
            "q_table": self.q_table.tolist(),
            "v_table": self.v_table.tolist(),
            "beta": self.beta,
            "backup_variant": self.backup_variant,
            "log_prior": self.log_prior.tolist(),
        })

    @classmethod
    def from_json(cls, text: str) -> "SoftValues":
        doc = json.loads(text)
        return cls(
            q_table=np.array(doc["q_table"], dtype=np.float64),
            v_table=np.array(doc["v_table"], dtype=np.float64),
            beta=float(doc["beta"]),
            backup_variant=str(doc["backup_variant"]),
            log_prior=np.array(doc["log_prior"], dtype=np.float64),
        )


def _resolve_prior(prior, mdp: TabularMDP) -> np.ndarray:
    if prior is None:
        prior = ActionPrior.uniform(mdp.n_actions)
    return prior.log_table(mdp.horizon, mdp.n_states)


def soft_backward_pass(mdp: TabularMDP, optimality: OptimalityModel,
                       backup_variant: str = "expected",
                       prior: ActionPrior | None = None) -> SoftValues:
    """Backward message passing over the full horizon."""
    if backup_variant not in BACKUP_VARIANTS:
        raise InvalidInputError(f"backup_variant must be one of {BACKUP_VARIANTS}")
    beta = optimality.beta
    if beta <= 0:
        raise InvalidInputError("beta must be > 0")
    log_prior = _resolve_prior(prior, mdp)

    horizon, gamma = mdp.horizon, mdp.discount
    q = np.empty((horizon, mdp.n_states, mdp.n_actions))
    v = np.empty((horizon, mdp.n_states))
    for t in reversed(range(horizon)):
        if t == horizon - 1:
            q[t] = mdp.reward
        elif backup_variant == "expected":
            q[t] = mdp.reward + gamma * mdp.transition @ v[t + 1]
        else:
            # beta * log E[exp(V'/beta)] with max-subtraction over successors
            scaled = v[t + 1] / beta
            m = scaled.max()
            q[t] = mdp.reward + gamma * beta * (
                np.log(mdp.transition @ np.exp(scaled - m)) + m)
        v[t] = beta * logsumexp(log_prior[t] + q[t] / beta, axis=-1)
        if not np.all(np.isfinite(q[t])) or not np.all(np.isfinite(v[t])):
            bad = np.argwhere(~np.isfinite(v[t]))
            where = f"s={int(bad[0][0])}" if len(bad) else "q-table"
            raise NumericError(f"non-finite soft value at t={t}, {where}")
    return SoftValues(q, v, beta, backup_variant, log_prior)


def optimal_posterior(soft_values: SoftValues,
                      prior: ActionPrior | None = None) -> PolicyTable:
    """Per-step posterior p(a) * exp((Q - V) / beta); rows sum to one."""
    if prior is None:
        log_prior = soft_values.log_prior
    else:
        log_prior = prior.log_table(soft_values.horizon, soft_values.n_states)
    beta = soft_values.beta
    logits = log_prior + (soft_values.q_table - soft_values.v_table[..., None]) / beta
    return PolicyTable(np.exp(logits))


@dataclass(eq=False)
class HardValues:
    """Finite-horizon Bellman optimality tables (the beta -> 0 target)."""

    q_table: np.ndarray  # (T, S, A)
    v_table: np.ndarray  # (T, S)
    greedy: np.ndarray   # (T, S) argmax actions


def hard_value_iteration(mdp: TabularMDP) -> HardValues:
    horizon, gamma = mdp.horizon, mdp.discount
    q = np.empty((horizon, mdp.n_states, mdp.n_actions))
    v = np.empty((horizon, mdp.n_states))
    for t in reversed(range(horizon)):
        q[t] = mdp.reward if t == horizon - 1 else mdp.reward + gamma * mdp.transition @ v[t + 1]
        v[t] = q[t].max(axis=-1)
    return HardValues(q, v, q.argmax(axis=-1))


def evidence_from_soft_values(soft_values: SoftValues, mdp: TabularMDP) -> float:
    """log evidence implied by the initial soft values:
    log sum_s p(s1) exp(V[0, s] / beta)."""
    log_init = np.where(mdp.initial_dist > 0, np.log(
        np.where(mdp.initial_dist > 0, mdp.initial_dist, 1.0)), -np.inf)
    return float(logsumexp(log_init + soft_values.v_table[0] / soft_values.beta))
