"""The two sparse quadrants: per-state iterative policy refinement
(optionally seeded and KL-anchored by an amortised policy), and amortised
open-loop plans trained across start states.

Refinement maximizes the single-state bound

    F(q) = E_q[(r(s, a) + continuation(s, a)) / beta] - KL(q || prior)

by damped exponentiated-gradient steps toward the closed-form optimum,
which keeps F non-decreasing at every iteration. The continuation comes
from exact soft values when available, otherwise from Monte Carlo
rollouts of the base policy.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .dists import ActionPrior, Categorical, CategoricalSeq
from .envs import TabularMDP, OptimalityModel, rollout, trajectory_return
from .errors import InvalidInputError, NumericError
from .learners import TrainConfig
from .numerics import draw_categorical, logsumexp
from .planners import (PlanPosterior, default_plan, enumerate_action_sequences,
                       exact_sequence_returns, mirror_descent_update)
from .rng import stream
from .softdp import SoftValues


# ---------------------------------------------------------------------------
# iterative policy refinement
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class IterativePolicyState:
    """Bookkeeping for one state's refinement; never mutates the base policy."""

    base_policy: object
    local_params: Categorical
    n_iters: int
    prior_mode: str  # "uniform" or "amortised"


@dataclass(eq=False)
class RefineReport:
    elbos: np.ndarray          # length n_iters + 1, single-state bound per iterate
    initial: np.ndarray
    advantage_logits: np.ndarray

    @property
    def improvement(self) -> float:
        return float(self.elbos[-1] - self.elbos[0])


def _base_row(base_policy, t: int, s: int, n_actions: int) -> np.ndarray:
    if base_policy is None:
        return np.full(n_actions, 1.0 / n_actions)
    if hasattr(base_policy, "prob_row"):
        return np.asarray(base_policy.prob_row(t, s), dtype=np.float64)
    if callable(base_policy):
        return np.asarray(base_policy(t, s), dtype=np.float64)
    raise InvalidInputError(f"unsupported base policy type {type(base_policy)!r}")


def _continuation(state: int, env_model: TabularMDP, base_policy,
                  soft_values: SoftValues | None, t: int, seed: int,
                  n_rollouts: int) -> np.ndarray:
    """Expected downstream return per action from (t, state)."""
    if t >= env_model.horizon - 1:
        return np.zeros(env_model.n_actions)
    if soft_values is not None:
        return env_model.transition[state] @ soft_values.v_table[t + 1]
    cont = np.zeros(env_model.n_actions)
    actor = lambda u, s: _base_row(base_policy, u, s, env_model.n_actions)
    for a in range(env_model.n_actions):
        totals = 0.0
        for m in range(n_rollouts):
            rng = stream(seed, "refine-mc", t, a, m)
            s2 = draw_categorical(rng, env_model.transition[state, a])
            value = 0.0
            s_cur = s2
            for u in range(t + 1, env_model.horizon):
                row = actor(u, s_cur)
                act = draw_categorical(rng, row)
                value += env_model.reward[s_cur, act]
                s_cur = draw_categorical(rng, env_model.transition[s_cur, act])
            totals += value
        cont[a] = totals / n_rollouts
    return cont


def single_state_elbo(log_q: np.ndarray, advantage_logits: np.ndarray) -> float:
    """F(q) = sum_a q(a) (advantage_logits(a) - log q(a))."""
    q = np.exp(log_q)
    mask = q > 0
    return float(np.sum(q[mask] * (advantage_logits[mask] - log_q[mask])))


def iterative_policy_refine(state: int, base_policy, env_model: TabularMDP,
                            optimality: OptimalityModel, n_iters: int,
                            seed: int = 0, *, prior_mode: str = "uniform",
                            soft_values: SoftValues | None = None,
                            t: int = 0, step_size: float = 0.5,
                            n_rollouts: int = 32
                            ) -> tuple[Categorical, RefineReport]:
    """Refine the action distribution at one state.

    ``n_iters=0`` returns the initialization unchanged. Damped steps
    interpolate log-linearly toward prior * exp((r + continuation)/beta),
    so the reported single-state bound is non-decreasing.
    """
    if prior_mode not in ("uniform", "amortised"):
        raise InvalidInputError("prior_mode must be 'uniform' or 'amortised'")
    if not 0 < step_size <= 1:
        raise InvalidInputError("step_size must lie in (0, 1]")
    n_actions = env_model.n_actions
    init_row = _base_row(base_policy, t, state, n_actions)
    with np.errstate(divide="ignore"):
        log_q = np.log(init_row) - logsumexp(np.log(init_row))

    if prior_mode == "amortised":
        log_prior = log_q.copy()
    else:
        log_prior = np.full(n_actions, -np.log(n_actions))
    beta = optimality.beta
    cont = _continuation(state, env_model, base_policy, soft_values, t, seed, n_rollouts)
    advantage = log_prior + (env_model.reward[state] + cont) / beta

    elbos = [single_state_elbo(log_q, advantage)]
    for _ in range(n_iters):
        log_q = (1.0 - step_size) * log_q + step_size * advantage
        log_q = log_q - logsumexp(log_q)
        elbos.append(single_state_elbo(log_q, advantage))
    refined = Categorical(log_q)
    return refined, RefineReport(np.array(elbos), init_row, advantage)


# ---------------------------------------------------------------------------
# adaptive refinement during rollout
# ---------------------------------------------------------------------------

def _as_trigger(trigger):
    """Accept a predicate on (entropy, max_entropy) or an entropy fraction."""
    if trigger is None:
        return lambda entropy, max_entropy: False
    if callable(trigger):
        return trigger
    fraction = float(trigger)
    return lambda entropy, max_entropy: entropy > fraction * max_entropy


def adaptive_refinement_policy(env: TabularMDP, base_policy, trigger,
                               optimality: OptimalityModel, *,
                               n_iters: int = 25, seed: int = 0,
                               soft_values: SoftValues | None = None,
                               prior_mode: str = "uniform",
                               step_size: float = 0.5,
                               n_rollouts: int = 32
                               ) -> tuple[object, list[dict]]:
    """Act with the base policy, refining only at triggered states.

    The trigger defaults to high policy entropy (fraction of log |A|).
    Refinement draws from its own streams, so a never-firing trigger
    reproduces the plain base-policy rollout bit for bit.
    """
    fire = _as_trigger(trigger)
    max_entropy = np.log(env.n_actions)
    usage: list[dict] = []

    def actor(t, s):
        row = _base_row(base_policy, t, s, env.n_actions)
        dist = Categorical.from_probs(row)
        entropy = dist.entropy()
        triggered = bool(fire(entropy, max_entropy))
        if not triggered:
            usage.append({"step": t, "state_id": int(s), "triggered": False,
                          "iters_used": 0, "elbo_before": None, "elbo_after": None})
            return row
        refined, report = iterative_policy_refine(
            int(s), base_policy, env, optimality, n_iters,
            seed=seed, prior_mode=prior_mode, soft_values=soft_values,
            t=t, step_size=step_size, n_rollouts=n_rollouts)
        usage.append({"step": t, "state_id": int(s), "triggered": True,
                      "iters_used": n_iters,
                      "elbo_before": float(report.elbos[0]),
                      "elbo_after": float(report.elbos[-1])})
        return refined.probs()

    traj = rollout(env, actor, seed)
    return traj, usage


# ---------------------------------------------------------------------------
# amortised plans
# ---------------------------------------------------------------------------

class StateOneHot:
    """One-hot features over start states for the plan head."""

    def __init__(self, n_states: int):
        self.n_states = n_states
        self.dim = n_states
        self.spec_id = f"state-onehot:{n_states}"

    def __call__(self, s: int) -> np.ndarray:
        vec = np.zeros(self.dim)
        vec[int(s)] = 1.0
        return vec


@dataclass(eq=False)
class AmortisedPlanHead:
    """Global map from a state to an open-loop plan distribution.

    Plans factorize over steps (independent per-step categoricals given
    the conditioning state). ``state_queries`` counts emissions, which is
    how tests assert open-loop execution touches the state exactly once.
    """

    features: StateOneHot
    weights: np.ndarray  # (F, H * A)
    horizon: int
    n_actions: int
    state_queries: int = 0

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.features.dim, self.horizon * self.n_actions):
            raise InvalidInputError("weights must have shape (feature_dim, H * A)")

    def emit(self, state: int) -> CategoricalSeq:
        self.state_queries += 1
        logits = (self.features(state) @ self.weights).reshape(self.horizon, self.n_actions)
        return CategoricalSeq(logits)

    def logits_for(self, state: int) -> np.ndarray:
        """Logits without counting a query (training-internal use)."""
        return (self.features(state) @ self.weights).reshape(self.horizon, self.n_actions)

    @classmethod
    def zeros(cls, n_states: int, horizon: int, n_actions: int) -> "AmortisedPlanHead":
        feats = StateOneHot(n_states)
        return cls(feats, np.zeros((feats.dim, horizon * n_actions)), horizon, n_actions)


def _plan_elbo_and_grad(env: TabularMDP, head: AmortisedPlanHead, state: int,
                        beta: float, sequences: np.ndarray,
                        log_prior: np.ndarray) -> tuple[float, np.ndarray, dict]:
    """Exact bound and logits-gradient for the plan emitted at one state."""
    logits = head.logits_for(state)
    log_q_steps = logits - logsumexp(logits, axis=1)[:, None]
    horizon = head.horizon
    returns = exact_sequence_returns(env, state, sequences)
    seq_log_q = log_q_steps[np.arange(horizon)[None, :], sequences].sum(axis=1)
    seq_log_prior = log_prior[sequences].sum(axis=1)
    q_seq = np.exp(seq_log_q)
    g = returns / beta + seq_log_prior - seq_log_q
    elbo = float(q_seq @ g)

    pi = np.exp(log_q_steps)
    onehot = np.zeros((len(sequences), horizon, head.n_actions))
    onehot[np.arange(len(sequences))[:, None], np.arange(horizon)[None, :], sequences] = 1.0
    delta = onehot - pi[None, :, :]
    coeff = q_seq * (g - 1.0)
    grad_logits = np.einsum("n,nha->ha", coeff, delta)
    stats = {
        "return": float(q_seq @ returns),
        "entropy": float(-(q_seq @ seq_log_q)),
    }
    return elbo, grad_logits, stats


def amortised_plan_train(env: TabularMDP, head: AmortisedPlanHead,
                         config: TrainConfig,
                         prior: ActionPrior | None = None
                         ) -> tuple[AmortisedPlanHead, list[dict]]:
    """Policy-gradient training of the state-conditional plan distribution.

    The exact-expectation estimator enumerates action sequences and
    weights start states by the initial distribution; the sampled
    estimator scores open-loop rollouts. Execution is open loop either
    way: the head sees only the start state.
    """
    if head.horizon > env.horizon:
        raise InvalidInputError("plan head horizon exceeds the environment horizon")
    if prior is None:
        prior = ActionPrior.uniform(env.n_actions)
    log_prior = prior.log_probs()
    beta = config.beta
    start_support = np.nonzero(env.initial_dist > 0)[0]
    weights = head.weights.copy()
    log: list[dict] = []
    sequences = (enumerate_action_sequences(env.n_actions, head.horizon)
                 if config.gradient_estimator == "exact-expectation" else None)

    for it in range(config.n_iterations):
        start_time = time.perf_counter()
        current = AmortisedPlanHead(head.features, weights, head.horizon, head.n_actions)
        grad = np.zeros_like(weights)
        if config.gradient_estimator == "exact-expectation":
            elbo = ret = ent = 0.0
            for s in start_support:
                p_s = env.initial_dist[s]
                value, grad_logits, stats = _plan_elbo_and_grad(
                    env, current, int(s), beta, sequences, log_prior)
                grad += p_s * np.outer(current.features(int(s)), grad_logits.ravel())
                elbo += p_s * value
                ret += p_s * stats["return"]
                ent += p_s * stats["entropy"]
        else:
            elbo_samples, ret_samples, ent_samples = [], [], []
            baselines = []
            batch = []
            for e in range(config.batch_size):
                rng = stream(config.seed, "plan-train", it, e)
                s1 = draw_categorical(rng, env.initial_dist)
                plan = CategoricalSeq(current.logits_for(s1))
                seq = plan.sample(1, rng)[0]
                traj = rollout(env, list(seq) + [0] * (env.horizon - head.horizon),
                               stream(config.seed, "plan-rollout", it, e))
                ret_open = float(np.sum(traj.rewards[:head.horizon]))
                lp = float(plan.log_prob(seq))
                batch.append((s1, plan, seq, ret_open, lp))
                baselines.append(ret_open / beta)
            baseline = float(np.mean(baselines)) if config.baseline == "mean-return" else 0.0
            for s1, plan, seq, ret_open, lp in batch:
                log_q_steps = plan.log_probs()
                seq_log_prior = log_prior[seq].sum()
                g = ret_open / beta + float(seq_log_prior) - lp
                pi = np.exp(log_q_steps)
                onehot = np.zeros_like(pi)
                onehot[np.arange(head.horizon), seq] = 1.0
                grad_logits = (onehot - pi) * (g - baseline)
                grad += np.outer(current.features(s1), grad_logits.ravel())
                elbo_samples.append(g)
                ret_samples.append(ret_open)
                ent_samples.append(plan.entropy())
            grad /= config.batch_size
            elbo = float(np.mean(elbo_samples))
            ret = float(np.mean(ret_samples))
            ent = float(np.mean(ent_samples))
        if not np.all(np.isfinite(grad)):
            raise NumericError("non-finite plan-head gradient")
        weights = weights + config.learning_rate * grad
        log.append({"iter": it, "elbo": elbo, "return": ret, "entropy": ent,
                    "grad_norm": float(np.linalg.norm(grad)),
                    "wall_ms": (time.perf_counter() - start_time) * 1e3})
    trained = AmortisedPlanHead(head.features, weights, head.horizon, head.n_actions)
    return trained, log


def open_loop_rollout(env: TabularMDP, head: AmortisedPlanHead, seed: int,
                      *, modal: bool = True):
    """Execute the head's plan open loop: the state is read exactly once."""
    rng = stream(seed, "open-loop")
    s1 = draw_categorical(rng, env.initial_dist)
    plan = head.emit(int(s1))
    if modal:
        seq = plan.mode()
    else:
        seq = plan.sample(1, rng)[0]
    states = np.empty(head.horizon + 1, dtype=np.int64)
    rewards = np.empty(head.horizon)
    state = int(s1)
    for h in range(head.horizon):
        states[h] = state
        rewards[h] = env.reward[state, seq[h]]
        state = draw_categorical(rng, env.transition[state, seq[h]])
    states[head.horizon] = state
    from .envs import Trajectory
    return Trajectory(states, np.asarray(seq, dtype=np.int64), rewards)


@dataclass(eq=False)
class WarmStartReport:
    warm_trace: list[dict]
    cold_trace: list[dict]
    warm_plan: PlanPosterior
    cold_plan: PlanPosterior
    warm_iters_to_best: int
    cold_iters_to_best: int


def amortised_plan_as_warm_start(head: AmortisedPlanHead, state: int, env,
                                 likelihood, n_samples: int, n_iterations: int,
                                 seed: int) -> WarmStartReport:
    """Seed iterative planning with the head's plan instead of the prior.

    Both arms share seeds and sample streams, so a head that emits the
    default prior reproduces the cold-start trace exactly.
    """
    horizon = head.horizon
    cold = default_plan(env, horizon)
    emitted = head.emit(int(state))
    if not isinstance(cold.dist, CategoricalSeq) or emitted.logits.shape != cold.dist.logits.shape:
        raise InvalidInputError("plan head shape does not match the planner's plan shape")
    warm = PlanPosterior(emitted, horizon)

    def run(plan: PlanPosterior) -> tuple[list[dict], PlanPosterior]:
        trace = []
        for i in range(n_iterations):
            plan, report = mirror_descent_update(
                plan, env, state, likelihood, n_samples, seed)
            trace.append({"iter": i, "best_return": report.best_return,
                          "mean_return": report.mean_return,
                          "weighted_return": report.weighted_return})
        return trace, plan

    warm_trace, warm_final = run(warm)
    cold_trace, cold_final = run(cold)

    def iters_to_best(trace):
        best = max(entry["best_return"] for entry in trace)
        for entry in trace:
            if entry["best_return"] >= best - 1e-12:
                return entry["iter"]
        return len(trace) - 1

    return WarmStartReport(warm_trace, cold_trace, warm_final, cold_final,
                           iters_to_best(warm_trace), iters_to_best(cold_trace))
