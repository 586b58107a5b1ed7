"""Iterative inference over action sequences.

The central operation reweights samples from the current plan posterior
by an optimality likelihood of the trajectory return and refits the
distribution family:

* indicator likelihood (top fraction or fixed threshold)  -> CEM
* exponential-of-return likelihood at temperature eta     -> MPPI
* exponential at the bound's own temperature (raw-beta)   -> the
  variational planning update proper

Standalone CEM and MPPI references exist purely as equivalence targets:
given the same seed they draw the same samples and must produce
bit-identical refits. To keep that true, every path draws through
``_plan_samples`` / ``_batch_returns`` and refits through the shared
kernels in :mod:`cai.dists`; only the weighting logic differs.

An exact-weight update for small discrete plans (coordinate mirror
ascent over enumerated sequences) provides the provably monotone
iterate used to verify the ascent property, and a sequential Monte
Carlo planner covers the particle representation of the same posterior.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dists import (ActionPrior, CategoricalSeq, DiagGaussianSeq,
                    frequency_refit, moment_match)
from .envs import ContinuousEnv, TabularMDP, Trajectory
from .errors import InvalidInputError, NumericError, ResourceLimitError
from .numerics import (draw_categorical, draw_categorical_batch, logsumexp,
                       plogp, systematic_resample)
from .rng import fold, stream
from .softdp import SoftValues

EXACT_PLAN_CAP = 4096


# ---------------------------------------------------------------------------
# optimality likelihoods
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimalityLikelihood:
    """Weighting rule applied to sampled returns.

    ``indicator`` selects elites either by per-batch quantile
    (``elite_fraction``) or by a fixed ``threshold``; ``exponential``
    weights by exp(return / eta); ``raw-beta`` is the same form tied to
    the bound's temperature.
    """

    variant: str
    elite_fraction: float | None = None
    threshold: float | None = None
    eta: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.variant == "indicator":
            if (self.elite_fraction is None) == (self.threshold is None):
                raise InvalidInputError(
                    "indicator needs exactly one of elite_fraction or threshold")
            if self.elite_fraction is not None and not 0 < self.elite_fraction <= 1:
                raise InvalidInputError("elite_fraction must lie in (0, 1]")
        elif self.variant == "exponential":
            if self.eta is None or self.eta <= 0:
                raise InvalidInputError("exponential needs eta > 0")
        elif self.variant == "raw-beta":
            if self.beta is None or self.beta <= 0:
                raise InvalidInputError("raw-beta needs beta > 0")
        else:
            raise InvalidInputError(f"unknown likelihood variant {self.variant!r}")

    @classmethod
    def indicator(cls, elite_fraction: float | None = None,
                  threshold: float | None = None) -> "OptimalityLikelihood":
        return cls("indicator", elite_fraction=elite_fraction, threshold=threshold)

    @classmethod
    def exponential(cls, eta: float = 1.0) -> "OptimalityLikelihood":
        return cls("exponential", eta=eta)

    @classmethod
    def raw_beta(cls, beta: float) -> "OptimalityLikelihood":
        return cls("raw-beta", beta=beta)

    def normalized_weights(self, returns: np.ndarray) -> tuple[np.ndarray, bool]:
        """Self-normalized weights; returns (weights, threshold_relaxed)."""
        returns = np.asarray(returns, dtype=np.float64)
        k = len(returns)
        if self.variant == "indicator":
            if self.elite_fraction is not None:
                m = max(1, int(math.ceil(k * self.elite_fraction)))
                order = np.argsort(-returns, kind="stable")
                weights = np.zeros(k)
                weights[order[:m]] = 1.0
                weights /= weights.sum()
                return weights, False
            mask = returns > self.threshold
            relaxed = not mask.any()
            if relaxed:
                # no elites: fall back to the batch maximum so the update
                # stays defined instead of dividing by zero
                mask = returns >= returns.max()
            weights = mask.astype(np.float64)
            weights /= weights.sum()
            return weights, relaxed
        temp = self.eta if self.variant == "exponential" else self.beta
        z = returns / temp
        z = z - z.max()
        weights = np.exp(z)
        weights /= weights.sum()
        return weights, False


# ---------------------------------------------------------------------------
# plan posterior, particles, configuration
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class PlanPosterior:
    """Distribution over an open-loop action sequence plus an iteration counter."""

    dist: object  # DiagGaussianSeq or CategoricalSeq
    horizon: int
    iteration: int = 0

    def __post_init__(self):
        if self.dist.horizon != self.horizon:
            raise InvalidInputError("distribution horizon disagrees with plan horizon")

    @property
    def discrete(self) -> bool:
        return isinstance(self.dist, CategoricalSeq)

    def entropy(self) -> float:
        return self.dist.entropy()

    def first_action(self):
        """Deterministic executive choice: mode (discrete) or mean (Gaussian)."""
        if self.discrete:
            return int(self.dist.mode()[0])
        return self.dist.mean[0].copy()


@dataclass(eq=False)
class ParticleSet:
    actions: np.ndarray   # (K, H)
    weights: np.ndarray   # (K,) normalized
    ancestry: np.ndarray  # (H, K) parent indices per step

    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights**2))


@dataclass(frozen=True)
class MPCConfig:
    n_samples: int = 64
    n_iterations: int = 5
    horizon: int = 10
    replan_every: int = 1
    warm_start: str = "shift"  # or "reset"
    seed: int = 0
    inner_rollouts: int = 1
    selection: str = "mode"    # SMC action choice: "mode" or "sample"

    def __post_init__(self):
        if min(self.n_samples, self.n_iterations, self.horizon, self.replan_every) < 1:
            raise InvalidInputError("all MPC counts must be >= 1")
        if self.warm_start not in ("shift", "reset"):
            raise InvalidInputError("warm_start must be 'shift' or 'reset'")


@dataclass(frozen=True)
class PlannerSpec:
    """Names the inner planner for the MPC loop."""

    kind: str  # "mirror-descent" or "smc"
    likelihood: OptimalityLikelihood | None = None
    value_fn: object | None = None
    proposal: object | None = None
    resample_threshold: float = 0.5
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in ("mirror-descent", "smc"):
            raise InvalidInputError("planner kind must be 'mirror-descent' or 'smc'")
        if self.kind == "mirror-descent" and self.likelihood is None:
            raise InvalidInputError("mirror-descent planning needs a likelihood")


@dataclass(eq=False)
class UpdateReport:
    weights: np.ndarray
    returns: np.ndarray
    ess: float
    best_return: float
    mean_return: float
    weighted_return: float
    relaxed: bool
    clamp_count: int


def default_plan(env, horizon: int) -> PlanPosterior:
    """Prior-shaped initial plan: uniform categoricals, or a Gaussian
    centered in the action box with half-range spread."""
    if isinstance(env, TabularMDP):
        return PlanPosterior(CategoricalSeq.uniform(horizon, env.n_actions), horizon)
    lo, hi = env.action_bounds[:, 0], env.action_bounds[:, 1]
    mean = np.tile((lo + hi) / 2.0, (horizon, 1))
    stddev = np.tile((hi - lo) / 2.0, (horizon, 1))
    return PlanPosterior(DiagGaussianSeq(mean, stddev, bounds=env.action_bounds),
                         horizon)


# ---------------------------------------------------------------------------
# shared sampling and model evaluation
# ---------------------------------------------------------------------------

def _plan_samples(plan: PlanPosterior, n_samples: int, seed: int):
    """Draw action-sequence samples; identical for every update flavour."""
    rng = stream(seed, "plan-samples", plan.iteration)
    if plan.discrete:
        return plan.dist.sample(n_samples, rng), 0
    batch = plan.dist.sample(n_samples, rng)
    return batch.actions, batch.clamp_count


def _batch_returns(model, state, actions: np.ndarray, seed: int,
                   inner_rollouts: int = 1) -> np.ndarray:
    """Mean return of each action sequence under the known model.

    Stochastic dynamics are averaged over ``inner_rollouts`` independent
    model rollouts; deterministic models need only one.
    """
    k = actions.shape[0]
    horizon = actions.shape[1]
    totals = np.zeros(k)
    for m in range(inner_rollouts):
        rng = stream(seed, "plan-dyn", m)
        if isinstance(model, TabularMDP):
            states = np.full(k, int(state), dtype=np.int64)
            rewards = np.zeros(k)
            for h in range(horizon):
                acts = actions[:, h]
                rewards += (model.discount ** h) * model.reward[states, acts]
                rows = model.transition[states, acts]
                states = draw_categorical_batch(rng, rows)
            totals += rewards
        elif isinstance(model, ContinuousEnv):
            states = np.tile(np.asarray(state, dtype=np.float64), (k, 1))
            rewards = np.zeros(k)
            for h in range(horizon):
                acts = actions[:, h]
                if model.reward_batch is not None:
                    rewards += model.reward_batch(states, acts)
                    states = model.step_batch(states, acts)
                else:
                    rewards += np.array([model.reward_fn(states[i], acts[i])
                                         for i in range(k)])
                    states = np.stack([np.asarray(model.step_fn(states[i], acts[i]))
                                       for i in range(k)])
                if model.noise_std is not None:
                    states = states + rng.standard_normal(states.shape) * model.noise_std
            totals += rewards
        else:
            raise InvalidInputError(f"unsupported model type {type(model)!r}")
    return totals / inner_rollouts


def _refit(plan: PlanPosterior, samples: np.ndarray, weights: np.ndarray,
           smoothing: float) -> PlanPosterior:
    if plan.discrete:
        dist = frequency_refit(samples, weights, plan.dist.n_actions,
                               smoothing=smoothing)
    else:
        dist = moment_match(samples, weights, bounds=plan.dist.bounds,
                            std_floor=plan.dist.std_floor)
    return PlanPosterior(dist, plan.horizon, plan.iteration + 1)


# ---------------------------------------------------------------------------
# the reweight-and-refit update and its special-case references
# ---------------------------------------------------------------------------

def mirror_descent_update(plan: PlanPosterior, model, state,
                          likelihood: OptimalityLikelihood,
                          n_samples: int, seed: int, *,
                          inner_rollouts: int = 1,
                          smoothing: float = 1e-6
                          ) -> tuple[PlanPosterior, UpdateReport]:
    """Sample from the current plan, weight by the optimality likelihood
    of the returns, and refit the family (self-normalized reweighting)."""
    samples, clamps = _plan_samples(plan, n_samples, seed)
    returns = _batch_returns(model, state, samples, seed, inner_rollouts)
    weights, relaxed = likelihood.normalized_weights(returns)
    new_plan = _refit(plan, samples, weights, smoothing)
    report = UpdateReport(
        weights=weights, returns=returns,
        ess=float(1.0 / np.sum(weights**2)),
        best_return=float(returns.max()), mean_return=float(returns.mean()),
        weighted_return=float(weights @ returns),
        relaxed=relaxed, clamp_count=clamps)
    return new_plan, report


def cem_reference(plan: PlanPosterior, model, state, elite_fraction: float,
                  n_samples: int, seed: int, *, inner_rollouts: int = 1,
                  smoothing: float = 1e-6) -> PlanPosterior:
    """Textbook cross-entropy step: sort returns, refit on the top fraction.

    Exists solely as an equivalence target for the indicator likelihood;
    elite selection is its own code, the refit kernel is shared so that
    shared-seed runs agree bitwise.
    """
    samples, _ = _plan_samples(plan, n_samples, seed)
    returns = _batch_returns(model, state, samples, seed, inner_rollouts)
    n_elite = max(1, int(math.ceil(n_samples * elite_fraction)))
    order = np.argsort(-returns, kind="stable")
    weights = np.zeros(n_samples)
    weights[order[:n_elite]] = 1.0
    weights /= weights.sum()
    return _refit(plan, samples, weights, smoothing)


def mppi_reference(plan: PlanPosterior, model, state, eta: float,
                   n_samples: int, seed: int, *, inner_rollouts: int = 1,
                   smoothing: float = 1e-6) -> PlanPosterior:
    """Textbook path-integral step: exponentially weighted refit.

    Same arithmetic order as the exponential likelihood path (divide by
    eta, subtract max, exponentiate, normalize) so outputs match bitwise.
    """
    samples, _ = _plan_samples(plan, n_samples, seed)
    returns = _batch_returns(model, state, samples, seed, inner_rollouts)
    z = returns / eta
    z = z - z.max()
    weights = np.exp(z)
    weights /= weights.sum()
    return _refit(plan, samples, weights, smoothing)


# ---------------------------------------------------------------------------
# exact-weight update for small discrete plans
# ---------------------------------------------------------------------------

def enumerate_action_sequences(n_actions: int, horizon: int) -> np.ndarray:
    total = n_actions ** horizon
    if total > EXACT_PLAN_CAP:
        raise ResourceLimitError(
            f"exact plan update needs {total} sequences (cap {EXACT_PLAN_CAP})")
    grids = np.meshgrid(*[np.arange(n_actions)] * horizon, indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def exact_sequence_returns(mdp: TabularMDP, state: int,
                           sequences: np.ndarray) -> np.ndarray:
    """Exact expected return of each open-loop sequence from ``state``,
    averaging over stochastic dynamics by propagating the state
    distribution (no sampling anywhere)."""
    n, horizon = sequences.shape
    dist = np.zeros((n, mdp.n_states))
    dist[:, int(state)] = 1.0
    returns = np.zeros(n)
    kernel_by_action = np.transpose(mdp.transition, (1, 0, 2))  # (A, S, S)
    for h in range(horizon):
        acts = sequences[:, h]
        returns += (mdp.discount ** h) * np.sum(dist * mdp.reward[:, acts].T, axis=1)
        dist = np.einsum("ns,nst->nt", dist, kernel_by_action[acts])
    return returns


def mirror_descent_exact_update(plan: PlanPosterior, mdp: TabularMDP, state: int,
                                beta: float, prior: ActionPrior | None = None
                                ) -> tuple[PlanPosterior, dict]:
    """One exact-weight iteration for an enumerable discrete plan.

    Implemented as a full sweep of exact per-step coordinate mirror
    ascent on the plan bound (each factor is replaced by its closed-form
    optimum given the others). A raw joint reweight by exp(return/beta)
    overshoots the bound's optimum after the first iteration, so the
    coordinate form is the iterate that actually carries the monotone
    ascent guarantee being verified.
    """
    if not plan.discrete:
        raise InvalidInputError("exact updates require a discrete plan")
    if prior is None:
        prior = ActionPrior.uniform(plan.dist.n_actions)
    log_prior = prior.log_probs()
    sequences = enumerate_action_sequences(plan.dist.n_actions, plan.horizon)
    returns = exact_sequence_returns(mdp, state, sequences)

    log_q = plan.dist.log_probs().copy()
    horizon, n_actions = log_q.shape
    for h in range(horizon):
        per_seq = log_q[np.arange(horizon)[None, :], sequences].sum(axis=1)
        others = np.exp(per_seq - log_q[h, sequences[:, h]])
        cond = np.zeros(n_actions)
        np.add.at(cond, sequences[:, h], others * returns)
        logits = log_prior + cond / beta
        log_q[h] = logits - logsumexp(logits)

    new_plan = PlanPosterior(CategoricalSeq(log_q), plan.horizon, plan.iteration + 1)
    per_seq = log_q[np.arange(horizon)[None, :], sequences].sum(axis=1)
    q_seq = np.exp(per_seq)
    elbo = float(q_seq @ returns) / beta - float(
        q_seq @ (per_seq - log_prior[sequences].sum(axis=1)))
    return new_plan, {"elbo": elbo, "returns": returns}


# ---------------------------------------------------------------------------
# sequential Monte Carlo planning
# ---------------------------------------------------------------------------

def _proposal_rows(proposal, t: int, states: np.ndarray, mdp: TabularMDP) -> np.ndarray:
    if proposal is None or (isinstance(proposal, str) and proposal == "uniform"):
        return np.full((len(states), mdp.n_actions), 1.0 / mdp.n_actions)
    if hasattr(proposal, "prob_row"):
        return np.stack([np.asarray(proposal.prob_row(t, int(s)), dtype=np.float64)
                         for s in states])
    if callable(proposal):
        return np.stack([np.asarray(proposal(t, int(s)), dtype=np.float64)
                         for s in states])
    raise InvalidInputError(f"unsupported proposal type {type(proposal)!r}")


def _value_lookup(value_fn, beta: float, horizon_end: int):
    """Normalize a value source into v(t, states) -> array in log units.

    Soft values are stored in reward units; dividing by beta converts to
    the log-message scale the weights need. Beyond the horizon the
    continuation is zero.
    """
    if value_fn is None:
        return lambda t, states: np.zeros(len(states))
    if isinstance(value_fn, SoftValues):
        table = value_fn.v_table / value_fn.beta

        def lookup(t, states):
            if t >= table.shape[0]:
                return np.zeros(len(states))
            return table[t, states]
        return lookup
    if hasattr(value_fn, "v_value"):  # QFunctionApprox-derived values
        n_actions = value_fn.features.n_actions
        log_prior = np.full(n_actions, -np.log(n_actions))

        def lookup(t, states):
            if t >= horizon_end:
                return np.zeros(len(states))
            return np.array([value_fn.v_value(t, int(s), log_prior)
                             for s in states]) / value_fn.beta
        return lookup
    raise InvalidInputError(f"unsupported value function type {type(value_fn)!r}")


def smc_plan(state: int, model: TabularMDP, value_fn, proposal,
             n_particles: int, resample_threshold: float = 0.5, seed: int = 0, *,
             beta: float = 1.0, prior: ActionPrior | None = None,
             horizon: int | None = None, t0: int = 0,
             selection: str = "mode") -> tuple[ParticleSet, int, dict]:
    """Particle approximation of the action-sequence posterior.

    Per step the log-weight increment is

        r/beta + log p(a) - log proposal(a|s) + V(s')/beta - V(s)/beta

    i.e. the advantage as cited with the successor-expectation normalizer
    collapsed: the expectation is over the next state while the integrand
    is the value of the current one, so it reduces to V(s_t). The V terms
    telescope across steps, which is what makes the final weights exact
    importance weights for any (even rough) value function; V only shapes
    intermediate resampling.
    """
    if not isinstance(model, TabularMDP):
        raise InvalidInputError("smc_plan operates on tabular models")
    if n_particles < 1:
        raise InvalidInputError("n_particles must be >= 1")
    if prior is None:
        prior = ActionPrior.uniform(model.n_actions)
    horizon = horizon if horizon is not None else model.horizon - t0
    if horizon < 1 or t0 + horizon > model.horizon:
        raise InvalidInputError("plan horizon must fit the remaining episode")
    rng = stream(seed, "smc")
    value_at = _value_lookup(value_fn, beta, t0 + horizon)
    log_prior_table = prior.log_table(model.horizon, model.n_states)

    k = n_particles
    states = np.full(k, int(state), dtype=np.int64)
    log_w = np.zeros(k)
    actions = np.empty((k, horizon), dtype=np.int64)
    ancestry = np.tile(np.arange(k), (horizon, 1))
    ess_trace = []

    for h in range(horizon):
        t = t0 + h
        rows = _proposal_rows(proposal, t, states, model)
        acts = draw_categorical_batch(rng, rows)
        actions[:, h] = acts
        rewards = model.reward[states, acts]
        next_states = draw_categorical_batch(rng, model.transition[states, acts])
        with np.errstate(divide="ignore"):
            log_prop = np.log(rows[np.arange(k), acts])
        log_p_a = log_prior_table[t, states, acts]
        log_w = (log_w + rewards / beta + log_p_a - log_prop
                 + value_at(t + 1, next_states) - value_at(t, states))
        states = next_states

        norm = logsumexp(log_w)
        if not np.isfinite(norm):
            raise NumericError(
                "all SMC weights underflowed to zero; try a larger beta")
        weights = np.exp(log_w - norm)
        ess = float(1.0 / np.sum(weights**2))
        ess_trace.append(ess)
        if ess < resample_threshold * k and h < horizon - 1:
            parents = systematic_resample(float(rng.random()), weights)
            ancestry[h] = parents
            states = states[parents]
            actions[:, :h + 1] = actions[parents, :h + 1]
            log_w = np.zeros(k)

    weights = np.exp(log_w - logsumexp(log_w))
    marginal = np.zeros(model.n_actions)
    np.add.at(marginal, actions[:, 0], weights)
    if selection == "sample":
        chosen = draw_categorical(rng, marginal)
    else:
        chosen = int(np.argmax(marginal))
    particle_set = ParticleSet(actions, weights, ancestry)
    return particle_set, chosen, {"first_action_marginal": marginal,
                                  "ess_trace": ess_trace}


# ---------------------------------------------------------------------------
# model-predictive control loop
# ---------------------------------------------------------------------------

def _shift_plan(plan: PlanPosterior, env, new_horizon: int) -> PlanPosterior:
    """Left-shift warm start: drop the executed slot, refill from the prior."""
    template = default_plan(env, new_horizon)
    if plan.discrete:
        logits = np.vstack([plan.dist.logits[1:], template.dist.logits[-1:]])
        dist = CategoricalSeq(logits[:new_horizon])
    else:
        mean = np.vstack([plan.dist.mean[1:], template.dist.mean[-1:]])
        stddev = np.vstack([plan.dist.stddev[1:], template.dist.stddev[-1:]])
        dist = DiagGaussianSeq(mean[:new_horizon], stddev[:new_horizon],
                               bounds=plan.dist.bounds, std_floor=plan.dist.std_floor)
    return PlanPosterior(dist, new_horizon, plan.iteration)


def plan_mpc(env, planner_spec: PlannerSpec, config: MPCConfig
             ) -> tuple[Trajectory, list[dict]]:
    """Replan each step, execute the first action, warm-start the next step."""
    tabular = isinstance(env, TabularMDP)
    if not tabular and not isinstance(env, ContinuousEnv):
        raise InvalidInputError(f"unsupported environment type {type(env)!r}")
    if planner_spec.kind == "smc" and not tabular:
        raise InvalidInputError("SMC planning is defined for tabular models")
    total = env.horizon
    env_rng = stream(config.seed, "mpc-env")
    if tabular:
        state = draw_categorical(env_rng, env.initial_dist)
        states = np.empty(total + 1, dtype=np.int64)
        actions = np.empty(total, dtype=np.int64)
    else:
        state = env.initial_state.copy()
        states = np.empty((total + 1, env.state_dim))
        actions = np.empty((total, env.action_dim))
    rewards = np.empty(total)
    logs: list[dict] = []
    plan = None
    clamp_total = 0
    t = 0
    while t < total:
        start = time.perf_counter()
        horizon = min(config.horizon, total - t)
        if plan is None or config.warm_start == "reset":
            plan = default_plan(env, horizon)
        else:
            plan = _shift_plan(plan, env, horizon)

        report = None
        marginal_entropy = None
        if planner_spec.kind == "mirror-descent":
            for i in range(config.n_iterations):
                step_seed = fold((config.seed, "mpc", t, i))
                plan, report = mirror_descent_update(
                    plan, env, state, planner_spec.likelihood,
                    config.n_samples, step_seed,
                    inner_rollouts=config.inner_rollouts)
            ess = report.ess
            elbo_proxy = report.weighted_return + plan.entropy()
            best_return, mean_return = report.best_return, report.mean_return
            clamps = report.clamp_count
            n_iters = config.n_iterations
        else:
            particle_set, chosen, info = smc_plan(
                state, env, planner_spec.value_fn, planner_spec.proposal,
                config.n_samples, planner_spec.resample_threshold,
                fold((config.seed, "mpc-smc", t)),
                beta=planner_spec.beta, horizon=horizon, t0=t,
                selection=config.selection)
            marginal = info["first_action_marginal"]
            plan = None  # particles are not reused across steps
            ess = particle_set.ess()
            elbo_proxy = float("nan")
            best_return = mean_return = float("nan")
            clamps = 0
            n_iters = 1
            with np.errstate(divide="ignore"):
                marginal_entropy = float(-np.sum(plogp(
                    marginal, np.log(np.where(marginal > 0, marginal, 1.0)))))

        executed = min(config.replan_every, total - t)
        for offset in range(executed):
            if planner_spec.kind == "smc":
                action = chosen if offset == 0 else int(particle_set.actions[
                    int(np.argmax(particle_set.weights)), offset])
            else:
                if plan.discrete:
                    action = int(plan.dist.mode()[offset])
                else:
                    action = plan.dist.mean[offset].copy()
            states[t] = state
            if tabular:
                actions[t] = action
                rewards[t] = env.reward[state, action]
                state = draw_categorical(env_rng, env.transition[state, action])
            else:
                action, n_clamped = env.clamp(action)
                clamp_total += n_clamped
                actions[t] = action
                rewards[t] = float(env.reward_fn(state, action))
                state = np.asarray(env.step_fn(state, action), dtype=np.float64)
                if env.noise_std is not None:
                    state = state + env_rng.standard_normal(env.state_dim) * env.noise_std
            t += 1
        logs.append({
            "step": t - executed,
            "iter": n_iters,
            "elbo_proxy": elbo_proxy if planner_spec.kind == "mirror-descent" else marginal_entropy,
            "ess": ess,
            "best_return": best_return,
            "mean_return": mean_return,
            "entropy": plan.entropy() if plan is not None else marginal_entropy,
            "clamps": clamps,
            "wall_ms": (time.perf_counter() - start) * 1e3,
        })
    states[total] = state
    traj = Trajectory(states, actions, rewards, clamp_count=clamp_total)
    return traj, logs
