"""Amortised inference over a dataset: entropy-regularized policy
gradients, bootstrapped soft Q-learning, and their actor-critic
combination.

Function approximators are deliberately restricted to one-hot tabular and
fixed linear features with analytic gradients, so every update here can
be checked exactly against the enumeration oracle (finite differences of
the exact bound, zero TD error at the exact soft values).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .dists import ActionPrior, Categorical, PolicyTable
from .envs import (EnumeratedSupport, OptimalityModel, TabularMDP,
                   enumerate_support, rollout, trajectory_return)
from .errors import InvalidInputError, NumericError
from .numerics import logsumexp, plogp, softmax
from .rng import stream


# ---------------------------------------------------------------------------
# feature maps
# ---------------------------------------------------------------------------

class TabularStateFeatures:
    """One-hot features over (step, state); exact for finite horizons."""

    def __init__(self, horizon: int, n_states: int):
        self.horizon, self.n_states = horizon, n_states
        self.dim = horizon * n_states
        self.spec_id = f"tabular-ts:{horizon}x{n_states}"

    def index(self, t: int, s: int) -> int:
        return t * self.n_states + s

    def __call__(self, t: int, s: int) -> np.ndarray:
        vec = np.zeros(self.dim)
        vec[self.index(t, s)] = 1.0
        return vec

    def matrix(self) -> np.ndarray:
        """(T, S, F) stack of feature vectors."""
        return np.eye(self.dim).reshape(self.horizon, self.n_states, self.dim)


class LinearStateFeatures:
    """User-supplied state features, shared across steps."""

    def __init__(self, table: np.ndarray, horizon: int, spec_id: str = "linear"):
        self.table = np.asarray(table, dtype=np.float64)  # (S, F)
        self.horizon = horizon
        self.n_states = self.table.shape[0]
        self.dim = self.table.shape[1]
        self.spec_id = f"{spec_id}:{self.n_states}x{self.dim}"

    def __call__(self, t: int, s: int) -> np.ndarray:
        return self.table[s]

    def matrix(self) -> np.ndarray:
        return np.broadcast_to(self.table, (self.horizon,) + self.table.shape).copy()


class TabularStateActionFeatures:
    """One-hot features over (step, state, action) for Q approximation."""

    def __init__(self, horizon: int, n_states: int, n_actions: int):
        self.horizon, self.n_states, self.n_actions = horizon, n_states, n_actions
        self.dim = horizon * n_states * n_actions
        self.spec_id = f"tabular-tsa:{horizon}x{n_states}x{n_actions}"

    def index(self, t: int, s: int, a: int) -> int:
        return (t * self.n_states + s) * self.n_actions + a

    def __call__(self, t: int, s: int, a: int) -> np.ndarray:
        vec = np.zeros(self.dim)
        vec[self.index(t, s, a)] = 1.0
        return vec


# ---------------------------------------------------------------------------
# parameterised policy and Q-function
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class SoftmaxPolicy:
    """Linear-softmax policy: logits(t, s) = features(t, s) @ weights."""

    features: object
    weights: np.ndarray  # (F, A)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.features.dim:
            raise InvalidInputError("weights must have shape (feature_dim, n_actions)")

    @property
    def n_actions(self) -> int:
        return self.weights.shape[1]

    def logits(self, t: int, s: int) -> np.ndarray:
        return self.features(t, s) @ self.weights

    def dist(self, t: int, s: int) -> Categorical:
        return Categorical(self.logits(t, s))

    def prob_row(self, t: int, s: int) -> np.ndarray:
        return softmax(self.logits(t, s))

    def log_table(self, horizon: int) -> np.ndarray:
        logits = np.einsum("tsf,fa->tsa", self.features.matrix()[:horizon], self.weights)
        return logits - logsumexp(logits, axis=-1)[..., None]

    def as_policy_table(self, horizon: int) -> PolicyTable:
        return PolicyTable(np.exp(self.log_table(horizon)))

    @classmethod
    def tabular(cls, mdp: TabularMDP) -> "SoftmaxPolicy":
        feats = TabularStateFeatures(mdp.horizon, mdp.n_states)
        return cls(feats, np.zeros((feats.dim, mdp.n_actions)))


@dataclass(eq=False)
class QFunctionApprox:
    """Linear soft state-action value function at temperature beta."""

    features: object
    weights: np.ndarray  # (F,)
    beta: float

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (self.features.dim,):
            raise InvalidInputError("weights must have shape (feature_dim,)")
        if self.beta <= 0:
            raise InvalidInputError("beta must be > 0")

    def q_row(self, t: int, s: int) -> np.ndarray:
        feats = self.features
        if isinstance(feats, TabularStateActionFeatures):
            base = feats.index(t, s, 0)
            return self.weights[base:base + feats.n_actions]
        return np.array([float(self.weights @ feats(t, s, a))
                         for a in range(feats.n_actions)])

    def q_value(self, t: int, s: int, a: int) -> float:
        return float(self.q_row(t, s)[a])

    def v_value(self, t: int, s: int, log_prior_row: np.ndarray) -> float:
        """Soft value: beta * log sum_a p(a) exp(Q / beta)."""
        return self.beta * logsumexp(log_prior_row + self.q_row(t, s) / self.beta)

    def q_table(self) -> np.ndarray:
        feats = self.features
        if not isinstance(feats, TabularStateActionFeatures):
            raise InvalidInputError("q_table needs tabular state-action features")
        return self.weights.reshape(feats.horizon, feats.n_states, feats.n_actions)

    @classmethod
    def tabular(cls, mdp: TabularMDP, beta: float) -> "QFunctionApprox":
        feats = TabularStateActionFeatures(mdp.horizon, mdp.n_states, mdp.n_actions)
        return cls(feats, np.zeros(feats.dim), beta)


# ---------------------------------------------------------------------------
# replay and configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Transition:
    state: int
    action: int
    reward: float
    next_state: int
    step: int


class ReplayDataset:
    """FIFO transition store; entries are immutable once inserted."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise InvalidInputError("capacity must be >= 1")
        self.capacity = int(capacity)
        self._items: list[Transition] = []
        self._next = 0

    def add(self, transition: Transition) -> None:
        if len(self._items) < self.capacity:
            self._items.append(transition)
        else:
            self._items[self._next] = transition
            self._next = (self._next + 1) % self.capacity

    def add_trajectory(self, traj) -> None:
        for t in range(len(traj)):
            self.add(Transition(int(traj.states[t]), int(traj.actions[t]),
                                float(traj.rewards[t]), int(traj.states[t + 1]), t))

    def sample(self, batch_size: int, rng) -> list[Transition]:
        idx = rng.integers(0, len(self._items), size=batch_size)
        return [self._items[i] for i in idx]

    def __len__(self) -> int:
        return len(self._items)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    batch_size: int = 32
    n_iterations: int = 100
    beta: float = 1.0
    baseline: str = "none"               # or "mean-return"
    gradient_estimator: str = "exact-expectation"  # or "sampled"
    seed: int = 0
    target_refresh: int = 1              # critic target snapshot period; 1 = live

    def __post_init__(self):
        if self.learning_rate <= 0 or self.batch_size < 1 or self.beta <= 0:
            raise InvalidInputError("learning_rate, batch_size and beta must be positive")
        if self.baseline not in ("none", "mean-return"):
            raise InvalidInputError("baseline must be 'none' or 'mean-return'")
        if self.gradient_estimator not in ("exact-expectation", "sampled"):
            raise InvalidInputError("gradient_estimator must be 'exact-expectation' or 'sampled'")


# ---------------------------------------------------------------------------
# policy gradients
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GradientReport:
    gradient: np.ndarray
    grad_norm: float
    elbo_estimate: float
    estimator: str


def exact_policy_gradient(mdp: TabularMDP, policy: SoftmaxPolicy, beta: float,
                          prior: ActionPrior | None = None, *,
                          support: EnumeratedSupport | None = None) -> tuple[np.ndarray, float]:
    """Gradient of the enumerated bound with respect to the policy weights.

    Differentiates sum_tau q(tau) [return/beta + log prior - log pi]
    term by term, so it matches finite differences of the exact bound to
    machine precision (the score terms that cancel in expectation are
    kept).
    """
    if prior is None:
        prior = ActionPrior.uniform(mdp.n_actions)
    if support is None:
        support = enumerate_support(mdp)
    log_pi = policy.log_table(mdp.horizon)
    log_prior = prior.log_table(mdp.horizon, mdp.n_states)
    pi = np.exp(log_pi)

    traj_log_pi = support.policy_log_probs(log_pi)
    traj_log_prior = support.policy_log_probs(log_prior)
    q_traj = np.exp(support.log_p_dyn + traj_log_pi)
    g_traj = support.returns(mdp.discount) / beta + traj_log_prior - traj_log_pi
    elbo = float(q_traj @ g_traj)

    horizon = mdp.horizon
    feats = policy.features.matrix()[:horizon]             # (T, S, F)
    phi = feats[np.arange(horizon)[None, :], support.states[:, :-1]]   # (N, T, F)
    pi_rows = pi[np.arange(horizon)[None, :], support.states[:, :-1]]  # (N, T, A)
    onehot = np.zeros_like(pi_rows)
    n_idx = np.arange(support.actions.shape[0])[:, None]
    onehot[n_idx, np.arange(horizon)[None, :], support.actions] = 1.0
    delta = onehot - pi_rows
    coeff = q_traj * (g_traj - 1.0)  # the -1 carries d(-log pi)/dW exactly
    grad = np.einsum("n,ntf,nta->fa", coeff, phi, delta)
    return grad, elbo


def sampled_policy_gradient(policy: SoftmaxPolicy, batch: list, config: TrainConfig,
                            prior: ActionPrior | None = None) -> tuple[np.ndarray, float]:
    """Score-function estimator from on-policy trajectories."""
    if not batch:
        raise InvalidInputError("empty trajectory batch")
    if prior is None:
        prior = ActionPrior.uniform(policy.n_actions)
    returns = np.array([trajectory_return(traj) for traj in batch]) / config.beta
    baseline = returns.mean() if config.baseline == "mean-return" else 0.0
    grad = np.zeros_like(policy.weights)
    elbo_samples = np.empty(len(batch))
    for i, traj in enumerate(batch):
        score = np.zeros_like(policy.weights)
        extra = 0.0
        for t in range(len(traj)):
            s, a = int(traj.states[t]), int(traj.actions[t])
            row = policy.prob_row(t, s)
            phi = policy.features(t, s)
            onehot = np.zeros(policy.n_actions)
            onehot[a] = 1.0
            score += np.outer(phi, onehot - row)
            extra += float(prior.log_probs(t, s)[a]) - float(np.log(row[a]))
        weight = (returns[i] - baseline) + extra
        grad += score * weight
        elbo_samples[i] = returns[i] + extra
    grad /= len(batch)
    if not np.all(np.isfinite(grad)):
        bad = [i for i, traj in enumerate(batch)
               if not np.isfinite(elbo_samples[i])]
        raise NumericError(f"non-finite policy gradient (trajectory index {bad[:1]})")
    return grad, float(elbo_samples.mean())


def policy_gradient_step(policy: SoftmaxPolicy, batch: list | None, config: TrainConfig,
                         mdp: TabularMDP | None = None,
                         prior: ActionPrior | None = None, *,
                         support: EnumeratedSupport | None = None
                         ) -> tuple[SoftmaxPolicy, GradientReport]:
    """One ascent step on the amortised bound."""
    if config.gradient_estimator == "exact-expectation":
        if mdp is None:
            raise InvalidInputError("exact-expectation estimator needs the MDP")
        grad, elbo = exact_policy_gradient(mdp, policy, config.beta, prior, support=support)
    else:
        grad, elbo = sampled_policy_gradient(policy, batch, config, prior)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite policy gradient")
    new_policy = SoftmaxPolicy(policy.features, policy.weights + config.learning_rate * grad)
    report = GradientReport(grad, float(np.linalg.norm(grad)), elbo,
                            config.gradient_estimator)
    return new_policy, report


# ---------------------------------------------------------------------------
# soft Q-learning
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class TDReport:
    td_errors: np.ndarray
    max_abs: float
    mean_squared: float
    targets: np.ndarray


def soft_td_targets(qfunc: QFunctionApprox, batch: list[Transition],
                    target_variant: str = "expected-V",
                    mdp: TabularMDP | None = None,
                    prior: ActionPrior | None = None,
                    horizon: int | None = None) -> np.ndarray:
    """Bootstrapped targets r + continuation; final-step targets use r only.

    The successor expectation uses the known tabular kernel when ``mdp``
    is given, otherwise the single sampled successor.
    """
    if target_variant not in ("expected-V", "optimistic"):
        raise InvalidInputError("target_variant must be 'expected-V' or 'optimistic'")
    feats = qfunc.features
    horizon = horizon or getattr(feats, "horizon", None)
    if horizon is None:
        raise InvalidInputError("horizon is required for bootstrap cutoff")
    if prior is None:
        prior = ActionPrior.uniform(getattr(feats, "n_actions"))
    beta = qfunc.beta
    targets = np.empty(len(batch))
    for i, tr in enumerate(batch):
        if tr.step >= horizon - 1:
            targets[i] = tr.reward
            continue
        t_next = tr.step + 1
        if mdp is not None:
            succ = np.nonzero(mdp.transition[tr.state, tr.action] > 0)[0]
            probs = mdp.transition[tr.state, tr.action, succ]
            values = np.array([qfunc.v_value(t_next, int(s2), prior.log_probs(t_next, int(s2)))
                               for s2 in succ])
        else:
            probs = np.array([1.0])
            values = np.array([qfunc.v_value(t_next, tr.next_state,
                                             prior.log_probs(t_next, tr.next_state))])
        if target_variant == "expected-V":
            cont = float(probs @ values)
        else:
            cont = beta * logsumexp(np.log(probs) + values / beta)
        targets[i] = tr.reward + cont
    if not np.all(np.isfinite(targets)):
        raise NumericError("non-finite soft TD target")
    return targets


def soft_q_step(qfunc: QFunctionApprox, batch: list[Transition], config: TrainConfig,
                target_variant: str = "expected-V",
                mdp: TabularMDP | None = None,
                prior: ActionPrior | None = None,
                target_qfunc: QFunctionApprox | None = None
                ) -> tuple[QFunctionApprox, TDReport]:
    """One semi-gradient step on the squared soft-TD error.

    For tabular features each touched cell moves by the learning rate
    times its mean TD error (the classic tabular batch update), so a
    full-support batch with learning rate 1 is an exact one-shot
    regression onto the targets. General linear features take a
    batch-mean gradient step.
    """
    if not batch:
        raise InvalidInputError("empty transition batch")
    targets = soft_td_targets(target_qfunc or qfunc, batch, target_variant, mdp, prior)
    feats = qfunc.features
    new_weights = qfunc.weights.copy()
    td = np.empty(len(batch))
    tabular = isinstance(feats, TabularStateActionFeatures)
    cell_sum: dict[int, float] = {}
    cell_count: dict[int, int] = {}
    grad = None if tabular else np.zeros_like(new_weights)
    for i, tr in enumerate(batch):
        pred = qfunc.q_value(tr.step, tr.state, tr.action)
        delta = pred - targets[i]
        td[i] = delta
        if tabular:
            idx = feats.index(tr.step, tr.state, tr.action)
            cell_sum[idx] = cell_sum.get(idx, 0.0) + delta
            cell_count[idx] = cell_count.get(idx, 0) + 1
        else:
            grad += delta * feats(tr.step, tr.state, tr.action)
    if tabular:
        for idx, total in cell_sum.items():
            new_weights[idx] -= config.learning_rate * total / cell_count[idx]
    else:
        new_weights -= config.learning_rate * grad / len(batch)
    new_q = QFunctionApprox(feats, new_weights, qfunc.beta)
    return new_q, TDReport(td, float(np.max(np.abs(td))), float(np.mean(td**2)), targets)


# ---------------------------------------------------------------------------
# soft actor-critic
# ---------------------------------------------------------------------------

def critic_posterior(qfunc: QFunctionApprox, prior: ActionPrior,
                     horizon: int, n_states: int) -> PolicyTable:
    """Exact KL projection of the critic: rows p(a) exp((Q - V)/beta)."""
    beta = qfunc.beta
    probs = np.empty((horizon, n_states, prior.n_actions))
    for t in range(horizon):
        for s in range(n_states):
            log_prior = prior.log_probs(t, s)
            q_row = qfunc.q_row(t, s)
            logits = log_prior + q_row / beta
            probs[t, s] = softmax(logits)
    return PolicyTable(probs)


def soft_actor_critic_loop(env: TabularMDP, config: TrainConfig,
                           prior: ActionPrior | None = None, *,
                           episodes_per_iter: int = 8,
                           critic_steps: int = 1,
                           replay_capacity: int = 4096,
                           target_variant: str = "expected-V"
                           ) -> tuple[SoftmaxPolicy, QFunctionApprox, list[dict]]:
    """Alternate bootstrapped critic updates with exact actor projections.

    For tabular features the actor update is an exact KL projection onto
    the critic's posterior, so at convergence the actor equals
    ``optimal_posterior`` of its own critic.
    """
    if not isinstance(env, TabularMDP):
        raise InvalidInputError("soft_actor_critic_loop needs a tabular MDP")
    if prior is None:
        prior = ActionPrior.uniform(env.n_actions)
    qfunc = QFunctionApprox.tabular(env, config.beta)
    policy = SoftmaxPolicy.tabular(env)
    replay = ReplayDataset(replay_capacity)
    log: list[dict] = []
    target = qfunc
    beta = config.beta

    for it in range(config.n_iterations):
        start = time.perf_counter()
        batch_rng = stream(config.seed, "sac-batch", it)
        trajs = [rollout(env, policy, stream(config.seed, "sac-collect", it, e))
                 for e in range(episodes_per_iter)]
        for traj in trajs:
            replay.add_trajectory(traj)
        if config.target_refresh > 1 and it % config.target_refresh == 0:
            target = QFunctionApprox(qfunc.features, qfunc.weights.copy(), beta)
        elif config.target_refresh <= 1:
            target = qfunc
        td_norm = 0.0
        for _ in range(critic_steps):
            batch = replay.sample(config.batch_size, batch_rng)
            qfunc, report = soft_q_step(qfunc, batch, config, target_variant,
                                        mdp=env, prior=prior, target_qfunc=target)
            td_norm = float(np.sqrt(report.mean_squared))
        table = critic_posterior(qfunc, prior, env.horizon, env.n_states)
        with np.errstate(divide="ignore"):
            policy = SoftmaxPolicy(policy.features,
                                   np.log(table.probs).reshape(policy.weights.shape))

        returns = np.array([trajectory_return(traj, env.discount) for traj in trajs])
        log_pi = policy.log_table(env.horizon)
        probs = np.exp(log_pi)
        row_entropy = -np.sum(plogp(probs, log_pi), axis=-1)
        entropies = [float(np.mean([row_entropy[t, int(traj.states[t])]
                                    for t in range(len(traj))])) for traj in trajs]
        elbo_estimate = float(np.mean(returns / beta
                                      + [sum(row_entropy[t, int(traj.states[t])]
                                             for t in range(len(traj)))
                                         - len(traj) * np.log(env.n_actions)
                                         for traj in trajs]))
        if not np.isfinite(elbo_estimate):
            log.append({"iter": it, "aborted": True})
            break
        log.append({
            "iter": it,
            "elbo": elbo_estimate,
            "return": float(returns.mean()),
            "entropy": float(np.mean(entropies)),
            "grad_norm": td_norm,
            "wall_ms": (time.perf_counter() - start) * 1e3,
        })
    return policy, qfunc, log


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def collect_batch(env: TabularMDP, policy, n: int, seed: int) -> list:
    """On-policy trajectory batch on streams (seed, "collect", i)."""
    return [rollout(env, policy, stream(seed, "collect", i)) for i in range(n)]


def evaluate_policy(env: TabularMDP, policy, n_episodes: int, seed: int,
                    optimality: OptimalityModel | None = None) -> dict:
    """Seeded Monte Carlo metrics: return, entropy (analytic at visited
    states), and a bound estimate, each with a standard error."""
    if n_episodes < 1:
        raise InvalidInputError("n_episodes must be >= 1")
    beta = optimality.beta if optimality is not None else 1.0
    from .diagnostics import as_log_policy_table
    log_pi = as_log_policy_table(policy, env.horizon, env.n_states)
    probs = np.exp(log_pi)
    row_entropy = -np.sum(plogp(probs, log_pi), axis=-1)
    actor = PolicyTable(probs)

    returns = np.empty(n_episodes)
    entropies = np.empty(n_episodes)
    elbos = np.empty(n_episodes)
    for i in range(n_episodes):
        traj = rollout(env, actor, stream(seed, "eval", i))
        returns[i] = trajectory_return(traj, env.discount)
        visited = [row_entropy[t, int(traj.states[t])] for t in range(len(traj))]
        entropies[i] = float(np.mean(visited))
        elbos[i] = returns[i] / beta + float(np.sum(visited))
    ddof = 1 if n_episodes > 1 else 0
    scale = np.sqrt(n_episodes)
    return {
        "mean_return": float(returns.mean()),
        "return_stderr": float(returns.std(ddof=ddof) / scale),
        "mean_entropy": float(entropies.mean()),
        "elbo_estimate": float(elbos.mean()),
        "elbo_stderr": float(elbos.std(ddof=ddof) / scale),
        "n_episodes": n_episodes,
    }
