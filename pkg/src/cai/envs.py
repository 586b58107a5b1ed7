"""Fully-known environments, trajectory rollout, and the enumeration oracle.

Tabular MDPs here carry their complete transition kernel, reward table and
initial distribution, which is what makes exact enumeration (and therefore
ground-truth testing of every inference algorithm) possible. Continuous
environments are restricted to known deterministic-or-Gaussian dynamics.

A small registry maps string ids to versioned built-in environments so
that reference numbers in tests stay stable:

========================  =====================================================
``chain-N``               N-state deterministic chain; RIGHT moves toward the
                          end, reward 1 for the step that enters the last
                          state, last state absorbing with zero reward.
``gridworld-4x4``         deterministic moves, reward -1 per step, absorbing
                          goal in the far corner.
``two-arm-bandit``        one state, two actions, rewards [1, 0], horizon 1.
``random-mdp-{seed}``     random dense tabular MDP, |S| <= 5, |A| <= 3.
``double-integrator-1d``  continuous (x, v) point mass, quadratic cost,
                          actions clamped to [-1, 1].
========================  =====================================================
"""

from __future__ import annotations

import itertools
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from .dists import CategoricalSeq, DiagGaussianSeq, PolicyTable
from .errors import InvalidInputError, ResourceLimitError
from .numerics import draw_categorical
from .rng import as_generator, stream

DEFAULT_ENUM_CAP = 10**7
ENUM_CAP_ENV_VAR = "CAI_MAX_ENUM"


# ---------------------------------------------------------------------------
# core data types
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TabularMDP:
    """Finite MDP with explicit kernel ``transition[s, a, s']``."""

    transition: np.ndarray    # (S, A, S), rows sum to 1
    reward: np.ndarray        # (S, A)
    initial_dist: np.ndarray  # (S,)
    horizon: int
    discount: float = 1.0

    def __post_init__(self):
        transition = np.asarray(self.transition, dtype=np.float64)
        reward = np.asarray(self.reward, dtype=np.float64)
        initial = np.asarray(self.initial_dist, dtype=np.float64)
        if transition.ndim != 3 or transition.shape[0] != transition.shape[2]:
            raise InvalidInputError("transition must have shape (S, A, S)")
        s, a, _ = transition.shape
        if reward.shape != (s, a):
            raise InvalidInputError("reward must have shape (S, A)")
        if initial.shape != (s,):
            raise InvalidInputError("initial_dist must have shape (S,)")
        if np.any(transition < 0) or np.any(initial < 0):
            raise InvalidInputError("probabilities must be >= 0")
        if np.max(np.abs(transition.sum(axis=2) - 1.0)) > 1e-12:
            raise InvalidInputError("every transition row must sum to 1 within 1e-12")
        if abs(initial.sum() - 1.0) > 1e-12:
            raise InvalidInputError("initial_dist must sum to 1 within 1e-12")
        if not np.all(np.isfinite(reward)):
            raise InvalidInputError("rewards must be finite")
        if int(self.horizon) < 1:
            raise InvalidInputError("horizon must be a positive count")
        if not 0.0 < float(self.discount) <= 1.0:
            raise InvalidInputError("discount must lie in (0, 1]")
        object.__setattr__(self, "transition", transition)
        object.__setattr__(self, "reward", reward)
        object.__setattr__(self, "initial_dist", initial)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]

    def to_json(self) -> str:
        return json.dumps({
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "transition": self.transition.tolist(),
            "reward": self.reward.tolist(),
            "initial_dist": self.initial_dist.tolist(),
            "horizon": self.horizon,
            "discount": self.discount,
        })

    @classmethod
    def from_json(cls, text: str) -> "TabularMDP":
        doc = json.loads(text)
        mdp = cls(
            transition=np.array(doc["transition"], dtype=np.float64),
            reward=np.array(doc["reward"], dtype=np.float64),
            initial_dist=np.array(doc["initial_dist"], dtype=np.float64),
            horizon=int(doc["horizon"]),
            discount=float(doc.get("discount", 1.0)),
        )
        if mdp.n_states != int(doc["n_states"]) or mdp.n_actions != int(doc["n_actions"]):
            raise InvalidInputError("declared n_states/n_actions do not match arrays")
        return mdp


@dataclass(eq=False)
class ContinuousEnv:
    """Known continuous-control environment with bounded actions.

    ``step_fn`` and ``reward_fn`` must be pure. ``noise_std``, when given,
    adds diagonal Gaussian noise to the successor state; the draw comes
    from the rollout's stream so trajectories stay reproducible.
    ``step_batch``, when present, maps (k, state_dim) x (k, action_dim)
    states/actions at once and is used by samplers for speed.
    """

    state_dim: int
    action_dim: int
    action_bounds: np.ndarray  # (action_dim, 2)
    step_fn: object
    reward_fn: object
    initial_state: np.ndarray
    horizon: int
    noise_std: np.ndarray | None = None
    step_batch: object | None = None
    reward_batch: object | None = None

    def __post_init__(self):
        self.action_bounds = np.asarray(self.action_bounds, dtype=np.float64).reshape(-1, 2)
        if self.action_bounds.shape[0] != self.action_dim:
            raise InvalidInputError("action_bounds must give (min, max) per dimension")
        if np.any(~np.isfinite(self.action_bounds)) or np.any(
                self.action_bounds[:, 0] >= self.action_bounds[:, 1]):
            raise InvalidInputError("action_bounds must be finite with min < max")
        self.initial_state = np.asarray(self.initial_state, dtype=np.float64)
        if self.initial_state.shape != (self.state_dim,):
            raise InvalidInputError("initial_state must have shape (state_dim,)")
        if int(self.horizon) < 1:
            raise InvalidInputError("horizon must be a positive count")
        self.horizon = int(self.horizon)
        if self.noise_std is not None:
            self.noise_std = np.asarray(self.noise_std, dtype=np.float64)

    def clamp(self, action: np.ndarray) -> tuple[np.ndarray, int]:
        lo, hi = self.action_bounds[:, 0], self.action_bounds[:, 1]
        clamped = np.clip(action, lo, hi)
        return clamped, int(np.sum(clamped != action))


@dataclass(frozen=True)
class OptimalityModel:
    """Per-step optimality likelihood: log p(optimal | s, a) = r(s, a) / beta."""

    beta: float

    def __post_init__(self):
        if not (np.isfinite(self.beta) and self.beta > 0):
            raise InvalidInputError("beta must be a positive real")

    def step_log_likelihood(self, reward: float) -> float:
        return float(reward) / self.beta

    def trajectory_log_likelihood(self, rewards, discount: float = 1.0) -> float:
        rewards = np.asarray(rewards, dtype=np.float64)
        weights = discount ** np.arange(len(rewards))
        return float(np.dot(weights, rewards)) / self.beta


@dataclass(eq=False)
class Trajectory:
    """One episode: states (with terminal), actions, per-step rewards."""

    states: np.ndarray    # (T+1, ...) includes the terminal state
    actions: np.ndarray   # (T, ...)
    rewards: np.ndarray   # (T,)
    log_prob_actions: float = 0.0
    clamp_count: int = 0

    def __post_init__(self):
        self.rewards = np.asarray(self.rewards, dtype=np.float64)
        t = len(self.rewards)
        if len(self.actions) != t or len(self.states) not in (t, t + 1):
            raise InvalidInputError("states/actions/rewards lengths are inconsistent")

    def __len__(self) -> int:
        return len(self.rewards)


@dataclass(eq=False)
class TrajectorySet:
    """Exhaustive (or sampled) collection of trajectories, optionally with
    their exact probabilities under a given policy."""

    trajectories: list
    probs: np.ndarray | None = None

    def __post_init__(self):
        if self.probs is not None:
            self.probs = np.asarray(self.probs, dtype=np.float64)
            if len(self.probs) != len(self.trajectories):
                raise InvalidInputError("one probability per trajectory required")

    def __len__(self) -> int:
        return len(self.trajectories)


def trajectory_return(traj, discount: float = 1.0) -> float:
    """Discounted reward sum, gamma^t weighting from the episode start."""
    rewards = traj.rewards if isinstance(traj, Trajectory) else np.asarray(traj, dtype=np.float64)
    if len(rewards) == 0:
        raise InvalidInputError("trajectory must be non-empty")
    weights = discount ** np.arange(len(rewards))
    return float(np.dot(weights, rewards))


# ---------------------------------------------------------------------------
# actors and rollout
# ---------------------------------------------------------------------------

def _tabular_actor(actor, mdp: TabularMDP):
    """Normalize policy-or-plan objects into act(t, s, rng) -> (a, logp)."""
    if isinstance(actor, PolicyTable):
        def act(t, s, rng):
            row = actor.prob_row(t, s)
            a = draw_categorical(rng, row)
            return a, float(np.log(row[a]))
        return act
    if hasattr(actor, "prob_row"):  # SoftmaxPolicy quacks like a PolicyTable
        def act(t, s, rng):
            row = np.asarray(actor.prob_row(t, s), dtype=np.float64)
            a = draw_categorical(rng, row)
            return a, float(np.log(row[a]))
        return act
    if isinstance(actor, CategoricalSeq):
        log_probs = actor.log_probs()

        def act(t, s, rng):
            a = draw_categorical(rng, np.exp(log_probs[t]))
            return a, float(log_probs[t, a])
        return act
    if isinstance(actor, (list, tuple, np.ndarray)):
        seq = np.asarray(actor, dtype=np.int64)

        def act(t, s, rng):
            return int(seq[t]), 0.0  # fixed plan: deterministic, log-prob 0
        return act
    if callable(actor):
        def act(t, s, rng):
            row = np.asarray(actor(t, s), dtype=np.float64)
            a = draw_categorical(rng, row)
            return a, float(np.log(row[a]))
        return act
    raise InvalidInputError(f"unsupported actor type {type(actor)!r}")


def _rollout_tabular(mdp: TabularMDP, actor, rng) -> Trajectory:
    act = _tabular_actor(actor, mdp)
    states = np.empty(mdp.horizon + 1, dtype=np.int64)
    actions = np.empty(mdp.horizon, dtype=np.int64)
    rewards = np.empty(mdp.horizon, dtype=np.float64)
    log_prob = 0.0
    s = draw_categorical(rng, mdp.initial_dist)
    for t in range(mdp.horizon):
        states[t] = s
        a, lp = act(t, s, rng)
        actions[t] = a
        rewards[t] = mdp.reward[s, a]
        log_prob += lp
        s = draw_categorical(rng, mdp.transition[s, a])
    states[mdp.horizon] = s
    return Trajectory(states, actions, rewards, log_prob_actions=log_prob)


def _rollout_continuous(env: ContinuousEnv, actor, rng) -> Trajectory:
    states = np.empty((env.horizon + 1, env.state_dim))
    actions = np.empty((env.horizon, env.action_dim))
    rewards = np.empty(env.horizon)
    clamps = 0
    log_prob = 0.0
    if isinstance(actor, DiagGaussianSeq):
        if actor.horizon != env.horizon:
            raise InvalidInputError("plan horizon does not match environment horizon")
        batch = actor.sample(1, rng)
        planned, log_prob, clamps = batch.actions[0], float(batch.log_probs[0]), batch.clamp_count
        get_action = lambda t, s: planned[t]
    elif isinstance(actor, np.ndarray) or isinstance(actor, (list, tuple)):
        planned = np.asarray(actor, dtype=np.float64).reshape(env.horizon, env.action_dim)
        get_action = lambda t, s: planned[t]
    elif callable(actor):
        get_action = lambda t, s: np.asarray(actor(t, s, rng), dtype=np.float64)
    else:
        raise InvalidInputError(f"unsupported actor type {type(actor)!r}")

    s = env.initial_state.copy()
    for t in range(env.horizon):
        states[t] = s
        a, n_clamped = env.clamp(get_action(t, s))
        clamps += n_clamped
        actions[t] = a
        rewards[t] = float(env.reward_fn(s, a))
        s = np.asarray(env.step_fn(s, a), dtype=np.float64)
        if env.noise_std is not None:
            s = s + rng.standard_normal(env.state_dim) * env.noise_std
    states[env.horizon] = s
    return Trajectory(states, actions, rewards, log_prob_actions=log_prob,
                      clamp_count=clamps)


def rollout(env, actor, seed) -> Trajectory:
    """Sample one episode; all randomness derives from ``seed``.

    The in-step draw order is fixed (action first, then dynamics), which
    is what makes rollouts bit-reproducible.
    """
    rng = as_generator(seed)
    if isinstance(env, TabularMDP):
        return _rollout_tabular(env, actor, rng)
    if isinstance(env, ContinuousEnv):
        return _rollout_continuous(env, actor, rng)
    raise InvalidInputError(f"unsupported environment type {type(env)!r}")


def rollout_batch(env, actor, n: int, seed: int) -> list[Trajectory]:
    """n independent episodes on streams (seed, "rollout", i).

    Per-episode streams make the batch order-independent, so results are
    identical whether episodes run serially or concurrently.
    """
    return [rollout(env, actor, stream(seed, "rollout", i)) for i in range(n)]


# ---------------------------------------------------------------------------
# exhaustive enumeration (the ground-truth oracle)
# ---------------------------------------------------------------------------

def resolve_enum_cap(cap: int | None = None) -> int:
    if cap is not None:
        return int(cap)
    env_value = os.environ.get(ENUM_CAP_ENV_VAR)
    return int(env_value) if env_value else DEFAULT_ENUM_CAP


def check_enum_cap(mdp: TabularMDP, cap: int | None = None) -> None:
    cap = resolve_enum_cap(cap)
    required = (mdp.n_states * mdp.n_actions) ** mdp.horizon
    if required > cap:
        raise ResourceLimitError(
            f"enumeration needs a cap of at least {required} entries "
            f"(current cap {cap}; raise {ENUM_CAP_ENV_VAR} to override)")


@dataclass(eq=False)
class EnumeratedSupport:
    """All dynamically possible trajectories of an MDP, policy-independent.

    ``log_p_dyn`` holds log p(s1) + sum log p(s'|s,a); reweighting by any
    policy is then a cheap vectorized product, which is what keeps the
    oracle usable inside gradient checks.
    """

    states: np.ndarray     # (N, T+1) int
    actions: np.ndarray    # (N, T) int
    rewards: np.ndarray    # (N, T)
    log_p_dyn: np.ndarray  # (N,)

    def __len__(self) -> int:
        return self.states.shape[0]

    def returns(self, discount: float = 1.0) -> np.ndarray:
        weights = discount ** np.arange(self.rewards.shape[1])
        return self.rewards @ weights

    def policy_log_probs(self, log_table: np.ndarray) -> np.ndarray:
        """Sum of log pi(a_t | s_t, t) per trajectory for a (T, S, A) table."""
        t_idx = np.arange(self.actions.shape[1])[None, :]
        return log_table[t_idx, self.states[:, :-1], self.actions].sum(axis=1)


def enumerate_support(mdp: TabularMDP, *, cap: int | None = None,
                      transition: np.ndarray | None = None) -> EnumeratedSupport:
    """Depth-first expansion of every positive-probability trajectory.

    ``transition`` may override the env kernel (used for explicit
    q-dynamics); support is then taken from that kernel.
    """
    check_enum_cap(mdp, cap)
    kernel = mdp.transition if transition is None else np.asarray(transition, dtype=np.float64)
    horizon = mdp.horizon
    states_out, actions_out, logp_out = [], [], []

    init_support = np.nonzero(mdp.initial_dist > 0)[0]
    succ_support = [[np.nonzero(kernel[s, a] > 0)[0] for a in range(mdp.n_actions)]
                    for s in range(mdp.n_states)]

    # iterative DFS: each frame is (state path, log dynamics prob)
    for s1 in init_support:
        frames = [((int(s1),), (), float(np.log(mdp.initial_dist[s1])))]
        for _ in range(horizon):
            new_frames = []
            for path, acts, logp in frames:
                s = path[-1]
                for a in range(mdp.n_actions):
                    for s2 in succ_support[s][a]:
                        new_frames.append((path + (int(s2),), acts + (a,),
                                           logp + float(np.log(kernel[s, a, s2]))))
            frames = new_frames
        for path, acts, logp in frames:
            states_out.append(path)
            actions_out.append(acts)
            logp_out.append(logp)

    states = np.array(states_out, dtype=np.int64)
    actions = np.array(actions_out, dtype=np.int64)
    rewards = mdp.reward[states[:, :-1], actions]
    return EnumeratedSupport(states, actions, rewards, np.array(logp_out))


def enumerate_trajectories(mdp: TabularMDP, policy, *, cap: int | None = None) -> TrajectorySet:
    """Every support trajectory with its exact probability under ``policy``."""
    if not isinstance(policy, PolicyTable):
        policy = PolicyTable(np.asarray(policy, dtype=np.float64))
    support = enumerate_support(mdp, cap=cap)
    log_pi = support.policy_log_probs(policy.log_table(mdp.horizon))
    probs = np.exp(support.log_p_dyn + log_pi)
    keep = probs > 0
    trajectories = [
        Trajectory(support.states[i], support.actions[i], support.rewards[i],
                   log_prob_actions=float(log_pi[i]))
        for i in np.nonzero(keep)[0]
    ]
    return TrajectorySet(trajectories, probs[keep])


# ---------------------------------------------------------------------------
# built-in environment registry
# ---------------------------------------------------------------------------

def chain_mdp(n_states: int, horizon: int | None = None) -> TabularMDP:
    """Deterministic chain: RIGHT advances, LEFT retreats; entering the
    last state pays 1; the last state is absorbing with zero reward."""
    if n_states < 2:
        raise InvalidInputError("chain needs at least 2 states")
    s_count, a_count = n_states, 2
    transition = np.zeros((s_count, a_count, s_count))
    reward = np.zeros((s_count, a_count))
    for s in range(s_count - 1):
        transition[s, 0, max(s - 1, 0)] = 1.0          # LEFT
        transition[s, 1, s + 1] = 1.0                  # RIGHT
    transition[s_count - 1, :, s_count - 1] = 1.0      # absorbing goal
    reward[s_count - 2, 1] = 1.0
    initial = np.zeros(s_count)
    initial[0] = 1.0
    return TabularMDP(transition, reward, initial,
                      horizon=horizon if horizon is not None else n_states - 1)


def gridworld_4x4(horizon: int = 8) -> TabularMDP:
    """4x4 grid, actions up/down/left/right, -1 per step, goal 15 absorbing."""
    size, s_count, a_count = 4, 16, 4
    goal = s_count - 1
    deltas = [(-1, 0), (1, 0), (0, -1), (0, 1)]
    transition = np.zeros((s_count, a_count, s_count))
    reward = np.full((s_count, a_count), -1.0)
    for s in range(s_count):
        r, c = divmod(s, size)
        for a, (dr, dc) in enumerate(deltas):
            nr, nc = min(max(r + dr, 0), size - 1), min(max(c + dc, 0), size - 1)
            transition[s, a, nr * size + nc] = 1.0
    transition[goal] = 0.0
    transition[goal, :, goal] = 1.0
    reward[goal] = 0.0
    initial = np.zeros(s_count)
    initial[0] = 1.0
    return TabularMDP(transition, reward, initial, horizon=horizon)


def two_arm_bandit() -> TabularMDP:
    transition = np.ones((1, 2, 1))
    reward = np.array([[1.0, 0.0]])
    return TabularMDP(transition, reward, np.array([1.0]), horizon=1)


def random_mdp(seed: int, *, n_states: int | None = None, n_actions: int | None = None,
               horizon: int | None = None, deterministic: bool = False,
               point_init: bool | None = None) -> TabularMDP:
    """Seeded random tabular MDP.

    The default is a dense stochastic kernel (Dirichlet rows). With
    ``deterministic=True`` each (s, a) maps to a single successor and the
    initial state is a point mass, which makes the variational optimum
    coincide exactly with the enumeration posterior; the acceptance suite
    leans on that family for its equality checks.
    """
    rng = stream(seed, "random-mdp")
    s_count = int(n_states) if n_states else int(rng.integers(2, 6))
    a_count = int(n_actions) if n_actions else int(rng.integers(2, 4))
    t_count = int(horizon) if horizon else int(rng.integers(2, 5))
    if point_init is None:
        point_init = deterministic
    if deterministic:
        transition = np.zeros((s_count, a_count, s_count))
        succ = rng.integers(0, s_count, size=(s_count, a_count))
        for s in range(s_count):
            for a in range(a_count):
                transition[s, a, succ[s, a]] = 1.0
    else:
        transition = rng.dirichlet(np.ones(s_count), size=(s_count, a_count))
    reward = rng.uniform(-1.0, 1.0, size=(s_count, a_count))
    if point_init:
        initial = np.zeros(s_count)
        initial[int(rng.integers(0, s_count))] = 1.0
    else:
        initial = rng.dirichlet(np.ones(s_count))
    return TabularMDP(transition, reward, initial, horizon=t_count)


def double_integrator_1d(horizon: int = 40) -> ContinuousEnv:
    """1-D point mass: s = (x, v), s' = (x + v dt, v + a dt), r = -x^2 - 0.1 a^2."""
    dt = 0.1

    def step_fn(s, a):
        return np.array([s[0] + s[1] * dt, s[1] + a[0] * dt])

    def reward_fn(s, a):
        return -s[0] ** 2 - 0.1 * a[0] ** 2

    def step_batch(s, a):
        return np.stack([s[:, 0] + s[:, 1] * dt, s[:, 1] + a[:, 0] * dt], axis=1)

    def reward_batch(s, a):
        return -s[:, 0] ** 2 - 0.1 * a[:, 0] ** 2

    return ContinuousEnv(
        state_dim=2, action_dim=1, action_bounds=np.array([[-1.0, 1.0]]),
        step_fn=step_fn, reward_fn=reward_fn,
        initial_state=np.array([1.0, 0.0]), horizon=horizon,
        step_batch=step_batch, reward_batch=reward_batch)


_CHAIN_RE = re.compile(r"^chain-(\d+)$")
_RANDOM_RE = re.compile(r"^random-mdp-(\d+)$")


def make_env(env_id: str):
    """Build a registered environment from its string id."""
    match = _CHAIN_RE.match(env_id)
    if match:
        return chain_mdp(int(match.group(1)))
    match = _RANDOM_RE.match(env_id)
    if match:
        return random_mdp(int(match.group(1)))
    if env_id == "gridworld-4x4":
        return gridworld_4x4()
    if env_id == "two-arm-bandit":
        return two_arm_bandit()
    if env_id == "double-integrator-1d":
        return double_integrator_1d()
    raise InvalidInputError(
        f"unknown environment id {env_id!r}; valid ids: {', '.join(list_env_ids())}")


def list_env_ids() -> list[str]:
    return ["chain-N", "gridworld-4x4", "two-arm-bandit", "random-mdp-{seed}",
            "double-integrator-1d"]
