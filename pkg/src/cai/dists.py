"""Action distributions: categoricals, policy tables, diagonal Gaussian
sequences, and action priors.

These are the variational objects every inference algorithm in the
toolkit optimizes. All log-probabilities, entropies and KLs are exact;
sampling is reproducible from a seed via :mod:`cai.rng`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateWeightsError, InvalidInputError
from .numerics import draw_categorical_batch, logsumexp, plogp
from .rng import as_generator

DEFAULT_STD_FLOOR = 1e-4

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True, eq=False)
class Categorical:
    """Finite distribution over action indices, parameterised by logits."""

    logits: np.ndarray

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 1 or logits.size == 0:
            raise InvalidInputError("logits must be a non-empty 1-D array")
        if np.any(np.isnan(logits)) or np.any(logits == np.inf):
            raise InvalidInputError("logits must be finite (or -inf for zero mass)")
        if not np.any(np.isfinite(logits)):
            raise InvalidInputError("at least one logit must be finite")
        object.__setattr__(self, "logits", logits)

    @property
    def n_actions(self) -> int:
        return self.logits.shape[0]

    def log_probs(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits)

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def log_prob(self, value: int) -> float:
        if not 0 <= int(value) < self.n_actions:
            raise InvalidInputError(f"value {value} outside support of size {self.n_actions}")
        return float(self.log_probs()[int(value)])

    def entropy(self) -> float:
        lp = self.log_probs()
        return float(-np.sum(plogp(np.exp(lp), lp)))

    def sample(self, n: int, seed) -> np.ndarray:
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        rng = as_generator(seed)
        rows = np.tile(self.probs(), (n, 1))
        return draw_categorical_batch(rng, rows)

    @classmethod
    def from_probs(cls, probs) -> "Categorical":
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(np.log(probs))


@dataclass(eq=False)
class PolicyTable:
    """Per-state categorical policy, optionally time-varying.

    ``probs`` has shape (S, A) for a stationary policy or (T, S, A) for a
    per-step policy (what the backward pass produces). Rows must already
    be normalized; this class never renormalizes silently.
    """

    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim not in (2, 3):
            raise InvalidInputError("probs must have shape (S, A) or (T, S, A)")
        if np.any(probs < 0) or not np.all(np.isfinite(probs)):
            raise InvalidInputError("policy probabilities must be finite and >= 0")
        sums = probs.sum(axis=-1)
        if np.max(np.abs(sums - 1.0)) > 1e-6:
            raise InvalidInputError("policy rows must sum to 1")
        self.probs = probs

    @property
    def stationary(self) -> bool:
        return self.probs.ndim == 2

    @property
    def n_states(self) -> int:
        return self.probs.shape[-2]

    @property
    def n_actions(self) -> int:
        return self.probs.shape[-1]

    def prob_row(self, t: int, s: int) -> np.ndarray:
        return self.probs[s] if self.stationary else self.probs[t, s]

    def dist(self, t: int, s: int) -> Categorical:
        return Categorical.from_probs(self.prob_row(t, s))

    def log_prob(self, t: int, s: int, a: int) -> float:
        p = self.prob_row(t, s)[a]
        return float(np.log(p)) if p > 0 else -np.inf

    def log_table(self, horizon: int) -> np.ndarray:
        """(T, S, A) log-probability table, broadcasting a stationary policy."""
        p = self.probs if not self.stationary else np.broadcast_to(
            self.probs, (horizon,) + self.probs.shape)
        if p.shape[0] != horizon:
            raise InvalidInputError(f"policy covers {p.shape[0]} steps, need {horizon}")
        with np.errstate(divide="ignore"):
            return np.log(p)

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "PolicyTable":
        return cls(np.full((n_states, n_actions), 1.0 / n_actions))


@dataclass(eq=False)
class CategoricalSeq:
    """Factorized distribution over a discrete action sequence (a plan)."""

    logits: np.ndarray  # (H, A)

    def __post_init__(self):
        logits = np.asarray(self.logits, dtype=np.float64)
        if logits.ndim != 2 or logits.shape[0] < 1:
            raise InvalidInputError("logits must have shape (H, A) with H >= 1")
        self.logits = logits

    @property
    def horizon(self) -> int:
        return self.logits.shape[0]

    @property
    def n_actions(self) -> int:
        return self.logits.shape[1]

    def log_probs(self) -> np.ndarray:
        return self.logits - logsumexp(self.logits, axis=1)[:, None]

    def probs(self) -> np.ndarray:
        return np.exp(self.log_probs())

    def step_dist(self, h: int) -> Categorical:
        return Categorical(self.logits[h])

    def log_prob(self, seq) -> float | np.ndarray:
        seq = np.asarray(seq, dtype=np.int64)
        lp = self.log_probs()
        if seq.ndim == 1:
            if seq.shape[0] != self.horizon:
                raise InvalidInputError("sequence length does not match horizon")
            return float(lp[np.arange(self.horizon), seq].sum())
        if seq.shape[1] != self.horizon:
            raise InvalidInputError("sequence length does not match horizon")
        return lp[np.arange(self.horizon)[None, :], seq].sum(axis=1)

    def entropy(self) -> float:
        lp = self.log_probs()
        return float(-np.sum(plogp(np.exp(lp), lp)))

    def sample(self, n: int, seed) -> np.ndarray:
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        rng = as_generator(seed)
        p = self.probs()
        out = np.empty((n, self.horizon), dtype=np.int64)
        for h in range(self.horizon):
            out[:, h] = draw_categorical_batch(rng, np.tile(p[h], (n, 1)))
        return out

    def mode(self) -> np.ndarray:
        return np.argmax(self.logits, axis=1)

    @classmethod
    def uniform(cls, horizon: int, n_actions: int) -> "CategoricalSeq":
        return cls(np.zeros((horizon, n_actions)))


@dataclass(eq=False)
class GaussianSampleBatch:
    """Draws from a :class:`DiagGaussianSeq` plus clamp bookkeeping.

    ``log_probs`` are densities of the pre-clamp values: clamping happens
    after sampling so the Gaussian family stays closed under reweighting.
    """

    actions: np.ndarray     # (n, H, D), clamped to bounds
    log_probs: np.ndarray   # (n,)
    clamp_count: int


@dataclass(eq=False)
class DiagGaussianSeq:
    """Independent Gaussian over each step/dimension of an action sequence."""

    mean: np.ndarray                  # (H, D)
    stddev: np.ndarray                # (H, D)
    bounds: np.ndarray | None = None  # (D, 2) min/max per dimension
    std_floor: float = DEFAULT_STD_FLOOR

    def __post_init__(self):
        mean = np.atleast_2d(np.asarray(self.mean, dtype=np.float64))
        stddev = np.atleast_2d(np.asarray(self.stddev, dtype=np.float64))
        if mean.shape != stddev.shape or mean.shape[0] < 1:
            raise InvalidInputError("mean/stddev must share shape (H, D), H >= 1")
        if np.any(~np.isfinite(mean)) or np.any(~np.isfinite(stddev)):
            raise InvalidInputError("mean/stddev must be finite")
        # the floor is an invariant, not a validation error: planner refits rely on it
        stddev = np.maximum(stddev, self.std_floor)
        self.mean, self.stddev = mean, stddev
        if self.bounds is not None:
            bounds = np.asarray(self.bounds, dtype=np.float64).reshape(-1, 2)
            if bounds.shape[0] != mean.shape[1]:
                raise InvalidInputError("bounds must give (min, max) per action dimension")
            if np.any(~np.isfinite(bounds)) or np.any(bounds[:, 0] >= bounds[:, 1]):
                raise InvalidInputError("bounds must be finite with min < max")
            self.bounds = bounds

    @property
    def horizon(self) -> int:
        return self.mean.shape[0]

    @property
    def dim(self) -> int:
        return self.mean.shape[1]

    def log_prob(self, value) -> float | np.ndarray:
        value = np.asarray(value, dtype=np.float64)
        single = value.ndim == 2
        if single:
            value = value[None]
        if value.shape[1:] != self.mean.shape:
            raise InvalidInputError("value shape does not match distribution")
        z = (value - self.mean) / self.stddev
        lp = -0.5 * (z * z + _LOG_2PI) - np.log(self.stddev)
        out = lp.sum(axis=(1, 2))
        return float(out[0]) if single else out

    def entropy(self) -> float:
        return float(np.sum(0.5 * (1.0 + _LOG_2PI) + np.log(self.stddev)))

    def sample(self, n: int, seed) -> GaussianSampleBatch:
        if n < 1:
            raise InvalidInputError("n must be >= 1")
        rng = as_generator(seed)
        raw = self.mean + self.stddev * rng.standard_normal((n,) + self.mean.shape)
        lp = self.log_prob(raw)
        if self.bounds is None:
            return GaussianSampleBatch(raw, np.atleast_1d(lp), 0)
        lo, hi = self.bounds[:, 0], self.bounds[:, 1]
        clamped = np.clip(raw, lo, hi)
        n_clamped = int(np.sum(clamped != raw))
        return GaussianSampleBatch(clamped, np.atleast_1d(lp), n_clamped)


@dataclass(eq=False)
class ActionPrior:
    """Prior over actions: uniform, or the output of an amortised policy.

    The amortised variant lets an iterative scheme anchor its posterior
    to a previously trained policy via the KL term.
    """

    variant: str
    n_actions: int | None = None
    policy: object | None = None        # anything with prob_row(t, s) or probs_row(t, s)
    bounds: np.ndarray | None = None    # continuous uniform support

    @classmethod
    def uniform(cls, n_actions: int) -> "ActionPrior":
        return cls(variant="uniform", n_actions=int(n_actions))

    @classmethod
    def uniform_box(cls, bounds) -> "ActionPrior":
        bounds = np.asarray(bounds, dtype=np.float64).reshape(-1, 2)
        return cls(variant="uniform", bounds=bounds)

    @classmethod
    def amortised(cls, policy, n_actions: int) -> "ActionPrior":
        return cls(variant="amortised", n_actions=int(n_actions), policy=policy)

    def log_probs(self, t: int = 0, s: int = 0) -> np.ndarray:
        if self.variant == "uniform":
            if self.n_actions is None:
                raise InvalidInputError("discrete uniform prior needs n_actions")
            return np.full(self.n_actions, -np.log(self.n_actions))
        row = _policy_row(self.policy, t, s)
        with np.errstate(divide="ignore"):
            return np.log(row)

    def log_table(self, horizon: int, n_states: int) -> np.ndarray:
        """(T, S, A) log-prior table."""
        if self.variant == "uniform":
            return np.full((horizon, n_states, self.n_actions), -np.log(self.n_actions))
        out = np.empty((horizon, n_states, self.n_actions))
        for t in range(horizon):
            for s in range(n_states):
                out[t, s] = self.log_probs(t, s)
        return out

    def log_density(self) -> float:
        """Log-density of the uniform box prior (continuous actions)."""
        if self.variant != "uniform" or self.bounds is None:
            raise InvalidInputError("log_density applies to continuous uniform priors")
        return float(-np.sum(np.log(self.bounds[:, 1] - self.bounds[:, 0])))


def _policy_row(policy, t: int, s: int) -> np.ndarray:
    if hasattr(policy, "prob_row"):
        return np.asarray(policy.prob_row(t, s), dtype=np.float64)
    if hasattr(policy, "probs_row"):
        return np.asarray(policy.probs_row(t, s), dtype=np.float64)
    if callable(policy):
        return np.asarray(policy(t, s), dtype=np.float64)
    raise InvalidInputError(f"cannot read action probabilities from {type(policy)!r}")


def kl(dist_a, dist_b) -> float:
    """Exact KL divergence between two distributions of the same family."""
    if isinstance(dist_a, Categorical) and isinstance(dist_b, Categorical):
        if dist_a.n_actions != dist_b.n_actions:
            raise InvalidInputError("categorical supports differ")
        pa, la, lb = dist_a.probs(), dist_a.log_probs(), dist_b.log_probs()
        return float(np.sum(plogp(pa, np.where(pa > 0, la - lb, 0.0))))
    if isinstance(dist_a, DiagGaussianSeq) and isinstance(dist_b, DiagGaussianSeq):
        if dist_a.mean.shape != dist_b.mean.shape:
            raise InvalidInputError("Gaussian shapes differ")
        var_a, var_b = dist_a.stddev**2, dist_b.stddev**2
        terms = (np.log(dist_b.stddev / dist_a.stddev)
                 + (var_a + (dist_a.mean - dist_b.mean) ** 2) / (2.0 * var_b) - 0.5)
        return float(np.sum(terms))
    if isinstance(dist_a, CategoricalSeq) and isinstance(dist_b, CategoricalSeq):
        if dist_a.logits.shape != dist_b.logits.shape:
            raise InvalidInputError("sequence shapes differ")
        return float(sum(kl(dist_a.step_dist(h), dist_b.step_dist(h))
                         for h in range(dist_a.horizon)))
    raise InvalidInputError(
        f"kl needs two distributions of one family, got {type(dist_a)!r} vs {type(dist_b)!r}")


def moment_match(samples: np.ndarray, weights: np.ndarray, *,
                 bounds: np.ndarray | None = None,
                 std_floor: float = DEFAULT_STD_FLOOR) -> DiagGaussianSeq:
    """Weighted Gaussian refit: the projection step of iterative planning.

    This is the single numeric kernel used by the mirror-descent planner
    and by the CEM/MPPI references, so shared-seed runs agree bitwise.
    """
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 3:
        raise InvalidInputError("samples must have shape (n, H, D)")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (samples.shape[0],) or np.any(weights < 0):
        raise InvalidInputError("weights must be non-negative, one per sample")
    total = weights.sum()
    if total <= 0:
        raise DegenerateWeightsError("all moment-match weights are zero")
    w = weights / total
    mean = np.einsum("n,nhd->hd", w, samples)
    var = np.einsum("n,nhd->hd", w, (samples - mean) ** 2)
    stddev = np.sqrt(var)
    return DiagGaussianSeq(mean, stddev, bounds=bounds, std_floor=std_floor)


def frequency_refit(samples: np.ndarray, weights: np.ndarray, n_actions: int, *,
                    smoothing: float = 1e-6) -> CategoricalSeq:
    """Weighted per-step frequency refit for discrete plans.

    Additive smoothing keeps every action alive so later iterations can
    still move mass back.
    """
    samples = np.asarray(samples, dtype=np.int64)
    if samples.ndim != 2:
        raise InvalidInputError("samples must have shape (n, H)")
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (samples.shape[0],) or np.any(weights < 0):
        raise InvalidInputError("weights must be non-negative, one per sample")
    total = weights.sum()
    if total <= 0:
        raise DegenerateWeightsError("all refit weights are zero")
    w = weights / total
    horizon = samples.shape[1]
    counts = np.full((horizon, n_actions), smoothing)
    for h in range(horizon):
        np.add.at(counts[h], samples[:, h], w)
    probs = counts / counts.sum(axis=1, keepdims=True)
    return CategoricalSeq(np.log(probs))
