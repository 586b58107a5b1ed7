"""Algorithm registry keyed by short names, each declaring its quadrant
(iterative vs amortised inference x plans vs policies) and a seeded
runner that produces deterministic metric rows.

Every runner writes the same CSV schema
(``iter,step,elbo,return,entropy,aux1,aux2,wall_ms``) with unused cells
left empty; wall time is omitted from persisted outputs so identical
configs reproduce byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diagnostics, envs, hybrid, learners, planners, softdp
from .dists import ActionPrior, PolicyTable
from .envs import OptimalityModel, TabularMDP, make_env, trajectory_return
from .errors import InvalidInputError
from .learners import TrainConfig
from .planners import MPCConfig, OptimalityLikelihood, PlannerSpec


@dataclass(frozen=True)
class AlgorithmEntry:
    key: str
    quadrant: str          # "iterative-policy" | "iterative-plan" | ...
    module: str
    description: str
    default_env: str
    default_params: dict
    runner: object = field(repr=False)


def _merge_params(entry: AlgorithmEntry, config: dict) -> dict:
    params = dict(entry.default_params)
    params.update(config.get("params", {}))
    return params


def _require_tabular(env, key: str) -> TabularMDP:
    if not isinstance(env, TabularMDP):
        raise InvalidInputError(f"algorithm {key!r} needs a tabular environment")
    return env


# ---------------------------------------------------------------------------
# runners: each returns {"rows": [...], "log": [...], "checkpoint": {...}}
# ---------------------------------------------------------------------------

def _run_soft_dp(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "soft-dp")
    optimality = OptimalityModel(beta=params["beta"])
    values = softdp.soft_backward_pass(mdp, optimality, params["backup_variant"])
    posterior = softdp.optimal_posterior(values)
    evidence = softdp.evidence_from_soft_values(values, mdp)
    s0 = int(np.argmax(mdp.initial_dist))
    row0 = posterior.prob_row(0, s0)
    entropy0 = posterior.dist(0, s0).entropy()
    rows = [{
        "iter": 0, "step": 0, "elbo": evidence, "return": float(values.v_table[0, s0]),
        "entropy": entropy0, "aux1": float(row0[0]),
        "aux2": float(row0[1]) if len(row0) > 1 else None,
    }]
    return {"rows": rows, "log": rows,
            "checkpoint": {"soft_values": values.to_json(), "evidence": evidence}}


def _run_pg(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "pg")
    config = TrainConfig(learning_rate=params["learning_rate"],
                         batch_size=params["batch_size"],
                         n_iterations=params["n_iterations"],
                         beta=params["beta"],
                         baseline=params["baseline"],
                         gradient_estimator=params["gradient_estimator"],
                         seed=seed)
    policy = learners.SoftmaxPolicy.tabular(mdp)
    support = envs.enumerate_support(mdp)
    rows = []
    for it in range(config.n_iterations):
        if config.gradient_estimator == "exact-expectation":
            batch = None
        else:
            batch = learners.collect_batch(mdp, policy, config.batch_size,
                                           seed=envs.stream(seed, "pg", it).integers(2**63))
        policy, report = learners.policy_gradient_step(
            policy, batch, config, mdp=mdp, support=support)
        table = policy.as_policy_table(mdp.horizon)
        s0 = int(np.argmax(mdp.initial_dist))
        rows.append({"iter": it, "elbo": report.elbo_estimate,
                     "return": report.elbo_estimate * config.beta,
                     "entropy": table.dist(0, s0).entropy(),
                     "aux1": report.grad_norm})
    checkpoint = {"weights": policy.weights.tolist(),
                  "feature_spec": policy.features.spec_id,
                  "config": params, "iterations": config.n_iterations}
    return {"rows": rows, "log": rows, "checkpoint": checkpoint}


def _run_soft_q(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "soft-q")
    config = TrainConfig(learning_rate=params["learning_rate"],
                         batch_size=params["batch_size"],
                         n_iterations=params["n_iterations"],
                         beta=params["beta"], seed=seed)
    replay = learners.ReplayDataset(params["replay_capacity"])
    behaviour = PolicyTable.uniform(mdp.n_states, mdp.n_actions)
    for traj in envs.rollout_batch(mdp, behaviour, params["collect_episodes"], seed):
        replay.add_trajectory(traj)
    qfunc = learners.QFunctionApprox.tabular(mdp, config.beta)
    prior = ActionPrior.uniform(mdp.n_actions)
    rows = []
    for it in range(config.n_iterations):
        batch = replay.sample(config.batch_size, envs.stream(seed, "soft-q", it))
        qfunc, report = learners.soft_q_step(qfunc, batch, config,
                                             params["target_variant"],
                                             mdp=mdp, prior=prior)
        greedy = PolicyTable(_one_hot_rows(qfunc.q_table().argmax(axis=-1), mdp.n_actions))
        metrics = learners.evaluate_policy(mdp, greedy, 8, seed)
        rows.append({"iter": it, "return": metrics["mean_return"],
                     "aux1": float(np.sqrt(report.mean_squared))})
    checkpoint = {"weights": qfunc.weights.tolist(),
                  "feature_spec": qfunc.features.spec_id,
                  "config": params, "iterations": config.n_iterations}
    return {"rows": rows, "log": rows, "checkpoint": checkpoint}


def _one_hot_rows(indices: np.ndarray, n_actions: int) -> np.ndarray:
    out = np.zeros(indices.shape + (n_actions,))
    np.put_along_axis(out, indices[..., None], 1.0, axis=-1)
    return out


def _run_sac(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "sac")
    config = TrainConfig(learning_rate=params["learning_rate"],
                         batch_size=params["batch_size"],
                         n_iterations=params["n_iterations"],
                         beta=params["beta"], seed=seed)
    policy, qfunc, log = learners.soft_actor_critic_loop(
        mdp, config, episodes_per_iter=params["episodes_per_iter"])
    rows = [{"iter": entry["iter"], "elbo": entry.get("elbo"),
             "return": entry.get("return"), "entropy": entry.get("entropy"),
             "aux1": entry.get("grad_norm")} for entry in log]
    checkpoint = {"actor_weights": policy.weights.tolist(),
                  "critic_weights": qfunc.weights.tolist(),
                  "feature_spec": policy.features.spec_id,
                  "config": params, "iterations": config.n_iterations}
    return {"rows": rows, "log": rows, "checkpoint": checkpoint}


def _mpc_rows(logs: list[dict], traj) -> list[dict]:
    rows = [{"iter": entry["iter"], "step": entry["step"], "elbo": entry["elbo_proxy"],
             "return": entry["best_return"], "entropy": entry["entropy"],
             "aux1": entry["mean_return"], "aux2": entry["ess"]} for entry in logs]
    rows.append({"iter": len(logs), "step": len(traj),
                 "return": trajectory_return(traj), "aux1": traj.clamp_count})
    return rows


def _run_mpc(env, seed: int, params: dict, likelihood: OptimalityLikelihood) -> dict:
    config = MPCConfig(n_samples=params["n_samples"],
                       n_iterations=params["n_iterations"],
                       horizon=params["horizon"], seed=seed,
                       warm_start=params["warm_start"])
    spec = PlannerSpec(kind="mirror-descent", likelihood=likelihood)
    traj, logs = planners.plan_mpc(env, spec, config)
    checkpoint = {"executed_return": trajectory_return(traj),
                  "final_state": np.asarray(traj.states[-1]).tolist(),
                  "config": params}
    return {"rows": _mpc_rows(logs, traj), "log": logs, "checkpoint": checkpoint}


def _run_cem(env, seed, params):
    return _run_mpc(env, seed, params,
                    OptimalityLikelihood.indicator(elite_fraction=params["elite_fraction"]))


def _run_mppi(env, seed, params):
    return _run_mpc(env, seed, params, OptimalityLikelihood.exponential(eta=params["eta"]))


def _run_mirror(env, seed, params):
    return _run_mpc(env, seed, params, OptimalityLikelihood.raw_beta(beta=params["beta"]))


def _run_smc(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "smc")
    optimality = OptimalityModel(beta=params["beta"])
    values = softdp.soft_backward_pass(mdp, optimality)
    config = MPCConfig(n_samples=params["n_particles"], horizon=mdp.horizon,
                       seed=seed, selection=params["selection"])
    spec = PlannerSpec(kind="smc", value_fn=values, proposal=None,
                       beta=params["beta"],
                       resample_threshold=params["resample_threshold"])
    traj, logs = planners.plan_mpc(mdp, spec, config)
    rows = [{"iter": entry["iter"], "step": entry["step"],
             "entropy": entry["entropy"], "aux2": entry["ess"]} for entry in logs]
    rows.append({"step": len(traj), "return": trajectory_return(traj)})
    checkpoint = {"executed_return": trajectory_return(traj), "config": params}
    return {"rows": rows, "log": logs, "checkpoint": checkpoint}


def _run_iter_policy(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "iter-policy")
    optimality = OptimalityModel(beta=params["beta"])
    values = softdp.soft_backward_pass(mdp, optimality)
    traj, usage = hybrid.adaptive_refinement_policy(
        mdp, None, params["trigger"], optimality,
        n_iters=params["n_iters"], seed=seed, soft_values=values)
    rows = [{"step": entry["step"], "elbo": entry["elbo_after"],
             "aux1": entry["elbo_before"],
             "aux2": 1.0 if entry["triggered"] else 0.0} for entry in usage]
    rows.append({"step": len(traj), "return": trajectory_return(traj)})
    return {"rows": rows, "log": usage,
            "checkpoint": {"executed_return": trajectory_return(traj), "config": params}}


def _run_amortised_plan(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "amortised-plan")
    horizon = params["plan_horizon"] or mdp.horizon
    head = hybrid.AmortisedPlanHead.zeros(mdp.n_states, horizon, mdp.n_actions)
    config = TrainConfig(learning_rate=params["learning_rate"],
                         batch_size=params["batch_size"],
                         n_iterations=params["n_iterations"],
                         beta=params["beta"],
                         gradient_estimator=params["gradient_estimator"],
                         seed=seed)
    head, log = hybrid.amortised_plan_train(mdp, head, config)
    traj = hybrid.open_loop_rollout(mdp, head, seed)
    rows = [{"iter": entry["iter"], "elbo": entry["elbo"], "return": entry["return"],
             "entropy": entry["entropy"], "aux1": entry["grad_norm"]} for entry in log]
    rows.append({"step": 0, "return": trajectory_return(traj)})
    checkpoint = {"weights": head.weights.tolist(),
                  "feature_spec": head.features.spec_id,
                  "config": params, "iterations": config.n_iterations}
    return {"rows": rows, "log": log, "checkpoint": checkpoint}


def _run_warm_start(env, seed: int, params: dict) -> dict:
    mdp = _require_tabular(env, "warm-start")
    horizon = params["plan_horizon"] or mdp.horizon
    head = hybrid.AmortisedPlanHead.zeros(mdp.n_states, horizon, mdp.n_actions)
    if params["train_iterations"]:
        config = TrainConfig(learning_rate=params["learning_rate"], batch_size=1,
                             n_iterations=params["train_iterations"],
                             beta=params["beta"], seed=seed)
        head, _ = hybrid.amortised_plan_train(mdp, head, config)
    s0 = int(np.argmax(mdp.initial_dist))
    report = hybrid.amortised_plan_as_warm_start(
        head, s0, mdp, OptimalityLikelihood.raw_beta(beta=params["beta"]),
        params["n_samples"], params["n_iterations"], seed)
    rows = [{"iter": warm["iter"], "return": warm["best_return"],
             "aux1": cold["best_return"]}
            for warm, cold in zip(report.warm_trace, report.cold_trace)]
    checkpoint = {"warm_iters_to_best": report.warm_iters_to_best,
                  "cold_iters_to_best": report.cold_iters_to_best,
                  "config": params}
    return {"rows": rows, "log": report.warm_trace + report.cold_trace,
            "checkpoint": checkpoint}


# ---------------------------------------------------------------------------
# the registry itself
# ---------------------------------------------------------------------------

ALGORITHMS: dict[str, AlgorithmEntry] = {}


def _register(key, quadrant, module, description, default_env, default_params, runner):
    ALGORITHMS[key] = AlgorithmEntry(key, quadrant, module, description,
                                     default_env, default_params, runner)


_register("soft-dp", "iterative-policy", "softdp",
          "exact backward messages: soft Q/V recursion and optimal posterior",
          "two-arm-bandit", {"beta": 1.0, "backup_variant": "expected"}, _run_soft_dp)
_register("pg", "amortised-policy", "learners",
          "entropy-regularized policy gradient on the amortised bound",
          "two-arm-bandit",
          {"beta": 1.0, "learning_rate": 0.5, "batch_size": 16, "n_iterations": 120,
           "baseline": "none", "gradient_estimator": "exact-expectation"}, _run_pg)
_register("soft-q", "amortised-policy", "learners",
          "bootstrapped soft Q-learning with linear features",
          "two-arm-bandit",
          {"beta": 1.0, "learning_rate": 0.5, "batch_size": 8, "n_iterations": 60,
           "replay_capacity": 2048, "collect_episodes": 32,
           "target_variant": "expected-V"}, _run_soft_q)
_register("sac", "amortised-policy", "learners",
          "soft actor-critic: bootstrapped critic with exact KL actor projection",
          "two-arm-bandit",
          {"beta": 1.0, "learning_rate": 0.5, "batch_size": 16, "n_iterations": 40,
           "episodes_per_iter": 4}, _run_sac)
_register("cem", "iterative-plan", "planners",
          "cross-entropy planning: indicator likelihood inside MPC",
          "double-integrator-1d",
          {"elite_fraction": 0.1, "n_samples": 64, "n_iterations": 3,
           "horizon": 10, "warm_start": "shift"}, _run_cem)
_register("mppi", "iterative-plan", "planners",
          "path-integral planning: exponential likelihood inside MPC",
          "double-integrator-1d",
          {"eta": 1.0, "n_samples": 64, "n_iterations": 3,
           "horizon": 10, "warm_start": "shift"}, _run_mppi)
_register("mirror", "iterative-plan", "planners",
          "reweight-and-refit planning at the bound's own temperature",
          "double-integrator-1d",
          {"beta": 1.0, "n_samples": 64, "n_iterations": 3,
           "horizon": 10, "warm_start": "shift"}, _run_mirror)
_register("smc", "iterative-plan", "planners",
          "sequential Monte Carlo planning with systematic resampling",
          "two-arm-bandit",
          {"beta": 1.0, "n_particles": 512, "resample_threshold": 0.5,
           "selection": "mode"}, _run_smc)
_register("iter-policy", "iterative-policy", "hybrid",
          "per-state refinement of a base policy, triggered by entropy",
          "two-arm-bandit",
          {"beta": 1.0, "trigger": 0.0, "n_iters": 25}, _run_iter_policy)
_register("amortised-plan", "amortised-plan", "hybrid",
          "learned map from start state to an open-loop plan distribution",
          "chain-3",
          {"beta": 0.05, "learning_rate": 0.5, "batch_size": 16, "n_iterations": 80,
           "plan_horizon": None, "gradient_estimator": "exact-expectation"},
          _run_amortised_plan)
_register("warm-start", "amortised-plan", "hybrid",
          "amortised plan used to initialize iterative planning",
          "chain-3",
          {"beta": 0.5, "plan_horizon": None, "train_iterations": 40,
           "learning_rate": 0.5, "n_samples": 32, "n_iterations": 6}, _run_warm_start)


def get_algorithm(key: str) -> AlgorithmEntry:
    if key not in ALGORITHMS:
        raise InvalidInputError(
            f"unknown algorithm {key!r}; valid keys: {', '.join(sorted(ALGORITHMS))}")
    return ALGORITHMS[key]


def run_algorithm(key: str, env_id: str, seed: int, config: dict) -> dict:
    entry = get_algorithm(key)
    env = make_env(env_id)
    params = _merge_params(entry, config)
    return entry.runner(env, seed, params)


def quadrant_table() -> list[dict]:
    return [{
        "algorithm": entry.key,
        "quadrant": entry.quadrant,
        "module": entry.module,
        "description": entry.description,
        "example_config": {
            "env_id": entry.default_env,
            "algorithm": entry.key,
            "seed": 0,
            "params": {k: v for k, v in entry.default_params.items()},
        },
    } for entry in ALGORITHMS.values()]
