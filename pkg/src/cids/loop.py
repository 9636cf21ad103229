"""Episodic information-directed planning loop and its metrics layer.

Per episode: retrain the policy on a simulator whose contexts are resampled
from the current posterior (warm-started from last episode's parameters),
execute it once in the true environment whose hidden context never changes,
Bayes-update the posterior from the episode's observation likelihoods, and
log the regret decomposition.  The decomposition splits each episode's
regret against a context-aware oracle into

    delta  = best posterior-expected value - posterior-expected value of pi_k
    i1     = oracle value - best posterior-expected value
    i2     = posterior-expected value of pi_k - realized return

which sum to (oracle value - realized return) exactly.  The best
posterior-expected value is approximated from below by the max over
{per-context oracle policies, pi_k} of posterior-weighted Monte Carlo value,
so the reported delta is itself a lower bound.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import policy as policy_mod
from .envs import rollout, rollout_batch
from .model import (
    LN2,
    ContextId,
    ContextPosterior,
    EpisodeRecord,
    entropy_nats,
    posterior_entropy_bits,
    posterior_update,
)
from .solver import SolverDivergenceError, VPGConfig, derive_seed, train

STREAM_ORACLE, STREAM_ORACLE_EVAL, STREAM_INNER = 201, 202, 203
STREAM_MC, STREAM_TRUE, STREAM_INFO = 204, 205, 206

# Monte Carlo slack for reported information gains (bits) and the ratio floor
# below which the information ratio is left undefined (nats).
EPS_MC_BITS = 0.02
EPS_FLOOR_NATS = 1e-6


@dataclass(frozen=True)
class CIDSConfig:
    num_episodes: int = 300
    vpg: VPGConfig = field(default_factory=lambda: VPGConfig(iterations=20))
    mc_samples: int = 32
    seed: int = 0
    oracle_policy_budget: int = 400

    def __post_init__(self):
        if self.num_episodes < 1 or self.mc_samples < 1 or self.oracle_policy_budget < 1:
            raise ValueError("num_episodes, mc_samples, oracle_policy_budget must be >= 1")


@dataclass
class RegretReport:
    records: list
    br_cum: np.ndarray
    cumulative_info_gain_bits: float
    tau_bound_violations: int
    ratio_defined_postburn: int
    c_star: ContextId
    tau: float
    oracle_value_cstar: float

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("k,return,entropy_bits,info_gain_bits,delta_hat,i1_hat,i2,br_cum,psi_hat\n")
            for i, r in enumerate(self.records):
                psi = "nan" if r.psi_hat is None else f"{r.psi_hat:.9g}"
                f.write(
                    f"{r.episode},{r.realized_return:.9g},{r.posterior_entropy_bits:.9g},"
                    f"{r.info_gain_bits:.9g},{r.delta_proxy:.9g},{r.i1_proxy:.9g},"
                    f"{r.i2_realized:.9g},{self.br_cum[i]:.9g},{psi}\n"
                )

    def summary(self) -> dict:
        n = len(self.records)
        tail = max(1, n // 10)
        return {
            "episodes": n,
            "c_star": int(self.c_star),
            "oracle_value_cstar": self.oracle_value_cstar,
            "final_entropy_bits": self.records[-1].posterior_entropy_bits,
            "mean_return_last_10pct": float(
                np.mean([r.realized_return for r in self.records[-tail:]])
            ),
            "total_info_gain_bits": self.cumulative_info_gain_bits,
            "tau_bound_violations": self.tau_bound_violations,
            "ratio_defined_postburn": self.ratio_defined_postburn,
            "final_br": float(self.br_cum[-1]),
        }


def regret_decompose(
    oracle_value_cstar: float,
    vbar_star_proxy: float,
    vbar_pik: float,
    realized_return: float,
) -> tuple[float, float, float]:
    """Split one episode's regret estimate into (delta, i1, i2).

    The three parts sum to oracle_value_cstar - realized_return exactly.
    """
    delta = vbar_star_proxy - vbar_pik
    i1 = oracle_value_cstar - vbar_star_proxy
    i2 = vbar_pik - realized_return
    return delta, i1, i2


def information_ratio(
    delta: float, info_gain_nats: float, eps_floor: float = EPS_FLOOR_NATS
) -> Optional[float]:
    """Per-episode regret per nat of information gain; None below the floor."""
    if info_gain_nats > eps_floor:
        return delta / info_gain_nats
    return None


def _mc_stats(env, params, contexts, rngs, prior: ContextPosterior):
    """Returns and post-episode posterior entropies (bits) over MC rollouts."""
    batch, _ = rollout_batch(env, params, contexts, rngs)
    logliks = env.obs_loglik_matrix(batch.trajectories)
    with np.errstate(divide="ignore"):
        lp = np.log(prior.probs)[None, :] + logliks
    lp = lp - lp.max(axis=1, keepdims=True)
    w = np.exp(lp)
    w /= w.sum(axis=1, keepdims=True)
    entropies = np.array([entropy_nats(row) for row in w]) / LN2
    return batch.returns, entropies


def _clamp_info_gain(raw_bits: float, prior_entropy_bits: float) -> float:
    return float(min(max(raw_bits, -EPS_MC_BITS), prior_entropy_bits))


def info_gain_estimate(
    prior: ContextPosterior, params, env, n: int, seed_entropy=(0,)
) -> float:
    """Monte Carlo estimate of the per-episode context information gain.

    H(prior) minus the mean posterior entropy after n simulated episodes with
    contexts drawn from the prior; clamped to [-eps_mc, H(prior)] at the
    reporting boundary, in bits.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    ctx_rng = np.random.default_rng([*seed_entropy, 0])
    contexts = ctx_rng.choice(len(prior), size=n, p=prior.probs)
    rngs = [np.random.default_rng([*seed_entropy, 1 + j]) for j in range(n)]
    _, entropies = _mc_stats(env, params, contexts, rngs, prior)
    h0 = posterior_entropy_bits(prior)
    return _clamp_info_gain(h0 - float(entropies.mean()), h0)


def _train_for_context(env, c: ContextId, cfg: CIDSConfig, seed: int):
    """Reward-only training with the context fixed and known."""
    vpg = replace(
        cfg.vpg, tau=0.0, iterations=cfg.oracle_policy_budget, seed=seed
    )
    params, _ = train(env, ContextPosterior.point_mass(c, env.num_contexts), vpg)
    return params


def _mc_value(env, params, contexts, rngs) -> float:
    batch, _ = rollout_batch(env, params, contexts, rngs)
    return float(batch.returns.mean())


def oracle_value(env, c: ContextId, cfg: CIDSConfig) -> float:
    """Value of a context-conditioned policy trained with the same solver.

    Trains with the context fixed and known (reward-only), then evaluates by
    Monte Carlo under that context.  This is a lower bound on the true
    context-aware optimum, which is what the regret curves are measured
    against.
    """
    params = _train_for_context(env, c, cfg, derive_seed(cfg.seed, STREAM_ORACLE, c))
    rngs = [
        np.random.default_rng([cfg.seed, STREAM_ORACLE_EVAL, c, j])
        for j in range(cfg.mc_samples)
    ]
    return _mc_value(env, params, [c] * cfg.mc_samples, rngs)


def run_cids(
    env, true_context: ContextId, cfg: CIDSConfig, prior: ContextPosterior | None = None
) -> RegretReport:
    """Run the full episodic loop against a hidden true context.

    The posterior starts at the supplied context prior (uniform when omitted)
    and is carried across episodes.  The loop runs a fixed number of episodes
    and reports the whole regret curve (the idealized stop-at-zero-regret
    rule references an unobservable quantity).  Episodes are strictly
    sequential; the posterior is a serial dependency.
    """
    num_contexts = env.num_contexts
    posterior = prior if prior is not None else ContextPosterior.uniform(num_contexts)
    tau = cfg.vpg.tau

    oracle_params = [
        _train_for_context(env, c, cfg, derive_seed(cfg.seed, STREAM_ORACLE, c))
        for c in range(num_contexts)
    ]
    oracle_rngs = [
        np.random.default_rng([cfg.seed, STREAM_ORACLE_EVAL, true_context, j])
        for j in range(cfg.mc_samples)
    ]
    oracle_value_cstar = _mc_value(
        env, oracle_params[true_context], [true_context] * cfg.mc_samples, oracle_rngs
    )

    params = None
    records = []
    br = np.zeros(cfg.num_episodes)
    running_br = 0.0
    total_info = 0.0
    violations = 0
    defined_postburn = 0
    burn_in = cfg.num_episodes // 2

    for k in range(1, cfg.num_episodes + 1):
        t0 = time.perf_counter()
        inner = replace(cfg.vpg, seed=derive_seed(cfg.seed, STREAM_INNER, k))
        try:
            params, _ = train(env, posterior, inner, init_params=params)
        except SolverDivergenceError as e:
            raise SolverDivergenceError(e.iteration, f"{e.detail} (episode {k})") from e

        # Posterior-weighted Monte Carlo diagnostics, shared context draws.
        ctx_rng = np.random.default_rng([cfg.seed, STREAM_MC, k, 0])
        mc_contexts = ctx_rng.choice(num_contexts, size=cfg.mc_samples, p=posterior.probs)
        pik_rngs = [
            np.random.default_rng([cfg.seed, STREAM_MC, k, 1 + j])
            for j in range(cfg.mc_samples)
        ]
        pik_returns, pik_entropies = _mc_stats(env, params, mc_contexts, pik_rngs, posterior)
        vbar_pik = float(pik_returns.mean())
        h_prior = posterior_entropy_bits(posterior)
        info_gain = _clamp_info_gain(h_prior - float(pik_entropies.mean()), h_prior)

        candidates = [vbar_pik]
        for c in range(num_contexts):
            cand_rngs = [
                np.random.default_rng([cfg.seed, STREAM_MC, k, 1000 + c * cfg.mc_samples + j])
                for j in range(cfg.mc_samples)
            ]
            candidates.append(_mc_value(env, oracle_params[c], mc_contexts, cand_rngs))
        vbar_star_proxy = max(candidates)

        episode = rollout(
            env, params, true_context, np.random.default_rng([cfg.seed, STREAM_TRUE, k])
        )
        posterior = posterior_update(posterior, env.obs_logliks(episode.trajectory))

        delta, i1, i2 = regret_decompose(
            oracle_value_cstar, vbar_star_proxy, vbar_pik, episode.discounted_return
        )
        psi = information_ratio(delta, info_gain * LN2)
        if k > burn_in and psi is not None:
            defined_postburn += 1
            if psi > 2.0 * tau:
                violations += 1
        running_br += oracle_value_cstar - episode.discounted_return
        br[k - 1] = running_br
        total_info += info_gain
        records.append(
            EpisodeRecord(
                episode=k,
                realized_return=episode.discounted_return,
                posterior_entropy_bits=posterior_entropy_bits(posterior),
                info_gain_bits=info_gain,
                delta_proxy=delta,
                i1_proxy=i1,
                i2_realized=i2,
                psi_hat=psi,
                wall_time=time.perf_counter() - t0,
            )
        )

    return RegretReport(
        records=records,
        br_cum=br,
        cumulative_info_gain_bits=total_info,
        tau_bound_violations=violations,
        ratio_defined_postburn=defined_postburn,
        c_star=true_context,
        tau=tau,
        oracle_value_cstar=oracle_value_cstar,
    )
