"""Variational policy gradient under a fixed context prior.

The target joint over (context, trajectory) is a Gibbs distribution
proportional to P(c | y) * exp(R_c(y) / tau): high-return, context-revealing
trajectories carry exponentially more mass.  Training descends the KL
divergence from the policy-induced trajectory distribution to that target,
whose gradient is a weighted score function

    E[(log P_theta(y) - R_c(y) / tau) * grad log P_theta(y | c)],

estimated over a batch of simulator rollouts with contexts drawn from the
prior.  log P_theta(y) is the policy's action log-probability plus the
context-mixture observation log-likelihood; R_c(y) is estimated by the
realized discounted return of the rollout that produced y (a conditionally
unbiased single sample).  tau = 0 selects the reward-only ablation: the
weight degenerates to -return, i.e. plain score-function return ascent with
no information term.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import policy as policy_mod
from .envs import rollout_batch
from .inference import mixture_obs_loglik
from .model import LN2, ContextPosterior, entropy_nats

# Stream tags keep the per-purpose RNG families disjoint.
STREAM_INIT, STREAM_CONTEXT, STREAM_ROLLOUT = 101, 102, 103


class SolverDivergenceError(RuntimeError):
    """Raised when the gradient stops being finite; carries a snapshot."""

    def __init__(self, iteration: int, detail: str):
        super().__init__(f"solver diverged at iteration {iteration}: {detail}")
        self.iteration = iteration
        self.detail = detail


@dataclass(frozen=True)
class VPGConfig:
    tau: float = 0.2
    batch_size: int = 64
    learning_rate: float = 0.003
    iterations: int = 1500
    seed: int = 0
    baseline_enabled: bool = False
    grad_clip: float | None = 10.0
    hidden_dim: int = 64

    def __post_init__(self):
        if self.tau < 0.0:
            raise ValueError("tau must be >= 0 (0 selects the reward-only ablation)")
        if self.batch_size < 1 or self.iterations < 0:
            raise ValueError("need batch_size >= 1 and iterations >= 0")
        if self.learning_rate < 0.0:
            raise ValueError("learning_rate must be >= 0")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class TrainingCurve:
    mean_return: np.ndarray
    entropy_bits: np.ndarray
    grad_norm: np.ndarray
    kl_surrogate: np.ndarray

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write("iter,mean_return,entropy_bits,grad_norm,kl_surrogate\n")
            for i in range(len(self.mean_return)):
                f.write(
                    f"{i},{self.mean_return[i]:.9g},{self.entropy_bits[i]:.9g},"
                    f"{self.grad_norm[i]:.9g},{self.kl_surrogate[i]:.9g}\n"
                )


def derive_seed(*entropy) -> int:
    """Deterministic child seed from a tuple of non-negative ints."""
    return int(np.random.SeedSequence(list(entropy)).generate_state(1)[0])


def gibbs_log_target(return_c: float, posterior_c: float, tau: float) -> float:
    """Unnormalized log of the Gibbs target: log P(c|y) + R_c(y)/tau.

    The partition function is policy-independent and omitted.  Zero
    posterior mass maps to -inf.
    """
    if tau <= 0.0:
        raise ValueError("gibbs target needs tau > 0")
    if posterior_c < 0.0 or posterior_c > 1.0:
        raise ValueError("posterior_c must lie in [0, 1]")
    lp = math.log(posterior_c) if posterior_c > 0.0 else -math.inf
    return lp + return_c / tau

def vpg_weight(
    policy_logprob: float,
    per_context_obs_loglik: np.ndarray,
    prior: ContextPosterior,
    return_c: float,
    tau: float,
) -> float:
    """Per-trajectory KL weight: log P_theta(y) - R_c(y)/tau.

    The first term is the policy's total action log-probability plus the
    context-mixture observation log-likelihood under the prior.
    """
    if tau <= 0.0:
        raise ValueError("vpg weight needs tau > 0; tau = 0 is handled by train()")
    return policy_logprob + mixture_obs_loglik(prior, per_context_obs_loglik) - return_c / tau


def vpg_gradient(
    weights: np.ndarray, scores: np.ndarray, baseline_enabled: bool = False
) -> np.ndarray:
    """Batch-mean weighted score gradient: (1/M) sum_m w_m * score_m.

    With the baseline enabled the batch-mean weight is subtracted first
    (variance reduction; leaves the expectation unchanged because score
    functions have zero mean).
    """
    w = np.asarray(weights, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if w.ndim != 1 or len(w) == 0 or s.shape[0] != len(w):
        raise ValueError("need a non-empty batch of matching weights and scores")
    if baseline_enabled:
        w = w - w.mean()
    return w @ s / len(w)


def _batch_entropies_bits(prior: ContextPosterior, loglik_matrix: np.ndarray) -> np.ndarray:
    """Posterior entropy (bits) after each trajectory in a batch."""
    with np.errstate(divide="ignore"):
        lp = np.log(prior.probs)[None, :] + loglik_matrix
    lp = lp - lp.max(axis=1, keepdims=True)
    w = np.exp(lp)
    w /= w.sum(axis=1, keepdims=True)
    return np.array([entropy_nats(row) for row in w]) / LN2


def train(
    env,
    prior: ContextPosterior,
    cfg: VPGConfig,
    init_params: policy_mod.PolicyParams | None = None,
) -> tuple[policy_mod.PolicyParams, TrainingCurve]:
    """Optimize the policy against the Gibbs target under a fixed prior.

    Per iteration: draw a context per trajectory from the prior, roll out the
    batch on the simulator, form the KL weights, and take one clipped
    gradient-descent step on the KL surrogate.  Deterministic given the
    config seed; a non-finite gradient aborts with a diagnostic snapshot.
    """
    if len(prior) != env.num_contexts:
        raise ValueError("prior length does not match environment contexts")
    params = init_params
    if params is None:
        params = policy_mod.init_policy(
            derive_seed(cfg.seed, STREAM_INIT), env.input_dim, env.num_actions, cfg.hidden_dim
        )
    ctx_rng = np.random.default_rng([cfg.seed, STREAM_CONTEXT])
    n_iter, m = cfg.iterations, cfg.batch_size
    curve = TrainingCurve(
        mean_return=np.zeros(n_iter),
        entropy_bits=np.zeros(n_iter),
        grad_norm=np.zeros(n_iter),
        kl_surrogate=np.zeros(n_iter),
    )
    with np.errstate(divide="ignore"):
        log_prior = np.log(prior.probs)

    for it in range(n_iter):
        contexts = ctx_rng.choice(env.num_contexts, size=m, p=prior.probs)
        rngs = [np.random.default_rng([cfg.seed, STREAM_ROLLOUT, it, j]) for j in range(m)]
        batch, _ = rollout_batch(env, params, contexts, rngs)
        logliks = env.obs_loglik_matrix(batch.trajectories)

        if cfg.tau > 0.0:
            lp = log_prior[None, :] + logliks
            mx = lp.max(axis=1)
            mixture = mx + np.log(np.exp(lp - mx[:, None]).sum(axis=1))
            weights = batch.logprobs + mixture - batch.returns / cfg.tau
        else:
            weights = -batch.returns

        used = weights - weights.mean() if cfg.baseline_enabled else weights
        grad = policy_mod.weighted_score_sum(
            params, batch.inputs, batch.actions, batch.hidden_seq, used
        ) / m
        gnorm = float(np.linalg.norm(grad))
        if not np.isfinite(gnorm):
            raise SolverDivergenceError(
                it,
                f"gradient norm {gnorm}; weight range "
                f"[{weights.min():.3g}, {weights.max():.3g}]",
            )
        scale = cfg.learning_rate
        if cfg.grad_clip is not None and gnorm > cfg.grad_clip:
            scale *= cfg.grad_clip / gnorm
        params = params.from_flat(params.to_flat() - scale * grad)

        curve.mean_return[it] = batch.returns.mean()
        curve.entropy_bits[it] = _batch_entropies_bits(prior, logliks).mean()
        curve.grad_norm[it] = gnorm
        curve.kl_surrogate[it] = weights.mean()
    return params, curve


def ablation_config(cfg: VPGConfig) -> VPGConfig:
    """Reward-only twin of a config: tau = 0, everything else untouched."""
    return replace(cfg, tau=0.0)
