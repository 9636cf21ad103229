"""Trajectory likelihoods conditioned on the latent context.

Two backends share one convention: a trajectory holds actions a_0..a_{T-1}
and observations o_1..o_T, where o_{t+1} is emitted from the state reached by
a_t (an optional o_0 may be emitted from the start state of discrete models).
Both return the *observation factor* of P(y | c) only: the policy's action
probabilities are context-independent, so they cancel in posteriors, and the
solver adds them back explicitly where the full trajectory probability is
needed.

Discrete models use observable-operator matrix products, a scaled forward
recursion over A[o|a][i, j] = P(i | j, a) * E(o | j).  The light-dark world
uses a per-context extended Kalman filter whose one-step predictive densities
multiply into the trajectory likelihood.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    ACT_LEFT,
    ACT_OBSERVE,
    ACT_RIGHT,
    AllZeroPosteriorError,
    ContextId,
    ContextPosterior,
    DiscreteCPOMDP,
    LightDarkParams,
    Trajectory,
    obs_variance,
)

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class ObservableOperator:
    """Dense operator for one (context, action, observation) triple.

    matrix[i, j] = P(i | j, a) * E(o | j): the probability of emitting o at
    state j and then transitioning j -> i under a (transposed-transition
    convention, so likelihoods chain as left matrix products).
    """

    matrix: np.ndarray
    context: ContextId
    action: int
    obs: int


def build_operator(m: DiscreteCPOMDP, c: ContextId, a: int, o: int) -> ObservableOperator:
    if not (0 <= c < m.num_contexts and 0 <= a < m.num_actions and 0 <= o < m.num_obs):
        raise IndexError(f"operator indices out of range: c={c}, a={a}, o={o}")
    # transition[c, a][s, s'] = P(s' | s, a); transpose to P(i | j, a), then
    # scale column j by the emission probability of o at j.
    mat = m.transition[c, a].T * m.emission[c, :, o][np.newaxis, :]
    return ObservableOperator(matrix=mat, context=c, action=a, obs=o)


class OperatorCache:
    """Lazy memo of observable operators keyed by (context, action, obs).

    Reads after a key is populated are safe across threads; for fully
    parallel use call build_all() first.
    """

    def __init__(self, m: DiscreteCPOMDP):
        self.model = m
        self._ops: dict = {}

    def get(self, c: ContextId, a: int, o: int) -> np.ndarray:
        key = (c, a, o)
        op = self._ops.get(key)
        if op is None:
            op = build_operator(self.model, c, a, o).matrix
            self._ops[key] = op
        return op

    def build_all(self) -> None:
        m = self.model
        for c in range(m.num_contexts):
            for a in range(m.num_actions):
                for o in range(m.num_obs):
                    self.get(c, a, o)


def discrete_obs_loglik(
    m: DiscreteCPOMDP,
    c: ContextId,
    y: Trajectory,
    cache: OperatorCache | None = None,
) -> float:
    """Log observation likelihood of a discrete-model trajectory.

    Scaled forward recursion over operator products.  Because the operator
    folds the emission at the source state, the observation emitted after
    a_{t-1} chains together with the *following* action a_t; the trajectory's
    final observation has no successor action and is folded as a bare
    emission factor.  The running normalizer accumulates in log space, so
    long trajectories never underflow.  Returns -inf when the trajectory has
    probability zero.
    """
    getop = (cache if cache is not None else OperatorCache(m)).get
    alpha = m.init[c].copy()
    total = 0.0

    def renorm(v: np.ndarray) -> np.ndarray | None:
        nonlocal total
        z = v.sum()
        if z <= 0.0:
            return None
        total += math.log(z)
        return v / z

    if y.initial_obs is not None:
        alpha = renorm(alpha * m.emission[c, :, int(y.initial_obs)])
        if alpha is None:
            return -math.inf
    horizon = len(y)
    for t in range(horizon):
        a = int(y.actions[t])
        if t >= 1 and y.obs_mask[t - 1]:
            alpha = getop(c, a, int(y.obs_values[t - 1])) @ alpha
        else:
            # no observation precedes this action; transition only
            alpha = m.transition[c, a].T @ alpha
        alpha = renorm(alpha)
        if alpha is None:
            return -math.inf
    if horizon >= 1 and y.obs_mask[horizon - 1]:
        alpha = renorm(alpha * m.emission[c, :, int(y.obs_values[horizon - 1])])
        if alpha is None:
            return -math.inf
    return total


@dataclass(frozen=True)
class GaussianBelief:
    """Gaussian belief over the scalar light-dark position."""

    mean: float
    var: float

    def __post_init__(self):
        if not self.var > 0.0:
            raise ValueError("belief variance must be positive")


def ekf_predict(b: GaussianBelief, a: int, p: LightDarkParams) -> GaussianBelief:
    """Propagate the belief through one action: the mean drifts by the move
    step and moves inject process noise; observing leaves both untouched."""
    if a == ACT_LEFT:
        return GaussianBelief(b.mean - p.step, b.var + p.sigma_p2)
    if a == ACT_RIGHT:
        return GaussianBelief(b.mean + p.step, b.var + p.sigma_p2)
    if a == ACT_OBSERVE:
        return b
    raise IndexError(f"unknown light-dark action {a}")


def gaussian_logpdf(z: float, mean: float, var: float) -> float:
    return -0.5 * ((z - mean) ** 2 / var + math.log(var) + LOG_2PI)


def ekf_update(
    b: GaussianBelief, z: float, c: ContextId, p: LightDarkParams
) -> tuple[GaussianBelief, float]:
    """Measurement update with context-dependent noise.

    The observation variance is evaluated at the predicted mean (standard
    EKF linearization point).  Returns the updated belief and the one-step
    predictive log density log N(z; mean, var + R), whose sum over observed
    steps is the trajectory log-likelihood.
    """
    r = obs_variance(p, b.mean, c)
    gain = b.var / (b.var + r)
    step_loglik = gaussian_logpdf(z, b.mean, b.var + r)
    return GaussianBelief(b.mean + gain * (z - b.mean), (1.0 - gain) * b.var), step_loglik


def lightdark_obs_loglik(p: LightDarkParams, c: ContextId, y: Trajectory) -> float:
    """Log observation likelihood of a light-dark trajectory under context c.

    Predict/update recursion from the initial belief N(0, sigma_u2); only
    masked (observed) steps contribute predictive log densities.
    """
    b = GaussianBelief(0.0, p.sigma_u2)
    total = 0.0
    for t in range(len(y)):
        b = ekf_predict(b, int(y.actions[t]), p)
        if y.obs_mask[t]:
            b, ll = ekf_update(b, float(y.obs_values[t]), c, p)
            total += ll
    return total


def lightdark_obs_loglik_matrix(
    p: LightDarkParams, trajectories: list[Trajectory]
) -> np.ndarray:
    """Per-context log observation likelihoods for a batch, shape (M, C).

    Vectorized lockstep over the batch and contexts; elementwise identical to
    lightdark_obs_loglik applied per (trajectory, context).  All trajectories
    must share one horizon.
    """
    n = len(trajectories)
    ncx = p.num_contexts
    if ncx != 2:
        raise ValueError("vectorized light-dark likelihood assumes two contexts")
    if n == 0:
        return np.zeros((0, ncx))
    horizon = len(trajectories[0])
    actions = np.stack([t.actions for t in trajectories])
    values = np.stack([t.obs_values for t in trajectories])
    masks = np.stack([t.obs_mask for t in trajectories])

    mean = np.zeros((n, ncx))
    var = np.full((n, ncx), p.sigma_u2)
    total = np.zeros((n, ncx))
    for t in range(horizon):
        act = actions[:, t]
        drift = np.where(act == ACT_LEFT, -p.step, np.where(act == ACT_RIGHT, p.step, 0.0))
        moved = act != ACT_OBSERVE
        mean = mean + drift[:, None]
        var = var + np.where(moved, p.sigma_p2, 0.0)[:, None]
        observed = masks[:, t]
        if not observed.any():
            continue
        light = np.empty((n, ncx), dtype=bool)
        light[:, 0] = mean[:, 0] > 0.0
        light[:, 1] = mean[:, 1] < 0.0
        r = np.where(light, p.sigma_l2, p.sigma_d2)
        innov_var = var + r
        z = values[:, t]
        resid = z[:, None] - mean
        step_ll = -0.5 * (resid**2 / innov_var + np.log(innov_var) + LOG_2PI)
        gain = var / innov_var
        obs_col = observed[:, None]
        total = total + np.where(obs_col, step_ll, 0.0)
        mean = np.where(obs_col, mean + gain * resid, mean)
        var = np.where(obs_col, (1.0 - gain) * var, var)
    return total


def mixture_obs_loglik(prior: ContextPosterior, per_context: np.ndarray) -> float:
    """log sum_c prior[c] * exp(loglik[c]) via max-shifted log-sum-exp.

    This is the trajectory's observation log-probability under the context
    mixture; the caller adds the shared policy log-probability to obtain the
    full log P(y).
    """
    ll = np.asarray(per_context, dtype=np.float64)
    if ll.shape != prior.probs.shape:
        raise ValueError("per-context log-likelihood length mismatch")
    with np.errstate(divide="ignore"):
        lp = np.log(prior.probs) + ll
    m = np.max(lp)
    if not np.isfinite(m):
        raise AllZeroPosteriorError("mixture likelihood is identically zero")
    return float(m + math.log(np.exp(lp - m).sum()))
