"""Core domain types for contextual POMDPs.

A contextual POMDP is a family of POMDPs over shared state/action/observation
spaces, indexed by a latent context that is fixed within an episode.  This
module holds the tensor representation of finite models, the parameters of the
continuous light-dark world, trajectories, context posteriors, and the small
amount of posterior arithmetic shared by every other module.

All types are immutable after construction (array payloads are marked
read-only) and all operations are pure functions, so values can be shared
freely across concurrent rollout workers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

LN2 = float(np.log(2.0))

# Action indices of the light-dark world: move left, move right, observe.
ACT_LEFT, ACT_RIGHT, ACT_OBSERVE = 0, 1, 2

MODEL_SCHEMA = "cpomdp-v1"

# Contexts are plain 0-based integer indices in [0, num_contexts).
ContextId = int


class AllZeroPosteriorError(ValueError):
    """Raised when a Bayes update annihilates every context's mass."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class DiscreteCPOMDP:
    """Finite contextual POMDP as dense per-context tensors.

    transition[c][a][s][s'] is the probability of landing in s' from s under
    action a in context c; emission[c][s][o] the probability of observing o in
    state s; reward[c][s][a] the (bounded) per-step reward; init[c][s] the
    initial state distribution.  r_max is the declared reward bound so the
    bounded-reward invariant is checkable rather than inferred.
    """

    num_states: int
    num_actions: int
    num_obs: int
    num_contexts: int
    transition: np.ndarray  # (C, A, S, S)
    emission: np.ndarray    # (C, S, O)
    reward: np.ndarray      # (C, S, A)
    init: np.ndarray        # (C, S)
    horizon: int
    r_max: float

    def __post_init__(self):
        c, a, s, o = self.num_contexts, self.num_actions, self.num_states, self.num_obs
        shapes = {
            "transition": (self.transition, (c, a, s, s)),
            "emission": (self.emission, (c, s, o)),
            "reward": (self.reward, (c, s, a)),
            "init": (self.init, (c, s)),
        }
        for name, (arr, want) in shapes.items():
            arr = _freeze(arr)
            if arr.shape != want:
                raise ValueError(f"{name} has shape {arr.shape}, expected {want}")
            object.__setattr__(self, name, arr)
        if self.horizon < 0:
            raise ValueError("horizon must be >= 0")
        if not np.isfinite(self.r_max):
            raise ValueError("r_max must be finite")


def validate_model(m: DiscreteCPOMDP, tol: float = 1e-12) -> list:
    """Check the stochasticity and reward-bound invariants of a model.

    Violations are data, not failures: returns a list of human-readable
    strings naming the offending tensor, index, and magnitude.  Empty list
    means every invariant holds within tol.
    """
    bad = []
    for c in range(m.num_contexts):
        for a in range(m.num_actions):
            rows = m.transition[c, a]
            sums = rows.sum(axis=1)
            for s in np.nonzero(np.abs(sums - 1.0) > tol)[0]:
                bad.append(
                    f"transition[c={c}][a={a}][s={s}] rows sum to {sums[s]:.12g} "
                    f"(off by {sums[s] - 1.0:.3e})"
                )
            for s, sp in zip(*np.nonzero(rows < 0.0)):
                bad.append(
                    f"transition[c={c}][a={a}][s={s}][s'={sp}] is negative "
                    f"({rows[s, sp]:.3e})"
                )
        sums = m.emission[c].sum(axis=1)
        for s in np.nonzero(np.abs(sums - 1.0) > tol)[0]:
            bad.append(
                f"emission[c={c}][s={s}] row sums to {sums[s]:.12g} "
                f"(off by {sums[s] - 1.0:.3e})"
            )
        for s, o in zip(*np.nonzero(m.emission[c] < 0.0)):
            bad.append(f"emission[c={c}][s={s}][o={o}] is negative ({m.emission[c][s, o]:.3e})")
        isum = m.init[c].sum()
        if abs(isum - 1.0) > tol:
            bad.append(f"init[c={c}] sums to {isum:.12g} (off by {isum - 1.0:.3e})")
        for s in np.nonzero(m.init[c] < 0.0)[0]:
            bad.append(f"init[c={c}][s={s}] is negative ({m.init[c][s]:.3e})")
        over = np.abs(m.reward[c]) > m.r_max
        for s, a in zip(*np.nonzero(over)):
            bad.append(
                f"reward[c={c}][s={s}][a={a}] = {m.reward[c][s, a]:.12g} exceeds "
                f"r_max = {m.r_max:.12g}"
            )
    return bad


def model_to_json(m: DiscreteCPOMDP) -> str:
    doc = {
        "schema": MODEL_SCHEMA,
        "num_states": m.num_states,
        "num_actions": m.num_actions,
        "num_obs": m.num_obs,
        "num_contexts": m.num_contexts,
        "horizon": m.horizon,
        "r_max": m.r_max,
        "transition": m.transition.tolist(),
        "emission": m.emission.tolist(),
        "reward": m.reward.tolist(),
        "init": m.init.tolist(),
    }
    return json.dumps(doc, indent=1)


def model_from_json(text: str) -> DiscreteCPOMDP:
    doc = json.loads(text)
    if doc.get("schema") != MODEL_SCHEMA:
        raise ValueError(f"unsupported model schema {doc.get('schema')!r}, want {MODEL_SCHEMA!r}")
    return DiscreteCPOMDP(
        num_states=int(doc["num_states"]),
        num_actions=int(doc["num_actions"]),
        num_obs=int(doc["num_obs"]),
        num_contexts=int(doc["num_contexts"]),
        transition=np.asarray(doc["transition"], dtype=np.float64),
        emission=np.asarray(doc["emission"], dtype=np.float64),
        reward=np.asarray(doc["reward"], dtype=np.float64),
        init=np.asarray(doc["init"], dtype=np.float64),
        horizon=int(doc["horizon"]),
        r_max=float(doc["r_max"]),
    )


@dataclass(frozen=True)
class LightDarkParams:
    """Scalars defining the 1-D light-dark world.

    Observation noise variance depends on the sign of the position and the
    context: under context 0 the region x > 0 is light (variance sigma_l2)
    and x <= 0 is dark (sigma_d2); under context 1 the roles flip, with
    x >= 0 dark.  Reward/penalty regions are half-lines per context, encoded
    as (threshold, side) pairs where side=+1 means x > threshold and side=-1
    means x < threshold; all inequalities are strict.
    """

    sigma_p2: float = 0.1     # process noise variance (moves only)
    sigma_l2: float = 1.0     # light-region observation variance
    sigma_d2: float = 8.0     # dark-region observation variance
    sigma_u2: float = 0.09    # initial-position variance
    step: float = 1.0
    horizon: int = 20
    discount: float = 0.95
    r_plus: float = 1.0
    r_minus: float = -1.0
    reward_regions: tuple = ((1.0, +1), (-1.0, -1))
    penalty_regions: tuple = ((1.0, -1), (0.0, +1))

    def __post_init__(self):
        if not (self.sigma_d2 > self.sigma_l2 > 0.0):
            raise ValueError("need sigma_d2 > sigma_l2 > 0")
        if self.sigma_p2 < 0.0 or self.sigma_u2 <= 0.0:
            raise ValueError("need sigma_p2 >= 0 and sigma_u2 > 0")
        if self.step <= 0.0 or self.horizon < 1:
            raise ValueError("need step > 0 and horizon >= 1")
        if not (0.0 < self.discount <= 1.0):
            raise ValueError("discount must be in (0, 1]")
        if len(self.reward_regions) != len(self.penalty_regions):
            raise ValueError("per-context region lists must have equal length")

    @property
    def num_contexts(self) -> int:
        return len(self.reward_regions)


def obs_variance(p: LightDarkParams, x: float, c: ContextId) -> float:
    """Observation noise variance at position x under context c.

    The dark region is closed at the boundary: x = 0 is dark in both
    contexts (fixed for determinism; the event has measure zero).
    """
    light = x > 0.0 if c == 0 else x < 0.0
    return p.sigma_l2 if light else p.sigma_d2


def _in_halfline(x: float, region) -> bool:
    threshold, side = region
    return x > threshold if side > 0 else x < threshold


def step_reward(p: LightDarkParams, x: float, c: ContextId) -> float:
    """Per-step reward at post-move position x: reward region beats nothing,
    penalty region beats nothing, boundaries (equalities) pay zero."""
    if _in_halfline(x, p.reward_regions[c]):
        return p.r_plus
    if _in_halfline(x, p.penalty_regions[c]):
        return p.r_minus
    return 0.0


@dataclass(frozen=True)
class Trajectory:
    """One episode's actions and (maskable) observation sequence.

    actions[i] is the i-th action; observations[i] = (value, mask) is the
    observation emitted immediately after actions[i] (mask 0 means none was
    received and value is a placeholder).  For discrete models an optional
    initial observation emitted from the start state may be present.
    """

    actions: np.ndarray      # (T,) int
    obs_values: np.ndarray   # (T,) float (observation index for discrete models)
    obs_mask: np.ndarray     # (T,) bool
    initial_obs: Optional[int] = None

    def __post_init__(self):
        actions = np.ascontiguousarray(self.actions, dtype=np.int64)
        values = _freeze(self.obs_values)
        mask = np.ascontiguousarray(self.obs_mask, dtype=bool)
        actions.flags.writeable = False
        mask.flags.writeable = False
        if not (len(actions) == len(values) == len(mask)):
            raise ValueError("actions, obs_values, obs_mask must have equal length")
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "obs_values", values)
        object.__setattr__(self, "obs_mask", mask)

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class ContextPosterior:
    """Probability vector over contexts."""

    probs: np.ndarray

    def __post_init__(self):
        p = _freeze(self.probs)
        if p.ndim != 1 or len(p) == 0:
            raise ValueError("posterior must be a non-empty vector")
        if np.any(p < 0.0) or abs(p.sum() - 1.0) > 1e-12:
            raise ValueError(f"posterior not a distribution (sum {p.sum():.15g})")
        object.__setattr__(self, "probs", p)

    @classmethod
    def uniform(cls, n: int) -> "ContextPosterior":
        return cls(np.full(n, 1.0 / n))

    @classmethod
    def point_mass(cls, c: ContextId, n: int) -> "ContextPosterior":
        p = np.zeros(n)
        p[c] = 1.0
        return cls(p)

    def __len__(self) -> int:
        return len(self.probs)


def posterior_update(prior: ContextPosterior, obs_loglik: Sequence[float]) -> ContextPosterior:
    """Bayes update: probs[c] proportional to prior[c] * exp(obs_loglik[c]).

    Computed via max-shifted log-sum-exp so arbitrarily small likelihoods are
    safe; invariant to adding any constant to all log-likelihood entries.
    """
    ll = np.asarray(obs_loglik, dtype=np.float64)
    if ll.shape != prior.probs.shape:
        raise ValueError("per-context log-likelihood length mismatch")
    with np.errstate(divide="ignore"):
        lp = np.log(prior.probs) + ll
    m = np.max(lp)
    if not np.isfinite(m):
        raise AllZeroPosteriorError("all contexts have zero posterior mass")
    w = np.exp(lp - m)
    return ContextPosterior(w / w.sum())


def entropy_nats(probs: np.ndarray) -> float:
    """Shannon entropy in nats with the 0*log(0) = 0 convention."""
    p = np.asarray(probs, dtype=np.float64)
    nz = p[p > 0.0]
    return float(-np.sum(nz * np.log(nz))) + 0.0  # normalize -0.0 away


def posterior_entropy_bits(p: ContextPosterior) -> float:
    # Entropies are kept in nats internally; bits only at reporting boundaries.
    return entropy_nats(p.probs) / LN2


@dataclass
class EpisodeRecord:
    """One row of the episodic regret analysis."""

    episode: int
    realized_return: float
    posterior_entropy_bits: float
    info_gain_bits: float
    delta_proxy: float
    i1_proxy: float
    i2_realized: float
    psi_hat: Optional[float] = None
    wall_time: float = 0.0
