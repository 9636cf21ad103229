"""Executable simulators for the two study environments.

* ``linegrid_model`` builds a finite contextual POMDP for a seven-cell line
  grid: a robot moves left/right or senses which side a context-dependent
  detector is on.  Sensing is expressed inside a state-only emission model by
  augmenting each cell with a "just sensed" flag, so the standard tensor
  invariants apply unchanged.
* ``LightDarkEnv`` wraps the 1-D continuous world where observation noise
  depends on the sign of the position and the context, and observations only
  arrive when the agent spends a step observing.

Both environments are stateless factories exposing the same duck-typed
interface (``init_state``/``step``/``encode_batch``/``obs_logliks``); rollouts
own private RNG streams so batches can run lockstep-vectorized while staying
reproducible rollout by rollout.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import policy as policy_mod
from .inference import (
    OperatorCache,
    discrete_obs_loglik,
    lightdark_obs_loglik,
    lightdark_obs_loglik_matrix,
)
from .model import (
    ACT_LEFT,
    ACT_OBSERVE,
    ACT_RIGHT,
    ContextId,
    DiscreteCPOMDP,
    LightDarkParams,
    Trajectory,
    obs_variance,
    step_reward,
)

# Line-grid action and observation symbols.
GRID_LEFT, GRID_RIGHT, GRID_SENSE = 0, 1, 2
OBS_NONE, OBS_DETECTOR_LEFT, OBS_DETECTOR_RIGHT = 0, 1, 2


@dataclass(frozen=True)
class LineGridConfig:
    """Line grid layout; placements are (high, low, detector) cells per context.

    The defaults put the high-value target and the detector at opposite ends
    with sides swapped across contexts, so no single sweep direction is safe
    in both: the robot has to sense first.
    """

    num_cells: int = 7
    high_reward: float = 50.0
    low_reward: float = 10.0
    detector_penalty: float = -50.0
    sense_accuracy: float = 1.0
    horizon: int = 8
    start_cell: int = 3
    placements: tuple = ((0, 5, 6), (6, 0, 1))
    discount: float = 0.95

    def __post_init__(self):
        if not (0.5 < self.sense_accuracy <= 1.0):
            raise ValueError("sense_accuracy must be in (0.5, 1]")
        if not (0 <= self.start_cell < self.num_cells):
            raise ValueError("start_cell out of range")
        for cells in self.placements:
            if len(cells) != 3 or len(set(cells)) != 3:
                raise ValueError(f"placements must be three distinct cells, got {cells}")
            if any(not 0 <= x < self.num_cells for x in cells):
                raise ValueError(f"placement out of range: {cells}")
        if len(set(self.placements)) != len(self.placements):
            raise ValueError("contexts must differ in their placements")


def linegrid_model(cfg: LineGridConfig) -> DiscreteCPOMDP:
    """Tensor form of the line grid.

    State (cell, sensed) is indexed sensed * num_cells + cell; moves clear the
    sensed flag and clamp at the walls, sensing keeps the cell and sets it.
    Only sensed states emit detector directions (truthful symbol with
    probability sense_accuracy, remainder split over the other two symbols);
    every other state emits the null symbol.  Rewards fire on the cell
    reached by the action.
    """
    n = cfg.num_cells
    num_states = 2 * n
    num_contexts = len(cfg.placements)
    num_actions, num_obs = 3, 3

    def dest_cell(cell: int, a: int) -> int:
        if a == GRID_LEFT:
            return max(cell - 1, 0)
        if a == GRID_RIGHT:
            return min(cell + 1, n - 1)
        return cell

    transition = np.zeros((num_contexts, num_actions, num_states, num_states))
    emission = np.zeros((num_contexts, num_states, num_obs))
    reward = np.zeros((num_contexts, num_states, num_actions))
    init = np.zeros((num_contexts, num_states))

    for c, (high, low, det) in enumerate(cfg.placements):
        cell_value = np.zeros(n)
        cell_value[high] = cfg.high_reward
        cell_value[low] = cfg.low_reward
        cell_value[det] = cfg.detector_penalty
        for flag in (0, 1):
            for cell in range(n):
                s = flag * n + cell
                for a in range(num_actions):
                    nxt_flag = 1 if a == GRID_SENSE else 0
                    nxt = dest_cell(cell, a)
                    transition[c, a, s, nxt_flag * n + nxt] = 1.0
                    reward[c, s, a] = cell_value[nxt]
                if flag == 0:
                    emission[c, s, OBS_NONE] = 1.0
                else:
                    if det < cell:
                        truth = OBS_DETECTOR_LEFT
                    elif det > cell:
                        truth = OBS_DETECTOR_RIGHT
                    else:
                        truth = OBS_NONE
                    emission[c, s, :] = (1.0 - cfg.sense_accuracy) / 2.0
                    emission[c, s, truth] = cfg.sense_accuracy
        init[c, cfg.start_cell] = 1.0

    return DiscreteCPOMDP(
        num_states=num_states,
        num_actions=num_actions,
        num_obs=num_obs,
        num_contexts=num_contexts,
        transition=transition,
        emission=emission,
        reward=reward,
        init=init,
        horizon=cfg.horizon,
        r_max=max(abs(cfg.high_reward), abs(cfg.low_reward), abs(cfg.detector_penalty)),
    )


@dataclass(frozen=True)
class LightDarkState:
    x: float
    t: int


@dataclass(frozen=True)
class RolloutResult:
    """One episode with ground truth attached.

    The learner never reads ``states`` or ``true_context``; they exist for
    oracle evaluation, debug dumps, and tests.  The solver consumes the
    narrowed BatchRollout view instead.
    """

    trajectory: Trajectory
    states: np.ndarray
    rewards: np.ndarray
    discounted_return: float
    true_context: ContextId


@dataclass
class BatchRollout:
    """Learner-visible slice of a rollout batch plus BPTT forward cache."""

    trajectories: list
    returns: np.ndarray       # (M,)
    logprobs: np.ndarray      # (M,) total action log-probability
    inputs: np.ndarray        # (M, T, D)
    actions: np.ndarray       # (M, T)
    hidden_seq: np.ndarray    # (T+1, M, H)


def lightdark_step(
    s: LightDarkState,
    a: int,
    c: ContextId,
    p: LightDarkParams,
    rng: np.random.Generator,
) -> tuple[LightDarkState, float, bool, float]:
    """Advance the light-dark world by one action.

    Moves drift the position by +-step plus Gaussian process noise; observing
    freezes the position and returns a measurement with position- and
    context-dependent noise.  The reward is read off the post-move position
    (strict half-line inequalities, boundaries pay zero).
    """
    if s.t >= p.horizon:
        raise ValueError(f"episode exhausted at t={s.t} (horizon {p.horizon})")
    if a == ACT_LEFT:
        x = s.x - p.step + rng.normal(0.0, np.sqrt(p.sigma_p2))
    elif a == ACT_RIGHT:
        x = s.x + p.step + rng.normal(0.0, np.sqrt(p.sigma_p2))
    elif a == ACT_OBSERVE:
        x = s.x
    else:
        raise IndexError(f"unknown light-dark action {a}")
    if a == ACT_OBSERVE:
        z = rng.normal(x, np.sqrt(obs_variance(p, x, c)))
        observed = True
    else:
        z, observed = 0.0, False
    return LightDarkState(x, s.t + 1), z, observed, step_reward(p, x, c)


class LightDarkEnv:
    """Stateless light-dark simulator; all episode state lives in rollouts."""

    env_tag = "lightdark"
    num_actions = 3

    def __init__(self, params: LightDarkParams):
        self.params = params
        self.num_contexts = params.num_contexts
        self.horizon = params.horizon
        self.discount = params.discount
        # input: (observed value, observed flag, one-hot previous action)
        self.input_dim = 2 + self.num_actions

    def init_state(self, c: ContextId, rng: np.random.Generator) -> LightDarkState:
        return LightDarkState(rng.normal(0.0, np.sqrt(self.params.sigma_u2)), 0)

    def step(self, s, a, c, rng):
        return lightdark_step(s, a, c, self.params, rng)

    def state_value(self, s: LightDarkState) -> float:
        return s.x

    def encode_batch(self, prev_vals, prev_masks, prev_acts) -> np.ndarray:
        n = len(prev_vals)
        x = np.zeros((n, self.input_dim))
        x[:, 0] = np.where(prev_masks, prev_vals, 0.0)
        x[:, 1] = prev_masks
        rows = np.nonzero(prev_acts >= 0)[0]
        x[rows, 2 + prev_acts[rows]] = 1.0
        return x

    def obs_logliks(self, y: Trajectory) -> np.ndarray:
        return np.array(
            [lightdark_obs_loglik(self.params, c, y) for c in range(self.num_contexts)]
        )

    def obs_loglik_matrix(self, trajectories) -> np.ndarray:
        return lightdark_obs_loglik_matrix(self.params, trajectories)


class DiscreteEnv:
    """Simulator for any finite contextual POMDP given as tensors."""

    def __init__(self, model: DiscreteCPOMDP, discount: float = 1.0, env_tag: str = "discrete"):
        self.model = model
        self.env_tag = env_tag
        self.num_contexts = model.num_contexts
        self.num_actions = model.num_actions
        self.horizon = model.horizon
        self.discount = discount
        self.input_dim = model.num_obs + model.num_actions
        self._opcache = OperatorCache(model)

    def init_state(self, c: ContextId, rng: np.random.Generator) -> int:
        return sample_index(self.model.init[c], rng.random())

    def step(self, s: int, a: int, c: ContextId, rng: np.random.Generator):
        m = self.model
        nxt = sample_index(m.transition[c, a, s], rng.random())
        obs = sample_index(m.emission[c, nxt], rng.random())
        return nxt, float(obs), True, float(m.reward[c, s, a])

    def state_value(self, s: int) -> float:
        return float(s)

    def encode_batch(self, prev_vals, prev_masks, prev_acts) -> np.ndarray:
        n = len(prev_vals)
        x = np.zeros((n, self.input_dim))
        rows = np.nonzero(prev_masks)[0]
        x[rows, prev_vals[rows].astype(int)] = 1.0
        rows = np.nonzero(prev_acts >= 0)[0]
        x[rows, self.model.num_obs + prev_acts[rows]] = 1.0
        return x

    def obs_logliks(self, y: Trajectory) -> np.ndarray:
        return np.array(
            [
                discrete_obs_loglik(self.model, c, y, cache=self._opcache)
                for c in range(self.num_contexts)
            ]
        )

    def obs_loglik_matrix(self, trajectories) -> np.ndarray:
        return np.array([self.obs_logliks(y) for y in trajectories])


def linegrid_env(cfg: LineGridConfig) -> DiscreteEnv:
    return DiscreteEnv(linegrid_model(cfg), discount=cfg.discount, env_tag="linegrid")


def sample_index(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF sample from a probability row."""
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


def discount_weights(gamma: float, horizon: int) -> np.ndarray:
    return gamma ** np.arange(horizon)


def rollout_batch(
    env,
    params: policy_mod.PolicyParams,
    contexts,
    rngs,
    keep_states: bool = False,
) -> tuple[BatchRollout, Optional[list]]:
    """Run a batch of episodes in lockstep under one policy.

    Each rollout m consumes only its private stream rngs[m] (init draw, then
    per step: action draw followed by environment draws), so the results for
    a given (context, stream) pair do not depend on what else is in the
    batch beyond floating-point reassociation in the shared policy matmuls.
    Returns the learner-visible batch and, when keep_states is set, the full
    per-episode results including ground-truth states.
    """
    n = len(contexts)
    horizon, hdim = env.horizon, params.hidden_dim
    if params.input_dim != env.input_dim or params.num_actions != env.num_actions:
        raise ValueError("policy dimensions do not match environment")

    states = [env.init_state(contexts[m], rngs[m]) for m in range(n)]
    hidden = np.zeros((n, hdim))
    hidden_seq = np.zeros((horizon + 1, n, hdim))
    inputs = np.zeros((n, horizon, env.input_dim))
    actions = np.zeros((n, horizon), dtype=np.int64)
    obs_vals = np.zeros((n, horizon))
    obs_masks = np.zeros((n, horizon), dtype=bool)
    rewards = np.zeros((n, horizon))
    logprobs = np.zeros(n)
    state_log = None
    if keep_states:
        state_log = np.zeros((n, horizon + 1))
        for m in range(n):
            state_log[m, 0] = env.state_value(states[m])

    prev_vals = np.zeros(n)
    prev_masks = np.zeros(n, dtype=bool)
    prev_acts = np.full(n, -1, dtype=np.int64)
    for t in range(horizon):
        x = env.encode_batch(prev_vals, prev_masks, prev_acts)
        hidden, logp = policy_mod.forward_hidden_batch(params, hidden, x)
        inputs[:, t, :] = x
        hidden_seq[t + 1] = hidden
        probs = np.exp(logp)
        for m in range(n):
            a = policy_mod.sample_categorical(probs[m], rngs[m].random())
            actions[m, t] = a
            logprobs[m] += logp[m, a]
            states[m], ov, om, r = env.step(states[m], a, contexts[m], rngs[m])
            obs_vals[m, t] = ov
            obs_masks[m, t] = om
            rewards[m, t] = r
            if keep_states:
                state_log[m, t + 1] = env.state_value(states[m])
        prev_vals = obs_vals[:, t]
        prev_masks = obs_masks[:, t]
        prev_acts = actions[:, t]

    returns = rewards @ discount_weights(env.discount, horizon)
    trajectories = [
        Trajectory(actions[m].copy(), obs_vals[m].copy(), obs_masks[m].copy()) for m in range(n)
    ]
    batch = BatchRollout(
        trajectories=trajectories,
        returns=returns,
        logprobs=logprobs,
        inputs=inputs,
        actions=actions,
        hidden_seq=hidden_seq,
    )
    results = None
    if keep_states:
        results = [
            RolloutResult(
                trajectory=trajectories[m],
                states=state_log[m].copy(),
                rewards=rewards[m].copy(),
                discounted_return=float(returns[m]),
                true_context=int(contexts[m]),
            )
            for m in range(n)
        ]
    return batch, results


def rollout(env, params: policy_mod.PolicyParams, c: ContextId, seed) -> RolloutResult:
    """One full episode, deterministic given (seed, params, context)."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    _, results = rollout_batch(env, params, [c], [rng], keep_states=True)
    return results[0]


def write_trajectory_csv(path, results, debug: bool = False) -> None:
    """Episode logs, one row per step; ground truth columns only with debug."""
    cols = ["episode", "t", "action", "observed", "z", "reward"]
    if debug:
        cols += ["x_true", "context"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(cols)
        for ep, r in enumerate(results):
            y = r.trajectory
            for t in range(len(y)):
                row = [
                    ep,
                    t,
                    int(y.actions[t]),
                    int(y.obs_mask[t]),
                    f"{y.obs_values[t]:.9g}",
                    f"{r.rewards[t]:.9g}",
                ]
                if debug:
                    row += [f"{r.states[t + 1]:.9g}", r.true_context]
                w.writerow(row)
