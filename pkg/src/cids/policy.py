"""Recurrent stochastic policies with hand-written differentiation.

The base cell is a single tanh recurrence mapping encoded observation
history to action logits:

    h_t     = tanh(W_in x_t + W_h h_{t-1} + b_h)
    logits  = W_a h_t + b_a
    a_t     ~ softmax(logits)

A gated (GRU) cell is available behind the same interface; its additive
state updates retain evidence over longer spans and converge faster on
tasks that hinge on remembering an inference made many steps earlier.

The reverse pass (backpropagation through time) produces the exact gradient
of the trajectory score sum_t log pi(a_t | x_{0:t}) with respect to every
parameter; the solver consumes weighted sums of these score gradients.  The
policy module never applies updates itself.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

POLICY_FORMAT = "policy-v1"


@dataclass(frozen=True)
class PolicyParams:
    """Weights of the recurrent policy; immutable during a batch."""

    w_in: np.ndarray  # (H, D)
    w_h: np.ndarray   # (H, H)
    b_h: np.ndarray   # (H,)
    w_a: np.ndarray   # (A, H)
    b_a: np.ndarray   # (A,)

    def __post_init__(self):
        h, d = self.w_in.shape
        if self.w_h.shape != (h, h) or self.b_h.shape != (h,):
            raise ValueError("recurrent weight shapes inconsistent")
        if self.w_a.shape[1] != h or self.b_a.shape != (self.w_a.shape[0],):
            raise ValueError("output weight shapes inconsistent")
        for a in (self.w_in, self.w_h, self.b_h, self.w_a, self.b_a):
            if not np.all(np.isfinite(a)):
                raise ValueError("policy parameters must be finite")
            a.flags.writeable = False

    @property
    def hidden_dim(self) -> int:
        return self.w_in.shape[0]

    @property
    def input_dim(self) -> int:
        return self.w_in.shape[1]

    @property
    def num_actions(self) -> int:
        return self.w_a.shape[0]

    @property
    def num_params(self) -> int:
        return self.w_in.size + self.w_h.size + self.b_h.size + self.w_a.size + self.b_a.size

    def to_flat(self) -> np.ndarray:
        return np.concatenate(
            [self.w_in.ravel(), self.w_h.ravel(), self.b_h, self.w_a.ravel(), self.b_a]
        )

    def from_flat(self, flat: np.ndarray) -> "PolicyParams":
        """New parameter set with this one's shapes and the given values."""
        if flat.shape != (self.num_params,):
            raise ValueError("flat vector length mismatch")
        h, d = self.w_in.shape
        a = self.w_a.shape[0]
        parts = np.split(np.array(flat, dtype=np.float64), np.cumsum([h * d, h * h, h, a * h]))
        return PolicyParams(
            w_in=parts[0].reshape(h, d),
            w_h=parts[1].reshape(h, h),
            b_h=parts[2],
            w_a=parts[3].reshape(a, h),
            b_a=parts[4],
        )


@dataclass(frozen=True)
class ScoreGradient:
    """Flat gradient of a trajectory's total action log-probability."""

    dtheta: np.ndarray
    total_logprob: float


def init_policy(seed: int, input_dim: int, num_actions: int, hidden_dim: int = 64) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    if input_dim < 1 or num_actions < 1 or hidden_dim < 1:
        raise ValueError("all dimensions must be positive")
    rng = np.random.default_rng(seed)

    def u(fan_in, shape):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return PolicyParams(
        w_in=u(input_dim, (hidden_dim, input_dim)),
        w_h=u(hidden_dim, (hidden_dim, hidden_dim)),
        b_h=np.zeros(hidden_dim),
        w_a=u(hidden_dim, (num_actions, hidden_dim)),
        b_a=np.zeros(num_actions),
    )


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted log-softmax along the last axis; overflow-safe."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def sample_categorical(probs: np.ndarray, u: float) -> int:
    """Inverse-CDF draw shared by the scalar and batched rollout paths."""
    return int(np.searchsorted(np.cumsum(probs), u, side="right").clip(0, len(probs) - 1))


def act(
    params: PolicyParams, hidden: np.ndarray, x: np.ndarray, rng: np.random.Generator
) -> tuple[int, float, np.ndarray]:
    """One policy step: advance the hidden state, sample an action.

    Returns (action, log-probability of that action, new hidden state).
    Pass a zero vector of hidden_dim as the initial hidden state.
    """
    h = np.tanh(params.w_in @ x + params.w_h @ hidden + params.b_h)
    logp = log_softmax(params.w_a @ h + params.b_a)
    action = sample_categorical(np.exp(logp), rng.random())
    return action, float(logp[action]), h


def forward_hidden_batch(
    params: PolicyParams, hidden: np.ndarray, x: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Advance a batch of hidden states (M, H) given inputs (M, D); returns
    the new hidden states and the per-row action log-probabilities (M, A)."""
    h = np.tanh(x @ params.w_in.T + hidden @ params.w_h.T + params.b_h)
    return h, log_softmax(h @ params.w_a.T + params.b_a)


def score_gradient(params: PolicyParams, inputs: np.ndarray, actions: np.ndarray) -> ScoreGradient:
    """Exact gradient of sum_t log pi(a_t | x_{0:t}) via reverse-mode BPTT.

    inputs has shape (T, D), actions shape (T,).  T = 0 yields a zero
    gradient and zero log-probability.
    """
    horizon = len(actions)
    if inputs.shape[0] != horizon:
        raise ValueError("inputs and actions length mismatch")
    hdim = params.hidden_dim
    hs = np.zeros((horizon + 1, hdim))
    dlogits = np.zeros((horizon, params.num_actions))
    total_logprob = 0.0
    for t in range(horizon):
        hs[t + 1] = np.tanh(params.w_in @ inputs[t] + params.w_h @ hs[t] + params.b_h)
        logp = log_softmax(params.w_a @ hs[t + 1] + params.b_a)
        a = int(actions[t])
        total_logprob += logp[a]
        dlogits[t] = -np.exp(logp)
        dlogits[t, a] += 1.0

    d_w_in = np.zeros_like(params.w_in)
    d_w_h = np.zeros_like(params.w_h)
    d_b_h = np.zeros_like(params.b_h)
    d_w_a = np.zeros_like(params.w_a)
    d_b_a = np.zeros_like(params.b_a)
    dh_next = np.zeros(hdim)
    for t in range(horizon - 1, -1, -1):
        h = hs[t + 1]
        d_w_a += np.outer(dlogits[t], h)
        d_b_a += dlogits[t]
        dh = params.w_a.T @ dlogits[t] + dh_next
        du = (1.0 - h * h) * dh
        d_w_in += np.outer(du, inputs[t])
        d_w_h += np.outer(du, hs[t])
        d_b_h += du
        dh_next = params.w_h.T @ du
    flat = np.concatenate([d_w_in.ravel(), d_w_h.ravel(), d_b_h, d_w_a.ravel(), d_b_a])
    return ScoreGradient(dtheta=flat, total_logprob=float(total_logprob))


def weighted_score_sum(
    params: PolicyParams,
    inputs: np.ndarray,
    actions: np.ndarray,
    hidden_seq: np.ndarray,
    weights: np.ndarray,
) -> np.ndarray:
    """sum_m weights[m] * score_gradient(trajectory m) in one batched pass.

    inputs (M, T, D), actions (M, T), hidden_seq (T+1, M, H) as cached by the
    batched rollout (hidden_seq[0] is the zero initial state).  Equals the
    weighted sum of per-trajectory score gradients up to floating-point
    reassociation.
    """
    n, horizon = actions.shape
    d_w_in = np.zeros_like(params.w_in)
    d_w_h = np.zeros_like(params.w_h)
    d_b_h = np.zeros_like(params.b_h)
    d_w_a = np.zeros_like(params.w_a)
    d_b_a = np.zeros_like(params.b_a)
    dh_next = np.zeros((n, params.hidden_dim))
    w = weights[:, None]
    for t in range(horizon - 1, -1, -1):
        h = hidden_seq[t + 1]
        logp = log_softmax(h @ params.w_a.T + params.b_a)
        dlogits = -np.exp(logp)
        dlogits[np.arange(n), actions[:, t]] += 1.0
        dlogits *= w
        d_w_a += dlogits.T @ h
        d_b_a += dlogits.sum(axis=0)
        dh = dlogits @ params.w_a + dh_next
        du = (1.0 - h * h) * dh
        d_w_in += du.T @ inputs[:, t, :]
        d_w_h += du.T @ hidden_seq[t]
        d_b_h += du.sum(axis=0)
        dh_next = du @ params.w_h
    return np.concatenate([d_w_in.ravel(), d_w_h.ravel(), d_b_h, d_w_a.ravel(), d_b_a])


def save_policy(path, params: PolicyParams, env_tag: str) -> None:
    """JSON header line + little-endian float64 blob of the flat parameters."""
    header = {
        "format": POLICY_FORMAT,
        "env": env_tag,
        "input_dim": params.input_dim,
        "hidden_dim": params.hidden_dim,
        "num_actions": params.num_actions,
    }
    blob = params.to_flat().astype("<f8").tobytes()
    with open(path, "wb") as f:
        head = json.dumps(header).encode()
        f.write(struct.pack("<I", len(head)))
        f.write(head)
        f.write(blob)


def load_policy(path) -> tuple[PolicyParams, str]:
    with open(path, "rb") as f:
        (hlen,) = struct.unpack("<I", f.read(4))
        header = json.loads(f.read(hlen).decode())
        blob = f.read()
    if header.get("format") != POLICY_FORMAT:
        raise ValueError(f"unsupported policy format {header.get('format')!r}")
    h, d, a = header["hidden_dim"], header["input_dim"], header["num_actions"]
    flat = np.frombuffer(blob, dtype="<f8").astype(np.float64)
    template = PolicyParams(
        w_in=np.zeros((h, d)),
        w_h=np.zeros((h, h)),
        b_h=np.zeros(h),
        w_a=np.zeros((a, h)),
        b_a=np.zeros(a),
    )
    return template.from_flat(flat), header["env"]
