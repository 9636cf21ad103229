"""Brute-force check of epsilon-policy invariance between two contexts.

Two contexts are epsilon-policy invariant when each context's optimal policy
loses at most epsilon of the optimal value under the other context.  This
module decides that exactly for small horizons by enumerating every
deterministic observation-history policy as a decision tree over the
reachable history tree, computing each policy's exact (undiscounted) value
under both contexts by forward path sums.

The number of trees is exponential in the branching of the reachable
observation support, so enumeration is guarded by a hard cap.  The optimal
sets are taken up to a tie tolerance, and each cross-context test uses the
most favorable member of the other context's optimal set.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .model import ContextId, DiscreteCPOMDP


class EnumerationCapError(RuntimeError):
    """Raised when the policy enumeration would exceed its configured cap."""


@dataclass(frozen=True)
class PolicyTree:
    """Deterministic policy as a decision tree: act, then branch on the
    observation received."""

    action: int
    children: tuple  # tuple of (obs, PolicyTree), empty at the horizon

    def to_dict(self) -> dict:
        return {
            "action": self.action,
            "children": {o: sub.to_dict() for o, sub in self.children},
        }


@dataclass(frozen=True)
class InvarianceVerdict:
    invariant: bool
    epsilon: float
    best_value_i: float
    best_value_j: float
    cross_value_i: float  # best value under i among j's optimal policies
    cross_value_j: float
    gap_i: float
    gap_j: float
    witness_i: PolicyTree
    witness_j: PolicyTree
    policies_enumerated: int


def _enumerate(m, ci, cj, alpha_i, alpha_j, depth, cap, counter):
    """All policies over the reachable history tree, with exact values.

    alpha_* carry the unnormalized joint mass P(state, history so far) per
    context, so immediate expected rewards are plain dot products.  Returns a
    list of (value_i, value_j, PolicyTree).
    """
    if depth == 0:
        return [(0.0, 0.0, None)]
    out = []
    for a in range(m.num_actions):
        ri = float(alpha_i @ m.reward[ci, :, a])
        rj = float(alpha_j @ m.reward[cj, :, a])
        flow_i = m.transition[ci, a].T @ alpha_i
        flow_j = m.transition[cj, a].T @ alpha_j
        support = []
        for o in range(m.num_obs):
            branch_i = m.emission[ci, :, o] * flow_i
            branch_j = m.emission[cj, :, o] * flow_j
            if branch_i.sum() > 0.0 or branch_j.sum() > 0.0:
                support.append((o, branch_i, branch_j))
        child_lists = [
            _enumerate(m, ci, cj, bi, bj, depth - 1, cap, counter)
            for _, bi, bj in support
        ]
        for combo in product(*child_lists):
            vi = ri + sum(ch[0] for ch in combo)
            vj = rj + sum(ch[1] for ch in combo)
            tree = PolicyTree(
                a, tuple((support[idx][0], ch[2]) for idx, ch in enumerate(combo))
            )
            out.append((vi, vj, tree))
            counter[0] += 1
            if counter[0] > cap:
                raise EnumerationCapError(
                    f"policy enumeration exceeded cap of {cap}; "
                    "reduce the horizon or the observation branching"
                )
    return out


def epsilon_invariance_check(
    m: DiscreteCPOMDP,
    ci: ContextId,
    cj: ContextId,
    epsilon: float,
    t_small: int,
    cap: int = 200_000,
    tie_tol: float = 1e-9,
) -> InvarianceVerdict:
    """Decide epsilon-policy invariance of contexts ci and cj over t_small steps.

    Values are exact undiscounted expected reward sums.  Raises
    EnumerationCapError when the reachable policy tree is too large.
    """
    counter = [0]
    cands = _enumerate(m, ci, cj, m.init[ci].copy(), m.init[cj].copy(), t_small, cap, counter)
    vi = np.array([c[0] for c in cands])
    vj = np.array([c[1] for c in cands])
    best_i, best_j = float(vi.max()), float(vj.max())
    argmax_i = np.nonzero(vi >= best_i - tie_tol)[0]
    argmax_j = np.nonzero(vj >= best_j - tie_tol)[0]
    # Most favorable optimal policy of the *other* context.
    cross_i = float(vi[argmax_j].max())
    cross_j = float(vj[argmax_i].max())
    return InvarianceVerdict(
        invariant=(best_i - cross_i <= epsilon) and (best_j - cross_j <= epsilon),
        epsilon=epsilon,
        best_value_i=best_i,
        best_value_j=best_j,
        cross_value_i=cross_i,
        cross_value_j=cross_j,
        gap_i=best_i - cross_i,
        gap_j=best_j - cross_j,
        witness_i=cands[int(argmax_i[np.argmax(vj[argmax_i])])][2],
        witness_j=cands[int(argmax_j[np.argmax(vi[argmax_j])])][2],
        policies_enumerated=len(cands),
    )
