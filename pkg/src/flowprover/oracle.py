"""Exhaustive trajectory enumeration: exact partition function, target
distribution R/Z, the policy's exact trajectory distribution, and flow
consistency checks. This is the instrument that certifies the trained
policy samples proofs proportionally to reward.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .corpus import Theorem
from .env import ACTION_INDEX, ACTIONS, ProofState, Tactic, apply_tactic, parse_tactic
from .gfn import DEPTH_EXHAUSTED, ENV_ERROR, PROVED, RewardSpec, Trajectory, log_reward
from .nn import log_softmax_np
from .policy import HISTORY, PolicyNet, action_logits, encode_from_parts


class MassLeak(RuntimeError):
    """Enumerated policy probabilities failed to account for all mass."""


@dataclass
class EnumeratedTrajectory:
    tactics: tuple[Tactic, ...]
    outcome: str
    log_r: float
    proof_states: tuple[ProofState, ...]  # state before each tactic


@dataclass
class ExactDist:
    """Every terminal trajectory of a theorem with exact log rewards.

    ``rewards`` may carry the raw reward values for hand-built toys where
    exp(log r) would lose the exactness the arithmetic checks rely on.
    """

    theorem: Theorem | None
    trajectories: list[EnumeratedTrajectory]
    log_z: float
    target_probs: np.ndarray
    policy_probs: np.ndarray | None = None
    action_set: tuple[int, ...] | None = None
    max_depth: int = 3
    rewards: np.ndarray | None = None


def enumerate_trajectories(thm: Theorem, max_depth: int = 3,
                           spec: RewardSpec = RewardSpec(mode="binary"), rm=None,
                           action_set: tuple[int, ...] | None = None) -> ExactDist:
    """Depth-first enumeration of all terminal trajectories, with the same
    termination semantics as training rollouts (stop on proved / error /
    depth). Rewards go through the trainer's log_reward, so the oracle and
    the trainer can never disagree about R."""
    actions = [ACTIONS[i] for i in action_set] if action_set is not None else list(ACTIONS)
    found: list[EnumeratedTrajectory] = []

    def recurse(state: ProofState, prefix: tuple[Tactic, ...],
                states: tuple[ProofState, ...]) -> None:
        for tactic in actions:
            result = apply_tactic(state, tactic)
            tacs = prefix + (tactic,)
            pre_states = states + (state,)
            if result.proved:
                found.append(EnumeratedTrajectory(tacs, PROVED, 0.0, pre_states))
            elif result.failed:
                found.append(EnumeratedTrajectory(tacs, ENV_ERROR, 0.0, pre_states))
            elif len(tacs) >= max_depth:
                found.append(EnumeratedTrajectory(tacs, DEPTH_EXHAUSTED, 0.0, pre_states))
            else:
                recurse(result.state, tacs, pre_states)

    recurse(thm.initial_state, (), ())
    for t in found:
        traj = Trajectory(
            theorem_name=thm.name,
            tactics=t.tactics,
            proof_states=t.proof_states if t.outcome == ENV_ERROR
            else t.proof_states + (_advance(t),),
            outcome=t.outcome,
            log_pf=0.0,
        )
        t.log_r = log_reward(traj, spec, rm=rm)

    log_rs = np.array([t.log_r for t in found])
    log_z = float(_logsumexp(log_rs))
    target = np.exp(log_rs - log_z)
    return ExactDist(
        theorem=thm,
        trajectories=found,
        log_z=log_z,
        target_probs=target,
        action_set=action_set,
        max_depth=max_depth,
    )


def _advance(t: EnumeratedTrajectory) -> ProofState:
    """Final state after the last tactic (for proved / depth-exhausted)."""
    result = apply_tactic(t.proof_states[-1], t.tactics[-1])
    if result.proved:
        return ProofState(())
    assert result.ok
    return result.state


def _logsumexp(xs: np.ndarray) -> float:
    m = xs.max()
    return float(m + np.log(np.exp(xs - m).sum()))


def policy_trajectory_probs(net: PolicyNet, dist: ExactDist) -> np.ndarray:
    """Exact probability of each enumerated trajectory under the policy at
    temperature 1. Enumeration is exhaustive, so these must account for all
    probability mass; raises MassLeak otherwise."""
    assert dist.theorem is not None, "needs a real theorem's enumeration"
    subset = np.asarray(dist.action_set, dtype=np.intp) if dist.action_set is not None else None
    probs = np.empty(len(dist.trajectories))
    cache: dict[tuple[Tactic, ...], np.ndarray] = {}
    for j, t in enumerate(dist.trajectories):
        logp = 0.0
        for i, tactic in enumerate(t.tactics):
            prefix = t.tactics[:i]
            if prefix in cache:
                lps = cache[prefix]
            else:
                enc = encode_from_parts(dist.theorem.initial_state, prefix,
                                        t.proof_states[i], HISTORY)
                logits = action_logits(net, enc)
                lps = log_softmax_np(logits[subset] if subset is not None else logits)
                cache[prefix] = lps
            pos = ACTION_INDEX[tactic] if subset is None else int(
                np.nonzero(subset == ACTION_INDEX[tactic])[0][0])
            logp += float(lps[pos])
        probs[j] = np.exp(logp)
    total = float(probs.sum())
    if total < 1.0 - 1e-6:
        raise MassLeak(f"policy probabilities sum to {total}, enumeration must be exhaustive")
    dist.policy_probs = probs
    return probs


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    """Total variation, half-L1 convention."""
    return float(0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class FlowCheckReport:
    max_residual: float
    n_edges: int
    per_edge: list[tuple[tuple[str, ...], float]] = field(default_factory=list)


def flow_check(dist: ExactDist, net: PolicyNet | None = None,
               edge_probs: dict | None = None) -> FlowCheckReport:
    """Detailed-balance residuals on the trajectory tree.

    With subtree flows F(s) = sum of terminal rewards below s and the
    backward policy identically 1 on a tree, balance demands
    F(s) * P_F(child|s) = F(child); the report carries the worst absolute
    residual. Pass ``edge_probs`` (prefix tuple of rendered tactics ->
    probability vector over that node's taken edges, in child order) to
    check a hand-built policy instead of a network.
    """
    # Build the prefix tree with terminal rewards at the leaves.
    children: dict[tuple, list] = {(): []}
    flows: dict[tuple, float] = {}
    for j, t in enumerate(dist.trajectories):
        key = tuple(x.render() for x in t.tactics)
        flows[key] = float(dist.rewards[j]) if dist.rewards is not None \
            else float(np.exp(t.log_r))
        for i in range(len(key)):
            parent, node = key[:i], key[: i + 1]
            children.setdefault(parent, [])
            if node not in children[parent]:
                children[parent].append(node)
            children.setdefault(node, [])

    def flow(node: tuple) -> float:
        if node in flows:
            return flows[node]
        flows[node] = sum(flow(c) for c in children[node])
        return flows[node]

    state_of: dict[tuple, ProofState] = {}
    if net is not None:
        assert dist.theorem is not None
        for t in dist.trajectories:
            key = tuple(x.render() for x in t.tactics)
            for i, s in enumerate(t.proof_states):
                state_of[key[:i]] = s

    subset = np.asarray(dist.action_set, dtype=np.intp) if dist.action_set is not None else None
    report = FlowCheckReport(max_residual=0.0, n_edges=0)
    for parent in sorted(children, key=lambda k: (len(k), k)):
        kids = children[parent]
        if not kids:
            continue
        if edge_probs is not None:
            probs = np.asarray(edge_probs[parent], dtype=np.float64)
        else:
            assert net is not None, "flow_check needs a net or explicit edge_probs"
            tactics = tuple(parse_prefix(parent))
            enc = encode_from_parts(dist.theorem.initial_state, tactics,
                                    state_of[parent], HISTORY)
            logits = action_logits(net, enc)
            lps = log_softmax_np(logits[subset] if subset is not None else logits)
            positions = []
            for kid in kids:
                idx = ACTION_INDEX[parse_tactic(kid[-1])]
                positions.append(idx if subset is None else int(
                    np.nonzero(subset == idx)[0][0]))
            probs = np.exp(lps[positions])
        f_parent = flow(parent)
        for kid, p in zip(kids, probs):
            residual = abs(f_parent * float(p) - flow(kid))
            report.per_edge.append((kid, residual))
            report.max_residual = max(report.max_residual, residual)
            report.n_edges += 1
    return report


def parse_prefix(key: tuple) -> list[Tactic]:
    return [parse_tactic(s) for s in key]


@dataclass
class OracleReport:
    theorem: str
    n_trajectories: int
    log_z: float
    predicted_log_z: float
    tv_distance: float
    max_flow_residual: float

    def to_dict(self) -> dict:
        return {
            "theorem": self.theorem,
            "n_trajectories": self.n_trajectories,
            "log_Z": self.log_z,
            "predicted_log_Z": self.predicted_log_z,
            "tv_distance": self.tv_distance,
            "max_flow_residual": self.max_flow_residual,
        }


def oracle_report(net: PolicyNet, thm: Theorem, max_depth: int = 3,
                  spec: RewardSpec = RewardSpec(mode="binary"), rm=None,
                  action_set: tuple[int, ...] | None = None) -> OracleReport:
    """Full verification pass for one theorem."""
    from .policy import predict_log_z

    dist = enumerate_trajectories(thm, max_depth=max_depth, spec=spec, rm=rm,
                                  action_set=action_set)
    probs = policy_trajectory_probs(net, dist)
    flow = flow_check(dist, net=net)
    return OracleReport(
        theorem=thm.name,
        n_trajectories=len(dist.trajectories),
        log_z=dist.log_z,
        predicted_log_z=predict_log_z(net, thm),
        tv_distance=tv_distance(probs, dist.target_probs),
        max_flow_residual=flow.max_residual,
    )


def reports_to_json(reports: list[OracleReport]) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2)
