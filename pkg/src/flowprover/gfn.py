"""Trajectory-balance training loop with shaped rewards and trajectory replay.

Log-reward cases (alpha=8, c=88 max tactic chars, l = mean tactic chars):

    proved          -> 0
    env error       -> -15 + alpha * ln((c - l) / c)
    depth exhausted -> sum_i (1/len(t_i)) * rm_log_prob(t_i | s_{i-1})   (full mode)
                       error branch                                      (binary mode)

The trajectory-balance residual per trajectory is
``log Z(theorem) + log P_F(trajectory) - log R(trajectory)`` and the loss is
the batch mean of its square; the backward-policy term vanishes because the
history-augmented encoding makes every state single-parent. (The loss is
zero exactly at the reward-proportional optimum, which the enumeration
oracle certifies.)
"""

from __future__ import annotations

import logging
from collections import deque
from dataclasses import dataclass

import numpy as np

from .corpus import Theorem
from .env import ACTION_INDEX, ProofState, Tactic, apply_tactic
from .nn import NonFiniteGradient, OptimConfig, Tape, optim_step
from .policy import (
    HISTORY,
    PolicyNet,
    action_log_probs,
    encode_from_parts,
    log_prob_graph,
    log_z_graph,
    sample_action,
)

logger = logging.getLogger(__name__)

PROVED = "proved"
ENV_ERROR = "env_error"
DEPTH_EXHAUSTED = "depth_exhausted"

FULL_RM = "full_rm"
BINARY = "binary"


class InvalidLength(ValueError):
    """Mean tactic length reached the cap c; the shaping log would blow up."""


@dataclass(frozen=True)
class RewardSpec:
    alpha: float = 8.0
    c_max_tactic_len: float = 88.0
    error_base: float = -15.0
    mode: str = FULL_RM

    def __post_init__(self):
        assert self.alpha > 0 and self.c_max_tactic_len > 0
        assert self.mode in (FULL_RM, BINARY)


@dataclass
class Trajectory:
    """One rollout: tactics, visited states, outcome, and both log scores.

    ``proof_states`` holds the states the tactics were applied in (index i
    is the state before tactic i), plus the resulting state when the rollout
    did not end in an environment error.
    """

    theorem_name: str
    tactics: tuple[Tactic, ...]
    proof_states: tuple[ProofState, ...]
    outcome: str
    log_pf: float
    log_r: float = 0.0
    source: str = "online"

    @property
    def initial_state(self) -> ProofState:
        return self.proof_states[0]

    @property
    def states(self) -> tuple[str, ...]:
        rendered = tuple(s.render() for s in self.proof_states)
        if self.outcome == ENV_ERROR:
            return rendered + ("<error>",)
        return rendered

    def __len__(self) -> int:
        return len(self.tactics)


def mean_tactic_chars(tactics) -> float:
    assert tactics, "trajectory must contain at least one tactic"
    return float(np.mean([len(t.render()) for t in tactics]))


def error_branch_log_reward(tactics, spec: RewardSpec) -> float:
    l = mean_tactic_chars(tactics)
    c = spec.c_max_tactic_len
    if l >= c:
        raise InvalidLength(f"mean tactic length {l} >= cap {c}")
    return spec.error_base + spec.alpha * float(np.log((c - l) / c))


def log_reward(traj: Trajectory, spec: RewardSpec, rm=None) -> float:
    """Shaped log reward of a complete trajectory (policy-independent)."""
    if traj.outcome == PROVED:
        return 0.0
    if traj.outcome == ENV_ERROR or spec.mode == BINARY:
        return error_branch_log_reward(traj.tactics, spec)
    assert traj.outcome == DEPTH_EXHAUSTED
    assert rm is not None, "full-reward mode needs a reward model for partial credit"
    total = 0.0
    for i, t in enumerate(traj.tactics):
        total += rm.score(traj.proof_states[i], t) / len(t.render())
    return total


@dataclass
class TrainConfig:
    lr: float = 1e-4
    clip_norm: float = 0.5
    total_steps: int = 2000
    n_sampled: int = 5
    replay_p: float = 0.5
    temper_p: float = 0.666
    temper_low: float = 0.25
    temper_high: float = 1.0
    max_depth: int = 3
    mode: str = "gfn"  # gfn | gfn_oo | gfn_br_oo | sft | ppo
    inject_gt: bool = True
    buffer_capacity: int = 64
    reward_mode: str = FULL_RM
    weight_decay: float = 0.01
    action_set: tuple[int, ...] | None = None  # restricted subsets are test-only

    def __post_init__(self):
        assert self.mode in ("gfn", "gfn_oo", "gfn_br_oo", "sft", "ppo")
        if self.mode in ("gfn_oo", "gfn_br_oo"):
            self.replay_p = 0.0
        if self.mode == "gfn_br_oo":
            self.reward_mode = BINARY

    @property
    def reward_spec(self) -> RewardSpec:
        return RewardSpec(mode=self.reward_mode)

    @property
    def optim(self) -> OptimConfig:
        return OptimConfig(lr=self.lr, clip_norm=self.clip_norm,
                           weight_decay=self.weight_decay)

    def action_subset(self) -> np.ndarray | None:
        if self.action_set is None:
            return None
        return np.asarray(self.action_set, dtype=np.intp)


@dataclass
class BufferEntry:
    tactics: tuple[Tactic, ...]
    proof_states: tuple[ProofState, ...]
    outcome: str
    log_r: float  # frozen at insertion; rewards are policy-independent


class ReplayBuffer:
    """Per-theorem FIFO ring buffers of finished trajectories."""

    def __init__(self, capacity: int = 64):
        self.capacity = capacity
        self._buffers: dict[str, deque[BufferEntry]] = {}
        self.reads = 0
        self.writes = 0

    def add(self, traj: Trajectory) -> None:
        buf = self._buffers.setdefault(traj.theorem_name, deque(maxlen=self.capacity))
        buf.append(BufferEntry(traj.tactics, traj.proof_states, traj.outcome, traj.log_r))
        self.writes += 1

    def size(self, theorem_name: str) -> int:
        return len(self._buffers.get(theorem_name, ()))

    def sample(self, theorem_name: str, k: int, rng: np.random.Generator) -> list[BufferEntry]:
        """Uniform with replacement."""
        buf = self._buffers[theorem_name]
        picks = rng.integers(0, len(buf), size=k)
        self.reads += int(k)
        return [buf[int(i)] for i in picks]


class ReplayDiverged(RuntimeError):
    """A buffered trajectory is structurally inconsistent with its tactics."""


def sample_trajectory(thm: Theorem, net: PolicyNet, cfg: TrainConfig,
                      rng: np.random.Generator, rm=None,
                      env_counter: list[int] | None = None) -> Trajectory:
    """Roll out the policy from the theorem's initial state.

    Generation is tempered with probability ``temper_p`` (T uniform in
    [temper_low, temper_high]); the accumulated log_pf is always the
    temperature-1 policy probability. The rollout ends on proof completion,
    on environment error, or at max_depth.
    """
    if rng.random() < cfg.temper_p:
        temperature = float(rng.uniform(cfg.temper_low, cfg.temper_high))
    else:
        temperature = 1.0
    subset = cfg.action_subset()

    tactics: list[Tactic] = []
    visited: list[ProofState] = [thm.initial_state]
    state = thm.initial_state
    log_pf = 0.0
    outcome = DEPTH_EXHAUSTED
    for _ in range(cfg.max_depth):
        enc = encode_from_parts(thm.initial_state, tactics, state, HISTORY)
        tactic, step_lp = sample_action(net, enc, temperature, rng, action_set=subset)
        log_pf += step_lp
        tactics.append(tactic)
        result = apply_tactic(state, tactic)
        if env_counter is not None:
            env_counter[0] += 1
        if result.proved:
            visited.append(ProofState(()))
            outcome = PROVED
            break
        if result.failed:
            outcome = ENV_ERROR
            break
        state = result.state
        visited.append(state)

    traj = Trajectory(
        theorem_name=thm.name,
        tactics=tuple(tactics),
        proof_states=tuple(visited),
        outcome=outcome,
        log_pf=log_pf,
    )
    traj.log_r = log_reward(traj, cfg.reward_spec, rm=rm)
    return traj


def trajectory_from_tactics(thm: Theorem, tactics, source: str = "ground_truth",
                            env_counter: list[int] | None = None) -> Trajectory:
    """Build a trajectory by replaying a known tactic sequence (log_pf unset)."""
    visited = [thm.initial_state]
    state = thm.initial_state
    outcome = DEPTH_EXHAUSTED
    for t in tactics:
        result = apply_tactic(state, t)
        if env_counter is not None:
            env_counter[0] += 1
        if result.proved:
            visited.append(ProofState(()))
            outcome = PROVED
            break
        if result.failed:
            outcome = ENV_ERROR
            break
        state = result.state
        visited.append(state)
    n = len(visited) - (0 if outcome == ENV_ERROR else 1)
    return Trajectory(
        theorem_name=thm.name,
        tactics=tuple(tactics[:n]),
        proof_states=tuple(visited),
        outcome=outcome,
        log_pf=0.0,
        source=source,
    )


def replay_forward(net: PolicyNet, traj: Trajectory,
                   action_set: np.ndarray | None = None) -> float:
    """Recompute the trajectory's log P_F under the current policy at T=1.

    Uses the stored states; no environment calls. Raises ReplayDiverged if
    the stored shape cannot be consistent with any replay.
    """
    _check_shape(traj)
    total = 0.0
    for i, t in enumerate(traj.tactics):
        enc = encode_from_parts(traj.initial_state, traj.tactics[:i],
                                traj.proof_states[i], HISTORY)
        lps = _log_probs(net, enc, action_set)
        total += lps[_pos(t, action_set)]
    return float(total)


def _check_shape(traj: Trajectory) -> None:
    expect = len(traj.tactics) if traj.outcome == ENV_ERROR else len(traj.tactics) + 1
    if len(traj.proof_states) != expect or not traj.tactics:
        raise ReplayDiverged(
            f"trajectory for {traj.theorem_name!r} has {len(traj.proof_states)} "
            f"states for {len(traj.tactics)} tactics ({traj.outcome})"
        )


def _log_probs(net: PolicyNet, enc: np.ndarray, action_set) -> np.ndarray:
    return action_log_probs(net, enc, action_set=action_set)


def _pos(tactic: Tactic, action_set) -> int:
    idx = ACTION_INDEX[tactic]
    if action_set is None:
        return idx
    where = np.nonzero(np.asarray(action_set) == idx)[0]
    assert len(where) == 1, f"action {tactic} outside the restricted set"
    return int(where[0])


@dataclass
class StepMetrics:
    step: int
    mode: str
    loss: float
    mean_log_r: float
    mean_log_pf: float
    log_z: float
    env_calls: int
    wall_ms: int = 0
    val_solved: int | None = None
    grad_skipped: bool = False


def tb_loss_value(log_rs, log_zs, log_pfs) -> float:
    """Pure trajectory-balance loss on given components (no network)."""
    log_rs = np.asarray(log_rs, dtype=np.float64)
    log_zs = np.asarray(log_zs, dtype=np.float64)
    log_pfs = np.asarray(log_pfs, dtype=np.float64)
    residuals = log_zs + log_pfs - log_rs
    return float(np.mean(residuals * residuals))


def tb_loss(batch: list[Trajectory], net: PolicyNet,
            action_set: np.ndarray | None = None) -> float:
    """Trajectory-balance loss of a batch under the current policy (value
    only; the trainer builds the same graph with gradients)."""
    tape = Tape()
    loss, _ = tb_loss_graph(tape, net, batch, action_set=action_set)
    return float(loss.value)


def tb_loss_graph(tape: Tape, net: PolicyNet, batch: list[Trajectory],
                  action_set: np.ndarray | None = None,
                  encodings: dict | None = None):
    """Build the TB loss graph; returns (loss Var, per-trajectory info)."""
    log_z_nodes = {}
    residuals = []
    info = {"log_pf": [], "log_z": {}}
    for traj in batch:
        if traj.theorem_name not in log_z_nodes:
            z_key = ("log_z", traj.theorem_name)
            if encodings is not None and z_key in encodings:
                enc0 = encodings[z_key]
            else:
                enc0 = encode_from_parts(traj.initial_state, (), traj.initial_state, HISTORY)
            log_z_nodes[traj.theorem_name] = log_z_graph(tape, net, enc0)
            info["log_z"][traj.theorem_name] = float(log_z_nodes[traj.theorem_name].value)
        steps = []
        for i, t in enumerate(traj.tactics):
            key = (id(traj), i)
            if encodings is not None and key in encodings:
                enc = encodings[key]
            else:
                enc = encode_from_parts(traj.initial_state, traj.tactics[:i],
                                        traj.proof_states[i], HISTORY)
                if encodings is not None:
                    encodings[key] = enc
            steps.append(log_prob_graph(tape, net, enc, ACTION_INDEX[t], action_set))
        log_pf = tape.add_n(steps)
        info["log_pf"].append(float(log_pf.value))
        delta = tape.shift(tape.add(log_z_nodes[traj.theorem_name], log_pf), -traj.log_r)
        residuals.append(tape.square(delta))
    loss = tape.mean(tape.stack(residuals))
    return loss, info


class GFNTrainer:
    """Runs trajectory-balance fine-tuning over a theorem list.

    Ground-truth trajectories are injected into every batch; fresh online
    rollouts are buffered; replay steps re-score stored tactics under the
    current policy without touching the environment.
    """

    def __init__(self, theorems: list[Theorem], net: PolicyNet, cfg: TrainConfig,
                 rm=None, seed: int = 0):
        if cfg.reward_mode == FULL_RM and rm is None:
            raise ValueError("full-reward mode requires a reward model")
        self.theorems = list(theorems)
        self.net = net
        self.cfg = cfg
        self.rm = rm
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.total_env_calls = 0
        self.step_index = 0
        self.grad_skips = 0
        # Ground-truth states and encodings never change; cache them up front.
        self._gt: dict[str, Trajectory] = {}
        self._gt_enc: dict[str, list[np.ndarray]] = {}
        self._enc0: dict[str, np.ndarray] = {}
        for thm in self.theorems:
            gt = trajectory_from_tactics(thm, list(thm.gt_proof))
            assert gt.outcome == PROVED, f"ground truth for {thm.name} does not prove"
            gt.log_r = 0.0
            self._gt[thm.name] = gt
            self._gt_enc[thm.name] = [
                encode_from_parts(gt.initial_state, gt.tactics[:i], gt.proof_states[i], HISTORY)
                for i in range(len(gt.tactics))
            ]
            self._enc0[thm.name] = encode_from_parts(
                thm.initial_state, (), thm.initial_state, HISTORY)

    def _gt_trajectory(self, thm: Theorem) -> Trajectory:
        return self._gt[thm.name]

    def train_step(self, thm: Theorem) -> StepMetrics:
        cfg = self.cfg
        subset = cfg.action_subset()
        env_counter = [0]

        use_replay = (
            cfg.replay_p > 0.0
            and self.rng.random() < cfg.replay_p
            and self.buffer.size(thm.name) > 0
        )
        batch: list[Trajectory] = []
        if use_replay:
            for entry in self.buffer.sample(thm.name, cfg.n_sampled, self.rng):
                batch.append(Trajectory(
                    theorem_name=thm.name,
                    tactics=entry.tactics,
                    proof_states=entry.proof_states,
                    outcome=entry.outcome,
                    log_pf=0.0,  # recomputed in the loss graph
                    log_r=entry.log_r,
                    source="replay",
                ))
        else:
            for _ in range(cfg.n_sampled):
                traj = sample_trajectory(thm, self.net, cfg, self.rng, rm=self.rm,
                                         env_counter=env_counter)
                batch.append(traj)
                self.buffer.add(traj)

        encodings: dict = {("log_z", thm.name): self._enc0[thm.name]}
        if cfg.inject_gt:
            gt = self._gt_trajectory(thm)
            for i, enc in enumerate(self._gt_enc[thm.name]):
                encodings[(id(gt), i)] = enc
            batch.append(gt)

        tape = Tape()
        loss, info = tb_loss_graph(tape, self.net, batch, action_set=subset,
                                   encodings=encodings)
        grads = tape.backward(loss)
        skipped = False
        try:
            optim_step(self.net.store, grads, cfg.optim)
        except NonFiniteGradient as exc:
            skipped = True
            self.grad_skips += 1
            logger.warning("step %d: %s; update skipped", self.step_index, exc)

        self.total_env_calls += env_counter[0]
        self.step_index += 1
        return StepMetrics(
            step=self.step_index,
            mode=cfg.mode,
            loss=float(loss.value),
            mean_log_r=float(np.mean([t.log_r for t in batch])),
            mean_log_pf=float(np.mean(info["log_pf"])),
            log_z=info["log_z"][thm.name],
            env_calls=env_counter[0],
            grad_skipped=skipped,
        )
