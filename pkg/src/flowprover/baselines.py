"""SFT and PPO baselines over the same policy and encoding stack.

SFT maximizes the likelihood of ground-truth actions under the
history-augmented encoding (mean-reduced over proof steps, so losses are
comparable across proof lengths) and never touches the environment. PPO
collects rollouts at temperature 1, uses the terminal shaped log-reward as
the Monte-Carlo return for every step (discount 1), advantage = return
minus a learned state value, and maximizes the clipped surrogate minus a
value MSE penalty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Theorem
from .env import ACTION_INDEX
from .gfn import StepMetrics, TrainConfig, sample_trajectory
from .nn import NonFiniteGradient, Tape, optim_step
from .policy import (
    HISTORY,
    PolicyNet,
    encode_from_parts,
    log_prob_graph,
    value_graph,
    value_np,
)


@dataclass(frozen=True)
class PPOConfig:
    clip_eps: float = 0.2
    ppo_epochs: int = 4
    value_coef: float = 0.5
    discount: float = 1.0

    def __post_init__(self):
        assert 0.0 < self.clip_eps < 1.0


def gt_step_encodings(thm: Theorem) -> tuple[list[np.ndarray], list[int]]:
    """History-augmented (encoding, gt action index) pairs along the proof."""
    from .gfn import trajectory_from_tactics

    gt = trajectory_from_tactics(thm, list(thm.gt_proof))
    encs, actions = [], []
    for i, t in enumerate(gt.tactics):
        encs.append(encode_from_parts(gt.initial_state, gt.tactics[:i],
                                      gt.proof_states[i], HISTORY))
        actions.append(ACTION_INDEX[t])
    return encs, actions


class SFTTrainer:
    """Cross-entropy on ground-truth trajectories; one theorem per step."""

    def __init__(self, theorems: list[Theorem], net: PolicyNet, cfg: TrainConfig,
                 seed: int = 0):
        self.theorems = list(theorems)
        self.net = net
        self.cfg = cfg
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.step_index = 0
        self.total_env_calls = 0
        self.grad_skips = 0
        self._pairs = {t.name: gt_step_encodings(t) for t in self.theorems}

    def train_step(self, thm: Theorem) -> StepMetrics:
        encs, actions = self._pairs[thm.name]
        x = np.stack(encs)
        y = np.asarray(actions, dtype=np.intp)
        tape = Tape()
        from .reward_model import cross_entropy_graph

        loss = cross_entropy_graph(tape, self.net.store, x, y)
        grads = tape.backward(loss)
        skipped = False
        try:
            optim_step(self.net.store, grads, self.cfg.optim)
        except NonFiniteGradient:
            skipped = True
            self.grad_skips += 1
        self.step_index += 1
        return StepMetrics(
            step=self.step_index,
            mode="sft",
            loss=float(loss.value),
            mean_log_r=float("nan"),
            mean_log_pf=float("nan"),
            log_z=float("nan"),
            env_calls=0,
            grad_skipped=skipped,
        )


def gt_top1_accuracy(net: PolicyNet, theorems: list[Theorem]) -> float:
    """Share of ground-truth steps where the gt action has the top logit."""
    from .nn import mlp_forward_np

    hits = 0
    total = 0
    for thm in theorems:
        encs, actions = gt_step_encodings(thm)
        logits, _ = mlp_forward_np(net.store, np.stack(encs))
        hits += int(np.sum(logits.argmax(axis=-1) == np.asarray(actions)))
        total += len(actions)
    return hits / total


def greedy_decode(net: PolicyNet, thm: Theorem, max_depth: int = 3) -> list:
    """Follow argmax actions from the initial state (for overfit checks)."""
    from .env import ACTIONS, apply_tactic
    from .nn import mlp_forward_np

    state = thm.initial_state
    history: list = []
    for _ in range(max_depth):
        enc = encode_from_parts(thm.initial_state, history, state, HISTORY)
        logits, _ = mlp_forward_np(net.store, enc)
        tactic = ACTIONS[int(np.argmax(logits))]
        history.append(tactic)
        result = apply_tactic(state, tactic)
        if not result.ok:
            break
        state = result.state
    return history


def ppo_surrogate_terms(ratio: float, advantage: float, clip_eps: float) -> float:
    """Single-step clipped objective value (reference arithmetic)."""
    return min(ratio * advantage,
               float(np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps)) * advantage)


def ppo_loss_graph(tape: Tape, net: PolicyNet, steps, old_logps, advantages,
                   ppo: PPOConfig):
    """Clipped-surrogate loss graph for one optimization epoch.

    ``steps`` holds (encoding, action index, return) triples collected under
    the old policy; the ratio uses the stored old log-probs. Gradients pass
    through the unclipped branch only where it is the smaller one, so a
    clipped step contributes exactly zero policy gradient.
    """
    surrogate_terms = []
    value_sq_errors = []
    for (enc, a, ret), old_lp, adv in zip(steps, old_logps, advantages):
        lp = log_prob_graph(tape, net, enc, a)
        ratio = tape.exp(tape.shift(lp, -old_lp))
        unclipped = tape.scale(ratio, adv)
        clipped = tape.scale(tape.clip(ratio, 1.0 - ppo.clip_eps, 1.0 + ppo.clip_eps), adv)
        surrogate_terms.append(tape.minimum(unclipped, clipped))
        v = value_graph(tape, net, enc)
        value_sq_errors.append(tape.square(tape.shift(v, -ret)))
    surrogate = tape.mean(tape.stack(surrogate_terms))
    value_mse = tape.mean(tape.stack(value_sq_errors))
    loss = tape.add(tape.neg(surrogate), tape.scale(value_mse, ppo.value_coef))
    return loss, surrogate, value_mse


class PPOTrainer:
    """Clipped-surrogate policy optimization with a learned value head."""

    def __init__(self, theorems: list[Theorem], net: PolicyNet, cfg: TrainConfig,
                 ppo: PPOConfig = PPOConfig(), rm=None, seed: int = 0):
        net.ensure_value_head()
        self.theorems = list(theorems)
        self.net = net
        self.cfg = cfg
        self.ppo = ppo
        self.rm = rm
        self.rng = np.random.default_rng(np.random.SeedSequence(seed))
        self.step_index = 0
        self.total_env_calls = 0
        self.grad_skips = 0

    def _collect(self, thms: list[Theorem]):
        cfg = self.cfg
        # on-policy rollouts at T=1, never tempered
        rollcfg = TrainConfig(
            mode="gfn_oo", temper_p=0.0, max_depth=cfg.max_depth,
            n_sampled=cfg.n_sampled,
            reward_mode=cfg.reward_mode if self.rm is not None else "binary",
        )
        steps = []
        envs = [0]
        rewards = []
        logpfs = []
        for thm in thms:
            for _ in range(cfg.n_sampled):
                traj = sample_trajectory(thm, self.net, rollcfg, self.rng, rm=self.rm,
                                         env_counter=envs)
                rewards.append(traj.log_r)
                logpfs.append(traj.log_pf)
                n = len(traj.tactics)
                for i, t in enumerate(traj.tactics):
                    # Monte-Carlo return: per-step reward is 0 except the
                    # terminal shaped log-reward
                    ret = self.ppo.discount ** (n - 1 - i) * traj.log_r
                    enc = encode_from_parts(traj.initial_state, traj.tactics[:i],
                                            traj.proof_states[i], HISTORY)
                    steps.append((enc, ACTION_INDEX[t], ret))
        return steps, envs[0], rewards, logpfs

    def train_step(self, thms: list[Theorem] | Theorem) -> StepMetrics:
        if isinstance(thms, Theorem):
            thms = [thms]
        cfg, ppo = self.cfg, self.ppo
        steps, env_calls, rewards, logpfs = self._collect(thms)
        self.total_env_calls += env_calls

        from .policy import action_log_probs

        old_logps = []
        advantages = []
        for enc, a, ret in steps:
            old_logps.append(float(action_log_probs(self.net, enc)[a]))
            advantages.append(ret - value_np(self.net, enc))

        last_loss = float("nan")
        skipped = False
        for _ in range(ppo.ppo_epochs):
            tape = Tape()
            loss, _, _ = ppo_loss_graph(tape, self.net, steps, old_logps, advantages, ppo)
            grads = tape.backward(loss)
            try:
                optim_step(self.net.store, grads, cfg.optim)
            except NonFiniteGradient:
                skipped = True
                self.grad_skips += 1
            last_loss = float(loss.value)

        self.step_index += 1
        return StepMetrics(
            step=self.step_index,
            mode="ppo",
            loss=last_loss,
            mean_log_r=float(np.mean(rewards)) if rewards else float("nan"),
            mean_log_pf=float(np.mean(logpfs)) if logpfs else float("nan"),
            log_z=float("nan"),
            env_calls=env_calls,
            grad_skipped=skipped,
        )
