"""Forward policy over the 36-action space.

States are encoded as 164-dim feature vectors: 64 hashed current-goal
features, 64 identical features of the theorem's initial state, and 36
per-action history counts. Including the initial state and the tactic
history makes distinct tactic prefixes encode distinctly, so the search
graph is a tree and the backward policy contributes nothing to the
trajectory-balance residual. The history-less variant (used by the reward
model and for base-model evaluation) zeroes the last 100 dims.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import Theorem
from .env import ACTION_INDEX, ACTIONS, N_ACTIONS, ProofState, Tactic
from .formulas import Atom, Formula, Implies
from .nn import (
    ParamStore,
    Tape,
    Var,
    init_mlp,
    log_softmax_np,
    mlp_forward,
    mlp_forward_np,
    softmax_np,
)

CUR_DIM = 64
INIT_DIM = 64
HIST_DIM = N_ACTIONS
ENC_DIM = CUR_DIM + INIT_DIM + HIST_DIM  # 164

HISTORY = "history"
HISTORY_LESS = "history_less"

_HASH_PERSON = b"featmap1"  # fixed seed for the feature hash


def _bin(token: str) -> int:
    digest = hashlib.blake2b(token.encode(), digest_size=8, person=_HASH_PERSON).digest()
    return int.from_bytes(digest, "big") % CUR_DIM


def _kind(f: Formula) -> str:
    return type(f).__name__


def _formula_tokens(prefix: str, f: Formula, depth: int = 0) -> list[str]:
    if isinstance(f, Atom):
        return [f"{prefix}:atom={f.name}"]
    toks = [f"{prefix}:conn={_kind(f)}"]
    toks += _formula_tokens(prefix, f.lhs, depth + 1)
    toks += _formula_tokens(prefix, f.rhs, depth + 1)
    return toks


def _state_tokens(state: ProofState) -> list[str]:
    toks = [f"n_goals={len(state.goals)}"]
    if not state.goals:
        return toks
    g = state.goals[0]
    toks.append(f"g0:n_hyps={len(g.hyps)}")
    toks.append(f"g0:tgt:root={_kind(g.target)}")
    toks.append(f"g0:tgt:depth={_formula_depth(g.target)}")
    toks += _formula_tokens("g0:tgt", g.target)
    for k, (_, hf) in enumerate(g.hyps, start=1):
        toks.append(f"g0:h{k}:root={_kind(hf)}")
        toks += _formula_tokens(f"g0:h{k}", hf)
        # applicability indicators: which hypothesis positions can close or
        # reduce the target (exact / apply shape tests)
        if hf == g.target:
            toks.append(f"g0:h{k}:eq_tgt")
        if isinstance(hf, Implies) and hf.rhs == g.target:
            toks.append(f"g0:h{k}:concl_eq_tgt")
    for g2 in state.goals[1:]:
        toks.append("g+:goal")
        toks.append(f"g+:tgt:root={_kind(g2.target)}")
    return toks


def _formula_depth(f: Formula) -> int:
    if isinstance(f, Atom):
        return 1
    return 1 + max(_formula_depth(f.lhs), _formula_depth(f.rhs))


def _hash_bag(tokens: list[str]) -> np.ndarray:
    vec = np.zeros(CUR_DIM)
    for tok in tokens:
        vec[_bin(tok)] += 1.0
    return vec


def encode_state(thm: Theorem, history: list[Tactic] | tuple[Tactic, ...],
                 state: ProofState, mode: str = HISTORY) -> np.ndarray:
    """Feature vector for (theorem, tactic history, current state)."""
    return encode_from_parts(thm.initial_state, history, state, mode)


def encode_from_parts(initial: ProofState, history, state: ProofState,
                      mode: str = HISTORY) -> np.ndarray:
    vec = np.zeros(ENC_DIM)
    vec[:CUR_DIM] = _hash_bag(_state_tokens(state))
    if mode == HISTORY:
        vec[CUR_DIM:CUR_DIM + INIT_DIM] = _hash_bag(_state_tokens(initial))
        for t in history:
            vec[CUR_DIM + INIT_DIM + ACTION_INDEX[t]] += 1.0
    elif mode != HISTORY_LESS:
        raise ValueError(f"unknown encoding mode {mode!r}")
    return vec


# ---------------------------------------------------------------------------
# Policy network


@dataclass
class PolicyNet:
    """MLP trunk (164 -> 128 -> 128 -> 36) plus a linear log-Z head on the
    last hidden layer. The log-Z head trains jointly with the trunk."""

    store: ParamStore
    hidden: int = 128

    @classmethod
    def create(cls, seed: int, hidden: int = 128, scale: float | None = None,
               with_value_head: bool = False) -> "PolicyNet":
        rng = np.random.default_rng(seed)
        store = init_mlp(rng, ENC_DIM, hidden, N_ACTIONS, scale=scale)
        store.add("wz", np.zeros(hidden))
        store.add("bz", np.zeros(()))
        if with_value_head:
            store.add("wv", np.zeros(hidden))
            store.add("bv", np.zeros(()))
        return cls(store=store, hidden=hidden)

    def ensure_value_head(self) -> None:
        if "wv" not in self.store.arrays:
            self.store.add("wv", np.zeros(self.hidden))
            self.store.add("bv", np.zeros(()))

    def save(self, path: str | Path) -> None:
        self.store.save(path)

    @classmethod
    def load(cls, path: str | Path) -> "PolicyNet":
        store = ParamStore.load(path)
        return cls(store=store, hidden=store["w2"].shape[0])


def action_logits(net: PolicyNet, encoded: np.ndarray) -> np.ndarray:
    """Unnormalized scores over all 36 actions; no masking of inapplicable
    tactics (invalid ones earn the error reward branch instead)."""
    logits, _ = mlp_forward_np(net.store, encoded)
    return logits


def action_log_probs(net: PolicyNet, encoded: np.ndarray,
                     action_set: np.ndarray | None = None) -> np.ndarray:
    """Log probabilities at temperature 1, optionally renormalized over a
    restricted action subset (indices into ACTIONS)."""
    logits = action_logits(net, encoded)
    if action_set is None:
        return log_softmax_np(logits)
    return log_softmax_np(logits[np.asarray(action_set, dtype=np.intp)])


def sample_action(net: PolicyNet, encoded: np.ndarray, temperature: float,
                  rng: np.random.Generator,
                  action_set: np.ndarray | None = None) -> tuple[Tactic, float]:
    """Sample from softmax(logits / T); the returned log-probability is
    always the temperature-1 value (tempering drives exploration only)."""
    assert temperature > 0.0
    logits = action_logits(net, encoded)
    if action_set is not None:
        subset = np.asarray(action_set, dtype=np.intp)
        sub_logits = logits[subset]
    else:
        subset = None
        sub_logits = logits
    probs_t = softmax_np(sub_logits / temperature)
    choice = int(rng.choice(len(sub_logits), p=probs_t))
    log_pf = float(log_softmax_np(sub_logits)[choice])
    action_idx = int(subset[choice]) if subset is not None else choice
    return ACTIONS[action_idx], log_pf


def predict_log_z(net: PolicyNet, thm: Theorem) -> float:
    """Learned log-partition estimate from the initial state's hidden."""
    enc = encode_state(thm, (), thm.initial_state, HISTORY)
    _, hidden = mlp_forward_np(net.store, enc)
    return float(np.dot(net.store["wz"], hidden) + net.store["bz"])


# -- taped graph builders (training) ----------------------------------------


def log_prob_graph(tape: Tape, net: PolicyNet, encoded: np.ndarray, action_idx: int,
                   action_set: np.ndarray | None = None) -> Var:
    """Taped log P(action | encoded state) at temperature 1."""
    logits, _, _ = mlp_forward(net.store, encoded, tape)
    if action_set is not None:
        subset = np.asarray(action_set, dtype=np.intp)
        pos = int(np.nonzero(subset == action_idx)[0][0])
        return tape.gather(tape.log_softmax(tape.take(logits, subset)), pos)
    return tape.gather(tape.log_softmax(logits), action_idx)


def log_z_graph(tape: Tape, net: PolicyNet, encoded_initial: np.ndarray) -> Var:
    _, hidden, _ = mlp_forward(net.store, encoded_initial, tape)
    return tape.add(tape.dot(tape.param(net.store, "wz"), hidden), tape.param(net.store, "bz"))


def value_graph(tape: Tape, net: PolicyNet, encoded: np.ndarray) -> Var:
    _, hidden, _ = mlp_forward(net.store, encoded, tape)
    return tape.add(tape.dot(tape.param(net.store, "wv"), hidden), tape.param(net.store, "bv"))


def value_np(net: PolicyNet, encoded: np.ndarray) -> float:
    _, hidden = mlp_forward_np(net.store, encoded)
    return float(np.dot(net.store["wv"], hidden) + net.store["bv"])
