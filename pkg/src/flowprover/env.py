"""Deterministic tactic prover over propositional goals.

A proof state is an ordered list of goals (hypotheses |- target). Tactics
act on the first goal only and either transform it, discharge it, or fail
with a modeled error (never an exception). The action space is fixed at 36
actions: 4 argument-less tactics plus 4 hypothesis tactics x 8 positional
arguments.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass

from .formulas import And, Formula, Implies, Or, parse_formula, print_formula

H_MAX = 8  # hypothesis-argument cap; action space = 4 + 4*8 = 36


class TacticKind(enum.Enum):
    INTRO = "intro"
    SPLIT = "split"
    LEFT = "left"
    RIGHT = "right"
    EXACT = "exact"
    APPLY = "apply"
    CASES = "cases"
    DESTRUCT = "destruct"


_ARGLESS = (TacticKind.INTRO, TacticKind.SPLIT, TacticKind.LEFT, TacticKind.RIGHT)
_WITH_ARG = (TacticKind.EXACT, TacticKind.APPLY, TacticKind.CASES, TacticKind.DESTRUCT)


@dataclass(frozen=True)
class Tactic:
    """One prover action. ``arg`` is a 1-based position into the goal's
    hypothesis list (not the hypothesis's display name)."""

    kind: TacticKind
    arg: int | None = None

    def __post_init__(self):
        if self.kind in _ARGLESS:
            assert self.arg is None, f"{self.kind.value} takes no argument"
        else:
            assert self.arg is not None and 1 <= self.arg <= H_MAX

    def render(self) -> str:
        if self.arg is None:
            return self.kind.value
        return f"{self.kind.value} h{self.arg}"

    def __str__(self) -> str:
        return self.render()


_TACTIC_RE = re.compile(r"^(intro|split|left|right|exact|apply|cases|destruct)(?:\s+h([1-8]))?$")


def parse_tactic(text: str) -> Tactic:
    m = _TACTIC_RE.match(text.strip())
    if m is None:
        raise ValueError(f"not a tactic: {text!r}")
    kind = TacticKind(m.group(1))
    arg = int(m.group(2)) if m.group(2) else None
    if (kind in _ARGLESS) != (arg is None):
        raise ValueError(f"wrong arity for tactic: {text!r}")
    return Tactic(kind, arg)


# Fixed action enumeration: 4 argless, then each arg'd kind over h1..h8.
ACTIONS: tuple[Tactic, ...] = tuple(
    [Tactic(k) for k in _ARGLESS] + [Tactic(k, i) for k in _WITH_ARG for i in range(1, H_MAX + 1)]
)
N_ACTIONS = len(ACTIONS)
ACTION_INDEX: dict[Tactic, int] = {t: i for i, t in enumerate(ACTIONS)}


@dataclass(frozen=True)
class Goal:
    """Hypotheses (name, formula) in arrival order, plus a target."""

    hyps: tuple[tuple[str, Formula], ...]
    target: Formula

    def render(self) -> str:
        if not self.hyps:
            return f"|- {print_formula(self.target)}"
        hs = ", ".join(f"{n} : {print_formula(f)}" for n, f in self.hyps)
        return f"{hs} |- {print_formula(self.target)}"


@dataclass(frozen=True)
class ProofState:
    goals: tuple[Goal, ...]

    @property
    def done(self) -> bool:
        return not self.goals

    def render(self) -> str:
        if not self.goals:
            return "<proved>"
        return "; ".join(g.render() for g in self.goals)


def initial_state(target: Formula) -> ProofState:
    return ProofState((Goal((), target),))


class ErrorReason(enum.Enum):
    NO_SUCH_HYPOTHESIS = "no_such_hypothesis"
    SHAPE_MISMATCH = "shape_mismatch"
    NO_GOALS = "no_goals"


class StepKind(enum.Enum):
    OK = "ok"
    PROVED = "proved"
    ERROR = "error"


@dataclass(frozen=True)
class StepResult:
    kind: StepKind
    state: ProofState | None = None
    error: ErrorReason | None = None

    @property
    def ok(self) -> bool:
        return self.kind is StepKind.OK

    @property
    def proved(self) -> bool:
        return self.kind is StepKind.PROVED

    @property
    def failed(self) -> bool:
        return self.kind is StepKind.ERROR


def _err(reason: ErrorReason) -> StepResult:
    return StepResult(StepKind.ERROR, error=reason)


def _finish(goals: tuple[Goal, ...]) -> StepResult:
    if not goals:
        return StepResult(StepKind.PROVED)
    return StepResult(StepKind.OK, state=ProofState(goals))


def _fresh_name(hyps: tuple[tuple[str, Formula], ...], bump: int = 0) -> str:
    # Arrival-order naming: next index above any name currently in the goal.
    top = 0
    for name, _ in hyps:
        if name.startswith("h") and name[1:].isdigit():
            top = max(top, int(name[1:]))
    return f"h{top + 1 + bump}"


def apply_tactic(state: ProofState, tactic: Tactic) -> StepResult:
    """Apply one tactic to the first goal. Total: always returns exactly one
    of Ok / Proved / EnvError; never raises on modeled inputs."""
    if not state.goals:
        return _err(ErrorReason.NO_GOALS)
    goal, rest = state.goals[0], state.goals[1:]
    kind = tactic.kind

    if kind is TacticKind.INTRO:
        if not isinstance(goal.target, Implies):
            return _err(ErrorReason.SHAPE_MISMATCH)
        hyps = goal.hyps + ((_fresh_name(goal.hyps), goal.target.lhs),)
        return _finish((Goal(hyps, goal.target.rhs),) + rest)

    if kind is TacticKind.SPLIT:
        if not isinstance(goal.target, And):
            return _err(ErrorReason.SHAPE_MISMATCH)
        return _finish(
            (Goal(goal.hyps, goal.target.lhs), Goal(goal.hyps, goal.target.rhs)) + rest
        )

    if kind in (TacticKind.LEFT, TacticKind.RIGHT):
        if not isinstance(goal.target, Or):
            return _err(ErrorReason.SHAPE_MISMATCH)
        side = goal.target.lhs if kind is TacticKind.LEFT else goal.target.rhs
        return _finish((Goal(goal.hyps, side),) + rest)

    # Hypothesis tactics: 1-based positional argument.
    k = tactic.arg
    assert k is not None
    if k > len(goal.hyps):
        return _err(ErrorReason.NO_SUCH_HYPOTHESIS)
    hname, hform = goal.hyps[k - 1]

    if kind is TacticKind.EXACT:
        if hform != goal.target:
            return _err(ErrorReason.SHAPE_MISMATCH)
        return _finish(rest)

    if kind is TacticKind.APPLY:
        if not (isinstance(hform, Implies) and hform.rhs == goal.target):
            return _err(ErrorReason.SHAPE_MISMATCH)
        return _finish((Goal(goal.hyps, hform.lhs),) + rest)

    if kind is TacticKind.CASES:
        if not isinstance(hform, Or):
            return _err(ErrorReason.SHAPE_MISMATCH)
        def with_hyp(f: Formula) -> Goal:
            hyps = goal.hyps[: k - 1] + ((hname, f),) + goal.hyps[k:]
            return Goal(hyps, goal.target)
        return _finish((with_hyp(hform.lhs), with_hyp(hform.rhs)) + rest)

    if kind is TacticKind.DESTRUCT:
        if not isinstance(hform, And):
            return _err(ErrorReason.SHAPE_MISMATCH)
        hyps = goal.hyps[: k - 1] + goal.hyps[k:]
        n1 = _fresh_name(hyps)
        n2 = _fresh_name(hyps, bump=1)
        hyps = hyps + ((n1, hform.lhs), (n2, hform.rhs))
        return _finish((Goal(hyps, goal.target),) + rest)

    raise AssertionError(f"unhandled tactic kind {kind}")


def state_fingerprint(state: ProofState) -> int:
    """64-bit content hash of the canonical rendering; stable across runs."""
    digest = hashlib.blake2b(state.render().encode(), digest_size=8, person=b"miniprop").digest()
    return int.from_bytes(digest, "big")


# Sentinel for the proved (no goals) state: fixed by the canonical rendering.
PROVED_FINGERPRINT = state_fingerprint(ProofState(()))


def replay(state: ProofState, tactics: list[Tactic] | tuple[Tactic, ...]) -> StepResult:
    """Run a tactic sequence from ``state``; returns the final StepResult.

    Stops early on error. An empty sequence on an open state returns Ok.
    """
    result = StepResult(StepKind.OK, state=state)
    for t in tactics:
        if not result.ok:
            return result
        result = apply_tactic(result.state, t)
    return result


def parse_goal_formula(text: str) -> ProofState:
    """Initial proof state for a theorem statement given as formula text."""
    return initial_state(parse_formula(text))
