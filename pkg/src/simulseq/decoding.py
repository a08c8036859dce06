"""The streaming engine: two nested loops around a frozen translator.

The outer loop reveals source tokens according to an arrival schedule; the
inner loop greedily extends the target from the current prefix until a
stopping controller says to wait for more input. Committed tokens are never
retracted. The final outer step sees the whole source and always runs the
model out to EOS (or the global length cap), so every run ends with a
complete translation attempt.

Inner-loop stop conditions, in the order they are checked for each candidate
token: global length cap, quota exhausted (heuristic controllers), model
predicted EOS (the EOS itself is never committed at a non-terminal step; at
the terminal step it simply ends the run), learned controller said stop (the
candidate is not committed). The learned controller is consulted once per
candidate at non-terminal steps only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    ACTION_STOP,
    DEFAULT_TARGET_CAP,
    STOP_CAP,
    STOP_EOS,
    STOP_POLICY,
    STOP_QUOTA,
    ArrivalSchedule,
    StreamTrace,
)
from .model import STRATEGIES, STRATEGY_REBUILD
from .stopping import PolicyParams, lag_quota, tn_should_stop, waitk_quota


@dataclass(frozen=True)
class LagStop:
    """Heuristic controller: keep the target `lag` tokens behind the source."""

    lag: int

    def label(self) -> tuple[str, str]:
        return "le", str(self.lag)


@dataclass(frozen=True)
class WaitK:
    """Read k tokens, then alternate one write per read (lag of k - 1)."""

    k: int

    def label(self) -> tuple[str, str]:
        return "waitk", str(self.k)


@dataclass(frozen=True)
class LearnedStop:
    """Trained stopping network; mode is "greedy" (inference) or "sample"."""

    params: PolicyParams
    mode: str = "greedy"
    name: str = "tn"

    def label(self) -> tuple[str, str]:
        return "tn", self.name


Controller = LagStop | WaitK | LearnedStop


@dataclass(frozen=True)
class RunConfig:
    controller: Controller
    schedule: ArrivalSchedule = field(default_factory=lambda: ArrivalSchedule.constant(1))
    strategy: str = STRATEGY_REBUILD
    cap: int = DEFAULT_TARGET_CAP

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.cap < 1:
            raise ValueError("cap must be >= 1")


@dataclass(frozen=True)
class ConsultRecord:
    """One learned-controller consultation during a run."""

    position: int  # candidate target position, 1-based
    z: np.ndarray
    action: int
    logp: float
    p_stop: float


def _step_quota(controller, revealed, written, terminal, cap):
    if isinstance(controller, LagStop):
        return lag_quota(revealed, written, controller.lag, terminal, cap)
    if isinstance(controller, WaitK):
        return waitk_quota(controller.k, revealed, written, terminal, cap)
    return None  # learned controller has no per-step quota


def prefix_translate(model, state, committed, revealed, terminal, config,
                     rng=None, consults=None, actions=None):
    """Extend the target from the current prefix until a stop condition fires.

    Returns (new_tokens, stop_reason, state). `committed` is not mutated;
    `consults` and `actions`, when given, collect controller activity.
    """
    controller = config.controller
    learned = isinstance(controller, LearnedStop)
    quota = _step_quota(controller, revealed, len(committed), terminal, config.cap)
    new: list[int] = []
    while True:
        total = len(committed) + len(new)
        if total >= config.cap:
            reason = STOP_CAP
            break
        if quota is not None and len(new) >= quota:
            reason = STOP_QUOTA
            break
        step = model.decode_step(state, list(committed) + new)
        if step.is_eos:
            reason = STOP_EOS
            break
        if learned and not terminal:
            decision = tn_should_stop(controller.params, step.state, controller.mode, rng)
            if actions is not None:
                actions.append((total + 1, decision.action))
            if consults is not None:
                consults.append(
                    ConsultRecord(
                        position=total + 1,
                        z=step.state,
                        action=decision.action,
                        logp=decision.logp,
                        p_stop=decision.p_stop,
                    )
                )
            if decision.action == ACTION_STOP:
                reason = STOP_POLICY
                break
        new.append(step.token_id)
        state = model.commit(state, step)
    return new, reason, state


def simulate(model, source, config: RunConfig, rng=None, consults=None) -> StreamTrace:
    """Stream one sentence through the engine and return its full trace.

    Deterministic given (model, source, config) except for a LearnedStop in
    sample mode, which draws from `rng`. Distinct sentences share nothing, so
    callers may simulate them concurrently.
    """
    source = tuple(source)
    counts = config.schedule.reveal_counts(len(source))
    steps = len(counts)
    state = model.initial_state()
    committed: list[int] = []
    w_list: list[int] = []
    reasons: list[str] = []
    l_list: list[int] = []
    actions: list[tuple[int, int]] = []
    revealed = 0
    for s, c_s in enumerate(counts, 1):
        revealed += c_s
        terminal = s == steps
        state = model.prepare(state, source[:revealed], committed, config.strategy)
        new, reason, state = prefix_translate(
            model, state, committed, revealed, terminal, config,
            rng=rng, consults=consults, actions=actions,
        )
        committed.extend(new)
        l_list.extend([revealed] * len(new))
        w_list.append(len(new))
        reasons.append(reason)
    trace = StreamTrace(
        c=tuple(counts),
        w=tuple(w_list),
        l=tuple(l_list),
        output=tuple(committed),
        actions=tuple(actions),
        stop_reasons=tuple(reasons),
    )
    trace.validate()
    return trace


def simulate_corpus(model, pairs, config: RunConfig, rng=None) -> list[StreamTrace]:
    """Simulate a list of SentencePairs in order (sources only; refs ignored)."""
    return [simulate(model, pair.source, config, rng=rng) for pair in pairs]
