"""Policy-gradient training of the learned stopping controller.

Reward design, per committed target token t of a streamed run:

* quality: the change in smoothed sentence BLEU against the reference caused
  by token t, except the final token, which receives the full sentence BLEU
  of the finished output (so the per-token quality rewards telescope to
  BLEU(y_{T-1}) + BLEU(y_T)).
* delay: a one-sided hinge on average lagging, -max(0, AL - target_delay),
  scaled by alpha and attached to the final token only. A run that commits
  nothing gets a single virtual terminal reward carrying just the delay term
  (its AL is src_len by convention).

Returns are exact suffix sums R_t = sum_{i >= t} r_i. Each controller
consultation at candidate position p is credited with R_p (a consultation
after the last committed token gets 0). Updates follow plain REINFORCE: the
returns at consulted steps are standardized across the minibatch, multiplied
into the analytic grad-log-prob of the chosen actions, summed in a fixed
order (sentence, then trajectory, then step) and applied with Adam as an
ascent step. There is no learned baseline; the standardization is the only
variance control.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ArrivalSchedule, SentencePair, StreamTrace
from .decoding import ConsultRecord, LearnedStop, RunConfig, simulate
from .metrics import average_lagging, sentence_bleu
from .stopping import PolicyParams, init_policy, policy_grad_logp, zeros_like_params

_PARAM_FIELDS = ("W1", "b1", "W2", "b2", "W3", "b3")


@dataclass(frozen=True)
class RewardConfig:
    alpha: float = 0.04
    target_delay: float = 2.0
    bleu_scale: str = "unit"  # "unit" (0..1) or "percent" (0..100)
    floor_hinge: bool = False  # floor AL to an integer before the hinge

    def __post_init__(self):
        if self.bleu_scale not in ("unit", "percent"):
            raise ValueError(f"unknown bleu_scale {self.bleu_scale!r}")

    @property
    def scale(self) -> float:
        return 100.0 if self.bleu_scale == "percent" else 1.0


def delta_bleu(reference, prefix) -> float:
    """Change in smoothed sentence BLEU contributed by the last token of prefix."""
    prefix = tuple(prefix)
    if not prefix:
        raise ValueError("delta_bleu needs a non-empty prefix")
    return sentence_bleu(reference, prefix) - sentence_bleu(reference, prefix[:-1])


def delay_reward(al: float, target_delay: float, floor_hinge: bool = False) -> float:
    """One-sided lateness penalty: zero up to the target, linear beyond it.

    floor_hinge rounds the excess down to a whole token before the hinge.
    """
    excess = al - target_delay
    if floor_hinge:
        excess = math.floor(excess)
    return -max(0.0, float(excess))


def assemble_rewards(trace: StreamTrace, reference, cfg: RewardConfig):
    """Per-token rewards and suffix-sum returns for one finished run.

    Returns (rewards, returns, al). For an empty output both lists hold a
    single virtual terminal entry.
    """
    reference = tuple(reference)
    if not reference:
        raise ValueError("empty reference")
    out = trace.output
    n = len(out)
    al = average_lagging(trace.l, trace.src_len, n)
    delay = cfg.alpha * delay_reward(al, cfg.target_delay, cfg.floor_hinge)
    scale = cfg.scale
    if n == 0:
        rewards = [delay]
    else:
        rewards = []
        prev = 0.0
        for t in range(1, n):
            cur = scale * sentence_bleu(reference, out[:t])
            rewards.append(cur - prev)
            prev = cur
        rewards.append(scale * sentence_bleu(reference, out) + delay)
    returns = [0.0] * len(rewards)
    acc = 0.0
    for i in range(len(rewards) - 1, -1, -1):
        acc += rewards[i]
        returns[i] = acc
    return rewards, returns, al


@dataclass(frozen=True)
class Trajectory:
    """One sampled rollout with its shaped rewards and controller activity."""

    trace: StreamTrace
    reference: tuple[int, ...]
    rewards: tuple[float, ...]
    returns: tuple[float, ...]
    consults: tuple[ConsultRecord, ...]
    al: float
    bleu: float  # smoothed sentence BLEU of the final output, 0..1

    @property
    def logp_actions(self) -> tuple[float, ...]:
        return tuple(c.logp for c in self.consults)

    @property
    def total_return(self) -> float:
        return self.returns[0] if self.returns else 0.0

    def consult_return(self, consult: ConsultRecord) -> float:
        """Return credited to a consultation: the suffix sum at its position."""
        if consult.position <= len(self.trace.output):
            return self.returns[consult.position - 1]
        if len(self.trace.output) == 0:
            return self.returns[0]  # virtual terminal reward
        return 0.0


def sample_trajectory(model, pair: SentencePair, params: PolicyParams,
                      cfg: RewardConfig, rng, cap: int = 200) -> Trajectory:
    """Roll out the stochastic policy on one sentence (training schedule: one
    source token per outer step) and attach rewards."""
    run = RunConfig(
        controller=LearnedStop(params=params, mode="sample"),
        schedule=ArrivalSchedule.constant(1),
        cap=cap,
    )
    consults: list[ConsultRecord] = []
    trace = simulate(model, pair.source, run, rng=rng, consults=consults)
    rewards, returns, al = assemble_rewards(trace, pair.reference, cfg)
    return Trajectory(
        trace=trace,
        reference=pair.reference,
        rewards=tuple(rewards),
        returns=tuple(returns),
        consults=tuple(consults),
        al=al,
        bleu=sentence_bleu(pair.reference, trace.output),
    )


@dataclass
class AdamState:
    """First/second moment accumulators for the ascent optimizer."""

    m: PolicyParams
    v: PolicyParams
    step: int = 0

    @classmethod
    def zeros(cls, params: PolicyParams) -> "AdamState":
        return cls(m=zeros_like_params(params), v=zeros_like_params(params))


def adam_ascent(params: PolicyParams, grad: PolicyParams, state: AdamState,
                lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
                eps: float = 1e-8) -> tuple[PolicyParams, AdamState]:
    t = state.step + 1
    new_p, new_m, new_v = {}, {}, {}
    for name in _PARAM_FIELDS:
        g = getattr(grad, name)
        m = beta1 * getattr(state.m, name) + (1 - beta1) * g
        v = beta2 * getattr(state.v, name) + (1 - beta2) * (g * g)
        new_m[name] = m
        new_v[name] = v
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        new_p[name] = getattr(params, name) + lr * m_hat / (np.sqrt(v_hat) + eps)
    return PolicyParams(**new_p), AdamState(
        m=PolicyParams(**new_m), v=PolicyParams(**new_v), step=t
    )


@dataclass
class UpdateStats:
    mean_return: float
    mean_bleu: float
    mean_al: float
    p_stop_mean: float
    consults: int


def policy_gradient_step(params: PolicyParams, trajectories, adam: AdamState,
                         lr: float = 1e-3) -> tuple[PolicyParams, AdamState, UpdateStats]:
    """One REINFORCE update over a minibatch of trajectories.

    Trajectory order is meaningful: gradients accumulate in the order given
    (callers pass sentence-major, trajectory-minor), so repeated runs are
    bit-identical.
    """
    credited = []  # (z, action, return) in fixed order
    p_stops = []
    for traj in trajectories:
        for consult in traj.consults:
            credited.append((consult.z, consult.action, traj.consult_return(consult)))
            p_stops.append(consult.p_stop)
    grad = zeros_like_params(params)
    if credited:
        values = np.array([r for _, _, r in credited], dtype=np.float64)
        centered = values - values.mean()
        std = float(values.std())
        if std > 0.0:
            centered = centered / (std + 1e-8)
        for (z, action, _), weight in zip(credited, centered):
            if weight == 0.0:
                continue
            g = policy_grad_logp(params, z, action)
            for name in _PARAM_FIELDS:
                acc = getattr(grad, name)
                acc += weight * getattr(g, name)
    new_params, adam = adam_ascent(params, grad, adam, lr=lr)
    n = max(1, len(trajectories))
    stats = UpdateStats(
        mean_return=sum(t.total_return for t in trajectories) / n,
        mean_bleu=sum(t.bleu for t in trajectories) / n,
        mean_al=sum(t.al for t in trajectories) / n,
        p_stop_mean=sum(p_stops) / len(p_stops) if p_stops else 0.0,
        consults=len(p_stops),
    )
    return new_params, adam, stats


@dataclass(frozen=True)
class TrainConfig:
    updates: int = 2000
    batch_size: int = 8
    trajectories: int = 5
    lr: float = 1e-3
    seed: int = 0
    log_interval: int = 10
    cap: int = 200
    h1: int = 64
    h2: int = 64

    def to_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}


LOG_HEADER = ("update", "mean_return", "mean_bleu", "mean_al", "p_stop_mean")


def _traj_rng(seed: int, update: int, sentence_idx: int, traj_idx: int):
    key = np.random.SeedSequence((seed, update, sentence_idx, traj_idx))
    return np.random.Generator(np.random.PCG64(key))


def train_tn(model, pairs, train_cfg: TrainConfig, reward_cfg: RewardConfig,
             log_path=None, progress=None):
    """Train a stopping network from scratch on a corpus of SentencePairs.

    Returns (params, log_rows). The final update's parameters are the
    product; no model selection over the run. Every trajectory draws from its
    own RNG stream keyed by (seed, update, batch slot, trajectory index), so
    results do not depend on execution interleaving.
    """
    if not pairs:
        raise ValueError("empty training corpus")
    params = init_policy(model.hidden_size, train_cfg.h1, train_cfg.h2, seed=train_cfg.seed)
    adam = AdamState.zeros(params)
    batch_rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence((train_cfg.seed, 0xBA7)))
    )
    log_rows: list[tuple] = []
    for update in range(1, train_cfg.updates + 1):
        chosen = batch_rng.integers(0, len(pairs), size=train_cfg.batch_size)
        batch: list[Trajectory] = []
        for slot, sent_idx in enumerate(chosen):
            pair = pairs[int(sent_idx)]
            for tj in range(train_cfg.trajectories):
                rng = _traj_rng(train_cfg.seed, update, slot, tj)
                batch.append(
                    sample_trajectory(model, pair, params, reward_cfg, rng,
                                      cap=train_cfg.cap)
                )
        params, adam, stats = policy_gradient_step(params, batch, adam, lr=train_cfg.lr)
        if update % train_cfg.log_interval == 0 or update == train_cfg.updates:
            row = (update, stats.mean_return, stats.mean_bleu, stats.mean_al,
                   stats.p_stop_mean)
            log_rows.append(row)
            if progress is not None:
                progress(update, stats)
    if log_path is not None:
        with open(log_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(LOG_HEADER)
            writer.writerows(log_rows)
    return params, log_rows
