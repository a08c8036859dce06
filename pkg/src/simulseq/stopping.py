"""Stopping controllers for the streaming inner loop.

Two families:

* Quota heuristics: the writer keeps the target a fixed lag behind the
  observed source (lag_quota), with wait-k as the special case d = k - 1.
  They return "how many tokens may be written this outer step"; the model's
  own EOS prediction can still end the step earlier.
* A learned stopping network: a small feedforward policy over the decoder
  state of the candidate token, consulted before each commit at non-terminal
  steps. Stochastic in training (sample mode), deterministic at inference
  (greedy mode). The terminal outer step never consults it.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .core import ACTION_CONTINUE, ACTION_STOP, DEFAULT_TARGET_CAP

CHECKPOINT_VERSION = 1
DEFAULT_H1 = 64
DEFAULT_H2 = 64


def lag_quota(revealed: int, written: int, lag: int, terminal: bool,
              cap: int = DEFAULT_TARGET_CAP) -> int:
    """Max tokens the writer may commit this step under a fixed-lag policy.

    Non-terminal steps top the target up to `revealed - lag`; the terminal
    step lifts the limit to the global length cap so the run can flush.
    """
    if lag < 0:
        raise ValueError("lag must be >= 0")
    if terminal:
        return cap - written
    return max(0, revealed - written - lag)


def waitk_quota(k: int, revealed: int, written: int, terminal: bool,
                cap: int = DEFAULT_TARGET_CAP) -> int:
    """wait-k is the lag heuristic with d = k - 1 (first write after k reads)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return lag_quota(revealed, written, k - 1, terminal, cap)


@dataclass(frozen=True)
class PolicyParams:
    """Weights of the stopping network: two tanh hidden layers and a 2-way
    softmax head over [continue, stop]."""

    W1: np.ndarray  # (H, H1)
    b1: np.ndarray  # (H1,)
    W2: np.ndarray  # (H1, H2)
    b2: np.ndarray  # (H2,)
    W3: np.ndarray  # (H2, 2)
    b3: np.ndarray  # (2,)

    @property
    def sizes(self) -> tuple[int, int, int]:
        return self.W1.shape[0], self.W1.shape[1], self.W2.shape[1]

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(getattr(self, f).copy() for f in _FIELDS))


_FIELDS = ("W1", "b1", "W2", "b2", "W3", "b3")


def init_policy(hidden: int, h1: int = DEFAULT_H1, h2: int = DEFAULT_H2,
                seed: int = 0) -> PolicyParams:
    """Seeded init. The output layer starts at zero so a fresh policy is
    exactly indifferent: [0.5, 0.5] for every input."""
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xA11))))
    return PolicyParams(
        W1=rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, h1)),
        b1=np.zeros(h1),
        W2=rng.normal(0.0, 1.0 / np.sqrt(h1), size=(h1, h2)),
        b2=np.zeros(h2),
        W3=np.zeros((h2, 2)),
        b3=np.zeros(2),
    )


def zeros_like_params(params: PolicyParams) -> PolicyParams:
    return PolicyParams(*(np.zeros_like(getattr(params, f)) for f in _FIELDS))


def _forward_cached(params: PolicyParams, z: np.ndarray):
    h1 = np.tanh(z @ params.W1 + params.b1)
    h2 = np.tanh(h1 @ params.W2 + params.b2)
    logits = h2 @ params.W3 + params.b3
    shifted = logits - logits.max()
    exp = np.exp(shifted)
    probs = exp / exp.sum()
    return probs, h1, h2


def policy_forward(params: PolicyParams, z) -> np.ndarray:
    """Action distribution [p_continue, p_stop] for decoder state z."""
    z = np.asarray(z, dtype=np.float64)
    probs, _, _ = _forward_cached(params, z)
    return probs


def policy_grad_logp(params: PolicyParams, z, action: int) -> PolicyParams:
    """Analytic gradient of log pi(action | z) w.r.t. every parameter."""
    if action not in (ACTION_CONTINUE, ACTION_STOP):
        raise ValueError(f"bad action {action}")
    z = np.asarray(z, dtype=np.float64)
    probs, h1, h2 = _forward_cached(params, z)
    dlogits = -probs
    dlogits[action] += 1.0
    gW3 = np.outer(h2, dlogits)
    gb3 = dlogits
    dh2 = params.W3 @ dlogits
    dpre2 = (1.0 - h2 * h2) * dh2
    gW2 = np.outer(h1, dpre2)
    gb2 = dpre2
    dh1 = params.W2 @ dpre2
    dpre1 = (1.0 - h1 * h1) * dh1
    gW1 = np.outer(z, dpre1)
    gb1 = dpre1
    return PolicyParams(W1=gW1, b1=gb1, W2=gW2, b2=gb2, W3=gW3, b3=gb3)


@dataclass(frozen=True)
class StopDecision:
    action: int
    p_stop: float
    logp: float  # log-probability of the chosen action


def tn_should_stop(params: PolicyParams, z, mode: str, rng=None) -> StopDecision:
    """Consult the stopping network on a candidate token's state.

    sample mode draws from the distribution (training); greedy mode takes the
    argmax and breaks an exact tie toward continuing (inference).
    """
    probs = policy_forward(params, z)
    p_stop = float(probs[ACTION_STOP])
    if mode == "sample":
        if rng is None:
            raise ValueError("sample mode needs an rng")
        action = ACTION_STOP if rng.random() < p_stop else ACTION_CONTINUE
    elif mode == "greedy":
        action = ACTION_STOP if p_stop > probs[ACTION_CONTINUE] else ACTION_CONTINUE
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return StopDecision(action=action, p_stop=p_stop, logp=float(np.log(probs[action])))


# ----------------------------------------------------------------------
# checkpoint format


def save_checkpoint(path, params: PolicyParams, optimizer_moments=None,
                    training_config=None) -> None:
    h, h1, h2 = params.sizes
    obj = {
        "version": CHECKPOINT_VERSION,
        "H": h,
        "H1": h1,
        "H2": h2,
        "weights": {f: getattr(params, f).ravel().tolist() for f in _FIELDS},
    }
    if optimizer_moments is not None:
        obj["optimizer_moments"] = optimizer_moments
    if training_config is not None:
        obj["training_config"] = training_config
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)
        fh.write("\n")


def _shapes(h: int, h1: int, h2: int) -> dict:
    return {
        "W1": (h, h1), "b1": (h1,),
        "W2": (h1, h2), "b2": (h2,),
        "W3": (h2, 2), "b3": (2,),
    }


def load_checkpoint(path):
    """Returns (params, optimizer_moments | None, training_config | None)."""
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    if obj.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {obj.get('version')!r}")
    shapes = _shapes(obj["H"], obj["H1"], obj["H2"])
    weights = {}
    for name, shape in shapes.items():
        flat = np.array(obj["weights"][name], dtype=np.float64)
        want = int(np.prod(shape))
        if flat.size != want:
            raise ValueError(f"weight {name} has {flat.size} values, expected {want}")
        weights[name] = flat.reshape(shape)
    params = PolicyParams(**weights)
    return params, obj.get("optimizer_moments"), obj.get("training_config")
