"""Synthetic translation tasks and the deterministic rule-based toy model.

The toy stands in for a frozen sentence-level NMT model at desk scale. It is
a perfect translator on its own task when given the whole source, and on a
source prefix it behaves like a full-sentence model fed a truncated input:

* copy: unit i maps to one target token; every observed unit is translatable.
* expand: unit i maps to `ratio` target tokens (target runs longer than the
  source); every observed unit is translatable.
* reorder: consecutive windows of `window` source tokens are emitted in
  sorted-unit order on the target side (local reordering, like verb-final
  syntax). A fully observed window translates exactly. For the trailing
  partially observed window the model either refuses (predicts EOS) when it
  has seen fewer than `guess_min` of its tokens, or translates the fragment
  as if it were complete (a premature guess that later context may
  contradict). Committed guesses are what make low-latency decoding lossy on
  this task; with `guess_min = window` the model never guesses.

The model predicts position len(target)+1 of its current best translation of
the observed prefix, then EOS. Its "hidden states" are deterministic feature
rows, so runs are bit-reproducible and the decoder state doubles as the
input to a learned stopping controller.

Hidden-state strategies control what survives across outer steps:
rebuild-all recomputes both banks against the grown prefix, reuse-decoder
keeps committed-token rows frozen, reuse-encoder keeps source rows frozen
(new positions are appended). Stale encoder rows carry stale
window-completeness flags, which visibly degrades the reorder task.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import DEFAULT_TARGET_CAP, SentencePair, Vocab

HIDDEN_SIZE = 16

KIND_COPY = "copy"
KIND_REORDER = "reorder"
KIND_EXPAND = "expand"
TASK_KINDS = (KIND_COPY, KIND_REORDER, KIND_EXPAND)

STRATEGY_REBUILD = "rebuild-all"
STRATEGY_REUSE_DECODER = "reuse-decoder"
STRATEGY_REUSE_ENCODER = "reuse-encoder"
STRATEGIES = (STRATEGY_REBUILD, STRATEGY_REUSE_DECODER, STRATEGY_REUSE_ENCODER)

# encoder bank columns
_COL_UNIT = 0
_COL_COMPLETE = 1
_COL_POS = 2
_COL_WINDOW_POS = 3
_COL_HASH = 4  # spans 4 columns
_COL_ETA = 8
_COL_REAL = 9

_HASH_PRIMES = (17, 31, 47, 71)
_HASH_MOD = 101


def _hash_embed(token_id: int) -> list[float]:
    # fixed arithmetic, not Python hash(): must agree across processes
    return [((token_id + 1) * p % _HASH_MOD) / _HASH_MOD - 0.5 for p in _HASH_PRIMES]


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Parameters that fully determine a task instance (and its corpus)."""

    kind: str
    vocab_size: int = 50
    min_len: int = 8
    max_len: int = 20
    window: int = 3
    ratio: int = 2
    seed: int = 0
    guess_min: int = 2

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.vocab_size < 1:
            raise ValueError("vocab_size must be >= 1")
        if not 1 <= self.min_len <= self.max_len:
            raise ValueError("need 1 <= min_len <= max_len")
        if self.kind == KIND_REORDER:
            if self.window < 2:
                raise ValueError("reorder needs window >= 2")
            if self.vocab_size < self.window:
                raise ValueError("reorder needs vocab_size >= window")
            if self.max_len < self.window:
                raise ValueError("max_len shorter than one window")
            if not 1 <= self.guess_min <= self.window:
                raise ValueError("need 1 <= guess_min <= window")
        if self.kind == KIND_EXPAND and self.ratio < 1:
            raise ValueError("expand needs ratio >= 1")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "vocab_size": self.vocab_size,
            "min_len": self.min_len,
            "max_len": self.max_len,
            "window": self.window,
            "ratio": self.ratio,
            "seed": self.seed,
            "guess_min": self.guess_min,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "SyntheticTaskSpec":
        return cls(**{k: obj[k] for k in cls.__dataclass_fields__ if k in obj})

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "SyntheticTaskSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class DecodeStepResult:
    """One greedy prediction: the next token, EOS info and the decoder state
    that produced it (the controller input)."""

    token_id: int
    is_eos: bool
    eos_prob: float
    state: np.ndarray  # shape (HIDDEN_SIZE,)


@dataclass(frozen=True)
class ModelState:
    """Encoder rows for the observed prefix plus EOS, and one decoder row per
    committed target token.

    `oracle` caches the (safe, guess) translatable lists derived from the
    encoder bank; it is recomputed whenever the bank changes and exists only
    to avoid re-walking an unchanged bank on every inner-loop step.
    """

    encoder: np.ndarray  # (eta + 1, H)
    decoder: np.ndarray  # (tau, H)
    oracle: tuple[tuple[int, ...], tuple[int, ...]] | None = None

    @property
    def source_rows(self) -> int:
        return max(0, self.encoder.shape[0] - 1)


def _default_forms(spec: SyntheticTaskSpec) -> tuple[list[str], list[list[str]]]:
    width = len(str(spec.vocab_size - 1))
    sources = [f"s{i:0{width}d}" for i in range(spec.vocab_size)]
    if spec.kind == KIND_EXPAND:
        targets = [
            [f"t{i:0{width}d}.{j}" for j in range(1, spec.ratio + 1)]
            for i in range(spec.vocab_size)
        ]
    else:
        targets = [[f"t{i:0{width}d}"] for i in range(spec.vocab_size)]
    return sources, targets


class ToyTranslator:
    """Rule-based stand-in for a pretrained consecutive translation model."""

    hidden_size = HIDDEN_SIZE

    def __init__(self, kind, vocab, source_ids, target_ids, window=1, guess_min=2,
                 task: SyntheticTaskSpec | None = None):
        if kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {kind!r}")
        self.kind = kind
        self.vocab = vocab
        self.source_ids = tuple(source_ids)
        self.target_ids = tuple(tuple(t) for t in target_ids)
        if len(self.source_ids) != len(self.target_ids):
            raise ValueError("source and target unit tables differ in length")
        self.window = window if kind == KIND_REORDER else 1
        self.guess_min = min(guess_min, self.window) if kind == KIND_REORDER else 1
        self.unit_of = {sid: u for u, sid in enumerate(self.source_ids)}
        self.task = task
        # targets per aligned group, for backlog bookkeeping in decoder states
        if kind == KIND_REORDER:
            self.group_targets = self.window
        elif kind == KIND_EXPAND:
            self.group_targets = len(self.target_ids[0]) if self.target_ids else 1
        else:
            self.group_targets = 1

    # ------------------------------------------------------------------
    # construction helpers

    @classmethod
    def from_spec(cls, spec: SyntheticTaskSpec) -> "ToyTranslator":
        sources, targets = _default_forms(spec)
        vocab = Vocab.from_tokens(sources + [t for grp in targets for t in grp])
        return cls(
            kind=spec.kind,
            vocab=vocab,
            source_ids=[vocab.id_of(s) for s in sources],
            target_ids=[[vocab.id_of(t) for t in grp] for grp in targets],
            window=spec.window,
            guess_min=spec.guess_min,
            task=spec,
        )

    @classmethod
    def custom(cls, kind, source_tokens, target_groups, window=1, guess_min=2) -> "ToyTranslator":
        """Build a task over explicit alphabets, mostly for tests."""
        flat = [t for grp in target_groups for t in grp]
        vocab = Vocab.from_tokens(list(source_tokens) + flat)
        return cls(
            kind=kind,
            vocab=vocab,
            source_ids=[vocab.id_of(s) for s in source_tokens],
            target_ids=[[vocab.id_of(t) for t in grp] for grp in target_groups],
            window=window,
            guess_min=guess_min,
        )

    @property
    def eos_id(self) -> int:
        return self.vocab.eos_id

    def unit_seq(self, source_ids) -> list[int]:
        try:
            return [self.unit_of[sid] for sid in source_ids]
        except KeyError as exc:
            raise ValueError(f"id {exc.args[0]} is not a source token") from None

    # ------------------------------------------------------------------
    # encoder

    def _encoder_row(self, units, i, eta) -> list[float]:
        """Features of source position i (1-based) inside a prefix of eta tokens."""
        unit = units[i - 1]
        if self.kind == KIND_REORDER:
            w = (i - 1) // self.window
            complete = 1.0 if (w + 1) * self.window <= eta else 0.0
            window_pos = ((i - 1) % self.window) / self.window
        else:
            complete = 1.0
            window_pos = 0.0
        row = [0.0] * HIDDEN_SIZE
        row[_COL_UNIT] = float(unit)
        row[_COL_COMPLETE] = complete
        row[_COL_POS] = i / (eta + 1)
        row[_COL_WINDOW_POS] = window_pos
        row[_COL_HASH : _COL_HASH + 4] = _hash_embed(self.source_ids[unit])
        row[_COL_ETA] = eta / (eta + 10)
        row[_COL_REAL] = 1.0
        return row

    def _eos_row(self, eta) -> list[float]:
        row = [0.0] * HIDDEN_SIZE
        row[_COL_UNIT] = -1.0
        row[_COL_COMPLETE] = 1.0
        row[_COL_POS] = 1.0
        row[_COL_ETA] = eta / (eta + 10)
        return row

    def encode(self, source_prefix) -> np.ndarray:
        """Encode the observed prefix; an EOS row is always appended."""
        units = self.unit_seq(source_prefix)
        eta = len(units)
        rows = [self._encoder_row(units, i, eta) for i in range(1, eta + 1)]
        rows.append(self._eos_row(eta))
        return np.array(rows, dtype=np.float64)

    # ------------------------------------------------------------------
    # alignment oracle, reading the (possibly stale) encoder bank

    def translatable(self, encoder: np.ndarray) -> tuple[tuple[int, ...], tuple[int, ...]]:
        """(safe targets, premature-guess targets) determined by the bank.

        Safe targets come from fully observed alignment groups whose rows all
        carry a fresh completeness flag; groups are consumed left to right and
        the first blocked group ends the walk (positions past it are not yet
        determined). The guess list covers a trailing fragment the model
        chooses to treat as complete.
        """
        rows = encoder[:-1]
        eta = rows.shape[0]
        if self.kind != KIND_REORDER:
            safe: list[int] = []
            for i in range(eta):
                safe.extend(self.target_ids[int(rows[i, _COL_UNIT])])
            return tuple(safe), ()
        L = self.window
        safe = []
        guess: list[int] = []
        start = 0
        while True:
            if start + L <= eta:
                block = rows[start : start + L]
                if bool(np.all(block[:, _COL_COMPLETE] == 1.0)):
                    for u in sorted(int(x) for x in block[:, _COL_UNIT]):
                        safe.extend(self.target_ids[u])
                    start += L
                    continue
                break
            fragment = rows[start:eta]
            if fragment.shape[0] >= self.guess_min:
                for u in sorted(int(x) for x in fragment[:, _COL_UNIT]):
                    guess.extend(self.target_ids[u])
            break
        return tuple(safe), tuple(guess)

    def _oracle_of(self, state: ModelState) -> tuple[tuple[int, ...], tuple[int, ...]]:
        if state.oracle is not None:
            return state.oracle
        return self.translatable(state.encoder)

    # ------------------------------------------------------------------
    # decoder

    def _decoder_row_list(self, oracle, eta, committed, t) -> list[float]:
        """State that predicts target position t (1-based) given committed y_<t."""
        safe, guess = oracle
        total = len(safe) + len(guess)
        tau = t - 1
        remaining = total - tau
        groups_waiting = max(0, len(safe) - tau)
        backlog = -(-groups_waiting // self.group_targets)  # ceil division
        row = [0.0] * HIDDEN_SIZE
        row[0] = min(1.0, tau / (total + 1))
        row[1 + min(backlog, 4)] = 1.0  # columns 1..5: clipped one-hot backlog
        row[6] = math.exp(-remaining) if remaining > 0 else 1.0
        if tau > 0:
            row[7:11] = _hash_embed(int(committed[tau - 1]))
        row[11] = tau / (eta + 1)
        row[12] = eta / (eta + 10)
        unit_src = self.window if self.kind == KIND_REORDER else 1
        row[13] = (eta % unit_src) / unit_src
        row[14] = remaining / (eta + 1)
        row[15] = 1.0
        return row

    def rebuild_decoder(self, encoder, committed, oracle=None) -> np.ndarray:
        if oracle is None:
            oracle = self.translatable(encoder)
        eta = encoder.shape[0] - 1
        rows = [
            self._decoder_row_list(oracle, eta, committed, t)
            for t in range(1, len(committed) + 1)
        ]
        if not rows:
            return np.zeros((0, HIDDEN_SIZE), dtype=np.float64)
        return np.array(rows, dtype=np.float64)

    def initial_state(self) -> ModelState:
        return ModelState(
            encoder=np.zeros((0, HIDDEN_SIZE), dtype=np.float64),
            decoder=np.zeros((0, HIDDEN_SIZE), dtype=np.float64),
            oracle=((), ()),
        )

    def decode_step(self, state: ModelState, committed) -> DecodeStepResult:
        """Greedy-predict the next target token for the current banks."""
        if state.encoder.shape[0] == 0:
            raise ValueError("decode_step before any source was encoded")
        if len(committed) >= DEFAULT_TARGET_CAP:
            raise ValueError(f"target already at the {DEFAULT_TARGET_CAP}-token cap")
        safe, guess = self._oracle_of(state)
        tau = len(committed)
        eta = state.encoder.shape[0] - 1
        z = np.array(
            self._decoder_row_list((safe, guess), eta, committed, tau + 1),
            dtype=np.float64,
        )
        if tau < len(safe) + len(guess):
            token = (safe + guess)[tau]
            is_eos = False
        else:
            token = self.eos_id
            is_eos = True
        return DecodeStepResult(token_id=token, is_eos=is_eos, eos_prob=float(z[6]), state=z)

    def prepare(self, state: ModelState, source_prefix, committed, strategy) -> ModelState:
        """Bring the banks up to date for a new outer step under a retention
        strategy."""
        if strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {strategy!r}")
        eta = len(source_prefix)
        if strategy == STRATEGY_REUSE_ENCODER:
            old = state.encoder[:-1] if state.encoder.shape[0] else state.encoder
            if old.shape[0] > eta:
                raise ValueError("source prefix shrank")
            units = self.unit_seq(source_prefix)
            fresh = [self._encoder_row(units, i, eta) for i in range(old.shape[0] + 1, eta + 1)]
            fresh.append(self._eos_row(eta))
            encoder = np.vstack([old, np.array(fresh, dtype=np.float64)])
        else:
            encoder = self.encode(source_prefix)
        oracle = self.translatable(encoder)
        if strategy == STRATEGY_REUSE_DECODER:
            decoder = state.decoder
            if decoder.shape[0] != len(committed):
                raise ValueError("retained decoder rows disagree with committed tokens")
        else:
            decoder = self.rebuild_decoder(encoder, committed, oracle)
        return ModelState(encoder=encoder, decoder=decoder, oracle=oracle)

    def commit(self, state: ModelState, result: DecodeStepResult) -> ModelState:
        """Append the committed token's decoder row (kept under any strategy)."""
        return append_decoder_row(state, result.state)


def prepare_states(model, state, source_prefix, committed, strategy):
    """Strategy-aware bank refresh; delegates to the model's own prepare."""
    return model.prepare(state, source_prefix, committed, strategy)


def append_decoder_row(state: ModelState, row: np.ndarray) -> ModelState:
    """Record the state of a token that was just committed (any strategy)."""
    return ModelState(
        encoder=state.encoder,
        decoder=np.vstack([state.decoder, row[None, :]]),
        oracle=state.oracle,
    )


def consecutive_greedy(model, source_ids, cap: int = 200) -> tuple[int, ...]:
    """Full-context greedy decode: run to EOS (excluded) or the length cap."""
    state = model.prepare(model.initial_state(), source_ids, (), STRATEGY_REBUILD)
    out: list[int] = []
    while len(out) < cap:
        step = model.decode_step(state, out)
        if step.is_eos:
            break
        out.append(step.token_id)
        state = model.commit(state, step)
    return tuple(out)


def generate_corpus(spec: SyntheticTaskSpec, n: int) -> tuple["ToyTranslator", list[SentencePair]]:
    """Deterministically draw n sentence pairs for the task (seeded by spec.seed)."""
    if n < 1:
        raise ValueError("corpus size must be positive")
    model = ToyTranslator.from_spec(spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((spec.seed, 0xC0))))
    pairs: list[SentencePair] = []
    for _ in range(n):
        if spec.kind == KIND_REORDER:
            lo = -(-spec.min_len // spec.window)  # ceil
            hi = spec.max_len // spec.window
            if hi < lo:
                raise ValueError("length range admits no whole number of windows")
            windows = int(rng.integers(lo, hi + 1))
            src_units: list[int] = []
            ref: list[int] = []
            for _w in range(windows):
                chosen = rng.choice(spec.vocab_size, size=spec.window, replace=False)
                src_units.extend(int(u) for u in chosen)
                for u in sorted(int(x) for x in chosen):
                    ref.extend(model.target_ids[u])
        else:
            length = int(rng.integers(spec.min_len, spec.max_len + 1))
            src_units = [int(u) for u in rng.integers(0, spec.vocab_size, size=length)]
            ref = [t for u in src_units for t in model.target_ids[u]]
        source = tuple(model.source_ids[u] for u in src_units)
        pairs.append(SentencePair(source=source, reference=tuple(ref)))
    return model, pairs
