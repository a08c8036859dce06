"""Shared vocabulary, corpus, schedule and trace types for the streaming engine.

Everything in here is deliberately dumb data: immutable records plus a few
prefix-sum accessors. The decoding engine owns all behaviour.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

# Stop reasons recorded per outer step.
STOP_QUOTA = "quota"
STOP_EOS = "eos"
STOP_POLICY = "policy-stop"
STOP_CAP = "length-cap"
STOP_REASONS = (STOP_QUOTA, STOP_EOS, STOP_POLICY, STOP_CAP)

# Controller action codes as recorded in traces: 1 means "stop writing now".
ACTION_CONTINUE = 0
ACTION_STOP = 1

DEFAULT_TARGET_CAP = 200


class VocabError(ValueError):
    pass


@dataclass(frozen=True)
class Vocab:
    """Token-string <-> integer-id bijection with a reserved EOS entry.

    The id of a token is its line number in the on-disk format (one token per
    line), and EOS is always present.
    """

    tokens: tuple[str, ...]
    eos_token: str = "</s>"
    _ids: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        ids = {}
        for i, tok in enumerate(self.tokens):
            if tok in ids:
                raise VocabError(f"duplicate token {tok!r}")
            if "\n" in tok or tok == "":
                raise VocabError(f"token not storable one-per-line: {tok!r}")
            ids[tok] = i
        if self.eos_token not in ids:
            raise VocabError(f"EOS token {self.eos_token!r} missing from vocab")
        object.__setattr__(self, "_ids", ids)

    @classmethod
    def from_tokens(cls, tokens, eos_token: str = "</s>") -> "Vocab":
        toks = tuple(tokens)
        if eos_token not in toks:
            toks = (eos_token,) + toks
        return cls(tokens=toks, eos_token=eos_token)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def eos_id(self) -> int:
        return self._ids[self.eos_token]

    def id_of(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise VocabError(f"unknown token {token!r}") from None

    def token_of(self, idx: int) -> str:
        if not 0 <= idx < len(self.tokens):
            raise VocabError(f"id {idx} out of range")
        return self.tokens[idx]

    def encode(self, tokens) -> tuple[int, ...]:
        return tuple(self.id_of(t) for t in tokens)

    def decode(self, ids) -> tuple[str, ...]:
        return tuple(self.token_of(i) for i in ids)

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for tok in self.tokens:
                fh.write(tok + "\n")

    @classmethod
    def load(cls, path, eos_token: str = "</s>") -> "Vocab":
        with open(path, encoding="utf-8") as fh:
            toks = [line.rstrip("\n") for line in fh]
        while toks and toks[-1] == "":
            toks.pop()
        return cls(tokens=tuple(toks), eos_token=eos_token)


@dataclass(frozen=True)
class SentencePair:
    """One corpus sentence: source token ids and reference target token ids."""

    source: tuple[int, ...]
    reference: tuple[int, ...]

    def __post_init__(self):
        if len(self.source) == 0:
            raise ValueError("empty source sentence")
        if len(self.reference) == 0:
            raise ValueError("empty reference sentence")


def load_corpus(path, vocab: Vocab) -> list[SentencePair]:
    """Read a JSONL corpus ({"src": [...], "ref": [...]} per line) into id space."""
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                pairs.append(
                    SentencePair(
                        source=vocab.encode(obj["src"]),
                        reference=vocab.encode(obj["ref"]),
                    )
                )
            except (KeyError, TypeError, VocabError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad corpus line: {exc}") from exc
    return pairs


def save_corpus(path, pairs, vocab: Vocab) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for pair in pairs:
            obj = {
                "src": list(vocab.decode(pair.source)),
                "ref": list(vocab.decode(pair.reference)),
            }
            fh.write(json.dumps(obj, ensure_ascii=False) + "\n")


@dataclass(frozen=True)
class ArrivalSchedule:
    """How many new source tokens arrive at each outer step.

    kind "constant": chunks of `size` (final chunk may be short).
    kind "explicit": the given per-step counts, which must match the sentence.
    kind "full": the entire source in one terminal step.
    """

    kind: str = "constant"
    size: int = 1
    counts: tuple[int, ...] = ()

    def __post_init__(self):
        if self.kind not in ("constant", "explicit", "full"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.kind == "constant" and self.size < 1:
            raise ValueError("constant schedule needs size >= 1")
        if self.kind == "explicit" and any(c < 1 for c in self.counts):
            raise ValueError("explicit schedule counts must be positive")

    @classmethod
    def constant(cls, size: int) -> "ArrivalSchedule":
        return cls(kind="constant", size=size)

    @classmethod
    def explicit(cls, counts) -> "ArrivalSchedule":
        return cls(kind="explicit", counts=tuple(counts))

    @classmethod
    def full_sentence(cls) -> "ArrivalSchedule":
        return cls(kind="full")

    def reveal_counts(self, src_len: int) -> list[int]:
        """Positive per-step arrival counts summing to src_len."""
        if src_len < 1:
            raise ValueError("src_len must be >= 1")
        if self.kind == "full":
            return [src_len]
        if self.kind == "constant":
            full, rem = divmod(src_len, self.size)
            out = [self.size] * full
            if rem:
                out.append(rem)
            return out
        if sum(self.counts) != src_len:
            raise ValueError(
                f"explicit schedule sums to {sum(self.counts)}, source has {src_len}"
            )
        return list(self.counts)

    def spec_string(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.size}"
        if self.kind == "full":
            return "full"
        return "explicit:" + ",".join(str(c) for c in self.counts)

    @classmethod
    def from_spec_string(cls, text: str) -> "ArrivalSchedule":
        text = text.strip()
        if text == "full":
            return cls.full_sentence()
        if text.startswith("constant:"):
            return cls.constant(int(text.split(":", 1)[1]))
        if text.startswith("explicit:"):
            return cls.explicit(int(x) for x in text.split(":", 1)[1].split(","))
        # bare integer is shorthand for a constant schedule
        return cls.constant(int(text))


class TraceError(ValueError):
    pass


_TRACE_FIELDS = ("c", "w", "l", "output", "actions", "stop_reasons")


@dataclass(frozen=True)
class StreamTrace:
    """Complete record of one streamed sentence.

    Per outer step s (1-based): c[s-1] source tokens arrived, w[s-1] target
    tokens were committed, stop_reasons[s-1] says why the inner loop ended.
    Per committed target token t (1-based): l[t-1] is the number of real
    source tokens that had been revealed when token t was committed, and
    output[t-1] is its id. actions holds every controller consultation as a
    (candidate target position, action) pair; heuristic controllers consult
    nothing and leave it empty.
    """

    c: tuple[int, ...]
    w: tuple[int, ...]
    l: tuple[int, ...]
    output: tuple[int, ...]
    actions: tuple[tuple[int, int], ...] = ()
    stop_reasons: tuple[str, ...] = ()

    @property
    def steps(self) -> int:
        return len(self.c)

    @property
    def src_len(self) -> int:
        return sum(self.c)

    def __post_init__(self):
        self.validate()

    def revealed(self, s: int) -> int:
        """Source tokens revealed after outer step s (0 <= s <= steps)."""
        if not 0 <= s <= self.steps:
            raise IndexError(f"step {s} out of range 0..{self.steps}")
        return sum(self.c[:s])

    def written(self, s: int) -> int:
        """Target tokens committed after outer step s (0 <= s <= steps)."""
        if not 0 <= s <= self.steps:
            raise IndexError(f"step {s} out of range 0..{self.steps}")
        return sum(self.w[:s])

    def validate(self) -> None:
        if len(self.w) != len(self.c) or len(self.stop_reasons) != len(self.c):
            raise TraceError("per-step arrays disagree on step count")
        if any(ci < 1 for ci in self.c):
            raise TraceError("every outer step must reveal at least one token")
        if sum(self.w) != len(self.output) or len(self.l) != len(self.output):
            raise TraceError("per-token arrays disagree with committed counts")
        if any(wi < 0 for wi in self.w):
            raise TraceError("negative write count")
        for reason in self.stop_reasons:
            if reason not in STOP_REASONS:
                raise TraceError(f"unknown stop reason {reason!r}")
        src = self.src_len
        prev = 0
        for li in self.l:
            if li < prev or li > src:
                raise TraceError("l(t) must be non-decreasing and <= src_len")
            prev = li
        # l(t) must equal the reveal count of the step that committed token t
        eta, tau = 0, 0
        for ci, wi in zip(self.c, self.w):
            eta += ci
            for t in range(tau, tau + wi):
                if self.l[t] != eta:
                    raise TraceError(f"l({t + 1}) != revealed count of its step")
            tau += wi
        for t, a in self.actions:
            if a not in (ACTION_CONTINUE, ACTION_STOP):
                raise TraceError(f"bad action code {a}")
            if not 1 <= t <= len(self.output) + 1:
                raise TraceError(f"action position {t} out of range")

    def to_json(self) -> dict:
        """Plain-JSON form with a stable field order."""
        return {
            "c": list(self.c),
            "w": list(self.w),
            "l": list(self.l),
            "output": list(self.output),
            "actions": [[t, a] for t, a in self.actions],
            "stop_reasons": list(self.stop_reasons),
        }

    @classmethod
    def from_json(cls, obj) -> "StreamTrace":
        """Rebuild from a dict (or a JSON text line). Validates throughout."""
        if isinstance(obj, (str, bytes)):
            try:
                obj = json.loads(obj)
            except json.JSONDecodeError as exc:
                raise TraceError(f"trace is not valid JSON: {exc}") from exc
        if not isinstance(obj, dict):
            raise TraceError("trace must be a JSON object")
        missing = [k for k in _TRACE_FIELDS if k not in obj]
        if missing:
            raise TraceError(f"trace missing fields {missing}")
        try:
            return cls(
                c=tuple(int(x) for x in obj["c"]),
                w=tuple(int(x) for x in obj["w"]),
                l=tuple(int(x) for x in obj["l"]),
                output=tuple(int(x) for x in obj["output"]),
                actions=tuple((int(t), int(a)) for t, a in obj["actions"]),
                stop_reasons=tuple(str(r) for r in obj["stop_reasons"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, TraceError):
                raise
            raise TraceError(f"malformed trace fields: {exc}") from exc
