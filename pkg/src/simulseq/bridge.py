"""Wire protocol for driving an external consecutive translation model.

Messages are single-line JSON objects (UTF-8, newline-delimited). A server
speaks first with a hello, then answers each decode_request with exactly one
decode_response or error carrying the request's id:

    {"type": "hello", "protocol_version": 1, "model_name": "...", "hidden_dim": N}
    {"type": "decode_request", "id": 7, "src": ["..."], "tgt_prefix": ["..."]}
    {"type": "decode_response", "id": 7, "next_token": "...", "eos": false,
     "eos_prob": 0.1, "hidden_state": [...]}
    {"type": "error", "id": 7, "message": "..."}

Requests are stateless: the full source prefix and committed target prefix
ride along every time, which pins rebuild-all semantics and keeps servers
trivially restartable. One session is one ordered request/response stream
(no pipelining), and the client never retries a request whose response may
already have been applied, so servers can assume at-most-once delivery.
Tokens cross the wire as strings; ids are a per-session client detail.

Two transports: a child process speaking the protocol on stdin/stdout, or a
TCP connection.
"""

from __future__ import annotations

import json
import os
import select
import socket
import subprocess
from dataclasses import dataclass

import numpy as np

from .model import STRATEGY_REBUILD, DecodeStepResult

PROTOCOL_VERSION = 1


class BridgeError(RuntimeError):
    """Transport-level failure: broken pipe, timeout, dead server."""


class ProtocolError(RuntimeError):
    """The remote side violated the wire protocol."""


@dataclass(frozen=True)
class BridgeConfig:
    """Where the remote model lives. Give either command (child-process stdio
    transport) or host+port (tcp transport). Timeout is per request, in ms."""

    command: tuple[str, ...] | None = None
    host: str | None = None
    port: int | None = None
    timeout_ms: float = 30000.0

    def __post_init__(self):
        stdio = self.command is not None
        tcp = self.port is not None
        if stdio == tcp:
            raise ValueError("configure exactly one of command or host/port")
        if self.timeout_ms <= 0:
            raise ValueError("timeout_ms must be positive")

    @property
    def transport(self) -> str:
        return "stdio" if self.command is not None else "tcp"

    @property
    def timeout_seconds(self) -> float:
        return self.timeout_ms / 1000.0


@dataclass(frozen=True)
class ServerInfo:
    model_name: str
    hidden_dim: int
    protocol_version: int


class _StdioTransport:
    def __init__(self, command, timeout):
        self.timeout = timeout
        self.proc = subprocess.Popen(
            list(command),
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            bufsize=0,
        )

    def read_fd(self) -> int:
        return self.proc.stdout.fileno()

    def write_bytes(self, data: bytes) -> None:
        try:
            self.proc.stdin.write(data)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise BridgeError(f"server process closed stdin: {exc}") from exc

    def read_bytes(self) -> bytes:
        ready, _, _ = select.select([self.read_fd()], [], [], self.timeout)
        if not ready:
            raise BridgeError(f"no response within {self.timeout}s")
        data = os.read(self.read_fd(), 65536)
        if not data:
            raise BridgeError("server closed its output stream")
        return data

    def close(self) -> None:
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass
        try:
            self.proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait()


class _TcpTransport:
    def __init__(self, host, port, timeout):
        self.timeout = timeout
        try:
            self.sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise BridgeError(f"cannot connect to {host}:{port}: {exc}") from exc
        self.sock.settimeout(timeout)

    def write_bytes(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as exc:
            raise BridgeError(f"send failed: {exc}") from exc

    def read_bytes(self) -> bytes:
        try:
            data = self.sock.recv(65536)
        except socket.timeout as exc:
            raise BridgeError(f"no response within {self.timeout}s") from exc
        except OSError as exc:
            raise BridgeError(f"recv failed: {exc}") from exc
        if not data:
            raise BridgeError("server closed the connection")
        return data

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


class BridgeSession:
    """One ordered NDJSON request/response stream with a remote model."""

    def __init__(self, config: BridgeConfig):
        self.config = config
        seconds = config.timeout_seconds
        if config.transport == "stdio":
            self._transport = _StdioTransport(config.command, seconds)
        else:
            self._transport = _TcpTransport(config.host, config.port, seconds)
        self._buffer = bytearray()
        self._next_id = 0
        try:
            self.info = self._handshake()
        except Exception:
            self._transport.close()
            raise

    # -- raw line IO ---------------------------------------------------

    def send_raw(self, obj: dict) -> None:
        self._transport.write_bytes(json.dumps(obj).encode("utf-8") + b"\n")

    def send_raw_bytes(self, data: bytes) -> None:
        self._transport.write_bytes(data)

    def recv_raw(self) -> dict:
        while True:
            nl = self._buffer.find(b"\n")
            if nl >= 0:
                line = bytes(self._buffer[:nl])
                del self._buffer[: nl + 1]
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise ProtocolError(f"server sent a non-JSON line: {exc}") from exc
                if not isinstance(obj, dict):
                    raise ProtocolError("server sent a non-object message")
                return obj
            self._buffer.extend(self._transport.read_bytes())

    # -- protocol ------------------------------------------------------

    def _handshake(self) -> ServerInfo:
        msg = self.recv_raw()
        if msg.get("type") != "hello":
            raise ProtocolError(f"expected hello first, got {msg.get('type')!r}")
        version = msg.get("protocol_version")
        if version != PROTOCOL_VERSION:
            raise ProtocolError(f"unsupported protocol_version {version!r}")
        hidden = msg.get("hidden_dim")
        if not isinstance(hidden, int) or hidden < 1:
            raise ProtocolError(f"bad hidden_dim {hidden!r}")
        name = msg.get("model_name")
        if not isinstance(name, str):
            raise ProtocolError("hello is missing model_name")
        return ServerInfo(model_name=name, hidden_dim=hidden, protocol_version=version)

    def request(self, src_tokens, tgt_tokens) -> dict:
        """Send one decode_request and return the validated decode_response."""
        req_id = self._next_id
        self._next_id += 1
        self.send_raw(
            {
                "type": "decode_request",
                "id": req_id,
                "src": list(src_tokens),
                "tgt_prefix": list(tgt_tokens),
            }
        )
        resp = self.recv_raw()
        kind = resp.get("type")
        if kind == "error":
            raise ProtocolError(f"server error for id {resp.get('id')}: {resp.get('message')}")
        if kind != "decode_response":
            raise ProtocolError(f"unexpected message type {kind!r} in {resp!r}")
        if resp.get("id") != req_id:
            raise ProtocolError(f"response id {resp.get('id')} does not match request {req_id}")
        if not isinstance(resp.get("next_token"), str):
            raise ProtocolError(f"next_token must be a string in {resp!r}")
        if not isinstance(resp.get("eos"), bool):
            raise ProtocolError(f"eos must be a boolean in {resp!r}")
        prob = resp.get("eos_prob")
        if not isinstance(prob, (int, float)) or not 0.0 <= float(prob) <= 1.0:
            raise ProtocolError(f"eos_prob out of range in {resp!r}")
        hidden = resp.get("hidden_state")
        if not isinstance(hidden, list) or len(hidden) != self.info.hidden_dim:
            raise ProtocolError(
                f"hidden_state length does not match hidden_dim "
                f"{self.info.hidden_dim} in {resp!r}"
            )
        return resp

    def close(self) -> None:
        self._transport.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
        return False


def handshake(config: BridgeConfig) -> BridgeSession:
    """Open a session; the returned session has already consumed the hello."""
    return BridgeSession(config)


def remote_decode_step(session: BridgeSession, src_tokens, tgt_tokens) -> dict:
    """One stateless decode call against the remote model (token strings)."""
    return session.request(src_tokens, tgt_tokens)


@dataclass(frozen=True)
class _BridgeState:
    source: tuple[int, ...]


class BridgedModel:
    """Presents a remote server as an engine-compatible model.

    Requests are stateless, so only the rebuild-all strategy is meaningful;
    asking for a reuse strategy is an error. Token ids on this side come from
    the supplied vocab, which must cover everything the server emits.
    """

    def __init__(self, session: BridgeSession, vocab):
        self.session = session
        self.vocab = vocab
        self.hidden_size = session.info.hidden_dim

    @property
    def eos_id(self) -> int:
        return self.vocab.eos_id

    def initial_state(self) -> _BridgeState:
        return _BridgeState(source=())

    def prepare(self, state, source_prefix, committed, strategy) -> _BridgeState:
        if strategy != STRATEGY_REBUILD:
            raise ValueError("bridged models support only the rebuild-all strategy")
        return _BridgeState(source=tuple(source_prefix))

    def decode_step(self, state: _BridgeState, committed) -> DecodeStepResult:
        resp = self.session.request(
            self.vocab.decode(state.source), self.vocab.decode(committed)
        )
        token_id = self.vocab.id_of(resp["next_token"])
        is_eos = bool(resp["eos"])
        if is_eos != (token_id == self.eos_id):
            raise ProtocolError("eos flag disagrees with next_token")
        return DecodeStepResult(
            token_id=token_id,
            is_eos=is_eos,
            eos_prob=float(resp["eos_prob"]),
            state=np.array(resp["hidden_state"], dtype=np.float64),
        )

    def commit(self, state, result) -> _BridgeState:
        return state


# ----------------------------------------------------------------------
# server side: a minimal NDJSON loop around an in-process model


def serve_model(model, rfile, wfile, model_name: str = "toy-stub") -> None:
    """Answer decode requests for `model` on binary line streams until EOF.

    Malformed input never kills the session: it draws an error message with
    the offending id (-1 if no id could be recovered) and the loop continues.
    """

    def emit(obj):
        wfile.write(json.dumps(obj).encode("utf-8") + b"\n")
        wfile.flush()

    emit(
        {
            "type": "hello",
            "protocol_version": PROTOCOL_VERSION,
            "model_name": model_name,
            "hidden_dim": model.hidden_size,
        }
    )
    for line in rfile:
        if not line.strip():
            continue
        req_id = -1
        try:
            obj = json.loads(line.decode("utf-8"))
            if not isinstance(obj, dict):
                raise ValueError("message must be a JSON object")
            if isinstance(obj.get("id"), int):
                req_id = obj["id"]
            if obj.get("type") != "decode_request":
                raise ValueError(f"unsupported message type {obj.get('type')!r}")
            if not isinstance(obj.get("src"), list) or not isinstance(
                obj.get("tgt_prefix"), list
            ):
                raise ValueError("decode_request needs src and tgt_prefix lists")
            src = model.vocab.encode(obj["src"])
            tgt = model.vocab.encode(obj["tgt_prefix"])
            if len(src) == 0:
                raise ValueError("src must not be empty")
            state = model.prepare(model.initial_state(), src, tgt, STRATEGY_REBUILD)
            step = model.decode_step(state, tgt)
            emit(
                {
                    "type": "decode_response",
                    "id": req_id,
                    "next_token": model.vocab.token_of(step.token_id),
                    "eos": bool(step.is_eos),
                    "eos_prob": float(step.eos_prob),
                    "hidden_state": [float(x) for x in step.state],
                }
            )
        except Exception as exc:  # malformed input must not end the session
            emit({"type": "error", "id": req_id, "message": str(exc)})


# ----------------------------------------------------------------------
# conformance suite


@dataclass(frozen=True)
class ConformanceCheck:
    name: str
    passed: bool
    detail: str = ""


def _differential_decode_calls(session, reference, pairs, rng, calls):
    """Random stateless decode calls, compared bitwise against the reference."""
    from .model import consecutive_greedy  # local import to avoid a cycle at import time

    vocab = reference.vocab
    for _ in range(calls):
        pair = pairs[int(rng.integers(0, len(pairs)))]
        eta = int(rng.integers(1, len(pair.source) + 1))
        src = pair.source[:eta]
        state = reference.prepare(reference.initial_state(), src, (), STRATEGY_REBUILD)
        full = reference.translatable(state.encoder)
        limit = len(full[0]) + len(full[1])
        tau = int(rng.integers(0, limit + 1))
        tgt = (full[0] + full[1])[:tau]
        want = reference.decode_step(state, tgt)
        got = session.request(vocab.decode(src), vocab.decode(tgt))
        if vocab.id_of(got["next_token"]) != want.token_id:
            return f"next_token mismatch at src={src} tgt={tgt}"
        if bool(got["eos"]) != want.is_eos:
            return f"eos mismatch at src={src} tgt={tgt}"
        if float(got["eos_prob"]) != want.eos_prob:
            return f"eos_prob mismatch at src={src} tgt={tgt}"
        hidden = [float(x) for x in got["hidden_state"]]
        if hidden != [float(x) for x in want.state]:
            return f"hidden_state mismatch at src={src} tgt={tgt}"
    return None


def _differential_simulations(session, reference, pairs, sims):
    from .core import ArrivalSchedule
    from .decoding import LagStop, LearnedStop, RunConfig, WaitK, simulate
    from .stopping import init_policy

    bridged = BridgedModel(session, reference.vocab)
    controllers = [
        LagStop(0),
        WaitK(3),
        LearnedStop(params=init_policy(reference.hidden_size, seed=0), mode="greedy"),
    ]
    for i in range(sims):
        pair = pairs[i % len(pairs)]
        controller = controllers[i % len(controllers)]
        cfg = RunConfig(controller=controller, schedule=ArrivalSchedule.constant(1))
        want = simulate(reference, pair.source, cfg)
        got = simulate(bridged, pair.source, cfg)
        if want != got:
            return f"trace mismatch on sentence {i} under {controller.label()}"
    return None


def run_conformance(config: BridgeConfig, reference, pairs, seed: int = 0,
                    decode_calls: int = 1000, simulations: int = 100) -> list[ConformanceCheck]:
    """Exercise a live server against the protocol rules and the reference
    model. `reference` must be the same task the server is wrapping."""
    checks: list[ConformanceCheck] = []
    try:
        session = handshake(config)
    except (BridgeError, ProtocolError) as exc:
        return [ConformanceCheck("hello-first", False, str(exc))]
    with session:
        info = session.info
        checks.append(ConformanceCheck("hello-first", True, f"model_name={info.model_name}"))
        ok = info.hidden_dim == reference.hidden_size
        checks.append(
            ConformanceCheck(
                "hidden-dim-advertised", ok,
                f"server={info.hidden_dim} reference={reference.hidden_size}",
            )
        )
        vocab = reference.vocab
        probe = pairs[0]
        # id correlation: ids are the client's to choose, echoes must match
        try:
            for probe_id in (0, 7, 12345):
                session.send_raw(
                    {
                        "type": "decode_request",
                        "id": probe_id,
                        "src": list(vocab.decode(probe.source)),
                        "tgt_prefix": [],
                    }
                )
                resp = session.recv_raw()
                if resp.get("type") != "decode_response" or resp.get("id") != probe_id:
                    raise ProtocolError(f"id {probe_id} echoed as {resp.get('id')!r}")
            checks.append(ConformanceCheck("id-correlation", True))
        except (BridgeError, ProtocolError) as exc:
            checks.append(ConformanceCheck("id-correlation", False, str(exc)))
            return checks
        # malformed input: garbage line, then a structurally bad request
        try:
            session.send_raw_bytes(b"this is not json\n")
            resp = session.recv_raw()
            if resp.get("type") != "error":
                raise ProtocolError(f"garbage line drew {resp.get('type')!r}, not error")
            session.send_raw({"type": "decode_request", "id": 99, "src": list(vocab.decode(probe.source))})
            resp = session.recv_raw()
            if resp.get("type") != "error" or resp.get("id") != 99:
                raise ProtocolError("missing tgt_prefix must draw an error with the same id")
            # session must still be usable
            session.request(vocab.decode(probe.source), [])
            checks.append(ConformanceCheck("malformed-input-recovery", True))
        except (BridgeError, ProtocolError) as exc:
            checks.append(ConformanceCheck("malformed-input-recovery", False, str(exc)))
            return checks
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence((seed, 0xD1FF))))
        try:
            fail = _differential_decode_calls(session, reference, pairs, rng, decode_calls)
            checks.append(
                ConformanceCheck("differential-decode-steps", fail is None, fail or f"{decode_calls} calls")
            )
            if fail is None:
                fail = _differential_simulations(session, reference, pairs, simulations)
                checks.append(
                    ConformanceCheck("differential-simulations", fail is None, fail or f"{simulations} runs")
                )
        except (BridgeError, ProtocolError) as exc:
            checks.append(ConformanceCheck("differential-decode-steps", False, str(exc)))
    return checks
