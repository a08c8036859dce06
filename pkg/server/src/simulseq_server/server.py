"""NDJSON decode server.

Speaks the streaming bridge wire format over stdio or a TCP socket:
one hello, then one decode_response (or error) line per request line.
Requests are stateless: each carries the full source prefix and the
full committed target prefix, and the backend recomputes from scratch.
"""

from __future__ import annotations

import json
import socket
import sys
from dataclasses import dataclass, field

import simulseq

PROTOCOL_VERSION = 1

TASKS = ("copy", "reorder", "expand")


@dataclass(frozen=True)
class StepReply:
    """One backend prediction for a (source prefix, target prefix) pair."""

    next_token: str
    eos: bool
    eos_prob: float
    hidden_state: tuple[float, ...]


class ToyBackend:
    """Deterministic synthetic-task backend built on the simulseq toy model."""

    def __init__(self, spec: simulseq.SyntheticTaskSpec):
        self.model = simulseq.ToyTranslator.from_spec(spec)
        self.model_name = f"toy-{spec.kind}"
        self.hidden_dim = self.model.hidden_size

    def step(self, src_tokens, tgt_tokens) -> StepReply:
        model = self.model
        src = model.vocab.encode(src_tokens)
        tgt = model.vocab.encode(tgt_tokens)
        if len(src) == 0:
            raise ValueError("src must not be empty")
        state = model.prepare(
            model.initial_state(), src, tgt, simulseq.STRATEGY_REBUILD
        )
        step = model.decode_step(state, tgt)
        return StepReply(
            next_token=model.vocab.token_of(step.token_id),
            eos=bool(step.is_eos),
            eos_prob=float(step.eos_prob),
            hidden_state=tuple(float(x) for x in step.state),
        )


@dataclass(frozen=True)
class ServerConfig:
    """Where to listen and which synthetic task to serve.

    Exactly one of stdio/port may be set, matching the client side's
    transport rules. hidden_dim, when given, must agree with the backend;
    it exists so a deployment manifest can assert the advertised width.
    """

    stdio: bool = False
    host: str = "127.0.0.1"
    port: int | None = None
    task: str = "copy"
    vocab_size: int = 50
    window: int = 3
    ratio: int = 2
    seed: int = 0
    hidden_dim: int | None = None

    def __post_init__(self):
        if self.stdio == (self.port is not None):
            raise ValueError("configure exactly one of stdio or port")
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}")

    def task_spec(self) -> simulseq.SyntheticTaskSpec:
        return simulseq.SyntheticTaskSpec(
            kind=self.task,
            vocab_size=self.vocab_size,
            window=self.window,
            ratio=self.ratio,
            seed=self.seed,
        )


def _token_list(value):
    if not isinstance(value, list) or not all(isinstance(t, str) for t in value):
        raise ValueError("src and tgt_prefix must be lists of strings")
    return value


def handle_stream(backend, rfile, wfile) -> None:
    """Serve one connection: binary line streams in and out, until EOF.

    A malformed line never ends the session; it produces an error message
    carrying whatever id could be recovered (-1 otherwise).
    """

    def emit(obj: dict) -> None:
        wfile.write(json.dumps(obj).encode("utf-8") + b"\n")
        wfile.flush()

    emit(
        {
            "type": "hello",
            "protocol_version": PROTOCOL_VERSION,
            "model_name": backend.model_name,
            "hidden_dim": backend.hidden_dim,
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
            src = _token_list(obj.get("src"))
            tgt = _token_list(obj.get("tgt_prefix"))
            reply = backend.step(src, tgt)
            emit(
                {
                    "type": "decode_response",
                    "id": req_id,
                    "next_token": reply.next_token,
                    "eos": reply.eos,
                    "eos_prob": reply.eos_prob,
                    "hidden_state": list(reply.hidden_state),
                }
            )
        except Exception as exc:  # any bad request: report and keep serving
            emit({"type": "error", "id": req_id, "message": str(exc)})


def make_backend(config: ServerConfig) -> ToyBackend:
    backend = ToyBackend(config.task_spec())
    if config.hidden_dim is not None and config.hidden_dim != backend.hidden_dim:
        raise ValueError(
            f"configured hidden_dim {config.hidden_dim} does not match "
            f"the backend's {backend.hidden_dim}"
        )
    return backend


def serve(config: ServerConfig, on_bound=None) -> None:
    """Run the server until end-of-stream.

    stdio: serves the parent process on stdin/stdout and returns at EOF.
    tcp: accepts connections one at a time, each served sequentially to
    EOF, forever. on_bound (tests, service managers) receives the bound
    (host, port) once the listening socket is ready.
    """
    backend = make_backend(config)
    if config.stdio:
        handle_stream(backend, sys.stdin.buffer, sys.stdout.buffer)
        return
    with socket.create_server((config.host, config.port)) as listener:
        if on_bound is not None:
            on_bound(listener.getsockname()[:2])
        while True:
            conn, _ = listener.accept()
            with conn:
                rfile = conn.makefile("rb")
                wfile = conn.makefile("wb")
                try:
                    handle_stream(backend, rfile, wfile)
                except (BrokenPipeError, ConnectionResetError):
                    pass
                finally:
                    rfile.close()
                    try:
                        wfile.close()
                    except (BrokenPipeError, ConnectionResetError):
                        pass
