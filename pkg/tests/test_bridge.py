"""NDJSON wire protocol: server loop, client session, and conformance."""

import io
import json
import socketserver
import sys
import threading

import numpy as np
import pytest

from simulseq.bridge import (
    BridgeConfig,
    BridgedModel,
    BridgeSession,
    ProtocolError,
    handshake,
    remote_decode_step,
    run_conformance,
    serve_model,
)
from simulseq.core import ArrivalSchedule
from simulseq.decoding import LagStop, RunConfig, simulate
from simulseq.model import SyntheticTaskSpec, ToyTranslator, generate_corpus

STUB = (sys.executable, "-m", "simulseq.stub_server", "--stdio")


def _stub_command(task="copy", vocab=20, seed=3):
    return STUB + ("--task", task, "--vocab-size", str(vocab), "--seed", str(seed))


def _local_model(task="copy", vocab=20, seed=3):
    return ToyTranslator.from_spec(
        SyntheticTaskSpec(kind=task, vocab_size=vocab, seed=seed)
    )


def _fake_server(*lines):
    """A child process that prints the given lines and then waits on stdin."""
    script = (
        "import sys\n"
        + "".join(f"sys.stdout.write({line + chr(10)!r})\n" for line in lines)
        + "sys.stdout.flush()\nsys.stdin.read()\n"
    )
    return BridgeConfig(command=(sys.executable, "-c", script), timeout_ms=5000)


class TestBridgeConfig:
    def test_requires_exactly_one_transport(self):
        with pytest.raises(ValueError):
            BridgeConfig()
        with pytest.raises(ValueError):
            BridgeConfig(command=("x",), host="h", port=1)

    def test_transport_and_timeout_units(self):
        stdio = BridgeConfig(command=("x",), timeout_ms=1500)
        assert stdio.transport == "stdio"
        assert stdio.timeout_seconds == 1.5
        tcp = BridgeConfig(host="localhost", port=9)
        assert tcp.transport == "tcp"

    def test_rejects_nonpositive_timeout(self):
        with pytest.raises(ValueError):
            BridgeConfig(command=("x",), timeout_ms=0)


class TestServeModel:
    def _run(self, requests):
        model = _local_model()
        rfile = io.BytesIO(b"".join(requests))
        wfile = io.BytesIO()
        serve_model(model, rfile, wfile, model_name="unit-stub")
        lines = [json.loads(l) for l in wfile.getvalue().splitlines() if l.strip()]
        return model, lines

    def test_hello_is_first_and_complete(self):
        _, lines = self._run([])
        assert lines[0] == {
            "type": "hello",
            "protocol_version": 1,
            "model_name": "unit-stub",
            "hidden_dim": 16,
        }

    def test_decode_request_round_trip(self):
        model = _local_model()
        tokens = model.vocab.decode(model.source_ids[:2])
        req = json.dumps(
            {"type": "decode_request", "id": 5, "src": list(tokens), "tgt_prefix": []}
        ).encode() + b"\n"
        _, lines = self._run([req])
        resp = lines[1]
        assert resp["type"] == "decode_response"
        assert resp["id"] == 5
        assert isinstance(resp["next_token"], str)
        assert resp["eos"] is False
        assert 0.0 <= resp["eos_prob"] <= 1.0
        assert len(resp["hidden_state"]) == 16

    def test_malformed_lines_answered_not_fatal(self):
        model = _local_model()
        tokens = model.vocab.decode(model.source_ids[:1])
        good = json.dumps(
            {"type": "decode_request", "id": 7, "src": list(tokens), "tgt_prefix": []}
        ).encode() + b"\n"
        _, lines = self._run(
            [
                b"this is not json\n",
                json.dumps({"type": "nope", "id": 3}).encode() + b"\n",
                json.dumps({"type": "decode_request", "id": 9, "src": ["a"]}).encode()
                + b"\n",
                json.dumps(
                    {"type": "decode_request", "id": 2, "src": [], "tgt_prefix": []}
                ).encode() + b"\n",
                good,
            ]
        )
        kinds = [(m["type"], m.get("id")) for m in lines[1:]]
        assert kinds == [
            ("error", -1),
            ("error", 3),
            ("error", 9),
            ("error", 2),
            ("decode_response", 7),
        ]


class TestSessionOverStdio:
    def test_handshake_and_decode(self):
        model = _local_model()
        config = BridgeConfig(command=_stub_command(), timeout_ms=20000)
        with handshake(config) as session:
            assert session.info.model_name == "toy-copy"
            assert session.info.hidden_dim == model.hidden_size
            assert session.info.protocol_version == 1
            src = model.vocab.decode(model.source_ids[:3])
            resp = remote_decode_step(session, src, [])
            state = model.prepare(
                model.initial_state(), model.source_ids[:3], (), "rebuild-all"
            )
            want = model.decode_step(state, ())
            assert resp["next_token"] == model.vocab.token_of(want.token_id)
            assert resp["eos"] is want.is_eos
            assert resp["eos_prob"] == want.eos_prob  # bitwise via repr round trip
            assert resp["hidden_state"] == [float(x) for x in want.state]

    def test_ids_are_sequential(self):
        config = BridgeConfig(command=_stub_command(), timeout_ms=20000)
        model = _local_model()
        src = model.vocab.decode(model.source_ids[:2])
        with handshake(config) as session:
            session.request(src, [])
            session.request(src, [])
            assert session._next_id == 2

    def test_server_error_surfaces_as_protocol_error(self):
        config = BridgeConfig(command=_stub_command(), timeout_ms=20000)
        with handshake(config) as session:
            with pytest.raises(ProtocolError, match="src must not be empty"):
                session.request([], [])


class TestHandshakeRejections:
    def test_wrong_protocol_version(self):
        cfg = _fake_server(
            '{"type": "hello", "protocol_version": 2, '
            '"model_name": "x", "hidden_dim": 16}'
        )
        with pytest.raises(ProtocolError, match="protocol_version"):
            handshake(cfg)

    def test_non_hello_first_message(self):
        cfg = _fake_server('{"type": "decode_response", "id": 0}')
        with pytest.raises(ProtocolError, match="hello"):
            handshake(cfg)

    def test_garbage_first_line(self):
        cfg = _fake_server("definitely not json")
        with pytest.raises(ProtocolError, match="non-JSON"):
            handshake(cfg)

    def test_bad_hidden_dim(self):
        cfg = _fake_server(
            '{"type": "hello", "protocol_version": 1, '
            '"model_name": "x", "hidden_dim": 0}'
        )
        with pytest.raises(ProtocolError, match="hidden_dim"):
            handshake(cfg)


class TestResponseValidation:
    HELLO = (
        '{"type": "hello", "protocol_version": 1, '
        '"model_name": "x", "hidden_dim": 2}'
    )

    def _expect(self, response_line, match):
        cfg = _fake_server(self.HELLO, response_line)
        with handshake(cfg) as session:
            with pytest.raises(ProtocolError, match=match):
                session.request(["a"], [])

    def test_mismatched_id(self):
        self._expect(
            '{"type": "decode_response", "id": 41, "next_token": "t", '
            '"eos": false, "eos_prob": 0.5, "hidden_state": [0.0, 0.0]}',
            "does not match",
        )

    def test_eos_prob_out_of_range(self):
        self._expect(
            '{"type": "decode_response", "id": 0, "next_token": "t", '
            '"eos": false, "eos_prob": 1.5, "hidden_state": [0.0, 0.0]}',
            "eos_prob",
        )

    def test_hidden_state_wrong_length(self):
        self._expect(
            '{"type": "decode_response", "id": 0, "next_token": "t", '
            '"eos": false, "eos_prob": 0.5, "hidden_state": [0.0]}',
            "hidden_state",
        )

    def test_non_boolean_eos(self):
        self._expect(
            '{"type": "decode_response", "id": 0, "next_token": "t", '
            '"eos": 1, "eos_prob": 0.5, "hidden_state": [0.0, 0.0]}',
            "eos must be",
        )


class TestBridgedModel:
    def test_simulation_matches_in_process(self):
        model = _local_model(task="reorder", vocab=24, seed=6)
        spec = SyntheticTaskSpec(kind="reorder", vocab_size=24, seed=6,
                                 min_len=6, max_len=12)
        _, pairs = generate_corpus(spec, 6)
        config = BridgeConfig(
            command=_stub_command(task="reorder", vocab=24, seed=6),
            timeout_ms=20000,
        )
        run = RunConfig(controller=LagStop(1), schedule=ArrivalSchedule.constant(2))
        with handshake(config) as session:
            bridged = BridgedModel(session, model.vocab)
            for p in pairs:
                assert simulate(bridged, p.source, run) == simulate(
                    model, p.source, run
                )

    def test_rejects_non_rebuild_strategy(self):
        config = BridgeConfig(command=_stub_command(), timeout_ms=20000)
        with handshake(config) as session:
            bridged = BridgedModel(session, _local_model().vocab)
            with pytest.raises(ValueError):
                bridged.prepare(bridged.initial_state(), (1,), (), "reuse-encoder")


class TestConformance:
    def test_stdio_stub_passes_all_checks(self):
        spec = SyntheticTaskSpec(kind="copy", vocab_size=20, seed=3,
                                 min_len=5, max_len=9)
        reference, pairs = generate_corpus(spec, 12)
        config = BridgeConfig(command=_stub_command(), timeout_ms=20000)
        checks = run_conformance(config, reference, pairs, seed=0,
                                 decode_calls=120, simulations=18)
        assert [c.name for c in checks] == [
            "hello-first",
            "hidden-dim-advertised",
            "id-correlation",
            "malformed-input-recovery",
            "differential-decode-steps",
            "differential-simulations",
        ]
        assert all(c.passed for c in checks), [
            (c.name, c.detail) for c in checks if not c.passed
        ]

    def test_mismatched_reference_fails_differential(self):
        spec = SyntheticTaskSpec(kind="copy", vocab_size=20, seed=3,
                                 min_len=5, max_len=9)
        _, pairs = generate_corpus(spec, 8)
        # same vocab surface, different translation rule
        wrong = _local_model(task="reorder", vocab=20, seed=3)
        config = BridgeConfig(command=_stub_command(), timeout_ms=20000)
        checks = run_conformance(config, wrong, pairs, seed=0,
                                 decode_calls=40, simulations=6)
        by_name = {c.name: c for c in checks}
        assert not by_name["differential-decode-steps"].passed


class TestTcpTransport:
    @pytest.fixture()
    def tcp_server(self):
        model = _local_model(task="expand", vocab=18, seed=2)

        class Handler(socketserver.StreamRequestHandler):
            def handle(self):
                try:
                    serve_model(model, self.rfile, self.wfile,
                                model_name="tcp-stub")
                except (BrokenPipeError, ConnectionResetError):
                    pass

        server = socketserver.ThreadingTCPServer(("127.0.0.1", 0), Handler)
        server.daemon_threads = True
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            yield model, server.server_address
        finally:
            server.shutdown()
            server.server_close()

    def test_round_trip_over_tcp(self, tcp_server):
        model, (host, port) = tcp_server
        config = BridgeConfig(host=host, port=port, timeout_ms=20000)
        run = RunConfig(controller=LagStop(0), schedule=ArrivalSchedule.constant(1))
        spec = SyntheticTaskSpec(kind="expand", vocab_size=18, seed=2,
                                 min_len=4, max_len=7)
        _, pairs = generate_corpus(spec, 4)
        with handshake(config) as session:
            assert session.info.model_name == "tcp-stub"
            bridged = BridgedModel(session, model.vocab)
            for p in pairs:
                assert simulate(bridged, p.source, run) == simulate(
                    model, p.source, run
                )
