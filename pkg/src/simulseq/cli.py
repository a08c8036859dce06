"""Command-line surface: corpus generation, controller training, sweep
simulation, metric reports, and protocol conformance runs.

Every command is deterministic under a fixed seed. Seeds resolve in order:
--seed flag, config file, SIMULSEQ_SEED environment variable, then 0.
A JSON config file (--config) may supply any flag by its long name with
underscores; explicit flags win over the file.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 protocol error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .bridge import BridgeConfig, BridgeError, ProtocolError, run_conformance
from .core import ArrivalSchedule, StreamTrace, Vocab, load_corpus, save_corpus
from .decoding import LagStop, LearnedStop, RunConfig, WaitK, simulate
from .metrics import compute_report
from .model import SyntheticTaskSpec, ToyTranslator, generate_corpus
from .rl import RewardConfig, TrainConfig, train_tn
from .stopping import load_checkpoint, save_checkpoint

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_PROTOCOL = 3

SEED_ENV = "SIMULSEQ_SEED"

SWEEP_HEADER = (
    "controller",
    "param",
    "schedule",
    "corpus_bleu",
    "mean_al",
    "mean_cw",
    "mean_initial_delay",
    "length_ratio",
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route through UsageError
    # so main() can map every usage problem to exit code 1.
    def error(self, message):
        raise UsageError(message)


def _load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except FileNotFoundError as exc:
        raise UsageError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise UsageError("config file must hold a JSON object")
    return obj


def _resolve(args, defaults: dict) -> argparse.Namespace:
    """Fill unset flags from the config file, then from hard defaults."""
    cfg = _load_config(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(cfg) - set(defaults))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    merged = {}
    for key, hard in defaults.items():
        val = getattr(args, key, None)
        if val is None:
            val = cfg[key] if key in cfg else hard
        merged[key] = val
    return argparse.Namespace(**merged)


def _resolve_seed(value) -> int:
    if value is not None:
        return int(value)
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return 0


def _guard_output(path, force: bool) -> None:
    if path and os.path.exists(path) and not force:
        raise UsageError(f"refusing to overwrite {path} (pass --force)")


def _int_list(text, flag) -> list[int]:
    try:
        return [int(part) for part in str(text).split(",") if part.strip() != ""]
    except ValueError as exc:
        raise UsageError(f"{flag} expects comma-separated integers, got {text!r}") from exc


def _str_list(text) -> list[str]:
    return [part.strip() for part in str(text).split(",") if part.strip() != ""]


def task_sidecar_paths(corpus_path) -> tuple[str, str]:
    """A corpus file travels with its task spec and token list."""
    base = str(corpus_path)
    return base + ".task.json", base + ".vocab"


def load_task_corpus(corpus_path):
    """Rebuild the translator and sentence pairs a corpus was generated with."""
    task_path, vocab_path = task_sidecar_paths(corpus_path)
    for p in (corpus_path, task_path, vocab_path):
        if not os.path.exists(p):
            raise UsageError(f"missing corpus file: {p}")
    spec = SyntheticTaskSpec.load(task_path)
    model = ToyTranslator.from_spec(spec)
    vocab = Vocab.load(vocab_path)
    if vocab.tokens != model.vocab.tokens:
        raise RuntimeError(
            f"vocab sidecar {vocab_path} does not match the task spec's vocabulary"
        )
    pairs = load_corpus(corpus_path, model.vocab)
    return spec, model, pairs


# ----------------------------------------------------------------------
# gen-data


_GEN_DEFAULTS = {
    "task": None,
    "n": None,
    "vocab_size": 50,
    "min_len": 8,
    "max_len": 20,
    "window": 3,
    "ratio": 2,
    "seed": None,
    "out": None,
}


def cmd_gen_data(args) -> int:
    ns = _resolve(args, _GEN_DEFAULTS)
    if ns.task not in ("copy", "reorder", "expand"):
        raise UsageError(f"--task must be copy, reorder or expand, got {ns.task!r}")
    if ns.n is None or int(ns.n) < 1:
        raise UsageError("--n must be a positive sentence count")
    if ns.out is None:
        raise UsageError("--out is required")
    seed = _resolve_seed(ns.seed)
    spec = SyntheticTaskSpec(
        kind=ns.task,
        vocab_size=int(ns.vocab_size),
        min_len=int(ns.min_len),
        max_len=int(ns.max_len),
        window=int(ns.window),
        ratio=int(ns.ratio),
        seed=seed,
    )
    task_path, vocab_path = task_sidecar_paths(ns.out)
    for p in (ns.out, task_path, vocab_path):
        _guard_output(p, args.force)
    model, pairs = generate_corpus(spec, int(ns.n))
    save_corpus(ns.out, pairs, model.vocab)
    spec.save(task_path)
    model.vocab.save(vocab_path)
    print(f"wrote {len(pairs)} sentences to {ns.out}")
    return EXIT_OK


# ----------------------------------------------------------------------
# train-tn


_TRAIN_DEFAULTS = {
    "corpus": None,
    "updates": 2000,
    "batch_size": 8,
    "trajectories": 5,
    "lr": 1e-3,
    "alpha": 0.04,
    "target_delay": 2.0,
    "bleu_scale": "unit",
    "floor_hinge": False,
    "cap": 200,
    "h1": 64,
    "h2": 64,
    "log_interval": 10,
    "seed": None,
    "out": None,
    "log": None,
}


def cmd_train_tn(args) -> int:
    ns = _resolve(args, _TRAIN_DEFAULTS)
    if ns.corpus is None:
        raise UsageError("--corpus is required")
    if ns.out is None:
        raise UsageError("--out is required")
    if int(ns.updates) < 0:
        raise UsageError("--updates must be >= 0")
    seed = _resolve_seed(ns.seed)
    _guard_output(ns.out, args.force)
    if ns.log:
        _guard_output(ns.log, args.force)
    _, model, pairs = load_task_corpus(ns.corpus)
    train_cfg = TrainConfig(
        updates=int(ns.updates),
        batch_size=int(ns.batch_size),
        trajectories=int(ns.trajectories),
        lr=float(ns.lr),
        seed=seed,
        log_interval=int(ns.log_interval),
        cap=int(ns.cap),
        h1=int(ns.h1),
        h2=int(ns.h2),
    )
    reward_cfg = RewardConfig(
        alpha=float(ns.alpha),
        target_delay=float(ns.target_delay),
        bleu_scale=str(ns.bleu_scale),
        floor_hinge=bool(ns.floor_hinge),
    )
    progress = None
    if args.verbose:
        def progress(update, stats):
            print(
                f"update {update}: return={stats.mean_return:.4f} "
                f"bleu={stats.mean_bleu:.4f} al={stats.mean_al:.3f} "
                f"p_stop={stats.p_stop_mean:.3f}",
                file=sys.stderr,
            )
    params, _ = train_tn(model, pairs, train_cfg, reward_cfg,
                         log_path=ns.log, progress=progress)
    save_checkpoint(
        ns.out,
        params,
        training_config={
            "train": train_cfg.to_dict(),
            "reward": {
                "alpha": reward_cfg.alpha,
                "target_delay": reward_cfg.target_delay,
                "bleu_scale": reward_cfg.bleu_scale,
                "floor_hinge": reward_cfg.floor_hinge,
            },
            "corpus": os.path.basename(str(ns.corpus)),
        },
    )
    print(f"wrote checkpoint to {ns.out}")
    return EXIT_OK


# ----------------------------------------------------------------------
# simulate


_SIM_DEFAULTS = {
    "corpus": None,
    "le": None,
    "waitk": None,
    "tn": None,
    "schedule": "1",
    "strategy": "rebuild-all",
    "cap": 200,
    "jobs": 1,
    "out": None,
    "dump_traces": False,
}


def _controller_grid(ns) -> list:
    grid = []
    if ns.le is not None:
        for d in _int_list(ns.le, "--le"):
            grid.append(LagStop(d))
    if ns.waitk is not None:
        for k in _int_list(ns.waitk, "--waitk"):
            grid.append(WaitK(k))
    if ns.tn is not None:
        for path in _str_list(ns.tn):
            if not os.path.exists(path):
                raise UsageError(f"checkpoint not found: {path}")
            params, _, _ = load_checkpoint(path)
            grid.append(LearnedStop(params=params, mode="greedy", name=Path(path).stem))
    if not grid:
        raise UsageError("empty sweep: give at least one of --le, --waitk, --tn")
    return grid


def trace_dump_path(out_csv, label, param, schedule_spec) -> str:
    stem = str(out_csv)
    if stem.endswith(".csv"):
        stem = stem[: -len(".csv")]
    safe_sched = schedule_spec.replace(":", "-").replace(",", "_")
    return f"{stem}.{label}-{param}.{safe_sched}.traces.jsonl"


def _run_slice(model, sources, config):
    return [simulate(model, src, config) for src in sources]


def _simulate_all(model, sources, config, jobs: int):
    if jobs <= 1 or len(sources) <= 1:
        return _run_slice(model, sources, config)
    jobs = min(jobs, len(sources))
    step = (len(sources) + jobs - 1) // jobs
    chunks = [sources[i : i + step] for i in range(0, len(sources), step)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = [pool.submit(_run_slice, model, chunk, config) for chunk in chunks]
        traces = []
        # collected in submission order, so output order never depends on
        # worker scheduling
        for fut in futures:
            traces.extend(fut.result())
    return traces


def cmd_simulate(args) -> int:
    ns = _resolve(args, _SIM_DEFAULTS)
    if ns.corpus is None:
        raise UsageError("--corpus is required")
    if ns.out is None:
        raise UsageError("--out is required")
    _guard_output(ns.out, args.force)
    schedules = [ArrivalSchedule.from_spec_string(s) for s in _str_list(ns.schedule)]
    if not schedules:
        raise UsageError("--schedule must name at least one schedule")
    grid = _controller_grid(ns)
    _, model, pairs = load_task_corpus(ns.corpus)
    sources = [pair.source for pair in pairs]
    references = [pair.reference for pair in pairs]
    rows = []
    dumps = []
    for controller in grid:
        label, param = controller.label()
        for schedule in schedules:
            config = RunConfig(
                controller=controller,
                schedule=schedule,
                strategy=str(ns.strategy),
                cap=int(ns.cap),
            )
            traces = _simulate_all(model, sources, config, int(ns.jobs))
            report = compute_report(traces, references)
            rows.append(
                (
                    label,
                    param,
                    schedule.spec_string(),
                    report.corpus_bleu,
                    report.mean_al,
                    report.mean_cw,
                    report.mean_initial_delay,
                    report.length_ratio,
                )
            )
            if ns.dump_traces:
                path = trace_dump_path(ns.out, label, param, schedule.spec_string())
                _guard_output(path, args.force)
                with open(path, "w", encoding="utf-8") as fh:
                    for trace in traces:
                        fh.write(json.dumps(trace.to_json()) + "\n")
                dumps.append(path)
    with open(ns.out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(SWEEP_HEADER)
        writer.writerows(rows)
    print(f"wrote {len(rows)} sweep rows to {ns.out}")
    for path in dumps:
        print(f"wrote traces to {path}")
    return EXIT_OK


# ----------------------------------------------------------------------
# eval


_EVAL_DEFAULTS = {"traces": None, "corpus": None, "out": None}


def cmd_eval(args) -> int:
    ns = _resolve(args, _EVAL_DEFAULTS)
    if ns.traces is None or ns.corpus is None:
        raise UsageError("--traces and --corpus are required")
    if ns.out:
        _guard_output(ns.out, args.force)
    _, vocab_path = task_sidecar_paths(ns.corpus)
    if not os.path.exists(vocab_path):
        raise UsageError(f"missing corpus file: {vocab_path}")
    vocab = Vocab.load(vocab_path)
    pairs = load_corpus(ns.corpus, vocab)
    traces = []
    with open(ns.traces, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                traces.append(StreamTrace.from_json(json.loads(line)))
    if len(traces) != len(pairs):
        raise RuntimeError(
            f"trace file has {len(traces)} entries but corpus has {len(pairs)}"
        )
    report = compute_report(traces, [pair.reference for pair in pairs])
    payload = json.dumps(report.to_dict(), indent=2)
    if ns.out:
        with open(ns.out, "w", encoding="utf-8") as fh:
            fh.write(payload + "\n")
        print(f"wrote report to {ns.out}")
    else:
        print(payload)
    return EXIT_OK


# ----------------------------------------------------------------------
# serve-conformance


_CONF_DEFAULTS = {
    "command": None,
    "host": None,
    "port": None,
    "timeout_ms": 30000.0,
    "task": "copy",
    "vocab_size": 50,
    "min_len": 8,
    "max_len": 20,
    "window": 3,
    "ratio": 2,
    "seed": None,
    "sentences": 50,
    "decode_calls": 1000,
    "simulations": 100,
}


def cmd_serve_conformance(args) -> int:
    ns = _resolve(args, _CONF_DEFAULTS)
    seed = _resolve_seed(ns.seed)
    if (ns.command is None) == (ns.port is None):
        raise UsageError("give exactly one of --command or --host/--port")
    if ns.command is not None:
        bridge_cfg = BridgeConfig(
            command=tuple(shlex.split(str(ns.command))), timeout_ms=float(ns.timeout_ms)
        )
    else:
        bridge_cfg = BridgeConfig(
            host=str(ns.host or "127.0.0.1"),
            port=int(ns.port),
            timeout_ms=float(ns.timeout_ms),
        )
    spec = SyntheticTaskSpec(
        kind=str(ns.task),
        vocab_size=int(ns.vocab_size),
        min_len=int(ns.min_len),
        max_len=int(ns.max_len),
        window=int(ns.window),
        ratio=int(ns.ratio),
        seed=seed,
    )
    model, pairs = generate_corpus(spec, int(ns.sentences))
    checks = run_conformance(
        bridge_cfg,
        model,
        pairs,
        seed=seed,
        decode_calls=int(ns.decode_calls),
        simulations=int(ns.simulations),
    )
    failed = 0
    for check in checks:
        verdict = "PASS" if check.passed else "FAIL"
        detail = f"  ({check.detail})" if check.detail else ""
        print(f"{verdict} {check.name}{detail}")
        failed += 0 if check.passed else 1
    if failed:
        print(f"{failed} conformance check(s) failed", file=sys.stderr)
        return EXIT_PROTOCOL
    print(f"all {len(checks)} conformance checks passed")
    return EXIT_OK


# ----------------------------------------------------------------------
# parser wiring


def _add_common(sub):
    sub.add_argument("--config", help="JSON file supplying defaults for any flag")
    sub.add_argument("--force", action="store_true",
                     help="overwrite existing output files")


def build_parser() -> _Parser:
    parser = _Parser(prog="simulseq",
                     description="streaming translation experiment toolkit")
    subs = parser.add_subparsers(dest="command", required=True,
                                 parser_class=_Parser)

    p = subs.add_parser("gen-data", help="generate a synthetic parallel corpus")
    p.add_argument("--task", choices=["copy", "reorder", "expand"])
    p.add_argument("--n", type=int, help="number of sentence pairs")
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--min-len", type=int, dest="min_len")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--window", type=int)
    p.add_argument("--ratio", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="corpus path; sidecar .task.json/.vocab follow it")
    _add_common(p)
    p.set_defaults(func=cmd_gen_data)

    p = subs.add_parser("train-tn", help="train a stopping network on a corpus")
    p.add_argument("--corpus")
    p.add_argument("--updates", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--trajectories", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--target-delay", type=float, dest="target_delay")
    p.add_argument("--bleu-scale", choices=["unit", "percent"], dest="bleu_scale")
    p.add_argument("--floor-hinge", action="store_const", const=True,
                   default=None, dest="floor_hinge")
    p.add_argument("--cap", type=int)
    p.add_argument("--h1", type=int)
    p.add_argument("--h2", type=int)
    p.add_argument("--log-interval", type=int, dest="log_interval")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint path")
    p.add_argument("--log", help="training curve CSV path")
    p.add_argument("--verbose", action="store_true",
                   help="print progress lines to stderr")
    _add_common(p)
    p.set_defaults(func=cmd_train_tn)

    p = subs.add_parser("simulate", help="sweep controllers over a corpus")
    p.add_argument("--corpus")
    p.add_argument("--le", help="comma-separated lag values")
    p.add_argument("--waitk", help="comma-separated k values")
    p.add_argument("--tn", help="comma-separated checkpoint paths")
    p.add_argument("--schedule",
                   help="comma-separated schedules: N, constant:N or full")
    p.add_argument("--strategy",
                   choices=["rebuild-all", "reuse-decoder", "reuse-encoder"])
    p.add_argument("--cap", type=int)
    p.add_argument("--jobs", type=int, help="worker processes for simulation")
    p.add_argument("--out", help="sweep CSV path")
    p.add_argument("--dump-traces", action="store_const", const=True,
                   default=None, dest="dump_traces",
                   help="also write per-sentence trace files")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("eval", help="recompute a metrics report from traces")
    p.add_argument("--traces")
    p.add_argument("--corpus")
    p.add_argument("--out", help="report JSON path (stdout when omitted)")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = subs.add_parser("serve-conformance",
                        help="run the protocol conformance suite against a server")
    p.add_argument("--command", help="server command line (child-process stdio)")
    p.add_argument("--host")
    p.add_argument("--port", type=int)
    p.add_argument("--timeout-ms", type=float, dest="timeout_ms")
    p.add_argument("--task", choices=["copy", "reorder", "expand"])
    p.add_argument("--vocab-size", type=int, dest="vocab_size")
    p.add_argument("--min-len", type=int, dest="min_len")
    p.add_argument("--max-len", type=int, dest="max_len")
    p.add_argument("--window", type=int)
    p.add_argument("--ratio", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--sentences", type=int, help="reference sentences to draw")
    p.add_argument("--decode-calls", type=int, dest="decode_calls")
    p.add_argument("--simulations", type=int)
    _add_common(p)
    p.set_defaults(func=cmd_serve_conformance)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BridgeError, ProtocolError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
