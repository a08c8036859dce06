"""Streaming adaptation of a frozen full-sentence translation model.

The engine replays a growing source prefix through an ordinary greedy
decoder and decides, token by token, when to stop committing output and
wait for more input. Stopping is pluggable: a lag heuristic, a wait-k
schedule, or a trained stochastic stopping network, all over the same
prefix-translation loop. The rest of the package is the harness around
that idea: latency and quality metrics, a policy-gradient trainer for the
stopping network, a wire protocol for remote decoder backends, and a CLI.
"""

from .core import (
    ArrivalSchedule,
    SentencePair,
    StreamTrace,
    Vocab,
    load_corpus,
    save_corpus,
)
from .decoding import (
    LagStop,
    LearnedStop,
    RunConfig,
    WaitK,
    prefix_translate,
    simulate,
    simulate_corpus,
)
from .metrics import (
    MetricsReport,
    average_lagging,
    compute_report,
    consecutive_wait,
    corpus_bleu,
    initial_delay,
    length_ratio,
    sentence_bleu,
)
from .model import (
    STRATEGIES,
    STRATEGY_REBUILD,
    STRATEGY_REUSE_DECODER,
    STRATEGY_REUSE_ENCODER,
    SyntheticTaskSpec,
    ToyTranslator,
    consecutive_greedy,
    generate_corpus,
)
from .rl import (
    RewardConfig,
    TrainConfig,
    Trajectory,
    assemble_rewards,
    sample_trajectory,
    train_tn,
)
from .stopping import (
    PolicyParams,
    init_policy,
    lag_quota,
    load_checkpoint,
    policy_forward,
    policy_grad_logp,
    save_checkpoint,
    tn_should_stop,
    waitk_quota,
)

__version__ = "0.1.0"

__all__ = [
    "ArrivalSchedule",
    "SentencePair",
    "StreamTrace",
    "Vocab",
    "load_corpus",
    "save_corpus",
    "LagStop",
    "LearnedStop",
    "RunConfig",
    "WaitK",
    "prefix_translate",
    "simulate",
    "simulate_corpus",
    "MetricsReport",
    "average_lagging",
    "compute_report",
    "consecutive_wait",
    "corpus_bleu",
    "initial_delay",
    "length_ratio",
    "sentence_bleu",
    "STRATEGIES",
    "STRATEGY_REBUILD",
    "STRATEGY_REUSE_DECODER",
    "STRATEGY_REUSE_ENCODER",
    "SyntheticTaskSpec",
    "ToyTranslator",
    "consecutive_greedy",
    "generate_corpus",
    "RewardConfig",
    "TrainConfig",
    "Trajectory",
    "assemble_rewards",
    "sample_trajectory",
    "train_tn",
    "PolicyParams",
    "init_policy",
    "lag_quota",
    "load_checkpoint",
    "policy_forward",
    "policy_grad_logp",
    "save_checkpoint",
    "tn_should_stop",
    "waitk_quota",
    "__version__",
]
