import pytest

from simulseq.core import ArrivalSchedule
from simulseq.decoding import LagStop, RunConfig, simulate
from simulseq.model import SyntheticTaskSpec, ToyTranslator, generate_corpus


@pytest.fixture(scope="session")
def copy_corpus():
    spec = SyntheticTaskSpec(kind="copy", vocab_size=30, min_len=5, max_len=9, seed=11)
    model, pairs = generate_corpus(spec, 20)
    return model, pairs


@pytest.fixture(scope="session")
def reorder_corpus():
    spec = SyntheticTaskSpec(
        kind="reorder", vocab_size=30, min_len=6, max_len=12, window=3, seed=11
    )
    model, pairs = generate_corpus(spec, 20)
    return model, pairs


@pytest.fixture(scope="session")
def expand_corpus():
    spec = SyntheticTaskSpec(
        kind="expand", vocab_size=30, min_len=5, max_len=9, ratio=2, seed=11
    )
    model, pairs = generate_corpus(spec, 20)
    return model, pairs


@pytest.fixture(scope="session")
def copy_traces(copy_corpus):
    model, pairs = copy_corpus
    config = RunConfig(controller=LagStop(1), schedule=ArrivalSchedule.constant(1))
    traces = [simulate(model, p.source, config) for p in pairs]
    return traces, [p.reference for p in pairs]
