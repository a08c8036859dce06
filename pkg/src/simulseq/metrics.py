"""Quality and latency metrics for streamed translation runs.

BLEU comes in two deliberate variants:

* sentence_bleu: BLEU-4 on one sentence, add-one smoothing applied to both
  numerator and denominator for n >= 2 (unigrams unsmoothed), brevity
  penalty included, returned on a 0..1 scale. Used for reward shaping, where
  a zero score on near-miss prefixes would starve the learner of signal.
* corpus_bleu: standard aggregate-count corpus BLEU-4 without smoothing,
  returned on the conventional 0..100 scale. Used for reporting.

Latency metrics operate on the per-token reveal counts l(t) recorded in a
trace: average lagging, consecutive wait, initial delay and length ratio.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field


def _ngram_counts(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _clipped_matches(reference, hypothesis, n: int) -> tuple[int, int]:
    """(clipped match count, hypothesis n-gram count) for order n."""
    total = max(0, len(hypothesis) - n + 1)
    if total == 0:
        return 0, 0
    ref_counts = _ngram_counts(reference, n)
    matches = 0
    for gram, cnt in _ngram_counts(hypothesis, n).items():
        matches += min(cnt, ref_counts.get(gram, 0))
    return matches, total


def brevity_penalty(ref_len: int, hyp_len: int) -> float:
    if hyp_len == 0:
        return 0.0
    if hyp_len >= ref_len:
        return 1.0
    return math.exp(1.0 - ref_len / hyp_len)


def sentence_bleu(reference, hypothesis, max_n: int = 4) -> float:
    """Smoothed sentence BLEU on a 0..1 scale. Empty hypothesis scores 0."""
    reference = tuple(reference)
    hypothesis = tuple(hypothesis)
    if len(hypothesis) == 0:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        matches, total = _clipped_matches(reference, hypothesis, n)
        if n == 1:
            if matches == 0:
                return 0.0
            precision = matches / total
        else:
            precision = (matches + 1) / (total + 1)
        log_sum += math.log(precision)
    bp = brevity_penalty(len(reference), len(hypothesis))
    return bp * math.exp(log_sum / max_n)


def corpus_bleu(pairs, max_n: int = 4) -> float:
    """Unsmoothed corpus BLEU-4 on a 0..100 scale.

    pairs holds (reference, hypothesis) sentence tuples; n-gram match and
    total counts are pooled across the corpus before taking precisions.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("empty corpus")
    matches = [0] * max_n
    totals = [0] * max_n
    ref_len = 0
    hyp_len = 0
    for ref, hyp in pairs:
        ref = tuple(ref)
        hyp = tuple(hyp)
        ref_len += len(ref)
        hyp_len += len(hyp)
        for n in range(1, max_n + 1):
            m, t = _clipped_matches(ref, hyp, n)
            matches[n - 1] += m
            totals[n - 1] += t
    if hyp_len == 0:
        return 0.0
    log_sum = 0.0
    for m, t in zip(matches, totals):
        if m == 0 or t == 0:
            return 0.0
        log_sum += math.log(m / t)
    return 100.0 * brevity_penalty(ref_len, hyp_len) * math.exp(log_sum / max_n)


def average_lagging(l, src_len: int, hyp_len: int) -> float:
    """Mean number of source tokens the writer trails behind an ideal wait-0 reader.

    l[t-1] is the source-reveal count when target token t was committed. The
    sum runs up to the first token committed with the full source in view, and
    the per-token offset is scaled by the hypothesis/source length ratio. An
    empty hypothesis is maximally late by convention: src_len.
    """
    l = list(l)
    if src_len < 1:
        raise ValueError("src_len must be >= 1")
    if hyp_len != len(l):
        raise ValueError("hyp_len disagrees with l")
    if hyp_len == 0:
        return float(src_len)
    t_e = None
    prev = 0
    for t, li in enumerate(l, 1):
        if li > src_len:
            raise ValueError("l(t) exceeds src_len")
        if li < prev:
            raise ValueError("l(t) must be non-decreasing")
        prev = li
        if li == src_len and t_e is None:
            t_e = t
    if t_e is None:
        raise ValueError("run ended before the full source was revealed")
    rate = hyp_len / src_len
    total = 0.0
    for t in range(1, t_e + 1):
        total += l[t - 1] - (t - 1) / rate
    return total / t_e


def consecutive_wait(c, w) -> float:
    """Average source tokens consumed per writing step: sum(c) / #{s : w_s > 0}.

    A run that never writes has no writing step; it is reported as src_len
    (callers that care can test `any(wi > 0 for wi in w)` and count such
    sentences separately, as MetricsReport does).
    """
    c = list(c)
    w = list(w)
    if len(c) != len(w):
        raise ValueError("c and w differ in length")
    writes = sum(1 for wi in w if wi > 0)
    if writes == 0:
        return float(sum(c))
    return sum(c) / writes


def initial_delay(l, src_len: int) -> int:
    """Source tokens read before the first committed target token (src_len if none)."""
    l = list(l)
    if l:
        return int(l[0])
    return int(src_len)


def length_ratio(hypotheses, references) -> float:
    """Corpus-level output-to-reference length ratio: sum |hyp| / sum |ref|."""
    ref_total = sum(len(r) for r in references)
    hyp_total = sum(len(h) for h in hypotheses)
    if ref_total == 0:
        raise ValueError("empty reference corpus")
    return hyp_total / ref_total


@dataclass
class MetricsReport:
    """Corpus-level quality/latency summary of a set of traces."""

    sentences: int
    corpus_bleu: float
    mean_al: float
    mean_cw: float
    mean_initial_delay: float
    length_ratio: float
    initial_delay_histogram: dict[int, int] = field(default_factory=dict)
    cw_undefined: int = 0

    def to_dict(self) -> dict:
        return {
            "sentences": self.sentences,
            "corpus_bleu": self.corpus_bleu,
            "mean_al": self.mean_al,
            "mean_cw": self.mean_cw,
            "mean_initial_delay": self.mean_initial_delay,
            "length_ratio": self.length_ratio,
            "initial_delay_histogram": {
                str(k): v for k, v in sorted(self.initial_delay_histogram.items())
            },
            "cw_undefined": self.cw_undefined,
        }


def compute_report(traces, references) -> MetricsReport:
    """Aggregate metrics over parallel (trace, reference token ids) lists."""
    if len(traces) != len(references):
        raise ValueError("traces and references differ in length")
    if not traces:
        raise ValueError("empty corpus")
    al_sum = 0.0
    cw_sum = 0.0
    delay_sum = 0
    cw_undefined = 0
    histogram: dict[int, int] = {}
    hyps = []
    for trace in traces:
        src_len = trace.src_len
        al_sum += average_lagging(trace.l, src_len, len(trace.output))
        cw_sum += consecutive_wait(trace.c, trace.w)
        if not any(wi > 0 for wi in trace.w):
            cw_undefined += 1
        delay = initial_delay(trace.l, src_len)
        delay_sum += delay
        histogram[delay] = histogram.get(delay, 0) + 1
        hyps.append(trace.output)
    n = len(traces)
    return MetricsReport(
        sentences=n,
        corpus_bleu=corpus_bleu(list(zip(references, hyps))),
        mean_al=al_sum / n,
        mean_cw=cw_sum / n,
        mean_initial_delay=delay_sum / n,
        length_ratio=length_ratio(hyps, references),
        initial_delay_histogram=histogram,
        cw_undefined=cw_undefined,
    )
