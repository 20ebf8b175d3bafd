"""Statistical reports over scored corpora.

Four reports:

- separation: how well a metric distinguishes correct from incorrect
  samples, as a rank-based AUC (probability a random incorrect sample
  outscores a random correct one, ties counting one half) plus per-group
  means and standard deviations;
- distribution: corpus-wide token-entropy histogram with nearest-rank
  percentile values;
- token frequency: which token texts recur in the high-entropy sets;
- agreement: rank correlation and top-slice overlap between two scorers
  of the same corpus (e.g. a small proxy model vs the target model).

Reports are plain data; rendering lives in :mod:`~hes_toolkit.plotting`.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

import numpy as np
from scipy import stats as sstats

from .corpus_io import SampleRecord
from .errors import EmptyCorpus, IdSetMismatch, MissingCorrectLabel, SingleClassInput
from .metrics import (
    SampleScore,
    ceil_fraction,
    identify_high_entropy_tokens,
    token_entropies,
    top_fraction_count,
)


@dataclass
class GroupStats:
    mean: float
    std: float
    count: int


@dataclass
class SeparationReport:
    """Distribution separation of one metric between label groups."""

    metric: str
    auc: float
    correct: GroupStats
    incorrect: GroupStats

    @property
    def mean_gap(self) -> float:
        return self.incorrect.mean - self.correct.mean


@dataclass
class DistributionReport:
    """Corpus-wide token entropy distribution."""

    token_count: int
    min: float
    max: float
    mean: float
    percentiles: dict[float, float]
    bin_edges: list[float]
    counts: list[int]


@dataclass
class AgreementReport:
    """How similarly two scorers rank the same samples."""

    spearman: float
    overlap_at_ratio: float
    ratio: float
    n_samples: int


def rank_auc(correct: np.ndarray, incorrect: np.ndarray) -> float:
    """P(incorrect > correct) with ties at one half, via average ranks.

    Equivalent to the exhaustive pairwise comparison (the Mann-Whitney U
    statistic scaled to [0, 1]) at a fraction of the cost.
    """
    pooled = np.concatenate([incorrect, correct])
    ranks = sstats.rankdata(pooled)
    n_inc, n_cor = incorrect.size, correct.size
    u = ranks[:n_inc].sum() - n_inc * (n_inc + 1) / 2.0
    return float(u / (n_inc * n_cor))


def separation_report(
    scores: Iterable[SampleScore],
    correct: Mapping[str, bool | None],
    metric: str = "hes_rel",
) -> SeparationReport:
    """Separation of ``metric`` between correct and incorrect samples."""
    good: list[float] = []
    bad: list[float] = []
    for s in scores:
        label = correct.get(s.sample_id)
        if label is None:
            raise MissingCorrectLabel(s.sample_id)
        (good if label else bad).append(s.metric(metric))
    if not good or not bad:
        raise SingleClassInput("need at least one correct and one incorrect sample")
    g = np.asarray(good)
    b = np.asarray(bad)
    return SeparationReport(
        metric=metric,
        auc=rank_auc(g, b),
        correct=GroupStats(mean=float(g.mean()), std=float(g.std()), count=g.size),
        incorrect=GroupStats(mean=float(b.mean()), std=float(b.std()), count=b.size),
    )


def nearest_rank_percentile(sorted_values: np.ndarray, q: float) -> float:
    """Nearest-rank percentile ``q`` (in (0, 100]) of pre-sorted data."""
    if not 0.0 < q <= 100.0:
        raise ValueError(f"percentile must be in (0, 100], got {q}")
    rank = max(1, ceil_fraction(q / 100.0, sorted_values.size))
    return float(sorted_values[min(rank, sorted_values.size) - 1])


def entropy_distribution(
    records: Iterable[SampleRecord],
    percentiles: Iterable[float] = (50.0, 90.0, 99.0, 99.5),
    bins: int = 100,
    tail_mode: str = "lump",
) -> DistributionReport:
    """Histogram and percentile values over every token entropy.

    Exact: all entropies are materialized and sorted, which keeps the
    percentiles deterministic (nearest-rank) at the cost of memory
    proportional to the token count.
    """
    chunks = [token_entropies(r.tokens, tail_mode) for r in records]
    if not chunks:
        raise EmptyCorpus("no records in corpus")
    values = np.sort(np.concatenate(chunks))
    counts, edges = np.histogram(values, bins=bins)
    return DistributionReport(
        token_count=int(values.size),
        min=float(values[0]),
        max=float(values[-1]),
        mean=float(values.mean()),
        percentiles={float(q): nearest_rank_percentile(values, float(q)) for q in percentiles},
        bin_edges=[float(e) for e in edges],
        counts=[int(c) for c in counts],
    )


def high_entropy_token_frequency(
    records: Iterable[SampleRecord],
    p: float = 0.005,
    tail_mode: str = "lump",
) -> list[tuple[str, int]]:
    """How often each token text lands in a sample's high-entropy set.

    Tokens without text fall back to ``id:<token_id>`` buckets (or
    ``<no-text>`` when neither is present). Sorted by descending count,
    then ascending text.
    """
    counter: Counter[str] = Counter()
    for record in records:
        e = token_entropies(record.tokens, tail_mode)
        for i in identify_high_entropy_tokens(e, p):
            tok = record.tokens[i]
            if tok.token_text is not None:
                key = tok.token_text
            elif tok.token_id is not None:
                key = f"id:{tok.token_id}"
            else:
                key = "<no-text>"
            counter[key] += 1
    return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))


def cross_scorer_agreement(
    scores_a: Iterable[SampleScore],
    scores_b: Iterable[SampleScore],
    ratio: float = 0.2,
) -> AgreementReport:
    """Spearman correlation of hes_rel plus Jaccard overlap of top cuts.

    Both score sets must cover exactly the same sample ids.
    """
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must be in (0, 1], got {ratio}")
    a = {s.sample_id: s for s in scores_a}
    b = {s.sample_id: s for s in scores_b}
    if a.keys() != b.keys():
        only_a = sorted(a.keys() - b.keys())[:3]
        only_b = sorted(b.keys() - a.keys())[:3]
        raise IdSetMismatch(f"score sets differ; e.g. only in a: {only_a}, only in b: {only_b}")
    if not a:
        raise EmptyCorpus("no scores to compare")
    ids = sorted(a)
    va = np.array([a[i].hes_rel for i in ids])
    vb = np.array([b[i].hes_rel for i in ids])
    if ids == [ids[0]]:
        spearman = float("nan")
    else:
        spearman = float(sstats.spearmanr(va, vb).statistic)

    def top_ids(by: Mapping[str, SampleScore]) -> set[str]:
        m = top_fraction_count(ratio, len(ids))
        ranked = sorted(ids, key=lambda i: (-by[i].hes_rel, i))
        return set(ranked[:m])

    ta, tb = top_ids(a), top_ids(b)
    overlap = len(ta & tb) / len(ta | tb)
    return AgreementReport(
        spearman=spearman,
        overlap_at_ratio=overlap,
        ratio=ratio,
        n_samples=len(ids),
    )
