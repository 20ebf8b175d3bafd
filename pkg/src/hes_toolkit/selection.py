"""Subset selection over scored corpora.

Covers percentile selection for SFT (plus the random / length /
difficulty baselines), per-query and global-pool selection for rejection
fine-tuning, and length-stratified selection. Every operation returns a
:class:`~hes_toolkit.corpus_io.SelectionManifest` so runs are auditable
and reproducible.

Determinism: all orderings tie-break on ascending sample_id, and random
draws permute the id-sorted row list, so manifests are independent of
input record order.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .corpus_io import SelectionManifest
from .errors import DuplicateSampleId, EmptyCorpus, MissingCorrectLabel, MissingField
from .metrics import METRIC_NAMES, SampleScore, top_fraction_count

SELECTION_MODES = ("highest_hes", "lowest_hes", "random", "length", "difficulty")


@dataclass
class SelectionSpec:
    """What to select and how much of it.

    Exactly one of ``ratio`` (top fraction, in (0, 1]) or ``budget``
    (absolute count) must be set. ``metric`` names the scalar the
    highest/lowest modes rank by. ``seed`` is required by (and only used
    in) random mode.
    """

    mode: str = "highest_hes"
    ratio: float | None = None
    budget: int | None = None
    metric: str = "hes_rel"
    seed: int | None = None

    def validate(self) -> None:
        if self.mode not in SELECTION_MODES:
            raise ValueError(f"mode must be one of {SELECTION_MODES}, got {self.mode!r}")
        if (self.ratio is None) == (self.budget is None):
            raise ValueError("exactly one of ratio and budget must be set")
        if self.ratio is not None and not 0.0 < self.ratio <= 1.0:
            raise ValueError(f"ratio must be in (0, 1], got {self.ratio}")
        if self.budget is not None and self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")
        if self.metric not in METRIC_NAMES:
            raise ValueError(f"metric must be one of {METRIC_NAMES}, got {self.metric!r}")
        if self.mode == "random" and self.seed is None:
            raise ValueError("random mode requires a seed")

    def count(self, total: int) -> int:
        if self.budget is not None:
            return min(total, self.budget)
        return top_fraction_count(self.ratio, total)


@dataclass
class RftSpec:
    """Rejection fine-tuning selection scope and budgets.

    ``candidates_per_query`` is the upstream generation width K; when
    known, the per-query budget k may not exceed it.
    """

    scope: str = "per_query"
    k: int = 2
    candidates_per_query: int | None = None
    budget: int | None = None

    def validate(self) -> None:
        if self.scope not in ("per_query", "global"):
            raise ValueError(f"scope must be per_query or global, got {self.scope!r}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.candidates_per_query is not None and self.k > self.candidates_per_query:
            raise ValueError(
                f"k ({self.k}) cannot exceed candidates_per_query ({self.candidates_per_query})"
            )
        if self.budget is not None and self.budget < 0:
            raise ValueError(f"budget must be >= 0, got {self.budget}")


def _id_sorted(scores: Sequence[SampleScore]) -> list[SampleScore]:
    seen: set[str] = set()
    for s in scores:
        if s.sample_id in seen:
            raise DuplicateSampleId(s.sample_id)
        seen.add(s.sample_id)
    return sorted(scores, key=lambda s: s.sample_id)


def _ranking(
    rows: list[SampleScore],
    spec: SelectionSpec,
    difficulty: Mapping[str, float] | None,
) -> tuple[list[SampleScore], dict[str, Any]]:
    """Full admission ordering for a spec, plus mode-specific params."""
    extra: dict[str, Any] = {}
    if spec.mode == "highest_hes":
        ranked = sorted(rows, key=lambda s: (-s.metric(spec.metric), s.sample_id))
    elif spec.mode == "lowest_hes":
        ranked = sorted(rows, key=lambda s: (s.metric(spec.metric), s.sample_id))
    elif spec.mode == "length":
        ranked = sorted(rows, key=lambda s: (-s.n_tokens, s.sample_id))
    elif spec.mode == "difficulty":
        if difficulty is None:
            raise MissingField("difficulty", "difficulty")
        for s in rows:
            if difficulty.get(s.sample_id) is None:
                raise MissingField("difficulty", "difficulty", s.sample_id)
        median = statistics.median(difficulty[s.sample_id] for s in rows)
        extra["median_difficulty"] = median
        ranked = sorted(rows, key=lambda s: (abs(difficulty[s.sample_id] - median), s.sample_id))
    else:  # random
        rng = np.random.default_rng(spec.seed)
        perm = rng.permutation(len(rows))
        ranked = [rows[i] for i in perm]
    return ranked, extra


def sft_select(
    scores: Iterable[SampleScore],
    spec: SelectionSpec,
    difficulty: Mapping[str, float] | None = None,
    corpus_digest: str | None = None,
) -> SelectionManifest:
    """Select a subset of scored samples for supervised fine-tuning.

    ``highest_hes``/``lowest_hes`` take the largest/smallest by
    ``spec.metric``; ``length`` the longest by token count; ``random`` a
    seeded uniform draw; ``difficulty`` the samples nearest the corpus
    median difficulty. The kept count is ``min(M, max(1, ceil(ratio*M)))``
    or the absolute budget. ``threshold`` records the admission value of
    the last sample admitted (None for random mode).
    """
    spec.validate()
    rows = _id_sorted(list(scores))
    if not rows:
        raise EmptyCorpus("no scores to select from")
    m = spec.count(len(rows))
    ranked, extra = _ranking(rows, spec, difficulty)
    selected = ranked[:m]

    threshold: float | None = None
    if selected and spec.mode in ("highest_hes", "lowest_hes"):
        threshold = selected[-1].metric(spec.metric)
    elif selected and spec.mode == "length":
        threshold = float(selected[-1].n_tokens)
    elif selected and spec.mode == "difficulty":
        threshold = abs(difficulty[selected[-1].sample_id] - extra["median_difficulty"])

    params: dict[str, Any] = {"mode": spec.mode, "metric": spec.metric, "m": m, "total": len(rows)}
    if spec.ratio is not None:
        params["ratio"] = spec.ratio
    else:
        params["budget"] = spec.budget
    params.update(extra)
    return SelectionManifest(
        strategy=spec.mode,
        params=params,
        selected=[s.sample_id for s in selected],
        rejected_count=len(rows) - m,
        threshold=threshold,
        corpus_digest=corpus_digest,
        seed=spec.seed if spec.mode == "random" else None,
    )


def _require_labels(rows: list[SampleScore], correct: Mapping[str, bool | None]) -> None:
    for s in rows:
        if correct.get(s.sample_id) is None:
            raise MissingCorrectLabel(s.sample_id)


def derived_budget(
    rows_by_query: Mapping[str, list[SampleScore]],
    correct: Mapping[str, bool | None],
    k: int,
) -> int:
    """Total the per-query rule would keep: sum of min(k, |correct pool|)."""
    return sum(
        min(k, sum(1 for s in group if correct[s.sample_id]))
        for group in rows_by_query.values()
    )


def _group_by_query(rows: list[SampleScore]) -> dict[str, list[SampleScore]]:
    groups: dict[str, list[SampleScore]] = {}
    for s in rows:
        groups.setdefault(s.query_id, []).append(s)
    return dict(sorted(groups.items()))


def rft_per_query_select(
    scores: Iterable[SampleScore],
    correct: Mapping[str, bool | None],
    k: int,
    corpus_digest: str | None = None,
) -> SelectionManifest:
    """Keep the top-k correct responses per query, ranked by hes_rel.

    Queries with fewer than k correct responses contribute all of them;
    queries with none contribute nothing. The manifest records per-query
    kept counts and the derived total budget.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    rows = _id_sorted(list(scores))
    if not rows:
        raise EmptyCorpus("no scores to select from")
    _require_labels(rows, correct)
    groups = _group_by_query(rows)

    selected: list[str] = []
    per_query: dict[str, int] = {}
    for query_id, group in groups.items():
        pool = [s for s in group if correct[s.sample_id]]
        pool.sort(key=lambda s: (-s.hes_rel, s.sample_id))
        keep = pool[: min(k, len(pool))]
        per_query[query_id] = len(keep)
        selected.extend(s.sample_id for s in keep)

    budget = sum(per_query.values())
    return SelectionManifest(
        strategy="rft_per_query",
        params={"scope": "per_query", "k": k, "derived_budget": budget, "per_query_counts": per_query},
        selected=selected,
        rejected_count=len(rows) - len(selected),
        threshold=None,
        corpus_digest=corpus_digest,
        seed=None,
    )


def rft_global_select(
    scores: Iterable[SampleScore],
    correct: Mapping[str, bool | None],
    budget: int | None = None,
    k: int | None = None,
    corpus_digest: str | None = None,
) -> SelectionManifest:
    """Keep the top-N correct responses from the pooled corpus.

    When ``budget`` is omitted it defaults to what per-query selection
    with ``k`` would keep (so the two scopes match data volume).
    """
    rows = _id_sorted(list(scores))
    if not rows:
        raise EmptyCorpus("no scores to select from")
    _require_labels(rows, correct)
    if budget is None:
        if k is None:
            raise ValueError("either budget or k must be given")
        budget = derived_budget(_group_by_query(rows), correct, k)
    if budget < 0:
        raise ValueError(f"budget must be >= 0, got {budget}")

    pool = [s for s in rows if correct[s.sample_id]]
    pool.sort(key=lambda s: (-s.hes_rel, s.sample_id))
    keep = pool[: min(budget, len(pool))]
    params: dict[str, Any] = {"scope": "global", "budget": budget}
    if k is not None:
        params["k"] = k
    return SelectionManifest(
        strategy="rft_global",
        params=params,
        selected=[s.sample_id for s in keep],
        rejected_count=len(rows) - len(keep),
        threshold=keep[-1].hes_rel if keep else None,
        corpus_digest=corpus_digest,
        seed=None,
    )


def stratify_by_length(rows: list[SampleScore], groups: int) -> list[list[SampleScore]]:
    """Equal-count quantile strata by n_tokens, shortest stratum first.

    Rows are ordered by (n_tokens, sample_id) and cut into ``groups``
    contiguous chunks whose sizes differ by at most one (earlier strata
    take the remainder), so boundary ties land in the lower stratum in
    sample_id order.
    """
    if groups < 1:
        raise ValueError(f"groups must be >= 1, got {groups}")
    ordered = sorted(rows, key=lambda s: (s.n_tokens, s.sample_id))
    base, rem = divmod(len(ordered), groups)
    strata = []
    start = 0
    for i in range(groups):
        size = base + (1 if i < rem else 0)
        strata.append(ordered[start : start + size])
        start += size
    return strata


def stratified_select(
    scores: Iterable[SampleScore],
    groups: int,
    spec: SelectionSpec,
    difficulty: Mapping[str, float] | None = None,
    corpus_digest: str | None = None,
) -> list[tuple[str, SelectionManifest]]:
    """Run the same selection independently within each length stratum.

    Returns ``(label, manifest)`` pairs, label ``stratum0`` being the
    shortest. With groups=1 this degenerates to plain selection.
    """
    spec.validate()
    rows = _id_sorted(list(scores))
    if not rows:
        raise EmptyCorpus("no scores to select from")
    out: list[tuple[str, SelectionManifest]] = []
    for i, stratum in enumerate(stratify_by_length(rows, groups)):
        if not stratum:
            continue
        label = f"stratum{i}"
        manifest = sft_select(stratum, spec, difficulty=difficulty, corpus_digest=corpus_digest)
        manifest.strategy = f"stratified_{spec.mode}"
        manifest.params.update(
            {
                "stratum": label,
                "strata": groups,
                "n_tokens_min": stratum[0].n_tokens,
                "n_tokens_max": stratum[-1].n_tokens,
            }
        )
        out.append((label, manifest))
    return out
