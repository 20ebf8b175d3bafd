"""In-process binding of the scoring/selection core for training pipelines.

Four entry points — :func:`score`, :func:`select_sft`, :func:`select_rft`,
and :func:`rl_batch` — accept either file paths or native mappings shaped
exactly like the toolkit's wire formats, and return native mappings shaped
like the corresponding CLI outputs. There is no logic here beyond
marshaling: every computation is delegated to ``hes_toolkit``, so binding
results are value-identical to CLI results on the same inputs.

Core errors propagate as ``hes_toolkit`` exceptions; each carries a
stable ``code`` attribute (e.g. ``"SchemaViolation"``) for callers that
dispatch on error kind rather than Python type.
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Iterable, Mapping

from hes_toolkit import corpus_io, rl_sampler, selection
from hes_toolkit.corpus_io import SampleRecord, file_digest, record_from_dict
from hes_toolkit.errors import MissingCorrectLabel
from hes_toolkit.metrics import MetricConfig, SampleScore, score_sample

__all__ = ["score", "select_sft", "select_rft", "rl_batch"]

PathLike = str | Path


def _is_path(value: Any) -> bool:
    return isinstance(value, (str, Path))


def _load_records(records: PathLike | Iterable[Mapping[str, Any]]) -> list[SampleRecord]:
    if _is_path(records):
        return list(corpus_io.read_corpus(records))
    return [record_from_dict(obj, line_no=i + 1) for i, obj in enumerate(records)]


def _load_scores(scores: PathLike | Iterable[Mapping[str, Any]]) -> tuple[list[SampleScore], str | None]:
    if _is_path(scores):
        return list(corpus_io.read_scores(scores)), file_digest(scores)
    return [corpus_io.score_from_dict(obj, line_no=i + 1) for i, obj in enumerate(scores)], None


def score(
    records: PathLike | Iterable[Mapping[str, Any]],
    p: float = 0.005,
    tau: float = 1.6,
    tail_mode: str = "lump",
    include_indices: bool = False,
) -> list[dict[str, Any]]:
    """Score records into score mappings, field for field as the CLI writes them."""
    cfg = MetricConfig(high_entropy_fraction=p, absolute_threshold=tau, tail_mode=tail_mode)
    cfg.validate()
    return [
        corpus_io.score_to_dict(score_sample(record, cfg), include_indices)
        for record in _load_records(records)
    ]


def select_sft(
    scores: PathLike | Iterable[Mapping[str, Any]],
    ratio: float | None = None,
    mode: str = "highest_hes",
    seed: int | None = None,
    budget: int | None = None,
    metric: str = "hes_rel",
    difficulty: Mapping[str, float] | None = None,
) -> dict[str, Any]:
    """Selection manifest mapping, equal to the CLI manifest for path inputs."""
    rows, digest = _load_scores(scores)
    spec = selection.SelectionSpec(mode=mode, ratio=ratio, budget=budget, metric=metric, seed=seed)
    manifest = selection.sft_select(rows, spec, difficulty=difficulty, corpus_digest=digest)
    return corpus_io.manifest_to_dict(manifest)


def select_rft(
    records: PathLike | Iterable[Mapping[str, Any]],
    scope: str = "per_query",
    k: int = 2,
    budget: int | None = None,
    scores: PathLike | Iterable[Mapping[str, Any]] | None = None,
    p: float = 0.005,
    tau: float = 1.6,
    tail_mode: str = "lump",
) -> dict[str, Any]:
    """Correct-pool selection manifest; ``records`` supplies the labels.

    When ``scores`` is omitted they are computed in memory with the given
    metric settings; pass the score file the CLI wrote to reproduce its
    manifest byte for byte (including the digest).
    """
    loaded = _load_records(records)
    correct = {r.sample_id: r.correct for r in loaded}
    if scores is None:
        cfg = MetricConfig(high_entropy_fraction=p, absolute_threshold=tau, tail_mode=tail_mode)
        cfg.validate()
        rows, digest = [score_sample(r, cfg) for r in loaded], None
    else:
        rows, digest = _load_scores(scores)
    if scope == "per_query":
        manifest = selection.rft_per_query_select(rows, correct, k, corpus_digest=digest)
    elif scope == "global":
        manifest = selection.rft_global_select(rows, correct, budget=budget, k=k, corpus_digest=digest)
    else:
        raise ValueError(f"scope must be per_query or global, got {scope!r}")
    return corpus_io.manifest_to_dict(manifest)


def rl_batch(
    group: Mapping[str, Any],
    strategy: str = "pos_high_neg_rand",
    fraction: float = 0.5,
    seed: int | None = None,
) -> dict[str, Any]:
    """Batch mapping for one rollout group, as one CLI batch line.

    ``group`` is ``{"query_id": ..., "trajectories": [{sample_id, reward,
    correct, hes_rel, n_tokens?, difficulty?}, ...]}``.
    """
    trajectories = []
    for t in group["trajectories"]:
        if t.get("correct") is None:
            raise MissingCorrectLabel(t.get("sample_id", "<unknown>"))
        trajectories.append(
            rl_sampler.Trajectory(
                sample_id=t["sample_id"],
                reward=float(t["reward"]),
                correct=bool(t["correct"]),
                hes_rel=float(t["hes_rel"]),
                n_tokens=int(t.get("n_tokens", 0)),
                difficulty=t.get("difficulty"),
            )
        )
    rollout = rl_sampler.RolloutGroup(query_id=group["query_id"], trajectories=trajectories)
    spec = rl_sampler.BatchSpec(strategy=strategy, fraction=fraction, seed=seed)
    spec.validate()
    batch, _, _ = rl_sampler.batch_for_group(rollout, spec)
    return batch
