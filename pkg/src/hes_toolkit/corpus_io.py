"""Streaming corpus, score, and manifest I/O.

All bulk data is line-delimited JSON: one record per line, so multi-GB
dumps stream with bounded memory. Corpus records are validated
structurally at ingest (every error carries its 1-based line number);
numeric validation of logprob payloads happens when tokens are actually
scored, where it is vectorized.

File digests are order-insensitive: the digest of a line-delimited file
is the sum (mod 2^256) of the SHA-256 of each line, so two files with the
same lines in different order — e.g. scores produced by different worker
counts or shard orders — carry the same digest.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Any, Iterable, Iterator

from .errors import (
    DigestMismatch,
    DuplicateSampleId,
    IoFailure,
    MalformedLine,
    SchemaViolation,
)
from .metrics import NOISE_TOLERANCE, TAIL_MODES, MetricConfig, SampleScore, TokenObservation

_DIGEST_MOD = 1 << 256


@dataclass(slots=True)
class SampleRecord:
    """A full reasoning trajectory with its labels."""

    sample_id: str
    query_id: str
    tokens: list[TokenObservation]
    correct: bool | None = None
    difficulty: float | None = None
    reward: float | None = None
    extras: dict[str, Any] = field(default_factory=dict)
    line_no: int | None = None


@dataclass
class SelectionManifest:
    """Audited output of a selection run.

    ``selected`` preserves the strategy's admission order; ``params``
    records every knob that shaped the run; ``corpus_digest`` is the
    digest of the score file the selection was computed from.
    """

    strategy: str
    params: dict[str, Any]
    selected: list[str]
    rejected_count: int
    threshold: float | None = None
    corpus_digest: str | None = None
    seed: int | None = None


@dataclass
class ReadStats:
    """Counters a corpus read accumulates (clamped negative entropies)."""

    clamped_tokens: int = 0


_RECORD_KEYS = frozenset(
    {"sample_id", "query_id", "correct", "difficulty", "reward", "tokens"}
)


def _parse_envelope(obj: Any, line_no: int | None) -> tuple[str, str, bool | None, float | None, float | None, list]:
    """Validate everything but the token payloads."""
    if not isinstance(obj, dict):
        raise SchemaViolation(line_no, "$", "record is not an object")
    sample_id = obj.get("sample_id")
    if not isinstance(sample_id, str) or not sample_id:
        raise SchemaViolation(line_no, "sample_id", "missing or not a string")
    query_id = obj.get("query_id")
    if not isinstance(query_id, str) or not query_id:
        raise SchemaViolation(line_no, "query_id", "missing or not a string")
    correct = obj.get("correct")
    if correct is not None and not isinstance(correct, bool):
        raise SchemaViolation(line_no, "correct", "must be a boolean or null")
    difficulty = obj.get("difficulty")
    if difficulty is not None:
        if not isinstance(difficulty, (int, float)) or isinstance(difficulty, bool):
            raise SchemaViolation(line_no, "difficulty", "must be a number or null")
        difficulty = float(difficulty)
        if math.isnan(difficulty) or not 0.0 <= difficulty <= 1.0:
            raise SchemaViolation(line_no, "difficulty", f"must be in [0, 1], got {difficulty}")
    reward = obj.get("reward")
    if reward is not None:
        if not isinstance(reward, (int, float)) or isinstance(reward, bool):
            raise SchemaViolation(line_no, "reward", "must be a number or null")
        reward = float(reward)
        if not math.isfinite(reward):
            raise SchemaViolation(line_no, "reward", f"must be finite, got {reward}")
    raw_tokens = obj.get("tokens")
    if not isinstance(raw_tokens, list) or not raw_tokens:
        raise SchemaViolation(line_no, "tokens", "must be a non-empty array")
    return sample_id, query_id, correct, difficulty, reward, raw_tokens


def record_from_dict(obj: Any, line_no: int | None = None, stats: ReadStats | None = None) -> SampleRecord:
    """Validate one corpus-schema mapping into a SampleRecord.

    The single validation path for file reads, worker pools, and
    in-process bindings; ``line_no`` is attached to errors when given.
    """
    sample_id, query_id, correct, difficulty, reward, raw_tokens = _parse_envelope(obj, line_no)

    tokens: list[TokenObservation] = []
    clamped = 0
    for i, tok in enumerate(raw_tokens):
        if not isinstance(tok, dict):
            raise SchemaViolation(line_no, f"tokens[{i}]", "token is not an object")
        entropy = tok.get("entropy")
        top_logprobs = tok.get("top_logprobs")
        has_entropy = entropy is not None
        has_logprobs = bool(top_logprobs)
        if has_entropy == has_logprobs:
            which = "both" if has_entropy else "neither"
            raise SchemaViolation(
                line_no, f"tokens[{i}]", f"{which} of entropy and top_logprobs present"
            )
        if has_entropy:
            if not isinstance(entropy, (int, float)) or isinstance(entropy, bool):
                raise SchemaViolation(line_no, f"tokens[{i}].entropy", "must be a number")
            entropy = float(entropy)
            if not math.isfinite(entropy) or entropy < -NOISE_TOLERANCE:
                raise SchemaViolation(
                    line_no, f"tokens[{i}].entropy", f"must be finite and >= 0, got {entropy}"
                )
            if entropy < 0.0:
                entropy = 0.0
                clamped += 1
        elif not isinstance(top_logprobs, list):
            raise SchemaViolation(line_no, f"tokens[{i}].top_logprobs", "must be an array")
        tokens.append(
            TokenObservation(
                token_text=tok.get("text"),
                token_id=tok.get("id"),
                entropy=entropy,
                top_logprobs=top_logprobs,
            )
        )
    if clamped and stats is not None:
        stats.clamped_tokens += clamped

    extras = {k: v for k, v in obj.items() if k not in _RECORD_KEYS}
    return SampleRecord(
        sample_id=sample_id,
        query_id=query_id,
        tokens=tokens,
        correct=correct,
        difficulty=difficulty,
        reward=reward,
        extras=extras,
        line_no=line_no,
    )


def _iter_lines(source: str | Path | IO[str]) -> Iterator[tuple[int, str]]:
    if isinstance(source, (str, Path)):
        try:
            with open(source, "r", encoding="utf-8") as fh:
                for line_no, line in enumerate(fh, start=1):
                    yield line_no, line
        except OSError as err:
            raise IoFailure(str(err)) from err
    else:
        for line_no, line in enumerate(source, start=1):
            yield line_no, line


def read_corpus(
    source: str | Path | IO[str],
    stats: ReadStats | None = None,
) -> Iterator[SampleRecord]:
    """Stream validated records from a corpus file or text stream.

    Records are yielded in file order; memory stays bounded by one record
    plus the set of sample_ids seen so far (kept for duplicate detection).
    Blank lines are skipped. Raises on the first invalid line.
    """
    seen: set[str] = set()
    for line_no, line in _iter_lines(source):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise MalformedLine(line_no, err.msg) from None
        record = record_from_dict(obj, line_no, stats)
        if record.sample_id in seen:
            raise DuplicateSampleId(record.sample_id, line_no)
        seen.add(record.sample_id)
        yield record


def _token_to_dict(tok: TokenObservation) -> dict[str, Any]:
    out: dict[str, Any] = {}
    if tok.token_id is not None:
        out["id"] = tok.token_id
    if tok.token_text is not None:
        out["text"] = tok.token_text
    if tok.entropy is not None:
        out["entropy"] = tok.entropy
    if tok.top_logprobs is not None:
        out["top_logprobs"] = [[t, lp] for t, lp in tok.top_logprobs]
    return out


def record_to_dict(record: SampleRecord) -> dict[str, Any]:
    """Corpus-schema dict for one record (extras merged, None labels omitted)."""
    out: dict[str, Any] = {"sample_id": record.sample_id, "query_id": record.query_id}
    if record.correct is not None:
        out["correct"] = record.correct
    if record.difficulty is not None:
        out["difficulty"] = record.difficulty
    if record.reward is not None:
        out["reward"] = record.reward
    out["tokens"] = [_token_to_dict(t) for t in record.tokens]
    for k, v in record.extras.items():
        out.setdefault(k, v)
    return out


def write_corpus(records: Iterable[SampleRecord], path: str | Path) -> int:
    """Write records as line-delimited JSON; returns the count written."""
    count = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for record in records:
                fh.write(json.dumps(record_to_dict(record), separators=(",", ":")))
                fh.write("\n")
                count += 1
    except OSError as err:
        raise IoFailure(str(err)) from err
    return count


def score_to_dict(score: SampleScore, include_indices: bool = False) -> dict[str, Any]:
    """Score-line dict with fixed field order."""
    out: dict[str, Any] = {
        "sample_id": score.sample_id,
        "query_id": score.query_id,
        "n_tokens": score.n_tokens,
        "es": score.es,
        "avg_e": score.avg_e,
        "hes_rel": score.hes_rel,
        "hes_abs": score.hes_abs,
        "avg_he": score.avg_he,
        "high_count": score.high_count,
    }
    if include_indices and score.high_indices is not None:
        out["high_indices"] = score.high_indices
    out["config"] = {
        "p": score.config.high_entropy_fraction,
        "tau": score.config.absolute_threshold,
        "tail_mode": score.config.tail_mode,
    }
    return out


def score_line(score: SampleScore, include_indices: bool = False) -> str:
    return json.dumps(score_to_dict(score, include_indices), separators=(",", ":"))


def write_scores(
    scores: Iterable[SampleScore], path: str | Path, include_indices: bool = False
) -> int:
    """Write scores as line-delimited JSON; returns the count written."""
    count = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for score in scores:
                fh.write(score_line(score, include_indices))
                fh.write("\n")
                count += 1
    except OSError as err:
        raise IoFailure(str(err)) from err
    return count


def score_from_dict(obj: Any, line_no: int | None = None) -> SampleScore:
    if not isinstance(obj, dict):
        raise SchemaViolation(line_no, "$", "score line is not an object")
    try:
        cfg_raw = obj.get("config") or {}
        cfg = MetricConfig(
            high_entropy_fraction=float(cfg_raw.get("p", 0.005)),
            absolute_threshold=float(cfg_raw.get("tau", 1.6)),
            tail_mode=str(cfg_raw.get("tail_mode", "lump")),
        )
        if cfg.tail_mode not in TAIL_MODES:
            raise SchemaViolation(line_no, "config.tail_mode", cfg.tail_mode)
        indices = obj.get("high_indices")
        return SampleScore(
            sample_id=obj["sample_id"],
            query_id=obj["query_id"],
            n_tokens=int(obj["n_tokens"]),
            es=float(obj["es"]),
            avg_e=float(obj["avg_e"]),
            hes_rel=float(obj["hes_rel"]),
            hes_abs=float(obj["hes_abs"]),
            avg_he=float(obj["avg_he"]),
            high_count=int(obj["high_count"]),
            high_indices=None if indices is None else [int(i) for i in indices],
            config=cfg,
        )
    except KeyError as err:
        raise SchemaViolation(line_no, str(err.args[0]), "missing score field") from None
    except (TypeError, ValueError) as err:
        raise SchemaViolation(line_no, "$", str(err)) from None


def read_scores(source: str | Path | IO[str]) -> Iterator[SampleScore]:
    """Stream scores back from a score file; duplicate ids are an error."""
    seen: set[str] = set()
    for line_no, line in _iter_lines(source):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as err:
            raise MalformedLine(line_no, err.msg) from None
        score = score_from_dict(obj, line_no)
        if score.sample_id in seen:
            raise DuplicateSampleId(score.sample_id, line_no)
        seen.add(score.sample_id)
        yield score


def file_digest(path: str | Path) -> str:
    """Order-insensitive content digest of a line-delimited file.

    Sum of per-line SHA-256 values mod 2^256, over lines with trailing
    newlines stripped; blank lines are ignored. Permuting lines leaves
    the digest unchanged; changing any line changes it.
    """
    total = 0
    try:
        with open(path, "rb") as fh:
            for raw in fh:
                line = raw.rstrip(b"\r\n")
                if not line:
                    continue
                total = (total + int.from_bytes(hashlib.sha256(line).digest(), "big")) % _DIGEST_MOD
    except OSError as err:
        raise IoFailure(str(err)) from err
    return f"sha256ms:{total:064x}"


def check_digest(expected: str, path: str | Path) -> None:
    """Raise DigestMismatch unless ``path`` hashes to ``expected``."""
    actual = file_digest(path)
    if actual != expected:
        raise DigestMismatch(expected, actual)


def manifest_to_dict(manifest: SelectionManifest) -> dict[str, Any]:
    return {
        "strategy": manifest.strategy,
        "params": manifest.params,
        "threshold": manifest.threshold,
        "selected": manifest.selected,
        "rejected_count": manifest.rejected_count,
        "corpus_digest": manifest.corpus_digest,
        "seed": manifest.seed,
    }


def write_manifest(manifest: SelectionManifest, path: str | Path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(manifest_to_dict(manifest), fh, indent=2)
            fh.write("\n")
    except OSError as err:
        raise IoFailure(str(err)) from err


def read_manifest(path: str | Path) -> SelectionManifest:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            obj = json.load(fh)
    except OSError as err:
        raise IoFailure(str(err)) from err
    except json.JSONDecodeError as err:
        raise MalformedLine(err.lineno, err.msg) from None
    if not isinstance(obj, dict):
        raise SchemaViolation(None, "$", "manifest is not an object")
    try:
        return SelectionManifest(
            strategy=obj["strategy"],
            params=dict(obj["params"]),
            selected=list(obj["selected"]),
            rejected_count=int(obj["rejected_count"]),
            threshold=obj.get("threshold"),
            corpus_digest=obj.get("corpus_digest"),
            seed=obj.get("seed"),
        )
    except KeyError as err:
        raise SchemaViolation(None, str(err.args[0]), "missing manifest field") from None
