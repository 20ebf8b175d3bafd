"""Seeded synthetic corpora with known ground truth.

The generator plants entropy "spikes" strictly above the base
distribution's support, so membership of the spiked positions in the
high-entropy set is analytically certain and the emitted ledger can act
as an oracle for the scoring pipeline rather than an estimate of it.

Generation is one deterministic stream per seed: the same profile always
produces byte-identical corpora. For sharded generation, derive one
profile per shard with ``numpy.random.default_rng((seed, shard_index))``
semantics by giving each shard profile seed ``(seed, shard_index)``
hashed into an int — the toolkit itself always generates single-stream.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .corpus_io import SampleRecord, write_corpus
from .errors import InvalidProfile
from .metrics import TokenObservation, top_fraction_count

BASE_KINDS = ("constant", "uniform", "exponential")


@dataclass
class GeneratorProfile:
    """Controls of the synthetic corpus generator.

    ``base`` picks the per-token base entropy distribution:
    ``{"kind": "constant", "value": v}``, ``{"kind": "uniform", "low": a,
    "high": b}``, or ``{"kind": "exponential", "rate": r}``. Spikes
    (``spike_count`` per correct sample, magnitudes uniform in
    ``[spike_low, spike_high]``) replace base values at random positions
    and must lie strictly above the base support; incorrect samples draw
    ``incorrect_spike_factor`` times as many spikes and
    ``incorrect_length_factor`` times as many tokens. A per-sample scale
    factor uniform in ``1 +- base_scale_jitter`` multiplies base values,
    mimicking samples whose overall confidence differs.

    With ``score_p`` set (entropy format only) the ledger carries the
    expected high-entropy indices and their sum at that fraction.
    """

    seed: int = 0
    n_queries: int = 10
    candidates_per_query: int = 1
    length_min: int = 50
    length_max: int = 200
    base: dict[str, Any] = field(default_factory=lambda: {"kind": "uniform", "low": 0.0, "high": 0.5})
    base_scale_jitter: float = 0.0
    spike_count: int = 0
    spike_low: float = 2.0
    spike_high: float = 4.0
    spike_texts: list[str] | None = None
    p_correct: float = 1.0
    incorrect_spike_factor: float = 1.0
    incorrect_length_factor: float = 1.0
    token_format: str = "entropy"
    top_k: int = 5
    score_p: float | None = None

    def base_support_max(self) -> float | None:
        kind = self.base.get("kind")
        if kind == "constant":
            return float(self.base["value"]) * (1.0 + self.base_scale_jitter)
        if kind == "uniform":
            return float(self.base["high"]) * (1.0 + self.base_scale_jitter)
        return None  # exponential: unbounded

    def validate(self) -> None:
        def bad(msg: str) -> InvalidProfile:
            return InvalidProfile(msg)

        if self.n_queries < 1 or self.candidates_per_query < 1:
            raise bad("n_queries and candidates_per_query must be >= 1")
        if not 1 <= self.length_min <= self.length_max:
            raise bad(f"need 1 <= length_min <= length_max, got [{self.length_min}, {self.length_max}]")
        kind = self.base.get("kind")
        if kind not in BASE_KINDS:
            raise bad(f"base kind must be one of {BASE_KINDS}, got {kind!r}")
        if kind == "constant" and float(self.base.get("value", -1)) < 0:
            raise bad("constant base needs value >= 0")
        if kind == "uniform":
            lo, hi = float(self.base.get("low", -1)), float(self.base.get("high", -1))
            if not 0 <= lo <= hi:
                raise bad(f"uniform base needs 0 <= low <= high, got [{lo}, {hi}]")
        if kind == "exponential" and float(self.base.get("rate", 0)) <= 0:
            raise bad("exponential base needs rate > 0")
        if not 0.0 <= self.base_scale_jitter < 1.0:
            raise bad(f"base_scale_jitter must be in [0, 1), got {self.base_scale_jitter}")
        if self.spike_count < 0:
            raise bad("spike_count must be >= 0")
        if self.spike_count > 0:
            if not 0 < self.spike_low <= self.spike_high:
                raise bad(f"need 0 < spike_low <= spike_high, got [{self.spike_low}, {self.spike_high}]")
            support = self.base_support_max()
            if support is None:
                raise bad("spikes require a bounded base distribution (constant or uniform)")
            if self.spike_low <= support:
                raise bad(
                    f"spike_low {self.spike_low} must exceed the base support max {support} "
                    "so spike membership in the high-entropy set is certain"
                )
        if not 0.0 <= self.p_correct <= 1.0:
            raise bad(f"p_correct must be in [0, 1], got {self.p_correct}")
        if self.incorrect_spike_factor < 0:
            raise bad("incorrect_spike_factor must be >= 0")
        if self.incorrect_length_factor <= 0:
            raise bad("incorrect_length_factor must be > 0")
        if self.token_format not in ("entropy", "top_logprobs"):
            raise bad(f"token_format must be entropy or top_logprobs, got {self.token_format!r}")
        if self.token_format == "top_logprobs" and self.top_k < 2:
            raise bad("top_logprobs format needs top_k >= 2")
        if self.score_p is not None and not 0.0 < self.score_p <= 1.0:
            raise bad(f"score_p must be in (0, 1], got {self.score_p}")


def _base_values(profile: GeneratorProfile, rng: np.random.Generator, n: int) -> np.ndarray:
    kind = profile.base["kind"]
    if kind == "constant":
        return np.full(n, float(profile.base["value"]))
    if kind == "uniform":
        return rng.uniform(float(profile.base["low"]), float(profile.base["high"]), size=n)
    return rng.exponential(1.0 / float(profile.base["rate"]), size=n)


def _expected_high_set(e: np.ndarray, p: float) -> tuple[list[int], float]:
    """Top-fraction cut computed from the plan, not the scoring code."""
    n = int(e.size)
    m = top_fraction_count(p, n)
    ranked = sorted(range(n), key=lambda i: (-e[i], i))
    idx = sorted(ranked[:m])
    return idx, float(e[idx].sum())


def _logprob_tokens(
    e_is_spike: np.ndarray, rng: np.random.Generator, top_k: int, texts: list[str]
) -> list[TokenObservation]:
    """Top-K logprob payloads: peaked rows for base tokens, flat for spikes."""
    n = e_is_spike.size
    n_spike = int(e_is_spike.sum())
    probs = np.empty((n, top_k))
    # base rows: one dominant probability, the rest split evenly, a little
    # mass left for the tail
    p0 = rng.uniform(0.95, 0.995, size=n - n_spike)
    base_rows = np.empty((n - n_spike, top_k))
    base_rows[:, 0] = p0
    base_rows[:, 1:] = ((1.0 - p0) * 0.9 / (top_k - 1))[:, None]
    probs[~e_is_spike] = base_rows
    # spike rows: near-uniform over the top K
    share = rng.uniform(0.90, 0.98, size=n_spike) / top_k
    probs[e_is_spike] = np.repeat(share[:, None], top_k, axis=1)
    rows = np.log(probs).tolist()
    names = [f"tok{j:02d}" for j in range(top_k)]
    return [
        TokenObservation(token_text=texts[i], top_logprobs=list(zip(names, rows[i])))
        for i in range(n)
    ]


def generate(profile: GeneratorProfile) -> Iterator[tuple[SampleRecord, dict[str, Any]]]:
    """Yield (record, ledger entry) pairs, deterministically under the seed."""
    profile.validate()
    rng = np.random.default_rng(profile.seed)
    spike_cycle = 0
    for q in range(profile.n_queries):
        query_id = f"q{q:06d}"
        difficulty = float(rng.uniform(0.0, 1.0))
        for c in range(profile.candidates_per_query):
            sample_id = f"{query_id}_c{c:03d}"
            correct = bool(rng.random() < profile.p_correct)
            n = int(rng.integers(profile.length_min, profile.length_max + 1))
            if not correct and profile.incorrect_length_factor != 1.0:
                n = max(1, int(round(n * profile.incorrect_length_factor)))

            e = _base_values(profile, rng, n)
            if profile.base_scale_jitter > 0.0:
                e = e * rng.uniform(1.0 - profile.base_scale_jitter, 1.0 + profile.base_scale_jitter)

            count = profile.spike_count
            if not correct:
                count = int(round(count * profile.incorrect_spike_factor))
            count = min(count, n)
            if count > 0:
                positions = np.sort(rng.choice(n, size=count, replace=False))
                magnitudes = rng.uniform(profile.spike_low, profile.spike_high, size=count)
                e[positions] = magnitudes
            else:
                positions = np.empty(0, dtype=int)
                magnitudes = np.empty(0)

            texts = [f"w{i % 101}" for i in range(n)]
            if profile.spike_texts:
                for pos in positions:
                    texts[int(pos)] = profile.spike_texts[spike_cycle % len(profile.spike_texts)]
                    spike_cycle += 1

            if profile.token_format == "entropy":
                tokens = [
                    TokenObservation(token_text=texts[i], entropy=float(e[i])) for i in range(n)
                ]
            else:
                is_spike = np.zeros(n, dtype=bool)
                is_spike[positions] = True
                tokens = _logprob_tokens(is_spike, rng, profile.top_k, texts)

            record = SampleRecord(
                sample_id=sample_id,
                query_id=query_id,
                tokens=tokens,
                correct=correct,
                difficulty=difficulty,
                reward=1.0 if correct else 0.0,
            )
            entry: dict[str, Any] = {
                "sample_id": sample_id,
                "query_id": query_id,
                "correct": correct,
                "n_tokens": n,
                "spike_positions": [int(i) for i in positions],
                "spike_magnitudes": [float(v) for v in magnitudes],
            }
            if profile.score_p is not None and profile.token_format == "entropy":
                idx, hes = _expected_high_set(e, profile.score_p)
                entry["expected_high_indices"] = idx
                entry["expected_hes_rel"] = hes
            yield record, entry


def write_synth_corpus(
    profile: GeneratorProfile,
    corpus_path: str | Path,
    ledger_path: str | Path | None = None,
) -> tuple[int, int]:
    """Stream a generated corpus (and optional ledger) to disk.

    Returns (records written, tokens written).
    """
    import json

    n_records = 0
    n_tokens = 0
    ledger_fh = open(ledger_path, "w", encoding="utf-8") if ledger_path else None
    try:
        def _stream() -> Iterator[SampleRecord]:
            nonlocal n_records, n_tokens
            for record, entry in generate(profile):
                n_records += 1
                n_tokens += len(record.tokens)
                if ledger_fh is not None:
                    ledger_fh.write(json.dumps(entry, separators=(",", ":")))
                    ledger_fh.write("\n")
                yield record

        write_corpus(_stream(), corpus_path)
    finally:
        if ledger_fh is not None:
            ledger_fh.close()
    return n_records, n_tokens
