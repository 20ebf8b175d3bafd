"""Per-token entropy and the per-sample metric family.

A reasoning trace is scored from its token-level uncertainty: each token
carries either a precomputed entropy (nats) or the top-K logprobs of the
distribution it was sampled from. From the resulting entropy sequence we
derive five scalars:

================  ====================================================
``es``            total entropy, sum of all token entropies
``avg_e``         mean entropy, ``es / n_tokens``
``hes_rel``       sum of entropies over the top-``p`` fraction of
                  tokens ranked by entropy (the high-entropy set)
``hes_abs``       sum of entropies over tokens strictly above a fixed
                  threshold ``tau``
``avg_he``        mean entropy of the high-entropy set,
                  ``hes_rel / high_count``
================  ====================================================

All logarithms are natural; entropies are in nats. All functions here
are pure and safe to call from any number of workers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Iterable, Sequence

import numpy as np

from .errors import EmptyDistribution, EmptySequence, MassExceedsOne, SchemaViolation

if TYPE_CHECKING:
    from .corpus_io import SampleRecord

# Probability mass may exceed 1 by at most this much (float noise from
# upstream softmax dumps).
MASS_TOLERANCE = 1e-6
# Residual tail mass below this is treated as zero.
TAIL_EPSILON = 1e-12
# Entropy values in [-NOISE_TOLERANCE, 0) are clamped to 0; anything more
# negative is rejected.
NOISE_TOLERANCE = 1e-6

METRIC_NAMES = ("hes_rel", "hes_abs", "es", "avg_e", "avg_he")

TAIL_MODES = ("lump", "ignore")


@dataclass
class TokenObservation:
    """One generated token's uncertainty evidence.

    Exactly one of ``entropy`` or ``top_logprobs`` must be usable: either
    a precomputed entropy in nats, or a non-empty list of
    ``(token, logprob)`` pairs from the generation-time distribution.
    """

    token_text: str | None = None
    token_id: int | None = None
    entropy: float | None = None
    top_logprobs: list[tuple[str, float]] | None = None


@dataclass
class MetricConfig:
    """Knobs of the metric family.

    ``high_entropy_fraction`` is the top fraction of tokens (by entropy)
    summed for the relative metric; ``absolute_threshold`` is the fixed
    cutoff in nats for the absolute metric; ``tail_mode`` controls what
    happens to residual probability mass when only top-K logprobs are
    available ("lump" folds it into one pseudo-symbol, "ignore" drops it).
    """

    high_entropy_fraction: float = 0.005
    absolute_threshold: float = 1.6
    tail_mode: str = "lump"

    def validate(self) -> None:
        if not 0.0 < self.high_entropy_fraction <= 1.0:
            raise ValueError(f"high_entropy_fraction must be in (0, 1], got {self.high_entropy_fraction}")
        if self.absolute_threshold < 0.0:
            raise ValueError(f"absolute_threshold must be >= 0, got {self.absolute_threshold}")
        if self.tail_mode not in TAIL_MODES:
            raise ValueError(f"tail_mode must be one of {TAIL_MODES}, got {self.tail_mode!r}")


@dataclass
class SampleScore:
    """The computed metric set for one sample."""

    sample_id: str
    query_id: str
    n_tokens: int
    es: float
    avg_e: float
    hes_rel: float
    hes_abs: float
    avg_he: float
    high_count: int
    high_indices: list[int] | None
    config: MetricConfig = field(default_factory=MetricConfig)

    def metric(self, name: str) -> float:
        """Look up one of the five scalar metrics by name."""
        if name not in METRIC_NAMES:
            raise ValueError(f"unknown metric {name!r}; expected one of {METRIC_NAMES}")
        return getattr(self, name)


def ceil_fraction(fraction: float, total: int) -> int:
    """``ceil(fraction * total)`` robust to float representation noise.

    Products within 1e-9 relative of an integer are snapped to that
    integer first, so e.g. 0.005 * 200 counts as exactly 1 even though
    the float product may land an ulp above it.
    """
    t = fraction * total
    nearest = round(t)
    if abs(t - nearest) <= 1e-9 * max(1.0, abs(t)):
        return int(nearest)
    return math.ceil(t)


def top_fraction_count(fraction: float, total: int) -> int:
    """How many items a top-``fraction`` cut keeps out of ``total``:
    ``min(total, max(1, ceil(fraction * total)))``."""
    if total <= 0:
        raise ValueError("total must be positive")
    return min(total, max(1, ceil_fraction(fraction, total)))


def _entropy_rows(logprob_matrix: np.ndarray, tail_mode: str) -> tuple[np.ndarray, np.ndarray]:
    """Entropy of each row of a (n, K) matrix of logprobs, plus row mass.

    Zero-probability entries contribute 0 (the 0*log 0 convention); in
    lump mode residual mass q = 1 - sum(p) above TAIL_EPSILON adds
    -q*log(q). Mass validation is the caller's job.
    """
    probs = np.exp(logprob_matrix)
    mass = probs.sum(axis=1)
    with np.errstate(invalid="ignore"):
        # 0 * -inf from a zero-probability entry is masked to 0.
        terms = np.where(probs > 0.0, probs * logprob_matrix, 0.0)
    entropy = -terms.sum(axis=1)
    if tail_mode == "lump":
        tail = 1.0 - mass
        lumped = tail > TAIL_EPSILON
        if lumped.any():
            q = tail[lumped]
            entropy[lumped] -= q * np.log(q)
    return np.maximum(entropy, 0.0), mass


def compute_token_entropy(obs: TokenObservation, tail_mode: str = "lump") -> float:
    """Entropy in nats of a single token observation.

    A precomputed ``entropy`` field is returned verbatim (tiny negative
    float noise is clamped to 0). Otherwise the entropy is
    ``-sum(p * log p)`` over the top-K probabilities, with the residual
    tail mass lumped into one pseudo-symbol or ignored per ``tail_mode``.
    """
    if tail_mode not in TAIL_MODES:
        raise ValueError(f"tail_mode must be one of {TAIL_MODES}, got {tail_mode!r}")
    if obs.entropy is not None:
        if not math.isfinite(obs.entropy) or obs.entropy < -NOISE_TOLERANCE:
            raise SchemaViolation(None, "entropy", f"must be finite and >= 0, got {obs.entropy}")
        return max(float(obs.entropy), 0.0)
    if not obs.top_logprobs:
        raise EmptyDistribution("token has neither entropy nor top_logprobs")
    lp = np.array([pair[1] for pair in obs.top_logprobs], dtype=np.float64).reshape(1, -1)
    entropy, mass = _entropy_rows(lp, tail_mode)
    # negated comparison also catches nan/inf mass from bad logprobs
    if not mass[0] <= 1.0 + MASS_TOLERANCE:
        raise MassExceedsOne(f"probability mass {mass[0]:.9f} exceeds 1")
    return float(entropy[0])


def token_entropies(tokens: Sequence[TokenObservation], tail_mode: str = "lump") -> np.ndarray:
    """Entropies of a token sequence as a float64 array.

    Uses vectorized paths when the sequence is homogeneous (all direct
    entropies, or all top-K logprob lists of equal length); falls back to
    per-token computation otherwise. Errors carry the token position.
    """
    n = len(tokens)
    if n == 0:
        raise EmptySequence("no tokens to score")

    if all(t.entropy is not None for t in tokens):
        e = np.fromiter((t.entropy for t in tokens), dtype=np.float64, count=n)
        finite = np.isfinite(e)
        if not finite.all():
            pos = int(np.argmin(finite))
            raise SchemaViolation(
                None, f"tokens[{pos}].entropy", f"must be finite, got {e[pos]}"
            )
        worst = e.min()
        if worst < -NOISE_TOLERANCE:
            pos = int(np.argmin(e))
            raise SchemaViolation(None, f"tokens[{pos}].entropy", f"negative entropy {worst}")
        return np.maximum(e, 0.0)

    if all(t.top_logprobs for t in tokens):
        k = len(tokens[0].top_logprobs)
        if all(len(t.top_logprobs) == k for t in tokens):
            lp = np.fromiter(
                (pair[1] for t in tokens for pair in t.top_logprobs),
                dtype=np.float64,
                count=n * k,
            ).reshape(n, k)
            entropy, mass = _entropy_rows(lp, tail_mode)
            # negated comparison also catches nan/inf mass from bad logprobs
            bad = ~(mass <= 1.0 + MASS_TOLERANCE)
            if bad.any():
                pos = int(np.argmax(bad))
                raise MassExceedsOne(f"token {pos}: probability mass {mass[pos]:.9f} exceeds 1")
            return entropy

    out = np.empty(n, dtype=np.float64)
    for i, t in enumerate(tokens):
        try:
            out[i] = compute_token_entropy(t, tail_mode)
        except (EmptyDistribution, MassExceedsOne, SchemaViolation) as err:
            wrapped = type(err).__new__(type(err))
            Exception.__init__(wrapped, f"token {i}: {err}")
            wrapped.token_index = i
            raise wrapped from None
    return out


def identify_high_entropy_tokens(entropies: Iterable[float], p: float) -> list[int]:
    """Positions of the top-``p`` fraction of tokens by entropy.

    Returns exactly ``top_fraction_count(p, n)`` positions, sorted
    ascending. Every returned position's entropy is >= every excluded
    position's; ties at the cut go to the earliest position.
    """
    e = np.asarray(entropies, dtype=np.float64)
    if e.size == 0:
        raise EmptySequence("no entropies to rank")
    if not 0.0 < p <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p}")
    m = top_fraction_count(p, e.size)
    # Stable sort on the negated values: equal entropies keep their
    # original (ascending-position) order, which is exactly the tie rule.
    order = np.argsort(-e, kind="stable")
    top = np.sort(order[:m])
    return [int(i) for i in top]


def score_from_entropies(
    sample_id: str, query_id: str, entropies: np.ndarray, cfg: MetricConfig
) -> SampleScore:
    """Build the metric set from an already-computed entropy array."""
    e = entropies
    n = int(e.size)
    es = float(e.sum())
    m = top_fraction_count(cfg.high_entropy_fraction, n)
    order = np.argsort(-e, kind="stable")
    high = np.sort(order[:m])
    hes_rel = float(e[high].sum())
    hes_abs = float(e[e > cfg.absolute_threshold].sum())
    return SampleScore(
        sample_id=sample_id,
        query_id=query_id,
        n_tokens=n,
        es=es,
        avg_e=es / n,
        hes_rel=hes_rel,
        hes_abs=hes_abs,
        avg_he=hes_rel / m,
        high_count=m,
        high_indices=[int(i) for i in high],
        config=cfg,
    )


def score_sample(record: "SampleRecord", config: MetricConfig | None = None) -> SampleScore:
    """Score one sample, producing the full metric set.

    ``es`` and ``avg_e`` cover every token; ``hes_rel``/``avg_he`` cover
    the top-``high_entropy_fraction`` set; ``hes_abs`` sums tokens whose
    entropy strictly exceeds ``absolute_threshold``.
    """
    cfg = config if config is not None else MetricConfig()
    cfg.validate()
    e = token_entropies(record.tokens, cfg.tail_mode)
    return score_from_entropies(record.sample_id, record.query_id, e, cfg)
