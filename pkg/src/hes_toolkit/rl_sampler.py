"""RL batch construction from rollout groups.

Each query's rollouts are split into correct (positive) and incorrect
(negative) pools; a batch draws half its size from each pool using an
asymmetric pair of strategies (e.g. highest-scoring positives with random
negatives). Group-relative advantages are computed over the whole rollout
group: (r - mean) / population std, all-zero when every reward is equal.

Random draws are seeded per group from (seed, blake2b64(query_id)), so
groups are independent, order-insensitive, and stable under a fixed seed.
"""

from __future__ import annotations

import hashlib
import statistics
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import EmptyGroup, GroupTooSmall, MissingCorrectLabel, MissingField
from .metrics import ceil_fraction

BATCH_STRATEGIES = (
    "pos_high_neg_rand",
    "pos_rand_neg_rand",
    "pos_high_neg_low",
    "pos_rand_neg_low",
    "pos_low_neg_rand",
    "pos_length_neg_rand",
    "pos_difficulty_neg_rand",
    "full_batch",
)

# strategy -> (positive ordering, negative ordering)
_SIDES = {
    "pos_high_neg_rand": ("high", "rand"),
    "pos_rand_neg_rand": ("rand", "rand"),
    "pos_high_neg_low": ("high", "low"),
    "pos_rand_neg_low": ("rand", "low"),
    "pos_low_neg_rand": ("low", "rand"),
    "pos_length_neg_rand": ("length", "rand"),
    "pos_difficulty_neg_rand": ("difficulty", "rand"),
}


@dataclass(slots=True)
class Trajectory:
    """One rollout with its reward, label, and score fields."""

    sample_id: str
    reward: float
    correct: bool
    hes_rel: float
    n_tokens: int = 0
    difficulty: float | None = None


@dataclass
class RolloutGroup:
    """All rollouts generated for one query."""

    query_id: str
    trajectories: list[Trajectory]

    @property
    def size(self) -> int:
        return len(self.trajectories)

    def pools(self) -> tuple[list[Trajectory], list[Trajectory]]:
        """(correct pool, incorrect pool), each sorted by sample_id."""
        ordered = sorted(self.trajectories, key=lambda t: t.sample_id)
        return [t for t in ordered if t.correct], [t for t in ordered if not t.correct]


@dataclass
class BatchSpec:
    """Strategy, batch fraction, and seed for batch construction."""

    strategy: str = "pos_high_neg_rand"
    fraction: float = 0.5
    seed: int | None = None

    def needs_seed(self) -> bool:
        sides = _SIDES.get(self.strategy)
        return sides is not None and "rand" in sides

    def validate(self) -> None:
        if self.strategy not in BATCH_STRATEGIES:
            raise ValueError(f"strategy must be one of {BATCH_STRATEGIES}, got {self.strategy!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")
        if self.needs_seed() and self.seed is None:
            raise ValueError(f"strategy {self.strategy!r} draws randomly and requires a seed")


def target_batch_size(group_size: int, fraction: float) -> int:
    """ceil(fraction * G), at least 2, rounded up to even."""
    b = max(2, ceil_fraction(fraction, group_size))
    return b + (b % 2)


def _group_rng(seed: int | None, query_id: str) -> np.random.Generator:
    qhash = int.from_bytes(hashlib.blake2b(query_id.encode(), digest_size=8).digest(), "big")
    return np.random.default_rng((0 if seed is None else seed, qhash))


def _ordering(
    pool: list[Trajectory], kind: str, rng: np.random.Generator | None
) -> list[Trajectory]:
    if kind == "high":
        return sorted(pool, key=lambda t: (-t.hes_rel, t.sample_id))
    if kind == "low":
        return sorted(pool, key=lambda t: (t.hes_rel, t.sample_id))
    if kind == "length":
        return sorted(pool, key=lambda t: (-t.n_tokens, t.sample_id))
    if kind == "difficulty":
        for t in pool:
            if t.difficulty is None:
                raise MissingField("pos_difficulty", "difficulty", t.sample_id)
        if not pool:
            return []
        median = statistics.median(t.difficulty for t in pool)
        return sorted(pool, key=lambda t: (abs(t.difficulty - median), t.sample_id))
    # rand: permute the id-sorted pool so the draw ignores input order
    perm = rng.permutation(len(pool))
    return [pool[i] for i in perm]


def construct_batch(
    group: RolloutGroup, spec: BatchSpec
) -> tuple[list[Trajectory], list[Trajectory]]:
    """Pick the batch for one rollout group.

    The batch targets ``target_batch_size(G, fraction)`` members, half
    positive and half negative. A pool smaller than its quota is taken
    whole and the shortfall is backfilled from the other pool, continuing
    that pool's own ordering; if the whole group is smaller than the
    target, the whole group is returned. ``full_batch`` returns every
    trajectory.
    """
    spec.validate()
    if group.size == 0:
        raise EmptyGroup(f"query '{group.query_id}' has no trajectories")
    positives_pool, negatives_pool = group.pools()
    if spec.strategy == "full_batch":
        return positives_pool, negatives_pool

    b = target_batch_size(group.size, spec.fraction)
    want = b // 2
    rng = _group_rng(spec.seed, group.query_id) if spec.needs_seed() else None
    pos_kind, neg_kind = _SIDES[spec.strategy]
    # Positive side draws first so each side's picks are seed-stable.
    pos_order = _ordering(positives_pool, pos_kind, rng)
    neg_order = _ordering(negatives_pool, neg_kind, rng)

    p_take = min(want, len(pos_order))
    n_take = min(want, len(neg_order))
    deficit = b - p_take - n_take
    if deficit > 0:
        extra_n = min(deficit, len(neg_order) - n_take)
        n_take += extra_n
        deficit -= extra_n
        p_take += min(deficit, len(pos_order) - p_take)
    return pos_order[:p_take], neg_order[:n_take]


def group_advantage(rewards: Sequence[float]) -> list[float]:
    """Group-relative advantages: (r - mean) / population std.

    All-equal rewards give the all-zero vector instead of dividing by a
    (possibly noisy) zero spread.
    """
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise GroupTooSmall(f"need at least 2 rewards, got {r.size}")
    if r.max() == r.min():
        return [0.0] * int(r.size)
    centered = r - r.mean()
    return list(centered / np.sqrt(np.mean(centered * centered)))


def group_from_rows(
    query_id: str,
    rows: Iterable[tuple[str, float, bool | None, float, int, float | None]],
) -> RolloutGroup:
    """Build a group from (sample_id, reward, correct, hes_rel, n_tokens, difficulty) rows."""
    trajectories = []
    for sample_id, reward, correct, hes_rel, n_tokens, difficulty in rows:
        if correct is None:
            raise MissingCorrectLabel(sample_id)
        trajectories.append(
            Trajectory(
                sample_id=sample_id,
                reward=reward,
                correct=correct,
                hes_rel=hes_rel,
                n_tokens=n_tokens,
                difficulty=difficulty,
            )
        )
    return RolloutGroup(query_id=query_id, trajectories=trajectories)


@dataclass
class BatchReport:
    """Batches for every group plus run-level statistics."""

    batches: list[dict[str, Any]] = field(default_factory=list)
    errors: list[dict[str, str]] = field(default_factory=list)
    shortfall_groups: int = 0
    groups: int = 0

    positive_hes: list[float] = field(default_factory=list)
    negative_hes: list[float] = field(default_factory=list)
    advantages: list[float] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        def _mean(xs: list[float]) -> float | None:
            return float(np.mean(xs)) if xs else None

        adv = np.asarray(self.advantages) if self.advantages else np.zeros(0)
        return {
            "groups": self.groups,
            "batches": len(self.batches),
            "shortfall_groups": self.shortfall_groups,
            "mean_positive_hes_rel": _mean(self.positive_hes),
            "mean_negative_hes_rel": _mean(self.negative_hes),
            "advantage_mean": float(adv.mean()) if adv.size else None,
            "advantage_std": float(adv.std()) if adv.size else None,
            "errors": self.errors,
        }


def batch_for_group(
    group: RolloutGroup, spec: BatchSpec
) -> tuple[dict[str, Any], list[Trajectory], list[Trajectory]]:
    """Batch line for one group: the serializable dict plus the picks.

    Advantages are computed over the whole rollout group and reported for
    the batch members.
    """
    positives, negatives = construct_batch(group, spec)
    ordered = sorted(group.trajectories, key=lambda t: t.sample_id)
    adv = group_advantage([t.reward for t in ordered])
    adv_by_id = {t.sample_id: a for t, a in zip(ordered, adv)}
    members = positives + negatives
    batch = {
        "query_id": group.query_id,
        "strategy": spec.strategy,
        "seed": spec.seed,
        "positives": [t.sample_id for t in positives],
        "negatives": [t.sample_id for t in negatives],
        "advantages": {t.sample_id: adv_by_id[t.sample_id] for t in members},
    }
    return batch, positives, negatives


def batch_report(groups: Iterable[RolloutGroup], spec: BatchSpec) -> BatchReport:
    """Construct batches and advantages for a stream of groups.

    Per-group failures (empty or single-rollout groups) are collected in
    the report's error ledger instead of aborting the run.
    """
    spec.validate()
    report = BatchReport()
    for group in groups:
        report.groups += 1
        try:
            batch, positives, negatives = batch_for_group(group, spec)
        except (EmptyGroup, GroupTooSmall, MissingCorrectLabel, MissingField) as err:
            report.errors.append(
                {"query_id": group.query_id, "code": err.code, "message": str(err)}
            )
            continue
        if spec.strategy != "full_batch":
            want = target_batch_size(group.size, spec.fraction) // 2
            if len(positives) != want or len(negatives) != want:
                report.shortfall_groups += 1
        report.batches.append(batch)
        report.positive_hes.extend(t.hes_rel for t in positives)
        report.negative_hes.extend(t.hes_rel for t in negatives)
        report.advantages.extend(batch["advantages"].values())
    return report
