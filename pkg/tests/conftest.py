from __future__ import annotations

import numpy as np
import pytest

from hes_toolkit.corpus_io import SampleRecord
from hes_toolkit.metrics import TokenObservation


def record_from_entropies(
    entropies,
    sample_id: str = "s0",
    query_id: str = "q0",
    correct: bool | None = None,
    difficulty: float | None = None,
    reward: float | None = None,
    texts=None,
) -> SampleRecord:
    tokens = [
        TokenObservation(
            token_text=None if texts is None else texts[i],
            entropy=float(e),
        )
        for i, e in enumerate(entropies)
    ]
    return SampleRecord(
        sample_id=sample_id,
        query_id=query_id,
        tokens=tokens,
        correct=correct,
        difficulty=difficulty,
        reward=reward,
    )


def random_entropies(rng: np.random.Generator, n: int) -> np.ndarray:
    """Mixed entropy draws: smooth bulk, heavy spikes, and exact ties."""
    kind = rng.integers(0, 4)
    if kind == 0:
        e = rng.exponential(0.5, size=n)
    elif kind == 1:
        e = rng.uniform(0.0, 3.0, size=n)
    elif kind == 2:
        # Quantized values force ties at the selection cut.
        e = np.round(rng.uniform(0.0, 2.0, size=n), 1)
    else:
        e = rng.exponential(0.3, size=n)
        spikes = rng.integers(0, n, size=max(1, n // 50))
        e[spikes] += rng.uniform(2.0, 6.0, size=spikes.size)
    return e


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20260810)
