"""Toolkit for entropy-based scoring and selection of reasoning corpora.

The package is organized around a streaming pipeline:

- :mod:`~hes_toolkit.metrics` — per-token entropy and per-sample metrics
- :mod:`~hes_toolkit.corpus_io` — line-delimited corpus/score/manifest I/O
- :mod:`~hes_toolkit.selection` — SFT/RFT subset selection strategies
- :mod:`~hes_toolkit.rl_sampler` — RL batch construction and advantages
- :mod:`~hes_toolkit.analysis` — separation, distribution, agreement reports
- :mod:`~hes_toolkit.synth` — seeded synthetic corpora with ground truth
- :mod:`~hes_toolkit.cli` — the ``hes`` command
"""

from .errors import (
    DigestMismatch,
    DuplicateSampleId,
    EmptyCorpus,
    EmptyDistribution,
    EmptyGroup,
    EmptySequence,
    GroupTooSmall,
    HesError,
    IdSetMismatch,
    InvalidProfile,
    IoFailure,
    MalformedLine,
    MassExceedsOne,
    MissingCorrectLabel,
    MissingField,
    SchemaViolation,
    SingleClassInput,
)
from .metrics import (
    METRIC_NAMES,
    MetricConfig,
    SampleScore,
    TokenObservation,
    compute_token_entropy,
    identify_high_entropy_tokens,
    score_sample,
    token_entropies,
    top_fraction_count,
)
from .corpus_io import (
    ReadStats,
    SampleRecord,
    SelectionManifest,
    file_digest,
    read_corpus,
    read_manifest,
    read_scores,
    record_from_dict,
    write_corpus,
    write_manifest,
    write_scores,
)
from .selection import (
    RftSpec,
    SelectionSpec,
    rft_global_select,
    rft_per_query_select,
    sft_select,
    stratified_select,
)
from .rl_sampler import (
    BATCH_STRATEGIES,
    BatchSpec,
    RolloutGroup,
    Trajectory,
    batch_for_group,
    batch_report,
    construct_batch,
    group_advantage,
)
from .synth import GeneratorProfile, generate, write_synth_corpus

# hes_toolkit.analysis (scipy) and hes_toolkit.plotting (matplotlib) are
# heavier imports, left to explicit submodule access.

__version__ = "0.1.0"
