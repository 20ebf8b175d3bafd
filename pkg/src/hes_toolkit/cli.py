"""The ``hes`` command.

Subcommands mirror the library: ``score``, ``select sft``, ``select
rft``, ``rl-batch``, ``analyze`` (discrim | dist | tokens | agreement),
``synth``, and ``verify``. Every output embeds the resolved parameters,
seed, and input digest, so any artifact can be re-derived and checked.

Exit codes: 0 success, 1 usage error, 2 data error. All randomness flows
from explicit ``--seed`` flags; random modes without a seed are a usage
error. ``--workers`` is a throughput knob only — output bytes are
identical for any worker count.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Any, Iterator, Sequence

import numpy as np

# analysis (scipy) and plotting (matplotlib) are imported lazily inside
# the analyze commands so `score`'s startup stays light
from . import corpus_io, rl_sampler, selection, synth
from .corpus_io import ReadStats, file_digest, read_corpus, read_scores
from .errors import (
    DuplicateSampleId,
    HesError,
    IdSetMismatch,
    MalformedLine,
    MissingCorrectLabel,
    SchemaViolation,
    reconstruct,
)
from .metrics import (
    MASS_TOLERANCE,
    METRIC_NAMES,
    NOISE_TOLERANCE,
    MetricConfig,
    _entropy_rows,
    score_from_entropies,
    score_sample,
)

USAGE_ERROR = 1
DATA_ERROR = 2


class _Parser(argparse.ArgumentParser):
    """argparse with usage errors on exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _write_json(doc: dict[str, Any], path: str | None, fmt: str = "json") -> None:
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    elif fmt == "text":
        for line in _flatten(doc):
            print(line)
    else:
        json.dump(doc, sys.stdout, indent=2)
        print()


def _flatten(doc: dict[str, Any], prefix: str = "") -> Iterator[str]:
    for key, value in doc.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            yield from _flatten(value, prefix=f"{name}.")
        else:
            yield f"{name} = {value}"


# ---------------------------------------------------------------- score


def _fast_entropies(raw_tokens: list, tail_mode: str) -> tuple["np.ndarray", int] | None:
    """Vectorized entropies for homogeneous, well-formed token lists.

    Returns (entropies, clamp count), or None when the tokens need the
    general per-token path (mixed evidence kinds, ragged logprob lists,
    or anything invalid — the slow path re-derives the precise error).
    """
    n = len(raw_tokens)
    first = raw_tokens[0]
    if not isinstance(first, dict):
        return None
    if first.get("entropy") is not None:
        try:
            e = np.fromiter((t["entropy"] for t in raw_tokens), dtype=np.float64, count=n)
        except (KeyError, TypeError, ValueError):
            return None
        if any(t.get("top_logprobs") or type(t.get("entropy")) is bool for t in raw_tokens):
            return None  # exactly-one-evidence rule, or bool posing as a number
        if not np.isfinite(e).all() or e.min() < -NOISE_TOLERANCE:
            return None
        negative = e < 0.0
        if negative.any():
            return np.maximum(e, 0.0), int(negative.sum())
        return e, 0
    lps = first.get("top_logprobs")
    if isinstance(lps, list) and lps:
        k = len(lps)
        try:
            if any(len(t["top_logprobs"]) != k or t.get("entropy") is not None for t in raw_tokens):
                return None
            flat = np.fromiter(
                (pair[1] for t in raw_tokens for pair in t["top_logprobs"]),
                dtype=np.float64,
                count=n * k,
            )
        except (KeyError, TypeError, ValueError, IndexError):
            return None
        entropy, mass = _entropy_rows(flat.reshape(n, k), tail_mode)
        if (~(mass <= 1.0 + MASS_TOLERANCE)).any():
            return None
        return entropy, 0
    return None


def _score_chunk(args: tuple[int, list[str], tuple[float, float, str], bool]):
    start_line, lines, (p, tau, tail_mode), include_indices = args
    cfg = MetricConfig(high_entropy_fraction=p, absolute_threshold=tau, tail_mode=tail_mode)
    stats = ReadStats()
    out = []
    for offset, raw in enumerate(lines):
        line_no = start_line + offset
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as err:
            raise MalformedLine(line_no, err.msg) from None
        sample_id, query_id, _, _, _, raw_tokens = corpus_io._parse_envelope(obj, line_no)
        fast = _fast_entropies(raw_tokens, tail_mode)
        if fast is not None:
            entropies, clamped = fast
            stats.clamped_tokens += clamped
            score = score_from_entropies(sample_id, query_id, entropies, cfg)
        else:
            record = corpus_io.record_from_dict(obj, line_no, stats)
            try:
                score = score_sample(record, cfg)
            except HesError as err:
                # keep the original error code, add the line number
                raise reconstruct(err.code, f"line {line_no}: {err}") from None
        out.append((line_no, sample_id, corpus_io.score_line(score, include_indices)))
    return out, stats.clamped_tokens


def _chunked_lines(path: str, chunk_size: int) -> Iterator[tuple[int, list[str]]]:
    chunk: list[str] = []
    start = 1
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not chunk:
                start = line_no
            chunk.append(line)
            if len(chunk) >= chunk_size:
                yield start, chunk
                chunk = []
    if chunk:
        yield start, chunk


def cmd_score(args: argparse.Namespace) -> int:
    cfg = MetricConfig(
        high_entropy_fraction=args.p, absolute_threshold=args.tau, tail_mode=args.tail_mode
    )
    cfg.validate()
    cfg_tuple = (args.p, args.tau, args.tail_mode)
    seen: set[str] = set()
    count = 0
    clamped = 0

    with open(args.output, "w", encoding="utf-8") as out:
        def _emit(result: list[tuple[int, str, str]]) -> None:
            nonlocal count
            for line_no, sample_id, line in result:
                if sample_id in seen:
                    raise DuplicateSampleId(sample_id, line_no)
                seen.add(sample_id)
                out.write(line)
                out.write("\n")
                count += 1

        if args.workers <= 1:
            for start, lines in _chunked_lines(args.input, 64):
                result, n_clamped = _score_chunk((start, lines, cfg_tuple, args.high_indices))
                clamped += n_clamped
                _emit(result)
        else:
            import multiprocessing as mp

            tasks = (
                (start, lines, cfg_tuple, args.high_indices)
                for start, lines in _chunked_lines(args.input, 64)
            )
            with mp.Pool(processes=args.workers) as pool:
                for result, n_clamped in pool.imap(_score_chunk, tasks):
                    clamped += n_clamped
                    _emit(result)

    if clamped:
        print(f"note: clamped {clamped} slightly negative entropies to 0", file=sys.stderr)
    print(f"scored {count} samples -> {args.output}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- select


def _load_scores(path: str) -> list:
    return list(read_scores(path))


def _difficulty_map(corpus_path: str) -> dict[str, float]:
    return {r.sample_id: r.difficulty for r in read_corpus(corpus_path) if r.difficulty is not None}


def _correct_map(corpus_path: str) -> dict[str, bool | None]:
    return {r.sample_id: r.correct for r in read_corpus(corpus_path)}


def cmd_select_sft(args: argparse.Namespace) -> int:
    spec = selection.SelectionSpec(
        mode=args.mode.replace("-", "_"),
        ratio=args.ratio,
        budget=args.budget,
        metric=args.metric,
        seed=args.seed,
    )
    scores = _load_scores(args.scores)
    digest = file_digest(args.scores)
    difficulty = None
    if spec.mode == "difficulty":
        if not args.corpus:
            raise ValueError("difficulty mode needs --corpus for difficulty labels")
        difficulty = _difficulty_map(args.corpus)

    if args.strata and args.strata > 1:
        written = []
        for label, manifest in selection.stratified_select(
            scores, args.strata, spec, difficulty=difficulty, corpus_digest=digest
        ):
            out = Path(args.output)
            path = out.with_name(f"{out.stem}.{label}{out.suffix or '.json'}")
            corpus_io.write_manifest(manifest, path)
            written.append(str(path))
        print("\n".join(written))
        return 0

    manifest = selection.sft_select(scores, spec, difficulty=difficulty, corpus_digest=digest)
    corpus_io.write_manifest(manifest, args.output)
    print(f"selected {len(manifest.selected)} of {len(scores)} -> {args.output}", file=sys.stderr)
    return 0


def cmd_select_rft(args: argparse.Namespace) -> int:
    spec = selection.RftSpec(
        scope=args.scope.replace("-", "_"),
        k=args.k,
        candidates_per_query=args.candidates_per_query,
        budget=args.budget,
    )
    spec.validate()
    scores = _load_scores(args.scores)
    correct = _correct_map(args.corpus)
    digest = file_digest(args.scores)
    if spec.scope == "per_query":
        manifest = selection.rft_per_query_select(scores, correct, spec.k, corpus_digest=digest)
    else:
        manifest = selection.rft_global_select(
            scores, correct, budget=spec.budget, k=spec.k, corpus_digest=digest
        )
    manifest.params["labels_digest"] = file_digest(args.corpus)
    corpus_io.write_manifest(manifest, args.output)
    print(f"selected {len(manifest.selected)} of {len(scores)} -> {args.output}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- rl-batch


def _rollout_groups(corpus_path: str, scores_path: str) -> Iterator[rl_sampler.RolloutGroup]:
    scores = {s.sample_id: s for s in read_scores(scores_path)}
    by_query: dict[str, list] = {}
    for record in read_corpus(corpus_path):
        score = scores.get(record.sample_id)
        if score is None:
            raise IdSetMismatch(f"sample '{record.sample_id}' has no score line")
        if record.correct is None:
            raise MissingCorrectLabel(record.sample_id)
        reward = record.reward if record.reward is not None else float(record.correct)
        by_query.setdefault(record.query_id, []).append(
            rl_sampler.Trajectory(
                sample_id=record.sample_id,
                reward=reward,
                correct=record.correct,
                hes_rel=score.hes_rel,
                n_tokens=score.n_tokens,
                difficulty=record.difficulty,
            )
        )
    for query_id in sorted(by_query):
        yield rl_sampler.RolloutGroup(query_id=query_id, trajectories=by_query[query_id])


def cmd_rl_batch(args: argparse.Namespace) -> int:
    spec = rl_sampler.BatchSpec(
        strategy=args.strategy.replace("-", "_"), fraction=args.fraction, seed=args.seed
    )
    spec.validate()
    report = rl_sampler.batch_report(_rollout_groups(args.corpus, args.scores), spec)
    with open(args.output, "w", encoding="utf-8") as fh:
        for batch in report.batches:
            fh.write(json.dumps(batch, separators=(",", ":")))
            fh.write("\n")
    summary = {
        "strategy": spec.strategy,
        "fraction": spec.fraction,
        "seed": spec.seed,
        "input_digest": file_digest(args.scores),
        "labels_digest": file_digest(args.corpus),
        **report.summary(),
    }
    summary_path = args.summary or f"{args.output}.summary.json"
    _write_json(summary, summary_path)
    print(
        f"wrote {len(report.batches)} batches ({report.shortfall_groups} with quota shortfall) "
        f"-> {args.output}",
        file=sys.stderr,
    )
    return 0


# ---------------------------------------------------------------- analyze


def cmd_analyze_discrim(args: argparse.Namespace) -> int:
    from . import analysis, plotting

    scores = _load_scores(args.scores)
    correct = _correct_map(args.corpus)
    metrics = args.metric or list(METRIC_NAMES)
    reports = {}
    for metric in metrics:
        rep = analysis.separation_report(scores, correct, metric)
        reports[metric] = {
            "auc": rep.auc,
            "mean_gap": rep.mean_gap,
            "correct": asdict(rep.correct),
            "incorrect": asdict(rep.incorrect),
        }
    doc = {
        "report": "separation",
        "params": {"metrics": metrics},
        "input_digest": file_digest(args.scores),
        "labels_digest": file_digest(args.corpus),
        "metrics": reports,
    }
    _write_json(doc, args.output, args.format)
    if args.plot_dir:
        out = Path(args.plot_dir)
        out.mkdir(parents=True, exist_ok=True)
        plotting.separation_figure(scores, correct, metrics, out / "discrim.png")
    return 0


def cmd_analyze_dist(args: argparse.Namespace) -> int:
    from . import analysis, plotting

    percentiles = args.percentile or [50.0, 90.0, 99.0, 99.5]
    report = analysis.entropy_distribution(
        read_corpus(args.input), percentiles=percentiles, bins=args.bins, tail_mode=args.tail_mode
    )
    doc = {
        "report": "distribution",
        "params": {"percentiles": percentiles, "bins": args.bins, "tail_mode": args.tail_mode},
        "input_digest": file_digest(args.input),
        "token_count": report.token_count,
        "min": report.min,
        "max": report.max,
        "mean": report.mean,
        "percentiles": {str(q): v for q, v in report.percentiles.items()},
        "histogram": {"bin_edges": report.bin_edges, "counts": report.counts},
    }
    _write_json(doc, args.output, args.format)
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write("bin_left,bin_right,count\n")
            for i, count in enumerate(report.counts):
                fh.write(f"{report.bin_edges[i]},{report.bin_edges[i + 1]},{count}\n")
    if args.plot_dir:
        out = Path(args.plot_dir)
        out.mkdir(parents=True, exist_ok=True)
        plotting.distribution_figure(report, out / "dist.png")
    return 0


def cmd_analyze_tokens(args: argparse.Namespace) -> int:
    from . import analysis, plotting

    freq = analysis.high_entropy_token_frequency(
        read_corpus(args.input), p=args.p, tail_mode=args.tail_mode
    )
    doc = {
        "report": "token_frequency",
        "params": {"p": args.p, "tail_mode": args.tail_mode},
        "input_digest": file_digest(args.input),
        "total_high_tokens": sum(c for _, c in freq),
        "frequencies": [[t, c] for t, c in freq],
    }
    _write_json(doc, args.output, args.format)
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write("token,count\n")
            for text, count in freq:
                fh.write(f"{json.dumps(text)},{count}\n")
    if args.plot_dir:
        out = Path(args.plot_dir)
        out.mkdir(parents=True, exist_ok=True)
        plotting.frequency_figure(freq, out / "tokens.png")
    return 0


def cmd_analyze_agreement(args: argparse.Namespace) -> int:
    from . import analysis

    report = analysis.cross_scorer_agreement(
        _load_scores(args.scores_a), _load_scores(args.scores_b), ratio=args.ratio
    )
    doc = {
        "report": "agreement",
        "params": {"ratio": args.ratio},
        "input_digest_a": file_digest(args.scores_a),
        "input_digest_b": file_digest(args.scores_b),
        "spearman": report.spearman,
        "overlap_at_ratio": report.overlap_at_ratio,
        "n_samples": report.n_samples,
    }
    _write_json(doc, args.output, args.format)
    return 0


# ---------------------------------------------------------------- synth


def _parse_base(text: str) -> dict[str, Any]:
    parts = text.split(":")
    kind = parts[0]
    try:
        if kind == "constant":
            return {"kind": "constant", "value": float(parts[1])}
        if kind == "uniform":
            return {"kind": "uniform", "low": float(parts[1]), "high": float(parts[2])}
        if kind == "exponential":
            return {"kind": "exponential", "rate": float(parts[1])}
    except (IndexError, ValueError):
        pass
    raise ValueError(
        f"cannot parse base spec {text!r}; expected constant:V, uniform:LO:HI, or exponential:RATE"
    )


def cmd_synth(args: argparse.Namespace) -> int:
    profile = synth.GeneratorProfile(
        seed=args.seed,
        n_queries=args.n_queries,
        candidates_per_query=args.candidates,
        length_min=args.length_min,
        length_max=args.length_max,
        base=_parse_base(args.base),
        base_scale_jitter=args.jitter,
        spike_count=args.spikes,
        spike_low=args.spike_low,
        spike_high=args.spike_high,
        spike_texts=args.spike_texts.split(",") if args.spike_texts else None,
        p_correct=args.p_correct,
        incorrect_spike_factor=args.incorrect_spike_factor,
        incorrect_length_factor=args.incorrect_length_factor,
        token_format=args.token_format.replace("-", "_"),
        top_k=args.top_k,
        score_p=args.score_p,
    )
    n_records, n_tokens = synth.write_synth_corpus(profile, args.output, args.ledger)
    print(f"generated {n_records} records ({n_tokens} tokens) -> {args.output}", file=sys.stderr)
    return 0


# ---------------------------------------------------------------- verify


def cmd_verify(args: argparse.Namespace) -> int:
    with open(args.target, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    keys = [k for k in ("corpus_digest", "input_digest") if doc.get(k)]
    if not keys:
        raise SchemaViolation(None, "corpus_digest", "target embeds no input digest")
    corpus_io.check_digest(doc[keys[0]], args.input)
    print(f"digest ok: {args.input} matches {args.target}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> _Parser:
    parser = _Parser(prog="hes", description="Entropy-based corpus scoring and selection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_format(p: argparse.ArgumentParser) -> None:
        p.add_argument("--format", choices=["json", "text"], default="json",
                       help="stdout rendering when --output is omitted")

    p = sub.add_parser("score", help="score a corpus into a score file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--p", type=float, default=0.005, help="high-entropy token fraction")
    p.add_argument("--tau", type=float, default=1.6, help="absolute entropy threshold (nats)")
    p.add_argument("--tail-mode", choices=["lump", "ignore"], default="lump")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--high-indices", action="store_true", help="include high_indices per line")
    p.set_defaults(func=cmd_score)

    sel = sub.add_parser("select", help="build a selection manifest").add_subparsers(
        dest="select_command", required=True
    )
    p = sel.add_parser("sft", help="plain subset selection over scored samples")
    p.add_argument("--scores", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--mode", default="highest-hes",
                   choices=["highest-hes", "lowest-hes", "random", "length", "difficulty"])
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--ratio", type=float)
    group.add_argument("--budget", type=int)
    p.add_argument("--metric", choices=list(METRIC_NAMES), default="hes_rel")
    p.add_argument("--seed", type=int)
    p.add_argument("--corpus", help="corpus file (difficulty labels)")
    p.add_argument("--strata", type=int, help="split into N length strata first")
    p.set_defaults(func=cmd_select_sft)

    p = sel.add_parser("rft", help="correct-pool selection per query or global")
    p.add_argument("--scores", required=True)
    p.add_argument("--corpus", required=True, help="corpus file (correct labels)")
    p.add_argument("--output", required=True)
    p.add_argument("--scope", choices=["per-query", "global"], default="per-query")
    p.add_argument("--k", type=int, default=2, help="per-query budget")
    p.add_argument("--candidates-per-query", type=int,
                   help="upstream generation width K (validates k <= K)")
    p.add_argument("--budget", type=int, help="global budget (default: per-query volume)")
    p.set_defaults(func=cmd_select_rft)

    p = sub.add_parser("rl-batch", help="construct RL batches from rollout groups")
    p.add_argument("--scores", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--strategy", default="pos-high-neg-rand",
                   choices=[s.replace("_", "-") for s in rl_sampler.BATCH_STRATEGIES])
    p.add_argument("--fraction", type=float, default=0.5)
    p.add_argument("--seed", type=int)
    p.add_argument("--summary", help="summary path (default: OUTPUT.summary.json)")
    p.set_defaults(func=cmd_rl_batch)

    ana = sub.add_parser("analyze", help="statistical reports").add_subparsers(
        dest="analyze_command", required=True
    )
    p = ana.add_parser("discrim", help="correct/incorrect separation per metric")
    p.add_argument("--scores", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--output")
    p.add_argument("--metric", action="append", choices=list(METRIC_NAMES))
    p.add_argument("--plot-dir")
    add_format(p)
    p.set_defaults(func=cmd_analyze_discrim)

    p = ana.add_parser("dist", help="token entropy distribution and percentiles")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--percentile", action="append", type=float)
    p.add_argument("--bins", type=int, default=100)
    p.add_argument("--tail-mode", choices=["lump", "ignore"], default="lump")
    p.add_argument("--table", help="CSV export of histogram bins")
    p.add_argument("--plot-dir")
    add_format(p)
    p.set_defaults(func=cmd_analyze_dist)

    p = ana.add_parser("tokens", help="high-entropy token frequency table")
    p.add_argument("--input", required=True)
    p.add_argument("--output")
    p.add_argument("--p", type=float, default=0.005)
    p.add_argument("--tail-mode", choices=["lump", "ignore"], default="lump")
    p.add_argument("--table", help="CSV export of the frequency table")
    p.add_argument("--plot-dir")
    add_format(p)
    p.set_defaults(func=cmd_analyze_tokens)

    p = ana.add_parser("agreement", help="cross-scorer rank agreement")
    p.add_argument("--scores-a", required=True)
    p.add_argument("--scores-b", required=True)
    p.add_argument("--output")
    p.add_argument("--ratio", type=float, default=0.2)
    add_format(p)
    p.set_defaults(func=cmd_analyze_agreement)

    p = sub.add_parser("synth", help="generate a synthetic corpus with ground truth")
    p.add_argument("--output", required=True)
    p.add_argument("--ledger")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n-queries", type=int, default=100)
    p.add_argument("--candidates", type=int, default=1)
    p.add_argument("--length-min", type=int, default=50)
    p.add_argument("--length-max", type=int, default=200)
    p.add_argument("--base", default="uniform:0:0.5")
    p.add_argument("--jitter", type=float, default=0.0)
    p.add_argument("--spikes", type=int, default=0)
    p.add_argument("--spike-low", type=float, default=2.0)
    p.add_argument("--spike-high", type=float, default=4.0)
    p.add_argument("--spike-texts")
    p.add_argument("--p-correct", type=float, default=1.0)
    p.add_argument("--incorrect-spike-factor", type=float, default=1.0)
    p.add_argument("--incorrect-length-factor", type=float, default=1.0)
    p.add_argument("--token-format", choices=["entropy", "top-logprobs"], default="entropy")
    p.add_argument("--top-k", type=int, default=5)
    p.add_argument("--score-p", type=float)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("verify", help="re-derive and compare an output's input digest")
    p.add_argument("--target", required=True, help="manifest/report with embedded digest")
    p.add_argument("--input", required=True, help="the input file to hash")
    p.set_defaults(func=cmd_verify)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as err:
        print(f"hes: usage error: {err}", file=sys.stderr)
        return USAGE_ERROR
    except HesError as err:
        print(f"hes: error [{err.code}]: {err}", file=sys.stderr)
        return DATA_ERROR
    except OSError as err:
        print(f"hes: error [IoFailure]: {err}", file=sys.stderr)
        return DATA_ERROR


if __name__ == "__main__":
    sys.exit(main())
