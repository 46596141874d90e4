"""Monte Carlo comparison of review-assignment designs on synthetic scores.

Each iteration synthesizes one full poster-by-judge score matrix, lets
every design kind select its observed cells from that shared matrix,
fits the random-judge model, and scores the result against the known
truth.  Because all designs within an iteration see the same truth, the
comparisons are paired; summaries report per-design distributions and
within-iteration differences.

Reproducibility: every random draw comes from a stream derived from
(master seed, iteration index, role, design kind), so results do not
depend on worker count or scheduling, and adding a design kind never
perturbs the streams of existing kinds.
"""

from __future__ import annotations

import csv
import io
import math
import os
from dataclasses import dataclass
from multiprocessing import get_context
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import t as student_t

from ._util import FileFormatError, atomic_write_text, format_float, parse_bool, parse_float, parse_int
from .design import DesignConfig, is_connected
from .generate import GeneratorKind, generate
from .model import ScoreTable, SingularFit, _ranks_desc, fit_random, rank_posters

__all__ = [
    "METRICS",
    "SimParams",
    "PRESETS",
    "DesignMetrics",
    "IterationResult",
    "MetricSummary",
    "DifferenceSummary",
    "SimStudyReport",
    "synthesize_scores",
    "run_iteration",
    "run_study",
    "summarize_differences",
    "write_metrics",
    "read_metrics",
    "present_kinds",
    "aggregate_results",
    "write_summary",
    "write_histogram",
]

METRICS = ("win_prop", "median_rank_dev", "mean_score_dev", "mean_se")

_KIND_ORDER = (GeneratorKind.NB1, GeneratorKind.NB2, GeneratorKind.RANDOM)
_KIND_CODE = {kind: code for code, kind in enumerate(_KIND_ORDER)}
_SCORE_ROLE = 0
_DESIGN_ROLE = 1


@dataclass(frozen=True)
class SimParams:
    """Study configuration; defaults give the 200-poster benchmark setting."""

    t: int = 200
    b: int = 100
    k: int = 5
    awards: int = 30
    mu: float = 80.0
    sd_poster: float = 7.0
    sd_judge: float = 6.0
    sd_error: float = 7.0
    iterations: int = 1000
    seed: int = 0
    designs: tuple[GeneratorKind, ...] = _KIND_ORDER

    def __post_init__(self) -> None:
        kinds = tuple(GeneratorKind(kind) for kind in self.designs)
        if not kinds or len(set(kinds)) != len(kinds):
            raise ValueError("designs must be a non-empty collection of distinct kinds")
        object.__setattr__(self, "designs", tuple(sorted(kinds, key=_KIND_ORDER.index)))
        if not 1 <= self.awards <= self.t:
            raise ValueError(f"awards must be in [1, t], got {self.awards}")
        for name in ("sd_poster", "sd_judge", "sd_error"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {value}")
        if not math.isfinite(self.mu):
            raise ValueError(f"mu must be finite, got {self.mu}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        # the remaining (t, k, b) constraints are enforced by DesignConfig
        DesignConfig(t=self.t, k=self.k, b=self.b, seed=self.seed)


PRESETS: dict[str, SimParams] = {
    "paper": SimParams(),
    "appendix555": SimParams(sd_poster=5.0, sd_judge=5.0, sd_error=5.0),
}


@dataclass(frozen=True)
class DesignMetrics:
    """One design's evaluation within a single iteration."""

    win_prop: float
    median_rank_dev: float
    mean_score_dev: float
    mean_se: float
    disconnected: bool

    def value(self, metric: str) -> float:
        if metric not in METRICS:
            raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
        return float(getattr(self, metric))


@dataclass(frozen=True)
class IterationResult:
    """Metrics per design kind for one iteration; failed kinds are listed, not scored."""

    iteration: int
    metrics: Mapping[GeneratorKind, DesignMetrics]
    failures: tuple[GeneratorKind, ...] = ()


@dataclass(frozen=True)
class MetricSummary:
    n: int
    mean: float
    sd: float
    minimum: float
    maximum: float
    q025: float
    q500: float
    q975: float


@dataclass(frozen=True)
class DifferenceSummary:
    """Paired within-iteration differences, sign convention first minus second."""

    first: GeneratorKind
    second: GeneratorKind
    metric: str
    n: int
    mean: float
    sd: float
    minimum: float
    maximum: float
    q025: float
    q500: float
    q975: float
    ci_low: float
    ci_high: float


@dataclass(frozen=True)
class SimStudyReport:
    params: SimParams
    results: tuple[IterationResult, ...]
    design_summary: Mapping[tuple[GeneratorKind, str], MetricSummary]
    difference_summary: Mapping[tuple[GeneratorKind, GeneratorKind, str], DifferenceSummary]
    disconnected_counts: Mapping[GeneratorKind, int]
    failure_counts: Mapping[GeneratorKind, int]


def synthesize_scores(params: SimParams, iteration_seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Draw one iteration's truth and full t-by-b score matrix.

    Poster effects, judge effects, and the error matrix are drawn in
    that order from the iteration's score stream.  The true score of
    poster i is mu + P_i; the matrix holds mu + P_i + J_j + eps_ij for
    every cell, and every design slices the same matrix.
    """
    if iteration_seed < 0:
        raise ValueError(f"iteration_seed must be >= 0, got {iteration_seed}")
    sequence = np.random.SeedSequence([params.seed, iteration_seed, _SCORE_ROLE])
    rng = np.random.Generator(np.random.PCG64(sequence))
    poster_effects = rng.normal(0.0, params.sd_poster, size=params.t)
    judge_effects = rng.normal(0.0, params.sd_judge, size=params.b)
    noise = rng.normal(0.0, params.sd_error, size=(params.t, params.b))
    true_scores = params.mu + poster_effects
    matrix = true_scores[:, None] + judge_effects[None, :] + noise
    return true_scores, matrix


def _design_seed(params: SimParams, iteration_seed: int, kind: GeneratorKind) -> int:
    sequence = np.random.SeedSequence([params.seed, iteration_seed, _DESIGN_ROLE, _KIND_CODE[kind]])
    return int(sequence.generate_state(1, np.uint64)[0])


def run_iteration(params: SimParams, iteration_seed: int) -> IterationResult:
    """Generate each design, fit the random-judge model, score against truth.

    A design whose fit raises SingularFit is recorded as a failure for
    this iteration and excluded from the metrics mapping.
    """
    true_scores, matrix = synthesize_scores(params, iteration_seed)
    true_rank = _ranks_desc(true_scores, np.ones(params.t, dtype=bool))
    true_top = np.flatnonzero(true_rank <= params.awards)
    top_set = set(int(poster) for poster in true_top)

    metrics: dict[GeneratorKind, DesignMetrics] = {}
    failures: list[GeneratorKind] = []
    for kind in params.designs:
        config = DesignConfig(
            t=params.t, k=params.k, b=params.b, seed=_design_seed(params, iteration_seed, kind)
        )
        design, _ = generate(config, kind)
        covered = bool(design.replication.min() >= 1)
        disconnected = not (covered and is_connected(design))
        table = ScoreTable.from_design_matrix(design, matrix)
        try:
            fit = fit_random(design, table)
        except SingularFit:
            failures.append(kind)
            continue
        winners = set(rank_posters(fit, params.awards))
        estimated = fit.rank[true_top].astype(np.float64)
        truth = true_rank[true_top].astype(np.float64)
        metrics[kind] = DesignMetrics(
            win_prop=len(top_set & winners) / params.awards,
            median_rank_dev=float(np.median(np.abs(estimated - truth))),
            mean_score_dev=float(np.mean(np.abs(fit.pmm[true_top] - true_scores[true_top]))),
            mean_se=float(np.mean(fit.se)),
            disconnected=disconnected,
        )
    return IterationResult(iteration=iteration_seed, metrics=metrics, failures=tuple(failures))


def _iteration_task(task: tuple[SimParams, int]) -> IterationResult:
    return run_iteration(task[0], task[1])


def _worker_count(params: SimParams, workers: int | None) -> int:
    if workers is None:
        env = os.environ.get("NBIBD_THREADS", "").strip()
        if env:
            try:
                workers = int(env)
            except ValueError:
                raise ValueError(f"NBIBD_THREADS must be an integer, got {env!r}") from None
        else:
            workers = 0
    if workers < 0:
        raise ValueError(f"worker count must be >= 0, got {workers}")
    if workers == 0:
        workers = os.cpu_count() or 1
    return max(1, min(workers, params.iterations))


def run_study(params: SimParams, workers: int | None = None) -> SimStudyReport:
    """Run all iterations and aggregate.

    workers = None consults NBIBD_THREADS (0 or unset = one worker per
    CPU).  Results are identical for any worker count because each
    iteration owns its deterministic sub-streams and aggregation runs
    in iteration order.
    """
    count = _worker_count(params, workers)
    if count == 1:
        results = [run_iteration(params, index) for index in range(params.iterations)]
    else:
        tasks = [(params, index) for index in range(params.iterations)]
        try:
            context = get_context("fork")
        except ValueError:
            context = get_context()
        chunk = max(1, params.iterations // (count * 8))
        with context.Pool(count) as pool:
            results = list(pool.imap(_iteration_task, tasks, chunksize=chunk))
    aggregates = aggregate_results(results, params.designs)
    return SimStudyReport(params=params, results=tuple(results), **aggregates)


def _metric_summary(values: Sequence[float]) -> MetricSummary:
    data = np.asarray(values, dtype=np.float64)
    if data.size == 0:
        nan = float("nan")
        return MetricSummary(0, nan, nan, nan, nan, nan, nan, nan)
    q025, q500, q975 = np.quantile(data, [0.025, 0.5, 0.975])
    return MetricSummary(
        n=int(data.size),
        mean=float(data.mean()),
        sd=float(data.std(ddof=1)) if data.size > 1 else float("nan"),
        minimum=float(data.min()),
        maximum=float(data.max()),
        q025=float(q025),
        q500=float(q500),
        q975=float(q975),
    )


def _difference_summary(
    first: GeneratorKind, second: GeneratorKind, metric: str, diffs: np.ndarray
) -> DifferenceSummary:
    nan = float("nan")
    if diffs.size == 0:
        return DifferenceSummary(first, second, metric, 0, nan, nan, nan, nan, nan, nan, nan, nan, nan)
    mean = float(diffs.mean())
    if diffs.size > 1:
        sd = float(diffs.std(ddof=1))
        half = float(student_t.ppf(0.975, diffs.size - 1)) * sd / math.sqrt(diffs.size)
        ci_low, ci_high = mean - half, mean + half
    else:
        sd = nan
        ci_low = ci_high = nan
    q025, q500, q975 = np.quantile(diffs, [0.025, 0.5, 0.975])
    return DifferenceSummary(
        first=first,
        second=second,
        metric=metric,
        n=int(diffs.size),
        mean=mean,
        sd=sd,
        minimum=float(diffs.min()),
        maximum=float(diffs.max()),
        q025=float(q025),
        q500=float(q500),
        q975=float(q975),
        ci_low=ci_low,
        ci_high=ci_high,
    )


def _paired_diffs(
    results: Sequence[IterationResult], first: GeneratorKind, second: GeneratorKind, metric: str
) -> np.ndarray:
    return np.array(
        [
            result.metrics[first].value(metric) - result.metrics[second].value(metric)
            for result in results
            if first in result.metrics and second in result.metrics
        ],
        dtype=np.float64,
    )


def aggregate_results(results: Sequence[IterationResult], designs: Sequence[GeneratorKind]) -> dict:
    """Reduce per-iteration metrics into the report's summary mappings.

    A kind's failure count is the number of iterations lacking a metrics
    entry for it, which covers both recorded SingularFit failures and
    rows absent from a re-read metrics file.
    """
    ordered = sorted(results, key=lambda result: result.iteration)
    kinds = tuple(GeneratorKind(kind) for kind in designs)
    design_summary: dict[tuple[GeneratorKind, str], MetricSummary] = {}
    for kind in kinds:
        for metric in METRICS:
            values = [r.metrics[kind].value(metric) for r in ordered if kind in r.metrics]
            design_summary[(kind, metric)] = _metric_summary(values)
    difference_summary: dict[tuple[GeneratorKind, GeneratorKind, str], DifferenceSummary] = {}
    for position, first in enumerate(kinds):
        for second in kinds[position + 1 :]:
            for metric in METRICS:
                diffs = _paired_diffs(ordered, first, second, metric)
                difference_summary[(first, second, metric)] = _difference_summary(
                    first, second, metric, diffs
                )
    disconnected_counts = {
        kind: sum(1 for r in ordered if kind in r.metrics and r.metrics[kind].disconnected)
        for kind in kinds
    }
    failure_counts = {kind: sum(1 for r in ordered if kind not in r.metrics) for kind in kinds}
    return {
        "design_summary": design_summary,
        "difference_summary": difference_summary,
        "disconnected_counts": disconnected_counts,
        "failure_counts": failure_counts,
    }


def summarize_differences(
    report: SimStudyReport, pair: Sequence[GeneratorKind | str], metric: str
) -> DifferenceSummary:
    """Paired difference summary for any ordered pair, including self-pairs."""
    try:
        first, second = (GeneratorKind(kind) for kind in pair)
    except ValueError as error:
        raise ValueError(f"unknown design kind in pair: {error}") from None
    for kind in (first, second):
        if kind not in report.params.designs:
            raise ValueError(f"design kind {kind.value!r} is not part of this study")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    diffs = _paired_diffs(report.results, first, second, metric)
    return _difference_summary(first, second, metric, diffs)


_METRICS_HEADER = [
    "iteration",
    "design",
    "win_prop",
    "median_rank_dev",
    "mean_score_dev",
    "mean_se",
    "disconnected",
]


def write_metrics(path: str, results: Sequence[IterationResult]) -> None:
    """One CSV row per (iteration, design) with that design's metrics."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_METRICS_HEADER)
    for result in sorted(results, key=lambda item: item.iteration):
        for kind in _KIND_ORDER:
            if kind not in result.metrics:
                continue
            entry = result.metrics[kind]
            writer.writerow(
                [
                    result.iteration,
                    kind.value,
                    format_float(entry.win_prop),
                    format_float(entry.median_rank_dev),
                    format_float(entry.mean_score_dev),
                    format_float(entry.mean_se),
                    "true" if entry.disconnected else "false",
                ]
            )
    atomic_write_text(path, buffer.getvalue())


def read_metrics(path: str) -> list[IterationResult]:
    """Rebuild per-iteration results from a metrics CSV.

    Failure lists cannot be recovered from the file; kinds simply appear
    with no row, which aggregate_results counts as failures.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise FileFormatError(path, None, "empty file")
    if rows[0] != _METRICS_HEADER:
        raise FileFormatError(path, 1, f"header must be {','.join(_METRICS_HEADER)}")
    collected: dict[int, dict[GeneratorKind, DesignMetrics]] = {}
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != len(_METRICS_HEADER):
            raise FileFormatError(path, number, f"expected {len(_METRICS_HEADER)} columns, got {len(row)}")
        iteration = parse_int(row[0], path, number, "iteration")
        if iteration < 0:
            raise FileFormatError(path, number, f"iteration must be >= 0, got {iteration}")
        try:
            kind = GeneratorKind(row[1])
        except ValueError:
            raise FileFormatError(path, number, f"unknown design kind {row[1]!r}") from None
        entry = DesignMetrics(
            win_prop=parse_float(row[2], path, number, "win_prop"),
            median_rank_dev=parse_float(row[3], path, number, "median_rank_dev"),
            mean_score_dev=parse_float(row[4], path, number, "mean_score_dev"),
            mean_se=parse_float(row[5], path, number, "mean_se"),
            disconnected=parse_bool(row[6], path, number, "disconnected"),
        )
        per_iteration = collected.setdefault(iteration, {})
        if kind in per_iteration:
            raise FileFormatError(path, number, f"duplicate row for iteration {iteration}, design {kind.value}")
        per_iteration[kind] = entry
    if not collected:
        raise FileFormatError(path, None, "no metric rows")
    return [
        IterationResult(iteration=iteration, metrics=collected[iteration])
        for iteration in sorted(collected)
    ]


def present_kinds(results: Sequence[IterationResult]) -> tuple[GeneratorKind, ...]:
    """Design kinds appearing in any result, in canonical order."""
    seen = {kind for result in results for kind in result.metrics}
    return tuple(kind for kind in _KIND_ORDER if kind in seen)


_SUMMARY_HEADER = [
    "section",
    "name",
    "metric",
    "n",
    "mean",
    "sd",
    "min",
    "max",
    "q025",
    "q500",
    "q975",
    "ci_low",
    "ci_high",
]


def _cell(value: float) -> str:
    return "" if math.isnan(value) else format_float(value)


def write_summary(
    path: str,
    design_summary: Mapping[tuple[GeneratorKind, str], MetricSummary],
    difference_summary: Mapping[tuple[GeneratorKind, GeneratorKind, str], DifferenceSummary],
    disconnected_counts: Mapping[GeneratorKind, int],
    failure_counts: Mapping[GeneratorKind, int],
) -> None:
    """Write the quantile/CI summary CSV: design rows, difference rows, counts."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_SUMMARY_HEADER)
    for kind in _KIND_ORDER:
        for metric in METRICS:
            summary = design_summary.get((kind, metric))
            if summary is None:
                continue
            writer.writerow(
                [
                    "design",
                    kind.value,
                    metric,
                    summary.n,
                    _cell(summary.mean),
                    _cell(summary.sd),
                    _cell(summary.minimum),
                    _cell(summary.maximum),
                    _cell(summary.q025),
                    _cell(summary.q500),
                    _cell(summary.q975),
                    "",
                    "",
                ]
            )
    for position, first in enumerate(_KIND_ORDER):
        for second in _KIND_ORDER[position + 1 :]:
            for metric in METRICS:
                summary = difference_summary.get((first, second, metric))
                if summary is None:
                    continue
                writer.writerow(
                    [
                        "difference",
                        f"{first.value}-{second.value}",
                        metric,
                        summary.n,
                        _cell(summary.mean),
                        _cell(summary.sd),
                        _cell(summary.minimum),
                        _cell(summary.maximum),
                        _cell(summary.q025),
                        _cell(summary.q500),
                        _cell(summary.q975),
                        _cell(summary.ci_low),
                        _cell(summary.ci_high),
                    ]
                )
    for kind in _KIND_ORDER:
        if kind in disconnected_counts:
            writer.writerow(["count", kind.value, "disconnected", disconnected_counts[kind]] + [""] * 9)
    for kind in _KIND_ORDER:
        if kind in failure_counts:
            writer.writerow(["count", kind.value, "failed", failure_counts[kind]] + [""] * 9)
    atomic_write_text(path, buffer.getvalue())


_HISTOGRAM_HEADER = ["section", "name", "metric", "bin_left", "bin_right", "count"]


def write_histogram(
    path: str, results: Sequence[IterationResult], designs: Sequence[GeneratorKind], bins: int
) -> None:
    """Write per-design and per-pair histogram bin counts for every metric."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    ordered = sorted(results, key=lambda result: result.iteration)
    kinds = tuple(GeneratorKind(kind) for kind in designs)
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(_HISTOGRAM_HEADER)

    def emit(section: str, name: str, metric: str, values: np.ndarray) -> None:
        if values.size == 0:
            return
        counts, edges = np.histogram(values, bins=bins)
        for index in range(counts.size):
            writer.writerow(
                [
                    section,
                    name,
                    metric,
                    format_float(edges[index]),
                    format_float(edges[index + 1]),
                    int(counts[index]),
                ]
            )

    for kind in kinds:
        for metric in METRICS:
            values = np.array(
                [r.metrics[kind].value(metric) for r in ordered if kind in r.metrics], dtype=np.float64
            )
            emit("design", kind.value, metric, values)
    for position, first in enumerate(kinds):
        for second in kinds[position + 1 :]:
            for metric in METRICS:
                emit(
                    "difference",
                    f"{first.value}-{second.value}",
                    metric,
                    _paired_diffs(ordered, first, second, metric),
                )
    atomic_write_text(path, buffer.getvalue())
