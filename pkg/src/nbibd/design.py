"""Data model and structural checks for judge-to-poster block designs.

A design assigns each judge (a block) a fixed number of distinct posters
(treatments).  This module holds the core types, the exact feasibility
arithmetic for fully balanced designs, and the validators shared by the
generators and the command line tools: replication balance, pair
concurrence, coverage, and connectivity of every generation prefix.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from ._util import FileFormatError, atomic_write_text, parse_bool, parse_int

__all__ = [
    "DesignConfig",
    "Block",
    "Design",
    "ValidationReport",
    "lambda_of",
    "required_blocks",
    "min_connect_blocks",
    "max_faculty_reviews",
    "recount",
    "is_connected",
    "validate",
    "write_design",
    "read_design",
]


def lambda_of(r: int, k: int, t: int) -> Fraction:
    """Pair concurrence forced by (r, k, t) in a fully balanced design.

    Each of a poster's r reviews pairs it with k-1 companions, and those
    r(k-1) companion slots must be shared equally by the other t-1
    posters, so every pair must meet exactly r(k-1)/(t-1) times.  The
    value is returned as an exact rational; a balanced design can only
    exist when it is an integer (``result.denominator == 1``).
    """
    if t < 2:
        raise ValueError(f"need at least 2 posters, got t={t}")
    if k < 2:
        raise ValueError(f"block size must be at least 2, got k={k}")
    if r < 1:
        raise ValueError(f"replicate count must be at least 1, got r={r}")
    return Fraction(r * (k - 1), t - 1)


def required_blocks(t: int, r: int, k: int) -> Fraction:
    """Judges needed so every one of t posters is reviewed r times, k per judge.

    Returns the exact rational t*r/k; the plan is realizable with equal
    replication only when it is an integer (``result.denominator == 1``).
    """
    if t < 1 or r < 1:
        raise ValueError(f"counts must be positive, got t={t}, r={r}")
    if k < 1:
        raise ValueError(f"block size must be positive, got k={k}")
    return Fraction(t * r, k)


def min_connect_blocks(t: int, k: int) -> int:
    """Leading blocks needed to guarantee coverage and connectivity.

    ceil(t / (k-1)): the first block reaches k posters and each later
    block anchors on a reviewed poster, reaching at most k-1 new ones.
    Deliberately one more than the tight bound ceil((t-1)/(k-1)) would
    give in some cases, trading a block of slack for a simpler rule.
    """
    if not 2 <= k <= t:
        raise ValueError(f"need 2 <= k <= t, got k={k}, t={t}")
    return -(-t // (k - 1))


def max_faculty_reviews(t: int, k: int) -> int:
    """Per-poster review cap while the first min_connect_blocks blocks fill.

    ceil(b_min * k / t): the faculty phase hands out b_min*k reviews, so
    capping each poster near the average keeps the phase balanced.
    """
    b_min = min_connect_blocks(t, k)
    return -(-(b_min * k) // t)


@dataclass(frozen=True)
class DesignConfig:
    """Problem dimensions and generation parameters.

    t posters, k reviews per judge, b judges to generate.  seed feeds the
    PCG64 stream used by the generators; max_attempts bounds consecutive
    rejected candidates for one block before a full restart.
    faculty_count overrides how many leading blocks carry the faculty
    flag; None means min_connect_blocks(t, k).
    """

    t: int
    k: int
    b: int
    seed: int = 0
    max_attempts: int = 500
    faculty_count: int | None = None

    def __post_init__(self) -> None:
        if self.t < 2:
            raise ValueError(f"need at least 2 posters, got t={self.t}")
        if not 2 <= self.k <= self.t:
            raise ValueError(f"need 2 <= k <= t, got k={self.k}, t={self.t}")
        if self.b < 1:
            raise ValueError(f"need at least 1 block, got b={self.b}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be positive")
        if self.faculty_count is not None and self.faculty_count < 0:
            raise ValueError("faculty_count must be >= 0")

    @property
    def b_min(self) -> int:
        return min_connect_blocks(self.t, self.k)

    @property
    def r_f(self) -> int:
        return max_faculty_reviews(self.t, self.k)

    @property
    def faculty_blocks(self) -> int:
        return self.b_min if self.faculty_count is None else self.faculty_count


@dataclass(frozen=True)
class Block:
    """One judge's assignment: an ordered tuple of distinct poster ids."""

    judge_index: int
    poster_ids: tuple[int, ...]
    faculty: bool


@dataclass
class Design:
    """An ordered block sequence plus incrementally maintained tallies.

    replication[i] counts reviews of poster i; concurrence[i, j] counts
    blocks containing both i and j (zero diagonal).  The generators keep
    both arrays in lockstep with blocks; recount() re-derives them from
    scratch and must agree exactly.  Treat every field as read-only.
    """

    config: DesignConfig
    blocks: tuple[Block, ...]
    replication: np.ndarray
    concurrence: np.ndarray

    @classmethod
    def from_blocks(cls, config: DesignConfig, blocks: Iterable[Block]) -> "Design":
        blocks = tuple(blocks)
        _check_blocks(config, blocks)
        replication, concurrence = _recount(config.t, blocks)
        return cls(config, blocks, replication, concurrence)

    @property
    def t(self) -> int:
        return self.config.t

    @property
    def k(self) -> int:
        return self.config.k

    @property
    def b(self) -> int:
        return len(self.blocks)


@dataclass(frozen=True)
class ValidationReport:
    """Structural summary of a design.

    connected means every poster is reviewed and the co-review graph
    forms a single component; all_prefixes_connected applies the
    reviewed-posters-only rule to every prefix of the block sequence;
    faculty_coverage_ok requires every poster to appear in at least one
    faculty-flagged block once b reaches min_connect_blocks (vacuously
    true for shorter designs).
    """

    replication_spread: int
    max_concurrence: int
    connected: bool
    all_prefixes_connected: bool
    covered: bool
    faculty_coverage_ok: bool


def _check_blocks(config: DesignConfig, blocks: Sequence[Block]) -> None:
    if len(blocks) != config.b:
        raise ValueError(f"expected {config.b} blocks, got {len(blocks)}")
    for position, block in enumerate(blocks):
        if block.judge_index != position:
            raise ValueError(
                f"blocks must be in generation order: judge_index {block.judge_index} at position {position}"
            )
        if len(block.poster_ids) != config.k:
            raise ValueError(f"block {position} has {len(block.poster_ids)} posters, expected {config.k}")
        if len(set(block.poster_ids)) != config.k:
            raise ValueError(f"block {position} repeats a poster")
        for poster in block.poster_ids:
            if not 0 <= poster < config.t:
                raise ValueError(f"block {position} references poster {poster} outside [0, {config.t})")


def _recount(t: int, blocks: Sequence[Block]) -> tuple[np.ndarray, np.ndarray]:
    replication = np.zeros(t, dtype=np.int64)
    concurrence = np.zeros((t, t), dtype=np.int64)
    for block in blocks:
        ids = block.poster_ids
        for position, a in enumerate(ids):
            replication[a] += 1
            for other in ids[position + 1 :]:
                concurrence[a, other] += 1
                concurrence[other, a] += 1
    return replication, concurrence


def recount(design: Design) -> tuple[np.ndarray, np.ndarray]:
    """Recompute replication and concurrence from the blocks alone.

    Brute-force tally over every block and every within-block pair; the
    oracle for the incrementally maintained Design fields.
    """
    return _recount(design.t, design.blocks)


class _UnionFind:
    """Disjoint sets over 0..n-1 with path compression and union by size."""

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a: int, b: int) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        return True


def _prefix_connected_flags(design: Design) -> list[bool]:
    """For every prefix length 1..b, whether reviewed posters form one component.

    Single incremental pass: edges only accumulate as the prefix grows,
    so the component count among seen posters is (#seen - #merges).
    """
    uf = _UnionFind(design.t)
    seen = np.zeros(design.t, dtype=bool)
    seen_count = 0
    merges = 0
    flags: list[bool] = []
    for block in design.blocks:
        ids = block.poster_ids
        for poster in ids:
            if not seen[poster]:
                seen[poster] = True
                seen_count += 1
        first = ids[0]
        for other in ids[1:]:
            if uf.union(first, other):
                merges += 1
        flags.append(seen_count - merges == 1)
    return flags


def is_connected(design: Design, prefix_len: int | None = None) -> bool:
    """True when the posters reviewed in the first prefix_len blocks form one component.

    Vertices are the posters with at least one review inside the prefix;
    edges join posters sharing a block.  Posters the prefix never touches
    are excluded, so a prefix can be connected before full coverage.
    prefix_len defaults to the full design.
    """
    b = len(design.blocks)
    if prefix_len is None:
        prefix_len = b
    if not 1 <= prefix_len <= b:
        raise ValueError(f"prefix_len must be in [1, {b}], got {prefix_len}")
    uf = _UnionFind(design.t)
    seen: set[int] = set()
    merges = 0
    for block in design.blocks[:prefix_len]:
        ids = block.poster_ids
        seen.update(ids)
        first = ids[0]
        for other in ids[1:]:
            if uf.union(first, other):
                merges += 1
    return len(seen) - merges == 1


def validate(design: Design) -> ValidationReport:
    """Compute the structural report: balance, concurrence, coverage, connectivity."""
    t, k, b = design.t, design.k, design.b
    replication = design.replication
    total_reviews = int(replication.sum())
    if total_reviews != b * k:
        raise RuntimeError(f"replication total {total_reviews} != b*k = {b * k}; tallies corrupted")
    pair_total = int(design.concurrence.sum())
    if pair_total != b * k * (k - 1):
        raise RuntimeError(f"concurrence total {pair_total} != b*k*(k-1) = {b * k * (k - 1)}; tallies corrupted")

    flags = _prefix_connected_flags(design)
    covered = bool(replication.min() >= 1)
    b_min = design.config.b_min
    if b < b_min:
        faculty_coverage_ok = True
    else:
        in_faculty = np.zeros(t, dtype=bool)
        for block in design.blocks:
            if block.faculty:
                in_faculty[list(block.poster_ids)] = True
        faculty_coverage_ok = bool(in_faculty.all())
    return ValidationReport(
        replication_spread=int(replication.max() - replication.min()),
        max_concurrence=int(design.concurrence.max()),
        connected=covered and flags[-1],
        all_prefixes_connected=all(flags),
        covered=covered,
        faculty_coverage_ok=faculty_coverage_ok,
    )


def write_design(path: str, design: Design) -> None:
    """Write the design as CSV: judge_index,faculty,poster_1,...,poster_k."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["judge_index", "faculty"] + [f"poster_{i + 1}" for i in range(design.k)])
    for block in design.blocks:
        writer.writerow([block.judge_index, "true" if block.faculty else "false"] + list(block.poster_ids))
    atomic_write_text(path, buffer.getvalue())


def read_design(
    path: str,
    t: int | None = None,
    seed: int = 0,
    max_attempts: int = 500,
) -> Design:
    """Read a design CSV back into memory.

    t may be omitted for designs that cover all posters, in which case it
    is inferred as max poster id + 1.  The stream seed is not stored in
    the file; pass the original seed if the design is to be extended
    reproducibly.  Faculty flags must mark a leading run of blocks.
    """
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise FileFormatError(path, None, "empty file")
    header = rows[0]
    if len(header) < 3 or header[:2] != ["judge_index", "faculty"]:
        raise FileFormatError(path, 1, "header must start with judge_index,faculty,poster_1,...")
    k = len(header) - 2
    if header[2:] != [f"poster_{i + 1}" for i in range(k)]:
        raise FileFormatError(path, 1, "poster columns must be named poster_1..poster_k")
    if not rows[1:]:
        raise FileFormatError(path, None, "no blocks")

    parsed: list[tuple[int, bool, list[int]]] = []
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != k + 2:
            raise FileFormatError(path, number, f"expected {k + 2} columns, got {len(row)}")
        judge = parse_int(row[0], path, number, "judge_index")
        faculty = parse_bool(row[1], path, number, "faculty")
        posters = [parse_int(cell, path, number, f"poster_{j + 1}") for j, cell in enumerate(row[2:])]
        parsed.append((judge, faculty, posters))

    if t is None:
        t = 1 + max(max(posters) for _, _, posters in parsed)

    blocks: list[Block] = []
    faculty_run_over = False
    for number, (judge, faculty, posters) in enumerate(parsed, start=2):
        position = number - 2
        if judge != position:
            if judge in [b.judge_index for b in blocks]:
                raise FileFormatError(path, number, f"duplicate judge_index {judge}")
            raise FileFormatError(path, number, f"judge_index {judge} out of order (expected {position})")
        if len(set(posters)) != k:
            raise FileFormatError(path, number, "duplicate poster within the block")
        for poster in posters:
            if not 0 <= poster < t:
                raise FileFormatError(path, number, f"poster id {poster} outside [0, {t})")
        if faculty and faculty_run_over:
            raise FileFormatError(path, number, "faculty flags must mark a leading run of blocks")
        if not faculty:
            faculty_run_over = True
        blocks.append(Block(judge_index=position, poster_ids=tuple(posters), faculty=faculty))

    faculty_count = sum(1 for block in blocks if block.faculty)
    config = DesignConfig(
        t=t,
        k=k,
        b=len(blocks),
        seed=seed,
        max_attempts=max_attempts,
        faculty_count=faculty_count,
    )
    return Design.from_blocks(config, blocks)
