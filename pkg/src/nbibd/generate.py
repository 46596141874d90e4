"""Sequential generators for near-balanced and random judge assignments.

All randomness flows through numpy's PCG64 bit generator, so a seed and a
kind fully determine the output on every platform.  The near-balanced
generators build the design one judge at a time: within the first b_min
blocks each new judge is anchored to an already-reviewed poster (the
faculty phase) and the remaining slots always fill from the
least-reviewed posters upward.  nb1 additionally rejects any candidate
block that would let a pair of posters meet twice, erasing everything
and restarting once a single block exhausts its attempt budget.  The
random baseline only guarantees coverage: it drains the unreviewed pool,
then samples blocks uniformly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from .design import Block, Design, DesignConfig

__all__ = [
    "GeneratorKind",
    "GenerationTrace",
    "NB1InfeasibleBudget",
    "generate",
    "generate_random_baseline",
    "extend",
]


class GeneratorKind(str, Enum):
    NB1 = "nb1"
    NB2 = "nb2"
    RANDOM = "random"


@dataclass(frozen=True)
class GenerationTrace:
    """Bookkeeping from one generate() call.

    restarts counts full from-scratch restarts (always 0 for nb2 and
    random); rejected_blocks counts candidate blocks discarded by the
    pair-concurrence check; seed_used echoes the stream seed.
    """

    restarts: int
    rejected_blocks: int
    seed_used: int


class NB1InfeasibleBudget(RuntimeError):
    """The restart budget ran out before an nb1 design was completed."""


class _RestartSignal(Exception):
    def __init__(self, rejected: int):
        self.rejected = rejected


def _new_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _draw_anchor(replication: np.ndarray, r_f: int, rng: np.random.Generator) -> int:
    """First slot of a faculty-phase block: a reviewed poster, weighted by remaining capacity.

    Weight r_f - r_i; posters already at the cap are excluded.  Should
    every reviewed poster sit at the cap (possible only for degenerate
    shapes, never at realistic session sizes before block b_min), fall
    back to a uniform draw so the algorithm stays total.
    """
    reviewed = np.flatnonzero(replication > 0)
    weights = (r_f - replication[reviewed]).astype(np.float64)
    weights[weights < 0.0] = 0.0
    total = weights.sum()
    if total <= 0.0:
        return int(rng.choice(reviewed))
    return int(rng.choice(reviewed, p=weights / total))


def _fill_least_reviewed(
    replication: np.ndarray,
    members: list[int],
    k: int,
    rng: np.random.Generator,
) -> list[int]:
    """Complete a block by sampling from the least-reviewed stratum upward."""
    chosen = list(members)
    available = np.ones(replication.shape[0], dtype=bool)
    available[chosen] = False
    need = k - len(chosen)
    while need > 0:
        level = replication[available].min()
        candidates = np.flatnonzero(available & (replication == level))
        take = min(need, candidates.size)
        picks = rng.choice(candidates, size=take, replace=False)
        chosen.extend(int(p) for p in picks)
        available[picks] = False
        need -= take
    return chosen


def _draw_block(
    index: int,
    config: DesignConfig,
    replication: np.ndarray,
    rng: np.random.Generator,
) -> list[int]:
    if index == 0:
        return [int(p) for p in rng.choice(config.t, size=config.k, replace=False)]
    members: list[int] = []
    if index < config.b_min:
        members.append(_draw_anchor(replication, config.r_f, rng))
    return _fill_least_reviewed(replication, members, config.k, rng)


def _pair_conflict(concurrence: np.ndarray, members: list[int]) -> bool:
    for position, a in enumerate(members):
        row = concurrence[a]
        for b in members[position + 1 :]:
            if row[b]:
                return True
    return False


def _commit(
    index: int,
    members: list[int],
    faculty_blocks: int,
    replication: np.ndarray,
    concurrence: np.ndarray,
    blocks: list[Block],
) -> None:
    for position, a in enumerate(members):
        replication[a] += 1
        for b in members[position + 1 :]:
            concurrence[a, b] += 1
            concurrence[b, a] += 1
    blocks.append(Block(judge_index=index, poster_ids=tuple(members), faculty=index < faculty_blocks))


def _near_balanced_attempt(
    config: DesignConfig,
    check_pairs: bool,
    rng: np.random.Generator,
) -> tuple[list[Block], np.ndarray, np.ndarray, int]:
    replication = np.zeros(config.t, dtype=np.int64)
    concurrence = np.zeros((config.t, config.t), dtype=np.int64)
    blocks: list[Block] = []
    rejected = 0
    for index in range(config.b):
        discards = 0
        while True:
            members = _draw_block(index, config, replication, rng)
            if not check_pairs or not _pair_conflict(concurrence, members):
                break
            rejected += 1
            discards += 1
            if discards >= config.max_attempts:
                raise _RestartSignal(rejected)
        _commit(index, members, config.faculty_blocks, replication, concurrence, blocks)
    return blocks, replication, concurrence, rejected


def _random_baseline_blocks(
    config: DesignConfig,
    rng: np.random.Generator,
) -> tuple[list[Block], np.ndarray, np.ndarray]:
    if config.b * config.k < config.t:
        raise ValueError(
            f"cannot cover {config.t} posters with {config.b} blocks of size {config.k}"
        )
    replication = np.zeros(config.t, dtype=np.int64)
    concurrence = np.zeros((config.t, config.t), dtype=np.int64)
    blocks: list[Block] = []
    for index in range(config.b):
        unreviewed = np.flatnonzero(replication == 0)
        if unreviewed.size > 0:
            take = min(config.k, unreviewed.size)
            members = [int(p) for p in rng.choice(unreviewed, size=take, replace=False)]
            if take < config.k:
                reviewed = np.flatnonzero(replication > 0)
                fill = rng.choice(reviewed, size=config.k - take, replace=False)
                members.extend(int(p) for p in fill)
        else:
            members = [int(p) for p in rng.choice(config.t, size=config.k, replace=False)]
        _commit(index, members, config.faculty_blocks, replication, concurrence, blocks)
    return blocks, replication, concurrence


def generate(
    config: DesignConfig,
    kind: GeneratorKind | str,
    restart_budget: int = 50,
) -> tuple[Design, GenerationTrace]:
    """Generate a design of the requested kind from config.seed.

    nb1 discards candidate blocks that would let any poster pair meet
    twice; once one block accumulates config.max_attempts consecutive
    discards the whole design is erased and rebuilt.  The restart
    continues the same random stream, so a given seed still yields
    exactly one output.  After restart_budget restarts the parameter
    combination is deemed infeasible and NB1InfeasibleBudget is raised.
    """
    kind = GeneratorKind(kind)
    rng = _new_stream(config.seed)
    if kind is GeneratorKind.RANDOM:
        blocks, replication, concurrence = _random_baseline_blocks(config, rng)
        design = Design(config, tuple(blocks), replication, concurrence)
        return design, GenerationTrace(restarts=0, rejected_blocks=0, seed_used=config.seed)

    check_pairs = kind is GeneratorKind.NB1
    restarts = 0
    rejected_total = 0
    while True:
        try:
            blocks, replication, concurrence, rejected = _near_balanced_attempt(config, check_pairs, rng)
        except _RestartSignal as signal:
            rejected_total += signal.rejected
            restarts += 1
            if restarts > restart_budget:
                raise NB1InfeasibleBudget(
                    f"gave up after {restarts - 1} restarts at t={config.t}, k={config.k}, b={config.b}; "
                    f"a pairwise-concurrence-1 design likely does not exist for these parameters"
                ) from None
            continue
        design = Design(config, tuple(blocks), replication, concurrence)
        trace = GenerationTrace(
            restarts=restarts,
            rejected_blocks=rejected_total + rejected,
            seed_used=config.seed,
        )
        return design, trace


def generate_random_baseline(config: DesignConfig) -> Design:
    """Coverage-only baseline: drain the unreviewed pool, then sample uniformly.

    Identical to generate(config, "random") and exposed separately
    because it is the comparison arm of the simulation harness.
    """
    design, _ = generate(config, GeneratorKind.RANDOM)
    return design


def extend(design: Design, additional_blocks: int, kind: GeneratorKind | str) -> Design:
    """Append blocks to a design without touching the existing prefix.

    The continuation draws from a fresh PCG64 stream seeded by
    SeedSequence([config.seed, current block count]), so extension is
    deterministic without replaying the original generation.  An nb1
    extension raises NB1InfeasibleBudget as soon as one block exhausts
    max_attempts: restarting from scratch would revise the prefix, which
    this operation promises never to do.
    """
    kind = GeneratorKind(kind)
    if additional_blocks < 0:
        raise ValueError(f"additional_blocks must be >= 0, got {additional_blocks}")
    if additional_blocks == 0:
        return design

    config = design.config
    start = design.b
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=[config.seed, start])))
    replication = design.replication.copy()
    concurrence = design.concurrence.copy()
    blocks = list(design.blocks)
    check_pairs = kind is GeneratorKind.NB1

    for index in range(start, start + additional_blocks):
        if kind is GeneratorKind.RANDOM:
            unreviewed = np.flatnonzero(replication == 0)
            if unreviewed.size > 0:
                take = min(config.k, unreviewed.size)
                members = [int(p) for p in rng.choice(unreviewed, size=take, replace=False)]
                if take < config.k:
                    reviewed = np.flatnonzero(replication > 0)
                    fill = rng.choice(reviewed, size=config.k - take, replace=False)
                    members.extend(int(p) for p in fill)
            else:
                members = [int(p) for p in rng.choice(config.t, size=config.k, replace=False)]
        else:
            discards = 0
            while True:
                members = _draw_block(index, config, replication, rng)
                if not check_pairs or not _pair_conflict(concurrence, members):
                    break
                discards += 1
                if discards >= config.max_attempts:
                    raise NB1InfeasibleBudget(
                        f"no pair-compatible block found after {discards} attempts while extending "
                        f"block {index} at t={config.t}, k={config.k}"
                    )
        _commit(index, members, config.faculty_blocks, replication, concurrence, blocks)

    new_config = replace(config, b=start + additional_blocks)
    return Design(new_config, tuple(blocks), replication, concurrence)
