"""Score models: fixed-judge and random-judge fits with population marginal means.

Both fits estimate mu + P_i for every reviewed poster under
score = mu + poster effect + judge effect + noise, identified by
sum-to-zero constraints.  fit_fixed treats judges as fixed nuisance
columns and therefore needs a connected co-review graph.  fit_random
treats judges as draws from N(0, var_judge); the variance components
come from restricted maximum likelihood profiled down to the single
ratio theta = var_judge / var_error, which keeps the search
one-dimensional, robust, and able to land on the theta = 0 boundary.

The judge covariance never materializes as an n-by-n matrix: each
judge's block of I + theta*ones inverts in closed form, so the weighted
cross-products reduce to a handful of per-group-size matrices and every
candidate theta costs one Cholesky factorization of the poster system.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize_scalar

from ._util import FileFormatError, atomic_write_text, format_float, parse_float, parse_int
from .design import Design

__all__ = [
    "ScoreTable",
    "FitResult",
    "DisconnectedDesign",
    "SingularFit",
    "fit_fixed",
    "fit_random",
    "rank_posters",
    "reml_criterion",
    "read_scores",
    "write_scores",
    "write_fit",
    "write_fit_summary",
]

_LOG_2PI = math.log(2.0 * math.pi)
_THETA_MAX = 1e6
_COND_LIMIT = 1e12


class DisconnectedDesign(RuntimeError):
    """The observed co-review graph splits into two or more components."""


class SingularFit(RuntimeError):
    """The model cannot be estimated from the supplied observations."""


@dataclass(frozen=True)
class ScoreTable:
    """Long-form (judge, poster, score) observations over t posters and b judges."""

    judges: np.ndarray
    posters: np.ndarray
    scores: np.ndarray
    t: int
    b: int

    def __post_init__(self) -> None:
        judges = np.asarray(self.judges, dtype=np.int64)
        posters = np.asarray(self.posters, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        object.__setattr__(self, "judges", judges)
        object.__setattr__(self, "posters", posters)
        object.__setattr__(self, "scores", scores)
        if judges.ndim != 1 or judges.shape != posters.shape or judges.shape != scores.shape:
            raise ValueError("judges, posters, and scores must be equal-length 1-D arrays")
        if judges.size == 0:
            raise ValueError("need at least one observation")
        if self.t < 1 or self.b < 1:
            raise ValueError("dimensions t and b must be positive")
        if judges.min() < 0 or judges.max() >= self.b:
            raise ValueError(f"judge index outside [0, {self.b})")
        if posters.min() < 0 or posters.max() >= self.t:
            raise ValueError(f"poster id outside [0, {self.t})")
        if not np.isfinite(scores).all():
            raise ValueError("scores must be finite")
        pairs = judges * self.t + posters
        if np.unique(pairs).size != pairs.size:
            raise ValueError("duplicate (judge, poster) observation")

    @property
    def n(self) -> int:
        return int(self.judges.size)

    @classmethod
    def from_observations(
        cls,
        observations: Iterable[tuple[int, int, float]],
        t: int,
        b: int,
        design: Design | None = None,
    ) -> "ScoreTable":
        """Build from (judge_index, poster_id, score) triples.

        When a design is supplied, every observation must correspond to
        one of its (judge, poster) incidences.
        """
        rows = list(observations)
        judges = np.array([row[0] for row in rows], dtype=np.int64)
        posters = np.array([row[1] for row in rows], dtype=np.int64)
        scores = np.array([row[2] for row in rows], dtype=np.float64)
        table = cls(judges, posters, scores, t=t, b=b)
        if design is not None:
            incident = {
                (block.judge_index, poster) for block in design.blocks for poster in block.poster_ids
            }
            for judge, poster in zip(table.judges, table.posters):
                if (int(judge), int(poster)) not in incident:
                    raise ValueError(f"observation (judge {judge}, poster {poster}) is not in the design")
        return table

    @classmethod
    def from_design_matrix(cls, design: Design, matrix: np.ndarray) -> "ScoreTable":
        """Select the design's observed cells from a full t-by-b score matrix."""
        matrix = np.asarray(matrix, dtype=np.float64)
        if matrix.shape != (design.t, design.b):
            raise ValueError(f"matrix shape {matrix.shape} does not match (t={design.t}, b={design.b})")
        judges = np.empty(design.b * design.k, dtype=np.int64)
        posters = np.empty(design.b * design.k, dtype=np.int64)
        cursor = 0
        for block in design.blocks:
            for poster in block.poster_ids:
                judges[cursor] = block.judge_index
                posters[cursor] = poster
                cursor += 1
        return cls(judges, posters, matrix[posters, judges], t=design.t, b=design.b)


@dataclass(frozen=True)
class FitResult:
    """Per-poster estimates from one model fit.

    pmm and se are length-t with NaN for unreviewed posters; rank is
    length-t with 1 = best and 0 marking unranked (unreviewed) posters.
    var_judge is NaN for the fixed model, whose judge effects are not
    variance components.  condition_number diagnoses the final solve.
    """

    model_kind: str
    grand_mean: float
    pmm: np.ndarray
    se: np.ndarray
    rank: np.ndarray
    var_judge: float
    var_error: float
    converged: bool
    condition_number: float


def _ranks_desc(values: np.ndarray, eligible: np.ndarray) -> np.ndarray:
    """Dense ranks, 1 = largest value, ties broken by ascending index."""
    ids = np.flatnonzero(eligible)
    order = ids[np.lexsort((ids, -values[ids]))]
    ranks = np.zeros(values.shape[0], dtype=np.int64)
    ranks[order] = np.arange(1, order.size + 1)
    return ranks


def rank_posters(fit: FitResult, top_m: int) -> list[int]:
    """Ids of the top_m posters by pmm, best first; ties go to the lower id."""
    reviewed = np.flatnonzero(fit.rank > 0)
    if not 0 <= top_m <= reviewed.size:
        raise ValueError(f"top_m must be in [0, {reviewed.size}], got {top_m}")
    order = np.empty(reviewed.size, dtype=np.int64)
    order[fit.rank[reviewed] - 1] = reviewed
    return [int(poster) for poster in order[:top_m]]


def _check_table(design: Design, scores: ScoreTable) -> None:
    if scores.t != design.t or scores.b != design.b:
        raise ValueError(
            f"score table dimensions (t={scores.t}, b={scores.b}) do not match the design "
            f"(t={design.t}, b={design.b})"
        )


def _observed_connected(judges: np.ndarray, posters: np.ndarray, t: int) -> bool:
    """Whether the posters appearing in the observations form one component."""
    parent = list(range(t))

    def find(x: int) -> int:
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    order = np.argsort(judges, kind="stable")
    seen: set[int] = set()
    merges = 0
    cursor = 0
    n = judges.size
    while cursor < n:
        judge = judges[order[cursor]]
        first = int(posters[order[cursor]])
        seen.add(first)
        cursor += 1
        while cursor < n and judges[order[cursor]] == judge:
            poster = int(posters[order[cursor]])
            seen.add(poster)
            ra, rb = find(first), find(poster)
            if ra != rb:
                parent[rb] = ra
                merges += 1
            cursor += 1
    return len(seen) - merges == 1


def _fixed_solution(design: Design, scores: ScoreTable) -> dict:
    """Solve the fixed-effects system; returns estimates plus residual internals."""
    _check_table(design, scores)
    judges, posters, y = scores.judges, scores.posters, scores.scores
    if not _observed_connected(judges, posters, scores.t):
        raise DisconnectedDesign(
            "the observed co-review graph is not connected; poster contrasts are not estimable"
        )
    reviewed = np.unique(posters)
    judges_present = np.unique(judges)
    n = y.size
    t_r = reviewed.size
    b_r = judges_present.size
    p = t_r + b_r - 1
    dof = n - p
    if dof < 1:
        raise SingularFit("no residual degrees of freedom for the error variance")

    poster_col = np.searchsorted(reviewed, posters)
    judge_col = np.searchsorted(judges_present, judges)
    rows = np.arange(n)
    design_matrix = np.zeros((n, p))
    design_matrix[rows, poster_col] = 1.0
    interior = judge_col < b_r - 1
    design_matrix[rows[interior], t_r + judge_col[interior]] = 1.0
    design_matrix[rows[~interior], t_r:] = -1.0

    center = float(y.mean())
    centered = y - center
    q, r_factor = np.linalg.qr(design_matrix)
    diagonal = np.abs(np.diag(r_factor))
    if diagonal.min() <= diagonal.max() * 1e-12:
        raise SingularFit("rank-deficient fixed-model system")
    beta = solve_triangular(r_factor, q.T @ centered)
    fitted = design_matrix @ beta
    residuals = centered - fitted
    rss = float(residuals @ residuals)
    sigma2 = rss / dof
    r_inv = solve_triangular(r_factor, np.eye(p))
    variance_diag = sigma2 * np.einsum("ij,ij->i", r_inv, r_inv)
    condition = float(np.linalg.cond(r_factor))
    if not np.isfinite(condition) or condition > _COND_LIMIT:
        raise SingularFit(f"ill-conditioned fixed-model system (condition {condition:.3e})")
    return {
        "reviewed": reviewed,
        "judges_present": judges_present,
        "poster_estimates": beta[:t_r] + center,
        "poster_variances": variance_diag[:t_r],
        "beta": beta,
        "residuals": residuals,
        "sigma2": sigma2,
        "dof": dof,
        "condition": condition,
    }


def fit_fixed(design: Design, scores: ScoreTable) -> FitResult:
    """Ordinary least squares with posters and judges as fixed factors.

    Population marginal means are estimated directly as the poster cell
    means adjusted for sum-to-zero judge effects; with this coding the
    poster coefficients ARE mu + P_i, so no contrast post-processing is
    needed.  Posters without observations receive NaN estimates and
    rank 0 rather than failing the whole fit.
    """
    solution = _fixed_solution(design, scores)
    reviewed = solution["reviewed"]
    pmm = np.full(design.t, np.nan)
    se = np.full(design.t, np.nan)
    pmm[reviewed] = solution["poster_estimates"]
    se[reviewed] = np.sqrt(np.maximum(solution["poster_variances"], 0.0))
    eligible = np.zeros(design.t, dtype=bool)
    eligible[reviewed] = True
    return FitResult(
        model_kind="fixed",
        grand_mean=float(solution["poster_estimates"].mean()),
        pmm=pmm,
        se=se,
        rank=_ranks_desc(np.where(eligible, pmm, -np.inf), eligible),
        var_judge=float("nan"),
        var_error=float(solution["sigma2"]),
        converged=True,
        condition_number=solution["condition"],
    )


@dataclass
class _SizeGroup:
    """Sufficient statistics for all judges sharing one block size."""

    size: int
    count: int
    cross: np.ndarray  # sum over judges of g g^T, where g is the 0/1 incidence column
    weighted: np.ndarray  # sum over judges of (judge score total) * g
    square: float  # sum over judges of (judge score total)^2


@dataclass
class _RandomTerms:
    """Precomputed pieces of X' H(theta)^-1 X, X' H^-1 y, and y' H^-1 y.

    H = I + theta Z Z' is block diagonal per judge, and each block's
    inverse is I - theta/(1 + theta*s) * ones, so every quantity is an
    affine combination of theta-free statistics grouped by judge size s.
    """

    reviewed: np.ndarray
    counts: np.ndarray
    v0: np.ndarray
    q0: float
    groups: list[_SizeGroup]
    n: int
    p: int
    center: float


def _random_terms(scores: ScoreTable) -> _RandomTerms:
    posters, judges, y = scores.posters, scores.judges, scores.scores
    reviewed, poster_col = np.unique(posters, return_inverse=True)
    judges_present, judge_col = np.unique(judges, return_inverse=True)
    p = reviewed.size
    b_r = judges_present.size
    center = float(y.mean())
    centered = y - center

    counts = np.bincount(poster_col, minlength=p).astype(np.float64)
    v0 = np.bincount(poster_col, weights=centered, minlength=p)
    q0 = float(centered @ centered)
    sizes = np.bincount(judge_col, minlength=b_r)
    judge_totals = np.bincount(judge_col, weights=centered, minlength=b_r)

    groups: list[_SizeGroup] = []
    for size in sorted(set(int(s) for s in sizes)):
        members = np.flatnonzero(sizes == size)
        selector = np.isin(judge_col, members)
        local_judge = np.searchsorted(members, judge_col[selector])
        incidence = np.zeros((p, members.size))
        incidence[poster_col[selector], local_judge] = 1.0
        totals = judge_totals[members]
        groups.append(
            _SizeGroup(
                size=size,
                count=int(members.size),
                cross=incidence @ incidence.T,
                weighted=incidence @ totals,
                square=float(totals @ totals),
            )
        )
    return _RandomTerms(
        reviewed=reviewed,
        counts=counts,
        v0=v0,
        q0=q0,
        groups=groups,
        n=int(y.size),
        p=int(p),
        center=center,
    )


def _solve_system(terms: _RandomTerms, theta: float) -> tuple[np.ndarray, float, np.ndarray, float]:
    """Solve the GLS normal equations at a fixed theta.

    Returns (poster estimates on centered data, residual sum of squares
    under H(theta)^-1 weighting, Cholesky factor of the poster
    information matrix, log det H).
    """
    system = np.diag(terms.counts)
    rhs = terms.v0.copy()
    quadratic = terms.q0
    logdet_h = 0.0
    for group in terms.groups:
        shrink = theta / (1.0 + theta * group.size)
        if shrink != 0.0:
            system -= shrink * group.cross
            rhs = rhs - shrink * group.weighted
            quadratic -= shrink * group.square
        logdet_h += group.count * math.log1p(theta * group.size)
    try:
        factor = np.linalg.cholesky(system)
    except np.linalg.LinAlgError:
        raise SingularFit("singular generalized least squares system") from None
    beta = cho_solve((factor, True), rhs)
    rss = quadratic - float(rhs @ beta)
    return beta, rss, factor, logdet_h


def _profiled_neg2(terms: _RandomTerms, theta: float) -> tuple[float, np.ndarray, float, np.ndarray]:
    """Restricted -2 log likelihood profiled over the error variance.

    Returns (criterion, poster estimates on centered data, sigma2 at the
    REML divisor, Cholesky factor of the poster information matrix).
    """
    beta, rss, factor, logdet_h = _solve_system(terms, theta)
    dof = terms.n - terms.p
    if rss <= 0.0 or not np.isfinite(rss):
        raise SingularFit("residual sum of squares vanished; error variance is not estimable")
    sigma2 = rss / dof
    logdet_a = 2.0 * float(np.log(np.diag(factor)).sum())
    criterion = dof * (_LOG_2PI + 1.0) + dof * math.log(sigma2) + logdet_h + logdet_a
    return float(criterion), beta, float(sigma2), factor


def reml_criterion(scores: ScoreTable, theta: float) -> float:
    """Profiled restricted log likelihood at the variance ratio theta.

    This is the exact objective fit_random maximizes, exposed so
    independent searches can compare candidate theta values.
    """
    if theta < 0:
        raise ValueError(f"theta must be >= 0, got {theta}")
    terms = _random_terms(scores)
    if terms.n - terms.p < 1:
        raise SingularFit("no residual degrees of freedom")
    return -0.5 * _profiled_neg2(terms, theta)[0]


def _search_theta(terms: _RandomTerms) -> tuple[float, bool]:
    """Bounded minimization of the profiled criterion over theta >= 0.

    The search runs in u = log1p(theta) with an absolute tolerance of
    1e-12, far below the documented 1e-8 relative target on theta; the
    boundary theta = 0 is always evaluated explicitly and wins ties.
    """

    def objective(u: float) -> float:
        return _profiled_neg2(terms, float(np.expm1(u)))[0]

    result = minimize_scalar(
        objective,
        bounds=(0.0, math.log1p(_THETA_MAX)),
        method="bounded",
        options={"xatol": 1e-12},
    )
    interior = float(np.expm1(result.x))
    at_zero = _profiled_neg2(terms, 0.0)[0]
    at_interior = _profiled_neg2(terms, interior)[0]
    theta = 0.0 if at_zero <= at_interior else interior
    return theta, bool(result.success)


def fit_random(design: Design, scores: ScoreTable) -> FitResult:
    """Posters fixed, judges random: REML variance components, then GLS.

    The restricted likelihood is profiled over theta = var_judge /
    var_error and maximized by a bounded one-dimensional search; theta =
    0 is an admissible boundary estimate.  Standard errors are plug-in
    GLS values at the estimated theta.  Works on disconnected designs:
    the random judge effects tie the components together.  Posters
    without observations receive NaN estimates and rank 0.
    """
    _check_table(design, scores)
    terms = _random_terms(scores)
    if terms.n - terms.p < 1:
        raise SingularFit("no residual degrees of freedom")
    beta0, rss0, factor0, _ = _solve_system(terms, 0.0)
    if rss0 <= 1e-12 * terms.q0:
        # interpolating data (e.g. constant scores): both variance
        # components vanish and the ratio is fixed at the boundary
        theta, converged = 0.0, True
        beta, sigma2, factor = beta0, 0.0, factor0
    else:
        theta, converged = _search_theta(terms)
        _, beta, sigma2, factor = _profiled_neg2(terms, theta)
    condition = float(np.linalg.cond(factor)) ** 2
    if not np.isfinite(condition) or condition > _COND_LIMIT:
        raise SingularFit(f"ill-conditioned GLS system (condition {condition:.3e})")
    inverse = cho_solve((factor, True), np.eye(terms.p))

    pmm = np.full(design.t, np.nan)
    se = np.full(design.t, np.nan)
    pmm[terms.reviewed] = beta + terms.center
    se[terms.reviewed] = np.sqrt(np.maximum(sigma2 * np.diag(inverse), 0.0))
    eligible = np.zeros(design.t, dtype=bool)
    eligible[terms.reviewed] = True
    return FitResult(
        model_kind="random",
        grand_mean=float((beta + terms.center).mean()),
        pmm=pmm,
        se=se,
        rank=_ranks_desc(np.where(eligible, pmm, -np.inf), eligible),
        var_judge=float(theta * sigma2),
        var_error=float(sigma2),
        converged=converged,
        condition_number=condition,
    )


def write_scores(path: str, table: ScoreTable) -> None:
    """Write observations as CSV: judge_index,poster_id,score."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["judge_index", "poster_id", "score"])
    for judge, poster, score in zip(table.judges, table.posters, table.scores):
        writer.writerow([int(judge), int(poster), format_float(score)])
    atomic_write_text(path, buffer.getvalue())


def read_scores(path: str, t: int, b: int, design: Design | None = None) -> ScoreTable:
    """Read a judge_index,poster_id,score CSV into a ScoreTable."""
    with open(path, "r", encoding="utf-8", newline="") as handle:
        rows = list(csv.reader(handle))
    if not rows:
        raise FileFormatError(path, None, "empty file")
    if rows[0] != ["judge_index", "poster_id", "score"]:
        raise FileFormatError(path, 1, "header must be judge_index,poster_id,score")
    observations: list[tuple[int, int, float]] = []
    for number, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise FileFormatError(path, number, f"expected 3 columns, got {len(row)}")
        observations.append(
            (
                parse_int(row[0], path, number, "judge_index"),
                parse_int(row[1], path, number, "poster_id"),
                parse_float(row[2], path, number, "score"),
            )
        )
    if not observations:
        raise FileFormatError(path, None, "no observations")
    try:
        return ScoreTable.from_observations(observations, t=t, b=b, design=design)
    except ValueError as error:
        raise FileFormatError(path, None, str(error)) from None


def write_fit(path: str, fit: FitResult) -> None:
    """Write per-poster estimates as CSV: poster_id,pmm,se,rank.

    Unreviewed posters keep their row with empty estimate cells so the
    file always has one row per poster id.
    """
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["poster_id", "pmm", "se", "rank"])
    for poster in range(fit.pmm.shape[0]):
        if fit.rank[poster] > 0:
            writer.writerow(
                [poster, format_float(fit.pmm[poster]), format_float(fit.se[poster]), int(fit.rank[poster])]
            )
        else:
            writer.writerow([poster, "", "", ""])
    atomic_write_text(path, buffer.getvalue())


def write_fit_summary(path: str, fit: FitResult) -> None:
    """Write the one-row sidecar: model_kind,grand_mean,var_judge,var_error,converged."""
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["model_kind", "grand_mean", "var_judge", "var_error", "converged"])
    var_judge = "" if math.isnan(fit.var_judge) else format_float(fit.var_judge)
    writer.writerow(
        [
            fit.model_kind,
            format_float(fit.grand_mean),
            var_judge,
            format_float(fit.var_error),
            "true" if fit.converged else "false",
        ]
    )
    atomic_write_text(path, buffer.getvalue())
