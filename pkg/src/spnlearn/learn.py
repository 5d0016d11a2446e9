"""Maximum-likelihood weight learning: PGD, EG, SMA and CCCP (EM).

The objective is the total training log-likelihood

    sum_m log f_S(x_m|w) - M log f_S(1|w)

over strictly positive weights. PGD, EG and SMA take a gradient step inside a
backtracking line search on unnormalised weights. CCCP maximises a concave
surrogate in closed form, which keeps the weights locally normalised and
needs no step size.
"""

from __future__ import annotations

import enum
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import StructureError, ZeroProbabilityInstance
from .graph import SpnGraph, check_weights
from .inference import (
    MARGINALIZED,
    evaluate,
    evaluate_and_differentiate,
    evaluate_flows,
    log_weight_gradients,
)

log = logging.getLogger(__name__)

# instances evaluated per numpy pass; bounds the (D, B) scratch arrays
BLOCK = 2048
MAX_BACKTRACKS = 30
# relative LL gain below which a line-search trial counts as rounding noise
LL_NOISE = 1e-13


class Algorithm(str, enum.Enum):
    PGD = "pgd"
    EG = "eg"
    SMA = "sma"
    CCCP = "cccp"


class StopReason(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITERS = "MaxIters"
    LINE_SEARCH_FAILED = "LineSearchFailed"


@dataclass(frozen=True)
class LearnerConfig:
    algorithm: Algorithm = Algorithm.CCCP
    max_iters: int = 50
    stop_tol: float = 0.001
    init_step: float = 1.0
    shrink: float = 0.8
    proj_margin: float = 0.01
    smoothing: float = 0.001
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "algorithm", Algorithm(self.algorithm))
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink must lie in (0, 1)")
        for name in ("stop_tol", "init_step", "proj_margin"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.smoothing < 0:
            raise ValueError("smoothing must be nonnegative")


@dataclass
class GradientPair:
    """Gradients of the data term (g1) and the partition term (g2) w.r.t. w."""

    g1: np.ndarray
    g2: np.ndarray

    @property
    def diff(self) -> np.ndarray:
        return self.g1 - self.g2


@dataclass
class LineSearchResult:
    w: np.ndarray
    gamma: float | None
    ll: float
    trials: int

    @property
    def failed(self) -> bool:
        return self.gamma is None


@dataclass
class TrainRun:
    algorithm: Algorithm
    num_instances: int
    ll_curve: list[float] = field(default_factory=list)   # mean LL per instance
    ll_total: list[float] = field(default_factory=list)
    gammas: list[float | None] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)
    weights: list[np.ndarray] = field(default_factory=list)
    final_w: np.ndarray | None = None
    stop_reason: StopReason = StopReason.MAX_ITERS
    wall_time: float = 0.0

    @property
    def iters_used(self) -> int:
        return len(self.ll_curve) - 1

    @property
    def final_ll(self) -> float:
        return self.ll_curve[-1]


# -- data plumbing ---------------------------------------------------------

@dataclass(frozen=True)
class Batch:
    """Training rows collapsed to unique assignments with multiplicities."""

    rows: np.ndarray          # (U, N)
    counts: np.ndarray        # (U,) float multiplicities
    first_index: np.ndarray   # (U,) first occurrence in the original data
    size: int                 # M, number of original instances


def as_batch(data) -> Batch:
    if isinstance(data, Batch):
        return data
    X = np.asarray(getattr(data, "rows", data))
    if X.ndim != 2 or X.shape[0] == 0:
        raise StructureError("training data must be a non-empty (M, N) matrix")
    rows, first, counts = np.unique(X, axis=0, return_index=True, return_counts=True)
    return Batch(rows, counts.astype(np.float64), first, X.shape[0])


def _chunks(m: int, threads: int) -> list[slice]:
    """Contiguous slices: ``threads`` shares, each split further into blocks."""
    threads = max(1, min(int(threads), m))
    bounds = np.linspace(0, m, threads + 1).astype(int)
    out = []
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        for b in range(lo, hi, BLOCK):
            out.append(slice(b, min(b + BLOCK, hi)))
    return out


def _pairwise_sum(parts: list) -> np.ndarray:
    while len(parts) > 1:
        nxt = [parts[i] + parts[i + 1] for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def _map_reduce(fn: Callable[[slice], np.ndarray], m: int, threads: int) -> np.ndarray:
    chunks = _chunks(m, threads)
    if threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return _pairwise_sum(parts)


def _zero_instance(batch: Batch, bad_rows: np.ndarray) -> ZeroProbabilityInstance:
    return ZeroProbabilityInstance(int(batch.first_index[bad_rows].min()))


def _data_term_and_counts(graph: SpnGraph, w, batch: Batch, threads: int) -> tuple[float, np.ndarray]:
    """sum_m log f_S(x_m|w) together with the expected edge counts."""

    def block(sl: slice) -> np.ndarray:
        logf, flows = evaluate_flows(graph, w, batch.rows[sl])
        bad = np.flatnonzero(np.isneginf(logf))
        if bad.size:
            raise _zero_instance(batch, bad + sl.start)
        cnt = batch.counts[sl]
        return np.append((flows * cnt).sum(axis=1), (logf * cnt).sum())

    out = _map_reduce(block, len(batch.rows), threads)
    return float(out[-1]), out[:-1]


def expected_counts(graph: SpnGraph, w, data, threads: int = 1) -> np.ndarray:
    """sum_m w_ij f_j(x_m) (df_S/df_i)(x_m) / f_S(x_m) for every edge d = (i, j).

    These are the EM sufficient statistics; dividing by w gives the gradient
    of the data term.
    """
    w = check_weights(graph, w)
    return _data_term_and_counts(graph, w, as_batch(data), threads)[1]


def batch_log_likelihood(graph: SpnGraph, w, batch: Batch, threads: int = 1) -> float:
    """Total log-likelihood of a collapsed batch; -inf if any row has probability zero."""

    def block(sl: slice) -> np.ndarray:
        logf = evaluate(graph, w, batch.rows[sl]).log_root
        return np.array([(logf * batch.counts[sl]).sum()])

    with np.errstate(invalid="ignore"):
        total = float(_map_reduce(block, len(batch.rows), threads)[0])
    if not np.isfinite(total):
        return -np.inf
    marg = np.full(graph.num_vars, MARGINALIZED, dtype=np.int8)
    return total - batch.size * evaluate(graph, w, marg).log_root


# -- objective -------------------------------------------------------------

def gradient(graph: SpnGraph, w, data, threads: int = 1) -> GradientPair:
    """Gradient of the data and partition terms of the total log-likelihood."""
    graph.require_valid()
    w = check_weights(graph, w, strict=True)
    batch = as_batch(data)
    g1 = expected_counts(graph, w, batch, threads) / w
    marg = np.full(graph.num_vars, MARGINALIZED, dtype=np.int8)
    tr = evaluate_and_differentiate(graph, w, marg)
    g2 = batch.size * np.exp(log_weight_gradients(graph, tr) - tr.log_root)
    return GradientPair(g1, g2)


def first_zero_instance(graph: SpnGraph, w, data) -> int | None:
    batch = as_batch(data)
    logf = evaluate(graph, w, batch.rows).log_root
    bad = np.flatnonzero(np.isneginf(logf))
    return _zero_instance(batch, bad).index if bad.size else None


# -- update rules ----------------------------------------------------------

def pgd_step(w, grad: GradientPair, gamma: float, proj_margin: float = 0.01) -> np.ndarray:
    """Additive ascent step, then Euclidean projection onto {w >= margin}."""
    return np.maximum(np.asarray(w) + gamma * grad.diff, proj_margin)


def eg_step(w, grad: GradientPair, gamma: float) -> np.ndarray:
    """Exponentiated gradient: w * exp(gamma * grad). May overflow to inf."""
    with np.errstate(over="ignore", under="ignore"):
        return np.asarray(w) * np.exp(gamma * grad.diff)


def sma_step(w, grad: GradientPair, gamma: float) -> np.ndarray:
    """Gradient step on log-weights: w * exp(gamma * w * grad)."""
    w = np.asarray(w)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        return w * np.exp(gamma * w * grad.diff)


def line_search(
    graph: SpnGraph,
    data,
    w,
    step_fn: Callable[[np.ndarray, float], np.ndarray],
    gamma0: float = 1.0,
    shrink: float = 0.8,
    max_trials: int = MAX_BACKTRACKS,
    ll0: float | None = None,
) -> LineSearchResult:
    """Backtrack gamma0 * shrink**k until the log-likelihood strictly improves.

    Candidates with a non-finite or nonpositive weight are rejected outright,
    and so are gains within rounding noise of ``ll0`` (relative 1e-13).
    On failure the original weights come back with ``gamma=None``.
    """
    if gamma0 <= 0:
        raise ValueError("gamma0 must be positive")
    w = np.asarray(w, dtype=np.float64)
    batch = as_batch(data)
    if ll0 is None:
        ll0 = batch_log_likelihood(graph, w, batch)
    floor = ll0 + LL_NOISE * max(1.0, abs(ll0))
    gamma = gamma0
    for k in range(max_trials):
        cand = step_fn(w, gamma)
        if np.all(np.isfinite(cand)) and np.all(cand > 0):
            ll = batch_log_likelihood(graph, cand, batch)
            if ll > floor:
                return LineSearchResult(cand, gamma, ll, k + 1)
        gamma *= shrink
    return LineSearchResult(w, None, ll0, max_trials)


def normalize_locally(graph: SpnGraph, w) -> np.ndarray:
    """Equivalent weights that sum to one at every sum node.

    w'_ij is proportional to w_ij * f_j(1|w); the distribution is unchanged and
    the partition function becomes 1.
    """
    graph.require_valid()
    w = check_weights(graph, w, strict=True)
    marg = np.full(graph.num_vars, MARGINALIZED, dtype=np.int8)
    logf = evaluate(graph, w, marg).log_value
    lw = np.log(w) + logf[graph.edge_child]
    return _normalize_groups(graph, lw)


def _normalize_groups(graph: SpnGraph, lw: np.ndarray) -> np.ndarray:
    starts = graph.group_starts
    m = np.maximum.reduceat(lw, starts)
    shifted = np.exp(lw - m[graph.edge_group])
    return shifted / np.add.reduceat(shifted, starts)[graph.edge_group]


def cccp_step(graph: SpnGraph, w, data, smoothing: float = 0.001, threads: int = 1) -> np.ndarray:
    """Closed-form CCCP update, identical to one EM step.

    Expected edge counts w_ij * sum_m f_j(x_m) df_S/df_i(x_m) / f_S(x_m) are
    summed over the batch, smoothed additively, and renormalised per sum
    node. A sum node that receives no mass at all keeps its current
    (renormalised) weights.
    """
    graph.require_valid()
    w = check_weights(graph, w)
    return _renormalize(graph, w, expected_counts(graph, w, data, threads), smoothing)


def _renormalize(graph: SpnGraph, w: np.ndarray, counts: np.ndarray, smoothing: float) -> np.ndarray:
    counts = counts + smoothing
    starts, group = graph.group_starts, graph.edge_group
    totals = np.add.reduceat(counts, starts)
    empty = totals <= 0
    if np.any(empty):
        fallback = np.add.reduceat(w, starts)
        counts = np.where(empty[group], w, counts)
        totals = np.where(empty, fallback, totals)
    return counts / totals[group]


def init_weights(graph: SpnGraph, seed: int) -> np.ndarray:
    """Seeded uniform(0, 1] weights, locally normalised."""
    rng = np.random.default_rng(seed)
    return normalize_locally(graph, 1.0 - rng.random(graph.num_edges))


# -- driver ----------------------------------------------------------------

def _step_fn(algorithm: Algorithm, grad: GradientPair, margin: float):
    if algorithm is Algorithm.PGD:
        return lambda w, g: pgd_step(w, grad, g, margin)
    if algorithm is Algorithm.EG:
        return lambda w, g: eg_step(w, grad, g)
    return lambda w, g: sma_step(w, grad, g)


def train(
    graph: SpnGraph,
    data,
    config: LearnerConfig = LearnerConfig(),
    w0=None,
    threads: int = 1,
    keep_weights: bool = False,
) -> TrainRun:
    """Run one optimiser to convergence, recording the per-iteration curve.

    Stops when the mean log-likelihood per instance changes by less than
    ``stop_tol``, after ``max_iters`` iterations, or when the line search
    cannot find an improving step. Raises ZeroProbabilityInstance if any
    training instance has probability zero.
    """
    graph.require_valid()
    batch = as_batch(data)
    if batch.rows.shape[1] != graph.num_vars:
        raise StructureError(
            f"data has {batch.rows.shape[1]} columns, model has {graph.num_vars} variables"
        )
    m = batch.size
    algo = config.algorithm
    if w0 is None:
        w = init_weights(graph, config.seed)
    else:
        w = check_weights(graph, w0, strict=True).copy()
        if algo is Algorithm.CCCP:
            w = normalize_locally(graph, w)

    ll = batch_log_likelihood(graph, w, batch, threads)
    if not np.isfinite(ll):
        raise ZeroProbabilityInstance(first_zero_instance(graph, w, batch))

    run = TrainRun(algo, m)
    t0 = time.perf_counter()

    def record(ll_total: float, gamma: float | None) -> None:
        run.ll_total.append(ll_total)
        run.ll_curve.append(ll_total / m)
        run.gammas.append(gamma)
        run.wall_ms.append((time.perf_counter() - t0) * 1000.0)
        if keep_weights:
            run.weights.append(w.copy())

    record(ll, None)
    if algo is Algorithm.CCCP:
        counts = _data_term_and_counts(graph, w, batch, threads)[1]
    for k in range(config.max_iters):
        if algo is Algorithm.CCCP:
            # one pass at the new weights yields both its LL and the next step's counts
            w = _renormalize(graph, w, counts, config.smoothing)
            data_term, counts = _data_term_and_counts(graph, w, batch, threads)
            marg = np.full(graph.num_vars, MARGINALIZED, dtype=np.int8)
            new_ll = data_term - m * evaluate(graph, w, marg).log_root
            gamma = None
        else:
            grad = gradient(graph, w, batch, threads)
            res = line_search(
                graph, batch, w, _step_fn(algo, grad, config.proj_margin),
                config.init_step, config.shrink, ll0=ll,
            )
            if res.failed:
                run.stop_reason = StopReason.LINE_SEARCH_FAILED
                break
            w, new_ll, gamma = res.w, res.ll, res.gamma
        record(new_ll, gamma)
        log.debug("%s iter %d: mean LL %.6f", algo.value, k + 1, new_ll / m)
        converged = abs(new_ll - ll) / m < config.stop_tol
        ll = new_ll
        if converged:
            run.stop_reason = StopReason.CONVERGED
            break
    else:
        run.stop_reason = StopReason.MAX_ITERS

    run.final_w = w
    run.wall_time = time.perf_counter() - t0
    return run
