"""Two-stage selection: lazy-greedy retrieval and conditional ranking."""
from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .embeddings import SimilarityKernel
from .objective import (
    Gain,
    ObjectiveConfig,
    SelectionState,
    commit,
    marginal_gain,
    state_for,
)

log = logging.getLogger(__name__)

METHODS = ("dual_div", "div_s3", "div_star_s3", "div_s3_star", "random_similar")
# Stage 2 scores this close are ties; equal gains computed along different
# summation orders can differ in the last bits.
TIE_RTOL = 1e-12


class HeapEntry(NamedTuple):
    """Max-heap entry stored negated so ``heapq`` pops the largest gain first.

    Tuple order gives descending gain, then lowest candidate index.
    """

    neg_gain: float
    candidate: int
    epoch: int
    detail: Gain

    @property
    def stale_gain(self) -> float:
        return -self.neg_gain


@dataclass
class Stage1Result:
    selected: list[int]
    steps: list[dict] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    evaluations: int = 0


@dataclass
class SelectionReport:
    stage1: list[dict]
    stage2: list[dict]
    objective_trace: list[float]
    config_echo: dict
    warnings: list[str]
    per_query: list[dict] | None = None

    @property
    def stage1_indices(self) -> list[int]:
        return [s["index"] for s in self.stage1]

    @property
    def stage2_indices(self) -> list[int]:
        return [s["index"] for s in self.stage2]

    def to_dict(self) -> dict:
        out = {
            "stage1": self.stage1,
            "stage2": self.stage2,
            "objective_trace": self.objective_trace,
            "config": self.config_echo,
            "warnings": self.warnings,
        }
        if self.per_query is not None:
            out["per_query"] = self.per_query
        return out


def _check_universe(universe):
    universe = [int(u) for u in universe]
    if not universe:
        raise ValueError("selection universe is empty")
    if len(set(universe)) != len(universe):
        raise ValueError("selection universe has repeated indices")
    return universe


def _accept(result: Stage1Result, state: SelectionState, pick: Gain, candidate: int,
            kernel, universe, cfg: ObjectiveConfig) -> bool:
    """Commit ``candidate`` unless the negative-gain stop applies.  Returns False to stop."""
    if pick.gain < 0:
        msg = (f"negative best gain {pick.gain!r} at step {len(state.selected) + 1} "
               f"(candidate {candidate}); lambda={cfg.lam!r} exceeds the monotone regime")
        if not cfg.allow_negative_gain:
            result.warnings.append("early stop: " + msg)
            log.info("early stop: %s", msg)
            return False
        if not any(w.startswith("negative gain") for w in result.warnings):
            result.warnings.append("negative gain: " + msg)
            log.info("negative gain: %s", msg)
    commit(state, candidate, kernel, universe, cfg)
    result.selected.append(candidate)
    result.steps.append({
        "index": candidate,
        "gain": pick.gain,
        "coverage_delta": pick.coverage_delta,
        "diversity_delta": pick.diversity_delta,
    })
    result.objective_trace.append(state.coverage + cfg.lam * state.logdet)
    return True


def retrieve_stage1(kernel: SimilarityKernel, universe: Sequence[int],
                    config: ObjectiveConfig) -> Stage1Result:
    """Lazy greedy maximization of coverage + lambda * log-det under ``|S| <= k1``.

    A popped entry whose gain was computed against the current selection is
    committed directly.  Otherwise its gain is refreshed and it is committed
    only if it still beats the next heap head under the (gain desc, index asc)
    order, else reinserted with the refreshed gain.
    """
    universe = _check_universe(universe)
    cfg = config.for_stage(1)
    state = SelectionState.empty(len(universe))
    result = Stage1Result([])

    heap = []
    for x in universe:
        g = marginal_gain(state, x, kernel, universe, cfg)
        heap.append(HeapEntry(-g.gain, x, 0, g))
    result.evaluations = len(heap)
    heapq.heapify(heap)

    while heap and len(state.selected) < cfg.k1:
        top = heapq.heappop(heap)
        if top.epoch == state.epoch:
            pick = top.detail
        else:
            pick = marginal_gain(state, top.candidate, kernel, universe, cfg)
            result.evaluations += 1
            if heap and (pick.gain, -top.candidate) < (heap[0].stale_gain, -heap[0].candidate):
                heapq.heappush(heap, HeapEntry(-pick.gain, top.candidate, state.epoch, pick))
                continue
        if not _accept(result, state, pick, top.candidate, kernel, universe, cfg):
            break
    return result


def naive_greedy(kernel: SimilarityKernel, universe: Sequence[int],
                 config: ObjectiveConfig, *, full: bool = False):
    """Plain greedy: every remaining gain is recomputed each round."""
    universe = _check_universe(universe)
    cfg = config.for_stage(1)
    state = SelectionState.empty(len(universe))
    result = Stage1Result([])
    remaining = list(universe)
    while remaining and len(state.selected) < cfg.k1:
        best_x, best = None, None
        for x in remaining:
            g = marginal_gain(state, x, kernel, universe, cfg)
            result.evaluations += 1
            if best is None or g.gain > best.gain or (g.gain == best.gain and x < best_x):
                best_x, best = x, g
        if not _accept(result, state, best, best_x, kernel, universe, cfg):
            break
        remaining.remove(best_x)
    return result if full else result.selected


def stage2_scores(kernel_union: SimilarityKernel, S_star: Sequence[int], Q: Sequence[int],
                  universe: Sequence[int], config: ObjectiveConfig) -> list[tuple[int, float]]:
    """Singleton conditional gains ``f({x} + Q) - f(Q)``, sorted best first."""
    if len(S_star) == 0:
        raise ValueError("Stage 2 needs a nonempty candidate set")
    if len(Q) == 0:
        raise ValueError("Stage 2 needs a nonempty query set")
    cfg = config.for_stage(2)
    overlap = set(S_star) & set(Q)
    if overlap:
        raise ValueError(f"candidates {sorted(overlap)} also appear in the query set")
    base = state_for(kernel_union, universe, Q, cfg)
    return rank_scores([(int(x), marginal_gain(base, int(x), kernel_union, universe, cfg).gain)
                        for x in S_star])


def rank_scores(scored: list[tuple[int, float]]) -> list[tuple[int, float]]:
    """Sort by score descending; scores within ``TIE_RTOL`` of a run's leader go lowest index first."""
    scored = sorted(scored, key=lambda t: (-t[1], t[0]))
    out = []
    i = 0
    while i < len(scored):
        lead = scored[i][1]
        j = i + 1
        while j < len(scored) and lead - scored[j][1] <= TIE_RTOL * max(1.0, abs(lead)):
            j += 1
        out += sorted(scored[i:j])
        i = j
    return out


def rank_stage2(kernel_union: SimilarityKernel, S_star: Sequence[int], Q: Sequence[int],
                universe: Sequence[int], config: ObjectiveConfig) -> list[int]:
    """Top-``k`` candidates by singleton conditional gain, computed once."""
    scored = stage2_scores(kernel_union, S_star, Q, universe, config)
    return [x for x, _ in scored[:config.k]]


def random_stage1(corpus: Sequence[int], k1: int, seed: int) -> list[int]:
    corpus = _check_universe(corpus)
    rng = np.random.default_rng(seed)
    return [corpus[i] for i in rng.choice(len(corpus), size=min(k1, len(corpus)), replace=False)]


def mean_similarity_scores(kernel_union: SimilarityKernel, S: Sequence[int],
                           Q: Sequence[int]) -> list[tuple[int, float]]:
    if len(Q) == 0:
        raise ValueError("Stage 2 needs a nonempty query set")
    q = np.asarray(Q, dtype=np.intp)
    return rank_scores([(int(x), float(kernel_union.entries[x, q].mean())) for x in S])


def random_similar(kernel_union: SimilarityKernel, corpus: Sequence[int], Q: Sequence[int],
                   config: ObjectiveConfig, seed: int) -> tuple[list[int], list[int]]:
    """Seeded uniform Stage 1 sample, then top-``k`` by mean cosine similarity to ``Q``."""
    S = random_stage1(corpus, config.k1, seed)
    return S, [x for x, _ in mean_similarity_scores(kernel_union, S, Q)[:config.k]]


def lambda_bound_probe(kernel: SimilarityKernel, universe: Sequence[int],
                       config: ObjectiveConfig, trials: int, seed: int = 0) -> dict:
    """Sample ``(S, x)`` pairs and estimate the largest lambda keeping gains nonnegative.

    The estimate is the smallest observed ratio of coverage gain to log-det
    drop; pairs with no log-det drop are skipped.  ``violations`` lists the
    pairs whose combined gain is negative at the configured stage-1 lambda.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    universe = _check_universe(universe)
    cfg = config.for_stage(1)
    rng = np.random.default_rng(seed)
    n = len(universe)
    estimate = math.inf
    skipped = 0
    violations = []
    for _ in range(trials):
        if n < 2:
            skipped += 1
            continue
        size = int(rng.integers(1, min(n - 1, cfg.k1) + 1))
        order = rng.permutation(n)
        S = [universe[i] for i in order[:size]]
        x = universe[order[size]]
        g = marginal_gain(state_for(kernel, universe, S, cfg), x, kernel, universe, cfg)
        drop = -g.diversity_delta
        if drop > 0:
            estimate = min(estimate, g.coverage_delta / drop)
        else:
            skipped += 1
        if g.gain < 0:
            violations.append({"S": S, "x": x, "coverage_delta": g.coverage_delta,
                               "diversity_drop": drop, "gain": g.gain})
    return {"max_valid_lambda_estimate": estimate, "violations": violations,
            "skipped": skipped, "trials": trials, "lambda": cfg.lam}


def select_demonstrations(kernel_union: SimilarityKernel, n_corpus: int,
                          config: ObjectiveConfig, *, method: str = "dual_div",
                          seed: int = 0, per_query: bool = False) -> SelectionReport:
    """Run both stages on a union kernel whose first ``n_corpus`` rows are the corpus.

    ``config`` must already carry the per-stage lambdas for ``method``; see
    :func:`divsel.config.objective_config`.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}")
    corpus = list(range(n_corpus))
    Q = list(range(n_corpus, kernel_union.size))
    universe = list(range(kernel_union.size))
    lam1, lam2 = config.stage_lambdas()
    echo = {
        "lambda_stage1": lam1,
        "lambda_stage2": lam2,
        "k1": config.k1,
        "k": config.k,
        "residual_floor": config.residual_floor,
        "tie_break": config.tie_break,
        "allow_negative_gain": config.allow_negative_gain,
        "stage1": "random" if method == "random_similar" else "lazy_greedy",
        "stage2": "mean_similarity" if method == "random_similar" else "conditional_gain",
    }

    if method == "random_similar":
        S = random_stage1(corpus, config.k1, seed)
        stage1 = [{"index": x, "gain": None, "coverage_delta": None, "diversity_delta": None}
                  for x in S]
        trace, warnings = [], []

        def rank(queries):
            return mean_similarity_scores(kernel_union, S, queries)[:config.k]
        echo["seed"] = seed
    else:
        res = retrieve_stage1(kernel_union, corpus, config)
        S, stage1, trace, warnings = res.selected, res.steps, res.objective_trace, res.warnings
        if len(S) < config.k1 and not warnings:
            warnings.append(f"corpus exhausted: |S*| = {len(S)} < k1 = {config.k1}")

        def rank(queries):
            return stage2_scores(kernel_union, S, queries, universe, config)[:config.k]

    stage2, per_q = [], None
    if Q:
        if per_query:
            per_q = [{"query": q, "stage2": [{"index": x, "gain": g} for x, g in rank([q])]}
                     for q in Q]
        else:
            stage2 = [{"index": x, "gain": g} for x, g in rank(Q)]
    else:
        warnings = warnings + ["empty query set: Stage 2 skipped"]
    return SelectionReport(stage1, stage2, trace, echo, warnings, per_q)
