"""Brute-force oracles and exhaustive property checks.

Nothing here goes through the incremental machinery in :mod:`divsel.objective`
except where a check explicitly compares against it.  Coverage is evaluated
by direct maxima over kernel blocks, log-determinants by LU factorization
(``numpy.linalg.slogdet``) with no residual floor.  Subsets of a small item
list are addressed by bitmask: bit ``b`` set means ``items[b]`` is selected.
"""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingSet, SimilarityKernel, cosine_kernel
from .objective import ObjectiveConfig, SelectionState, commit, marginal_gain, state_for
from .selector import naive_greedy, retrieve_stage1
from .synthetic import clustered_vectors

MODES = ("coverage", "diversity", "combined")
MAX_FAILURES_KEPT = 100


class OracleRefusal(ValueError):
    pass


@dataclass
class PropertyReport:
    property_name: str
    instances_checked: int = 0
    failures: list[dict] = field(default_factory=list)
    tolerance: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    def merge(self, other: "PropertyReport") -> "PropertyReport":
        self.instances_checked += other.instances_checked
        room = MAX_FAILURES_KEPT - len(self.failures)
        self.failures.extend(other.failures[:max(room, 0)])
        self.tolerance = max(self.tolerance, other.tolerance)
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def to_text(self) -> str:
        status = "PASS" if self.passed else f"FAIL ({len(self.failures)} witnesses)"
        line = (f"{self.property_name}: {status} over {self.instances_checked} instances "
                f"(tol {self.tolerance:g})")
        if self.failures:
            line += "\n  first witness: " + json.dumps(self.failures[0], default=_jsonable)
        return line


def _jsonable(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(type(obj))


# ---------------------------------------------------------------------------
# Seeded instances
# ---------------------------------------------------------------------------

def make_embeddings(seed: int, n: int, d: int, kind: str = "gaussian", *,
                    clusters: int = 3, noise: float = 0.3) -> EmbeddingSet:
    """Seeded instance vectors.

    ``gaussian`` draws standard normal directions; ``clustered`` adds noise to
    random unit centers.  The ``orthant`` variants take absolute values, so
    every cosine is nonnegative and the coverage term stays submodular even
    on steps out of the empty set.
    """
    rng = np.random.default_rng(seed)
    base = kind.removeprefix("orthant_") if kind != "orthant" else "gaussian"
    if base == "gaussian":
        vectors = rng.standard_normal((n, d))
    elif base == "clustered":
        vectors, _ = clustered_vectors(n, d, min(clusters, n), noise, rng)
    else:
        raise ValueError(f"unknown instance kind {kind!r}")
    if kind.startswith("orthant"):
        vectors = np.abs(vectors)
    return EmbeddingSet(tuple(f"x{i}" for i in range(n)), (None,) * n, vectors)


def make_instance(seed: int, n: int, d: int, kind: str = "gaussian", **kw) -> SimilarityKernel:
    return cosine_kernel(make_embeddings(seed, n, d, kind, **kw))


# ---------------------------------------------------------------------------
# Direct evaluation
# ---------------------------------------------------------------------------

def coverage_direct(W: np.ndarray, universe: Sequence[int], S: Sequence[int]) -> float:
    """Facility location by explicit double loop."""
    total = 0.0
    for i in universe:
        best = -math.inf
        for j in S:
            if W[i, j] > best:
                best = W[i, j]
        total += best
    return total


def logdet_direct(W: np.ndarray, S: Sequence[int]) -> float:
    if len(S) == 0:
        return 0.0
    sign, ld = np.linalg.slogdet(W[np.ix_(S, S)])
    return float(ld) if sign > 0 else -math.inf


def objective_direct(W: np.ndarray, universe: Sequence[int], S: Sequence[int],
                     lam: float) -> float:
    if len(S) == 0:
        return 0.0
    cov = coverage_direct(W, universe, S)
    return cov if lam == 0 else cov + lam * logdet_direct(W, S)


def _popcount(masks: np.ndarray) -> np.ndarray:
    return np.array([bin(int(m)).count("1") for m in masks], dtype=np.int64)


@dataclass
class SubsetTable:
    """Coverage and log-det of every subset of ``items`` up to ``max_size``."""

    items: list[int]
    coverage: np.ndarray
    diversity: np.ndarray
    valid: np.ndarray

    def members(self, mask: int) -> list[int]:
        return [self.items[b] for b in range(len(self.items)) if mask >> b & 1]

    def values(self, mode: str, lam: float) -> np.ndarray:
        if mode == "coverage":
            return self.coverage
        if mode == "diversity":
            return self.diversity
        if lam == 0:
            return self.coverage.copy()
        return self.coverage + lam * self.diversity


def subset_table(W: np.ndarray, universe: Sequence[int], items: Sequence[int],
                 max_size: int | None = None, guard: int = 16) -> SubsetTable:
    m = len(items)
    if m > guard:
        raise OracleRefusal(f"{m} items exceeds the enumeration guard of {guard}")
    max_size = m if max_size is None else min(max_size, m)
    items_arr = np.asarray(items, dtype=np.intp)
    masks = np.arange(1 << m)
    pop = _popcount(masks)
    cov = np.full(1 << m, np.nan)
    div = np.full(1 << m, np.nan)
    cov[0] = div[0] = 0.0
    w_u = W[np.ix_(np.asarray(universe, dtype=np.intp), items_arr)]
    w_i = W[np.ix_(items_arr, items_arr)]
    for size in range(1, max_size + 1):
        sel = masks[pop == size]
        bits = ((sel[:, None] >> np.arange(m)) & 1).astype(bool)
        cols = np.nonzero(bits)[1].reshape(len(sel), size)
        cov[sel] = w_u[:, cols].max(axis=2).sum(axis=0)
        sign, ld = np.linalg.slogdet(w_i[cols[:, :, None], cols[:, None, :]])
        div[sel] = np.where(sign > 0, ld, -np.inf)
    return SubsetTable(list(map(int, items)), cov, div, pop <= max_size)


# ---------------------------------------------------------------------------
# Optimum
# ---------------------------------------------------------------------------

def brute_force_optimum(kernel: SimilarityKernel, universe: Sequence[int], budget: int,
                        config: ObjectiveConfig, guard: int = 20) -> dict:
    """Exhaustive maximizer of the objective over ``1 <= |S| <= budget``.

    Ties resolve to the lexicographically smallest sorted index tuple.
    """
    universe = [int(u) for u in universe]
    n = len(universe)
    if n > guard:
        raise OracleRefusal(f"universe of {n} exceeds the enumeration guard of {guard}")
    if not 1 <= budget <= n:
        raise ValueError(f"budget must lie in [1, {n}], got {budget}")
    lam = config.for_stage(1).lam
    W = kernel.entries
    w_u = W[np.ix_(universe, universe)]
    best_f, best_S = -math.inf, None
    for size in range(1, budget + 1):
        combos_iter = itertools.combinations(range(n), size)
        while True:
            chunk = list(itertools.islice(combos_iter, 20000))
            if not chunk:
                break
            cols = np.asarray(chunk, dtype=np.intp)
            f = w_u[:, cols].max(axis=2).sum(axis=0)
            if lam != 0:
                sign, ld = np.linalg.slogdet(w_u[cols[:, :, None], cols[:, None, :]])
                f = f + lam * np.where(sign > 0, ld, -np.inf)
            top = f.max()
            if top > best_f:
                best_f = float(top)
                best_S = tuple(universe[c] for c in chunk[int(np.argmax(f))])
            elif top == best_f:
                cand = tuple(universe[c] for c in chunk[int(np.argmax(f))])
                best_S = min(best_S, cand)
    return {"S_opt": list(best_S), "f_opt": best_f}


# ---------------------------------------------------------------------------
# Property checks
# ---------------------------------------------------------------------------

def _guard(universe, limit):
    if len(universe) > limit:
        raise OracleRefusal(f"exhaustive check limited to {limit} items, got {len(universe)}")


def check_monotonicity(kernel: SimilarityKernel, universe: Sequence[int], config: ObjectiveConfig,
                       mode: str = "coverage", *, include_empty: bool = False,
                       max_size: int | None = None, tol: float = 1e-9,
                       seed: int | None = None, table: SubsetTable | None = None) -> PropertyReport:
    """Exhaustive check that adding any ``x`` never lowers C / raises D / lowers f.

    ``include_empty`` also checks steps out of the empty set under the
    ``C(()) = D(()) = 0`` conventions (needed for the normalized greedy bound).
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    universe = [int(u) for u in universe]
    _guard(universe, 16)
    table = table or subset_table(kernel.entries, universe, universe, max_size)
    vals = table.values(mode, config.for_stage(1).lam)
    report = PropertyReport(f"monotonicity[{mode}]", 1, [], tol)
    m = len(universe)
    masks = np.arange(1 << m)
    for x in range(m):
        bx = 1 << x
        base = masks[((masks & bx) == 0) & table.valid[masks | bx]]
        if not include_empty:
            base = base[base != 0]
        before, after = vals[base], vals[base | bx]
        bad = after > before + tol if mode == "diversity" else after < before - tol
        for mask in base[bad][:MAX_FAILURES_KEPT]:
            report.failures.append({"seed": seed, "S": table.members(int(mask)),
                                    "x": universe[x],
                                    "values": [float(vals[mask]), float(vals[mask | bx])]})
    return report


def check_submodularity(kernel: SimilarityKernel, universe: Sequence[int], config: ObjectiveConfig,
                        mode: str = "coverage", *, include_empty: bool = False,
                        max_size: int | None = None, tol: float = 1e-9,
                        seed: int | None = None, table: SubsetTable | None = None) -> PropertyReport:
    """Diminishing returns ``g(S + x) - g(S) >= g(S' + x) - g(S')`` for ``S <= S'``, ``x not in S'``.

    Up to 8 items every pair ``S <= S'`` is compared.  Beyond that only pairs
    with ``|S' - S| = 1`` are compared, which is equivalent since any
    ``S <= S'`` is joined by a chain of one-element steps.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    universe = [int(u) for u in universe]
    _guard(universe, 16)
    table = table or subset_table(kernel.entries, universe, universe, max_size)
    vals = table.values(mode, config.for_stage(1).lam)
    report = PropertyReport(f"submodularity[{mode}]", 1, [], tol)
    m = len(universe)
    masks = np.arange(1 << m)
    for x in range(m):
        bx = 1 << x
        base = masks[((masks & bx) == 0) & table.valid[masks | bx]]
        if not include_empty:
            base = base[base != 0]
        delta = vals[base | bx] - vals[base]
        if m <= 8:
            contained = (base[:, None] & base[None, :]) == base[:, None]
            bad = contained & (delta[:, None] < delta[None, :] - tol)
            pairs = np.argwhere(bad)
        else:
            pos = np.full(1 << m, -1)
            pos[base] = np.arange(len(base))
            found = []
            for y in range(m):
                if y == x:
                    continue
                by = 1 << y
                small = base[(base & by) == 0]
                big = pos[small | by]
                keep = big >= 0
                i_small, i_big = pos[small[keep]], big[keep]
                hit = delta[i_small] < delta[i_big] - tol
                found.append(np.stack([i_small[hit], i_big[hit]], axis=1))
            pairs = np.concatenate(found) if found else np.zeros((0, 2), dtype=int)
        for a, b in pairs[:MAX_FAILURES_KEPT]:
            report.failures.append({
                "seed": seed, "S": table.members(int(base[a])), "S_prime": table.members(int(base[b])),
                "x": universe[x], "values": [float(delta[a]), float(delta[b])]})
    return report


def check_projection_identity(kernel: SimilarityKernel, config: ObjectiveConfig, *,
                              trials: int = 20, seed: int = 0, rtol: float = 1e-7,
                              atol: float = 1e-12) -> PropertyReport:
    """``det(W_{S+x}) == det(W_S) * residual_sq`` with the residual from the incremental path."""
    n = kernel.size
    if n > 10:
        raise OracleRefusal(f"projection identity check limited to 10 items, got {n}")
    report = PropertyReport("projection_identity", 1, [], rtol)
    rng = np.random.default_rng(seed)
    W = kernel.entries
    universe = list(range(n))
    for _ in range(trials):
        order = rng.permutation(n)
        size = int(rng.integers(0, n))
        S, x = [int(i) for i in order[:size]], int(order[size])
        state = state_for(kernel, universe, S, config)
        res = marginal_gain(state, x, kernel, universe, config).residual_sq
        lhs = float(np.linalg.det(W[np.ix_(S + [x], S + [x])]))
        rhs = (float(np.linalg.det(W[np.ix_(S, S)])) if S else 1.0) * res
        if abs(lhs - rhs) > rtol * max(abs(lhs), abs(rhs)) + atol:
            report.failures.append({"seed": seed, "S": S, "x": x, "values": [lhs, rhs]})
    return report


def check_incremental_agreement(kernel: SimilarityKernel, universe: Sequence[int],
                                config: ObjectiveConfig, *, steps: int | None = None,
                                seed: int = 0, rtol: float = 1e-7) -> PropertyReport:
    """Commit a random sequence and compare running C and D with direct evaluation after each step."""
    universe = [int(u) for u in universe]
    rng = np.random.default_rng(seed)
    order = [universe[i] for i in rng.permutation(len(universe))][:steps]
    report = PropertyReport("incremental_agreement", 1, [], rtol)
    W = kernel.entries
    state = SelectionState.empty(len(universe))
    floor_diag = math.sqrt(config.residual_floor)
    for j in order:
        commit(state, j, kernel, universe, config)
        S = state.selected
        cov, div = coverage_direct(W, universe, S), logdet_direct(W, S)
        checks = {
            "coverage": (state.coverage, cov),
            "logdet": (state.logdet, div),
            "cache_sum": (state.coverage, float(state.coverage_cache.sum())),
            "chol_logdet": (state.logdet, 2 * float(np.log(np.diag(state.chol)).sum())),
        }
        for name, (got, want) in checks.items():
            if not abs(got - want) <= rtol * max(abs(want), 1.0):
                report.failures.append({"seed": seed, "S": list(S), "x": j, "check": name,
                                        "values": [got, want]})
        if np.diag(state.chol).min() < floor_diag * (1 - 1e-12):
            report.failures.append({"seed": seed, "S": list(S), "x": j, "check": "chol_floor",
                                    "values": [float(np.diag(state.chol).min()), floor_diag]})
    return report


def check_lazy_equals_naive(kernel: SimilarityKernel, universe: Sequence[int],
                            config: ObjectiveConfig, *, seed: int | None = None) -> PropertyReport:
    report = PropertyReport("lazy_equals_naive", 1, [], 0.0)
    lazy = retrieve_stage1(kernel, universe, config).selected
    naive = naive_greedy(kernel, universe, config)
    if lazy != naive:
        report.failures.append({"seed": seed, "S": lazy, "x": None, "values": naive})
    return report


def check_modular_bound(kernel_union: SimilarityKernel, corpus: Sequence[int], Q: Sequence[int],
                        config: ObjectiveConfig, *, max_T: int = 3, tol: float = 1e-9,
                        seed: int | None = None) -> PropertyReport:
    """``f(T | Q) <= sum_{x in T} f({x} | Q)`` for every ``T`` of size at most ``max_T``."""
    corpus, Q = [int(c) for c in corpus], [int(q) for q in Q]
    _guard(corpus, 12)
    W = kernel_union.entries
    universe = list(range(kernel_union.size))
    lam = config.for_stage(2).lam
    f_Q = objective_direct(W, universe, Q, lam)
    single = {x: objective_direct(W, universe, Q + [x], lam) - f_Q for x in corpus}
    report = PropertyReport("modular_upper_bound", 1, [], tol)
    for size in range(1, max_T + 1):
        for T in itertools.combinations(corpus, size):
            joint = objective_direct(W, universe, Q + list(T), lam) - f_Q
            bound = sum(single[x] for x in T)
            if joint > bound + tol:
                report.failures.append({"seed": seed, "S": list(T), "x": None,
                                        "values": [joint, bound]})
    return report


def brute_force_stage2(kernel_union: SimilarityKernel, S_star: Sequence[int], Q: Sequence[int],
                       config: ObjectiveConfig, tie_rtol: float = 1e-12) -> list[int]:
    """Exhaustive argmax of summed singleton conditional gains over ``|T| = min(k, |S*|)``."""
    W = kernel_union.entries
    universe = list(range(kernel_union.size))
    lam = config.for_stage(2).lam
    Q = [int(q) for q in Q]
    f_Q = objective_direct(W, universe, Q, lam)
    gain = {int(x): objective_direct(W, universe, Q + [int(x)], lam) - f_Q for x in S_star}
    combos = list(itertools.combinations(sorted(gain), min(config.k, len(gain))))
    totals = [sum(gain[x] for x in T) for T in combos]
    best = max(totals)
    # first (lexicographically smallest) set within rounding of the maximum
    tol = tie_rtol * config.k * max(1.0, abs(best))
    return next(list(T) for T, t in zip(combos, totals) if t >= best - tol)


def in_monotone_submodular_regime(kernel: SimilarityKernel, universe: Sequence[int],
                                  config: ObjectiveConfig, budget: int, tol: float = 1e-9) -> bool:
    """Whether the normalized objective is monotone and submodular on sets up to ``2 * budget``."""
    universe = [int(u) for u in universe]
    table = subset_table(kernel.entries, universe, universe, min(2 * budget, len(universe)))
    for check in (check_monotonicity, check_submodularity):
        if not check(kernel, universe, config, "combined", include_empty=True,
                     table=table, tol=tol).passed:
            return False
    return True


def run_default_suite(instances: int, *, seed: int = 0, n: int = 8, d: int = 12,
                      config: ObjectiveConfig | None = None) -> list[PropertyReport]:
    """Every default-config property over ``instances`` seeded instances.

    Instances have nonnegative cosines: lazy/naive agreement relies on stale
    gains bounding fresh ones, which negative similarities can break.
    """
    config = config or ObjectiveConfig(k1=min(4, n), k=1)
    merged: dict[str, PropertyReport] = {}

    def add(rep):
        if rep.property_name in merged:
            merged[rep.property_name].merge(rep)
        else:
            merged[rep.property_name] = rep

    for i in range(instances):
        s = seed + i
        kind = "orthant" if i % 2 == 0 else "orthant_clustered"
        kernel = make_instance(s, n, d, kind)
        universe = list(range(n))
        table = subset_table(kernel.entries, universe, universe)
        for mode in ("coverage", "diversity"):
            add(check_monotonicity(kernel, universe, config, mode, seed=s, table=table))
        for mode in MODES:
            add(check_submodularity(kernel, universe, config, mode, seed=s, table=table))
        add(check_projection_identity(kernel, config, seed=s))
        add(check_incremental_agreement(kernel, universe, config, seed=s))
        add(check_lazy_equals_naive(kernel, universe, config, seed=s))
    return list(merged.values())
