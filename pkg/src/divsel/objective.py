"""Coverage + log-determinant objective with incremental marginal gains.

The objective over a selection ``S`` of kernel indices is::

    f(S) = sum_{i in U} max_{j in S} w_ij  +  lam * log det(W_S)

with the empty-set conventions ``C(()) = D(()) = f(()) = 0``.  The coverage
universe ``U`` is an explicit index list, so the same code evaluates the
plain Stage 1 objective (``U = V``) and conditional objectives over ``V + Q``.

Log-determinants are accumulated through a Cholesky factor of ``W_S``.  Each
new row is obtained by one triangular solve; the squared residual of the
pivot is floored at ``residual_floor`` so duplicated directions cost a large
but finite penalty instead of ``-inf``.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .embeddings import SimilarityKernel
from .errors import ConfigError

TIE_BREAKS = ("lowest_index",)


@dataclass(frozen=True)
class ObjectiveConfig:
    """Trade-off weight, budgets and numerical floors.

    ``lambda_stage1``/``lambda_stage2`` override ``lam`` for one stage only;
    :meth:`for_stage` resolves them.
    """

    lam: float = 0.1
    residual_floor: float = 1e-12
    k1: int = 100
    k: int = 3
    tie_break: str = "lowest_index"
    allow_negative_gain: bool = False
    lambda_stage1: float | None = None
    lambda_stage2: float | None = None

    def __post_init__(self):
        for name in ("lam", "lambda_stage1", "lambda_stage2"):
            value = getattr(self, name)
            if value is not None and not (value >= 0 and math.isfinite(value)):
                raise ConfigError(f"{name} must be a finite nonnegative number, got {value!r}")
        if not 0 < self.residual_floor < 1:
            raise ConfigError(f"residual_floor must lie in (0, 1), got {self.residual_floor!r}")
        if self.k < 1 or self.k1 < 1:
            raise ConfigError(f"budgets must be positive (k={self.k}, k1={self.k1})")
        if self.k > self.k1:
            raise ConfigError(f"k ({self.k}) must not exceed k1 ({self.k1})")
        if self.tie_break not in TIE_BREAKS:
            raise ConfigError(f"unsupported tie_break {self.tie_break!r}")

    def for_stage(self, stage: int) -> "ObjectiveConfig":
        override = {1: self.lambda_stage1, 2: self.lambda_stage2}[stage]
        lam = self.lam if override is None else override
        return replace(self, lam=lam, lambda_stage1=None, lambda_stage2=None)

    def stage_lambdas(self) -> tuple[float, float]:
        return self.for_stage(1).lam, self.for_stage(2).lam

    def to_dict(self) -> dict:
        return asdict(self)


class Gain(NamedTuple):
    gain: float
    residual_sq: float
    coverage_delta: float
    diversity_delta: float


class CholFactor:
    """Row-appendable lower Cholesky factor of ``W_S`` with floored pivots.

    ``full`` holds every row, floored pivots included.  A row whose squared
    residual fell to the floor adds no new direction to the span, so later
    projections solve only against ``basis``, the sub-factor of unfloored
    rows; this keeps rounding error from being amplified by ``1/sqrt(floor)``.
    """

    def __init__(self):
        self.full = np.zeros((0, 0))
        self.basis = np.zeros((0, 0))
        self.active: list[int] = []

    def __len__(self):
        return self.full.shape[0]

    def copy(self) -> "CholFactor":
        other = CholFactor()
        other.full, other.basis, other.active = self.full.copy(), self.basis.copy(), list(self.active)
        return other

    def project(self, cross: np.ndarray, self_sim: float) -> tuple[np.ndarray, float]:
        """Coefficients of a new vector against the selected rows and its squared residual."""
        coef = np.zeros(len(self))
        if not self.active:
            return coef, float(self_sim)
        c = solve_triangular(self.basis, cross[self.active], lower=True, check_finite=False)
        coef[self.active] = c
        return coef, float(self_sim - c @ c)

    def append(self, coef: np.ndarray, residual_sq: float, floor: float) -> float:
        """Add one row; returns the (floored) pivot."""
        keep = residual_sq > floor
        pivot = residual_sq if keep else floor
        self.full = _grow(self.full, coef, math.sqrt(pivot))
        if keep:
            self.basis = _grow(self.basis, coef[self.active], math.sqrt(pivot))
            self.active.append(len(self) - 1)
        return pivot


def _grow(chol: np.ndarray, row: np.ndarray, diag: float) -> np.ndarray:
    m = chol.shape[0]
    grown = np.zeros((m + 1, m + 1))
    grown[:m, :m] = chol
    grown[m, :m] = row
    grown[m, m] = diag
    return grown


@dataclass
class SelectionState:
    """Incremental evaluation state for one selection run.

    ``coverage_cache[p]`` is ``max_{j in S} w[universe[p], j]`` (``-inf`` while
    ``S`` is empty); ``factor.full`` is the floored lower Cholesky factor of
    ``W_S`` in selection order.
    """

    selected: list[int]
    coverage_cache: np.ndarray
    factor: CholFactor = field(default_factory=CholFactor)
    logdet: float = 0.0
    coverage: float = 0.0

    @classmethod
    def empty(cls, universe_size: int) -> "SelectionState":
        return cls([], np.full(universe_size, -np.inf))

    @property
    def chol(self) -> np.ndarray:
        return self.factor.full

    @property
    def epoch(self) -> int:
        return len(self.selected)

    def copy(self) -> "SelectionState":
        return SelectionState(list(self.selected), self.coverage_cache.copy(),
                              self.factor.copy(), self.logdet, self.coverage)


def _as_index_array(idx) -> np.ndarray:
    return np.asarray(idx, dtype=np.intp).reshape(-1)


def floored_logdet(matrix: np.ndarray, residual_floor: float) -> float:
    """``log det`` of a PSD matrix via row-by-row Cholesky with floored pivots."""
    factor = CholFactor()
    total = 0.0
    for j in range(matrix.shape[0]):
        coef, res = factor.project(matrix[j, :j], matrix[j, j])
        total += math.log(factor.append(coef, res, residual_floor))
    return total


# ---------------------------------------------------------------------------
# From-scratch evaluation
# ---------------------------------------------------------------------------

def coverage(kernel: SimilarityKernel, universe: Sequence[int], S: Sequence[int]) -> float:
    """Facility-location coverage ``sum_{i in universe} max_{j in S} w_ij``."""
    S = _as_index_array(S)
    if S.size == 0:
        raise ValueError("coverage of an empty selection is undefined; use objective_value")
    block = kernel.entries[np.ix_(_as_index_array(universe), S)]
    return float(block.max(axis=1).sum())


def log_det_diversity(kernel: SimilarityKernel, S: Sequence[int],
                      config: ObjectiveConfig) -> float:
    S = _as_index_array(S)
    if len(set(S.tolist())) != S.size:
        raise ValueError(f"repeated index in selection {S.tolist()}")
    if S.size == 0:
        return 0.0
    return floored_logdet(kernel.entries[np.ix_(S, S)], config.residual_floor)


def objective_value(kernel: SimilarityKernel, universe: Sequence[int], S: Sequence[int],
                    config: ObjectiveConfig) -> dict:
    if len(S) == 0:
        return {"f": 0.0, "coverage": 0.0, "diversity": 0.0}
    cov = coverage(kernel, universe, S)
    div = log_det_diversity(kernel, S, config)
    return {"f": cov + config.lam * div, "coverage": cov, "diversity": div}


# ---------------------------------------------------------------------------
# Incremental evaluation
# ---------------------------------------------------------------------------

def _column(kernel, universe, candidate):
    return kernel.entries[_as_index_array(universe), candidate]


def _coverage_delta(state: SelectionState, column: np.ndarray) -> float:
    if not state.selected:
        return float(column.sum())
    return float(np.maximum(column - state.coverage_cache, 0.0).sum())


def marginal_gain(state: SelectionState, candidate: int, kernel: SimilarityKernel,
                  universe: Sequence[int], config: ObjectiveConfig) -> Gain:
    """Gain ``f(S + {candidate}) - f(S)`` without mutating ``state``.

    ``residual_sq`` is reported unfloored; the floor only enters ``gain``.
    """
    if candidate in state.selected:
        raise ValueError(f"candidate {candidate} is already selected")
    cov_delta = _coverage_delta(state, _column(kernel, universe, candidate))
    _, res = state.factor.project(kernel.entries[state.selected, candidate],
                                  kernel.entries[candidate, candidate])
    div_delta = math.log(res if res > config.residual_floor else config.residual_floor)
    return Gain(cov_delta + config.lam * div_delta, res, cov_delta, div_delta)


def commit(state: SelectionState, candidate: int, kernel: SimilarityKernel,
           universe: Sequence[int], config: ObjectiveConfig) -> SelectionState:
    """Append ``candidate`` to the selection in place and return the state."""
    if candidate in state.selected:
        raise ValueError(f"candidate {candidate} is already selected")
    column = _column(kernel, universe, candidate)
    cov_delta = _coverage_delta(state, column)
    coef, res = state.factor.project(kernel.entries[state.selected, candidate],
                                     kernel.entries[candidate, candidate])
    pivot = state.factor.append(coef, res, config.residual_floor)
    state.coverage_cache = np.maximum(state.coverage_cache, column)
    state.coverage += cov_delta
    state.logdet += math.log(pivot)
    state.selected.append(int(candidate))
    return state


def state_for(kernel: SimilarityKernel, universe: Sequence[int], S: Sequence[int],
              config: ObjectiveConfig) -> SelectionState:
    state = SelectionState.empty(len(universe))
    for j in S:
        commit(state, int(j), kernel, universe, config)
    return state


def conditional_gain(kernel_union: SimilarityKernel, Q: Sequence[int], x: int,
                     universe: Sequence[int], config: ObjectiveConfig) -> float:
    """``f({x} + Q) - f(Q)`` on the union kernel."""
    if x in list(Q):
        raise ValueError(f"candidate {x} belongs to the query set")
    state = state_for(kernel_union, universe, Q, config)
    return marginal_gain(state, x, kernel_union, universe, config).gain
