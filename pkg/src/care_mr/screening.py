"""Invalid-instrument screening under an l0 constraint.

For a fixed number ``v`` of valid instruments the bias-corrected loss

    sum_j w_j * [(beta_y - t*beta_rb - r_j)**2 / se_y**2
                 - t**2 * var_rb / se_y**2 * 1(r_j == 0)]

is minimized by alternating a closed-form update of the pleiotropy vector
``r`` (at fixed slope) with a closed-form update of the slope (at fixed
``r``). ``v`` itself is chosen by minimizing ``loss + log(n) * (s - v)``.

Weighted problems come from bootstrap resampling: ``w_j`` is the number of
times instrument j was drawn. All copies of an instrument share one ``r_j``
and ``v`` counts distinct drawn instruments, so an instrument's ranking
criterion is its per-copy criterion times ``w_j``.

An instrument's criterion is bounded below over the slope only when its
bias-corrected strength ``beta_rb**2 - var_rb`` is positive, and even then
its minimum ``-a * var_rb / (beta_rb**2 - var_rb)`` diverges as the strength
ratio ``beta_rb**2 / var_rb`` approaches one. Instruments whose ratio does not
exceed ``min_strength`` (at least 1) are therefore never eligible to be
valid; ``min_strength=None`` disables the guard.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import _kernels, _streams
from .errors import DomainError, ScreeningFailedError, WeakInstrumentError
from .selection import Instruments

DEFAULT_REL_TOL = 1e-7
DEFAULT_MAX_ITER = 100
DEFAULT_MIN_STRENGTH = 3.0


def default_n_effective(se_y) -> float:
    """Fallback sample size: the median of ``1/se_y**2``."""
    return float(np.median(1.0 / np.asarray(se_y, float) ** 2))


@dataclass
class ScreeningProblem:
    instruments: Instruments
    weights: np.ndarray
    n_effective: float
    min_strength: Optional[float] = DEFAULT_MIN_STRENGTH

    def __post_init__(self):
        self.weights = np.asarray(self.weights)
        if self.weights.shape != (len(self.instruments),):
            raise DomainError("weights must have one entry per instrument")
        if np.any(self.weights < 0) or np.any(self.weights != np.round(self.weights)):
            raise DomainError("weights must be nonnegative integers")
        if not self.weights.sum() > 0:
            raise DomainError("at least one instrument needs positive weight")
        if not self.n_effective > 1:
            raise DomainError("n_effective must exceed 1")
        if self.min_strength is not None and not self.min_strength >= 1:
            raise DomainError("min_strength must be at least 1")
        ins = self.instruments
        inv = 1.0 / ins.se_y**2
        self.a = ins.beta_y**2 * inv
        self.b = ins.beta_y * ins.beta_rb * inv
        self.d = (ins.beta_rb**2 - ins.var_rb) * inv

    @classmethod
    def unweighted(cls, instruments: Instruments, n_effective: Optional[float] = None,
                   min_strength: Optional[float] = DEFAULT_MIN_STRENGTH):
        if n_effective is None:
            n_effective = default_n_effective(instruments.se_y)
        return cls(instruments, np.ones(len(instruments), dtype=np.int64), n_effective,
                   min_strength)

    @property
    def s_lambda(self) -> int:
        return len(self.instruments)

    @property
    def sampled(self) -> np.ndarray:
        return np.flatnonzero(self.weights > 0)

    @property
    def eligible(self) -> np.ndarray:
        """Indices of drawn instruments that may be declared valid."""
        return np.flatnonzero((self.weights > 0) & self.strong)

    @property
    def strong(self) -> np.ndarray:
        """Mask of instruments passing the strength guard, drawn or not."""
        if self.min_strength is None:
            return np.ones(self.s_lambda, dtype=bool)
        ins = self.instruments
        return (ins.beta_rb**2 > self.min_strength * ins.var_rb) & (self.d > 0)

    def criterion(self, theta):
        """Per-copy loss of declaring each instrument valid at slope ``theta``."""
        return self.a - 2 * theta * self.b + theta**2 * self.d

    def residual(self, theta):
        return self.instruments.beta_y - theta * self.instruments.beta_rb


@dataclass
class ScreeningSolution:
    v: int
    theta_hat: float
    r_hat: np.ndarray
    valid_set: np.ndarray
    loss: float
    gbic: float
    iterations: int
    converged: bool
    trace: Optional[np.ndarray] = field(default=None, repr=False)


def loss_evaluate(problem: ScreeningProblem, theta: float, r) -> float:
    r = np.asarray(r, float)
    if r.shape != (problem.s_lambda,):
        raise DomainError("r must have one entry per instrument")
    ins = problem.instruments
    sy2 = ins.se_y**2
    terms = (ins.beta_y - theta * ins.beta_rb - r) ** 2 / sy2
    terms = terms - np.where(r == 0, theta**2 * ins.var_rb / sy2, 0.0)
    return float(np.sum(problem.weights * terms))


def r_update(problem: ScreeningProblem, theta: float, v: int) -> np.ndarray:
    """Optimal pleiotropy vector with exactly ``v`` eligible instruments valid.

    The ``v`` eligible instruments with the smallest weighted criterion get
    ``r = 0`` (ties to the lower index); every other instrument absorbs its
    full residual.
    """
    sampled = problem.eligible
    if not 1 <= v <= len(sampled):
        raise DomainError(f"v={v} outside 1..{len(sampled)} (number of eligible instruments)")
    wc = problem.weights[sampled] * problem.criterion(theta)[sampled]
    order = np.lexsort((sampled, wc))
    r = problem.residual(theta).astype(float)
    r[sampled[order[:v]]] = 0.0
    return r


def theta_update(problem: ScreeningProblem, r) -> float:
    valid = (np.asarray(r) == 0) & (problem.weights > 0)
    if not valid.any():
        raise DomainError("theta update needs at least one valid instrument")
    w = problem.weights[valid]
    den = float(np.sum(w * problem.d[valid]))
    if not den > 0:
        raise WeakInstrumentError(
            f"bias-corrected second moment of the valid set is {den:.3g} (must be positive)")
    return float(np.sum(w * problem.b[valid])) / den


def _compressed(problem):
    sampled = problem.eligible
    return (sampled, np.ascontiguousarray(problem.a[sampled]), np.ascontiguousarray(problem.b[sampled]),
            np.ascontiguousarray(problem.d[sampled]), problem.weights[sampled].astype(float))


def _expand_solution(problem, sampled, v, theta, mask, loss, gbic, iters, converged, trace=None):
    valid = sampled[mask]
    r = problem.residual(theta).astype(float)
    r[valid] = 0.0
    return ScreeningSolution(int(v), float(theta), r, valid, float(loss), float(gbic),
                             int(iters), bool(converged), trace)


def bcd_solve(problem: ScreeningProblem, v: int, init_theta: float,
              rel_tol: float = DEFAULT_REL_TOL, max_iter: int = DEFAULT_MAX_ITER) -> ScreeningSolution:
    """Block coordinate descent for a fixed number of valid instruments.

    Stops when the relative change in the slope falls below ``rel_tol``;
    hitting ``max_iter`` returns the last iterate with ``converged=False``.
    ``solution.trace`` holds the profiled loss at every iterate and is
    non-increasing.
    """
    if not np.isfinite(init_theta):
        raise DomainError("init_theta must be finite")
    if not rel_tol > 0:
        raise DomainError("rel_tol must be positive")
    sampled, a, b, d, w = _compressed(problem)
    if not 1 <= v <= len(sampled):
        raise DomainError(f"v={v} outside 1..{len(sampled)} (number of eligible instruments)")
    mask = np.empty(len(sampled), dtype=bool)
    wc = np.empty(len(sampled))
    trace = np.empty(max_iter + 1)
    idx = np.arange(len(sampled))
    theta, loss, iters, conv, status = _kernels.bcd(a, b, d, w, int(v), float(init_theta),
                                                    float(rel_tol), int(max_iter), mask, wc, idx,
                                                    trace)
    if status == _kernels.WEAK:
        raise WeakInstrumentError(
            f"v={v}: bias-corrected second moment of the valid set is not positive")
    gbic = loss + np.log(problem.n_effective) * (problem.s_lambda - v)
    return _expand_solution(problem, sampled, v, theta, mask, loss, gbic, iters, conv,
                            trace[: iters + 1].copy())


def init_range(problem: ScreeningProblem) -> tuple[float, float]:
    """Range of per-instrument ratio estimates over eligible instruments."""
    sampled = problem.eligible
    bx = problem.instruments.beta_x[sampled]
    by = problem.instruments.beta_y[sampled]
    ratio = by[bx != 0] / bx[bx != 0]
    if ratio.size == 0:
        return 0.0, 0.0
    return float(ratio.min()), float(ratio.max())


def median_ratio(problem: ScreeningProblem) -> float:
    """Weighted median of ``beta_y/beta_x`` over eligible instruments."""
    sampled = problem.eligible
    bx = problem.instruments.beta_x[sampled]
    keep = bx != 0
    if not keep.any():
        return 0.0
    ratio = problem.instruments.beta_y[sampled][keep] / bx[keep]
    return float(_kernels.weighted_median(ratio, problem.weights[sampled][keep].astype(float)))


def gbic_path(problem: ScreeningProblem, v_range=None, restarts: int = 1,
              rel_tol: float = DEFAULT_REL_TOL, max_iter: int = DEFAULT_MAX_ITER,
              seed: int = 0, median_start: bool = True):
    """Solve every v in ``v_range`` and pick the GBIC minimizer.

    ``v_range`` is an inclusive ``(lo, hi)`` pair defaulting to
    ``(2, number of eligible instruments)``. Each v keeps the lowest-loss of
    ``restarts`` runs started uniformly between the smallest and largest
    ratio estimate ``beta_y/beta_x``, plus one run from their weighted median
    when ``median_start`` is set. Returns ``(best, path)``; ``path`` has
    one entry per v that produced a solution.
    """
    sampled, a, b, d, w = _compressed(problem)
    k = len(sampled)
    lo_v, hi_v = (2, k) if v_range is None else (int(v_range[0]), int(v_range[1]))
    if k < 2:
        raise ScreeningFailedError(f"only {k} eligible instruments; need at least 2")
    if not 2 <= lo_v <= hi_v <= k:
        raise DomainError(f"v range {lo_v}..{hi_v} must lie within 2..{k}")
    if restarts < 1:
        raise DomainError("restarts must be positive")
    nv = hi_v - lo_v + 1
    lo, hi = init_range(problem)
    unif = _streams.substream(seed, _streams.RESTARTS).random((nv, restarts))
    inits = lo + (hi - lo) * unif
    if median_start:
        inits = np.column_stack([inits, np.full(nv, median_ratio(problem))])
    theta = np.empty(nv)
    loss = np.empty(nv)
    gbic = np.empty(nv)
    iters = np.empty(nv, dtype=np.int64)
    conv = np.empty(nv, dtype=bool)
    status = np.empty(nv, dtype=np.int64)
    masks = np.zeros((nv, k), dtype=bool)
    row = _kernels.path(a, b, d, w, lo_v, hi_v, inits, float(rel_tol), int(max_iter),
                        float(np.log(problem.n_effective)), problem.s_lambda,
                        theta, loss, gbic, iters, conv, status, masks)
    if row < 0:
        raise ScreeningFailedError(
            f"every v in {lo_v}..{hi_v} hit a nonpositive bias-corrected second moment")
    solutions = []
    best = None
    for vi in range(nv):
        if status[vi] != _kernels.OK:
            continue
        sol = _expand_solution(problem, sampled, lo_v + vi, theta[vi], masks[vi], loss[vi],
                               gbic[vi], iters[vi], conv[vi])
        solutions.append(sol)
        if vi == row:
            best = sol
    return best, solutions
