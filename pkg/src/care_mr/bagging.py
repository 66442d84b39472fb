"""Bootstrap-aggregated estimation with nonparametric delta-method inference."""

from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import stats

from . import _kernels, _streams
from .errors import DomainError, InsufficientInstrumentsError, UnstableEstimateError
from .gwas_io import PairTable
from .screening import (DEFAULT_MAX_ITER, DEFAULT_MIN_STRENGTH, DEFAULT_REL_TOL, ScreeningProblem,
                        default_n_effective)
from .selection import Instruments, SelectionConfig, select

log = logging.getLogger(__name__)

THREADS_ENV = "CARE_MR_THREADS"


def default_threads() -> int:
    try:
        return max(1, int(os.environ.get(THREADS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class CareConfig:
    bootstrap_b: int = 2000
    alpha: float = 0.05
    seed: int = 0
    restarts: int = 1
    rel_tol: float = DEFAULT_REL_TOL
    max_iter: int = DEFAULT_MAX_ITER
    n_effective: Optional[float] = None
    max_invalid_replicate_fraction: float = 0.01
    keep_replicates: Optional[bool] = None
    threads: int = 1
    min_strength: float = DEFAULT_MIN_STRENGTH
    median_start: bool = True

    def __post_init__(self):
        if self.bootstrap_b < 2:
            raise DomainError("bootstrap_b must be at least 2")
        if not 0 < self.alpha < 1:
            raise DomainError("alpha must lie in (0, 1)")
        if not 0 <= self.max_invalid_replicate_fraction < 1:
            raise DomainError("max_invalid_replicate_fraction must lie in [0, 1)")
        if self.restarts < 1 or self.max_iter < 1 or not self.rel_tol > 0:
            raise DomainError("restarts and max_iter must be positive, rel_tol > 0")
        if self.n_effective is not None and not self.n_effective > 1:
            raise DomainError("n_effective must exceed 1")
        if self.threads < 1:
            raise DomainError("threads must be positive")
        if not self.min_strength >= 1:
            raise DomainError("min_strength must be at least 1")


@dataclass
class Replicates:
    theta_b: np.ndarray
    v_b: np.ndarray
    converged: np.ndarray
    excluded: np.ndarray
    weights: np.ndarray


@dataclass
class CareEstimate:
    theta_tilde: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    s_lambda: int
    mean_valid_count: float
    replicates_used: int
    replicates_excluded: int
    per_iv_s: np.ndarray
    theta_b: Optional[np.ndarray] = None
    replicates: Optional[Replicates] = field(default=None, repr=False)
    method: str = "care"

    def as_dict(self) -> dict:
        out = {
            "method": self.method,
            "theta": self.theta_tilde,
            "se": self.se,
            "ci_low": self.ci_low,
            "ci_high": self.ci_high,
            "p_value": self.p_value,
            "s_lambda": self.s_lambda,
            "mean_valid_count": self.mean_valid_count,
            "replicates_used": self.replicates_used,
            "replicates_excluded": self.replicates_excluded,
            "per_iv_s": [float(x) for x in self.per_iv_s],
        }
        if self.theta_b is not None:
            out["theta_b"] = [float(x) for x in self.theta_b]
        return out


def p_value(theta_tilde: float, se: float) -> float:
    """Two-sided normal p-value of ``theta_tilde / se``."""
    if se < 0:
        raise DomainError("se must be nonnegative")
    if se == 0:
        return 1.0 if theta_tilde == 0 else 0.0
    return float(2 * stats.norm.sf(abs(theta_tilde) / se))


def bootstrap_weights(s_lambda: int, b_index: int, seed: int) -> np.ndarray:
    """Multinomial draw counts for replicate ``b_index``."""
    if s_lambda < 1:
        raise DomainError("s_lambda must be positive")
    rng = _streams.substream(seed, _streams.BOOTSTRAP, b_index)
    return rng.multinomial(s_lambda, np.full(s_lambda, 1.0 / s_lambda))


def _restart_uniforms(s_lambda, restarts, b_index, seed):
    return _streams.substream(seed, _streams.RESTARTS, b_index).random((s_lambda, restarts))


def refit_theta(instruments: Instruments, valid_multiset) -> float:
    """Refit the slope on a valid set given as ``{index: multiplicity}`` or a count vector.

    Returns NaN when the bias-corrected denominator is not positive.
    """
    if isinstance(valid_multiset, dict):
        counts = np.zeros(len(instruments))
        for j, m in valid_multiset.items():
            counts[j] += m
    else:
        counts = np.asarray(valid_multiset, float)
    if not counts.sum() > 0:
        raise DomainError("valid multiset is empty")
    sy2 = instruments.se_y**2
    num = np.sum(counts * instruments.beta_y * instruments.beta_rb / sy2)
    den = np.sum(counts * (instruments.beta_rb**2 - instruments.var_rb) / sy2)
    if not den > 0:
        return float("nan")
    return float(num / den)


def delta_variance(weights_matrix, theta_b):
    """Nonparametric delta-method SE from replicate weights and estimates.

    Returns ``(se, per_iv_s)`` with ``per_iv_s[j]`` the covariance between
    column j of the weights and the replicate estimates.
    """
    weights_matrix = np.asarray(weights_matrix, float)
    theta_b = np.asarray(theta_b, float)
    n_rep = len(theta_b)
    if n_rep < 2:
        raise DomainError("need at least 2 replicates")
    if weights_matrix.shape[0] != n_rep:
        raise DomainError("weights_matrix needs one row per replicate")
    centred_w = weights_matrix - weights_matrix.mean(axis=0)
    # a constant sequence can have a mean that differs from it in the last bit
    centred_t = np.zeros(n_rep) if np.all(theta_b == theta_b[0]) else theta_b - theta_b.mean()
    per_iv = centred_w.T @ centred_t / n_rep
    return float(np.sqrt(np.sum(per_iv**2))), per_iv


def run_replicates(instruments: Instruments, cfg: CareConfig, n_effective: float) -> Replicates:
    """Screen and refit every bootstrap replicate.

    Replicate b only reads the streams keyed by ``(cfg.seed, b)``, and each
    thread writes to its own rows, so the result does not depend on
    ``cfg.threads``.
    """
    s = len(instruments)
    B = cfg.bootstrap_b
    counts = np.empty((B, s), dtype=np.int64)
    unif = np.empty((B, s, cfg.restarts))
    for rep in range(B):
        counts[rep] = bootstrap_weights(s, rep, cfg.seed)
        unif[rep] = _restart_uniforms(s, cfg.restarts, rep, cfg.seed)
    problem = ScreeningProblem.unweighted(instruments, n_effective, cfg.min_strength)
    args = (problem.a, problem.b, problem.d, np.ascontiguousarray(instruments.beta_x),
            np.ascontiguousarray(instruments.beta_y), problem.strong, counts, unif, float(cfg.rel_tol),
            int(cfg.max_iter), float(np.log(n_effective)), bool(cfg.median_start))
    theta_b = np.empty(B)
    v_b = np.empty(B, dtype=np.int64)
    conv = np.empty(B, dtype=bool)
    status = np.empty(B, dtype=np.int64)
    outs = (theta_b, v_b, conv, status)
    if cfg.threads == 1:
        _kernels.bag_range(*args, 0, B, *outs)
    else:
        edges = np.linspace(0, B, cfg.threads + 1).astype(int)
        with ThreadPoolExecutor(cfg.threads) as pool:
            futures = [pool.submit(_kernels.bag_range, *args, int(lo), int(hi), *outs)
                       for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]
            for fut in futures:
                fut.result()
    return Replicates(theta_b, v_b, conv, status != _kernels.OK, counts)


def aggregate(instruments: Instruments, reps: Replicates, cfg: CareConfig, method="care") -> CareEstimate:
    B = len(reps.theta_b)
    n_bad = int(reps.excluded.sum())
    frac = n_bad / B
    if frac > cfg.max_invalid_replicate_fraction:
        raise UnstableEstimateError(
            f"{n_bad} of {B} bootstrap replicates ({frac:.1%}) had a nonpositive bias-corrected "
            f"second moment; limit is {cfg.max_invalid_replicate_fraction:.1%}", fraction=frac)
    used = ~reps.excluded
    theta_b = reps.theta_b[used]
    theta_tilde = float(np.mean(theta_b))
    se, per_iv = delta_variance(reps.weights[used], theta_b)
    z = stats.norm.isf(cfg.alpha / 2)
    keep = cfg.keep_replicates if cfg.keep_replicates is not None else B <= 5000
    return CareEstimate(
        theta_tilde=theta_tilde,
        se=se,
        ci_low=theta_tilde - z * se,
        ci_high=theta_tilde + z * se,
        p_value=p_value(theta_tilde, se),
        s_lambda=len(instruments),
        mean_valid_count=float(np.mean(reps.v_b[used])),
        replicates_used=int(used.sum()),
        replicates_excluded=n_bad,
        per_iv_s=per_iv,
        theta_b=theta_b.copy() if keep else None,
        replicates=reps if keep else None,
        method=method,
    )


def care_from_instruments(instruments: Instruments, cfg: CareConfig, method="care") -> CareEstimate:
    if len(instruments) < 3:
        raise InsufficientInstrumentsError(f"{len(instruments)} instruments; need at least 3")
    n_eff = cfg.n_effective if cfg.n_effective is not None else default_n_effective(instruments.se_y)
    reps = run_replicates(instruments, cfg, n_eff)
    return aggregate(instruments, reps, cfg, method)


def care_estimate(pairs: PairTable, sel_cfg: SelectionConfig, cfg: CareConfig) -> CareEstimate:
    """Select, bootstrap, screen, refit and aggregate."""
    instruments = select(pairs, sel_cfg)
    log.debug("selected %d instruments", len(instruments))
    return care_from_instruments(instruments, cfg)
