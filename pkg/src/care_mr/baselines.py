"""Comparator estimators: IVW and CARE without winner's-curse correction."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
from scipy import stats

from .bagging import CareConfig, care_from_instruments, p_value
from .errors import DegenerateInstrumentsError, DomainError
from .gwas_io import PairTable
from .selection import select_hard

METHODS = ("ivw_fixed", "ivw_random", "care_no_correction")


@dataclass
class BaselineEstimate:
    method: str
    theta: float
    se: float
    p_value: float
    k_instruments: int
    ci_low: float = float("nan")
    ci_high: float = float("nan")

    def as_dict(self) -> dict:
        return asdict(self)


def ivw(pairs: PairTable, mode: str = "random", alpha: float = 0.05) -> BaselineEstimate:
    """Inverse-variance weighted slope through the origin.

    ``mode="random"`` inflates the fixed-effect SE by ``sqrt(max(1, phi))``
    where ``phi`` is the residual over-dispersion.
    """
    if mode not in ("fixed", "random"):
        raise DomainError(f"unknown IVW mode {mode!r}")
    k = len(pairs)
    if k < (3 if mode == "random" else 1):
        raise DomainError(f"IVW-{mode} needs {'3' if mode == 'random' else '1'} or more instruments")
    w = 1.0 / pairs.se_y**2
    sxx = np.sum(w * pairs.beta_x**2)
    if not sxx > 0:
        raise DegenerateInstrumentsError("all exposure effects are zero")
    theta = float(np.sum(w * pairs.beta_x * pairs.beta_y) / sxx)
    se = float(np.sqrt(1.0 / sxx))
    if mode == "random":
        resid = pairs.beta_y - theta * pairs.beta_x
        phi = np.sum(w * resid**2) / (k - 1)
        se *= float(np.sqrt(max(1.0, phi)))
    z = stats.norm.isf(alpha / 2)
    return BaselineEstimate(f"ivw_{mode}", theta, se, p_value(theta, se), k,
                            theta - z * se, theta + z * se)


def care_no_correction(pairs: PairTable, lam: float, cfg: CareConfig) -> BaselineEstimate:
    """The bagged screening estimator on hard-thresholded, uncorrected effects."""
    instruments = select_hard(pairs, lam)
    est = care_from_instruments(instruments, cfg, method="care_no_correction")
    return BaselineEstimate("care_no_correction", est.theta_tilde, est.se, est.p_value,
                            est.s_lambda, est.ci_low, est.ci_high)
