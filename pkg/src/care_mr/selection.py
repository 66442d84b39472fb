"""Rerandomized instrument selection and Rao-Blackwellized exposure effects.

A SNP is selected when its exposure z-score plus independent pseudo-noise
``Z ~ N(0, eta^2)`` exceeds ``lam`` in absolute value. Conditional on that
event, the truncated-normal correction below gives an exposure effect that is
unbiased for the true effect, together with a variance term such that
``beta_rb**2 - var_rb`` is unbiased for the squared effect.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import special, stats

from . import _streams
from .errors import DomainError, InsufficientInstrumentsError, NumericalError
from .gwas_io import PairTable, SummaryPair

DEFAULT_ETA = 0.5
DEFAULT_P_THRESHOLD = 5e-5

_LOG_SQRT_2PI = 0.5 * np.log(2 * np.pi)
# log of the smallest positive double; below this the selection event has
# probability zero in floating point
_LOG_TINY = np.log(np.finfo(float).tiny) - 52 * np.log(2)


def lambda_from_pvalue(p: float) -> float:
    """Two-sided normal cutoff for a p-value threshold."""
    if not 0 < p < 1:
        raise DomainError(f"p-value threshold must lie in (0, 1), got {p}")
    return float(stats.norm.isf(p / 2))


@dataclass(frozen=True)
class SelectionConfig:
    lam: float = lambda_from_pvalue(DEFAULT_P_THRESHOLD)
    eta: float = DEFAULT_ETA
    seed: int = 0

    def __post_init__(self):
        if not self.lam > 0:
            raise DomainError(f"lambda must be positive, got {self.lam}")
        if not self.eta > 0:
            raise DomainError(f"eta must be positive, got {self.eta}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must be an unsigned 64-bit integer")


@dataclass(frozen=True)
class SelectedInstrument:
    pair: SummaryPair
    z_pseudo: float
    beta_rb: float
    var_rb: float


def _truncation_ratios(beta_x, se_x, lam, eta):
    """Return ``(a_plus, a_minus, phi(a_plus)/D, phi(a_minus)/D)``.

    ``D = 1 - Phi(a_plus) + Phi(a_minus)`` is the selection probability. The
    ratios are formed in log space, which keeps full precision in both tails
    where ``D`` and the densities are far below 1e-300.
    """
    beta_x = np.asarray(beta_x, dtype=float)
    se_x = np.asarray(se_x, dtype=float)
    if np.any(~(se_x > 0)):
        raise DomainError("se_x must be positive")
    z = beta_x / se_x
    a_plus = (lam - z) / eta
    a_minus = (-lam - z) / eta
    log_d = np.logaddexp(special.log_ndtr(-a_plus), special.log_ndtr(a_minus))
    if np.any(log_d < _LOG_TINY):
        bad = np.flatnonzero(np.atleast_1d(log_d < _LOG_TINY))
        raise NumericalError(
            f"selection probability underflows for instrument(s) at position {bad.tolist()[:5]}"
            f" (z={np.atleast_1d(z)[bad[0]]:.3g}); it could not have been selected")
    r_plus = np.exp(-0.5 * a_plus**2 - _LOG_SQRT_2PI - log_d)
    r_minus = np.exp(-0.5 * a_minus**2 - _LOG_SQRT_2PI - log_d)
    return a_plus, a_minus, r_plus, r_minus


def rb_debias(beta_x, se_x, config: SelectionConfig):
    """Winner's-curse-free exposure effect; works elementwise on arrays."""
    _, _, r_plus, r_minus = _truncation_ratios(beta_x, se_x, config.lam, config.eta)
    out = np.asarray(beta_x, float) - np.asarray(se_x, float) / config.eta * (r_plus - r_minus)
    return out if out.ndim else float(out)


def rb_variance(beta_x, se_x, config: SelectionConfig):
    """Variance correction paired with :func:`rb_debias`."""
    eta2 = config.eta**2
    a_plus, a_minus, r_plus, r_minus = _truncation_ratios(beta_x, se_x, config.lam, config.eta)
    se_x = np.asarray(se_x, float)
    factor = 1.0 - (a_plus * r_plus - a_minus * r_minus) / eta2 + (r_plus - r_minus) ** 2 / eta2
    out = se_x**2 * factor
    return out if out.ndim else float(out)


@dataclass
class Instruments:
    """Columnar selected instruments, the input to screening.

    ``index`` holds each instrument's position in the table it was selected
    from.
    """

    pairs: PairTable
    z_pseudo: np.ndarray
    beta_rb: np.ndarray
    var_rb: np.ndarray
    index: np.ndarray

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i) -> SelectedInstrument:
        return SelectedInstrument(self.pairs[i], float(self.z_pseudo[i]),
                                  float(self.beta_rb[i]), float(self.var_rb[i]))

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    @property
    def beta_x(self):
        return self.pairs.beta_x

    @property
    def beta_y(self):
        return self.pairs.beta_y

    @property
    def se_y(self):
        return self.pairs.se_y

    def subset(self, idx) -> "Instruments":
        idx = np.asarray(idx)
        return Instruments(self.pairs.subset(idx), self.z_pseudo[idx], self.beta_rb[idx],
                           self.var_rb[idx], self.index[idx])

    @classmethod
    def from_arrays(cls, beta_rb, var_rb, beta_y, se_y, beta_x=None, se_x=None):
        """Build instruments directly from corrected effects (tests, diagnostics)."""
        beta_rb = np.asarray(beta_rb, float)
        n = len(beta_rb)
        beta_x = beta_rb if beta_x is None else beta_x
        se_x = np.ones(n) if se_x is None else se_x
        pairs = PairTable.from_arrays(beta_x, se_x, beta_y, se_y)
        return cls(pairs, np.zeros(n), beta_rb, np.asarray(var_rb, float), np.arange(n))


def pseudo_noise(n: int, config: SelectionConfig) -> np.ndarray:
    """Pseudo-noise for positions ``0..n-1``; element j depends only on (seed, j)."""
    return _streams.substream(config.seed, _streams.SELECTION).normal(0.0, config.eta, size=n)


def select(pairs: PairTable, config: SelectionConfig, min_instruments: int = 3) -> Instruments:
    """Rerandomized selection followed by Rao-Blackwell correction."""
    if len(pairs) == 0:
        raise InsufficientInstrumentsError("no SNPs to select from")
    noise = pseudo_noise(len(pairs), config)
    randomized = pairs.beta_x / pairs.se_x + noise
    idx = np.flatnonzero(np.abs(randomized) > config.lam)
    if len(idx) < min_instruments:
        raise InsufficientInstrumentsError(
            f"{len(idx)} instrument(s) passed selection at lambda={config.lam:.4g}; "
            f"need at least {min_instruments}")
    bx, sx = pairs.beta_x[idx], pairs.se_x[idx]
    return Instruments(pairs.subset(idx), noise[idx], np.atleast_1d(rb_debias(bx, sx, config)),
                       np.atleast_1d(rb_variance(bx, sx, config)), idx)


def select_hard(pairs: PairTable, lam: float, min_instruments: int = 3) -> Instruments:
    """Plain thresholding ``|beta_x/se_x| > lam`` with no correction.

    The uncorrected effects and squared SEs stand in for the corrected ones.
    """
    idx = np.flatnonzero(np.abs(pairs.beta_x / pairs.se_x) > lam)
    if len(idx) < min_instruments:
        raise InsufficientInstrumentsError(
            f"{len(idx)} instrument(s) passed selection at lambda={lam:.4g}; "
            f"need at least {min_instruments}")
    sub = pairs.subset(idx)
    return Instruments(sub, np.zeros(len(idx)), sub.beta_x.copy(), sub.se_x**2, idx)
