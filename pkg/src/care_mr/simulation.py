"""Summary-statistic simulation under a five-component effect mixture.

Components, in order: valid instruments; correlated pleiotropy (through a
shared confounder); uncorrelated pleiotropy; outcome-only SNPs; null SNPs.
"""

from __future__ import annotations

import hashlib
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from . import _streams
from .bagging import CareConfig, care_from_instruments
from .baselines import care_no_correction, ivw
from .errors import CareError, ConfigurationError, DomainError
from .gwas_io import PairTable
from .selection import SelectionConfig, lambda_from_pvalue, select, select_hard

log = logging.getLogger(__name__)

VARIANTS = ("normal_corr", "uniform_corr", "balanced_inside", "directional_inside_violated")


@dataclass(frozen=True)
class ScenarioConfig:
    p_snps: int = 200_000
    pi: tuple = (0.01, 0.005, 0.005, 0.01, 0.97)
    sigma_x2: float = 1e-5
    sigma_y2: float = 1e-5
    sigma_u2: float = 1e-5
    corr_pleio_mean: float = 0.015
    beta_xu: float = 0.3
    beta_yu: float = 0.3
    n_x: int = 500_000
    n_y: int = 500_000
    theta: float = 0.0
    seed: int = 0
    variant: str = "normal_corr"
    uniform_lo: float = 0.01
    uniform_hi: float = 0.03

    def __post_init__(self):
        pi = tuple(float(x) for x in self.pi)
        object.__setattr__(self, "pi", pi)
        if len(pi) != 5 or any(x < 0 for x in pi) or abs(sum(pi) - 1.0) > 1e-12:
            raise ConfigurationError(f"pi must be five nonnegative weights summing to 1, got {pi}")
        if min(self.sigma_x2, self.sigma_y2, self.sigma_u2) <= 0:
            raise ConfigurationError("component variances must be positive")
        if self.p_snps < 1 or self.n_x < 1 or self.n_y < 1:
            raise ConfigurationError("p_snps, n_x and n_y must be positive")
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.variant in ("uniform_corr", "directional_inside_violated") and not self.uniform_lo < self.uniform_hi:
            raise ConfigurationError("uniform_lo must be below uniform_hi")

    def effective_pi(self) -> tuple:
        """Mixture weights after applying the variant's zeroed component."""
        p1, p2, p3, p4, p5 = self.pi
        if self.variant == "balanced_inside":
            return (p1, 0.0, p2 + p3, p4, p5)
        if self.variant == "directional_inside_violated":
            return (p1, p2 + p3, 0.0, p4, p5)
        return self.pi

    def with_invalid_prop(self, invalid_prop: float) -> "ScenarioConfig":
        """Split the relevant mass so ``invalid_prop`` of it is invalid.

        The invalid share is halved between the two pleiotropy components;
        the outcome-only and null weights are untouched.
        """
        if not 0 <= invalid_prop < 1:
            raise DomainError("invalid_prop must lie in [0, 1)")
        p1, p2, p3, p4, p5 = self.pi
        relevant = p1 + p2 + p3
        bad = invalid_prop * relevant
        return replace(self, pi=(relevant - bad, bad / 2, bad / 2, p4, p5))

    @property
    def invalid_prop(self) -> float:
        p1, p2, p3 = self.pi[:3]
        return (p2 + p3) / (p1 + p2 + p3) if p1 + p2 + p3 > 0 else 0.0


SCENARIOS = {
    "main": ScenarioConfig(),
    "uniform": ScenarioConfig(variant="uniform_corr"),
    "balanced": ScenarioConfig(variant="balanced_inside"),
    "directional": ScenarioConfig(variant="directional_inside_violated"),
}


def read_scenario_file(path) -> ScenarioConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment.

    ``base = <preset>`` picks the starting preset (default ``main``); ``pi``
    takes five comma-separated numbers.
    """
    values = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, val = (s.strip() for s in line.split("=", 1))
            values[key] = val
    base = SCENARIOS.get(values.pop("base", "main"))
    if base is None:
        raise ConfigurationError(f"{path}: unknown base scenario")
    return scenario_from_mapping(values, base)


def scenario_from_mapping(values: dict, base: ScenarioConfig = SCENARIOS["main"]) -> ScenarioConfig:
    types = {f: type(getattr(base, f)) for f in base.__dataclass_fields__}
    kwargs = {}
    for key, val in values.items():
        if key not in types:
            raise ConfigurationError(f"unknown scenario key {key!r}")
        try:
            if key == "pi":
                kwargs[key] = tuple(float(x) for x in str(val).split(","))
            elif types[key] is int:
                kwargs[key] = int(float(val))
            elif types[key] is float:
                kwargs[key] = float(val)
            else:
                kwargs[key] = str(val)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key!r}: {val!r}") from exc
    return replace(base, **kwargs)


@dataclass
class SimulatedData:
    pairs: PairTable
    component: np.ndarray
    gamma: np.ndarray
    alpha: np.ndarray
    phi: np.ndarray

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.pairs.beta_x, self.pairs.beta_y, self.component):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def simulate_dataset(cfg: ScenarioConfig, rep: int = 0) -> SimulatedData:
    """Draw one dataset; ``component`` holds 1..5 per SNP."""
    rng = _streams.substream(cfg.seed, _streams.DATASET, rep)
    p = cfg.p_snps
    comp = rng.choice(5, size=p, p=np.asarray(cfg.effective_pi())).astype(np.int8) + 1
    gamma = np.zeros(p)
    alpha = np.zeros(p)
    phi = np.zeros(p)
    relevant = comp <= 3
    gamma[relevant] = rng.normal(0.0, math.sqrt(cfg.sigma_x2), relevant.sum())
    c2 = comp == 2
    n2 = int(c2.sum())
    if cfg.variant in ("uniform_corr", "directional_inside_violated"):
        alpha[c2] = rng.uniform(cfg.uniform_lo, cfg.uniform_hi, n2)
    else:
        alpha[c2] = rng.normal(cfg.corr_pleio_mean, math.sqrt(cfg.sigma_u2), n2)
    phi[c2] = rng.normal(0.0, math.sqrt(cfg.sigma_u2), n2)
    c34 = (comp == 3) | (comp == 4)
    alpha[c34] = rng.normal(0.0, math.sqrt(cfg.sigma_y2), int(c34.sum()))

    beta_x = gamma + cfg.beta_xu * phi
    beta_y = cfg.theta * beta_x + alpha + cfg.beta_yu * phi
    se_x = math.sqrt(1.0 / cfg.n_x)
    se_y = math.sqrt(1.0 / cfg.n_y)
    bx_hat = beta_x + se_x * rng.standard_normal(p)
    by_hat = beta_y + se_y * rng.standard_normal(p)
    ids = np.array([f"snp{i}" for i in range(p)], dtype=object)
    pairs = PairTable(ids, bx_hat, np.full(p, se_x), by_hat, np.full(p, se_y))
    return SimulatedData(pairs, comp, gamma, alpha, phi)


@dataclass
class RepResult:
    rep: int
    theta_hat: float = float("nan")
    se: float = float("nan")
    p_value: float = float("nan")
    ci_low: float = float("nan")
    ci_high: float = float("nan")
    runtime_s: float = 0.0
    dataset_checksum: str = ""
    error: str = ""


@dataclass
class RepMetrics:
    method: str
    theta: float
    invalid_prop: float
    rep_count: int
    failures: int
    reject_rate: float
    mean_bias: float
    abs_bias: float
    mse: float
    coverage: float
    mean_runtime_s: float
    reps: list = field(default_factory=list, repr=False)

    def as_dict(self, timing: bool = False) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "reps"}
        if not timing:
            out.pop("mean_runtime_s")
        return out


@dataclass(frozen=True)
class MethodSpec:
    """Settings shared by the simulation estimators."""

    care: CareConfig = CareConfig()
    lambda_care: float = lambda_from_pvalue(5e-5)
    lambda_baseline: float = lambda_from_pvalue(5e-8)
    eta: float = 0.5


Estimator = Callable[[PairTable, int], object]


def make_estimator(name: str, spec: MethodSpec = MethodSpec(), n_effective: Optional[float] = None) -> Estimator:
    """Return ``f(pairs, seed) -> estimate`` for a method name.

    Estimates expose ``theta``-like fields through :func:`_summarize`.
    """
    care_cfg = replace(spec.care, n_effective=n_effective) if n_effective else spec.care
    name = name.replace("-", "_")

    if name == "care":
        def run(pairs, seed):
            sel = SelectionConfig(spec.lambda_care, spec.eta, seed)
            return care_from_instruments(select(pairs, sel), replace(care_cfg, seed=seed))
    elif name == "care_no_correction":
        def run(pairs, seed):
            return care_no_correction(pairs, spec.lambda_care, replace(care_cfg, seed=seed))
    elif name in ("ivw_fixed", "ivw_random"):
        mode = name.split("_")[1]

        def run(pairs, seed):
            return ivw(select_hard(pairs, spec.lambda_baseline, min_instruments=1), mode,
                       alpha=care_cfg.alpha)
    else:
        raise ConfigurationError(f"unknown method {name!r}")
    run.method_name = name
    return run


def _summarize(est):
    theta = getattr(est, "theta_tilde", None)
    if theta is None:
        theta = est.theta
    return theta, est.se, est.p_value, est.ci_low, est.ci_high


def run_experiment(cfg: ScenarioConfig, reps: int, method, invalid_prop: Optional[float] = None,
                   spec: MethodSpec = MethodSpec(), alpha: float = 0.05, progress_every: int = 10) -> RepMetrics:
    """Run ``method`` on ``reps`` simulated datasets and summarize.

    ``method`` is a name accepted by :func:`make_estimator` or a callable
    ``f(pairs, seed)``. Dataset ``r`` is keyed by ``(cfg.seed, r)`` only, so
    every method sees the same datasets. Failed reps are counted in
    ``failures`` and excluded from the metrics.
    """
    if reps < 1:
        raise DomainError("reps must be at least 1")
    if invalid_prop is not None:
        cfg = cfg.with_invalid_prop(invalid_prop)
    if isinstance(method, str):
        estimator = make_estimator(method, spec, n_effective=cfg.n_y)
        name = estimator.method_name
    else:
        estimator = method
        name = getattr(method, "method_name", getattr(method, "__name__", "custom"))
    results = []
    for r in range(reps):
        data = simulate_dataset(cfg, r)
        res = RepResult(rep=r, dataset_checksum=data.checksum())
        start = time.perf_counter()
        try:
            est = estimator(data.pairs, _streams.derive_seed(cfg.seed, _streams.METHOD, r))
            res.theta_hat, res.se, res.p_value, res.ci_low, res.ci_high = (float(x) for x in _summarize(est))
        except CareError as exc:
            res.error = f"{type(exc).__name__}: {exc}"
            log.warning("rep %d failed: %s", r, res.error)
        res.runtime_s = time.perf_counter() - start
        results.append(res)
        if progress_every and (r + 1) % progress_every == 0:
            log.info("%s: %d/%d reps done", name, r + 1, reps)
    return summarize_reps(results, name, cfg.theta, cfg.invalid_prop, alpha)


def summarize_reps(results, method, theta, invalid_prop, alpha=0.05) -> RepMetrics:
    ok = [r for r in results if not r.error]
    n = len(ok)
    if n == 0:
        nan = float("nan")
        return RepMetrics(method, theta, invalid_prop, len(results), len(results), nan, nan, nan,
                          nan, nan, nan, results)
    err = [r.theta_hat - theta for r in ok]
    mean_bias = math.fsum(err) / n
    return RepMetrics(
        method=method,
        theta=theta,
        invalid_prop=invalid_prop,
        rep_count=len(results),
        failures=len(results) - n,
        reject_rate=sum(r.p_value < alpha for r in ok) / n,
        mean_bias=mean_bias,
        abs_bias=abs(mean_bias),
        mse=math.fsum(e * e for e in err) / n,
        coverage=sum(r.ci_low <= theta <= r.ci_high for r in ok) / n,
        mean_runtime_s=math.fsum(r.runtime_s for r in results) / len(results),
        reps=results,
    )
