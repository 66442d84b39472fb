import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from care_mr.bagging import CareConfig, care_from_instruments
from care_mr.baselines import care_no_correction, ivw
from care_mr.errors import DegenerateInstrumentsError, DomainError
from care_mr.gwas_io import PairTable
from care_mr.selection import Instruments


def pairs_of(bx, by, se_y, se_x=None):
    bx = np.asarray(bx, float)
    se_x = np.full(len(bx), 0.001) if se_x is None else se_x
    return PairTable.from_arrays(bx, se_x, by, se_y)


def test_single_instrument_wald():
    est = ivw(pairs_of([0.04], [0.01], [0.005]), "fixed")
    assert est.theta == pytest.approx(0.25, rel=1e-14)
    assert est.se == pytest.approx(0.005 / 0.04, rel=1e-14)
    assert est.k_instruments == 1


def test_proportional_data_floors_dispersion():
    bx = np.array([0.02, 0.03, -0.05, 0.04])
    p = pairs_of(bx, 0.3 * bx, np.full(4, 0.01))
    fixed, random = ivw(p, "fixed"), ivw(p, "random")
    assert random.theta == fixed.theta
    assert random.se == fixed.se


def test_matches_weighted_regression():
    rng = np.random.default_rng(0)
    bx = rng.normal(0, 0.05, 10)
    sy = rng.uniform(0.005, 0.01, 10)
    by = 0.2 * bx + rng.normal(0, 0.03, 10)
    # regression through the origin on rows scaled by 1/se
    X, y = (bx / sy)[:, None], by / sy
    coef, rss, _, _ = np.linalg.lstsq(X, y, rcond=None)
    se_fixed = np.sqrt(1 / (X[:, 0] @ X[:, 0]))
    phi = rss[0] / 9
    fixed, random = ivw(pairs_of(bx, by, sy), "fixed"), ivw(pairs_of(bx, by, sy), "random")
    assert fixed.theta == pytest.approx(coef[0], rel=1e-10)
    assert fixed.se == pytest.approx(se_fixed, rel=1e-10)
    assert phi > 1
    assert random.se == pytest.approx(se_fixed * np.sqrt(phi), rel=1e-10)
    assert fixed.ci_low < fixed.theta < fixed.ci_high


def test_ivw_errors():
    with pytest.raises(DegenerateInstrumentsError):
        ivw(pairs_of([0.0, 0.0, 0.0], [0.1, 0.2, 0.3], [0.01] * 3))
    with pytest.raises(DomainError):
        ivw(pairs_of([0.01, 0.02], [0.1, 0.2], [0.01] * 2), "random")
    with pytest.raises(DomainError):
        ivw(pairs_of([0.01], [0.1], [0.01]), "median")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(3, 30))
def test_random_se_never_below_fixed(seed, k):
    rng = np.random.default_rng(seed)
    bx = rng.normal(0, 0.05, k)
    sy = rng.uniform(0.005, 0.01, k)
    by = rng.normal(0.1, 0.5) * bx + rng.normal(0, 0.01, k)
    p = pairs_of(bx, by, sy)
    fixed, random = ivw(p, "fixed"), ivw(p, "random")
    assert random.theta == fixed.theta
    assert random.se >= fixed.se >= 0


def test_no_correction_uses_hard_selection_and_raw_effects():
    rng = np.random.default_rng(1)
    m = 400
    bx = np.where(np.arange(m) < 30, 0.05, 0.0) + rng.normal(0, 0.005, m)
    se = np.full(m, 0.005)
    pairs = pairs_of(bx, 0.2 * bx + rng.normal(0, 0.005, m), se, se)
    cfg = CareConfig(bootstrap_b=50, seed=2, n_effective=40_000)
    lam = 5.45
    est = care_no_correction(pairs, lam, cfg)
    keep = np.abs(bx / se) > lam
    assert est.k_instruments == keep.sum()
    raw = Instruments.from_arrays(bx[keep], se[keep] ** 2, pairs.beta_y[keep], se[keep])
    direct = care_from_instruments(raw, cfg)
    assert est.theta == direct.theta_tilde and est.se == direct.se
    again = care_no_correction(pairs, lam, cfg)
    assert again == est


def test_no_correction_curse_free_fixed_point():
    bx = np.linspace(0.03, 0.06, 8)
    pairs = pairs_of(bx, 0.5 * bx, np.full(8, 0.01), np.full(8, 1e-9))
    est = care_no_correction(pairs, 1e-6, CareConfig(bootstrap_b=20, n_effective=1e5))
    assert est.theta == pytest.approx(0.5, rel=1e-12)
