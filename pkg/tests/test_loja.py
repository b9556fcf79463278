import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sgrates.loja import LojaParams, PhiMode, estimate_exponent, phi_of_w, predict_rates
from sgrates.objectives import circle_valley, power_norm, quadratic
from sgrates.regions import CompactRegion


def test_predict_quadratic_noisy():
    p = predict_rates((2.0, 1.0), 0.45)
    assert p.rhat == math.inf
    assert p.p == pytest.approx(0.9)
    assert p.q == pytest.approx(0.45)
    assert p.phi_mode is PhiMode.BELOW


def test_predict_degenerate_noise_free_branch():
    p = predict_rates((4 / 3, 1 / 3), 10.0)
    assert p.rhat == pytest.approx(1.5)
    assert p.p == pytest.approx(2.0)
    assert p.q == pytest.approx((4 / 3) * (1 / 3) / 2 * 1.5)
    assert p.phi_mode is PhiMode.ABOVE


def test_predict_unbounded_r():
    assert predict_rates((2.0, 1.0), 7.0).p == pytest.approx(14.0)
    assert predict_rates((2.0, 1.0), math.inf).p == math.inf


def test_predict_at_threshold():
    assert predict_rates((1.5, 1.0), 2.0).phi_mode is PhiMode.AT


@pytest.mark.parametrize("w,mode,expected", [(0.0, "Below", 0.0), (0.7, "At", 1.7), (5.0, "Above", 1.0)])
def test_phi_of_w(w, mode, expected):
    assert phi_of_w(w, mode) == pytest.approx(expected)


@given(mu=st.floats(1.01, 2.0), nu=st.floats(0.01, 1.0), r=st.floats(0.01, 50.0))
def test_prediction_identities(mu, nu, r):
    p = predict_rates(LojaParams(0.5, mu, nu), r)
    m = min(r, p.rhat)
    assert p.p / mu == pytest.approx(m, rel=1e-12)
    assert p.q == pytest.approx(p.nu_hat / mu * p.p, rel=1e-12)
    assert p.p > min(1.0, r) or mu * m == pytest.approx(min(1.0, r))


@pytest.mark.parametrize("kw", [dict(delta=1.0, mu=2, nu=1), dict(delta=0.5, mu=1.0, nu=1),
                                dict(delta=0.5, mu=2, nu=0), dict(delta=0.5, mu=2, nu=1, M=0.5)])
def test_loja_params_invariants(kw):
    with pytest.raises(ValueError):
        LojaParams(**kw)


@pytest.mark.parametrize("obj,mu", [(quadratic(np.eye(2)), 2.0), (power_norm(2, 2), 4 / 3),
                                    (power_norm(3, 2), 6 / 5)], ids=["quadratic", "k2", "k3"])
def test_estimator_recovers_mu(obj, mu):
    est = estimate_exponent(obj, CompactRegion.ball((0.0, 0.0), 1.0), n_samples=20_000)
    assert est.params.mu == pytest.approx(mu, abs=0.05)
    assert est.params.M == 1.0 and est.params.N == 1.0


def test_estimator_circle_nu():
    region = CompactRegion.ball((0.0, 0.0), 1.5, 0.5)
    est = estimate_exponent(circle_valley(1.0), region, n_samples=20_000)
    assert est.params.nu == pytest.approx(1.0, abs=0.05)
    assert est.params.mu == pytest.approx(2.0, abs=0.05)


def test_phi_grid_monotone_and_clipped():
    est = estimate_exponent(power_norm(2, 2), CompactRegion.ball((0.0, 0.0), 1.0), n_samples=5000)
    phis = [ph for _, ph in est.phi_grid]
    assert min(phis) >= 0.5
    assert all(b >= a for a, b in zip(phis, phis[1:]))


def test_level_window_empty():
    # f >= 1 everywhere on this shell, so no point satisfies 0 < |f| < 1
    region = CompactRegion.ball((0.0, 0.0), 3.0, 2.0)
    with pytest.raises(ValueError, match="level window empty"):
        estimate_exponent(power_norm(2, 2), region, n_samples=2000)
