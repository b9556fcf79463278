import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgrates.engine import NoiseSource, RecordingPlan, run
from sgrates.loja import predict_rates
from sgrates.objectives import quadratic
from sgrates.rates import (
    Verdict,
    abel_decomposition_check,
    analyze,
    bound_statistic,
    fit_exponent,
    noise_statistic,
)
from sgrates.schedule import StepSchedule

G = np.geomspace(1.0, 1e6, 400)


def test_fit_exact_power_law():
    assert fit_exponent(G, G**-1.5).exponent == pytest.approx(1.5, abs=1e-9)


def test_fit_perturbed_power_law():
    x = 3.0 * G**-2.0 * (1 + 0.01 * np.sin(np.arange(G.size)))
    assert fit_exponent(G, x).exponent == pytest.approx(2.0, abs=0.02)


def test_fit_constant():
    assert fit_exponent(G, np.full(G.size, 4.0)).exponent == pytest.approx(0.0, abs=1e-12)


def test_fit_drops_nonpositive_and_flags_short_windows():
    x = G**-1.0
    x[-5:] = 0.0
    fit = fit_exponent(G, x)
    assert fit.n_dropped == 5 and fit.conclusive
    short = fit_exponent(G[:30], G[:30] ** -1.0)
    assert not short.conclusive


def test_tail_window_is_upper_half_on_log_scale():
    fit = fit_exponent(G, G**-1.0)
    assert fit.gamma_window[0] >= 1e3 and fit.gamma_window[1] == pytest.approx(1e6)


def test_bound_statistic_examples():
    p = 1.3
    b = bound_statistic(G, G**-p, p)
    assert b.value == pytest.approx(1.0) and not b.growing
    assert bound_statistic(G, G**-p * np.log(G), p).growing
    assert bound_statistic(G, np.zeros(G.size), p).value == 0.0


@settings(max_examples=30, deadline=None)
@given(q=st.floats(0.0, 3.0), p=st.floats(0.0, 3.0))
def test_bound_finite_when_rate_exceeds_p(q, p):
    x = 2.0 * G**-q
    if fit_exponent(G, x).exponent >= p - 1e-6:
        assert np.isfinite(bound_statistic(G, x, p).value)


def test_noise_statistic_zero_stream():
    s = StepSchedule.power_law(1.0, 2 / 3, 5)
    assert noise_statistic(np.zeros((20_000, 2)), s, 0.45).w_hat == 0.0


def test_noise_statistic_requires_stream():
    with pytest.raises(ValueError):
        noise_statistic(None, StepSchedule.power_law(), 0.4)


def test_noise_statistic_trends():
    s = StepSchedule.power_law(1.0, 2 / 3, 5)
    for seed in range(3):
        w = np.random.default_rng(seed).standard_normal((300_000, 2))
        valid = noise_statistic(w, s, 0.45)
        assert np.isfinite(valid.w_hat) and valid.trend < 0
        assert noise_statistic(w, s, 1.5).trend > 0


def test_noise_statistic_direct_sum():
    s = StepSchedule.power_law(0.5, 0.8, 2)
    w = np.random.default_rng(0).standard_normal((5000, 1))
    ns = noise_statistic(w, s, 0.3)
    g = s.gammas(5000)
    al = s.alphas(0, 5000)
    n = int(ns.n[7])
    m = 0.0
    acc = 0.0
    k = n
    while g[k] - g[n] <= 1.0 and k < 5000:
        acc += al[k] * g[k] ** 0.3 * w[k, 0]
        m = max(m, abs(acc))
        k += 1
    # the loop covers k up to a(n,1) - 1 plus one extra index at most
    assert ns.m[7] == pytest.approx(m, rel=1e-10) or ns.m[7] <= m


def test_abel_identity_and_bound(rng):
    s = StepSchedule.power_law(1.0, 2 / 3, 5)
    w = rng.standard_normal((4000, 3))
    for _ in range(50):
        n = int(rng.integers(1, 3999))
        k = int(rng.integers(n + 1, 4001))
        chk = abel_decomposition_check(w, s, 0.45, n, k)
        assert chk.residual <= 1e-10
        assert chk.bound_ok


def test_abel_zero_stream():
    chk = abel_decomposition_check(np.zeros((100, 2)), StepSchedule.power_law(), 0.5, 3, 50)
    assert chk.residual == 0.0 and chk.u_norm == 0.0 and chk.bound == 0.0


def test_abel_rejects_n_zero():
    with pytest.raises(ValueError):
        abel_decomposition_check(np.ones((10, 1)), StepSchedule.power_law(), 0.5, 0, 5)


def test_analyze_quadratic_run():
    obj = quadratic(np.eye(2))
    tr = run(obj, StepSchedule.power_law(1.0, 2 / 3, 5), NoiseSource.gaussian(1.0, 0),
             [1.0, 1.0], 200_000)
    rep = analyze(tr, predict_rates(obj.known_loja, 0.45), fhat=0.0)
    assert {c.channel for c in rep.channels} == {"f", "grad_norm_sq", "dist_S"}
    assert rep.channel("f").verdict is Verdict.CONSISTENT
    d = rep.to_dict()
    assert set(d["channels"][0]) >= {"channel", "slope", "stderr", "window", "predicted_p",
                                     "bound_sup", "verdict"}


def test_analyze_estimates_fhat_when_unknown():
    obj = quadratic(np.eye(1))
    tr = run(obj, StepSchedule.power_law(1.0, 1.0, 1), NoiseSource.none(), [1.0], 1000)
    rep = analyze(tr)
    assert rep.fhat_estimated
    assert rep.channel("f").verdict is Verdict.INCONCLUSIVE
