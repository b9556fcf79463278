import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sgrates.schedule import (
    NoiseRate,
    StepSchedule,
    gamma,
    horizon,
    noise_rate_threshold,
    validate_assumptions,
)


def test_gamma_examples():
    assert gamma(StepSchedule.explicit([1.0] * 5), 3) == 3.0
    assert gamma(StepSchedule.power_law(0.3, 0.7, 4), 0) == 0.0
    assert gamma(StepSchedule.power_law(1, 1, 1), 3) == pytest.approx(1 + 1 / 2 + 1 / 3, abs=1e-15)


def test_horizon_examples():
    ones = StepSchedule.explicit([1.0] * 20)
    assert horizon(ones, 0, 2.5) == 2
    assert horizon(ones, 5, 0.5) == 5
    assert horizon(StepSchedule.power_law(1, 1, 1), 1, 1.0) == 3


def test_horizon_rejects_nonpositive_t():
    with pytest.raises(ValueError):
        horizon(StepSchedule.power_law(), 0, 0.0)


@pytest.mark.parametrize("a", [0.5, 0.4, 1.2])
def test_power_law_rejects_exponent(a):
    with pytest.raises(ValueError):
        StepSchedule.power_law(1.0, a, 1)


def test_explicit_rejects_zero_unless_relaxed():
    with pytest.raises(ValueError):
        StepSchedule.explicit([0.1, 0.0])
    assert StepSchedule.explicit([0.1, 0.0], strict=False).alphas(0, 2)[1] == 0.0


@pytest.mark.parametrize("a,r,ok", [(2 / 3, 0.45, True), (2 / 3, 0.6, False), (1.0, 3.0, True)])
def test_validate_examples(a, r, ok):
    rep = validate_assumptions(StepSchedule.power_law(1.0, a, 1), NoiseRate(r))
    assert rep.conclusive
    assert rep.valid is ok


def test_threshold_value():
    assert noise_rate_threshold(2 / 3) == pytest.approx(0.5)
    assert noise_rate_threshold(1.0) == math.inf


def test_explicit_validation_inconclusive():
    rep = validate_assumptions(StepSchedule.explicit([0.5] * 10), 0.3)
    assert not rep.conclusive and not rep.valid
    assert rep.diagnostics["prefix_length"] == 10


def test_gamma_matches_extended_precision_sum():
    s = StepSchedule.power_law(1.0, 0.6, 3)
    n = 200_000
    ref = math.fsum(s.alphas(0, n))
    assert gamma(s, n) == pytest.approx(ref, rel=1e-14)


def test_power_law_asymptotics():
    c, a = 0.7, 2 / 3
    s = StepSchedule.power_law(c, a, 1)
    n = 10**6
    assert gamma(s, n) / (c * n ** (1 - a) / (1 - a)) == pytest.approx(1.0, rel=0.01)


def test_gamma_cache_extension_is_consistent():
    s1 = StepSchedule.power_law(1.0, 0.8, 2)
    s2 = StepSchedule.power_law(1.0, 0.8, 2)
    s1.gammas(10)
    s1.gammas(5000)
    np.testing.assert_array_equal(s1.gammas(5000), s2.gammas(5000))


@settings(max_examples=60, deadline=None)
@given(
    c=st.floats(0.01, 5.0),
    a=st.floats(0.51, 1.0),
    n0=st.integers(1, 50),
    n=st.integers(0, 3000),
    t=st.floats(0.01, 20.0),
)
def test_horizon_brackets_t(c, a, n0, n, t):
    s = StepSchedule.power_law(c, a, n0)
    # keep the answer within reach: slow schedules can need e^(t/c) steps
    g = s.gammas(n + 100_000)
    t = min(t, 0.5 * (g[-1] - g[n]))
    k = horizon(s, n, t)
    g = s.gammas(k + 1)
    assert k >= n
    assert g[k] - g[n] <= t < g[k + 1] - g[n]


def test_horizon_overflow_is_reported():
    s = StepSchedule.power_law(0.01, 1.0, 1)
    with pytest.raises(OverflowError):
        horizon(s, 0, 20.0)


@settings(max_examples=40, deadline=None)
@given(vals=st.lists(st.floats(1e-3, 10.0), min_size=2, max_size=200))
def test_gamma_strictly_increasing(vals):
    s = StepSchedule.explicit(vals)
    g = s.gammas(len(vals))
    assert g[0] == 0.0
    assert np.all(np.diff(g) > 0)


def test_roundtrip_dict():
    s = StepSchedule.power_law(0.3, 0.75, 7)
    assert StepSchedule.from_dict(s.to_dict()) == s
