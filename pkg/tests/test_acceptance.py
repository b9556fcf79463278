"""Acceptance suite: one test per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py`` (the lines appear in the terminal
summary) or directly as ``python tests/test_acceptance.py``.
"""
from __future__ import annotations

import statistics
import sys
import time
from functools import lru_cache

import numpy as np
import pytest

from sgrates.arma import (
    ArmaOrders,
    SignalModel,
    epsilon_filter,
    generate_signal,
    in_theta,
    rpe_run,
    spectral_data,
    spectral_objective,
)
from sgrates.engine import NoiseSource, markov_run, run
from sgrates.loja import estimate_exponent
from sgrates.objectives import circle_valley, power_norm, quadratic
from sgrates.rates import abel_decomposition_check, bound_statistic, fit_exponent
from sgrates.regions import CompactRegion
from sgrates.schedule import StepSchedule
from sgrates.supervised import (
    FeedforwardNet,
    SupervisedApp,
    TrainingSource,
    forward,
    grad,
    population_objective,
    update_direction,
)
from sgrates.td import (
    FiniteChain,
    LinearApprox,
    NonlinearApprox,
    batch_means,
    discounted_cost,
    exact_objective,
    sample_path,
    td_run,
)

RESULTS: dict[int, str] = {}
STEPS = 1_000_000


def report(k: int, ok: bool, detail: str) -> None:
    RESULTS[k] = f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    assert ok, RESULTS[k]


def tail_fit(traj, fhat=0.0, channel="f"):
    x = getattr(traj, channel) - (fhat if channel == "f" else 0.0)
    return fit_exponent(traj.gamma, x)


def fd(f, x, h):
    g = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


# experiments shared between criteria ------------------------------------------

@lru_cache(maxsize=None)
def exp_degenerate():
    t0 = time.perf_counter()
    tr = run(power_norm(2, 2), StepSchedule.power_law(0.2, 1.0, 10), NoiseSource.none(),
             np.array([2.0, 0.0]), STEPS)
    return (tr,), time.perf_counter() - t0


@lru_cache(maxsize=None)
def exp_quadratic():
    t0 = time.perf_counter()
    obj = quadratic(np.eye(4))
    sched = StepSchedule.power_law(1.0, 2 / 3, 5)
    trs = tuple(run(obj, sched, NoiseSource.gaussian(1.0, s), np.ones(4), STEPS)
                for s in range(16))
    return trs, time.perf_counter() - t0


TD_CHAIN = dict(N=5, seed=0, beta=0.5)


@lru_cache(maxsize=None)
def exp_td():
    t0 = time.perf_counter()
    chain = FiniteChain.random_ergodic(**TD_CHAIN)
    approx = LinearApprox.random(5, 3, 1)
    sched = StepSchedule.power_law(1.0, 2 / 3, 5)
    trs = tuple(td_run(chain, approx, sched, np.zeros(3), STEPS, seed=s) for s in range(8))
    return trs, time.perf_counter() - t0


ARMA_TRUTH = ([0.5], [0.4])


@lru_cache(maxsize=None)
def exp_arma():
    t0 = time.perf_counter()
    model = SignalModel.from_arma_truth(*ARMA_TRUTH, sigma=1.0)
    sched = StepSchedule.power_law(0.3, 2 / 3, 5)
    trs = tuple(rpe_run(model, ArmaOrders(1, 1), sched, np.array([0.3, 0.2]), STEPS, seed=s,
                        margin=0.02) for s in range(8))
    return trs, time.perf_counter() - t0


@lru_cache(maxsize=None)
def exp_supervised():
    net = FeedforwardNet(2, 2)
    app = SupervisedApp(net, TrainingSource.random_teacher(net, 0), m0=2000, m_max=2000)
    tr = markov_run(app, StepSchedule.power_law(0.5, 2 / 3, 5), np.full(net.dim, 0.1), 20_000,
                    seed=0)
    return (tr,), 0.0


# criteria ------------------------------------------------------------------------

def test_criterion_01_noise_free_degenerate_rate():
    (tr,), dt = exp_degenerate()
    e = tail_fit(tr).exponent
    report(1, 1.85 <= e <= 2.15 and dt < 10,
           f"power_norm k=2 f-exponent {e:.4f} in [1.85, 2.15], {dt:.1f}s < 10s")


def test_criterion_02_quadratic_noisy_bound():
    trs, dt = exp_quadratic()
    flags = [bound_statistic(t.gamma, t.f, 0.9).growing for t in trs]
    med = statistics.median(tail_fit(t).exponent for t in trs)
    report(2, not any(flags) and med >= 0.75 and dt < 60,
           f"growth flags {sum(flags)}/16, median f-exponent {med:.4f} >= 0.75, {dt:.1f}s < 60s")


def test_criterion_03_gradient_floor():
    trs, _ = exp_quadratic()
    med = statistics.median(tail_fit(t, channel="grad_norm_sq").exponent for t in trs)
    report(3, med >= 0.30, f"median |grad f|^2 exponent {med:.4f} >= 0.30")


def test_criterion_04_lojasiewicz_estimator():
    t0 = time.perf_counter()
    ball = CompactRegion.ball((0.0, 0.0), 1.0)
    mus = [estimate_exponent(o, ball, n_samples=100_000).params.mu
           for o in (quadratic(np.eye(2)), power_norm(2, 2), power_norm(3, 2))]
    nu = estimate_exponent(circle_valley(1.0), CompactRegion.ball((0.0, 0.0), 1.5, 0.5),
                           n_samples=100_000).params.nu
    dt = time.perf_counter() - t0
    errs = [abs(m - t) for m, t in zip(mus, (2.0, 4 / 3, 6 / 5))] + [abs(nu - 1.0)]
    report(4, max(errs) <= 0.05 and dt < 30,
           "mu " + ", ".join(f"{m:.4f}" for m in mus) + f"; nu {nu:.4f}; max err "
           f"{max(errs):.4f} <= 0.05, {dt:.1f}s < 30s")


def test_criterion_05_abel_identity():
    rng = np.random.default_rng(5)
    w = rng.standard_normal((10_000, 2))
    sched = StepSchedule.power_law(1.0, 2 / 3, 5)
    worst, bound_ok = 0.0, True
    for _ in range(100):
        n = int(rng.integers(1, 9_999))
        k = int(rng.integers(n + 1, 10_001))
        chk = abel_decomposition_check(w, sched, 0.45, n, k)
        worst = max(worst, chk.residual)
        bound_ok &= chk.bound_ok
    report(5, worst <= 1e-10 and bound_ok,
           f"max relative residual {worst:.2e} <= 1e-10, bound held on all 100 pairs: {bound_ok}")


def test_criterion_06_td_oracles():
    chain = FiniteChain.random_ergodic(**TD_CHAIN)
    g = discounted_cost(chain)
    bell = float(np.max(np.abs(g - chain.c - chain.beta * chain.P @ g)))
    rng = np.random.default_rng(6)
    worst = 0.0
    for approx in (LinearApprox.random(5, 3, 1), NonlinearApprox(rng.standard_normal((5, 2)))):
        for _ in range(100):
            th = rng.standard_normal(approx.dim)
            gr = exact_objective(chain, approx, th, g)[1]
            num = fd(lambda t: exact_objective(chain, approx, t, g)[0], th, 1e-6)
            worst = max(worst, np.linalg.norm(gr - num) / max(np.linalg.norm(gr), 1.0))
    approx = LinearApprox.random(5, 3, 1)
    th = np.array([0.2, -0.4, 0.1])
    xs = sample_path(chain, STEPS, seed=6)
    vals = 0.5 * (g - approx.values(th))[xs] ** 2
    mc, se = batch_means(vals)
    exact = exact_objective(chain, approx, th, g)[0]
    z = abs(mc - exact) / se
    report(6, bell <= 1e-10 and worst <= 1e-6 and z <= 4,
           f"Bellman residual {bell:.1e}, grad FD rel err {worst:.1e}, "
           f"frozen-theta MC z-score {z:.2f} <= 4")


def test_criterion_07_td_rate():
    trs, dt = exp_td()
    fhat = trs[0].metadata["fhat"]
    med = statistics.median(tail_fit(t, fhat).exponent for t in trs)
    report(7, med >= 0.7 and dt < 120,
           f"median exponent of f - fhat {med:.4f} >= 0.70, {dt:.1f}s < 120s")


def test_criterion_08_arma_identities():
    orders = ArmaOrders(1, 1)
    model = SignalModel.from_arma_truth(*ARMA_TRUTH, sigma=1.0)
    y = generate_signal(model, STEPS, seed=8)
    th0 = np.array([0.3, 0.2])
    _, psi = epsilon_filter(th0, y[:5000], orders)
    h = 1e-6
    fd_err = 0.0
    for j in range(2):
        e = np.zeros(2)
        e[j] = h
        num = (epsilon_filter(th0 + e, y[:5000], orders)[0]
               - epsilon_filter(th0 - e, y[:5000], orders)[0]) / (2 * h)
        # psi is the predictor gradient, i.e. minus the gradient of eps
        fd_err = max(fd_err, np.max(np.abs(psi[1000:, j] + num[1000:])) / np.max(np.abs(num)))
    data = spectral_data(model)
    rng = np.random.default_rng(8)
    worst = 0.0
    count = 0
    while count < 10:
        th = np.array([rng.uniform(-0.9, 0.9), rng.uniform(-0.95, 0.95)])
        if not in_theta(th, orders, 0.05):
            continue
        eps, _ = epsilon_filter(th, y, orders)
        avg = 0.5 * float(np.mean(eps[1000:] ** 2))
        worst = max(worst, abs(spectral_objective(th, data, orders).f - avg) / avg)
        count += 1
    ftruth = spectral_objective(model.truth_theta, data, orders).f
    truth_err = abs(ftruth - 0.5) / 0.5
    report(8, fd_err <= 1e-4 and worst <= 0.01 and truth_err <= 0.01,
           f"psi FD rel err {fd_err:.1e}, spectral vs time average max rel err {worst:.4f}, "
           f"f(truth) {ftruth:.6f} vs 0.5")


def test_criterion_09_arma_rate():
    trs, dt = exp_arma()
    exits = sum(t.stop_reason != "completed" for t in trs)
    fhat = trs[0].metadata["fhat"]
    med = statistics.median(tail_fit(t, fhat).exponent for t in trs)
    report(9, exits == 0 and med >= 0.7 and dt < 120,
           f"seeds leaving the stability region {exits}/8, median exponent {med:.4f} >= 0.70, "
           f"{dt:.1f}s < 120s")


def test_criterion_10_supervised():
    rng = np.random.default_rng(10)
    worst = 0.0
    for phis in (("logistic", "logistic"), ("gaussian", "gaussian")):
        net = FeedforwardNet(3, 4, *phis)
        for _ in range(50):
            th = rng.standard_normal(net.dim)
            x = rng.standard_normal(4)
            g = grad(net, th, x)
            num = fd(lambda t: float(forward(net, t, x)), th, 1e-6)
            worst = max(worst, np.linalg.norm(g - num) / max(np.linalg.norm(g), 1e-3))
    net = FeedforwardNet(2, 2)
    src = TrainingSource.random_teacher(net, 1, sigma=0.1)
    m = 1_000_000
    zmax = 0.0
    for i, th in enumerate((np.full(net.dim, -0.2), np.full(net.dim, 0.5),
                            np.array([1.0, -0.5, 0.3, -0.8, 0.6, 0.2]))):
        mean, se = update_direction(net, src, th, m, seed=100 + i)
        # common random numbers keep the finite difference of the MC objective stable
        fobj = lambda t: population_objective(net, src, t, m, seed=200 + i).value
        gfd = fd(fobj, th, 1e-4)
        # the MC finite difference carries the same sampling error as the mean update
        assert np.all(se > 0), "degenerate update direction"
        z = np.abs(mean + gfd) / (np.sqrt(2.0) * se)
        zmax = max(zmax, float(z.max()))
    report(10, worst <= 1e-6 and zmax <= 4,
           f"backprop FD rel err {worst:.1e} <= 1e-6, max |z| of update vs -grad {zmax:.2f} <= 4")


def test_criterion_11_determinism():
    experiments = (exp_degenerate, exp_quadratic, exp_td, exp_arma, exp_supervised)
    mismatched = []
    for exp in experiments:
        first = [t.to_csv_text() for t in exp()[0]]
        exp.cache_clear()
        again = [t.to_csv_text() for t in exp()[0]]
        if first != again:
            mismatched.append(exp.__name__)
    n = sum(len(exp()[0]) for exp in experiments)
    report(11, not mismatched,
           f"{n} trajectories re-run, CSV mismatches: {mismatched or 'none'}")


if __name__ == "__main__":
    failed = 0
    for name, fn in sorted(globals().items()):
        if name.startswith("test_criterion_"):
            try:
                fn()
            except AssertionError:
                failed += 1
    for k in sorted(RESULTS):
        print(RESULTS[k])
    sys.exit(1 if failed else 0)
