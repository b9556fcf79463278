"""Empirical rate exponents, bound statistics and noise-average diagnostics."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .loja import RatePrediction
from .schedule import StepSchedule

__all__ = [
    "Verdict",
    "ExponentFit",
    "BoundStat",
    "NoiseStats",
    "AbelCheck",
    "ChannelReport",
    "RateReport",
    "fit_exponent",
    "bound_statistic",
    "noise_statistic",
    "abel_decomposition_check",
    "analyze",
    "MIN_POINTS",
]

MIN_POINTS = 20
CHANNELS = ("f", "grad_norm_sq", "dist_S")


class Verdict(str, enum.Enum):
    CONSISTENT = "ConsistentWithBound"
    VIOLATED = "Violated"
    INCONCLUSIVE = "Inconclusive"


@dataclass
class ExponentFit:
    """Least-squares fit of ``log x = c - exponent * log gamma`` over a tail window."""

    exponent: float
    stderr: float
    n_used: int
    n_dropped: int
    window: tuple
    gamma_window: tuple
    conclusive: bool

    @property
    def slope(self) -> float:
        return -self.exponent


def _tail_mask(gammas: np.ndarray, tail: float) -> np.ndarray:
    if not 0 < tail <= 1:
        raise ValueError("tail fraction must lie in (0, 1]")
    g_end = float(np.max(gammas)) if gammas.size else 0.0
    if g_end <= 1.0:
        return np.zeros(gammas.size, dtype=bool)
    lo = max(1.0, g_end ** (1.0 - tail))
    return gammas >= lo


def fit_exponent(gammas, xs, tail: float = 0.5, ns=None) -> ExponentFit:
    """Rate exponent of ``x_n`` against ``gamma_n``.

    The window keeps samples with ``gamma >= max(1, gamma_N^(1 - tail))``, so
    ``tail = 0.5`` is the last half of the run on a log scale.  Non-positive
    or non-finite ``x`` are dropped and counted.
    """
    gammas = np.asarray(gammas, dtype=float)
    xs = np.asarray(xs, dtype=float)
    ns = np.arange(gammas.size) if ns is None else np.asarray(ns)
    win = _tail_mask(gammas, tail)
    good = win & np.isfinite(xs) & (xs > 0)
    dropped = int(np.sum(win & ~good))
    m = int(np.sum(good))
    if m < MIN_POINTS:
        return ExponentFit(math.nan, math.nan, m, dropped, _window(ns, win),
                           _window(gammas, win), False)
    lx = np.log(gammas[good])
    ly = np.log(xs[good])
    X = np.column_stack([np.ones(m), lx])
    coef, _, _, _ = np.linalg.lstsq(X, ly, rcond=None)
    resid = ly - X @ coef
    sxx = float(np.sum((lx - lx.mean()) ** 2))
    if sxx == 0:
        return ExponentFit(math.nan, math.nan, m, dropped, _window(ns, win),
                           _window(gammas, win), False)
    s2 = float(resid @ resid) / max(m - 2, 1)
    return ExponentFit(float(-coef[1]), math.sqrt(s2 / sxx), m, dropped,
                       _window(ns, good), _window(gammas, good), True)


def _window(vals: np.ndarray, mask: np.ndarray) -> tuple:
    if not np.any(mask):
        return (None, None)
    sel = vals[mask]
    lo, hi = sel.min(), sel.max()
    if np.issubdtype(np.asarray(vals).dtype, np.integer):
        return (int(lo), int(hi))
    return (float(lo), float(hi))


@dataclass
class BoundStat:
    """Tail maximum of ``gamma^p x`` and the growth flag.

    ``block_max`` are the maxima over the three log-gamma blocks
    ``[L/8, L/4]``, ``[L/4, L/2]``, ``[L/2, L]`` with ``L = log gamma_N``.
    """

    value: float
    growing: bool
    block_max: list


#: the last block maximum must exceed the first by this factor, with strict
#: increase in between, to flag growth
GROWTH_FACTOR = 3.0


def bound_statistic(gammas, xs, p: float, tail: float = 0.5) -> BoundStat:
    """``max gamma_n^p x_n`` over the tail window plus a growth flag."""
    gammas = np.asarray(gammas, dtype=float)
    xs = np.asarray(xs, dtype=float)
    ok = np.isfinite(xs) & (gammas >= 1.0)
    with np.errstate(over="ignore", invalid="ignore"):
        y = np.where(ok, gammas ** p * np.abs(xs), np.nan)
    win = _tail_mask(gammas, tail) & ok
    value = float(np.max(y[win])) if np.any(win) else math.nan
    blocks = []
    if gammas.size and np.max(gammas) > 1.0:
        L = math.log(float(np.max(gammas)))
        lg = np.log(np.maximum(gammas, 1e-300))
        for lo, hi in ((L / 8, L / 4), (L / 4, L / 2), (L / 2, L)):
            sel = ok & (lg >= lo) & (lg <= hi)
            blocks.append(float(np.max(y[sel])) if np.any(sel) else math.nan)
    growing = (
        len(blocks) == 3
        and all(np.isfinite(blocks))
        and blocks[0] < blocks[1] < blocks[2]
        and blocks[2] > GROWTH_FACTOR * blocks[0]
    )
    return BoundStat(value=value, growing=bool(growing), block_max=blocks)


@dataclass
class NoiseStats:
    """Window maxima ``m_n`` of the weighted noise sums at grid indices ``n``."""

    r: float
    n: np.ndarray
    gamma: np.ndarray
    m: np.ndarray
    w_hat: float
    trend: float

    def to_dict(self) -> dict[str, Any]:
        return {"r": self.r, "w_hat": self.w_hat, "trend": self.trend,
                "n": self.n.tolist(), "m": self.m.tolist()}


def _weighted_prefix(ws: np.ndarray, sched: StepSchedule, r: float, length: int) -> np.ndarray:
    # S[k] = sum_{i<k} alpha_i gamma_i^r w_i, S[0] = 0
    alphas = sched.alphas(0, length)
    g = sched.gammas(length)[:length]
    terms = (alphas * g ** r)[:, None] * ws[:length]
    S = np.zeros((length + 1, ws.shape[1]))
    np.cumsum(terms, axis=0, out=S[1:])
    return S


def noise_statistic(ws, sched: StepSchedule, r: float, ratio: float = 1.05,
                    tail: float = 0.5) -> NoiseStats:
    """``m_n = max_{n <= k < a(n,1)} |sum_{i=n}^{k} alpha_i gamma_i^r w_i|``.

    Computed at geometrically spaced ``n`` whose unit-time horizon fits in
    the stream.  ``w_hat`` is the maximum over the tail window and ``trend``
    the log-log slope of ``m_n`` against ``gamma_n`` there.
    """
    if ws is None:
        raise ValueError("noise stream unavailable; record it with RecordingPlan(record_noise=True)")
    ws = np.asarray(ws, dtype=float)
    if ws.ndim == 1:
        ws = ws[:, None]
    if not r > 0:
        raise ValueError("r must be positive")
    L = ws.shape[0]
    S = _weighted_prefix(ws, sched, r, L)
    gam = sched.gammas(L)
    grid = [1]
    while True:
        nxt = max(grid[-1] + 1, int(math.ceil(grid[-1] * ratio)))
        if nxt >= L:
            break
        grid.append(nxt)
    ns, ms = [], []
    for n in grid:
        h = int(np.searchsorted(gam, gam[n] + 1.0, side="right")) - 1
        if h > L or gam[-1] < gam[n] + 1.0:
            break
        h = min(h, L)
        if h <= n:
            h = n + 1
        diff = S[n + 1:h + 1] - S[n]
        ns.append(n)
        ms.append(float(np.sqrt(np.max(np.sum(diff * diff, axis=1)))))
    ns_a = np.array(ns, dtype=np.int64)
    ms_a = np.array(ms)
    g_a = gam[ns_a] if ns_a.size else np.zeros(0)
    if ms_a.size == 0:
        raise ValueError("stream too short for a unit-time window")
    win = _tail_mask(g_a, tail)
    if not np.any(win):
        win = np.ones(ms_a.size, dtype=bool)
    w_hat = float(np.max(ms_a[win]))
    fit = fit_exponent(g_a, ms_a, tail=tail)
    trend = -fit.exponent if fit.conclusive else math.nan
    return NoiseStats(r=float(r), n=ns_a, gamma=g_a, m=ms_a, w_hat=w_hat, trend=trend)


@dataclass
class AbelCheck:
    """Both sides of the summation-by-parts identity for ``u_{n,k} = sum alpha_i w_i``."""

    residual: float
    u_norm: float
    bound: float
    bound_ok: bool


def abel_decomposition_check(ws, sched: StepSchedule, r: float, n: int, k: int) -> AbelCheck:
    """Check ``u_{n,k}`` against its rewriting through ``T_j = sum_{i=n}^{j} alpha_i gamma_i^r w_i``.

    ``residual`` is the max-norm difference relative to the scale
    ``max_component sum |alpha_i w_i|``.  The bound
    ``|u_{n,k}| <= gamma_n^(-r) max_{n<=j<k} |T_j|`` needs ``gamma_n > 0``,
    hence ``n >= 1``.
    """
    ws = np.asarray(ws, dtype=float)
    if ws.ndim == 1:
        ws = ws[:, None]
    if not (1 <= n < k <= ws.shape[0]):
        raise ValueError(f"need 1 <= n < k <= {ws.shape[0]}, got n={n}, k={k}")
    alphas = sched.alphas(n, k)
    g = sched.gammas(k)[n:k + 1]
    w = ws[n:k]
    aw = alphas[:, None] * w
    u = aw.sum(axis=0)
    T = np.cumsum((alphas * g[:-1] ** r)[:, None] * w, axis=0)
    coef = g[:-1] ** (-r) - g[1:] ** (-r)
    rhs = (coef[:, None] * T).sum(axis=0) + g[-1] ** (-r) * T[-1]
    scale = float(np.max(np.abs(aw).sum(axis=0)))
    diff = float(np.max(np.abs(u - rhs)))
    residual = diff / scale if scale > 0 else diff
    u_norm = float(np.linalg.norm(u))
    bound = float(g[0] ** (-r) * np.max(np.linalg.norm(T, axis=1)))
    ok = u_norm <= bound * (1 + 1e-12) + 1e-300
    return AbelCheck(residual=residual, u_norm=u_norm, bound=bound, bound_ok=bool(ok))


@dataclass
class ChannelReport:
    channel: str
    fit: ExponentFit
    predicted_p: float
    bound: Optional[BoundStat]
    verdict: Verdict

    def to_dict(self) -> dict[str, Any]:
        def num(v):
            if v is None or (isinstance(v, float) and math.isnan(v)):
                return None
            return "inf" if v == math.inf else v

        return {
            "channel": self.channel,
            "slope": num(self.fit.slope),
            "exponent": num(self.fit.exponent),
            "stderr": num(self.fit.stderr),
            "window": list(self.fit.window),
            "n_used": self.fit.n_used,
            "n_dropped": self.fit.n_dropped,
            "predicted_p": num(self.predicted_p),
            "bound_sup": num(self.bound.value) if self.bound else None,
            "growing": self.bound.growing if self.bound else None,
            "verdict": self.verdict.value,
        }


@dataclass
class RateReport:
    channels: list
    prediction: Optional[RatePrediction]
    fhat: float
    fhat_estimated: bool
    extra: dict = field(default_factory=dict)

    def channel(self, name: str) -> ChannelReport:
        for c in self.channels:
            if c.channel == name:
                return c
        raise KeyError(name)

    def to_dict(self) -> dict[str, Any]:
        return {
            "channels": [c.to_dict() for c in self.channels],
            "prediction": self.prediction.to_dict() if self.prediction else None,
            "fhat": self.fhat,
            "fhat_estimated": self.fhat_estimated,
            **self.extra,
        }


def estimate_fhat(gammas, fs, tail: float = 0.5) -> float:
    """Tail minimum of ``f`` less a relative guard so the minimiser stays positive."""
    fs = np.asarray(fs, dtype=float)
    win = _tail_mask(np.asarray(gammas, dtype=float), tail) & np.isfinite(fs)
    if not np.any(win):
        win = np.isfinite(fs)
    fmin = float(np.min(fs[win]))
    return fmin - 1e-9 * max(1.0, abs(fmin))


def _channel(name, gammas, xs, ns, p, tail) -> ChannelReport:
    fit = fit_exponent(gammas, xs, tail=tail, ns=ns)
    if not fit.conclusive:
        return ChannelReport(name, fit, p, None, Verdict.INCONCLUSIVE)
    if p is None or not math.isfinite(p):
        return ChannelReport(name, fit, p, None, Verdict.INCONCLUSIVE)
    b = bound_statistic(gammas, xs, p, tail=tail)
    verdict = Verdict.VIOLATED if b.growing else Verdict.CONSISTENT
    return ChannelReport(name, fit, p, b, verdict)


def analyze(traj, prediction: Optional[RatePrediction] = None, fhat: Optional[float] = None,
            tail: float = 0.5) -> RateReport:
    """Fit all available channels of a trajectory and compare with ``prediction``.

    ``f - fhat`` and ``|grad f|^2`` are held to ``p``, ``d(., S)`` to ``q``.
    """
    estimated = fhat is None
    if estimated:
        fhat = estimate_fhat(traj.gamma, traj.f, tail)
    p = prediction.p if prediction else None
    q = prediction.q if prediction else None
    chans = [
        _channel("f", traj.gamma, traj.f - fhat, traj.n, p, tail),
        _channel("grad_norm_sq", traj.gamma, traj.grad_norm_sq, traj.n, p, tail),
    ]
    if np.any(np.isfinite(traj.dist_S)):
        chans.append(_channel("dist_S", traj.gamma, traj.dist_S, traj.n, q, tail))
    return RateReport(channels=chans, prediction=prediction, fhat=float(fhat),
                      fhat_estimated=estimated)


def worst_verdict(verdicts) -> Verdict:
    vs = list(verdicts)
    if Verdict.VIOLATED in vs:
        return Verdict.VIOLATED
    if Verdict.INCONCLUSIVE in vs or not vs:
        return Verdict.INCONCLUSIVE
    return Verdict.CONSISTENT
