"""TD(1) learning of discounted costs on a finite ergodic Markov chain.

Row ``i`` of ``P`` is the distribution of the next state from ``i``.  The
recursion is

    theta_{n+1} = theta_n + alpha_n (c(x_n) + beta G(x_{n+1}) - G(x_n)) y_n
    y_{n+1}     = beta y_n + H(x_{n+1})

evaluated at ``theta_n`` with trace ``y_0 = 0``; the target objective is the
stationary weighted error ``f(theta) = sum_i pi(i) (g(i) - G_theta(i))^2 / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from numba import njit

from .engine import RecordingPlan, Trajectory, markov_run
from .objectives import DIVERGENCE_NORM, Objective
from .regions import CompactRegion
from .schedule import StepSchedule

__all__ = [
    "FiniteChain",
    "LinearApprox",
    "NonlinearApprox",
    "discounted_cost",
    "exact_objective",
    "weighted_ls_minimum",
    "td_step",
    "sample_path",
    "TDApp",
    "td_run",
    "batch_means",
]


@dataclass(frozen=True)
class FiniteChain:
    """Ergodic chain with per-state cost ``c`` and discount ``beta``."""

    P: np.ndarray
    c: np.ndarray
    beta: float
    pi: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        P = np.array(self.P, dtype=float)
        c = np.array(self.c, dtype=float).reshape(-1)
        if P.ndim != 2 or P.shape[0] != P.shape[1]:
            raise ValueError("P must be square")
        n = P.shape[0]
        if n < 2:
            raise ValueError("need at least two states")
        if c.size != n:
            raise ValueError(f"cost vector has {c.size} entries, chain has {n} states")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=1) - 1.0)) > 1e-12:
            raise ValueError("rows of P must be probability vectors (sum 1 within 1e-12)")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError("beta must lie in [0, 1)")
        if not _primitive(P):
            raise ValueError("P is not irreducible and aperiodic")
        A = P.T - np.eye(n)
        A[-1, :] = 1.0
        rhs = np.zeros(n)
        rhs[-1] = 1.0
        pi = np.linalg.solve(A, rhs)
        if np.max(np.abs(pi @ P - pi)) > 1e-10:
            raise ValueError("stationary distribution solve is inaccurate")
        P.setflags(write=False)
        c.setflags(write=False)
        pi.setflags(write=False)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "pi", pi)

    @property
    def n_states(self) -> int:
        return self.P.shape[0]

    @classmethod
    def random_ergodic(cls, N: int, seed: int, beta: float = 0.5, c=None,
                       floor: float = 1e-3) -> "FiniteChain":
        """Dirichlet(1) rows floored at ``floor`` and renormalised; costs ``U(0, 1)``
        unless given."""
        rng = np.random.default_rng(seed)
        P = rng.dirichlet(np.ones(N), size=N)
        P = np.maximum(P, floor)
        P /= P.sum(axis=1, keepdims=True)
        cost = rng.random(N) if c is None else np.asarray(c, dtype=float)
        return cls(P, cost, beta)

    @classmethod
    def from_dict(cls, spec: dict) -> "FiniteChain":
        if "generator" in spec:
            return cls.random_ergodic(int(spec["N"]), int(spec.get("seed", 0)),
                                      float(spec.get("beta", 0.5)), spec.get("c"))
        N = int(spec["N"])
        P = np.asarray(spec["P"], dtype=float).reshape(N, N)
        return cls(P, spec["c"], float(spec["beta"]))

    def to_dict(self) -> dict[str, Any]:
        return {"N": self.n_states, "P": self.P.ravel().tolist(), "c": self.c.tolist(),
                "beta": self.beta}


def _primitive(P: np.ndarray) -> bool:
    # P^m > 0 for some m <= N^2, by repeated squaring of the support pattern
    n = P.shape[0]
    B = (P > 0).astype(np.int64)
    Q = B.copy()
    m = 1
    while m <= n * n:
        if np.all(Q > 0):
            return True
        Q = np.minimum((Q @ B), 1)
        m += 1
    return False


def discounted_cost(chain: FiniteChain) -> np.ndarray:
    """Solve ``(I - beta P) g = c``."""
    A = np.eye(chain.n_states) - chain.beta * chain.P
    try:
        return np.linalg.solve(A, chain.c)
    except np.linalg.LinAlgError as exc:
        raise ValueError("discounted-cost system is singular") from exc


# approximators ---------------------------------------------------------------

@dataclass(frozen=True)
class LinearApprox:
    """``G_theta(i) = theta . phi(i)`` for a feature table ``phi`` of shape ``(N, d)``."""

    features: np.ndarray

    def __post_init__(self) -> None:
        F = np.array(self.features, dtype=float)
        if F.ndim != 2:
            raise ValueError("feature table must be 2-D")
        F.setflags(write=False)
        object.__setattr__(self, "features", F)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def values(self, theta) -> np.ndarray:
        return self.features @ self._check(theta)

    def jacobian(self, theta) -> np.ndarray:
        self._check(theta)
        return np.array(self.features)

    def _check(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        return theta

    def describe(self) -> dict[str, Any]:
        return {"kind": "linear", "features": self.features.tolist()}

    @classmethod
    def random(cls, N: int, d: int, seed: int) -> "LinearApprox":
        F = np.random.default_rng(seed).standard_normal((N, d))
        if np.linalg.matrix_rank(F) < min(N, d):
            raise ValueError("random features are rank deficient; pick another seed")
        return cls(F)


@dataclass(frozen=True)
class NonlinearApprox:
    """``G_theta(i) = sum_k a_k tanh(b_k . phi(i))`` with ``theta = [a, b_1, .., b_K]``."""

    features: np.ndarray
    hidden: int = 2

    def __post_init__(self) -> None:
        F = np.array(self.features, dtype=float)
        F.setflags(write=False)
        object.__setattr__(self, "features", F)

    @property
    def dim(self) -> int:
        return self.hidden * (1 + self.features.shape[1])

    def _split(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}")
        K = self.hidden
        return theta[:K], theta[K:].reshape(K, -1)

    def values(self, theta) -> np.ndarray:
        a, B = self._split(theta)
        return np.tanh(self.features @ B.T) @ a

    def jacobian(self, theta) -> np.ndarray:
        a, B = self._split(theta)
        t = np.tanh(self.features @ B.T)
        dB = ((1.0 - t * t) * a)[:, :, None] * self.features[:, None, :]
        return np.concatenate([t, dB.reshape(self.features.shape[0], -1)], axis=1)

    def describe(self) -> dict[str, Any]:
        return {"kind": "nonlinear", "hidden": self.hidden,
                "features": self.features.tolist()}


def approx_from_dict(spec: dict, n_states: int):
    kind = spec.get("kind", "linear")
    if "features" in spec:
        F = np.asarray(spec["features"], dtype=float)
    else:
        F = np.random.default_rng(int(spec.get("seed", 0))).standard_normal(
            (n_states, int(spec.get("d", 2))))
    if kind == "linear":
        return LinearApprox(F)
    if kind == "nonlinear":
        return NonlinearApprox(F, int(spec.get("hidden", 2)))
    raise ValueError(f"unknown approximator kind {kind!r}")


def exact_objective(chain: FiniteChain, approx, theta, g: Optional[np.ndarray] = None):
    """``f = sum pi (g - G)^2 / 2`` and ``grad f = -sum pi (g - G) H``."""
    if g is None:
        g = discounted_cost(chain)
    e = g - approx.values(theta)
    f = 0.5 * float(np.sum(chain.pi * e * e))
    grad = -(chain.pi * e) @ approx.jacobian(theta)
    return f, grad


def weighted_ls_minimum(chain: FiniteChain, approx: LinearApprox,
                        g: Optional[np.ndarray] = None) -> tuple[np.ndarray, float]:
    """Normal-equation minimiser of the weighted error for a linear approximator."""
    if g is None:
        g = discounted_cost(chain)
    F = approx.features
    W = chain.pi
    theta = np.linalg.solve(F.T @ (W[:, None] * F), F.T @ (W * g))
    f, _ = exact_objective(chain, approx, theta, g)
    return theta, f


def td_step(chain: FiniteChain, approx, theta, y, x: int, alpha: float,
            rng: Optional[np.random.Generator] = None, x_next: Optional[int] = None):
    """One TD(1) step from state ``x``; returns ``(theta', y', x_next)``.

    The parameter update uses the current trace ``y``; the trace is then
    refreshed with ``H`` at the old parameter and the new state.
    """
    if x_next is None:
        if rng is None:
            raise ValueError("need rng or x_next")
        x_next = int(rng.choice(chain.n_states, p=chain.P[x]))
    theta = np.asarray(theta, dtype=float)
    y = np.asarray(y, dtype=float)
    G = approx.values(theta)
    td = chain.c[x] + chain.beta * G[x_next] - G[x]
    H_next = approx.jacobian(theta)[x_next]
    return theta + alpha * td * y, chain.beta * y + H_next, x_next


# compiled kernels ------------------------------------------------------------

@njit(cache=True)
def _next_state(cum, x, u):
    row = cum[x]
    n = row.size
    for j in range(n - 1):
        if u < row[j]:
            return j
    return n - 1


@njit(cache=True)
def _sample_path(cum, x0, us):
    out = np.empty(us.size + 1, dtype=np.int64)
    out[0] = x0
    x = x0
    for t in range(us.size):
        x = _next_state(cum, x, us[t])
        out[t + 1] = x
    return out


@njit(cache=True)
def _td_linear(theta, y, x, alphas, us, cum, F, c, beta, limit):
    th = theta.copy()
    tr = y.copy()
    d = th.size
    for t in range(alphas.size):
        xn = _next_state(cum, x, us[t])
        gx = 0.0
        gn = 0.0
        for k in range(d):
            gx += F[x, k] * th[k]
            gn += F[xn, k] * th[k]
        step = alphas[t] * (c[x] + beta * gn - gx)
        sq = 0.0
        for k in range(d):
            th[k] += step * tr[k]
            tr[k] = beta * tr[k] + F[xn, k]
            sq += th[k] * th[k]
        x = xn
        if not np.isfinite(sq) or sq > limit * limit:
            return th, tr, x, t + 1, True
    return th, tr, x, alphas.size, False


@njit(cache=True)
def _td_nonlinear(theta, y, x, alphas, us, cum, F, c, beta, K, limit):
    th = theta.copy()
    tr = y.copy()
    d = th.size
    m = F.shape[1]
    tx = np.empty(K)
    tn = np.empty(K)
    for t in range(alphas.size):
        xn = _next_state(cum, x, us[t])
        gx = 0.0
        gn = 0.0
        for k in range(K):
            zx = 0.0
            zn = 0.0
            for j in range(m):
                zx += th[K + k * m + j] * F[x, j]
                zn += th[K + k * m + j] * F[xn, j]
            tx[k] = math.tanh(zx)
            tn[k] = math.tanh(zn)
            gx += th[k] * tx[k]
            gn += th[k] * tn[k]
        step = alphas[t] * (c[x] + beta * gn - gx)
        # trace refresh uses H at the pre-update parameter
        for k in range(K):
            hk = (1.0 - tn[k] * tn[k]) * th[k]
            for j in range(m):
                idx = K + k * m + j
                th[idx] += step * tr[idx]
                tr[idx] = beta * tr[idx] + hk * F[xn, j]
        for k in range(K):
            th[k] += step * tr[k]
            tr[k] = beta * tr[k] + tn[k]
        sq = 0.0
        for k in range(d):
            sq += th[k] * th[k]
        x = xn
        if not np.isfinite(sq) or sq > limit * limit:
            return th, tr, x, t + 1, True
    return th, tr, x, alphas.size, False


def _cumulative(P: np.ndarray) -> np.ndarray:
    cum = np.cumsum(P, axis=1)
    cum[:, -1] = 1.0
    return np.ascontiguousarray(cum)


def sample_path(chain: FiniteChain, n: int, seed: int, x0: Optional[int] = None) -> np.ndarray:
    """States ``x_0 .. x_n``; ``x_0 ~ pi`` unless given."""
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    if x0 is None:
        x0 = int(np.searchsorted(np.cumsum(chain.pi), rng.random(), side="right"))
        x0 = min(x0, chain.n_states - 1)
    return _sample_path(_cumulative(chain.P), int(x0), rng.random(n))


def batch_means(values: np.ndarray, n_batches: int = 100) -> tuple[float, float]:
    """Mean and batch-means standard error of a correlated series."""
    values = np.asarray(values, dtype=float)
    b = values.size // n_batches
    if b < 1:
        raise ValueError("series shorter than the number of batches")
    means = values[: b * n_batches].reshape(n_batches, b).mean(axis=1)
    return float(values.mean()), float(means.std(ddof=1) / math.sqrt(n_batches))


class TDApp:
    """TD(1) driver for :func:`sgrates.engine.markov_run`.

    The chain state and trace persist across ``advance`` calls; ``reset``
    draws ``x_0 ~ pi`` and sets ``y_0 = 0``.
    """

    _CHUNK = 65536

    def __init__(self, chain: FiniteChain, approx) -> None:
        self.chain = chain
        self.approx = approx
        self.dim = approx.dim
        self.g = discounted_cost(chain)
        self._cum = _cumulative(chain.P)
        self._F = np.ascontiguousarray(approx.features)
        self._c = np.ascontiguousarray(chain.c)
        g = self.g
        fhat = None
        if isinstance(approx, LinearApprox):
            fhat = weighted_ls_minimum(chain, approx, g)[1]
        self.objective = Objective(
            name="td_exact", dim=approx.dim,
            eval_f=lambda th: exact_objective(chain, approx, th, g)[0],
            eval_grad=lambda th: exact_objective(chain, approx, th, g)[1],
            fhat=fhat, params={"chain": chain.to_dict(), "approx": approx.describe()},
        )

    def reset(self, seed: int) -> None:
        self._rng = np.random.Generator(np.random.PCG64(int(seed)))
        u0 = self._rng.random()
        x0 = int(np.searchsorted(np.cumsum(self.chain.pi), u0, side="right"))
        self.x = min(x0, self.chain.n_states - 1)
        self.y = np.zeros(self.dim)
        self._buf = np.empty(0)
        self._pos = 0

    def _uniforms(self, k: int) -> np.ndarray:
        parts = []
        while k > 0:
            if self._pos == self._buf.size:
                self._buf = self._rng.random(self._CHUNK)
                self._pos = 0
            m = min(k, self._buf.size - self._pos)
            parts.append(self._buf[self._pos:self._pos + m])
            self._pos += m
            k -= m
        return np.concatenate(parts) if parts else np.empty(0)

    def advance(self, theta, alphas):
        us = self._uniforms(alphas.size)
        theta = np.ascontiguousarray(theta, dtype=float)
        alphas = np.ascontiguousarray(alphas, dtype=float)
        b = self.chain.beta
        if isinstance(self.approx, LinearApprox):
            th, self.y, self.x, done, bad = _td_linear(
                theta, self.y, self.x, alphas, us, self._cum, self._F, self._c, b,
                DIVERGENCE_NORM)
        else:
            th, self.y, self.x, done, bad = _td_nonlinear(
                theta, self.y, self.x, alphas, us, self._cum, self._F, self._c, b,
                self.approx.hidden, DIVERGENCE_NORM)
        return th, done, bad

    def describe(self) -> dict[str, Any]:
        return {"name": "td", "chain": self.chain.to_dict(), "approx": self.approx.describe()}


def td_run(chain: FiniteChain, approx, sched: StepSchedule, theta0, N: int, seed: int,
           plan: Optional[RecordingPlan] = None,
           region: Optional[CompactRegion] = None) -> Trajectory:
    """TD(1) trajectory with exact ``f`` and ``|grad f|^2`` at recorded indices."""
    app = TDApp(chain, approx)
    traj = markov_run(app, sched, theta0, N, seed=seed, region=region, plan=plan)
    traj.metadata["fhat"] = app.objective.fhat
    return traj
