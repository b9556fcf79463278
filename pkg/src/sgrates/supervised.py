"""Online least-squares training of a one-hidden-layer feedforward network.

The network is

    G_theta(x) = phi1( sum_i a1_i phi2( sum_j a2_ij psi_j(x) ) )

with ``theta = [a1_1 .. a1_N1, a2_11 .. a2_1N2, .., a2_N1N2]`` (row-major hidden
weights), and training uses ``theta <- theta + alpha (y - G_theta(x)) H_theta(x)``
where ``H_theta = grad_theta G_theta``.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Any, Optional

import numpy as np
from numba import njit

from .objectives import DIVERGENCE_NORM, Objective

__all__ = [
    "Activation",
    "FeedforwardNet",
    "TrainingSource",
    "PopulationEstimate",
    "forward",
    "grad",
    "sl_update",
    "population_objective",
    "update_direction",
    "SupervisedApp",
]

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


class Activation(str, enum.Enum):
    LOGISTIC = "logistic"
    GAUSSIAN = "gaussian"
    IDENTITY = "identity"

    @property
    def code(self) -> int:
        return {"logistic": 0, "gaussian": 1, "identity": 2}[self.value]

    def value_at(self, z):
        z = np.asarray(z, dtype=float)
        if self is Activation.LOGISTIC:
            return 1.0 / (1.0 + np.exp(-z))
        if self is Activation.GAUSSIAN:
            return _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        return z

    def deriv(self, z):
        z = np.asarray(z, dtype=float)
        if self is Activation.LOGISTIC:
            h = 1.0 / (1.0 + np.exp(-z))
            return h * (1.0 - h)
        if self is Activation.GAUSSIAN:
            return -z * _INV_SQRT_2PI * np.exp(-0.5 * z * z)
        return np.ones_like(z)


@dataclass(frozen=True)
class FeedforwardNet:
    """Architecture only; parameters are passed separately as flat vectors.

    Features are coordinate projections clipped to ``[-L, L]`` (no clipping
    when ``L`` is ``None``), so inputs have dimension ``n2``.
    """

    n1: int
    n2: int
    phi1: Activation = Activation.LOGISTIC
    phi2: Activation = Activation.LOGISTIC
    L: Optional[float] = None

    def __post_init__(self) -> None:
        if self.n1 < 1 or self.n2 < 1:
            raise ValueError("layer widths must be positive")
        object.__setattr__(self, "phi1", Activation(self.phi1))
        object.__setattr__(self, "phi2", Activation(self.phi2))

    @property
    def dim(self) -> int:
        return self.n1 * (self.n2 + 1)

    def split(self, theta) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}, got shape {theta.shape}")
        return theta[: self.n1], theta[self.n1:].reshape(self.n1, self.n2)

    def features(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.n2:
            raise ValueError(f"input must have {self.n2} coordinates, got {x.shape[-1]}")
        return x if self.L is None else np.clip(x, -self.L, self.L)

    def describe(self) -> dict[str, Any]:
        return {"n1": self.n1, "n2": self.n2, "phi1": self.phi1.value,
                "phi2": self.phi2.value, "L": self.L}


def _layers(net: FeedforwardNet, theta, x):
    a1, A2 = net.split(theta)
    psi = net.features(x)
    z = psi @ A2.T
    h = net.phi2.value_at(z)
    s = h @ a1
    return a1, A2, psi, z, h, s


def forward(net: FeedforwardNet, theta, x):
    """``G_theta(x)``; ``x`` may carry leading batch axes."""
    *_, s = _layers(net, theta, x)
    return net.phi1.value_at(s)


def grad(net: FeedforwardNet, theta, x) -> np.ndarray:
    """Backpropagated ``H_theta(x) = grad_theta G_theta(x)`` (batch-aware)."""
    a1, A2, psi, z, h, s = _layers(net, theta, x)
    d1 = net.phi1.deriv(s)
    g_a1 = d1[..., None] * h
    back = (d1[..., None] * a1) * net.phi2.deriv(z)
    g_A2 = back[..., :, None] * psi[..., None, :]
    return np.concatenate([g_a1, g_A2.reshape(*g_A2.shape[:-2], -1)], axis=-1)


def sl_update(net: FeedforwardNet, theta, alpha: float, x, y) -> np.ndarray:
    """One online step ``theta + alpha (y - G_theta(x)) H_theta(x)``."""
    theta = np.asarray(theta, dtype=float)
    resid = float(y) - float(forward(net, theta, x))
    return theta + alpha * resid * grad(net, theta, x)


@dataclass(frozen=True)
class TrainingSource:
    """Teacher-student data: ``x ~ N(0, input_scale^2 I)``, ``y = G_teacher(x) + sigma e``.

    Inputs and labels are clipped to ``[-L, L]``.
    """

    teacher: FeedforwardNet
    teacher_theta: tuple
    sigma: float = 0.1
    L: float = 10.0
    input_scale: float = 1.0
    seed: int = 0

    @classmethod
    def random_teacher(cls, net: FeedforwardNet, teacher_seed: int, sigma: float = 0.1,
                       L: float = 10.0, input_scale: float = 1.0, seed: int = 0,
                       weight_scale: float = 1.0) -> "TrainingSource":
        rng = np.random.default_rng(teacher_seed)
        theta = weight_scale * rng.standard_normal(net.dim)
        return cls(net, tuple(float(v) for v in theta), sigma, L, input_scale, seed)

    def sample(self, rng: np.random.Generator, m: int) -> tuple[np.ndarray, np.ndarray]:
        x = np.clip(self.input_scale * rng.standard_normal((m, self.teacher.n2)), -self.L, self.L)
        y = forward(self.teacher, np.asarray(self.teacher_theta), x)
        y = np.clip(y + self.sigma * rng.standard_normal(m), -self.L, self.L)
        return x, y

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(int(self.seed)))

    def linear_weights(self) -> Optional[np.ndarray]:
        """Effective weight vector when the teacher is an identity network."""
        return _linear_weights(self.teacher, self.teacher_theta)

    def describe(self) -> dict[str, Any]:
        return {"teacher": self.teacher.describe(), "sigma": self.sigma, "L": self.L,
                "input_scale": self.input_scale, "seed": int(self.seed)}


def _linear_weights(net: FeedforwardNet, theta) -> Optional[np.ndarray]:
    if net.phi1 is not Activation.IDENTITY or net.phi2 is not Activation.IDENTITY:
        return None
    a1, A2 = net.split(np.asarray(theta, dtype=float))
    return A2.T @ a1


@dataclass
class PopulationEstimate:
    value: float
    stderr: float
    closed_form: Optional[float] = None


def population_objective(net: FeedforwardNet, source: TrainingSource, theta, m: int,
                         seed: int = 0, chunk: int = 250_000) -> PopulationEstimate:
    """Monte-Carlo ``f(theta) = E (y - G_theta(x))^2 / 2`` with its standard error.

    For identity networks fed by an identity teacher the Gaussian closed form
    ``(input_scale^2 |w* - w|^2 + sigma^2) / 2`` is attached (ignores clipping,
    which is negligible for ``L`` many input scales wide).
    """
    if m < 1:
        raise ValueError("need at least one sample")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    tot = 0.0
    tot2 = 0.0
    done = 0
    while done < m:
        k = min(chunk, m - done)
        x, y = source.sample(rng, k)
        loss = 0.5 * (y - forward(net, theta, x)) ** 2
        tot += float(loss.sum())
        tot2 += float((loss * loss).sum())
        done += k
    mean = tot / m
    var = max(tot2 / m - mean * mean, 0.0)
    se = math.sqrt(var / max(m - 1, 1)) if m > 1 else math.inf
    closed = None
    w_star = source.linear_weights()
    w = _linear_weights(net, theta)
    if w_star is not None and w is not None and w.shape == w_star.shape:
        diff = w_star - w
        closed = 0.5 * (source.input_scale ** 2 * float(diff @ diff) + source.sigma ** 2)
    return PopulationEstimate(mean, se, closed)


def update_direction(net: FeedforwardNet, source: TrainingSource, theta, m: int,
                     seed: int = 0, chunk: int = 250_000) -> tuple[np.ndarray, np.ndarray]:
    """Mean and per-component standard error of ``(y - G_theta(x)) H_theta(x)``."""
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    s1 = np.zeros(net.dim)
    s2 = np.zeros(net.dim)
    done = 0
    while done < m:
        k = min(chunk, m - done)
        x, y = source.sample(rng, k)
        v = (y - forward(net, theta, x))[:, None] * grad(net, theta, x)
        s1 += v.sum(axis=0)
        s2 += (v * v).sum(axis=0)
        done += k
    mean = s1 / m
    var = np.maximum(s2 / m - mean * mean, 0.0)
    return mean, np.sqrt(var / max(m - 1, 1))


# compiled training loop ----------------------------------------------------

@njit(cache=True)
def _act(code, z):
    if code == 0:
        return 1.0 / (1.0 + math.exp(-z))
    if code == 1:
        return 0.3989422804014327 * math.exp(-0.5 * z * z)
    return z


@njit(cache=True)
def _dact(code, z):
    if code == 0:
        h = 1.0 / (1.0 + math.exp(-z))
        return h * (1.0 - h)
    if code == 1:
        return -z * 0.3989422804014327 * math.exp(-0.5 * z * z)
    return 1.0


@njit(cache=True)
def _sl_advance(theta, alphas, X, Y, n1, n2, c1, c2, L, limit):
    th = theta.copy()
    z = np.empty(n1)
    h = np.empty(n1)
    psi = np.empty(n2)
    for t in range(alphas.size):
        for j in range(n2):
            v = X[t, j]
            if L > 0:
                v = min(max(v, -L), L)
            psi[j] = v
        s = 0.0
        for i in range(n1):
            acc = 0.0
            for j in range(n2):
                acc += th[n1 + i * n2 + j] * psi[j]
            z[i] = acc
            h[i] = _act(c2, acc)
            s += th[i] * h[i]
        G = _act(c1, s)
        d1 = _dact(c1, s)
        step = alphas[t] * (Y[t] - G) * d1
        for i in range(n1):
            back = step * th[i] * _dact(c2, z[i])
            th[i] += step * h[i]
            for j in range(n2):
                th[n1 + i * n2 + j] += back * psi[j]
        sq = 0.0
        for k in range(th.size):
            if not np.isfinite(th[k]):
                return th, t + 1, True
            sq += th[k] * th[k]
        if sq > limit * limit:
            return th, t + 1, True
    return th, alphas.size, False


class SupervisedApp:
    """State-driven application for :func:`sgrates.engine.markov_run`.

    Training pairs are i.i.d. from ``source``; ``objective`` evaluates the
    population loss by Monte Carlo at recorded indices, doubling the sample
    size until the standard error is below ``rel_se`` of the estimate.
    """

    def __init__(self, net: FeedforwardNet, source: TrainingSource, rel_se: float = 0.05,
                 m0: int = 10_000, m_max: int = 1_000_000, eval_seed: int = 12345,
                 chunk: int = 65536) -> None:
        self.net = net
        self.source = source
        self.dim = net.dim
        self.rel_se = rel_se
        self.m0 = m0
        self.m_max = m_max
        self.eval_seed = eval_seed
        self.chunk = chunk
        self._rng = None
        self._buf = (np.empty((0, net.n2)), np.empty(0))
        self._pos = 0
        self.objective = Objective(
            name="supervised_mc", dim=net.dim, eval_f=self._f_mc, eval_grad=self._grad_mc,
            params={"net": net.describe(), "source": source.describe()},
        )

    def _f_mc(self, theta) -> float:
        m = self.m0
        while True:
            est = population_objective(self.net, self.source, theta, m, seed=self.eval_seed)
            if est.stderr <= self.rel_se * abs(est.value) or m >= self.m_max:
                return est.value
            m *= 2

    def _grad_mc(self, theta) -> np.ndarray:
        mean, _ = update_direction(self.net, self.source, theta, self.m0, seed=self.eval_seed)
        return -mean

    def reset(self, seed: int) -> None:
        self._rng = np.random.Generator(np.random.PCG64(int(seed)))
        self._buf = (np.empty((0, self.net.n2)), np.empty(0))
        self._pos = 0

    def _take(self, k: int):
        xs, ys = [], []
        while k > 0:
            if self._pos == len(self._buf[1]):
                self._buf = self.source.sample(self._rng, self.chunk)
                self._pos = 0
            m = min(k, len(self._buf[1]) - self._pos)
            xs.append(self._buf[0][self._pos:self._pos + m])
            ys.append(self._buf[1][self._pos:self._pos + m])
            self._pos += m
            k -= m
        if not xs:
            return np.empty((0, self.net.n2)), np.empty(0)
        return np.concatenate(xs), np.concatenate(ys)

    def advance(self, theta, alphas):
        X, Y = self._take(alphas.size)
        L = -1.0 if self.net.L is None else float(self.net.L)
        return _sl_advance(np.ascontiguousarray(theta, dtype=float),
                           np.ascontiguousarray(alphas, dtype=float), X, Y,
                           self.net.n1, self.net.n2, self.net.phi1.code, self.net.phi2.code,
                           L, DIVERGENCE_NORM)

    def describe(self) -> dict[str, Any]:
        return {"name": "supervised", "net": self.net.describe(),
                "source": self.source.describe()}
