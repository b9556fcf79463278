"""Recursive prediction-error identification of ARMA(M, N) models.

Parameters are ``theta = [a_1 .. a_M, b_1 .. b_N]`` with
``A(z) = 1 - sum a_k z^-k`` and ``B(z) = 1 + sum b_k z^-k``.  The prediction
error obeys ``B(q) eps_n = A(q) y_n`` and the recursion tracks

    phi_n       = [y_n .. y_{n-M+1}, eps_n .. eps_{n-N+1}]
    eps_{n+1}   = y_{n+1} - phi_n . theta_n
    psi_{n+1}   = phi_n - sum_k b_k psi_{n+1-k}
    theta_{n+1} = theta_n + alpha_n psi_{n+1} eps_{n+1}

``psi`` is the parameter gradient of the one-step predictor
``y_hat = y - eps``, i.e. ``psi = -grad eps``, so the update is a descent
step on ``eps^2 / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Optional

import numpy as np
from numba import njit

from .engine import RecordingPlan, Trajectory, markov_run
from .objectives import DIVERGENCE_NORM, Objective
from .regions import CompactRegion, stability_margin
from .schedule import StepSchedule

__all__ = [
    "ArmaOrders",
    "in_theta",
    "SignalModel",
    "generate_signal",
    "RpeState",
    "rpe_step",
    "epsilon_filter",
    "SpectralData",
    "spectral_data",
    "spectral_objective",
    "ArmaApp",
    "rpe_run",
    "DEFAULT_GRID",
]

DEFAULT_GRID = 4096


@dataclass(frozen=True)
class ArmaOrders:
    M: int
    N: int

    def __post_init__(self) -> None:
        if self.M < 1 or self.N < 1:
            raise ValueError("ARMA orders must be positive")

    @property
    def dim(self) -> int:
        return self.M + self.N

    def split(self, theta) -> tuple[np.ndarray, np.ndarray]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.dim,):
            raise ValueError(f"theta must have length {self.dim}, got shape {theta.shape}")
        return theta[: self.M], theta[self.M:]


def in_theta(theta, orders: ArmaOrders, margin: float = 0.0) -> bool:
    """Whether the MA zeros lie strictly inside the unit disk with ``margin`` to spare."""
    _, b = orders.split(theta)
    m = stability_margin(b)
    return m > 0 and m >= margin


def _require_theta(theta, orders: ArmaOrders) -> tuple[np.ndarray, np.ndarray]:
    a, b = orders.split(theta)
    if not stability_margin(b) > 0:
        raise ValueError("theta lies outside the stability region (inverse filter unstable)")
    return a, b


# signal generation -----------------------------------------------------------

@dataclass(frozen=True)
class SignalModel:
    """``x_{n+1} = A x_n + w_n``, ``y_n = b . x_n`` with ``w_n = w_mean + F e_n``.

    ``e_n`` has i.i.d. unit-variance components, Gaussian or uniform.
    """

    A: np.ndarray
    b: np.ndarray
    F: np.ndarray
    w_mean: Optional[np.ndarray] = None
    distribution: str = "gaussian"
    truth: Optional[dict] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        A = np.atleast_2d(np.array(self.A, dtype=float))
        b = np.array(self.b, dtype=float).reshape(-1)
        F = np.array(self.F, dtype=float)
        if F.ndim == 1:
            F = F[:, None]
        L = A.shape[0]
        if A.shape != (L, L) or b.size != L or F.shape[0] != L:
            raise ValueError("inconsistent state-space dimensions")
        if self.distribution not in ("gaussian", "uniform"):
            raise ValueError("innovations must be 'gaussian' or 'uniform'")
        rho = float(np.max(np.abs(np.linalg.eigvals(A)))) if L else 0.0
        if rho >= 1.0:
            raise ValueError(f"state matrix has spectral radius {rho:.6g} >= 1")
        wm = np.zeros(L) if self.w_mean is None else np.array(self.w_mean, dtype=float)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "w_mean", wm)

    @property
    def L(self) -> int:
        return self.A.shape[0]

    @property
    def spectral_radius(self) -> float:
        return float(np.max(np.abs(np.linalg.eigvals(self.A))))

    @property
    def burn_in(self) -> int:
        """Ten times the e-folding time of the state recursion."""
        rho = self.spectral_radius
        mix = 1 if rho < 1e-12 else int(math.ceil(1.0 / -math.log(rho)))
        return 10 * max(mix, self.L)

    @property
    def mean(self) -> float:
        """Stationary mean of ``y``."""
        return float(self.b @ np.linalg.solve(np.eye(self.L) - self.A, self.w_mean))

    @classmethod
    def from_arma_truth(cls, a, b, sigma: float = 1.0, distribution: str = "gaussian",
                        mean: float = 0.0) -> "SignalModel":
        """Companion realisation of ``A*(q) y = B*(q) e`` with ``Var e = sigma^2``.

        State ``[y_n .. y_{n-M+1}, e_n .. e_{n-N+1}]``; the innovation enters
        both the newest output and the newest noise slot.
        """
        a = np.atleast_1d(np.asarray(a, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        M, N = a.size, b.size
        L = M + N
        A = np.zeros((L, L))
        A[0, :M] = a
        A[0, M:] = b
        for k in range(1, M):
            A[k, k - 1] = 1.0
        for k in range(1, N):
            A[M + k, M + k - 1] = 1.0
        g = np.zeros(L)
        g[0] = 1.0
        g[M] = 1.0
        out = np.zeros(L)
        out[0] = 1.0
        # a constant shift of e would add ``mean`` to y in steady state
        w_mean = None
        if mean != 0.0:
            w_mean = np.zeros(L)
            w_mean[0] = mean * (1.0 - a.sum())
        return cls(A, out, sigma * g[:, None], w_mean, distribution,
                   truth={"a": a.tolist(), "b": b.tolist(), "sigma": float(sigma)})

    @classmethod
    def from_dict(cls, spec: dict) -> "SignalModel":
        if "truth" in spec:
            t = spec["truth"]
            return cls.from_arma_truth(t["a"], t["b"], float(spec.get("sigma", 1.0)),
                                       spec.get("distribution", "gaussian"))
        return cls(spec["A"], spec["b"], spec["F"], spec.get("w_mean"),
                   spec.get("distribution", "gaussian"))

    def describe(self) -> dict[str, Any]:
        out = {"A": self.A.tolist(), "b": self.b.tolist(), "F": self.F.tolist(),
               "w_mean": self.w_mean.tolist(), "distribution": self.distribution}
        if self.truth is not None:
            out["truth"] = self.truth
        return out

    def unit_noise(self, rng: np.random.Generator, n: int) -> np.ndarray:
        k = self.F.shape[1]
        if self.distribution == "gaussian":
            return rng.standard_normal((n, k))
        return math.sqrt(3.0) * (2.0 * rng.random((n, k)) - 1.0)

    @property
    def truth_theta(self) -> Optional[np.ndarray]:
        if self.truth is None:
            return None
        return np.concatenate([self.truth["a"], self.truth["b"]])


@njit(cache=True)
def _simulate(A, F, w_mean, x0, E):
    L = x0.size
    n = E.shape[0]
    X = np.empty((n, L))
    x = x0.copy()
    nx = np.empty(L)
    for t in range(n):
        X[t] = x
        for r in range(L):
            acc = w_mean[r]
            for c in range(L):
                acc += A[r, c] * x[c]
            for c in range(F.shape[1]):
                acc += F[r, c] * E[t, c]
            nx[r] = acc
        x[:] = nx
    return X, x


def generate_signal(model: SignalModel, n: int, seed: int, return_states: bool = False):
    """``y_0 .. y_{n-1}`` after a burn-in from ``x = 0``.

    With ``return_states`` the state sequence ``x_0 .. x_{n-1}`` is returned
    too; for a companion realisation ``x_n[M]`` is the innovation ``e_n``.
    """
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    burn = model.burn_in
    E = model.unit_noise(rng, burn + n)
    X, _ = _simulate(model.A, model.F, model.w_mean, np.zeros(model.L), E)
    X = X[burn:]
    y = X @ model.b
    return (y, X) if return_states else y


# prediction-error recursion ----------------------------------------------------

@dataclass(frozen=True)
class RpeState:
    """Current parameter plus the regressor buffers.

    ``y_buf[0]`` is the newest output ``y_n``; ``eps_buf`` and ``psi_buf``
    (rows are gradients) are ordered likewise.
    """

    theta: np.ndarray
    y_buf: np.ndarray
    eps_buf: np.ndarray
    psi_buf: np.ndarray
    orders: ArmaOrders

    @classmethod
    def zeros(cls, orders: ArmaOrders, theta, y0: float = 0.0) -> "RpeState":
        y_buf = np.zeros(orders.M)
        y_buf[0] = y0
        return cls(np.array(theta, dtype=float), y_buf, np.zeros(orders.N),
                   np.zeros((orders.N, orders.dim)), orders)

    @property
    def regressor(self) -> np.ndarray:
        return np.concatenate([self.y_buf, self.eps_buf])


def rpe_step(state: RpeState, y_next: float, alpha: float) -> tuple[RpeState, float, np.ndarray]:
    """Advance the recursion by one output; returns ``(state', eps_{n+1}, psi_{n+1})``."""
    if alpha < 0:
        raise ValueError("alpha must be non-negative")
    M = state.orders.M
    phi = state.regressor
    theta = state.theta
    b = theta[M:]
    # accumulate term by term in the same order as the fixed-parameter filter
    eps = float(y_next)
    for k in range(phi.size):
        eps -= theta[k] * phi[k]
    psi = phi.copy()
    for k in range(b.size):
        psi -= b[k] * state.psi_buf[k]
    new_theta = theta + alpha * psi * eps
    y_buf = np.concatenate([[y_next], state.y_buf[:-1]])
    eps_buf = np.concatenate([[eps], state.eps_buf[:-1]])
    psi_buf = np.concatenate([psi[None, :], state.psi_buf[:-1]])
    return replace(state, theta=new_theta, y_buf=y_buf, eps_buf=eps_buf, psi_buf=psi_buf), eps, psi


@njit(cache=True)
def _filter(a, b, y):
    M = a.size
    N = b.size
    n = y.size
    d = M + N
    eps = np.zeros(n)
    psi = np.zeros((n, d))
    for t in range(n):
        e = y[t]
        for k in range(1, M + 1):
            if t - k >= 0:
                e -= a[k - 1] * y[t - k]
        for k in range(1, N + 1):
            if t - k >= 0:
                e -= b[k - 1] * eps[t - k]
        eps[t] = e
        # psi_t = phi_{t-1} - sum_k b_k psi_{t-k}
        for k in range(1, M + 1):
            if t - k >= 0:
                psi[t, k - 1] = y[t - k]
        for k in range(1, N + 1):
            if t - k >= 0:
                psi[t, M + k - 1] = eps[t - k]
        for k in range(1, N + 1):
            if t - k >= 0:
                for j in range(d):
                    psi[t, j] -= b[k - 1] * psi[t - k, j]
    return eps, psi


def epsilon_filter(theta, y, orders: ArmaOrders) -> tuple[np.ndarray, np.ndarray]:
    """Fixed-parameter errors ``eps_n`` and predictor gradients ``psi_n``.

    Zero initial conditions (``y`` and ``eps`` vanish before time 0), so
    ``eps_0 = y_0``.  ``psi_n = -d eps_n / d theta``.
    """
    a, b = _require_theta(theta, orders)
    return _filter(np.ascontiguousarray(a), np.ascontiguousarray(b),
                   np.ascontiguousarray(y, dtype=float))


def filter_state(theta, y, orders: ArmaOrders) -> RpeState:
    """RPE state whose buffers hold the fixed-parameter filter after consuming ``y``."""
    eps, psi = epsilon_filter(theta, y, orders)
    M, N = orders.M, orders.N

    def last(seq, k):
        out = np.zeros((k,) + seq.shape[1:])
        tail = seq[::-1][:k]
        out[: len(tail)] = tail
        return out

    return RpeState(np.array(theta, dtype=float), last(np.asarray(y, float), M),
                    last(eps, N), last(psi, N), orders)


# frequency-domain objective -----------------------------------------------------

@dataclass(frozen=True)
class SpectralData:
    """Output spectral density on the grid ``omega_j = -pi + 2 pi j / K`` and mean ``m``."""

    omega: np.ndarray
    density: np.ndarray
    mean: float = 0.0

    @classmethod
    def white(cls, sigma: float, K: int = DEFAULT_GRID, mean: float = 0.0) -> "SpectralData":
        om = -np.pi + 2.0 * np.pi * np.arange(K) / K
        return cls(om, np.full(K, sigma * sigma), mean)


def spectral_data(model: SignalModel, K: int = DEFAULT_GRID) -> SpectralData:
    """``phi(w) = H(w) Sigma_w H(w)^*`` with ``H(w) = b^T (e^{iw} I - A)^{-1}``."""
    om = -np.pi + 2.0 * np.pi * np.arange(K) / K
    L = model.L
    z = np.exp(1j * om)
    M = z[:, None, None] * np.eye(L)[None] - model.A[None]
    # solve (zI - A)^T h = b for each frequency, giving H = h^T
    h = np.linalg.solve(np.transpose(M, (0, 2, 1)), np.broadcast_to(model.b, (K, L))[..., None])[..., 0]
    hf = h @ model.F
    dens = np.sum(np.abs(hf) ** 2, axis=1)
    return SpectralData(om, dens, model.mean)


@dataclass
class SpectralValue:
    f: float
    grad: np.ndarray
    imag: float


def _poly(coef: np.ndarray, zinv: np.ndarray) -> np.ndarray:
    # sum_k coef_k z^-k for k = 1..len(coef)
    out = np.zeros_like(zinv)
    p = np.ones_like(zinv)
    for c in coef:
        p = p * zinv
        out = out + c * p
    return out


def spectral_objective(theta, data: SpectralData, orders: ArmaOrders) -> SpectralValue:
    """``f = (1/4pi) int |C(e^{iw})|^2 phi(w) dw + C(1)^2 m^2 / 2`` with ``C = A/B``.

    Periodic rectangle (trapezoid) rule on the data grid; ``grad`` differentiates
    ``C`` analytically and ``imag`` is the imaginary part of the quadrature of
    ``C(e^{iw}) C(e^{-iw}) phi(w)``, which vanishes by conjugate symmetry.
    """
    a, b = _require_theta(theta, orders)
    K = data.omega.size
    zinv = np.exp(-1j * data.omega)
    Az = 1.0 - _poly(a, zinv)
    Bz = 1.0 + _poly(b, zinv)
    C = Az / Bz
    w = data.density * (2.0 * np.pi / K) / (4.0 * np.pi)
    f = float(np.sum(np.abs(C) ** 2 * w))
    zc = np.conj(zinv)
    C_neg = (1.0 - _poly(a, zc)) / (1.0 + _poly(b, zc))
    imag = float(np.imag(np.sum(C * C_neg * w)))
    powers = zinv[:, None] ** np.arange(1, max(orders.M, orders.N) + 1)[None, :]
    dC = np.concatenate([-powers[:, : orders.M] / Bz[:, None],
                         -(Az / Bz ** 2)[:, None] * powers[:, : orders.N]], axis=1)
    grad = 2.0 * np.real(np.conj(C)[:, None] * dC).T @ w
    m = data.mean
    if m != 0.0:
        A1 = 1.0 - a.sum()
        B1 = 1.0 + b.sum()
        C1 = A1 / B1
        f += 0.5 * C1 * C1 * m * m
        dC1 = np.concatenate([-np.ones(orders.M) / B1, -A1 / B1 ** 2 * np.ones(orders.N)])
        grad = grad + C1 * dC1 * m * m
    return SpectralValue(f, grad, imag)


# trajectory driver -------------------------------------------------------------

@njit(cache=True)
def _rpe_advance(theta, x, ybuf, ebuf, pbuf, A, bout, F, w_mean, E, alphas, M, N, limit):
    th = theta.copy()
    L = x.size
    d = M + N
    nx = np.empty(L)
    psi = np.empty(d)
    for t in range(alphas.size):
        for r in range(L):
            acc = w_mean[r]
            for c in range(L):
                acc += A[r, c] * x[c]
            for c in range(F.shape[1]):
                acc += F[r, c] * E[t, c]
            nx[r] = acc
        x[:] = nx
        y = 0.0
        for r in range(L):
            y += bout[r] * x[r]
        e = y
        for k in range(M):
            e -= th[k] * ybuf[k]
        for k in range(N):
            e -= th[M + k] * ebuf[k]
        for k in range(M):
            psi[k] = ybuf[k]
        for k in range(N):
            psi[M + k] = ebuf[k]
        for k in range(N):
            bk = th[M + k]
            for j in range(d):
                psi[j] -= bk * pbuf[k, j]
        sq = 0.0
        for j in range(d):
            th[j] += alphas[t] * psi[j] * e
            sq += th[j] * th[j]
        for k in range(M - 1, 0, -1):
            ybuf[k] = ybuf[k - 1]
        ybuf[0] = y
        for k in range(N - 1, 0, -1):
            ebuf[k] = ebuf[k - 1]
            for j in range(d):
                pbuf[k, j] = pbuf[k - 1, j]
        ebuf[0] = e
        for j in range(d):
            pbuf[0, j] = psi[j]
        if not np.isfinite(sq) or sq > limit * limit:
            return th, t + 1, True
    return th, alphas.size, False


class ArmaApp:
    """RPE driver for :func:`sgrates.engine.markov_run`.

    The signal is simulated on the fly.  ``objective`` evaluates the spectral
    ``f`` and gradient (NaN outside the stability region).  With
    ``shrink=True`` a ``project`` hook scales the MA block by 0.99 until the
    margin is restored; the engine counts such projections.
    """

    _CHUNK = 65536

    def __init__(self, model: SignalModel, orders: ArmaOrders, margin: float = 0.02,
                 shrink: bool = False, grid: int = DEFAULT_GRID) -> None:
        self.model = model
        self.orders = orders
        self.dim = orders.dim
        self.margin = margin
        self.data = spectral_data(model, grid)
        fhat = None
        truth = model.truth_theta
        if truth is not None and truth.size == orders.dim and in_theta(truth, orders):
            fhat = spectral_objective(truth, self.data, orders).f
        self.objective = Objective(
            name="arma_spectral", dim=orders.dim, eval_f=self._f, eval_grad=self._g,
            fhat=fhat, params={"M": orders.M, "N": orders.N, "model": model.describe()},
        )
        self.project = self._shrink if shrink else None

    def _f(self, theta) -> float:
        if not in_theta(theta, self.orders):
            return math.nan
        return spectral_objective(theta, self.data, self.orders).f

    def _g(self, theta) -> np.ndarray:
        if not in_theta(theta, self.orders):
            return np.full(self.dim, math.nan)
        return spectral_objective(theta, self.data, self.orders).grad

    def _shrink(self, theta):
        theta = np.array(theta, dtype=float)
        M = self.orders.M
        applied = False
        while stability_margin(theta[M:]) < self.margin:
            theta[M:] *= 0.99
            applied = True
        return theta, applied

    def reset(self, seed: int) -> None:
        self._rng = np.random.Generator(np.random.PCG64(int(seed)))
        burn = self.model.burn_in
        E = self.model.unit_noise(self._rng, burn + 1)
        X, _ = _simulate(self.model.A, self.model.F, self.model.w_mean, np.zeros(self.model.L), E)
        self.x = X[-1].copy()
        y0 = float(self.model.b @ self.x)
        self.ybuf = np.zeros(self.orders.M)
        self.ybuf[0] = y0
        self.ebuf = np.zeros(self.orders.N)
        self.pbuf = np.zeros((self.orders.N, self.orders.dim))
        self._buf = np.empty((0, self.model.F.shape[1]))
        self._pos = 0

    def _noise(self, k: int) -> np.ndarray:
        parts = []
        while k > 0:
            if self._pos == len(self._buf):
                self._buf = self.model.unit_noise(self._rng, self._CHUNK)
                self._pos = 0
            m = min(k, len(self._buf) - self._pos)
            parts.append(self._buf[self._pos:self._pos + m])
            self._pos += m
            k -= m
        return np.concatenate(parts) if parts else np.empty((0, self.model.F.shape[1]))

    def advance(self, theta, alphas):
        E = np.ascontiguousarray(self._noise(alphas.size))
        m = self.model
        return _rpe_advance(np.ascontiguousarray(theta, dtype=float), self.x, self.ybuf,
                            self.ebuf, self.pbuf, m.A, m.b, m.F, m.w_mean, E,
                            np.ascontiguousarray(alphas, dtype=float), self.orders.M,
                            self.orders.N, DIVERGENCE_NORM)

    def describe(self) -> dict[str, Any]:
        return {"name": "arma", "M": self.orders.M, "N": self.orders.N,
                "margin": self.margin, "shrink": self.project is not None,
                "model": self.model.describe()}


def rpe_run(model: SignalModel, orders: ArmaOrders, sched: StepSchedule, theta0, N: int,
            seed: int, margin: float = 0.02, plan: Optional[RecordingPlan] = None,
            check_every: int = 1000, shrink: bool = False) -> Trajectory:
    """RPE trajectory with spectral ``f`` and ``|grad f|^2`` at recorded indices.

    Membership in the stability region with the given margin is checked
    every ``check_every`` steps and at recording indices.
    """
    if not in_theta(theta0, orders, margin):
        raise ValueError(f"theta0 must lie in the stability region with margin {margin}")
    app = ArmaApp(model, orders, margin=margin, shrink=shrink)
    region = CompactRegion.stability(margin, orders.N)
    traj = markov_run(app, sched, theta0, N, seed=seed, region=region, plan=plan,
                      check_every=check_every)
    traj.metadata["fhat"] = app.objective.fhat
    return traj
