"""Analytic test objectives with known stationary sets and exponents.

Each constructor returns an :class:`Objective` whose ``eval_f`` and
``eval_grad`` broadcast over leading axes, plus a compiled block stepper
used by :func:`sgrates.engine.run` for long trajectories.
"""
from __future__ import annotations

import functools
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from numba import njit

from .loja import LojaParams
from .regions import CompactRegion

__all__ = ["Objective", "quadratic", "power_norm", "circle_valley", "from_config",
           "DIVERGENCE_NORM"]

#: parameter norm above which a run counts as diverged
DIVERGENCE_NORM = 1e12


@dataclass(frozen=True)
class Objective:
    """Evaluation bundle for ``f``.

    ``advance(theta, alphas, noise)`` is an optional compiled stepper that
    applies ``theta <- theta - alpha_i (grad f(theta) + noise_i)`` for each
    step and returns ``(theta, steps_done, diverged)``.
    """

    name: str
    dim: int
    eval_f: Callable
    eval_grad: Callable
    fhat: Optional[float] = None
    dist_S: Optional[Callable] = None
    known_loja: Optional[LojaParams] = None
    project_S: Optional[Callable] = None
    advance: Optional[Callable] = None
    vectorized: bool = False
    params: dict = field(default_factory=dict)

    def describe(self) -> dict[str, Any]:
        return {"name": self.name, "dim": self.dim, **self.params}


# compiled steppers ---------------------------------------------------------

@njit(cache=True)
def _diverged(th, limit):
    s = 0.0
    for j in range(th.size):
        v = th[j]
        if not np.isfinite(v):
            return True
        s += v * v
    return s > limit * limit


@njit(cache=True)
def _advance_quadratic(theta, A2, alphas, noise, limit):
    th = theta.copy()
    d = th.size
    g = np.empty(d)
    noisy = noise.shape[0] > 0
    for i in range(alphas.size):
        for r in range(d):
            acc = 0.0
            for c in range(d):
                acc += A2[r, c] * th[c]
            g[r] = acc
        a = alphas[i]
        for r in range(d):
            w = noise[i, r] if noisy else 0.0
            th[r] = th[r] - a * (g[r] + w)
        if _diverged(th, limit):
            return th, i + 1, True
    return th, alphas.size, False


@njit(cache=True)
def _advance_power_norm(theta, k, alphas, noise, limit):
    th = theta.copy()
    d = th.size
    noisy = noise.shape[0] > 0
    for i in range(alphas.size):
        s = 0.0
        for r in range(d):
            s += th[r] * th[r]
        scale = 2.0 * k * s ** (k - 1)
        a = alphas[i]
        for r in range(d):
            w = noise[i, r] if noisy else 0.0
            th[r] = th[r] - a * (scale * th[r] + w)
        if _diverged(th, limit):
            return th, i + 1, True
    return th, alphas.size, False


@njit(cache=True)
def _advance_circle(theta, R2, alphas, noise, limit):
    th = theta.copy()
    d = th.size
    noisy = noise.shape[0] > 0
    for i in range(alphas.size):
        s = 0.0
        for r in range(d):
            s += th[r] * th[r]
        scale = 4.0 * (s - R2)
        a = alphas[i]
        for r in range(d):
            w = noise[i, r] if noisy else 0.0
            th[r] = th[r] - a * (scale * th[r] + w)
        if _diverged(th, limit):
            return th, i + 1, True
    return th, alphas.size, False


def _stepper(kernel, param):
    def advance(theta, alphas, noise):
        return kernel(np.ascontiguousarray(theta, dtype=float), param,
                      np.ascontiguousarray(alphas, dtype=float),
                      np.ascontiguousarray(noise, dtype=float), DIVERGENCE_NORM)
    return advance


# constructors --------------------------------------------------------------

def _sqnorm(theta):
    theta = np.asarray(theta, dtype=float)
    return np.sum(theta * theta, axis=-1)


def quadratic(A) -> Objective:
    """``f(x) = x^T A x`` for symmetric positive-definite ``A``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError("A must be square")
    if not np.allclose(A, A.T, rtol=0, atol=1e-12 * max(1.0, np.abs(A).max())):
        raise ValueError("A must be symmetric")
    eig = np.linalg.eigvalsh(A)
    if eig.min() <= 0:
        raise ValueError("A must be positive definite")
    lam = float(eig.min())
    d = A.shape[0]

    def f(theta):
        theta = np.asarray(theta, dtype=float)
        return np.einsum("...i,ij,...j->...", theta, A, theta)

    def grad(theta):
        return 2.0 * np.asarray(theta, dtype=float) @ A

    loja = LojaParams(delta=0.5, mu=2.0, nu=1.0, M=max(1.0, 1.0 / (4 * lam)),
                      N=max(1.0, 1.0 / (2 * lam)), region={"kind": "all"}, level=0.0)
    return Objective(
        name="quadratic", dim=d, eval_f=f, eval_grad=grad, fhat=0.0,
        dist_S=lambda th: np.sqrt(_sqnorm(th)), known_loja=loja,
        project_S=lambda th: np.zeros_like(np.asarray(th, dtype=float)),
        advance=_stepper(_advance_quadratic, np.ascontiguousarray(2.0 * A)),
        vectorized=True, params={"A": A.tolist()},
    )


def power_norm(k: int, dim: int) -> Objective:
    """``f(x) = |x|^(2k)``: degenerate minimum at the origin."""
    k = int(k)
    if k < 2:
        raise ValueError("k must be >= 2")

    def f(theta):
        return _sqnorm(theta) ** k

    def grad(theta):
        theta = np.asarray(theta, dtype=float)
        s = _sqnorm(theta)
        return (2.0 * k * s ** (k - 1))[..., None] * theta

    mu = 2.0 * k / (2.0 * k - 1.0)
    loja = LojaParams(delta=0.5, mu=mu, nu=1.0 / (2 * k - 1), M=1.0, N=1.0,
                      region=CompactRegion.ball(np.zeros(dim), 1.0).to_dict(), level=0.0)
    return Objective(
        name="power_norm", dim=int(dim), eval_f=f, eval_grad=grad, fhat=0.0,
        dist_S=lambda th: np.sqrt(_sqnorm(th)), known_loja=loja,
        project_S=lambda th: np.zeros_like(np.asarray(th, dtype=float)),
        advance=_stepper(_advance_power_norm, k),
        vectorized=True, params={"k": k},
    )


def circle_valley(R: float) -> Objective:
    """``f(x) = (|x|^2 - R^2)^2`` in the plane: a circle of minima plus a
    local maximum at the origin."""
    R = float(R)
    if not R > 0:
        raise ValueError("R must be positive")

    def f(theta):
        return (_sqnorm(theta) - R * R) ** 2

    def grad(theta):
        theta = np.asarray(theta, dtype=float)
        return (4.0 * (_sqnorm(theta) - R * R))[..., None] * theta

    def dist(theta):
        rho = np.sqrt(_sqnorm(theta))
        return np.minimum(np.abs(rho - R), rho)

    def project(theta):
        theta = np.asarray(theta, dtype=float)
        rho = np.sqrt(_sqnorm(theta))[..., None]
        with np.errstate(invalid="ignore", divide="ignore"):
            on_circle = R * theta / rho
        return np.where(np.abs(rho - R) <= rho, on_circle, 0.0 * theta)

    lo = 0.5 * R
    loja = LojaParams(delta=0.5, mu=2.0, nu=1.0, M=max(1.0, 1.0 / (16 * lo * lo)),
                      N=max(1.0, 1.0 / (4 * lo * (lo + R))),
                      region=CompactRegion.ball((0.0, 0.0), 1.5 * R, lo).to_dict(), level=0.0)
    return Objective(
        name="circle_valley", dim=2, eval_f=f, eval_grad=grad, fhat=0.0,
        dist_S=dist, known_loja=loja, project_S=project,
        advance=_stepper(_advance_circle, R * R),
        vectorized=True, params={"R": R},
    )


def from_config(spec: dict) -> Objective:
    name = spec["name"]
    if name == "quadratic":
        if "A" in spec:
            A = spec["A"]
        else:
            A = np.diag(np.asarray(spec.get("diag", [1.0] * int(spec.get("dim", 1))), float))
        return quadratic(A)
    if name == "power_norm":
        return power_norm(spec.get("k", 2), spec.get("dim", 1))
    if name == "circle_valley":
        return circle_valley(spec.get("R", 1.0))
    raise ValueError(f"unknown objective {name!r}")
