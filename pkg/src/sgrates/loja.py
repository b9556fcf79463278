"""Lojasiewicz exponents: sampled estimation and rate prediction.

The estimator follows the constructive definition of the exponent: for a
level ``a`` and window size ``delta``

    phi(delta) = sup{1/2, log|grad f(x)| / log|f(x) - a| : x not stationary,
                     0 < |f(x) - a| <= delta},

``delta_hat = eps * (largest delta with phi(delta) < 1)`` and
``mu = 1 / phi(delta_hat)`` with ``M = 1``.  The supremum is replaced by a
maximum over sampled points, so the returned ``mu`` is an upper bound on
the true exponent (``phi`` is a lower bound).
"""
from __future__ import annotations

import enum
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from scipy import optimize

from .regions import CompactRegion

__all__ = [
    "LojaParams",
    "LojaEstimate",
    "PhiMode",
    "RatePrediction",
    "predict_rates",
    "phi_of_w",
    "estimate_exponent",
    "DEFAULT_DELTA_GRID",
]

#: gradients at or below this norm count as stationary points; any larger
#: cutoff caps |log f| and biases mu upward for degenerate minima
STATIONARY_TOL = float(np.finfo(float).tiny)
DEFAULT_DELTA_GRID = tuple(float(v) for v in np.geomspace(1e-12, 0.99, 40))


@dataclass(frozen=True)
class LojaParams:
    """Constants of the two Lojasiewicz inequalities on a region/level pair."""

    delta: float
    mu: float
    nu: float
    M: float = 1.0
    N: float = 1.0
    region: Optional[dict] = None
    level: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if not 1.0 < self.mu <= 2.0:
            raise ValueError(f"mu must lie in (1, 2], got {self.mu}")
        if not 0.0 < self.nu <= 1.0:
            raise ValueError(f"nu must lie in (0, 1], got {self.nu}")
        if self.M < 1.0 or self.N < 1.0:
            raise ValueError("M and N must be >= 1")

    @property
    def nu_hat(self) -> float:
        return self.mu * self.nu / 2.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


class PhiMode(str, enum.Enum):
    BELOW = "Below"
    AT = "At"
    ABOVE = "Above"


@dataclass(frozen=True)
class RatePrediction:
    r: float
    rhat: float
    p: float
    q: float
    mu: float
    nu_hat: float
    phi_mode: PhiMode

    def to_dict(self) -> dict[str, Any]:
        out = {k: _json_num(v) for k, v in asdict(self).items() if k != "phi_mode"}
        out["phi_mode"] = self.phi_mode.value
        return out


def _json_num(v: float) -> Any:
    return "inf" if v == math.inf else v


def predict_rates(loja: LojaParams | tuple, r: float) -> RatePrediction:
    """Predicted exponents for ``f - fhat`` / ``|grad f|^2`` (``p``) and ``d(., S)`` (``q``).

    ``loja`` may be a :class:`LojaParams` or a ``(mu, nu)`` pair; ``r`` may be
    ``inf`` for noise-free runs.
    """
    mu, nu = (loja.mu, loja.nu) if isinstance(loja, LojaParams) else map(float, loja)
    if not r > 0:
        raise ValueError(f"r must be positive, got {r}")
    rhat = math.inf if mu >= 2.0 else 1.0 / (2.0 - mu)
    m = min(r, rhat)
    nu_hat = mu * nu / 2.0
    if r < rhat:
        mode = PhiMode.BELOW
    elif r == rhat:
        mode = PhiMode.AT
    else:
        mode = PhiMode.ABOVE
    return RatePrediction(r=r, rhat=rhat, p=mu * m, q=nu_hat * m, mu=mu,
                          nu_hat=nu_hat, phi_mode=mode)


def phi_of_w(w: float, mode: PhiMode | str) -> float:
    if w < 0:
        raise ValueError("w must be non-negative")
    mode = PhiMode(mode)
    if mode is PhiMode.BELOW:
        return float(w)
    if mode is PhiMode.AT:
        return 1.0 + w
    return 1.0


@dataclass
class LojaEstimate:
    """Sampled exponent estimate plus diagnostics.

    ``params`` carries ``M = N = 1``; ``M_emp`` is the largest observed
    ``|f - a| / |grad f|^mu`` inside the selected window.  ``phi_grid`` lists
    the sampled ``phi(delta)`` per grid value.
    """

    params: LojaParams
    phi: float
    delta_selected: float
    phi_grid: list
    M_emp: float
    nu_sup: Optional[float]
    n_points: int
    n_window: int
    lower_bound_note: str = "sampled sup: phi is a lower bound, mu an upper bound"

    def to_dict(self) -> dict[str, Any]:
        out = self.params.to_dict()
        out.update(
            phi=self.phi,
            delta_selected=self.delta_selected,
            phi_grid=[list(x) for x in self.phi_grid],
            M_emp=self.M_emp,
            nu_sup=self.nu_sup,
            n_points=self.n_points,
            n_window=self.n_window,
            note=self.lower_bound_note,
        )
        return out


def _evaluate(obj, pts: np.ndarray, a: float):
    if getattr(obj, "vectorized", False):
        fv = np.asarray(obj.eval_f(pts)) - a
        gn = np.linalg.norm(obj.eval_grad(pts), axis=1)
    else:
        fv = np.array([obj.eval_f(p) for p in pts]) - a
        gn = np.array([np.linalg.norm(obj.eval_grad(p)) for p in pts])
    return fv, gn


def _anchors(obj, pts: np.ndarray, fv: np.ndarray, gn: np.ndarray, k: int = 8) -> list:
    # Stationary points near the best samples, located by minimising |grad f|^2.
    order = np.argsort(gn)[:k]
    found = []
    for i in order:
        res = optimize.minimize(
            lambda x: float(np.sum(np.asarray(obj.eval_grad(x)) ** 2)),
            pts[i],
            jac=None,
            method="BFGS",
            options={"gtol": 1e-14, "maxiter": 500},
        )
        found.append(res.x)
    return found


def _refined_points(obj, region: CompactRegion, base: np.ndarray, rng: np.random.Generator,
                    decades: float, fv, gn) -> np.ndarray:
    # Points on segments from base samples toward their nearest stationary
    # point, at log-uniform relative distances 10^-decades .. 1.
    if obj.project_S is not None and getattr(obj, "vectorized", False):
        anchors = np.asarray(obj.project_S(base))
    elif obj.project_S is not None:
        anchors = np.array([obj.project_S(p) for p in base])
    else:
        cand = _anchors(obj, base, fv, gn)
        anchors = np.array([cand[rng.integers(len(cand))] for _ in base])
    t = 10.0 ** (-decades * rng.random(len(base)))
    pts = anchors + t[:, None] * (base - anchors)
    keep = np.array([region.contains(p) for p in pts]) if region.kind != "ball" else None
    if keep is None:
        dist = np.linalg.norm(pts - np.asarray(region.center), axis=1)
        keep = (dist >= region.inner_radius) & (dist <= region.radius)
    return pts[keep]


def _phi_at(delta: float, absf: np.ndarray, ratio: np.ndarray) -> float:
    sel = absf <= delta
    if not np.any(sel):
        return 0.5
    return float(max(0.5, ratio[sel].max()))


def estimate_exponent(
    obj,
    region: CompactRegion,
    a: float = 0.0,
    n_samples: int = 100_000,
    delta_grid: Optional[Sequence[float]] = None,
    eps: float = 0.9,
    seed: int = 0,
    refine_fraction: float = 0.5,
    decades: float = 30.0,
) -> LojaEstimate:
    """Sampled Lojasiewicz exponents of ``obj`` on ``region`` at level ``a``.

    Half of the points (``refine_fraction``) are placed near the stationary
    set, since the supremum is approached as ``f -> a``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    grid = np.sort(np.asarray(delta_grid if delta_grid is not None else DEFAULT_DELTA_GRID))
    if np.any(grid <= 0) or np.any(grid >= 1):
        raise ValueError("delta grid values must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n_ref = int(round(refine_fraction * n_samples))
    base = region.sample(n_samples - n_ref, seed=seed)
    fv, gn = _evaluate(obj, base, a)
    pts = base
    if n_ref > 0:
        pick = base[rng.integers(len(base), size=n_ref)]
        extra = _refined_points(obj, region, pick, rng, decades, fv, gn)
        efv, egn = _evaluate(obj, extra, a)
        pts = np.concatenate([base, extra])
        fv = np.concatenate([fv, efv])
        gn = np.concatenate([gn, egn])

    absf = np.abs(fv)
    usable = (absf > 0) & (absf < 1) & (gn > STATIONARY_TOL)
    if not np.any(usable & (absf <= grid[-1])):
        raise ValueError("level window empty")
    absf_u, gn_u = absf[usable], gn[usable]
    ratio = np.log(gn_u) / np.log(absf_u)

    phi_grid = [(float(d), _phi_at(d, absf_u, ratio)) for d in grid]
    ok = [d for d, ph in phi_grid if ph < 1.0]
    if not ok:
        raise ValueError("level window empty")
    delta_hat = eps * max(ok)
    phi = _phi_at(delta_hat, absf_u, ratio)
    mu = 1.0 / phi
    win = absf_u <= delta_hat
    M_emp = float(np.max(absf_u[win] / gn_u[win] ** mu)) if np.any(win) else 0.0

    nu = 1.0
    nu_sup = None
    if obj.dist_S is not None:
        if getattr(obj, "vectorized", False):
            ds = np.asarray(obj.dist_S(pts))[usable]
        else:
            ds = np.array([obj.dist_S(p) for p in pts])[usable]
        ok_d = (ds > 0) & (ds < 1)
        if np.any(ok_d):
            nu_sup = float(np.max(np.log(gn_u[ok_d]) / np.log(ds[ok_d])))
            nu = 1.0 / max(1.0, nu_sup)

    params = LojaParams(delta=delta_hat, mu=mu, nu=nu, M=1.0, N=1.0,
                        region=region.to_dict(), level=float(a))
    return LojaEstimate(params=params, phi=phi, delta_selected=delta_hat, phi_grid=phi_grid,
                        M_emp=M_emp, nu_sup=nu_sup, n_points=int(len(pts)),
                        n_window=int(np.sum(win)))
