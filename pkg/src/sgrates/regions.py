"""Compact parameter regions used for stopping times and exponent sampling."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np
from scipy.stats import qmc

__all__ = ["CompactRegion", "stability_margin", "ma_roots"]


def ma_roots(b: np.ndarray) -> np.ndarray:
    """Zeros of ``z^N B(z) = z^N + b_1 z^(N-1) + ... + b_N``.

    Computed as eigenvalues of the companion matrix.
    """
    b = np.asarray(b, dtype=float)
    n = b.size
    if n == 0:
        return np.zeros(0, dtype=complex)
    comp = np.zeros((n, n))
    comp[0, :] = -b
    comp[1:, :-1] = np.eye(n - 1)
    return np.linalg.eigvals(comp)


def stability_margin(b: np.ndarray) -> float:
    """``1 - max |root|``: distance of the moving-average zeros to the unit circle.

    Positive iff the inverse filter ``1/B`` is stable.
    """
    roots = ma_roots(b)
    if roots.size == 0:
        return 1.0
    return float(1.0 - np.max(np.abs(roots)))


@dataclass(frozen=True)
class CompactRegion:
    """Ball/shell, box, or ARMA stability-margin region.

    ``kind`` is ``"ball"`` (``center``, ``radius``, optional ``inner_radius``
    making it a shell), ``"box"`` (``lower``, ``upper``) or ``"stability"``
    (``margin`` applied to the last ``n_ma`` coordinates).
    """

    kind: str
    center: tuple = ()
    radius: float = 0.0
    inner_radius: float = 0.0
    lower: tuple = ()
    upper: tuple = ()
    margin: float = 0.0
    n_ma: int = 0
    bound: float = np.inf

    @classmethod
    def ball(cls, center, radius: float, inner_radius: float = 0.0) -> "CompactRegion":
        if radius <= 0 or inner_radius < 0 or inner_radius >= radius:
            raise ValueError("need 0 <= inner_radius < radius")
        return cls("ball", center=tuple(float(c) for c in center), radius=float(radius),
                   inner_radius=float(inner_radius))

    @classmethod
    def box(cls, lower, upper) -> "CompactRegion":
        lo = tuple(float(v) for v in lower)
        hi = tuple(float(v) for v in upper)
        if len(lo) != len(hi) or any(a >= b for a, b in zip(lo, hi)):
            raise ValueError("box needs lower < upper componentwise")
        return cls("box", lower=lo, upper=hi)

    @classmethod
    def stability(cls, margin: float, n_ma: int, bound: float = np.inf) -> "CompactRegion":
        """ARMA parameters whose MA zeros keep ``margin`` from the unit circle."""
        if not margin > 0:
            raise ValueError("stability margin must be positive")
        return cls("stability", margin=float(margin), n_ma=int(n_ma), bound=float(bound))

    @classmethod
    def from_dict(cls, spec: dict) -> "CompactRegion":
        kind = spec["kind"]
        if kind == "ball":
            return cls.ball(spec["center"], spec["radius"], spec.get("inner_radius", 0.0))
        if kind == "box":
            return cls.box(spec["lower"], spec["upper"])
        if kind == "stability":
            return cls.stability(spec["margin"], spec["n_ma"], spec.get("bound", np.inf))
        raise ValueError(f"unknown region kind {kind!r}")

    def to_dict(self) -> dict[str, Any]:
        if self.kind == "ball":
            return {"kind": "ball", "center": list(self.center), "radius": self.radius,
                    "inner_radius": self.inner_radius}
        if self.kind == "box":
            return {"kind": "box", "lower": list(self.lower), "upper": list(self.upper)}
        return {"kind": "stability", "margin": self.margin, "n_ma": self.n_ma,
                "bound": self.bound}

    def contains(self, theta) -> bool:
        theta = np.asarray(theta, dtype=float)
        if not np.all(np.isfinite(theta)):
            return False
        if self.kind == "ball":
            dist = float(np.linalg.norm(theta - np.asarray(self.center)))
            return self.inner_radius <= dist <= self.radius
        if self.kind == "box":
            return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))
        if np.linalg.norm(theta) > self.bound:
            return False
        b = theta[theta.size - self.n_ma:]
        return stability_margin(b) >= self.margin

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        """``n`` points of the region from a scrambled Sobol sequence."""
        if self.kind == "stability":
            raise ValueError("stability regions are not sampled")
        if self.kind == "ball":
            c = np.asarray(self.center)
            lo, hi = c - self.radius, c + self.radius
        else:
            lo, hi = np.asarray(self.lower), np.asarray(self.upper)
        d = lo.size
        sobol = qmc.Sobol(d, scramble=True, seed=np.random.default_rng(seed))
        out = []
        have = 0
        while have < n:
            m = int(2 ** np.ceil(np.log2(max(2 * (n - have), 2))))
            pts = qmc.scale(sobol.random(m), lo, hi)
            if self.kind == "ball":
                dist = np.linalg.norm(pts - np.asarray(self.center), axis=1)
                pts = pts[(dist >= self.inner_radius) & (dist <= self.radius)]
            out.append(pts)
            have += len(pts)
        return np.concatenate(out)[:n]
