"""Step-size schedules, their partial sums and horizon indices.

A schedule is the positive sequence ``alpha_n`` driving the recursion.  Its
partial sums ``gamma_n = alpha_0 + ... + alpha_{n-1}`` act as the internal
clock of the algorithm, and ``horizon(n, t)`` returns the last index reached
within ``t`` units of that clock after ``n``.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Optional, Sequence

import numpy as np
from numba import njit

__all__ = [
    "StepSchedule",
    "NoiseRate",
    "ScheduleReport",
    "gamma",
    "horizon",
    "validate_assumptions",
    "noise_rate_threshold",
]

POWER_LAW = "power_law"
EXPLICIT = "explicit"


@njit(cache=True)
def _neumaier_extend(total, comp, alphas, out):
    # Neumaier compensated running sum; ``out[i]`` receives the corrected sum
    # after adding ``alphas[i]``.
    s = total
    c = comp
    for i in range(alphas.size):
        x = alphas[i]
        t = s + x
        if abs(s) >= abs(x):
            c += (s - t) + x
        else:
            c += (x - t) + s
        s = t
        out[i] = s + c
    return s, c


class _GammaCache:
    """Lazily extended table of ``gamma_0 .. gamma_K``."""

    def __init__(self) -> None:
        self.values = np.zeros(1)
        self.total = 0.0
        self.comp = 0.0
        self.lock = threading.Lock()


@dataclass(frozen=True)
class StepSchedule:
    """Immutable step-size schedule.

    Use :meth:`power_law` for ``alpha_n = c (n + n0)^(-a)`` or
    :meth:`explicit` for a finite list of step sizes.
    """

    family: str
    c: float = 1.0
    a: float = 1.0
    n0: int = 1
    values: tuple = ()
    _cache: _GammaCache = field(
        default_factory=_GammaCache, repr=False, compare=False, hash=False
    )

    def __post_init__(self) -> None:
        if self.family == POWER_LAW:
            if not (self.c > 0 and math.isfinite(self.c)):
                raise ValueError(f"scale c must be positive, got {self.c}")
            if not (0.5 < self.a <= 1.0):
                raise ValueError(f"exponent a must lie in (1/2, 1], got {self.a}")
            if int(self.n0) != self.n0 or self.n0 < 1:
                raise ValueError(f"offset n0 must be an integer >= 1, got {self.n0}")
        elif self.family == EXPLICIT:
            if len(self.values) == 0:
                raise ValueError("explicit schedule needs at least one step size")
            arr = np.asarray(self.values, dtype=float)
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise ValueError("explicit step sizes must be finite and non-negative")
        else:
            raise ValueError(f"unknown schedule family {self.family!r}")

    # construction ---------------------------------------------------------
    @classmethod
    def power_law(cls, c: float = 1.0, a: float = 1.0, n0: int = 1) -> "StepSchedule":
        return cls(POWER_LAW, c=float(c), a=float(a), n0=int(n0))

    @classmethod
    def explicit(cls, values: Sequence[float], strict: bool = True) -> "StepSchedule":
        """Schedule given by a finite prefix of step sizes.

        With ``strict=False`` zero entries are accepted; this freezes the
        parameter and is only meant for diagnostics.
        """
        vals = tuple(float(v) for v in values)
        if strict and any(v <= 0 for v in vals):
            raise ValueError("step sizes must be positive (pass strict=False to allow zeros)")
        return cls(EXPLICIT, values=vals)

    @classmethod
    def from_dict(cls, spec: dict) -> "StepSchedule":
        family = spec.get("family", POWER_LAW)
        if family == POWER_LAW:
            return cls.power_law(spec.get("c", 1.0), spec.get("a", 1.0), spec.get("n0", 1))
        if family == EXPLICIT:
            return cls.explicit(spec["values"], strict=spec.get("strict", True))
        raise ValueError(f"unknown schedule family {family!r}")

    def to_dict(self) -> dict[str, Any]:
        if self.family == POWER_LAW:
            return {"family": POWER_LAW, "c": self.c, "a": self.a, "n0": self.n0}
        return {"family": EXPLICIT, "values": list(self.values)}

    # step sizes -----------------------------------------------------------
    @property
    def length(self) -> Optional[int]:
        """Number of available step sizes (``None`` when unbounded)."""
        return len(self.values) if self.family == EXPLICIT else None

    def alphas(self, start: int, stop: int) -> np.ndarray:
        """Step sizes ``alpha_start .. alpha_{stop-1}``."""
        if start < 0 or stop < start:
            raise ValueError(f"invalid index range [{start}, {stop})")
        if self.family == POWER_LAW:
            n = np.arange(start, stop, dtype=float)
            return self.c * (n + self.n0) ** (-self.a)
        if stop > len(self.values):
            raise IndexError(
                f"explicit schedule has {len(self.values)} steps, {stop} requested"
            )
        return np.asarray(self.values[start:stop], dtype=float)

    def alpha(self, n: int) -> float:
        return float(self.alphas(n, n + 1)[0])

    # partial sums ---------------------------------------------------------
    def gammas(self, stop: int) -> np.ndarray:
        """Array ``gamma_0 .. gamma_stop`` (length ``stop + 1``)."""
        self._extend(stop)
        return self._cache.values[: stop + 1]

    def _extend(self, stop: int) -> None:
        cache = self._cache
        if stop < cache.values.size:
            return
        if self.family == EXPLICIT and stop > len(self.values):
            raise IndexError(
                f"explicit schedule has {len(self.values)} steps, gamma_{stop} requested"
            )
        with cache.lock:
            have = cache.values.size - 1
            if stop <= have:
                return
            target = stop
            if self.family == POWER_LAW:
                target = max(stop, 2 * have, 1024)
            new = self.alphas(have, target)
            out = np.empty(new.size)
            cache.total, cache.comp = _neumaier_extend(cache.total, cache.comp, new, out)
            cache.values = np.concatenate([cache.values, out])


def gamma(sched: StepSchedule, n: int) -> float:
    """Partial sum ``gamma_n``; ``gamma_0 = 0``."""
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    return float(sched.gammas(n)[n])


MAX_HORIZON = 2**26


def horizon(sched: StepSchedule, n: int, t: float) -> int:
    """Largest ``k >= n`` with ``gamma_k - gamma_n <= t``.

    Raises ``OverflowError`` when the answer exceeds ``MAX_HORIZON`` (slowly
    decaying schedules can push it astronomically far).
    """
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    if n < 0:
        raise ValueError(f"n must be >= 0, got {n}")
    stop = max(2 * n, n + 16)
    while True:
        if sched.length is not None:
            stop = min(stop, sched.length)
        g = sched.gammas(stop)
        limit = g[n] + t
        if g[stop] > limit:
            return int(np.searchsorted(g, limit, side="right") - 1)
        if sched.length is not None and stop == sched.length:
            raise ValueError(
                f"horizon({n}, {t}) extends beyond the explicit prefix of {sched.length} steps"
            )
        if stop >= MAX_HORIZON:
            raise OverflowError(f"horizon({n}, {t}) exceeds {MAX_HORIZON} steps")
        stop = min(2 * stop, MAX_HORIZON)


@dataclass(frozen=True)
class NoiseRate:
    """Exponent ``r`` of the weighted noise averages."""

    r: float

    def __post_init__(self) -> None:
        if not self.r > 0:
            raise ValueError(f"noise rate r must be positive, got {self.r}")

    def valid_for(self, sched: StepSchedule) -> Optional[bool]:
        """Closed-form summability criterion; ``None`` for explicit schedules."""
        if sched.family != POWER_LAW:
            return None
        return self.r < noise_rate_threshold(sched.a)


def noise_rate_threshold(a: float) -> float:
    """Supremum of admissible ``r`` for ``alpha_n ~ n^(-a)``."""
    if a >= 1.0:
        return math.inf
    return (2.0 * a - 1.0) / (2.0 * (1.0 - a))


@dataclass
class ScheduleReport:
    """Outcome of :func:`validate_assumptions`.

    ``steps_ok`` covers ``alpha_n -> 0`` with divergent sum; ``noise_ok`` the
    summability of ``alpha_n^2 gamma_n^(2r)``.  Both are ``None`` when the
    check is inconclusive (explicit prefixes).
    """

    steps_ok: Optional[bool]
    noise_ok: Optional[bool]
    conclusive: bool
    r: float
    r_threshold: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def valid(self) -> bool:
        return bool(self.conclusive and self.steps_ok and self.noise_ok)


def validate_assumptions(sched: StepSchedule, r: "NoiseRate | float") -> ScheduleReport:
    rate = r if isinstance(r, NoiseRate) else NoiseRate(float(r))
    if sched.family == POWER_LAW:
        thr = noise_rate_threshold(sched.a)
        return ScheduleReport(
            steps_ok=0.0 < sched.a <= 1.0,
            noise_ok=rate.r < thr,
            conclusive=True,
            r=rate.r,
            r_threshold=thr,
        )
    alphas = np.asarray(sched.values, dtype=float)
    g = sched.gammas(alphas.size)
    weighted = alphas**2 * g[:-1] ** (2 * rate.r)
    half = alphas.size // 2
    diag = {
        "prefix_length": int(alphas.size),
        "last_alpha": float(alphas[-1]),
        "alpha_sum": float(g[-1]),
        "weighted_square_sum": float(weighted.sum()),
        # share of the weighted sum contributed by the second half of the prefix
        "weighted_tail_share": float(weighted[half:].sum() / weighted.sum())
        if weighted.sum() > 0
        else 0.0,
    }
    return ScheduleReport(None, None, conclusive=False, r=rate.r, diagnostics=diag)
