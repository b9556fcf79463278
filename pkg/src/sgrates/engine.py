"""Stochastic gradient recursion driver.

:func:`run` iterates ``theta_{n+1} = theta_n - alpha_n (grad f(theta_n) + w_n)``
and :func:`markov_run` the state-driven form
``theta_{n+1} = theta_n - alpha_n F(theta_n, xi_{n+1})`` supplied by an
application object.  Both record thinned trajectories and stop early on
divergence or on leaving a region.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Optional, Protocol

import numpy as np

from .objectives import DIVERGENCE_NORM, Objective
from .regions import CompactRegion
from .schedule import StepSchedule

__all__ = [
    "sgd_step",
    "NoiseSource",
    "RecordingPlan",
    "Trajectory",
    "MarkovApp",
    "run",
    "markov_run",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("n", "gamma", "f", "grad_norm_sq", "dist_S")
STOP_COMPLETED = "completed"
STOP_DIVERGED = "diverged"
STOP_EXITED = "exited_region"

#: noise is drawn in fixed-size chunks so the stream never depends on
#: recording or checking boundaries
_CHUNK = 65536


def sgd_step(theta, alpha: float, g, w) -> np.ndarray:
    """One step ``theta - alpha (g + w)``."""
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    w = np.asarray(w, dtype=float)
    if not (theta.shape == g.shape == w.shape):
        raise ValueError(f"dimension mismatch: {theta.shape}, {g.shape}, {w.shape}")
    if not alpha > 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    return theta - alpha * (g + w)


@dataclass(frozen=True)
class NoiseSource:
    """Additive gradient noise ``w_n``.

    ``kind`` is ``"none"``, ``"gaussian"`` (i.i.d. ``N(0, sigma^2 I)``) or
    ``"custom"``.  A custom ``generator(rng, n, theta)`` returns ``w_n`` and
    may keep its own state.  Random numbers come from numpy's PCG64 seeded
    with the 64-bit ``seed``.
    """

    kind: str = "none"
    sigma: float = 0.0
    seed: int = 0
    generator: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("none", "gaussian", "custom"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be non-negative")
        if self.kind == "custom" and self.generator is None:
            raise ValueError("custom noise needs a generator")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def none(cls) -> "NoiseSource":
        return cls("none")

    @classmethod
    def gaussian(cls, sigma: float, seed: int) -> "NoiseSource":
        return cls("gaussian", sigma=float(sigma), seed=int(seed))

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "sigma": self.sigma, "seed": int(self.seed)}

    def rng(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(int(self.seed)))


class _GaussianStream:
    def __init__(self, source: NoiseSource, dim: int) -> None:
        self.rng = source.rng()
        self.sigma = source.sigma
        self.dim = dim
        self.buf = np.empty((0, dim))
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        parts = []
        while k > 0:
            if self.pos == len(self.buf):
                self.buf = self.sigma * self.rng.standard_normal((_CHUNK, self.dim))
                self.pos = 0
            m = min(k, len(self.buf) - self.pos)
            parts.append(self.buf[self.pos:self.pos + m])
            self.pos += m
            k -= m
        return parts[0] if len(parts) == 1 else np.concatenate(parts)


@dataclass(frozen=True)
class RecordingPlan:
    """Geometric thinning: record at ``0``, ``ceil(ratio^k)`` and the last index."""

    ratio: float = 1.05
    keep_theta: bool = False
    record_noise: bool = False

    def __post_init__(self) -> None:
        if not self.ratio > 1:
            raise ValueError("recording ratio must exceed 1")

    def indices(self, N: int) -> np.ndarray:
        if N <= 0:
            return np.array([0], dtype=np.int64)
        kmax = math.log(N) / math.log(self.ratio)
        raw = np.ceil(self.ratio ** np.arange(0, int(kmax) + 2))
        idx = np.unique(np.concatenate([[0], raw[raw <= N], [N]]).astype(np.int64))
        return idx


@dataclass
class Trajectory:
    """Thinned record of a run.

    Arrays ``n``, ``gamma``, ``f``, ``grad_norm_sq`` and ``dist_S`` are aligned;
    ``dist_S`` is NaN where no oracle exists.  ``noise`` holds the full noise
    stream when the plan asked for it.
    """

    n: np.ndarray
    gamma: np.ndarray
    f: np.ndarray
    grad_norm_sq: np.ndarray
    dist_S: np.ndarray
    theta: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)
    stop_reason: str = STOP_COMPLETED
    exit_index: Optional[int] = None
    noise: Optional[np.ndarray] = None
    final_theta: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return int(self.n.size)

    @property
    def has_dist(self) -> bool:
        return bool(np.any(np.isfinite(self.dist_S)))

    # serialization ----------------------------------------------------------
    def to_csv_text(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for i in range(len(self)):
            d = self.dist_S[i]
            writer.writerow([
                int(self.n[i]), repr(float(self.gamma[i])), repr(float(self.f[i])),
                repr(float(self.grad_norm_sq[i])), "" if math.isnan(d) else repr(float(d)),
            ])
        return buf.getvalue()

    def sidecar(self) -> dict[str, Any]:
        meta = dict(self.metadata)
        meta["stop_reason"] = self.stop_reason
        meta["exit_index"] = self.exit_index
        return meta

    def save(self, csv_path: str | Path) -> None:
        csv_path = Path(csv_path)
        csv_path.write_text(self.to_csv_text())
        csv_path.with_suffix(".json").write_text(
            json.dumps(self.sidecar(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, csv_path: str | Path) -> "Trajectory":
        csv_path = Path(csv_path)
        rows = list(csv.reader(csv_path.read_text().splitlines()))
        if tuple(rows[0]) != CSV_COLUMNS:
            raise ValueError(f"{csv_path}: unexpected header {rows[0]}")
        body = rows[1:]
        n = np.array([int(r[0]) for r in body], dtype=np.int64)
        cols = [np.array([float(r[j]) if r[j] != "" else math.nan for r in body])
                for j in range(1, 5)]
        meta_path = csv_path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        stop = meta.pop("stop_reason", STOP_COMPLETED)
        exit_index = meta.pop("exit_index", None)
        return cls(n, *cols, metadata=meta, stop_reason=stop, exit_index=exit_index)


class MarkovApp(Protocol):
    """Application driving the state-dependent recursion.

    ``advance`` performs ``len(alphas)`` steps from ``theta`` and returns
    ``(theta, steps_done, diverged)``.  ``objective`` (optional) supplies exact
    ``f``/``grad f`` for recording.
    """

    dim: int
    objective: Optional[Objective]

    def reset(self, seed: int) -> None: ...

    def advance(self, theta: np.ndarray, alphas: np.ndarray) -> tuple: ...

    def describe(self) -> dict: ...


def _record_values(obj: Optional[Objective], theta: np.ndarray) -> tuple[float, float, float]:
    if obj is None:
        return math.nan, math.nan, math.nan
    with np.errstate(all="ignore"):
        fv = float(obj.eval_f(theta))
        g = np.asarray(obj.eval_grad(theta), dtype=float)
        gsq = float(np.dot(g, g))
        d = float(obj.dist_S(theta)) if obj.dist_S is not None else math.nan
    return fv, gsq, d


def _diverged(theta: np.ndarray) -> bool:
    return (not np.all(np.isfinite(theta))) or float(np.linalg.norm(theta)) > DIVERGENCE_NORM


class _Recorder:
    def __init__(self, sched: StepSchedule, plan: RecordingPlan, obj: Optional[Objective]):
        self.sched = sched
        self.plan = plan
        self.obj = obj
        self.rows: list = []
        self.thetas: list = []

    def add(self, n: int, theta: np.ndarray) -> tuple[float, float]:
        fv, gsq, d = _record_values(self.obj, theta)
        self.rows.append((n, float(self.sched.gammas(n)[n]), fv, gsq, d))
        if self.plan.keep_theta:
            self.thetas.append(np.array(theta, dtype=float))
        return fv, gsq

    def finish(self, **kwargs) -> Trajectory:
        arr = np.array(self.rows, dtype=float).reshape(-1, 5)
        return Trajectory(
            n=arr[:, 0].astype(np.int64), gamma=arr[:, 1], f=arr[:, 2],
            grad_norm_sq=arr[:, 3], dist_S=arr[:, 4],
            theta=np.array(self.thetas) if self.plan.keep_theta else None, **kwargs,
        )


def _check_inputs(theta0, N: int, sched: StepSchedule) -> np.ndarray:
    theta = np.array(theta0, dtype=float).reshape(-1)
    if not np.all(np.isfinite(theta)):
        raise ValueError("theta0 must be finite")
    if N < 0:
        raise ValueError("step count must be non-negative")
    if sched.length is not None and N > sched.length:
        raise ValueError(f"schedule provides {sched.length} steps, {N} requested")
    return theta


def _stops(N: int, plan: RecordingPlan, check_every: Optional[int]) -> tuple[np.ndarray, set]:
    rec = plan.indices(N)
    pts = set(rec.tolist())
    if check_every:
        pts.update(range(0, N + 1, check_every))
    pts.add(N)
    return np.array(sorted(pts), dtype=np.int64), set(rec.tolist())


def _drive(step_block, theta, sched, N, region, plan, recorder, check_every,
           project=None, meta=None):
    """Shared loop: advance between stop points, record, check region."""
    stops, rec = _stops(N, plan, check_every if region is not None or project else None)
    meta = dict(meta or {})
    stop_reason = STOP_COMPLETED
    exit_index = None
    n = 0
    projections = 0
    if region is not None and not region.contains(theta):
        raise ValueError("theta0 lies outside the region")
    fv, gsq = recorder.add(0, theta)
    if not (math.isnan(fv) or math.isfinite(fv)) or _diverged(theta):
        raise ValueError("objective is not finite at theta0")
    for nxt in stops[1:]:
        alphas = sched.alphas(n, int(nxt))
        theta, done, bad = step_block(theta, alphas, n)
        n += int(done)
        if bad or _diverged(theta):
            stop_reason = STOP_DIVERGED
            recorder.add(n, theta)
            break
        if project is not None:
            theta, applied = project(theta)
            projections += int(applied)
        if region is not None and not region.contains(theta):
            stop_reason = STOP_EXITED
            exit_index = n
            recorder.add(n, theta)
            break
        if n in rec:
            fv, gsq = recorder.add(n, theta)
            if not (math.isnan(fv) or math.isfinite(fv)) or not math.isfinite(gsq):
                stop_reason = STOP_DIVERGED
                break
    meta.update(steps_done=n, steps_requested=N, projections=projections)
    return theta, stop_reason, exit_index, meta


def run(
    objective: Objective,
    sched: StepSchedule,
    noise: NoiseSource,
    theta0,
    N: int,
    region: Optional[CompactRegion] = None,
    plan: Optional[RecordingPlan] = None,
    check_every: int = 256,
) -> Trajectory:
    """Iterate the additive-noise recursion for ``N`` steps.

    Region membership is tested every ``check_every`` steps and at every
    recording index, so ``exit_index`` is resolved to that grid.
    """
    plan = plan or RecordingPlan()
    theta = _check_inputs(theta0, N, sched)
    d = theta.size
    if d != objective.dim:
        raise ValueError(f"theta0 has dimension {d}, objective expects {objective.dim}")
    stream = _GaussianStream(noise, d) if noise.kind == "gaussian" else None
    custom_rng = noise.rng() if noise.kind == "custom" else None
    noise_log: list = []
    empty = np.empty((0, d))
    fast = objective.advance is not None and noise.kind != "custom"

    def step_block(th, alphas, n0):
        k = alphas.size
        ws = stream.take(k) if stream is not None else empty
        if plan.record_noise:
            noise_log.append(ws if stream is not None else np.zeros((k, d)))
        if fast:
            return objective.advance(th, alphas, ws)
        for i in range(k):
            g = np.asarray(objective.eval_grad(th), dtype=float)
            if noise.kind == "custom":
                w = np.asarray(noise.generator(custom_rng, n0 + i, th), dtype=float)
                if plan.record_noise:
                    noise_log.append(w[None, :])
            elif stream is not None:
                w = ws[i]
            else:
                w = np.zeros(d)
            if not np.all(np.isfinite(g)):
                return th, i, True
            th = th - alphas[i] * (g + w)
            if _diverged(th):
                return th, i + 1, True
        return th, k, False

    recorder = _Recorder(sched, plan, objective)
    meta = {
        "mode": "additive",
        "seed": int(noise.seed),
        "noise": noise.to_dict(),
        "schedule": sched.to_dict(),
        "objective": objective.describe(),
        "record_ratio": plan.ratio,
        "region": region.to_dict() if region is not None else None,
    }
    theta, reason, exit_index, meta = _drive(step_block, theta, sched, N, region, plan,
                                             recorder, check_every, meta=meta)
    traj = recorder.finish(metadata=meta, stop_reason=reason, exit_index=exit_index,
                           final_theta=theta)
    if plan.record_noise:
        traj.noise = np.concatenate(noise_log) if noise_log else np.zeros((0, d))
    return traj


def markov_run(
    app: MarkovApp,
    sched: StepSchedule,
    theta0,
    N: int,
    seed: int = 0,
    region: Optional[CompactRegion] = None,
    plan: Optional[RecordingPlan] = None,
    check_every: int = 1000,
) -> Trajectory:
    """Iterate the state-driven recursion supplied by ``app``.

    When ``app.objective`` exists, the exact ``f`` and ``|grad f|^2`` are
    recorded at the thinned indices alongside the noisy updates.  An app
    exposing ``project(theta) -> (theta, applied)`` has it applied at every
    check point.
    """
    plan = plan or RecordingPlan()
    theta = _check_inputs(theta0, N, sched)
    if theta.size != app.dim:
        raise ValueError(f"theta0 has dimension {theta.size}, application expects {app.dim}")
    app.reset(int(seed))

    def step_block(th, alphas, n0):
        return app.advance(th, alphas)

    project = getattr(app, "project", None)
    recorder = _Recorder(sched, plan, app.objective)
    meta = {
        "mode": "markov",
        "seed": int(seed),
        "schedule": sched.to_dict(),
        "application": app.describe(),
        "record_ratio": plan.ratio,
        "region": region.to_dict() if region is not None else None,
    }
    theta, reason, exit_index, meta = _drive(step_block, theta, sched, N, region, plan,
                                             recorder, check_every, project=project,
                                             meta=meta)
    return recorder.finish(metadata=meta, stop_reason=reason, exit_index=exit_index,
                           final_theta=theta)
