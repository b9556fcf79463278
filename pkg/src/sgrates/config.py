"""Experiment configuration: TOML parsing, validation and object construction.

Layout::

    [experiment]   kind = "additive" | "td" | "arma" | "supervised"
    [objective]    additive runs: name + objective parameters
    [application]  td / arma / supervised parameters
    [schedule]     family, c, a, n0 (or values)
    [noise]        kind, sigma, r
    [run]          steps, seeds, theta0, record_ratio, tail, check_every
    [region]       optional stopping region
    [loja]         source = "known" | "estimate" | "manual"; mu, nu, samples
"""
from __future__ import annotations

import copy
import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional

import numpy as np
import tomli

from . import arma, objectives, supervised, td
from .engine import NoiseSource, RecordingPlan
from .loja import LojaParams
from .regions import CompactRegion
from .schedule import StepSchedule

__all__ = ["ConfigError", "ExperimentConfig", "load_config", "parse_config"]

KINDS = ("additive", "td", "arma", "supervised")


class ConfigError(ValueError):
    """Invalid configuration, optionally anchored to a line of the source file."""

    def __init__(self, message: str, line: Optional[int] = None, path: str = "<config>"):
        self.line = line
        self.path = path
        self.bare = message
        where = f"{path}:{line}" if line is not None else path
        super().__init__(f"{where}: {message}")


@dataclass
class ExperimentConfig:
    data: dict
    text: str = ""
    path: str = "<config>"

    @property
    def hash(self) -> str:
        """SHA-256 of the source bytes (of the canonical JSON when built from a dict)."""
        src = self.text if self.text else json.dumps(self.data, sort_keys=True)
        return hashlib.sha256(src.encode()).hexdigest()

    # serialization -----------------------------------------------------------
    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        cfg = cls(copy.deepcopy(data))
        cfg.validate()
        return cfg

    # accessors ---------------------------------------------------------------
    def section(self, name: str) -> dict:
        return self.data.get(name, {})

    @property
    def kind(self) -> str:
        return self.section("experiment").get("kind", "additive")

    @property
    def seeds(self) -> list:
        return list(self.section("run").get("seeds", []))

    @property
    def steps(self) -> int:
        return int(self.section("run").get("steps", 0))

    @property
    def tail(self) -> float:
        return float(self.section("run").get("tail", 0.5))

    @property
    def r(self) -> float:
        noise = self.section("noise")
        if self.kind == "additive" and noise.get("kind", "none") == "none":
            return math.inf
        r = noise.get("r", math.inf)
        return math.inf if r == "inf" else float(r)

    def plan(self) -> RecordingPlan:
        return RecordingPlan(ratio=float(self.section("run").get("record_ratio", 1.05)))

    def schedule(self) -> StepSchedule:
        return StepSchedule.from_dict(self.section("schedule"))

    def theta0(self) -> np.ndarray:
        return np.asarray(self.section("run")["theta0"], dtype=float)

    def region(self) -> Optional[CompactRegion]:
        spec = self.section("region")
        return CompactRegion.from_dict(spec) if spec else None

    # validation --------------------------------------------------------------
    def _fail(self, section: str, key: Optional[str], message: str):
        line = locate(self.text, section, key) if self.text else None
        label = f"[{section}]" + (f" {key}" if key else "")
        raise ConfigError(f"{label}: {message}", line, self.path)

    def validate(self) -> None:
        if self.kind not in KINDS:
            self._fail("experiment", "kind", f"must be one of {KINDS}")
        run = self.section("run")
        if not run:
            self._fail("run", None, "missing section")
        seeds = run.get("seeds")
        if not isinstance(seeds, list) or not seeds:
            self._fail("run", "seeds", "need a non-empty list of seeds")
        if any(not isinstance(s, int) or s < 0 or s >= 2**64 for s in seeds):
            self._fail("run", "seeds", "seeds must be 64-bit unsigned integers")
        if len(set(seeds)) != len(seeds):
            self._fail("run", "seeds", "seeds must be distinct")
        steps = run.get("steps")
        if not isinstance(steps, int) or steps < 1:
            self._fail("run", "steps", "must be a positive integer")
        if "theta0" not in run:
            self._fail("run", "theta0", "missing initial parameter")
        try:
            th = self.theta0()
        except (TypeError, ValueError) as exc:
            self._fail("run", "theta0", str(exc))
        if not np.all(np.isfinite(th)):
            self._fail("run", "theta0", "must be finite")
        try:
            sched = self.schedule()
        except (KeyError, TypeError, ValueError) as exc:
            key = _key_from_message(str(exc), ("a", "c", "n0", "values", "family"))
            self._fail("schedule", key, str(exc))
        if self.kind == "additive":
            if not self.section("objective"):
                self._fail("objective", None, "missing section")
            try:
                obj = self.objective()
            except (KeyError, TypeError, ValueError) as exc:
                self._fail("objective", None, str(exc))
            if obj.dim != th.size:
                self._fail("run", "theta0", f"length {th.size} does not match objective "
                           f"dimension {obj.dim}")
            noise = self.section("noise")
            kind = noise.get("kind", "none")
            if kind not in ("none", "gaussian"):
                self._fail("noise", "kind", "must be 'none' or 'gaussian'")
            if kind == "gaussian" and not float(noise.get("sigma", -1)) >= 0:
                self._fail("noise", "sigma", "must be non-negative")
            if kind == "gaussian" and "r" not in noise:
                self._fail("noise", "r", "noisy runs need the noise rate r")
        else:
            if not self.section("application"):
                self._fail("application", None, "missing section")
            try:
                app = self.application()
            except (KeyError, TypeError, ValueError) as exc:
                self._fail("application", None, str(exc))
            if app.dim != th.size:
                self._fail("run", "theta0", f"length {th.size} does not match parameter "
                           f"dimension {app.dim}")
            if "r" not in self.section("noise"):
                self._fail("noise", "r", "state-driven runs need the noise rate r")
        if not self.r > 0:
            self._fail("noise", "r", "must be positive")
        if self.section("region"):
            try:
                self.region()
            except (KeyError, TypeError, ValueError) as exc:
                self._fail("region", None, str(exc))
        loja = self.section("loja")
        src = loja.get("source", "known")
        if src not in ("known", "estimate", "manual"):
            self._fail("loja", "source", "must be 'known', 'estimate' or 'manual'")
        if src == "manual":
            for key in ("mu", "nu"):
                if key not in loja:
                    self._fail("loja", key, "manual source needs mu and nu")
        if src == "estimate" and self.kind != "additive":
            self._fail("loja", "source", "estimation needs an analytic objective")
        ratio = run.get("record_ratio", 1.05)
        if not float(ratio) > 1:
            self._fail("run", "record_ratio", "must exceed 1")
        tail = run.get("tail", 0.5)
        if not 0 < float(tail) <= 1:
            self._fail("run", "tail", "must lie in (0, 1]")

    # builders ----------------------------------------------------------------
    def objective(self) -> objectives.Objective:
        return objectives.from_config(self.section("objective"))

    def noise(self, seed: int) -> NoiseSource:
        spec = self.section("noise")
        if spec.get("kind", "none") == "gaussian":
            return NoiseSource.gaussian(float(spec["sigma"]), seed)
        return NoiseSource("none", seed=seed)

    def application(self):
        spec = self.section("application")
        if self.kind == "td":
            chain = td.FiniteChain.from_dict(spec["chain"])
            approx = td.approx_from_dict(spec.get("approx", {}), chain.n_states)
            return td.TDApp(chain, approx)
        if self.kind == "arma":
            orders = arma.ArmaOrders(int(spec["M"]), int(spec["N"]))
            model = arma.SignalModel.from_dict(spec["signal"])
            return arma.ArmaApp(model, orders, margin=float(spec.get("margin", 0.02)),
                                shrink=bool(spec.get("shrink", False)))
        if self.kind == "supervised":
            net = supervised.FeedforwardNet(int(spec["n1"]), int(spec["n2"]),
                                            spec.get("phi1", "logistic"),
                                            spec.get("phi2", "logistic"),
                                            float(spec.get("L", 10.0)))
            source = supervised.TrainingSource.random_teacher(
                net, int(spec.get("teacher_seed", 0)), sigma=float(spec.get("sigma", 0.1)),
                L=float(spec.get("L", 10.0)))
            return supervised.SupervisedApp(net, source, m0=int(spec.get("mc_samples", 10_000)))
        raise ConfigError(f"unknown experiment kind {self.kind!r}")

    def manual_loja(self) -> Optional[LojaParams]:
        loja = self.section("loja")
        if loja.get("source", "known") != "manual":
            return None
        return LojaParams(delta=float(loja.get("delta", 0.5)), mu=float(loja["mu"]),
                          nu=float(loja["nu"]))


def _key_from_message(message: str, keys) -> Optional[str]:
    lowered = message.lower()
    names = {"a": "exponent a", "c": "scale c", "n0": "offset n0"}
    for k in keys:
        if names.get(k, k) in lowered:
            return k
    return None


def locate(text: str, section: str, key: Optional[str]) -> Optional[int]:
    """1-based line of ``key`` inside ``[section]`` (or of the header when ``key`` is None)."""
    current = None
    header_line = None
    for i, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        m = re.match(r"^\[\s*([^\]]+?)\s*\]$", line)
        if m:
            current = m.group(1)
            if current == section:
                header_line = i
            continue
        if current == section and key is not None and re.match(rf"^{re.escape(key)}\s*=", line):
            return i
    return header_line


def parse_config(text: str, path: str = "<config>") -> ExperimentConfig:
    try:
        data = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError(f"TOML syntax error: {exc}", int(m.group(1)) if m else None,
                          path) from exc
    cfg = ExperimentConfig(data, text, path)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_bytes().decode()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}", None, str(p)) from exc
    return parse_config(text, str(p))
