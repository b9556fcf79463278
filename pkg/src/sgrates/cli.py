"""Command-line harness: ``sgrates {run,analyze,predict,estimate-loja}``.

Exit codes: 0 success, 2 invalid configuration, 3 a seed diverged or left
its region, 4 a bound verdict is ``Violated``.
"""
from __future__ import annotations

import argparse
import json
import math
import statistics
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Any, Optional

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .engine import STOP_COMPLETED, Trajectory, markov_run, run
from .loja import LojaParams, estimate_exponent, predict_rates
from .rates import CHANNELS, Verdict, analyze, worst_verdict
from .regions import CompactRegion
from .schedule import validate_assumptions

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_VIOLATED = 4


def _clean(obj: Any) -> Any:
    """JSON-safe copy: NaN becomes null, infinities become strings."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def dumps(obj: Any) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


# running ---------------------------------------------------------------------

def _csv_name(seed: int) -> str:
    return f"seed_{seed}.csv"


def run_seed(cfg: ExperimentConfig, seed: int) -> Trajectory:
    """One trajectory for ``seed``; pure function of the configuration."""
    sched = cfg.schedule()
    theta0 = cfg.theta0()
    plan = cfg.plan()
    region = cfg.region()
    check_every = int(cfg.section("run").get("check_every", 1000))
    if cfg.kind == "additive":
        obj = cfg.objective()
        traj = run(obj, sched, cfg.noise(seed), theta0, cfg.steps, region=region, plan=plan,
                   check_every=check_every)
        traj.metadata["fhat"] = obj.fhat
    else:
        app = cfg.application()
        if cfg.kind == "arma":
            region = region or CompactRegion.stability(app.margin, app.orders.N)
        traj = markov_run(app, sched, theta0, cfg.steps, seed=seed, region=region, plan=plan,
                          check_every=check_every)
        traj.metadata["fhat"] = app.objective.fhat
    traj.metadata["config_hash"] = cfg.hash
    return traj


def _worker(args) -> tuple[int, str, dict]:
    data, text, path, seed = args
    cfg = ExperimentConfig(data, text, path)
    traj = run_seed(cfg, seed)
    return seed, traj.to_csv_text(), traj.sidecar()


def execute(cfg: ExperimentConfig, out_dir: Path, workers: int = 1) -> None:
    """Run every seed and write ``seed_<s>.csv`` plus JSON sidecars."""
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(cfg.data, cfg.text, cfg.path, s) for s in cfg.seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = [_worker(j) for j in jobs]
    for seed, text, meta in results:
        path = out_dir / _csv_name(seed)
        path.write_text(text)
        path.with_suffix(".json").write_text(dumps(meta))


# analysis --------------------------------------------------------------------

def resolve_loja(cfg: ExperimentConfig) -> tuple[Optional[LojaParams], str]:
    """Lojasiewicz constants for the prediction and a label for their origin."""
    src = cfg.section("loja").get("source", "known")
    if src == "manual":
        return cfg.manual_loja(), "manual"
    if src == "estimate":
        est = estimate_loja(cfg)
        return est.params, "estimate"
    if cfg.kind == "additive":
        return cfg.objective().known_loja, "known"
    if cfg.kind in ("td", "arma"):
        app = cfg.application()
        if app.objective.fhat is not None:
            # isolated weighted least-squares / identifiable minimum: locally quadratic
            return LojaParams(delta=0.5, mu=2.0, nu=1.0), "known"
    return None, "unavailable"


def estimate_loja(cfg: ExperimentConfig):
    spec = cfg.section("loja")
    obj = cfg.objective()
    region = cfg.region()
    if region is None:
        if obj.known_loja is not None and obj.known_loja.region and \
                obj.known_loja.region.get("kind") == "ball":
            region = CompactRegion.from_dict(obj.known_loja.region)
        else:
            region = CompactRegion.ball(np.zeros(obj.dim), 1.0)
    return estimate_exponent(obj, region, a=float(spec.get("level", 0.0)),
                             n_samples=int(spec.get("samples", 100_000)),
                             eps=float(spec.get("eps", 0.9)), seed=int(spec.get("seed", 0)))


def build_report(cfg: ExperimentConfig, out_dir: Path) -> tuple[dict, int]:
    """Assemble the experiment report from the trajectory files on disk."""
    sched = cfg.schedule()
    loja, loja_src = resolve_loja(cfg)
    r = cfg.r
    prediction = predict_rates(loja, r) if loja is not None else None
    check = validate_assumptions(sched, r) if math.isfinite(r) else None
    runs = []
    per_channel: dict[str, list] = {c: [] for c in CHANNELS}
    verdicts: dict[str, list] = {c: [] for c in CHANNELS}
    any_bad = False
    for seed in cfg.seeds:
        path = out_dir / _csv_name(seed)
        if not path.exists():
            raise FileNotFoundError(f"missing trajectory {path}; run without --analyze-only")
        traj = Trajectory.load(path)
        fhat = traj.metadata.get("fhat")
        rep = analyze(traj, prediction, fhat=fhat, tail=cfg.tail)
        bad = traj.stop_reason != STOP_COMPLETED
        any_bad |= bad
        for ch in rep.channels:
            per_channel[ch.channel].append(ch.fit.exponent)
            verdicts[ch.channel].append(ch.verdict)
        runs.append({"seed": seed, "csv": path.name, "stop_reason": traj.stop_reason,
                     "exit_index": traj.exit_index, "report": rep.to_dict()})
    aggregate = {}
    for ch in CHANNELS:
        if not verdicts[ch]:
            continue
        finite = [v for v in per_channel[ch] if math.isfinite(v)]
        aggregate[ch] = {
            "median_exponent": statistics.median(finite) if finite else None,
            "verdict": worst_verdict(verdicts[ch]).value,
        }
    violated = any(a["verdict"] == Verdict.VIOLATED.value for a in aggregate.values())
    code = EXIT_DIVERGED if any_bad else (EXIT_VIOLATED if violated else EXIT_OK)
    report = {
        "config_hash": cfg.hash,
        "kind": cfg.kind,
        "versions": {"sgrates": __version__, "numpy": np.__version__},
        "seeds": cfg.seeds,
        "steps": cfg.steps,
        "schedule": sched.to_dict(),
        "schedule_check": None if check is None else {
            "steps_ok": check.steps_ok, "noise_ok": check.noise_ok,
            "r_threshold": check.r_threshold, "conclusive": check.conclusive},
        "loja": {"source": loja_src, **(loja.to_dict() if loja else {})},
        "prediction": prediction.to_dict() if prediction else None,
        "runs": runs,
        "aggregate": aggregate,
        "any_diverged_or_exited": any_bad,
        "exit_code": code,
    }
    return report, code


def analyze_dir(cfg: ExperimentConfig, out_dir: Path) -> int:
    report, code = build_report(cfg, out_dir)
    (out_dir / "report.json").write_text(dumps(report))
    return code


# subcommands -----------------------------------------------------------------

def _load(path: str) -> ExperimentConfig:
    return load_config(path)


def cmd_run(args) -> int:
    cfg = _load(args.config)
    out = Path(args.out_dir)
    if not args.analyze_only:
        execute(cfg, out, args.workers)
    code = analyze_dir(cfg, out)
    print(f"report written to {out / 'report.json'} (exit {code})")
    return code


def cmd_analyze(args) -> int:
    args.analyze_only = True
    return cmd_run(args)


def cmd_predict(args) -> int:
    r = math.inf if str(args.r).lower() in ("inf", "infinity") else float(args.r)
    pred = predict_rates((args.mu, args.nu), r)
    sys.stdout.write(dumps(pred.to_dict()))
    return EXIT_OK


def cmd_estimate_loja(args) -> int:
    cfg = _load(args.config)
    if cfg.kind != "additive":
        raise ConfigError("estimate-loja needs an analytic [objective]", None, cfg.path)
    est = estimate_loja(cfg)
    text = dumps(est.to_dict())
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "loja.json").write_text(text)
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sgrates", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", required=True, help="experiment TOML file")
        sp.add_argument("--out-dir", required=out_required, default=None)
        sp.add_argument("--workers", type=int, default=1)

    sp = sub.add_parser("run", help="run all seeds and write CSVs plus report.json")
    common(sp)
    sp.add_argument("--analyze-only", action="store_true",
                    help="rebuild report.json from existing CSVs")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("analyze", help="rebuild report.json from existing CSVs")
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("predict", help="predicted rate exponents")
    sp.add_argument("--mu", type=float, required=True)
    sp.add_argument("--nu", type=float, required=True)
    sp.add_argument("--r", default="inf")
    sp.set_defaults(func=cmd_predict)

    sp = sub.add_parser("estimate-loja", help="sampled Lojasiewicz exponents of [objective]")
    common(sp, out_required=False)
    sp.set_defaults(func=cmd_estimate_loja)
    return p


def main(argv: Optional[list] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
