"""Reproducible runs: config parsing, orchestration and export.

Subcommands
-----------
``gen-env``   sample, validate and dump a window of the environment
``simulate``  simulate the ensemble only
``verify``    run analyses on an existing ensemble dump
``run``       end to end

Progress goes to stderr (level from ``RWRE_LOG``); stdout carries only the
JSON summary.  Every output is a pure function of the resolved config.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import prf
from .environment import (
    EPS_BISTO,
    EPS_DRIFT,
    EnvironmentError,
    EnvironmentSpec,
    EnvironmentView,
    kernels_at_sites,
    validate_environment,
)
from .stats import (
    KS_THRESHOLD_999,
    SCHMIDT_RATIO_THRESHOLD,
    clt_distribution_test,
    covariance_agreement,
    dyadic_steps,
    empirical_covariance,
    martingale_audit,
    recurrence_stats,
    schmidt_criterion,
    theoretical_covariance,
)
from .walker import ENUMERATION_LIMIT, MODES, WalkEnsemble, equivalence_check, simulate_ensemble

__all__ = ["ANALYSES", "ConfigError", "RunConfig", "parse_config", "run", "main"]

log = logging.getLogger("rwre_lab")

ANALYSES = ("covariance", "clt", "martingale", "schmidt", "recurrence", "cylinder-oracle")
FULL_RECORD_LIMIT = 2_000_000
VALIDATION_SITES = 200
VALIDATION_RADIUS = 1000
COVARIANCE_SIGMAS = 4.0


class ConfigError(ValueError):
    """Config document violates the schema; the message names the field path."""


@dataclass(frozen=True)
class RunConfig:
    environment: EnvironmentSpec
    mode: str
    n_walks: int
    n_steps: int
    analyses: tuple[str, ...]
    output_dir: str = "rwre-out"
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)
    eps_bisto: float = EPS_BISTO
    eps_drift: float = EPS_DRIFT
    n_env_samples: int = 20_000
    schmidt_rho: tuple[float, ...] = (0.2, 0.4, 0.8)
    schmidt_threshold: float = SCHMIDT_RATIO_THRESHOLD
    cylinder_n: int = 5

    def to_dict(self) -> dict:
        return {
            "environment": self.environment.to_dict(),
            "mode": self.mode,
            "n_walks": self.n_walks,
            "n_steps": self.n_steps,
            "analyses": list(self.analyses),
            "output_dir": self.output_dir,
            "workers": self.workers,
            "eps_bisto": self.eps_bisto,
            "eps_drift": self.eps_drift,
            "n_env_samples": self.n_env_samples,
            "schmidt_rho": list(self.schmidt_rho),
            "schmidt_threshold": self.schmidt_threshold,
            "cylinder_n": self.cylinder_n,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


_INT_FIELDS = ("n_walks", "n_steps", "workers", "n_env_samples", "cylinder_n")
_FLOAT_FIELDS = ("eps_bisto", "eps_drift", "schmidt_threshold")


def _positive_int(doc, key, minimum=1):
    v = doc[key]
    if isinstance(v, bool) or not isinstance(v, int) or v < minimum:
        raise ConfigError(f"{key}: expected an integer >= {minimum}, got {v!r}")
    return v


def parse_config(text: str, echo: bool = False) -> RunConfig:
    """Validate a JSON run config; unknown keys are rejected.

    With ``echo`` the effective config is written to
    ``<output_dir>/config.resolved.json``.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"<root>: malformed JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError("<root>: expected a JSON object")
    known = {"environment", "mode", "n_walks", "n_steps", "analyses", "output_dir", "workers",
             "schmidt_rho", *_INT_FIELDS, *_FLOAT_FIELDS}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigError(f"{unknown[0]}: unknown key")
    for key in ("environment", "mode", "n_walks", "n_steps", "analyses"):
        if key not in doc:
            raise ConfigError(f"{key}: required")
    env = doc["environment"]
    if not isinstance(env, dict):
        raise ConfigError("environment: expected an object")
    try:
        spec = EnvironmentSpec.from_dict(env)
    except (EnvironmentError, TypeError, ValueError) as exc:
        raise ConfigError(f"environment: {exc}") from None
    if doc["mode"] not in MODES:
        raise ConfigError(f"mode: expected one of {list(MODES)}, got {doc['mode']!r}")
    kw: dict[str, Any] = {}
    for key in _INT_FIELDS:
        if key in doc:
            kw[key] = _positive_int(doc, key)
    for key in _FLOAT_FIELDS:
        if key in doc:
            v = doc[key]
            if isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"{key}: expected a positive number, got {v!r}")
            kw[key] = float(v)
    analyses = doc["analyses"]
    if not isinstance(analyses, list) or not analyses:
        raise ConfigError("analyses: expected a nonempty list")
    for i, a in enumerate(analyses):
        if a not in ANALYSES:
            raise ConfigError(f"analyses[{i}]: unknown analysis {a!r}; choose from {list(ANALYSES)}")
    if "schmidt_rho" in doc:
        rho = doc["schmidt_rho"]
        if not isinstance(rho, list) or not rho or any(
                isinstance(r, bool) or not isinstance(r, (int, float)) or r <= 0 for r in rho):
            raise ConfigError("schmidt_rho: expected a nonempty list of positive numbers")
        kw["schmidt_rho"] = tuple(float(r) for r in rho)
    if "output_dir" in doc:
        if not isinstance(doc["output_dir"], str):
            raise ConfigError("output_dir: expected a string")
        kw["output_dir"] = doc["output_dir"]
    cfg = RunConfig(spec, doc["mode"], kw.pop("n_walks"), kw.pop("n_steps"),
                    tuple(dict.fromkeys(analyses)), **kw)
    if echo:
        write_resolved(cfg)
    return cfg


def write_resolved(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "config.resolved.json"
    path.write_text(cfg.to_json() + "\n")
    return path


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


class StageError(RuntimeError):
    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"stage {stage!r} failed: {exc}")
        self.stage = stage


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def validation_sites(spec: EnvironmentSpec, n: int = VALIDATION_SITES,
                     radius: int = VALIDATION_RADIUS) -> np.ndarray:
    u = prf.uniform(spec.seed, prf.tag("validate"), np.arange(n)[:, None], np.arange(spec.dims)[None, :])
    return np.floor((2 * radius + 1) * u).astype(np.int64) - radius


def stage_validate(cfg: RunConfig) -> dict:
    view = EnvironmentView(cfg.environment)
    rep = validate_environment(view, validation_sites(cfg.environment), cfg.eps_bisto, cfg.eps_drift)
    return rep.summary()


def record_steps_for(cfg: RunConfig) -> list[int] | None:
    if cfg.n_walks * (cfg.n_steps + 1) <= FULL_RECORD_LIMIT:
        return None
    return dyadic_steps(cfg.n_steps)


def stage_simulate(cfg: RunConfig) -> WalkEnsemble:
    log.info("simulating %d %s walks of %d steps", cfg.n_walks, cfg.mode, cfg.n_steps)
    return simulate_ensemble(cfg.environment, cfg.mode, cfg.n_walks, cfg.n_steps,
                             record_steps=record_steps_for(cfg), workers=cfg.workers)


def write_ensemble(ens: WalkEnsemble, out: Path) -> None:
    with open(out / "ensemble.csv", "w", newline="") as fh:
        ens.write_csv(fh)
    with open(out / "first_return.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["walk_id", "first_return"])
        for j, k in enumerate(ens.first_return.tolist()):
            w.writerow([j, k])


def read_ensemble(cfg: RunConfig, out: Path) -> WalkEnsemble:
    with open(out / "ensemble.csv") as fh:
        ens = WalkEnsemble.read_csv(fh, cfg.environment, cfg.mode, cfg.n_steps)
    fr_path = out / "first_return.csv"
    if fr_path.exists():
        rows = np.loadtxt(fr_path, delimiter=",", skiprows=1, dtype=np.int64, ndmin=2)
        ens.first_return = rows[:, 1]
    return ens


def _analysis(name: str, cfg: RunConfig, ens: WalkEnsemble, out: Path) -> dict:
    spec = cfg.environment
    if name == "covariance":
        theo = theoretical_covariance(spec, cfg.n_env_samples)
        emp = empirical_covariance(ens)
        z = covariance_agreement(theo, emp)
        res = {"theoretical": theo.to_dict(), "empirical": emp.to_dict(),
               "z_scores": z.tolist(), "max_z": float(z.max()), "sigmas": COVARIANCE_SIGMAS,
               "passed": bool(z.max() <= COVARIANCE_SIGMAS)}
        _write_json(out / "covariance.json", res)
        return {"passed": res["passed"], "max_z": res["max_z"]}
    if name == "clt":
        theo = theoretical_covariance(spec, cfg.n_env_samples)
        rep = clt_distribution_test(ens, theo).to_dict()
        _write_json(out / "clt.json", rep)
        return {"passed": rep["passed"], "scaled": rep["scaled"], "threshold": KS_THRESHOLD_999}
    if name == "martingale":
        rep = martingale_audit(ens, cfg.eps_drift).to_dict()
        _write_json(out / "martingale.json", rep)
        return {"passed": rep["passed"], "max_drift": rep["max_drift"]}
    if name == "schmidt":
        ns = [n for n in dyadic_steps(cfg.n_steps) if n in set(ens.record_steps.tolist())]
        ns = [n for n in ns if n >= 2] or [cfg.n_steps]
        table = schmidt_criterion(ens, ns, cfg.schmidt_rho)
        (out / "schmidt.csv").write_text(table.to_csv())
        res = {"min_ratio": table.min_ratio(), "threshold": cfg.schmidt_threshold}
        if spec.dims > 2:
            res.update(passed=True, note="small-ball scaling n^(1/d) is only tested for d <= 2")
        else:
            res["passed"] = table.passes(cfg.schmidt_threshold)
        return res
    if name == "recurrence":
        rep = recurrence_stats(ens)
        steps = sorted(set(dyadic_steps(cfg.n_steps)) | {cfg.n_steps})
        (out / "recurrence.csv").write_text(rep.to_csv(steps if cfg.n_steps > 10_000 else None))
        d = rep.to_dict()
        d.pop("first_return_histogram")
        return {**d, "passed": rep.monotone}
    if name == "cylinder-oracle":
        view = EnvironmentView(spec)
        big_n = len(spec.jumps)
        n = cfg.cylinder_n
        while n > 1 and big_n**n > ENUMERATION_LIMIT // 10:
            n -= 1
        rep = equivalence_check(view, n).to_dict()
        _write_json(out / "cylinder.json", rep)
        return {"passed": rep["passed"], "n": n, "max_discrepancy": rep["max_discrepancy"]}
    raise ValueError(name)


def _finish(cfg: RunConfig, out: Path, checks: dict, failed_stage: str | None = None,
            error: str | None = None) -> int:
    passed = failed_stage is None and all(c.get("passed", False) for c in checks.values())
    summary = {"passed": passed, "checks": checks}
    if failed_stage:
        summary["failed_stage"] = failed_stage
        summary["error"] = error
    summary["failed_checks"] = sorted(k for k, c in checks.items() if not c.get("passed", False))
    _write_json(out / "summary.json", summary)
    print(json.dumps(summary, sort_keys=True, default=_jsonable))
    return 0 if passed else 1


def _check_name(a: str) -> str:
    return {"martingale": "martingale_audit", "covariance": "covariance_agreement",
            "clt": "clt_distribution_test", "schmidt": "schmidt_criterion",
            "recurrence": "recurrence_stats", "cylinder-oracle": "equivalence_check"}[a]


def run_analyses(cfg: RunConfig, ens: WalkEnsemble, out: Path, checks: dict) -> int:
    for a in cfg.analyses:
        log.info("analysis %s", a)
        try:
            checks[_check_name(a)] = _analysis(a, cfg, ens, out)
        except Exception as exc:  # noqa: BLE001 - any failure aborts with the stage named
            log.error("analysis %s failed: %s", a, exc)
            return _finish(cfg, out, checks, _check_name(a), str(exc))
    return _finish(cfg, out, checks)


def run(cfg: RunConfig) -> int:
    """Validate the environment, simulate, analyse; exit status 0 iff every check passes."""
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg)
    checks: dict[str, dict] = {}
    try:
        v = stage_validate(cfg)
    except Exception as exc:  # noqa: BLE001
        return _finish(cfg, out, checks, "validate_environment", str(exc))
    _write_json(out / "environment.json", {"environment": cfg.environment.to_dict(), "validation": v})
    checks["validate_environment"] = {"passed": v["passed"], "failures": v["failures"]}
    try:
        ens = stage_simulate(cfg)
        write_ensemble(ens, out)
    except Exception as exc:  # noqa: BLE001
        return _finish(cfg, out, checks, "simulate", str(exc))
    return run_analyses(cfg, ens, out, checks)


# ---------------------------------------------------------------------------
# Command line
# ---------------------------------------------------------------------------


def _setup_logging() -> None:
    level = os.environ.get("RWRE_LOG", "warn").lower()
    levels = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
              "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(stream=sys.stderr, level=levels.get(level, logging.WARNING),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")


def _load(args) -> RunConfig:
    if not args.config:
        raise ConfigError("--config is required")
    cfg = parse_config(Path(args.config).read_text())
    env = cfg.environment
    if args.seed is not None:
        env = env.with_seed(args.seed)
    kw: dict[str, Any] = {"environment": env}
    if args.workers is not None:
        kw["workers"] = args.workers
    if args.output is not None:
        kw["output_dir"] = args.output
    if args.analysis:
        bad = [a for a in args.analysis if a not in ANALYSES]
        if bad:
            raise ConfigError(f"--analysis: unknown analysis {bad[0]!r}")
        kw["analyses"] = tuple(dict.fromkeys(args.analysis))
    return replace(cfg, **kw)


def cmd_gen_env(cfg: RunConfig, window: int) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec = cfg.environment
    v = stage_validate(cfg)
    _write_json(out / "environment.json", {"environment": spec.to_dict(), "validation": v})
    sites = np.array(list(np.ndindex(*([2 * window + 1] * spec.dims))), dtype=np.int64) - window
    q = kernels_at_sites(spec, sites)
    with open(out / "kernels.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{k + 1}" for k in range(spec.dims)]
                   + ["d=" + " ".join(map(str, d)) for d in spec.jumps])
        for x, row in zip(sites.tolist(), q.tolist()):
            w.writerow(x + [repr(p) for p in row])
    print(json.dumps(v, sort_keys=True))
    return 0 if v["passed"] else 1


def cmd_simulate(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_resolved(cfg)
    ens = stage_simulate(cfg)
    write_ensemble(ens, out)
    _write_json(out / "ensemble.json", ens.metadata())
    print(json.dumps({"n_walks": ens.n_walks, "n_steps": ens.n_steps,
                      "output": str(out)}, sort_keys=True))
    return 0


def cmd_verify(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    ens = read_ensemble(cfg, out)
    return run_analyses(cfg, ens, out, {})


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="path to a JSON run config")
    common.add_argument("--seed", type=int, help="override the environment seed")
    common.add_argument("--workers", type=int, help="worker processes for simulation")
    common.add_argument("--output", help="output directory")
    common.add_argument("--analysis", action="append", metavar="NAME",
                        help=f"analysis to run (repeatable): {', '.join(ANALYSES)}")
    p = argparse.ArgumentParser(prog="rwre", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    g = sub.add_parser("gen-env", parents=[common], help="sample, validate and dump an environment window")
    g.add_argument("--window", type=int, default=5, help="dump sites with |x_k| <= WINDOW")
    sub.add_parser("simulate", parents=[common], help="simulate the ensemble only")
    sub.add_parser("verify", parents=[common], help="run analyses on an existing dump")
    sub.add_parser("run", parents=[common], help="validate, simulate and analyse")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = _load(args)
    except (ConfigError, OSError) as exc:
        print(f"rwre: config error: {exc}", file=sys.stderr)
        return 2
    if args.command == "gen-env":
        return cmd_gen_env(cfg, args.window)
    if args.command == "simulate":
        return cmd_simulate(cfg)
    if args.command == "verify":
        return cmd_verify(cfg)
    return run(cfg)


if __name__ == "__main__":
    sys.exit(main())
