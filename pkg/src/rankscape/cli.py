"""Command-line experiment runner.

    rankscape <experiment> --config cfg.toml [--outdir DIR] [--jobs N] [--seed S]

Configs are TOML documents validated against the JSON schema shipped as
config_schema.json.  Each invocation writes
<outdir>/<experiment>/<config-hash>/ containing a byte copy of the
config, the trajectory CSV(s), and report.json; rerunning the same
resolved config reproduces every artifact byte for byte.  Exit codes:
0 success, 2 config error, 3 runtime failure; errors are emitted as a
single JSON object on stderr.  Setting RANKSCAPE_DETERMINISTIC=1 forces
--jobs 1 so no parallel scheduling is involved at all.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import os
import sys
from functools import lru_cache
from importlib import resources
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib

import jsonschema

from .exceptions import ConfigError
from .experiments import EXPERIMENT_KINDS, jsonable, run_experiment

DETERMINISTIC_ENV = "RANKSCAPE_DETERMINISTIC"
DEFAULT_OUTDIR = "runs"

_HELP = {
    "solve_full": "proximal-gradient solve of the nuclear-norm regularized problem",
    "solve_lora": "factored descent with weight decay from one initialization",
    "estimate_constants": "Monte-Carlo curvature constants around the reference minimizer",
    "classify": "run, certify, and classify one factored endpoint",
    "sweep_lambda": "regularized minimizer rank across a lambda grid",
    "sweep_init": "factored runs across initializations, each endpoint classified",
    "rank_dynamics": "minibatch run plus the trajectory-rank audit",
}


@lru_cache(maxsize=1)
def config_schema() -> dict:
    with resources.files("rankscape").joinpath("config_schema.json").open("rb") as fh:
        return json.load(fh)


def load_config(path):
    """Parse a TOML config; returns (dict, raw bytes for the copy)."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        return tomllib.loads(raw.decode("utf-8")), raw
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc


def validate_config(cfg: dict) -> None:
    """Schema-validate a config dict; ConfigError carries all findings."""
    validator = jsonschema.Draft202012Validator(config_schema())
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        exc = ConfigError(f"config failed schema validation ({len(errors)} error(s))")
        exc.details = [
            {"path": "/".join(str(p) for p in e.absolute_path), "message": e.message}
            for e in errors
        ]
        raise exc


def apply_seed_override(cfg: dict, seed) -> dict:
    """Route a --seed override into every seeded table present.

    The planted instance is fully pinned, so its objective seed is left
    alone; solver and estimation seeds are overridden when their tables
    exist."""
    if seed is None:
        return cfg
    cfg = copy.deepcopy(cfg)
    obj = cfg.get("objective", {})
    if obj.get("generator") != "planted_generic":
        obj["seed"] = int(seed)
    if "solver" in cfg:
        cfg["solver"]["seed"] = int(seed)
    if "estimation" in cfg:
        cfg["estimation"]["seed"] = int(seed)
    return cfg


def config_hash(cfg: dict) -> str:
    """Deterministic short hash of the resolved config."""
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:12]


def _jobs(requested: int) -> int:
    flag = os.environ.get(DETERMINISTIC_ENV, "").strip().lower()
    if flag in ("1", "true", "yes", "on"):
        return 1
    return max(1, int(requested))


def _report_seed(cfg: dict):
    seed = cfg.get("objective", {}).get("seed")
    if seed is None:
        seed = cfg.get("solver", {}).get("seed", 0)
    return seed


def _emit_error(kind: str, exc: BaseException) -> None:
    payload = {"error": kind, "type": type(exc).__name__, "message": str(exc)}
    details = getattr(exc, "details", None)
    if details:
        payload["details"] = details
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rankscape",
        description="Low-rank factorized training and landscape certification experiments.",
    )
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="experiment")
    for kind in EXPERIMENT_KINDS:
        sp = sub.add_parser(kind, help=_HELP[kind])
        sp.add_argument("--config", required=True, help="TOML experiment config")
        sp.add_argument("--outdir", default=None, help="output root (default: config outdir or ./runs)")
        sp.add_argument("--jobs", type=int, default=1, help="max concurrent sweep points")
        sp.add_argument("--seed", type=int, default=None, help="override the config seeds")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg, raw = load_config(args.config)
        validate_config(cfg)
        if cfg["experiment"] != args.experiment:
            raise ConfigError(
                f"config declares experiment {cfg['experiment']!r} "
                f"but the {args.experiment!r} subcommand was invoked"
            )
        cfg = apply_seed_override(cfg, args.seed)
    except ConfigError as exc:
        _emit_error("config", exc)
        return 2

    try:
        outdir = Path(args.outdir or cfg.get("outdir", DEFAULT_OUTDIR))
        h = config_hash(cfg)
        run_dir = outdir / args.experiment / h
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "config.toml").write_bytes(raw)
        results = run_experiment(cfg, run_dir, jobs=_jobs(args.jobs))
        report = {
            "experiment": args.experiment,
            "config_hash": h,
            "seed": _report_seed(cfg),
            "config": cfg,
            "results": results,
        }
        (run_dir / "report.json").write_text(
            json.dumps(jsonable(report), sort_keys=True, indent=2) + "\n"
        )
        print(run_dir)
        return 0
    except ConfigError as exc:
        _emit_error("config", exc)
        return 2
    except Exception as exc:  # noqa: BLE001 - boundary: report and exit 3
        _emit_error("runtime", exc)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
