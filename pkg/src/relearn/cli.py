"""Command-line front end.

Exit codes: 0 pass, 2 config error, 3 divergence or stability abort,
4 failed thresholds or verification checks.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import experiments
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DivergenceError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3
EXIT_FAILED = 4

log = logging.getLogger("relearn")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n")


def _run(cfg: ExperimentConfig, args, drifting: bool) -> int:
    out_dir = Path(args.out)
    decimate = args.decimate or cfg.output["decimate"]
    csv_path = out_dir / cfg.output["csv"]
    summary_path = out_dir / cfg.output["summary"]
    summarize = experiments.summarize_drifting if drifting else experiments.summarize_static
    try:
        rec = experiments.simulate(cfg, drifting, log_every=int(cfg.output.get("log_every", 0)))
    except DivergenceError as exc:
        rec = exc.record
        experiments.write_csv(csv_path, rec, drifting, decimate)
        summary = summarize(cfg, rec)
        summary.update(status="diverged", passed=False)
        write_json(summary_path, summary)
        log.error("%s", exc)
        return EXIT_DIVERGENCE
    experiments.write_csv(csv_path, rec, drifting, decimate)
    summary = summarize(cfg, rec)
    write_json(summary_path, summary)
    print(f"{cfg.name}: {len(rec)} steps, csv {csv_path}, summary {summary_path}")
    if rec.abort_reason is not None:
        log.error("%s", rec.abort_reason)
        return EXIT_DIVERGENCE
    if summary["passed"] is False:
        failing = [k for k, ok in summary["checks"].items() if not ok]
        print("failed checks: " + ", ".join(failing))
        return EXIT_FAILED
    return EXIT_OK


def cmd_run_static(cfg: ExperimentConfig, args) -> int:
    return _run(cfg, args, drifting=False)


def cmd_run_drifting(cfg: ExperimentConfig, args) -> int:
    if not cfg.drifting:
        raise ConfigError("run-drifting needs a drift block in the config")
    return _run(cfg, args, drifting=True)


def cmd_verify(cfg: ExperimentConfig, args) -> int:
    report = experiments.run_verification(cfg)
    write_json(Path(args.out) / "verify.json", report)
    for check in report["checks"]:
        status = {True: "PASS", False: "FAIL", None: "SKIP"}[check["passed"]]
        print(f"{status} {check['name']}: value={check['value']} threshold={check['threshold']}"
              + (f" ({check['note']})" if "note" in check else ""))
    if not report["passed"]:
        print("failed checks: " + ", ".join(report["failed"]))
        return EXIT_FAILED
    return EXIT_OK


def cmd_init_gain(cfg: ExperimentConfig, args) -> int:
    result = experiments.init_gain(cfg)
    print(f"spectral radius on theta0: {result['rho_theta0']:.6g}")
    print(f"spectral radius on true plant: {result['rho_true']:.6g}")
    fragment = {"algo": {"k0": {"kind": "explicit", "value": result["k0"]}}}
    path = Path(args.out) / "k0.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(fragment, sort_keys=False))
    print(f"wrote {path}")
    if not result["passed"]:
        log.warning("K0 does not stabilize both the initial estimate and the true plant")
        return EXIT_FAILED
    return EXIT_OK


COMMANDS = {
    "run-static": cmd_run_static,
    "run-drifting": cmd_run_drifting,
    "verify": cmd_verify,
    "init-gain": cmd_init_gain,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relearn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="YAML config path or bundled name (aircraft_static, aircraft_drifting)")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--decimate", type=int, default=None,
                       help="write every k-th CSV row (summaries use all rows)")
        p.add_argument("--seed-override", type=int, default=None,
                       help="replace every seed in the config")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.decimate is not None and args.decimate < 1:
            raise ConfigError("--decimate must be a positive integer")
        cfg = load_config(args.config, args.seed_override)
        return COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
