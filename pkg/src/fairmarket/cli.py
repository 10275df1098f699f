"""``fairmarket`` command line: train, simulate, sensitivity, ingest, print-config.

Exit codes: 0 success, 2 configuration/input error, 3 I/O error, 4 runtime
invariant violation (including diverged training).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .config import PRESETS, ScenarioConfig, load_config
from .errors import ConfigError, InvariantError, TrainingDivergedError
from .ingest import ingest, parse_column_map
from .learner import Trainer, check_compatible, load_policies
from .metrics import RADAR_AXES, run_report, sensitivity

log = logging.getLogger("fairmarket")

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_INVARIANT = 0, 2, 3, 4

COUNTERFACTUALS = {
    "pv_plus20": {"pv_scale": 1.2},
    "pv_minus20": {"pv_scale": 0.8},
    "load_plus10": {"load_scale": 1.1},
    "load_minus10": {"load_scale": 0.9},
}

_RESERVED = set(vars(logging.LogRecord("", 0, "", 0, "", (), None))) | {"message", "asctime"}


class JsonFormatter(logging.Formatter):
    def format(self, record: logging.LogRecord) -> str:
        out = {"ts": round(record.created, 3), "level": record.levelname.lower(),
               "logger": record.name, "msg": record.getMessage()}
        for k, v in record.__dict__.items():
            if k not in _RESERVED and not k.startswith("_"):
                out[k] = v
        return json.dumps(out, default=str)


def setup_logging(quiet: bool, stream=None) -> None:
    root = logging.getLogger()
    for h in list(root.handlers):
        if getattr(h, "_fairmarket", False):
            root.removeHandler(h)
    handler = logging.StreamHandler(stream or sys.stderr)
    handler._fairmarket = True
    if quiet:
        handler.setFormatter(logging.Formatter("%(message)s"))
        handler.setLevel(logging.WARNING)
    else:
        handler.setFormatter(JsonFormatter())
        handler.setLevel(logging.INFO)
    root.addHandler(handler)
    root.setLevel(logging.INFO)


def _summary(args, text: str) -> None:
    """Human-readable one-liner, printed in quiet mode only."""
    if args.quiet:
        print(text)


def physical_cores() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


# -- helpers -------------------------------------------------------------------------

def _config(args) -> ScenarioConfig:
    return load_config(args.config, preset=args.preset, overrides=args.set or ())


def _base_dir(args):
    return Path(args.config).parent if args.config else None


def _prepare_out(path, force: bool) -> Path:
    out = Path(path)
    if out.exists() and (not out.is_dir() or any(out.iterdir())):
        if not force:
            raise FileExistsError(f"{out} exists and is not empty (use --force to overwrite)")
        if out.is_dir():
            shutil.rmtree(out)
        else:
            out.unlink()
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_checkpoints(path, env_config):
    ckpt = Path(path)
    if not ckpt.is_dir():
        raise FileNotFoundError(f"checkpoint directory {ckpt} not found")
    policies = load_policies(ckpt, env_config)
    check_compatible(env_config, policies)
    return policies


# -- commands ----------------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    env_cfg = cfg.env_config(_base_dir(args))
    shaping = cfg.shaping_config()
    critic = cfg.make_critic()
    out = _prepare_out(args.out, args.force)
    (out / "config.yaml").write_text(cfg.dump())
    trainer = Trainer(env_cfg, shaping, cfg.train, critic)
    if args.resume:
        trainer.restore(args.resume)
    t0 = time.time()
    with open(out / "curves.jsonl", "w") as fh:
        def on_episode(records):
            for r in records:
                fh.write(json.dumps(r) + "\n")
            e = records[0]["episode"]
            if (e + 1) % max(1, cfg.train.total_episodes // 20) == 0:
                log.info("episode", extra={"event": "episode", "episode": e + 1,
                                           "ftg": records[0]["ftg"], "fbs": records[0]["fbs"],
                                           "fpp": records[0]["fpp"]})
        trainer.train(on_episode=on_episode, checkpoint_dir=out / "checkpoints")
    fallbacks = getattr(critic, "fallbacks", 0)
    log.info("training finished", extra={"event": "train_done", "episodes": trainer.episode,
                                         "seconds": round(time.time() - t0, 2),
                                         "critic_fallbacks": fallbacks})
    _summary(args, f"trained {trainer.episode} episodes in {time.time() - t0:.1f}s; "
                   f"checkpoints in {out / 'checkpoints' / 'final'}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args)
    env_cfg = cfg.env_config(_base_dir(args))
    policies = _load_checkpoints(args.checkpoints, env_cfg)
    days = args.days or cfg.horizon_days
    out = _prepare_out(args.out, args.force)
    report, ledgers = run_report(env_cfg, policies, cfg.eval_seed, days, cfg.make_critic())
    report.write(out, ledgers)
    log.info("simulation finished", extra={"event": "simulate_done", "slots": report.slots,
                                           "peer_share": report.peer_share})
    share = "n/a" if report.peer_share is None else f"{report.peer_share:.3f}"
    _summary(args, f"{report.slots} slots, peer {report.peer_kwh:.1f} kWh, grid "
                   f"{report.grid_kwh:.1f} kWh, peer share {share}")
    return EXIT_OK


def _sensitivity_job(job):
    env_cfg, policies, scales, seed, days, baseline = job
    return sensitivity(env_cfg, policies, scales, seed, days, baseline)


def cmd_sensitivity(args) -> int:
    cfg = _config(args)
    env_cfg = cfg.env_config(_base_dir(args))
    policies = _load_checkpoints(args.checkpoints, env_cfg)
    days = args.days or cfg.horizon_days
    out = _prepare_out(args.out, args.force)
    if args.identity_only:
        scenarios = {"identity": {"pv_scale": 1.0, "load_scale": 1.0}}
    else:
        scenarios = COUNTERFACTUALS
    baseline, ledgers = run_report(env_cfg, policies, cfg.eval_seed, days)
    jobs = [(env_cfg, policies, scales, cfg.eval_seed, days, baseline)
            for scales in scenarios.values()]
    workers = min(args.workers or physical_cores(), len(jobs))
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_sensitivity_job, jobs))
    else:
        results = [_sensitivity_job(j) for j in jobs]
    if not args.identity_only:
        baseline.write(out / "baseline", ledgers)
    with open(out / "deltas.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scenario", "axis", "baseline", "scenario_value", "ratio"])
        for name, res in zip(scenarios, results):
            res.scenario.write(out / name)
            res.write_radar_csv(out / name / "radar.csv")
            b, s, r = res.baseline.axes(), res.scenario.axes(), res.ratios()
            for axis in RADAR_AXES + ("grid_import_kwh",):
                w.writerow([name, axis, b[axis], s[axis], "" if r[axis] is None else r[axis]])
            log.info("counterfactual", extra={"event": "sensitivity", "scenario": name,
                                              "ratios": r})
    _summary(args, f"{len(results)} counterfactual(s) written to {out}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    mapping = parse_column_map(args.map)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise FileExistsError(f"{out} exists (use --force to overwrite)")
    tmp = out.with_name(out.name + ".partial")
    try:
        n = ingest(args.raw, tmp, mapping)
        tmp.replace(out)
    finally:
        if tmp.exists():
            tmp.unlink()
    log.info("ingest finished", extra={"event": "ingest_done", "rows": n})
    _summary(args, f"wrote {n} hourly rows to {out}")
    return EXIT_OK


def cmd_print_config(args) -> int:
    cfg = _config(args)
    sys.stdout.write(cfg.dump())
    return EXIT_OK


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fairmarket", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--quiet", action="store_true", help="human summary instead of JSON logs")
    common.add_argument("--workers", type=int, default=None,
                        help="worker processes (default: available cores)")
    cfg = argparse.ArgumentParser(add_help=False)
    cfg.add_argument("--config", help="scenario YAML file")
    cfg.add_argument("--preset", choices=sorted(PRESETS), help="start from a built-in scenario")
    cfg.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override a config value (dotted path, YAML value); repeatable")
    force = argparse.ArgumentParser(add_help=False)
    force.add_argument("--force", action="store_true", help="overwrite a non-empty output")

    sub = p.add_subparsers(dest="command", required=True)
    t = sub.add_parser("train", parents=[common, cfg, force], help="train prosumer policies")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint directory to resume from")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("simulate", parents=[common, cfg, force], help="evaluate frozen policies")
    s.add_argument("--checkpoints", required=True)
    s.add_argument("--days", type=int, default=None, help="horizon (default: config)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    v = sub.add_parser("sensitivity", parents=[common, cfg, force],
                       help="PV and load counterfactuals with frozen policies")
    v.add_argument("--checkpoints", required=True)
    v.add_argument("--days", type=int, default=None)
    v.add_argument("--out", required=True)
    v.add_argument("--identity-only", action="store_true",
                   help="run only the unscaled scenario (ratios are 1.0)")
    v.set_defaults(func=cmd_sensitivity)

    i = sub.add_parser("ingest", parents=[common, force], help="15-minute CSV to hourly profiles")
    i.add_argument("raw")
    i.add_argument("out")
    i.add_argument("--map", action="append", metavar="OURS=THEIRS",
                   help="map a required column to the raw file's header")
    i.set_defaults(func=cmd_ingest)

    c = sub.add_parser("print-config", parents=[common, cfg], help="print the effective config")
    c.set_defaults(func=cmd_print_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.quiet)
    if args.workers is not None and args.workers < 1:
        log.error("--workers must be >= 1", extra={"event": "error", "kind": "config"})
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error(str(exc), extra={"event": "error", "kind": "config"})
        return EXIT_CONFIG
    except (InvariantError, TrainingDivergedError) as exc:
        log.error(str(exc), extra={"event": "error", "kind": "invariant",
                                   "diagnostics": getattr(exc, "diagnostics", None)})
        return EXIT_INVARIANT
    except OSError as exc:
        log.error(str(exc), extra={"event": "error", "kind": "io"})
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
