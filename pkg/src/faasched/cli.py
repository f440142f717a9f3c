"""Command line entry point: calibrate, run, train, eval, report."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .agent import A2CAgent
from .experiment import (Calibration, ConfigError, calibrate, ensure_calibration, evaluate, load_config,
                         parse_controller, read_records, run_experiment, train, validate, write_outputs)
from .metrics import SUMMARY_COLUMNS, summarize
from .workload import InvalidParameter

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


def _calibration(cfg, out: Path) -> Calibration:
    path = Path(cfg.calibration.file) if cfg.calibration.file else out / "calibration.json"
    if path.exists():
        cal = Calibration.load(path)
        if all(w in cal.apps for w in cfg.workloads):
            return cal
    cfg.calibration.file = ""
    cal = ensure_calibration(cfg, cfg.specs())
    out.mkdir(parents=True, exist_ok=True)
    cal.save(path)
    return cal


def _print_summary(rows):
    print(",".join(SUMMARY_COLUMNS))
    for r in rows:
        print(",".join(str(x) for x in r.row()))


def cmd_calibrate(cfg, args, out: Path) -> int:
    cal = calibrate(cfg)
    out.mkdir(parents=True, exist_ok=True)
    path = Path(cfg.calibration.file) if cfg.calibration.file else out / "calibration.json"
    cal.save(path)
    print(f"calibration written to {path}")
    return EXIT_OK


def cmd_run(cfg, args, out: Path) -> int:
    cal = _calibration(cfg, out)
    agent = A2CAgent.load(args.checkpoint, cfg.agent) if args.checkpoint else None
    res = run_experiment(cfg, cal, agent=agent)
    write_outputs(res, out)
    _print_summary(res.summary)
    return EXIT_RUNTIME if res.metadata["violations"] and parse_controller(cfg.controller)[0] != "faasched" \
        else EXIT_OK


def cmd_train(cfg, args, out: Path) -> int:
    cal = _calibration(cfg, out)
    agent, res = train(cfg, cal)
    write_outputs(res, out, prefix="train_")
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "agent.npz"
    agent.save(ckpt)
    print(f"trained {agent.steps} updates ({agent.skipped_updates} skipped); checkpoint {ckpt}")
    return EXIT_OK


def cmd_eval(cfg, args, out: Path) -> int:
    ckpt = Path(args.checkpoint) if args.checkpoint else out / "agent.npz"
    agent = A2CAgent.load(ckpt, cfg.agent)
    cal = _calibration(cfg, out)
    mixes = cfg.eval_workloads or ["+".join(cfg.workloads)]
    for mix, res in zip(mixes, evaluate(cfg, cal, agent)):
        tag = mix.replace("/", "+")
        write_outputs(res, out, prefix=f"eval_{tag}_")
        print(f"# {tag}")
        _print_summary(res.summary)
    return EXIT_OK


def cmd_report(cfg, args, out: Path) -> int:
    cal_path = out / "calibration.json"
    iso = Calibration.load(cal_path).isolated_stats() if cal_path.exists() else None
    files = sorted(out.glob("*requests.csv"))
    if not files:
        print(f"no request files under {out}", file=sys.stderr)
        return EXIT_IO
    for f in files:
        print(f"# {f.name}")
        _print_summary(summarize(read_records(f), iso))
    return EXIT_OK


COMMANDS = {"calibrate": cmd_calibrate, "run": cmd_run, "train": cmd_train, "eval": cmd_eval,
            "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faasched", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="INI file with [experiment], [host], [agent], [calibration]")
    p.add_argument("--seed", type=int)
    p.add_argument("--controller", help="faasched, lass, rid, fp, si, sd or partition(m,n)")
    p.add_argument("--out", help="output directory")
    p.add_argument("--checkpoint", help="agent parameter file")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.controller:
            cfg.controller = args.controller
        validate(cfg)
        out = Path(args.out or cfg.out)
        return COMMANDS[args.command](cfg, args, out)
    except (ConfigError, InvalidParameter) as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (AssertionError, RuntimeError) as e:
        print(f"runtime violation: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except (OSError, csv.Error, KeyError, ValueError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
