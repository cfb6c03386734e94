"""``specmtm`` command line: pretrain, finetune, probe, diagnose, verify."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import yaml

from . import train
from .config import ConfigError, RunConfig, load_config
from .engine import set_threads
from .verify import run_all

log = logging.getLogger("specmtm")

NEEDS_CHECKPOINT = ("finetune", "probe", "diagnose")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="specmtm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("pretrain", "finetune", "probe", "diagnose", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="YAML run config; omitted keys keep their defaults")
        p.add_argument("--seed", type=int, help="master seed for init, masking, shuffling and splits")
        p.add_argument("--out", type=Path, help="run directory")
        p.add_argument("--precision", choices=("f32", "f64"))
        p.add_argument("-v", "--verbose", action="store_true")
        if name in NEEDS_CHECKPOINT:
            p.add_argument("--checkpoint", type=Path, required=True, help="checkpoint from a pretrain run")
        if name == "verify":
            p.add_argument("--quick", action="store_true", help="fewer random instances")
    return parser


def _write_resolved(out: Path, cfg: RunConfig, overrides: list) -> list[Path]:
    out.mkdir(parents=True, exist_ok=True)
    resolved = out / "config.resolved.yaml"
    resolved.write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
    log_path = out / "overrides.log"
    log_path.write_text("".join(f"{k}: {old!r} -> {new!r}\n" for k, old, new in overrides))
    return [resolved, log_path]


def run(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    set_threads()

    if args.command == "verify":
        failed = 0
        for r in run_all(quick=args.quick):
            print(r.line())
            failed += not r.passed
        print(f"{failed} check(s) failed" if failed else "all checks passed")
        return 1 if failed else 0

    checkpoint = getattr(args, "checkpoint", None)
    if checkpoint is not None and not checkpoint.is_file():
        print(f"error: checkpoint {checkpoint} does not exist; run `specmtm pretrain --out DIR` first "
              f"and pass DIR/checkpoint.ckpt", file=sys.stderr)
        return 2
    if args.config is not None and not args.config.is_file():
        print(f"error: config file {args.config} not found", file=sys.stderr)
        return 2
    try:
        cfg, overrides = load_config(args.config, seed=args.seed,
                                     out=str(args.out) if args.out else None, precision=args.precision)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    out = Path(cfg.out)
    files = _write_resolved(out, cfg, overrides)
    try:
        if args.command == "pretrain":
            res = train.pretrain(cfg, out)
            print(f"loss {res['losses'][0]:.6g} -> {res['losses'][-1]:.6g}; checkpoint {res['checkpoint']}")
        elif args.command == "probe":
            res = train.probe(cfg, checkpoint, out)
            print(f"probe test accuracy {res['metrics']['test_accuracy']:.4f}")
        elif args.command == "finetune":
            res = train.finetune(cfg, checkpoint, out)
            print(f"finetune test accuracy {res['metrics']['test_accuracy']:.4f}")
        else:
            res = train.diagnose(cfg, checkpoint, out)
            print(f"interaction ranks {res['report'].ranks}; report in {out / 'diag'}")
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    manifest = train.write_manifest(out, files + list(res["files"]))
    log.info("manifest %s", manifest)
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
