"""Command line entry point: ``python -m stochrb <subcommand> --config PATH``.

Exit codes: 0 success, 2 validation or input errors, 3 numerical failure
(the latest checkpoint is left in place).
"""
import argparse
import json
import os
import sys

from .boussinesq import NumericalError
from .config import ValidationError, build_spec, load_config
from .coupling import NotRepresentable
from .outputs import CheckpointError

SUBCOMMANDS = {
    "run": None,  # kind taken from the config (run_finite_pr or run_infinite_pr)
    "resume": None,
    "couple": "couple",
    "nusselt-sweep": "nusselt_sweep",
    "verify-comparison": "verify_comparison",
    "martingale-test": "martingale_test",
    "report": None,
}

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL = 0, 2, 3


def build_parser():
    p = argparse.ArgumentParser(prog="stochrb", description="Stochastic Rayleigh-Benard experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="flat key = value configuration file")
        sp.add_argument("--output", help="output directory (overrides output_dir)")
        sp.add_argument("--seed", type=int, help="base seed, unsigned 64-bit")
        sp.add_argument("--members", type=int, help="ensemble size")
        sp.add_argument("--threads", type=int, help="worker threads for ensemble members")
        sp.add_argument("--stop-after", type=int, default=None,
                        help="checkpoint and stop after this many steps")
    return p


def _spec_from_args(args):
    values = load_config(args.config)
    kind = SUBCOMMANDS.get(args.command)
    if kind is not None:
        if values.get("kind", kind) != kind:
            raise ValidationError([f"config kind {values['kind']!r} does not match "
                                   f"subcommand {args.command!r}"])
        values["kind"] = kind
    elif args.command == "run" and values.get("kind") not in (None, "run_finite_pr",
                                                              "run_infinite_pr"):
        raise ValidationError([f"'run' expects kind run_finite_pr or run_infinite_pr, "
                               f"got {values.get('kind')!r}"])
    overrides = {"output_dir": args.output, "seed": args.seed, "members": args.members,
                 "threads": args.threads}
    return build_spec(values, overrides)


def report(out_dir, stream=sys.stdout):
    path = os.path.join(out_dir, "summary.json")
    with open(path) as fh:
        summary = json.load(fh)
    stream.write(f"{path}\n")
    for k, v in sorted(summary.items()):
        if k in ("members", "points"):
            stream.write(f"  {k}: {len(v)} entries\n")
        else:
            stream.write(f"  {k}: {json.dumps(v)}\n")
    return summary


def main(argv=None):
    from .experiments import run_experiment
    args = build_parser().parse_args(argv)
    try:
        spec = _spec_from_args(args)
        out = spec.output_dir
        if args.command == "report":
            report(out)
            return EXIT_OK
        summary = run_experiment(spec, out, stop_after=args.stop_after,
                                 resume=args.command == "resume")
    except (ValidationError, NotRepresentable, CheckpointError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    if summary is None:
        print(f"stopped after {args.stop_after} steps; checkpoint in {os.path.join(out, 'checkpoint')}")
    else:
        print(f"wrote {os.path.join(out, 'summary.json')}")
    return EXIT_OK
