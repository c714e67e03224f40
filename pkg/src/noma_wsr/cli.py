"""Command-line entry point: ``noma-wsr {solve,generate,experiment}``.

Exit codes: 0 success, 1 input error, 2 solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import __version__
from .channel import ChannelConfig, ConfigError, generate_instance
from .estimators import check_instance
from .experiments import EXPERIMENTS, ExperimentSpec, SpecError, run_experiment
from .model import InstanceError
from .multi_carrier import exhaustive_oracle, ftpc, jspa, mcpc

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED = 0, 1, 2
SEED_ENV = "NOMA_WSR_SEED"


def _seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise InstanceError(f"{SEED_ENV}: not an integer ({env!r})") from None


def _channel(args, seed: int) -> ChannelConfig:
    data = {}
    if getattr(args, "config", None):
        data = ChannelConfig.from_file(args.config).as_dict()
    data["seed"] = seed
    if getattr(args, "N", None) is not None:
        data["N"] = args.N
    return ChannelConfig.from_dict(data)


def _load_instance(args):
    if args.instance:
        return check_instance(Path(args.instance), args.M)
    cfg = _channel(args, _seed(args))
    return generate_instance(cfg, args.K, args.M or 1, substream=args.substream)


def _emit(text: str, out):
    if out:
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def cmd_solve(args) -> int:
    inst = _load_instance(args)
    if args.solver == "jspa":
        report = jspa(inst, epsilon=args.epsilon)
    elif args.solver == "mcpc":
        if args.assignment:
            text = args.assignment
            assignment = json.loads(Path(text).read_text() if Path(text).exists() else text)
        else:
            # default selection: the FTPC users on each subcarrier
            assignment = ftpc(inst).assignment
        report = mcpc(inst, assignment, epsilon=args.epsilon)
    elif args.solver == "ftpc":
        report = ftpc(inst)
    else:
        report = exhaustive_oracle(inst)
    out = {"version": __version__, "K": inst.K, "N": inst.N, "M": inst.M}
    out.update(report.to_dict(include_trace=args.trace))
    if args.oracle:
        best = report if args.solver == "oracle" else exhaustive_oracle(inst)
        out["oracle"] = {
            "wsr": best.wsr,
            "gap": best.wsr - report.wsr,
            "relative_gap": (best.wsr - report.wsr) / best.wsr if best.wsr > 0 else 0.0,
        }
    _emit(json.dumps(out, indent=2, sort_keys=True), args.out)
    return EXIT_OK if report.converged else EXIT_NONCONVERGED


def cmd_generate(args) -> int:
    inst = _load_instance(args)
    _emit(inst.to_json(), args.out)
    return EXIT_OK


def cmd_experiment(args) -> int:
    channel = ChannelConfig.from_file(args.config).as_dict() if args.config else {}
    channel.pop("seed", None)
    channel.pop("N", None)
    spec = ExperimentSpec(
        experiment=args.experiment,
        K=args.K,
        M=args.M,
        seeds=args.seeds,
        epsilon=args.epsilon,
        solvers=args.solver,
        out=args.out or f"{args.experiment}.csv",
        seed=_seed(args),
        N=args.N,
        T=args.T,
        jobs=args.jobs,
        channel=channel,
    )
    result = run_experiment(spec)
    for key, path in result["files"].items():
        print(f"{key}: {path}")
    if result["failures"]:
        print(f"{result['failures']} per-seed failure(s) recorded", file=sys.stderr)
    return EXIT_OK


def _k_values(text: str) -> list[int]:
    """``5,10,20`` or ``5:30:5`` (inclusive range)."""
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        start, stop = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1
        return list(range(start, stop + 1, step))
    return [int(p) for p in text.split(",") if p]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noma-wsr", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def instance_flags(p):
        p.add_argument("--instance", help="instance JSON file; otherwise one is generated")
        p.add_argument("--K", type=int, default=5, help="users when generating (default 5)")
        p.add_argument("--N", type=int, default=None, help="subcarriers when generating (default 10)")
        p.add_argument("--M", type=int, default=None, help="max users per subcarrier")
        p.add_argument("--seed", type=int, default=None, help=f"rng seed (fallback ${SEED_ENV}, then 0)")
        p.add_argument("--substream", type=int, default=0, help="instance index within the seed")
        p.add_argument("--config", help="channel config (.json or .toml)")
        p.add_argument("--out", help="write to this file instead of stdout")

    p = sub.add_parser("solve", help="solve one instance and print a JSON report")
    instance_flags(p)
    p.add_argument("--solver", choices=["jspa", "mcpc", "ftpc", "oracle"], default="jspa")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--assignment", help="mcpc user lists per subcarrier (JSON text or file)")
    p.add_argument("--oracle", action="store_true", help="also report the exhaustive optimum and gap")
    p.add_argument("--trace", action="store_true", help="include the per-iteration budget trace")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("generate", help="draw a random instance and write it as JSON")
    instance_flags(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("experiment", help="run an experiment grid and write CSV files")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--K", type=_k_values, default=None, help="e.g. 5,10,20 or 5:30:5")
    p.add_argument("--M", type=_k_values, default=None, help="e.g. 1,2,3")
    p.add_argument("--N", type=int, default=None)
    p.add_argument("--seeds", type=int, default=200, help="instances per point (default 200)")
    p.add_argument("--seed", type=int, default=None, help=f"rng seed (fallback ${SEED_ENV}, then 0)")
    p.add_argument("--epsilon", type=float, default=1e-4)
    p.add_argument("--solver", action="append", choices=["jspa", "ftpc"], help="repeatable")
    p.add_argument("--T", type=int, default=20, help="slots per frame (pf-frame)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--config", help="channel config (.json or .toml)")
    p.add_argument("--out", help="points CSV path (siblings get _seeds, _summary, _frames)")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InstanceError, ConfigError, SpecError, json.JSONDecodeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
