"""Command-line entry point: ``merge-maddpg <command> ...``.

Exit codes: 0 success, 2 usage error, 3 config error, 4 I/O error,
5 numeric failure. Every failure prints one ``merge-maddpg: <kind>: <reason>``
line to stderr.
"""

import argparse
import json
import logging
import os
import sys
from importlib import resources

from . import harness, nn
from .config import ConfigError, RunConfig, ScenarioConfig
from .io import atomic_write_csv, read_csv

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 2, 3, 4, 5
DEMO_SCENARIOS = ("rear_end", "lateral", "eight_cav")
SEED_ENV = "MERGE_MADDPG_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser():
    p = _Parser(prog="merge-maddpg", description="MADDPG on-ramp merging: train, evaluate, export")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train agents from a JSON run config")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int)
    t.add_argument("--out")
    t.add_argument("--profile", choices=("paper", "reference"))

    e = sub.add_parser("eval", help="roll out a checkpoint on a scenario, write its trace")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--scenario", required=True, choices=DEMO_SCENARIOS)
    e.add_argument("--out", required=True)
    e.add_argument("--seed", type=int)
    e.add_argument("--source", type=int, default=0,
                   help="agent replicated when the vehicle count differs (default 0)")

    d = sub.add_parser("demo", help="eval with the bundled pretrained policy")
    d.add_argument("scenario", choices=DEMO_SCENARIOS)
    d.add_argument("--out")
    d.add_argument("--seed", type=int)

    x = sub.add_parser("experiment", help="multi-run experiments")
    xsub = x.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    sr = xsub.add_parser("speed-range", help="per-road speed min/avg/max over runs")
    sr.add_argument("--checkpoint", required=True)
    sr.add_argument("--runs", type=int, default=5)
    sr.add_argument("--out", required=True)
    sr.add_argument("--seed", type=int)
    sr.add_argument("--source", type=int, default=0)

    pd = sub.add_parser("plot-data", help="reshape a trace into a tidy plotting table")
    pd.add_argument("--trace", required=True)
    pd.add_argument("--kind", required=True, choices=harness.PLOT_KINDS)
    pd.add_argument("--out", required=True)
    return p


def resolve_seed(flag, default=0):
    if flag is not None:
        return flag
    env = os.environ.get(SEED_ENV)
    if env is None or env == "":
        return default
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"{SEED_ENV}={env!r} is not an integer") from None


def pretrained_dir():
    return str(resources.files("merge_maddpg") / "pretrained")


def scenario_for(checkpoint):
    """Scenario parameters saved next to a checkpoint, or the defaults."""
    for path in (os.path.join(checkpoint, "config.json"),
                 os.path.join(os.path.dirname(os.path.normpath(checkpoint)), "config.json")):
        if os.path.isfile(path):
            with open(path) as fh:
                try:
                    doc = json.load(fh)
                except json.JSONDecodeError as exc:
                    raise ConfigError(f"{path} is not valid JSON: {exc}") from None
            return RunConfig.from_dict(doc).scenario
    return ScenarioConfig()


def policies_for(docs, n_vehicles, source):
    if len(docs) == n_vehicles:
        if not all(isinstance(doc, dict) and "actor" in doc for doc in docs):
            raise nn.CheckpointError("agent checkpoint without an 'actor' network")
        return [nn.load_checkpoint(doc["actor"]) for doc in docs]
    return harness.transfer_policy(docs, n_vehicles, source=source)


def cmd_train(args):
    cfg = RunConfig.load(args.config, profile=args.profile)
    seed = resolve_seed(args.seed, cfg.seed)
    out = args.out or cfg.out_dir or os.path.join(
        "runs", f"{os.path.splitext(os.path.basename(args.config))[0]}-seed{seed}")
    cfg = RunConfig.from_dict({**cfg.to_dict(), "seed": seed, "out_dir": out},
                              profile=cfg.profile)
    result = harness.train(cfg)
    rec = result.record
    counts = " ".join(f"{k}={v}" for k, v in rec.cause_counts.items())
    print(f"trained {rec.episodes} episodes; best rolling100 {rec.best_rolling:.3f} "
          f"at episode {rec.best_episode}; {counts}; output {out}")


def _eval(checkpoint, scenario, out, seed, source):
    docs = harness.load_checkpoint_dir(checkpoint)
    cfg = scenario_for(checkpoint)
    n = len(harness.scenario_init(scenario, cfg, None).roads)
    trace = harness.evaluate(policies_for(docs, n, source), scenario, seed=seed, cfg=cfg)
    trace.write_csv(out)
    print(f"{scenario}: {trace.cause.value} after {trace.steps} steps; trace {out}")


def cmd_eval(args):
    _eval(args.checkpoint, args.scenario, args.out, resolve_seed(args.seed), args.source)


def cmd_demo(args):
    out = args.out or f"{args.scenario}_trace.csv"
    _eval(pretrained_dir(), args.scenario, out, resolve_seed(args.seed), 0)


def cmd_experiment(args):
    if args.runs < 1:
        raise UsageError("--runs must be >= 1")
    docs = harness.load_checkpoint_dir(args.checkpoint)
    cfg = scenario_for(args.checkpoint)
    n = len(harness.speed_range_init(cfg).roads)
    res = harness.speed_range_experiment(policies_for(docs, n, args.source), runs=args.runs,
                                         seed=resolve_seed(args.seed), cfg=cfg)
    res.write_csv(args.out)
    print(f"speed-range: {args.runs} runs, causes {res.causes}; table {args.out}")


def cmd_plot_data(args):
    header, rows = harness.plot_table(read_csv(args.trace), args.kind)
    atomic_write_csv(args.out, header, rows)
    print(f"{args.kind}: {len(rows)} rows; table {args.out}")


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "demo": cmd_demo,
            "experiment": cmd_experiment, "plot-data": cmd_plot_data}


def _fail(kind, message, code):
    message = " ".join(str(message).split())
    print(f"merge-maddpg: {kind}: {message}", file=sys.stderr)
    return code


def run_cli(argv=None):
    """Parse ``argv``, dispatch, and map failures onto exit codes."""
    try:
        args = build_parser().parse_args(argv)
        COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except (OSError, nn.CheckpointError) as exc:
        return _fail("io", exc, EXIT_IO)
    except harness.NumericError as exc:
        return _fail("numeric", exc, EXIT_NUMERIC)
    return EXIT_OK


def main():
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
