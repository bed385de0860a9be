"""Command-line entry point: ``hsbnn <subcommand> ...``.

Exit codes: 0 success, 2 configuration or input error, 3 numerical fault.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataError, read_table, toy_sine
from .evaluation import evaluate
from .experiment import (
    CONFIG_KEYS,
    ConfigError,
    dump_json,
    load_config,
    load_state,
    make_config,
    prior_sample_functions,
    report_dir,
    run_experiment,
    save_state,
)
from .gradients import check_elbo_gradients
from .model import NetworkSpec, TrainingFault
from .pruning import PruneConfig, apply_prune, prune_report
from .trainer import TrainConfig, init_state, substream
from .variational import FAMILIES, draw_noise

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3

log = logging.getLogger("hsbnn")

# flags that mirror TrainConfig / PruneConfig field names
MIRRORED = (
    "learning_rate",
    "batch_size",
    "iterations",
    "mc_samples",
    "seed",
    "unit_norm_projection",
    "delta",
    "p0",
)


def _add_mirrored(p: argparse.ArgumentParser, names=MIRRORED) -> None:
    for name in names:
        p.add_argument(f"--{name}", f"--{name.replace('_', '-')}", dest=name, default=None, metavar="VALUE")


def _overrides(args) -> dict:
    out = {}
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    for name in MIRRORED:
        v = getattr(args, name, None)
        if v is not None:
            out[name] = str(v)
    return out


def cmd_train(args) -> int:
    overrides = _overrides(args)
    cfg = load_config(args.config, overrides) if args.config else make_config(overrides)
    out = Path(args.out) if args.out else report_dir(cfg)
    reports, agg = run_experiment(cfg, out)
    print(dump_json(agg), end="")
    failures = [r["failure"] for r in reports if r["failure"]]
    if not failures:
        return EXIT_OK
    return EXIT_NUMERICAL if any(f["kind"] == "numerical" for f in failures) else EXIT_CONFIG


def cmd_evaluate(args) -> int:
    post, stats = load_state(args.state)
    table = read_table(args.data, args.delimiter, args.header)
    x, y = table[:, :-1], table[:, -1]
    if stats is not None:
        x = stats.transform_x(x)
    rmse, ll = evaluate(post, x, y, stats, args.samples, substream(args.seed, "eval"))
    print(dump_json({"rmse": rmse, "log_likelihood": ll, "n": int(len(y))}), end="")
    return EXIT_OK


def cmd_prune(args) -> int:
    post, stats = load_state(args.state)
    cfg = PruneConfig(float(args.delta or 1e-3), float(args.p0 or 0.9))
    rep = prune_report(post, cfg, args.samples, substream(args.seed, "prune"))
    pruned = apply_prune(post, rep)
    out = Path(args.out) if args.out else Path(args.state).with_name(Path(args.state).stem + "_pruned.npz")
    save_state(out, pruned, stats)
    text = dump_json(rep.to_dict())
    if args.report:
        Path(args.report).write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_prior_samples(args) -> int:
    widths = tuple(int(w) for w in args.widths.split(","))
    samples = prior_sample_functions(widths, args.count, args.seed, np.linspace(args.low, args.high, args.points))
    text = samples.table()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_toy_gen(args) -> int:
    x, y = toy_sine(args.n, substream(args.seed, "data"), args.noise_std, (args.low, args.high))
    lines = [f"{a:.17g},{b:.17g}" for a, b in zip(x[:, 0], y)]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_check_gradients(args) -> int:
    families = FAMILIES if args.family == "all" else (args.family,)
    widths = tuple(int(w) for w in args.widths.split(","))
    rng = np.random.default_rng(args.seed)
    x = rng.normal(size=(args.batch, widths[0]))
    y = rng.normal(size=(args.batch, widths[-1]))
    ok = True
    summary = {}
    for fam in families:
        spec = NetworkSpec(widths, prior=args.prior)
        state = init_state(spec, fam, TrainConfig(seed=args.seed))
        noise = draw_noise(state.posterior, args.batch, 1, rng)
        rep = check_elbo_gradients(state.posterior, x, y, noise, args.batch)
        summary[fam] = {"max_rel_error": rep.max_rel_error, "mean_rel_error": rep.mean_rel_error, "failing": len(rep.failing)}
        for line in rep.describe_failures():
            log.error("%s: %s", fam, line)
        ok = ok and rep.ok
    print(dump_json(summary), end="")
    return EXIT_OK if ok else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hsbnn", description="Regularized horseshoe BNNs with structured VI")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the experiment protocol and write reports")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help=f"override a config key ({', '.join(sorted(CONFIG_KEYS))})")
    p.add_argument("--out", help="report directory (default: $HSBNN_REPORT_DIR or the config value)")
    _add_mirrored(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="RMSE and predictive log-likelihood of a saved state")
    p.add_argument("--state", required=True)
    p.add_argument("--data", required=True, help="table whose last column is the target")
    p.add_argument("--delimiter", default=None)
    p.add_argument("--header", action="store_true")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("prune", help="apply the scale-threshold rule to a saved state")
    p.add_argument("--state", required=True)
    p.add_argument("--out", help="pruned state path")
    p.add_argument("--report", help="write the prune report JSON here too")
    p.add_argument("--samples", type=int, default=200, help="Monte-Carlo draws for weight norms")
    p.add_argument("--seed", type=int, default=0)
    _add_mirrored(p, ("delta", "p0"))
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("prior-samples", help="matched HS / reg-HS prior function draws as a table")
    p.add_argument("--widths", default="50,500,5000")
    p.add_argument("--count", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--low", type=float, default=-3.0)
    p.add_argument("--high", type=float, default=3.0)
    p.add_argument("--points", type=int, default=201)
    p.add_argument("--out")
    p.set_defaults(func=cmd_prior_samples)

    p = sub.add_parser("toy-gen", help="write y = sin(x) + noise as CSV")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise-std", type=float, default=0.1)
    p.add_argument("--low", type=float, default=-4.0)
    p.add_argument("--high", type=float, default=4.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_toy_gen)

    p = sub.add_parser("check-gradients", help="finite-difference certification of the ELBO gradient")
    p.add_argument("--family", default="all", choices=("all", *FAMILIES))
    p.add_argument("--widths", default="1,3,1")
    p.add_argument("--prior", default="reg_hs")
    p.add_argument("--batch", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_check_gradients)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, DataError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TrainingFault, FloatingPointError) as exc:
        print(f"numerical fault: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
