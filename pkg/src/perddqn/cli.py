"""Command-line entry point: ``perddqn {train,eval,compare,gradcheck}``.

Exit codes: 0 success, 1 usage error, 2 runtime or numerical failure.
"""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import nn
from .gradcheck import run_gradcheck
from .harness import (
    COMPARE_EPISODES,
    ConfigError,
    NumericalError,
    compare,
    config_from,
    evaluate,
    resolve_map,
    summarize,
    train,
    write_compare_csv,
)
from .world import WorldError

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--map", help="map file or builtin name (open10, utrap)")
    p.add_argument("--algo", choices=["dqn", "ddqn"])
    p.add_argument("--replay", choices=["uniform", "per"])
    p.add_argument("--episodes", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--config", help="flat 'key = value' config file")
    p.add_argument("--out", help="output directory")
    p.add_argument("-q", "--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="perddqn", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("train", help="train one agent, write train.csv and params.bin")
    _common(p)

    p = sub.add_parser("eval", help="greedy evaluation of saved parameters")
    _common(p)
    p.add_argument("--params", required=True, help="parameter file from 'train'")
    p.add_argument("--n", type=int, help="number of start/goal pairs")
    p.add_argument("--eval-seed", type=int)

    p = sub.add_parser("compare", help="train and evaluate dqn, ddqn, dqn_per, ddqn_per")
    _common(p)
    p.add_argument("--n-eval", type=int, help="evaluation pairs per method (default 50)")
    p.add_argument("--eval-seed", type=int)
    p.add_argument("--jobs", type=int, default=1, help="variants trained in parallel processes")

    p = sub.add_parser("gradcheck", help="finite-difference check of backprop")
    p.add_argument("--nets", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=1e-4)
    return parser


def _run_config(args, **extra):
    overrides = {
        "map": args.map, "algo": args.algo, "replay": args.replay,
        "episodes": args.episodes, "seed": args.seed, "out": args.out, **extra,
    }
    # desk-scale default for the four-way comparison
    defaults = {"episodes": COMPARE_EPISODES} if args.command == "compare" else None
    return config_from(overrides, args.config, defaults)


def _cmd_train(args) -> int:
    cfg = _run_config(args)

    def progress(rec):
        if not args.quiet and (rec.episode + 1) % 50 == 0:
            print(f"episode {rec.episode + 1}/{cfg.episodes} reward {rec.cum_reward:.1f} "
                  f"{rec.outcome.value}", file=sys.stderr)

    out = Path(cfg.out)
    _, records = train(cfg, out, progress=progress)
    s = summarize(f"{cfg.algo.value}{'_per' if cfg.replay.value == 'per' else ''}", records)
    print(f"trained {len(records)} episodes; training success {s.success_rate:.1f}%; "
          f"wrote {out / 'train.csv'} and {out / 'params.bin'}")
    return EXIT_OK


def _cmd_eval(args) -> int:
    cfg = _run_config(args, eval_episodes=args.n, eval_seed=args.eval_seed)
    net = nn.load_params(Path(args.params).read_bytes())
    omap = resolve_map(cfg.map)
    summary, _ = evaluate(net, omap, cfg.eval_episodes, cfg.eval_seed, cfg.world_config(),
                          Path(args.params).stem)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_compare_csv(out / "eval.csv", [summary])
    print(",".join(summary.row()))
    return EXIT_OK


def _cmd_compare(args) -> int:
    cfg = _run_config(args, eval_episodes=args.n_eval, eval_seed=args.eval_seed)

    def progress(s):
        if not args.quiet:
            print(f"{s.method}: success {s.success_rate:.1f}%", file=sys.stderr)

    out = Path(cfg.out)
    summaries = compare(cfg, out_dir=out, progress=progress, jobs=args.jobs)
    print("method,success_rate,avg_time_s,avg_len_m")
    for s in summaries:
        print(",".join(s.row()))
    return EXIT_OK


def _cmd_gradcheck(args) -> int:
    res = run_gradcheck(n_networks=args.nets, seed=args.seed)
    status = "ok" if res.ok(args.tol) else "FAILED"
    print(f"gradcheck {status}: max relative error {res.max_rel_error:.3e} over "
          f"{res.n_entries} entries in {res.n_networks} networks (tol {args.tol:g})")
    return EXIT_OK if res.ok(args.tol) else EXIT_RUNTIME


COMMANDS = {"train": _cmd_train, "eval": _cmd_eval, "compare": _cmd_compare,
            "gradcheck": _cmd_gradcheck}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print(f"perddqn: error: {exc}", file=sys.stderr)
        print(parser.format_usage().strip(), file=sys.stderr)
        return EXIT_USAGE
    except (WorldError, NumericalError, nn.NetworkError, OSError) as exc:
        print(f"perddqn: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
