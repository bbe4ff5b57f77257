"""``tidysim`` command line: train, run, check, plan, render.

Exit codes: 0 all placed / success, 1 config or usage error,
2 unrecoverable failure, 3 tick budget exhausted.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import data_path
from . import preference as pm
from .episode import EXIT_CODES, EpisodeConfig, EpisodeLog, run_episode
from .errors import ConfigError, TidySimError
from .nav import carrot_plan, inflate, plan_point_goal
from .semantic_map import load_map, render, render_png
from .world import load_scenario

logger = logging.getLogger("tidysim")

EXIT_OK, EXIT_USAGE = 0, 1


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _read_text(path) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror or exc}") from None


def _write(path, data) -> None:
    try:
        if isinstance(data, bytes):
            Path(path).write_bytes(data)
        else:
            Path(path).write_text(data)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc.strerror or exc}") from None


def resolve_scenario(ref: str) -> Path:
    """A scenario path, or the name of a bundled scenario (``drawer``)."""
    path = Path(ref)
    if path.exists():
        return path
    bundled = data_path("scenarios", ref if ref.endswith(".yaml") else ref + ".yaml")
    if bundled.exists():
        return bundled
    raise ConfigError(f"scenario not found: {ref}")


def _cell(text: str) -> tuple[int, int]:
    try:
        x, y = (int(v) for v in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected X,Y, got {text!r}") from None
    return x, y


# --- subcommands ------------------------------------------------------------

def cmd_train(args) -> int:
    corpus = pm.ingest_corpus(_read_text(args.corpus))
    hyper = pm.TrainConfig(
        d=args.d, lam=args.lam, learning_rate=args.lr, epochs=args.epochs,
        seed=args.seed, init_scale=args.init_scale,
    )
    held = None
    if args.holdout:
        mask = pm.holdout_split(len(corpus), args.holdout, args.seed)
        held = corpus.subset(mask)
        corpus = corpus.subset(~mask)
    model = pm.train(corpus, hyper)
    out = args.out or "model.tfm"
    _write(out, pm.dump_model(model))
    print(f"final loss {model.loss_history[-1]:.6g}")
    print(f"train RMSE {pm.rmse(model, corpus):.6g}")
    if held is not None:
        print(f"held-out RMSE {pm.rmse(model, held):.6g} ({len(held)} ratings)")
    print(f"model written to {out}")
    return EXIT_OK


def cmd_run(args) -> int:
    config = EpisodeConfig(
        scenario=resolve_scenario(args.scenario),
        corpus=args.corpus,
        model=args.model,
        user=args.user,
        k=args.k,
        max_ticks=args.max_ticks,
        seed=args.seed,
        room_mode=args.room_mode,
    )
    log = run_episode(config)
    text = log.to_jsonl()
    if args.out:
        _write(args.out, text)
    else:
        sys.stdout.write(text)
    s = log.summary
    print(
        f"{s['terminal_reason']}: {s['objects_rearranged']} rearranged, "
        f"{s['successes']} ok / {s['failures']} failed actions, "
        f"{s['total_path_cells']} cells in {s['total_ticks']} ticks",
        file=sys.stderr,
    )
    return EXIT_CODES[s["terminal_reason"]]


def cmd_check(args) -> int:
    model = pm.load_model(_read_bytes(args.model))
    current = (args.room, args.receptacle)
    misplaced = pm.is_misplaced(model, args.user, args.object, current, args.k)
    print("MISPLACED" if misplaced else "OK")
    for n, it in enumerate(pm.top_placements(model, args.user, args.object, args.k), 1):
        score = pm.predict_rating(model, args.user, it)
        print(f"{n:>3} {it.room} {it.receptacle_class} {score:.4f}")
    return EXIT_OK


def cmd_plan(args) -> int:
    smap = load_map(_read_text(args.map))
    costmap = inflate(smap, args.inflate)
    if args.carrot:
        path = carrot_plan(costmap, args.start, args.goal, connectivity=args.connectivity)
    else:
        path = plan_point_goal(costmap, args.start, args.goal, connectivity=args.connectivity)
    for x, y in path.cells:
        print(f"{x},{y}")
    print(f"cells {len(path)} cost {path.total_cost:.6f}")
    if args.out:
        _render_to(smap, [args.start, *path.cells], args.out)
    return EXIT_OK


def _render_to(smap, trajectory, out) -> None:
    if str(out).lower().endswith(".png"):
        try:
            render_png(smap, trajectory, out)
        except OSError as exc:
            raise ConfigError(f"cannot write {out}: {exc}") from None
    else:
        _write(out, render(smap, trajectory, show_receptacles=True) + "\n")


def cmd_render(args) -> int:
    if args.log:
        log = EpisodeLog.from_jsonl(_read_text(args.log))
        if "map" not in log.header:
            raise ConfigError(f"{args.log} has no episode header")
        smap = load_map(_read_text(log.header["map"]))
        trajectory = log.trajectory()
    else:
        scenario = load_scenario(resolve_scenario(args.scenario))
        smap = load_map(_read_text(scenario.map_path))
        trajectory = []
    if args.out:
        _render_to(smap, trajectory, args.out)
    else:
        print(render(smap, trajectory, show_receptacles=True))
    return EXIT_OK


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="random seed")
    common.add_argument("--out", default=None, help="output file")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="tidysim", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", parents=[common], help="fit a preference model to a ratings corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--d", type=int, default=pm.TrainConfig.d)
    p.add_argument("--lam", type=float, default=pm.TrainConfig.lam)
    p.add_argument("--lr", type=float, default=pm.TrainConfig.learning_rate)
    p.add_argument("--epochs", type=int, default=pm.TrainConfig.epochs)
    p.add_argument("--init-scale", type=float, default=pm.TrainConfig.init_scale)
    p.add_argument("--holdout", type=float, default=0.0, help="fraction of ratings held out for RMSE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("run", parents=[common], help="run a tidy-up episode")
    p.add_argument("--scenario", required=True, help="scenario file or bundled scenario name")
    p.add_argument("--corpus")
    p.add_argument("--model")
    p.add_argument("--user")
    p.add_argument("--k", type=int)
    p.add_argument("--max-ticks", type=int)
    p.add_argument("--room-mode", choices=["kb", "user"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("check", parents=[common], help="is an object misplaced for a user?")
    p.add_argument("--model", required=True)
    p.add_argument("--user", required=True)
    p.add_argument("--object", required=True)
    p.add_argument("--room", required=True)
    p.add_argument("--receptacle", required=True)
    p.add_argument("--k", type=int, default=pm.TOP_K)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("plan", parents=[common], help="plan a path on a map")
    p.add_argument("--map", required=True)
    p.add_argument("--from", dest="start", type=_cell, required=True, metavar="X,Y")
    p.add_argument("--to", dest="goal", type=_cell, required=True, metavar="X,Y")
    p.add_argument("--carrot", action="store_true", help="approach the goal instead of reaching it")
    p.add_argument("--inflate", type=int, default=0, metavar="N")
    p.add_argument("--connectivity", type=int, choices=[4, 8], default=8)
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("render", parents=[common], help="draw a map with a trajectory")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario")
    src.add_argument("--log")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "train" and args.seed is None:
        args.seed = pm.TrainConfig.seed
    if getattr(args, "k", None) is not None and args.k < 1:
        parser.error("--k must be >= 1")
    try:
        return args.func(args)
    except (TidySimError, ValueError) as exc:
        print(f"tidysim: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
