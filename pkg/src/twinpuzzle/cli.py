"""Command-line interface: generate, train, evaluate, reconstruct, bench.

All tabular outputs are comma-separated with a header row and are byte-stable
across reruns with identical seeds; wall-clock timestamps appear only in log
lines on stderr. Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from . import cm as cm_mod
from . import io as pio
from . import nn
from .classical import CLASSICAL_METHODS, classical_all_pairs
from .model import (E2EModel, TenLarge, TwinPair, load_checkpoint, save_checkpoint)
from .puzzle import CROPPED, ZERO_FRAME, Puzzle, erode_puzzle, scramble, tile_image
from .solver import greedy_reconstruct, neighbor_accuracy, render_assembly, top1_accuracy
from .train import TrainConfig, train_e2e, train_ten, train_ten_large

log = logging.getLogger("twinpuzzle")

VARIANTS = ("type1", "type2")
TRAINABLE_METHODS = ("ten", "ten_large", "e2e")
EROSION_MODES = {CROPPED: CLASSICAL_METHODS, ZERO_FRAME: TRAINABLE_METHODS}


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits 2 by default; the contract is 1
        raise _UsageError(message)


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(value: float) -> str:
    return repr(float(value))


def _load_config_file(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise _UsageError(f"bad config line {line!r} (expected key=value)")
        key, _, val = line.partition("=")
        out[key.strip().replace("-", "_")] = val.strip()
    return out


def _all_parsers(parser: argparse.ArgumentParser) -> list[argparse.ArgumentParser]:
    out = [parser]
    stack = [parser]
    while stack:
        for action in stack.pop()._actions:
            if isinstance(action, argparse._SubParsersAction):
                seen = set()
                for sub in action.choices.values():
                    if id(sub) not in seen:  # aliases share parser objects
                        seen.add(id(sub))
                        out.append(sub)
                        stack.append(sub)
    return out


def _all_actions(parser: argparse.ArgumentParser) -> dict[str, argparse.Action]:
    actions = {}
    for p in _all_parsers(parser):
        for action in p._actions:
            if not isinstance(action, argparse._SubParsersAction):
                actions.setdefault(action.dest, action)
    return actions


def _apply_config_defaults(parser: argparse.ArgumentParser, args: list[str]) -> list[str]:
    """Pull --config FILE out of argv and install its values as parse defaults.

    Values are run through each option's type converter; explicit command-line
    flags still win over config values.
    """
    if "--config" not in args:
        return args
    idx = args.index("--config")
    if idx + 1 >= len(args):
        raise _UsageError("--config needs a file path")
    overrides = _load_config_file(args[idx + 1])
    rest = args[:idx] + args[idx + 2:]
    actions = _all_actions(parser)
    for key, raw in overrides.items():
        action = actions.get(key)
        if action is None or key == "config":
            raise _UsageError(f"unknown config key {key!r}")
        if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            value = raw.lower() in ("1", "true", "yes", "on")
        elif action.type is not None:
            value = action.type(raw)
        else:
            value = raw
        if action.choices and value not in action.choices:
            raise _UsageError(f"config {key}={raw!r} not in {sorted(action.choices)}")
        # subcommands parse into their own namespace, so the default must be
        # installed on every parser that knows this option
        for p in _all_parsers(parser):
            if any(a.dest == key for a in p._actions):
                p.set_defaults(**{key: value})
    return rest


# ---------------------------------------------------------------------------
# generate
# ---------------------------------------------------------------------------

def cmd_generate(args) -> int:
    in_dir = Path(args.input)
    images = sorted(p for p in in_dir.iterdir()
                    if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    if not images:
        raise RuntimeError(f"no PNG/JPEG images under {in_dir}")
    variants = VARIANTS if args.variant == "both" else (args.variant,)
    skipped = 0
    for index, path in enumerate(images):
        try:
            img = pio.load_image(path)
            base = tile_image(img, args.piece_size, name=path.stem)
        except Exception as exc:  # unreadable or undersized image
            log.warning("skipping %s: %s", path.name, exc)
            skipped += 1
            continue
        for variant in variants:
            seed = int(np.random.SeedSequence(
                [args.seed, index, VARIANTS.index(variant)]).generate_state(1)[0])
            for mode in (CROPPED, ZERO_FRAME):
                puz = scramble(erode_puzzle(base, args.erosion, mode), seed, variant)
                pio.save_puzzle(puz, Path(args.output) / path.stem / f"{variant}_{mode}")
        log.info("generated %s (%dx%d pieces)", path.stem, base.rows, base.cols)
    log.info("done: %d images, %d skipped", len(images) - skipped, skipped)
    if skipped:
        print(f"warning: skipped {skipped} unreadable image(s)", file=sys.stderr)
    return 0


def _puzzle_dirs(root: Path, variant: str, mode: str) -> list[Path]:
    direct = root / f"{variant}_{mode}"
    if (direct / pio.MANIFEST).exists():
        return [direct]
    out = sorted(d for d in root.glob(f"*/{variant}_{mode}") if (d / pio.MANIFEST).exists())
    if not out and (root / pio.MANIFEST).exists():
        return [root]
    return out


def _load_puzzles(root, variant: str, mode: str) -> list[Puzzle]:
    dirs = _puzzle_dirs(Path(root), variant, mode)
    if not dirs:
        raise RuntimeError(f"no {variant}_{mode} puzzles under {root} "
                           f"(run `twinpuzzle generate` first)")
    puzzles = []
    for d in dirs:
        puz = pio.load_puzzle(d)
        puz.name = puz.name or d.parent.name
        puzzles.append(puz)
    return puzzles


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _train_config(args) -> TrainConfig:
    return TrainConfig(epochs=int(args.epochs), iters_per_epoch=int(args.iters),
                       batch=int(args.batch), lr=float(args.lr),
                       lr_decay=float(args.lr_decay), patience=int(args.patience),
                       gamma=float(args.gamma), d=int(args.d),
                       measure=args.distance, seed=int(args.seed))


def _loss_csv(path, history) -> None:
    _write_csv(path, ["epoch", "mean_loss", "lr"],
               [[rec.epoch, _fmt(rec.mean_loss), _fmt(rec.lr)] for rec in history])


def cmd_train(args) -> int:
    cfg = _train_config(args)
    puzzles = _load_puzzles(args.puzzles, args.train_variant, ZERO_FRAME)
    log.info("training %s on %d puzzles (%d epochs x %d iters, batch %d)",
             args.model, len(puzzles), cfg.epochs, cfg.iters_per_epoch, cfg.batch)
    out = Path(args.output)
    state_dir = out / "state" if args.resumable else None
    meta = {"distance": cfg.measure, "seed": cfg.seed, "epochs": cfg.epochs,
            "iters_per_epoch": cfg.iters_per_epoch, "batch": cfg.batch,
            "lr": cfg.lr, "gamma": cfg.gamma, "train_puzzles": len(puzzles)}
    if args.model == "ten":
        model, result = train_ten(cfg, puzzles, state_dir=state_dir)
        _loss_csv(out / "loss.csv", result.history)
        meta["best_epoch"] = result.best_epoch
        save_checkpoint(out, model, meta)
    elif args.model == "ten_large":
        model, results = train_ten_large(cfg, puzzles, state_dir=state_dir)
        for ch, res in results.items():
            _loss_csv(out / f"loss_{ch}.csv", res.history)
        save_checkpoint(out, model, meta)
    else:
        model, result = train_e2e(cfg, puzzles, state_dir=state_dir)
        _loss_csv(out / "loss.csv", result.history)
        meta["best_epoch"] = result.best_epoch
        save_checkpoint(out, model, meta)
    log.info("checkpoint written to %s", out)
    return 0


# ---------------------------------------------------------------------------
# evaluate / reconstruct
# ---------------------------------------------------------------------------

def _checkpoint_for(args, method: str):
    path = getattr(args, f"{method}_checkpoint", None)
    if not path:
        raise RuntimeError(f"method {method} needs --{method.replace('_', '-')}-checkpoint "
                           f"pointing at a trained checkpoint directory")
    model, meta = load_checkpoint(path)
    expected = {"ten": TwinPair, "ten_large": TenLarge, "e2e": E2EModel}[method]
    if not isinstance(model, expected):
        raise RuntimeError(f"checkpoint at {path} holds {type(model).__name__}, "
                           f"but method {method} needs {expected.__name__}")
    return model, meta


def _raw_cm(method: str, args, puzzle: Puzzle, variant: str, models: dict) -> cm_mod.CMMatrix:
    if method == "oracle":
        return cm_mod.oracle_cm(puzzle, variant)
    if method in CLASSICAL_METHODS:
        return classical_all_pairs(puzzle, method, variant)
    model = models[method]
    if method == "ten":
        emb = cm_mod.extract_embeddings(model, puzzle)
        return cm_mod.all_pairs_cm(emb, args.distance, variant)
    if method == "ten_large":
        emb = cm_mod.extract_ensemble_embeddings(model, puzzle)
        return cm_mod.all_pairs_cm(emb, args.distance, variant)
    return cm_mod.e2e_all_pairs(model, puzzle, variant)


def _parse_methods(raw: str) -> list[str]:
    methods = [m.strip() for m in raw.split(",") if m.strip()]
    valid = set(CLASSICAL_METHODS) | set(TRAINABLE_METHODS) | {"oracle"}
    for m in methods:
        if m not in valid:
            raise _UsageError(f"unknown method {m!r} (choose from {sorted(valid)})")
    return methods


def _mode_for(method: str) -> str:
    return CROPPED if method in CLASSICAL_METHODS else ZERO_FRAME


def cmd_evaluate(args) -> int:
    methods = _parse_methods(args.methods)
    variants = VARIANTS if args.variant == "both" else (args.variant,)
    models = {m: _checkpoint_for(args, m)[0] for m in methods if m in TRAINABLE_METHODS}
    rows = []
    for variant in variants:
        cache: dict[str, list[Puzzle]] = {}
        for method in methods:
            mode = _mode_for(method)
            if method == "oracle":
                mode = CROPPED
            if mode not in cache:
                cache[mode] = _load_puzzles(args.puzzles, variant, mode)
            accs = []
            for puz in cache[mode]:
                mat = _raw_cm(method, args, puz, variant, models)
                acc = top1_accuracy(mat, puz, variant)
                rows.append([puz.name, method, variant, _fmt(acc), puz.n_pieces])
                accs.append(acc)
                log.info("%s %s %s: top1 %.4f", puz.name, method, variant, acc)
            rows.append(["mean", method, variant, _fmt(float(np.mean(accs))),
                         sum(p.n_pieces for p in cache[mode])])
    _write_csv(args.output, ["puzzle", "method", "variant", "top1", "n_pieces"], rows)
    log.info("wrote %s", args.output)
    return 0


def cmd_reconstruct(args) -> int:
    methods = _parse_methods(args.methods)
    variants = VARIANTS if args.variant == "both" else (args.variant,)
    models = {m: _checkpoint_for(args, m)[0] for m in methods if m in TRAINABLE_METHODS}
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for variant in variants:
        cache: dict[str, list[Puzzle]] = {}
        for method in methods:
            mode = CROPPED if method in CLASSICAL_METHODS or method == "oracle" else ZERO_FRAME
            if mode not in cache:
                cache[mode] = _load_puzzles(args.puzzles, variant, mode)
            accs = []
            for puz in cache[mode]:
                raw = _raw_cm(method, args, puz, variant, models)
                sym = cm_mod.symmetrize(cm_mod.normalize_rows(raw))
                asm = greedy_reconstruct(sym, puz.rows, puz.cols, variant, seed=args.seed)
                acc = neighbor_accuracy(asm, puz)
                rows.append([puz.name, method, variant, _fmt(acc), puz.n_pieces])
                accs.append(acc)
                pio.save_image(out_dir / f"{puz.name}_{method}_{variant}.png",
                               render_assembly(asm, puz))
                log.info("%s %s %s: neighbor accuracy %.4f", puz.name, method, variant, acc)
            rows.append(["mean", method, variant, _fmt(float(np.mean(accs))),
                         sum(p.n_pieces for p in cache[mode])])
    _write_csv(out_dir / "neighbor_accuracy.csv",
               ["puzzle", "method", "variant", "neighbor_accuracy", "n_pieces"], rows)
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        threadpool_limits = None
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    for m in methods:
        if m not in bench_mod.BENCH_METHODS:
            raise _UsageError(f"unknown bench method {m!r}")
    models = {m: _checkpoint_for(args, m)[0] for m in methods}
    for method, model in models.items():
        if model.piece_size != args.piece_size:
            raise RuntimeError(f"{method} checkpoint has piece size {model.piece_size}, "
                               f"bench wants {args.piece_size}")
    sizes = [int(s) for s in str(args.sizes).split(",")]
    threads = int(args.threads) if args.threads else 0
    run = lambda: bench_mod.run_bench(
        models, sizes, args.piece_size, args.distance, threads or 0,
        methods=methods, memory_budget=float(args.memory_budget), log=log.info)
    if threadpool_limits is not None and threads:
        with threadpool_limits(limits=threads):
            records = run()
    else:
        records = run()
    rows = [[r.n_pieces, r.method, _fmt(r.seconds), r.forward_passes,
             r.distance_evals, r.threads] for r in records]
    _write_csv(args.output, ["n_pieces", "method", "seconds", "forward_passes",
                             "distance_evals", "threads"], rows)
    if args.plot:
        bench_mod.plot_bench(records, args.plot)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="twinpuzzle",
                     description="Eroded-puzzle compatibility toolkit")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    describe_csv = "CSV columns: puzzle, method, variant, %s, n_pieces"

    g = sub.add_parser("generate", help="tile, erode and scramble images into puzzles")
    g.add_argument("--config", help="key=value defaults file")
    g.add_argument("--input", required=True, help="directory of PNG/JPEG images")
    g.add_argument("--output", required=True, help="output root for puzzle directories")
    g.add_argument("--piece-size", type=int, default=28)
    g.add_argument("--erosion", type=int, default=1)
    g.add_argument("--variant", choices=VARIANTS + ("both",), default="both")
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a compatibility model")
    t.add_argument("--config", help="key=value defaults file")
    t.add_argument("--puzzles", required=True, help="root of generated puzzles")
    t.add_argument("--model", choices=TRAINABLE_METHODS, default="ten")
    t.add_argument("--output", required=True, help="checkpoint directory")
    t.add_argument("--epochs", type=int, required=True)
    t.add_argument("--iters", type=int, default=5000, help="iterations per epoch")
    t.add_argument("--batch", type=int, default=64)
    t.add_argument("--lr", type=float, default=1e-4)
    t.add_argument("--lr-decay", type=float, default=0.9)
    t.add_argument("--patience", type=int, default=5)
    t.add_argument("--gamma", type=float, default=1.0)
    t.add_argument("--d", type=int, default=40)
    t.add_argument("--distance", choices=("cosine", "l1", "l2", "l3"), default="l2")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--train-variant", choices=VARIANTS, default="type1",
                   help="which generated puzzles to sample junctions from")
    t.add_argument("--resumable", action="store_true",
                   help="save per-epoch trainer state for crash recovery")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="Top-1 accuracy per puzzle and method; "
                                        + describe_csv % "top1")
    e.add_argument("--config", help="key=value defaults file")
    e.add_argument("--puzzles", required=True)
    e.add_argument("--methods", default="ssd,l1,pbc,mgc")
    e.add_argument("--variant", choices=VARIANTS + ("both",), default="both")
    e.add_argument("--distance", choices=("cosine", "l1", "l2", "l3"), default="l2")
    e.add_argument("--output", required=True, help="output CSV path")
    e.add_argument("--ten-checkpoint")
    e.add_argument("--ten-large-checkpoint", dest="ten_large_checkpoint")
    e.add_argument("--e2e-checkpoint", dest="e2e_checkpoint")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("reconstruct", help="greedy reconstruction + renders; "
                                           + describe_csv % "neighbor_accuracy")
    r.add_argument("--config", help="key=value defaults file")
    r.add_argument("--puzzles", required=True)
    r.add_argument("--methods", default="ssd,l1,pbc,mgc")
    r.add_argument("--variant", choices=VARIANTS + ("both",), default="both")
    r.add_argument("--distance", choices=("cosine", "l1", "l2", "l3"), default="l2")
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--output", required=True, help="output directory")
    r.add_argument("--ten-checkpoint")
    r.add_argument("--ten-large-checkpoint", dest="ten_large_checkpoint")
    r.add_argument("--e2e-checkpoint", dest="e2e_checkpoint")
    r.set_defaults(func=cmd_reconstruct)

    b = sub.add_parser("bench", help="time full type2 CM computation per method; "
                                     "CSV: n_pieces, method, seconds, forward_passes, "
                                     "distance_evals, threads")
    b.add_argument("--config", help="key=value defaults file")
    b.add_argument("--sizes", default="100,200,400,800,1600,3200")
    b.add_argument("--methods", default="ten,ten_large,e2e")
    b.add_argument("--piece-size", type=int, default=28)
    b.add_argument("--distance", choices=("cosine", "l1", "l2", "l3"), default="l2")
    b.add_argument("--threads", type=int, default=0, help="0 = library default")
    b.add_argument("--memory-budget", type=float, default=2e9,
                   help="bytes; larger sizes are skipped with a report")
    b.add_argument("--output", required=True, help="output CSV path")
    b.add_argument("--plot", help="optional output PNG with log-log timings")
    b.add_argument("--ten-checkpoint")
    b.add_argument("--ten-large-checkpoint", dest="ten_large_checkpoint")
    b.add_argument("--e2e-checkpoint", dest="e2e_checkpoint")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _apply_config_defaults(parser, argv)
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.INFO,
            format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
        return args.func(args)
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        if "--verbose" in argv:
            raise
        return 2


if __name__ == "__main__":
    sys.exit(main())
