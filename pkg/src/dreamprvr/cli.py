"""Command-line entry point: ``dreamprvr <subcommand> ...``.

Failures print a single JSON line ``{"error": ..., "message": ...}`` on
stderr and exit with status 1 (usage errors exit with 2).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import load_config
from .data import SyntheticSpec, generate_dataset, load_dataset


def _ints(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _dataset_for(cfg, data_arg):
    path = data_arg or cfg.data.path
    if not path:
        raise ValueError("no dataset given: pass --data or set data.path in the config")
    return load_dataset(path)


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")


def cmd_gen_data(args) -> None:
    spec = SyntheticSpec.from_dict(json.loads(Path(args.spec).read_text())) if args.spec else SyntheticSpec()
    ds = generate_dataset(spec, args.out)
    counts = {name: {"videos": len(s.videos), "queries": len(s.queries)} for name, s in ds.splits.items()}
    print(json.dumps({"out": str(args.out), "splits": counts}, sort_keys=True))


def cmd_train(args) -> None:
    from .train import Trainer, load_checkpoint

    cfg = load_config(args.config)
    ds = _dataset_for(cfg, args.data)
    if args.resume:
        trainer = Trainer.resume(load_checkpoint(args.resume), ds, args.out)
    else:
        trainer = Trainer(cfg, ds, args.out)
    trainer.fit(args.epochs)
    last = trainer.history[-1] if trainer.history else {}
    print(json.dumps({"checkpoint": str(Path(args.out) / "checkpoint.npz"), "epoch": trainer.epoch,
                      "loss": last.get("loss", {})}, sort_keys=True))


def cmd_eval(args) -> None:
    from .train import evaluate

    report = evaluate(args.checkpoint, load_dataset(args.data), args.split)
    print(report.to_text() if args.format == "text" else report.to_json())


def cmd_retrieve(args) -> None:
    from .train import retrieve

    res = retrieve(args.checkpoint, load_dataset(args.data), args.query_id, args.top, args.split)
    print(json.dumps({"query_id": res.query_id, "video_ids": res.video_ids, "scores": res.scores}))


def cmd_ablate(args) -> None:
    from .experiments import ablate

    cfg = load_config(args.config)
    variants = [v for v in args.variants.split(",") if v.strip()]
    table = ablate(cfg, _dataset_for(cfg, args.data), variants, args.seeds,
                   log=lambda m: print(m, file=sys.stderr))
    if args.out:
        Path(args.out).write_text(table.to_csv())
        Path(args.out).with_suffix(".txt").write_text(table.to_text() + "\n")
    print(table.to_text())


def cmd_sweep(args) -> None:
    from .experiments import sweep, sweep_csv

    cfg = load_config(args.config)
    rows = sweep(cfg, _dataset_for(cfg, args.data), args.axis, args.values, args.repeats,
                 log=lambda m: print(m, file=sys.stderr))
    _emit(sweep_csv(rows), args.out)


def cmd_plot(args) -> None:
    from .experiments import plot

    print(json.dumps({"out": str(plot(args.csv, args.out))}))


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="dreamprvr", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic corpus")
    p.add_argument("--spec", help="JSON file of SyntheticSpec fields (defaults if omitted)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="dataset directory (overrides data.path)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--epochs", type=int, help="train this many more epochs instead of train.epochs in total")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="recall report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--format", choices=("json", "text"), default="json")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="top videos for one query")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--query-id", required=True)
    p.add_argument("--top", type=int, default=10)
    p.add_argument("--split")
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("ablate", help="train and compare ablation variants")
    p.add_argument("--config")
    p.add_argument("--variants", required=True, help="comma-separated variant names")
    p.add_argument("--data")
    p.add_argument("--seeds", type=_ints)
    p.add_argument("--out", help="CSV path; an aligned text table is written beside it")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("sweep", help="sweep registers or diffusion steps")
    p.add_argument("--config")
    p.add_argument("--axis", required=True, choices=("registers", "timesteps"))
    p.add_argument("--values", required=True, type=_ints)
    p.add_argument("--data")
    p.add_argument("--repeats", type=int, default=1)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("plot", help="plot a sweep CSV")
    p.add_argument("--csv", required=True)
    p.add_argument("--out", required=True, help=".png/.svg/.pdf image, anything else gets gnuplot data")
    p.set_defaults(func=cmd_plot)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except Exception as exc:  # every failure becomes one machine-readable line
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
