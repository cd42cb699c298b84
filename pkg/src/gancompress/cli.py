"""Command-line surface.

Commands: train (dense baseline), compress (run one recipe), evaluate
(metrics on a checkpoint), compare (run a recipe set and aggregate),
report (emit tables and charts), fetch-mnist, train-extractor.

Exit codes: 0 success, 2 config, 3 data, 4 numeric, 5 io.
"""

import argparse
import logging
import sys
from pathlib import Path

from . import data as data_mod
from .config import parse_config, validate_config
from .errors import GanCompressError
from .report import compare_summary, generate_report

log = logging.getLogger("gancompress")


def _manifest_from_args(args, overrides: dict):
    """Config file (if any) as the base, CLI flags layered on top."""
    base = parse_config(args.config).to_dict() if getattr(args, "config", None) else {}
    for key, value in overrides.items():
        if value is not None:
            base[key] = value
    base = {k: v for k, v in base.items() if v is not None}
    return validate_config(base)


def _add_common(p):
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out-dir", default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--batch-size", type=int, default=None)


def cmd_train(args):
    from .engine import run_compression

    manifest = _manifest_from_args(args, {
        "task": args.task, "recipe": args.recipe, "seed": args.seed,
        "steps": args.steps, "epochs": args.epochs, "out_dir": args.out_dir,
        "data_dir": args.data_dir, "batch_size": args.batch_size,
    })
    result = run_compression(manifest)
    print(f"dense baseline finished: {result.final_checkpoint}")
    return 0


def cmd_compress(args):
    from .engine import run_compression

    manifest = _manifest_from_args(args, {
        "task": args.task, "recipe": args.recipe, "seed": args.seed,
        "steps": args.steps, "epochs": args.epochs, "out_dir": args.out_dir,
        "data_dir": args.data_dir, "batch_size": args.batch_size,
        "sparsity": args.sparsity, "granularity": args.granularity,
        "dense_checkpoint": args.dense_checkpoint,
    })
    result = run_compression(manifest, resume=args.resume)
    print(f"compression finished: {result.final_checkpoint}")
    return 0


def cmd_evaluate(args):
    from .engine import evaluate_checkpoint

    ckpt = Path(args.checkpoint)
    out = Path(args.out) if args.out else ckpt.parent / f"eval-{ckpt.stem}.json"
    record = evaluate_checkpoint(
        ckpt, extractor_id=args.extractor, extractor_path=args.extractor_checkpoint,
        samples=args.samples, seed=args.seed, data_dir=args.data_dir, out_path=out,
    )
    print(f"fid {record['fid']:.4f}  sparsity {record['sparsity']:.4f}  -> {out}")
    return 0


def cmd_compare(args):
    from .engine import evaluate_checkpoint, run_compression
    from .strategies import resolve_strategy

    recipes = [r.strip() for r in args.recipes.split(",") if r.strip()]
    out_root = Path(args.out_dir or "runs/compare")
    rows = []
    for recipe in recipes:
        strategy = resolve_strategy(recipe)
        run_dir = out_root / f"recipe-{recipe}"
        manifest = _manifest_from_args(args, {
            "task": args.task, "recipe": recipe, "seed": args.seed,
            "steps": args.steps, "epochs": args.epochs,
            "out_dir": str(run_dir), "data_dir": args.data_dir,
            "batch_size": args.batch_size, "sparsity": args.sparsity,
            "granularity": args.granularity, "dense_checkpoint": args.dense_checkpoint,
        })
        log.info("compare: running recipe %s", recipe)
        result = run_compression(manifest)
        record = evaluate_checkpoint(
            result.final_checkpoint, samples=args.samples, data_dir=args.data_dir,
            out_path=run_dir / "eval-final.json",
        )
        rows.append({"recipe": recipe, "label": strategy.label,
                     "sparsity": record["sparsity"], "fid": record["fid"]})
        print(f"recipe {recipe}: fid {record['fid']:.4f} at sparsity {record['sparsity']:.3f}")
    out_root.mkdir(parents=True, exist_ok=True)
    compare_summary(rows, out_root / "compare_summary.csv")
    print(f"summary -> {out_root / 'compare_summary.csv'}")
    return 0


def cmd_report(args):
    summary = generate_report([Path(d) for d in args.run_dir], Path(args.out_dir))
    print(f"report for {len(summary['runs'])} run(s), "
          f"{summary['evaluations']} evaluation record(s) -> {args.out_dir}")
    return 0


def cmd_fetch_mnist(args):
    out = data_mod.data_dir(args.out)
    data_mod.fetch_mnist(out, from_json=Path(args.from_json) if args.from_json else None)
    images, _ = data_mod.load_mnist_split(out, "train")
    print(f"mnist ready under {out} ({images.shape[0]} train images)")
    return 0


def cmd_train_extractor(args):
    from .data import load_dataset
    from .metrics import train_digit_extractor

    train = load_dataset("mnist", "train", seed=0, directory=args.data_dir,
                         image_shape=(1, 28, 28))
    out = train_digit_extractor(train.samples, train.labels, args.out,
                                epochs=args.epochs, seed=args.seed)
    print(f"extractor checkpoint -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gancompress",
        description="Prune GAN generators against a frozen dense generator and "
                    "pretrained discriminator; evaluate with FID/PSNR/SSIM.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a dense baseline (recipe a)")
    _add_common(p)
    p.add_argument("--task", default=None)
    p.add_argument("--recipe", default="a", choices=["a", "c"],
                   help="from-scratch recipes only")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("compress", help="run one compression recipe")
    _add_common(p)
    p.add_argument("--task", default=None)
    p.add_argument("--recipe", default=None)
    p.add_argument("--sparsity", type=float, default=None)
    p.add_argument("--granularity", default=None,
                   choices=["element", "vector", "kernel", "filter"])
    p.add_argument("--dense-checkpoint", default=None)
    p.add_argument("--resume", action="store_true",
                   help="continue from last.gcz in the output directory")
    p.set_defaults(fn=cmd_compress)

    p = sub.add_parser("evaluate", help="compute metrics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--extractor", default=None)
    p.add_argument("--extractor-checkpoint", default=None)
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("compare", help="run a set of recipes and aggregate FIDs")
    _add_common(p)
    p.add_argument("--task", default=None)
    p.add_argument("--recipes", required=True, help="comma-separated recipe ids")
    p.add_argument("--sparsity", type=float, default=None)
    p.add_argument("--granularity", default=None,
                   choices=["element", "vector", "kernel", "filter"])
    p.add_argument("--dense-checkpoint", default=None)
    p.add_argument("--samples", type=int, default=None)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("report", help="emit tables and charts from finished runs")
    p.add_argument("--run-dir", action="append", required=True)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("fetch-mnist", help="download MNIST IDX files (or import from JSON)")
    p.add_argument("--out", default=None)
    p.add_argument("--from-json", default=None,
                   help="directory of 0.json..9.json digit dumps to import offline")
    p.set_defaults(fn=cmd_fetch_mnist)

    p = sub.add_parser("train-extractor", help="fit the desk FID feature extractor once")
    p.add_argument("--data-dir", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int, default=2)
    p.add_argument("--seed", type=int, default=7)
    p.set_defaults(fn=cmd_train_extractor)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except GanCompressError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code


if __name__ == "__main__":
    sys.exit(main())
