"""Command-line entry point: gen / train / slice / eval.

Every command is reproducible from (seed, config): gen writes a manifest
with the generator config hash, train records its config and seed in the
checkpoint metadata, and all randomness flows from the single --seed through
named substreams. Exit codes: 0 success, 1 internal error, 2 bad user input.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import corpus, decode, metrics, minilang, model
from .errors import CriterionError, SliceKitError, UserInputError
from .oracle import SliceCriterion


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicekit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen", help="generate a synthetic labeled dataset")
    gen.add_argument("--seed", type=int, required=True)
    gen.add_argument("--out", type=Path, required=True)
    gen.add_argument("--train", type=int, default=3000)
    gen.add_argument("--valid", type=int, default=350)
    gen.add_argument("--test", type=int, default=870)
    gen.add_argument("--force", action="store_true", help="overwrite existing files")

    tr = sub.add_parser("train", help="train a slicing model")
    tr.add_argument("--data", type=Path, required=True, help="dataset directory from gen")
    tr.add_argument("--out", type=Path, required=True, help="checkpoint output path")
    tr.add_argument("--seed", type=int, required=True)
    tr.add_argument("--lr", type=float, default=5e-5)
    tr.add_argument("--batch", type=int, default=16)
    tr.add_argument("--warmup", type=int, default=1000)
    tr.add_argument("--epochs", type=int, default=10)
    tr.add_argument("--weight-decay", type=float, default=0.01)
    tr.add_argument("--no-copy", action="store_true",
                    help="ablation: pin the generation gate to 1 (no copy path)")
    tr.add_argument("--resume", type=Path, default=None)
    tr.add_argument("--quiet", action="store_true")

    sl = sub.add_parser("slice", help="slice one source file at a criterion")
    sl.add_argument("--ckpt", type=Path, required=True)
    sl.add_argument("--source", type=Path, required=True)
    sl.add_argument("--var", required=True)
    sl.add_argument("--line", type=int, required=True)
    sl.add_argument("--no-lexical", action="store_true")
    sl.add_argument("--no-syntactic", action="store_true")
    sl.add_argument("--beam", type=int, default=3)
    sl.add_argument("--max-len", type=int, default=256)
    sl.add_argument("--trace", type=Path, default=None, help="write decode trace JSON here")

    ev = sub.add_parser("eval", help="evaluate a checkpoint on a test file")
    ev.add_argument("--ckpt", type=Path, required=True)
    ev.add_argument("--data", type=Path, required=True, help="test JSONL file")
    ev.add_argument("--out", type=Path, default=Path("report"),
                    help="output prefix for .json and .txt reports")
    ev.add_argument("--ablate", action="store_true", help="emit full/-copy/-lexical/-syntactic rows")
    ev.add_argument("--nocopy-ckpt", type=Path, default=None,
                    help="checkpoint trained with --no-copy (needed by --ablate)")
    ev.add_argument("--corrupt", choices=corpus.CORRUPTION_KINDS, default=None,
                    help="corrupt every test instance first")
    ev.add_argument("--sweep-corruptions", action="store_true",
                    help="run all three corruption kinds as separate blocks")
    ev.add_argument("--no-lexical", action="store_true")
    ev.add_argument("--no-syntactic", action="store_true")
    ev.add_argument("--beam", type=int, default=3)
    ev.add_argument("--max-len", type=int, default=256)
    ev.add_argument("--seed", type=int, default=0, help="seed for corruption randomness")
    ev.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
    ev.add_argument("--limit", type=int, default=None, help="evaluate only the first N instances")
    ev.add_argument("--no-records", action="store_true", help="omit per-instance records from JSON")
    return parser


def cmd_gen(args) -> int:
    out: Path = args.out
    out.mkdir(parents=True, exist_ok=True)
    existing = [p for p in ("train.jsonl", "valid.jsonl", "test.jsonl") if (out / p).exists()]
    if existing and not args.force:
        raise UserInputError(f"refusing to overwrite {existing} in {out} (use --force)")
    config = corpus.GeneratorConfig()
    split = corpus.generate_split(args.seed, args.train, args.valid, args.test, config)
    manifest = corpus.save_split(out, split, {
        "seed": args.seed,
        "generator": {k: getattr(config, k) for k in (
            "max_lines", "var_pool", "nesting_depth", "mean_lines", "lines_std",
            "common_name_ratio", "digit_leaf_ratio", "binary_expr_ratio", "bare_condition_ratio",
        )},
    })
    print(f"wrote {manifest['counts']} to {out} (manifest {manifest['manifest_hash']})")
    return 0


def cmd_train(args) -> int:
    vocab = corpus.build_default_vocab()
    split = corpus.load_split(args.data)
    tcfg = model.TrainConfig(
        lr=args.lr, batch_size=args.batch, warmup_steps=args.warmup,
        epochs=args.epochs, weight_decay=args.weight_decay, seed=args.seed,
    )
    init_params, init_step = None, 0
    if args.resume is not None:
        init_params, meta = model.load_checkpoint(args.resume)
        init_step = int(meta.get("step", 0))
        mcfg = init_params.config
    else:
        mcfg = model.ModelConfig(vocab_size=vocab.size, copy_enabled=not args.no_copy)
    log = None if args.quiet else lambda msg: print(msg, flush=True)
    result = model.train(split.train, split.valid, vocab, mcfg, tcfg,
                         log=log, init_params=init_params, init_step=init_step)
    meta = {
        "seed": args.seed,
        "no_copy": not mcfg.copy_enabled,
        "step": result.steps,
        "best_epoch": result.best_epoch,
        "vocab": vocab.fingerprint(),
        "train_config": {
            "lr": tcfg.lr, "batch": tcfg.batch_size, "warmup": tcfg.warmup_steps,
            "epochs": tcfg.epochs, "weight_decay": tcfg.weight_decay,
        },
    }
    model.save_checkpoint(args.out, result.params, meta)
    curve_path = args.out.with_suffix(args.out.suffix + ".loss.csv")
    with open(curve_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "train_loss", "valid_loss"])
        writer.writeheader()
        writer.writerows(result.history)
    print(f"saved checkpoint to {args.out} (best epoch {result.best_epoch}), curve to {curve_path}")
    return 0


def _load_model(path: Path) -> model.SliceModel:
    params, _ = model.load_checkpoint(path)
    return model.SliceModel(params, corpus.build_default_vocab())


def cmd_slice(args) -> int:
    net = _load_model(args.ckpt)
    source = args.source.read_text(encoding="utf-8")
    statements = {s.line: s for s in minilang.split_statements(source)}
    stmt = statements.get(args.line)
    idents = {t.text for t in (stmt.tokens if stmt else ()) if t.kind == minilang.KIND_IDENT}
    if stmt is None or args.var not in idents:
        raise CriterionError(f"variable {args.var!r} does not occur on line {args.line}")
    instance = corpus.SliceInstance(
        source, SliceCriterion(args.var, args.line), (), "", "none"
    )
    config = decode.BeamConfig(
        beam_size=args.beam, max_len=args.max_len,
        lexical_on=not args.no_lexical, syntactic_on=not args.no_syntactic,
    )
    result = decode.beam_search(net, instance, config, trace=args.trace is not None)
    print(result.text)
    if args.trace is not None:
        args.trace.write_text(json.dumps(result.trace, indent=2) + "\n")
    return 0


def cmd_eval(args) -> int:
    net = _load_model(args.ckpt)
    instances = corpus.load_jsonl(args.data)
    if args.limit is not None:
        instances = instances[: args.limit]
    config = decode.BeamConfig(
        beam_size=args.beam, max_len=args.max_len,
        lexical_on=not args.no_lexical, syntactic_on=not args.no_syntactic,
    )
    reports: list[metrics.EvalReport] = []
    if args.corrupt:
        instances = metrics.corrupt_split(instances, args.corrupt, args.seed)
    if args.ablate:
        if args.nocopy_ckpt is None:
            raise UserInputError("--ablate needs --nocopy-ckpt (checkpoint trained with --no-copy)")
        nocopy = _load_model(args.nocopy_ckpt)
        reports.extend(metrics.ablation_rows(instances, net, nocopy, config, jobs=args.jobs))
    elif args.sweep_corruptions:
        reports.extend(metrics.corruption_sweep(instances, net, config, seed=args.seed, jobs=args.jobs))
    else:
        label = args.corrupt or "full"
        reports.append(metrics.evaluate(instances, net, config, label=label, jobs=args.jobs))
    json_path = args.out.with_suffix(".json")
    text_path = args.out.with_suffix(".txt")
    metrics.save_reports(json_path, reports, include_records=not args.no_records)
    table = metrics.format_table(reports)
    text_path.write_text(table + "\n")
    print(table)
    print(f"wrote {json_path} and {text_path}")
    return 0


_COMMANDS = {"gen": cmd_gen, "train": cmd_train, "slice": cmd_slice, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except UserInputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SliceKitError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
