"""Command-line entry point: ``retriever synth | train | pool | evaluate | score``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import data as ds
from .config import RunConfig, component_rng, seed_sequence
from .evaluation import evaluate_run, score_records
from .model import ModelWeights
from .tokenizer import build_vocab, serialize_object
from .training import TrainConfig, TrainingError, load_checkpoint, make_examples, save_checkpoint, train

log = logging.getLogger("retriever")

CATALOG_FILE = "catalog.json"
DIALOGUES_FILE = "dialogues.json"


class CliError(Exception):
    pass


def _load_data(data_dir):
    root = Path(data_dir)
    if not root.is_dir():
        raise CliError(f"data directory not found: {root}")
    catalog = ds.load_catalog(root / CATALOG_FILE)
    return catalog, ds.load_dialogues(root / DIALOGUES_FILE, catalog)


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    catalog, turns = ds.generate_synthetic_corpus(args.objects, args.turns, seed_sequence(args.seed, "synth"))
    ds.write_json(out / CATALOG_FILE, ds.dump_catalog(catalog))
    ds.write_json(out / DIALOGUES_FILE, ds.dump_dialogues(turns))
    log.info("wrote %d objects and %d turns to %s", len(catalog), len(turns), out)
    return 0


def cmd_train(args) -> int:
    catalog, turns = _load_data(args.data)
    cfg = RunConfig.load(args.config)
    cfg.override(
        "train",
        steps=args.steps,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        freeze_encoder=True if args.freeze_encoder else None,
    )
    if args.vocab_size is not None:
        cfg.vocab_size = args.vocab_size
    tc = cfg.train_config()
    corpus = [t.user_utterance for t in turns] + [t.true_response for t in turns]
    corpus += [serialize_object(o) for o in catalog.values()]
    vocab = build_vocab(corpus, cfg.vocab_size)
    weights = ModelWeights.initialize(
        cfg.encoder_config(len(vocab)), cfg.decoder_config(len(vocab)), component_rng(tc.seed, "init")
    )
    out = Path(args.out)
    log_path = Path(args.log) if args.log else out.with_name(out.name + ".log.jsonl")
    cfg.write(out.with_name(out.name + ".run.json"), len(vocab), {"data": str(args.data)})
    with open(log_path, "w", encoding="utf-8") as lf:
        def write_log(rec):
            lf.write(json.dumps(rec) + "\n")
            log.info("step %d loss %.4f", rec["step"], rec["loss"])

        losses = train(
            make_examples(turns, catalog, vocab),
            weights,
            tc,
            component_rng(tc.seed, "batches"),
            component_rng(tc.seed, "dropout"),
            write_log,
        )
    save_checkpoint(out, weights, vocab, step=tc.steps, seed=tc.seed)
    log.info("initial loss %.4f, final loss %.4f; checkpoint %s", losses[0], losses[-1], out)
    return 0


def cmd_pool(args) -> int:
    catalog, turns = _load_data(args.data)
    pools = ds.build_pools(turns, catalog, args.pool_size, args.seed)
    ds.write_pools(args.out, pools)
    log.info("wrote %d pools of %d to %s", len(pools), args.pool_size, args.out)
    return 0


def _run_scoring(args):
    ckpt = load_checkpoint(args.ckpt)
    pools = ds.load_pools(args.pools)
    if not pools:
        raise CliError(f"{args.pools}: no pools")
    return pools, evaluate_run(pools, ckpt.weights, ckpt.vocab, use_grounding=not args.no_grounding, threads=args.threads)


def _write_scores(path, pools, run) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in score_records(pools, run.rankings):
            f.write(json.dumps(rec) + "\n")


def cmd_evaluate(args) -> int:
    pools, run = _run_scoring(args)
    text = run.report.dumps()
    Path(args.out).write_text(text + "\n", encoding="utf-8")
    if args.scores:
        _write_scores(args.scores, pools, run)
    print(text)
    return 0


def cmd_score(args) -> int:
    pools, run = _run_scoring(args)
    _write_scores(args.out, pools, run)
    return 0


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="retriever", description=__doc__, formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic catalog and dialogues", formatter_class=fmt)
    p.add_argument("--objects", type=int, default=20, help="number of catalog objects")
    p.add_argument("--turns", type=int, default=64, help="number of dialogue turns")
    p.add_argument("--seed", type=int, default=0, help="run seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model and write a checkpoint", formatter_class=fmt)
    p.add_argument("--data", required=True, help=f"directory holding {CATALOG_FILE} and {DIALOGUES_FILE}")
    p.add_argument("--config", default=None, help="INI config with [encoder] [decoder] [train] [vocab] sections")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="training log path (default: <out>.log.jsonl)")
    p.add_argument("--steps", type=int, default=None, help=f"training steps (config default {TrainConfig.steps})")
    p.add_argument("--batch-size", type=int, default=None, help=f"batch size (config default {TrainConfig.batch_size})")
    p.add_argument("--lr", type=float, default=None, help=f"Adam learning rate (config default {TrainConfig.learning_rate})")
    p.add_argument("--seed", type=int, default=None, help=f"run seed (config default {TrainConfig.seed})")
    p.add_argument("--vocab-size", type=int, default=None, help="maximum vocabulary size (config default 1000)")
    p.add_argument("--freeze-encoder", action="store_true", help="keep encoder weights fixed")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("pool", help="build candidate pools, one per turn", formatter_class=fmt)
    p.add_argument("--data", required=True, help=f"directory holding {CATALOG_FILE} and {DIALOGUES_FILE}")
    p.add_argument("--pool-size", type=int, default=100, help="candidates per pool")
    p.add_argument("--seed", type=int, default=0, help="run seed")
    p.add_argument("--out", required=True, help="pools JSONL path")
    p.set_defaults(func=cmd_pool)

    for name, func, helptext in (
        ("evaluate", cmd_evaluate, "rank pools and report MRR, recall@k and mean rank"),
        ("score", cmd_score, "export per-candidate scores as JSONL"),
    ):
        p = sub.add_parser(name, help=helptext, formatter_class=fmt)
        p.add_argument("--ckpt", required=True, help="checkpoint path")
        p.add_argument("--pools", required=True, help="pools JSONL path")
        p.add_argument("--no-grounding", action="store_true", help="rank by likelihood only")
        p.add_argument("--threads", type=int, default=None, help="worker threads (default: $RETRIEVER_THREADS, 0 = auto)")
        if name == "evaluate":
            p.add_argument("--out", default="report.json", help="report JSON path")
            p.add_argument("--scores", default=None, help="optional per-candidate scores JSONL path")
        else:
            p.add_argument("--out", required=True, help="scores JSONL path")
        p.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    # DataError, PoolConfigError, ConfigError and CheckpointError are ValueErrors
    except (CliError, TrainingError, OSError, ValueError) as e:
        print(f"retriever {args.command}: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
