"""Command-line entry point: ``kfmrc <subcommand> ...``.

Subcommands: kg-train, synth, train, eval, predict, validate.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .checkpoint import CheckpointError, load_embeddings, save_embeddings
from .data import DatasetError, load_dataset, validate_record
from .kg import KgTrainConfig, KnowledgeBase, TripleParseError, load_triples, train_embeddings
from .model import ABLATIONS
from .synth import synth_generate, write_synth
from .train import TrainConfig, TrainingDiverged, evaluate, load_model, predict, save_model, train

logger = logging.getLogger("kfmrc")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


def _add_kg_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("knowledge-graph embedding")
    g.add_argument("--d2", type=int, default=64)
    g.add_argument("--margin", type=float, default=1.0)
    g.add_argument("--norm", choices=("L1", "L2"), default="L1")
    g.add_argument("--negatives", type=int, default=1)
    g.add_argument("--kg-lr", type=float, default=0.01)
    g.add_argument("--kg-epochs", type=int, default=200)
    g.add_argument("--path-weight", type=float, default=0.0)
    g.add_argument("--kg-batch", type=int, default=128)


def _kg_config(args) -> KgTrainConfig:
    return KgTrainConfig(d2=args.d2, margin=args.margin, norm=args.norm, negatives=args.negatives,
                         lr=args.kg_lr, epochs=args.kg_epochs, path_weight=args.path_weight,
                         batch_size=args.kg_batch, seed=args.seed)


def _add_reader_flags(p: argparse.ArgumentParser) -> None:
    d = TrainConfig()
    g = p.add_argument_group("training")
    g.add_argument("--lr", type=float, default=d.lr)
    g.add_argument("--batch", type=int, default=d.batch_size)
    g.add_argument("--epochs", type=int, default=d.epochs)
    g.add_argument("--steps", type=int, default=None, help="optimizer steps; overrides --epochs")
    g.add_argument("--dtype", choices=("float32", "float64"), default=d.dtype)
    g = p.add_argument_group("model")
    g.add_argument("--max-seq-len", type=int, default=d.max_seq_len)
    g.add_argument("--d1", type=int, default=d.d1)
    g.add_argument("--layers", type=int, default=d.layers)
    g.add_argument("--heads", type=int, default=d.heads)
    g.add_argument("--ff", type=int, default=d.ff)
    g.add_argument("--dropout", type=float, default=d.dropout)
    g.add_argument("--loops", type=int, default=d.loops)
    g.add_argument("--gate", choices=("sigmoid-tanh", "sigmoid"), default=d.gate)
    g.add_argument("--tie-weights", action="store_true")
    g.add_argument("--ablate", nargs="+", choices=ABLATIONS, default=[])
    g.add_argument("--detach-lambda", action="store_true")
    g.add_argument("--finetune-entities", action="store_true")
    g = p.add_argument_group("retrieval and decoding")
    g.add_argument("--edit-threshold", type=int, default=d.edit_threshold)
    g.add_argument("--overlap-ratio", type=float, default=d.overlap_ratio)
    g.add_argument("--kmax", type=int, default=d.kmax)
    g.add_argument("--enforce-containment", action="store_true")
    g.add_argument("--max-answer-len", type=int, default=d.max_answer_len)


def _train_config(args, d2: int) -> TrainConfig:
    return TrainConfig(
        lr=args.lr, batch_size=args.batch, epochs=args.epochs, steps=args.steps, max_seq_len=args.max_seq_len,
        seed=args.seed, d1=args.d1, d2=d2, layers=args.layers, heads=args.heads, ff=args.ff,
        dropout=args.dropout, loops=args.loops, gate=args.gate, tie_weights=args.tie_weights,
        edit_threshold=args.edit_threshold, overlap_ratio=args.overlap_ratio, kmax=args.kmax,
        ablate=tuple(args.ablate), detach_lambda=args.detach_lambda, finetune_entities=args.finetune_entities,
        enforce_containment=args.enforce_containment, max_answer_len=args.max_answer_len, dtype=args.dtype,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kfmrc", description="Knowledge-fused reading comprehension toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("kg-train", help="learn entity embeddings from a triple file")
    p.add_argument("--triples", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path, help="embedding checkpoint directory")
    p.add_argument("--seed", type=int, default=0)
    _add_kg_flags(p)

    p = sub.add_parser("synth", help="generate a synthetic dataset and matching triple file")
    p.add_argument("--out-data", required=True, type=Path)
    p.add_argument("--out-triples", required=True, type=Path)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--kb-size", type=int, default=100)
    p.add_argument("--alias-rate", type=float, default=0.0)
    p.add_argument("--relations", nargs="+", choices=("drug", "symptom", "exam"),
                   default=["drug", "symptom", "exam"])
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("train", help="train a reader")
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--triples", type=Path, help="triple file used for retrieval")
    p.add_argument("--embeddings", type=Path, help="checkpoint from kg-train; trained on the fly if omitted")
    p.add_argument("--out", required=True, type=Path, help="checkpoint directory")
    p.add_argument("--log", type=Path, help="write the per-step loss log as JSON lines")
    p.add_argument("--seed", type=int, default=0)
    _add_reader_flags(p)
    _add_kg_flags(p)

    p = sub.add_parser("eval", help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--data", required=True, type=Path)
    p.add_argument("--report", type=Path, help="metric report JSON")
    p.add_argument("--csv", type=Path, help="per-example CSV")
    p.add_argument("--enforce-containment", action="store_true")

    p = sub.add_parser("predict", help="answer one question")
    p.add_argument("--checkpoint", required=True, type=Path)
    p.add_argument("--question", required=True)
    p.add_argument("--passage", required=True)
    p.add_argument("--enforce-containment", action="store_true")

    p = sub.add_parser("validate", help="check a dataset file")
    p.add_argument("data", type=Path)
    return parser


def _cmd_kg_train(args) -> int:
    kb = load_triples(args.triples)
    if kb.duplicates:
        logger.info("dropped %d duplicate triple(s)", kb.duplicates)
    cfg = _kg_config(args)
    emb = train_embeddings(kb, cfg)
    save_embeddings(args.out, kb, emb, vars(cfg))
    first, last = emb.loss_history[0] if emb.loss_history else 0.0, emb.loss_history[-1] if emb.loss_history else 0.0
    print(f"{kb.num_entities} entities, {kb.num_relations} relations, {len(kb.triples)} triples; "
          f"loss {first:.4f} -> {last:.4f}; saved {args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    records, triples = synth_generate(args.seed, args.n, args.kb_size, args.alias_rate, tuple(args.relations))
    write_synth(records, triples, args.out_data, args.out_triples)
    print(f"wrote {len(records)} records to {args.out_data} and {len(triples)} triples to {args.out_triples}")
    return EXIT_OK


def _entity_vectors(args, kb: KnowledgeBase | None):
    if args.embeddings is not None:
        emb, names, _ = load_embeddings(args.embeddings)
        if kb is None:
            kb = KnowledgeBase(entities={n: i for i, n in enumerate(names)})
        elif kb.entity_names() != names:
            raise CheckpointError("embedding checkpoint was trained on a different entity vocabulary")
        return kb, emb.entities
    if kb is None:
        return None, None
    return kb, train_embeddings(kb, _kg_config(args)).entities


def _cmd_train(args) -> int:
    records = load_dataset(args.data)
    kb = load_triples(args.triples) if args.triples is not None else None
    kb, vectors = _entity_vectors(args, kb)
    d2 = vectors.shape[1] if vectors is not None else args.d2
    cfg = _train_config(args, d2)
    try:
        result = train(records, kb, vectors, cfg, checkpoint_dir=args.out)
    except TrainingDiverged as exc:
        print(f"error: {exc}; last good parameters saved to {args.out}", file=sys.stderr)
        return EXIT_FAIL
    if args.log is not None:
        with open(args.log, "w", encoding="utf-8") as fh:
            for row in result.log:
                fh.write(json.dumps(row) + "\n")
    last = result.log[-1] if result.log else {}
    print(f"{result.step} steps; final L_A={last.get('L_A', float('nan')):.4f} "
          f"L_S={last.get('L_S', float('nan')):.4f} lambda={last.get('lambda', float('nan')):.4f}; saved {args.out}")
    return EXIT_OK


def _load_reader(args):
    result = load_model(args.checkpoint)
    if args.enforce_containment:
        result.config.enforce_containment = True
    return result


def _cmd_eval(args) -> int:
    result = _load_reader(args)
    report = evaluate(result, load_dataset(args.data))
    if args.report is not None:
        report.write_json(args.report)
    if args.csv is not None:
        report.write_csv(args.csv)
    print(f"answer EM {report.answer_em:.4f} F1 {report.answer_f1:.4f} | "
          f"support EM {report.support_em:.4f} F1 {report.support_f1:.4f} | errors {report.errors}")
    return EXIT_OK


def _cmd_predict(args) -> int:
    pred = predict(_load_reader(args), args.question, args.passage)
    print(json.dumps(pred.as_dict(), ensure_ascii=False))
    return EXIT_OK


def _cmd_validate(args) -> int:
    records = load_dataset(args.data, validate=False)
    bad = 0
    for rec in records:
        try:
            validate_record(rec)
        except DatasetError as exc:
            bad += 1
            print(f"invalid: {exc}")
    print(f"{len(records) - bad}/{len(records)} records valid")
    return EXIT_FAIL if bad else EXIT_OK


_COMMANDS = {
    "kg-train": _cmd_kg_train,
    "synth": _cmd_synth,
    "train": _cmd_train,
    "eval": _cmd_eval,
    "predict": _cmd_predict,
    "validate": _cmd_validate,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except (OSError, ValueError, TripleParseError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
