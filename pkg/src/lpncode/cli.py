"""Command-line entry point.

Subcommands::

    train     fit a model, writing checkpoints and a JSON-lines training log
    compress  build a compression table for the code of a record file
    decode    beam-decode records with a trained checkpoint
    eval      BLEU-4 and exact accuracy of predictions against gold records
    retrieve  nearest-neighbour (Levenshtein) baseline predictions
    synth     write a synthetic card corpus and its schema
    ablate    run the desk-scale ablation or overfit experiment

Every command exits 0 on success.  Failures print one JSON object
``{"error": <type>, "message": <text>}`` to stderr and exit 1.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .checkpoint import CheckpointError
from .compressor import CompressionError, SymbolTable, compress
from .config import ConfigError, ModelDims, RunConfig, desk_profile
from .corpus import CorpusError, Schema, example_from_record, load_dataset, read_records, write_dataset
from .decoder import beam_decode, units_to_text
from .evaluate import evaluate, retrieve_nearest
from .lpn import LatticeError, NonFiniteLoss, build_lattice, copy_spans

log = logging.getLogger("lpncode")

EXPECTED_ERRORS = (CorpusError, ConfigError, CompressionError, CheckpointError, LatticeError,
                   NonFiniteLoss, OSError, KeyError, ValueError)

_RUN_FLAGS = [
    # (flag, RunConfig field, type)
    ("--dataset", "dataset", str),
    ("--schema", "schema", str),
    ("--embedding", "embedding", str),
    ("--attention", "attention", str),
    ("--predictors", "predictors", str),
    ("--unk-singleton-prob", "unk_singleton_prob", float),
    ("--batch-size", "batch_size", int),
    ("--rho", "rho", float),
    ("--eps", "eps", float),
    ("--clip-norm", "clip_norm", float),
    ("--init-scale", "init_scale", float),
    ("--seed", "seed", int),
    ("--epochs", "epochs", int),
    ("--compress-max-len", "compress_max_len", int),
    ("--compress-target", "compress_target", float),
    ("--compress-rate", "compress_rate", float),
    ("--beam", "beam", int),
    ("--max-decode-len", "max_decode_len", int),
    ("--valid-interval", "valid_interval", int),
    ("--valid-beam", "valid_beam", int),
    ("--out-dir", "out_dir", str),
]
_DIM_FIELDS = [f.name for f in dataclasses.fields(ModelDims)]


def _write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_jsonl(path, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _read_jsonl(path) -> list[dict]:
    return [rec for _, rec in read_records(path)]


def build_config(args) -> RunConfig:
    """Defaults, then the config file, then explicit flags."""
    if args.profile == "full":
        base = RunConfig(beam=1000, max_decode_len=2000).to_dict()
    else:
        base = desk_profile().to_dict()
    if args.config:
        loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        dims = loaded.pop("dims", {})
        base.update(loaded)
        base["dims"].update(dims)
    for _, name, _ in _RUN_FLAGS:
        val = getattr(args, name)
        if val is not None:
            base[name] = val
    for name in _DIM_FIELDS:
        val = getattr(args, "dim_" + name)
        if val is not None:
            base["dims"][name] = val
    return RunConfig.from_dict(base)


# commands -------------------------------------------------------------------


def cmd_train(args) -> dict:
    from .train import Trainer, load_checkpoint

    if args.resume:
        state = load_checkpoint(args.resume)
        cfg = state.model.config
        for field in ("epochs", "out_dir", "dataset", "valid_interval", "valid_beam", "beam", "max_decode_len"):
            val = getattr(args, field)
            if val is not None:
                cfg = dataclasses.replace(cfg, **{field: val})
        schema = state.model.schema
    else:
        state = None
        cfg = build_config(args)
        if not cfg.schema:
            raise ConfigError("--schema (or a config file naming one) is required")
        schema = Schema.load(cfg.schema)
    if not cfg.dataset:
        raise ConfigError("--dataset (or a config file naming one) is required")
    splits = load_dataset(cfg.dataset, schema)
    if not splits["train"]:
        raise CorpusError(f"{cfg.dataset}: no training examples")
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg.to_dict())
    trainer = Trainer(cfg, schema, splits["train"], splits["valid"], out, state, workers=args.workers)
    if trainer.state.table is not None:
        trainer.state.table.save(out / "table.tsv")
    history = trainer.fit(until_epoch=cfg.epochs)
    return {"out_dir": str(out), "epochs": trainer.state.epoch, "steps": trainer.state.step,
            "best_valid_bleu": trainer.state.best_bleu if trainer.state.best_bleu >= 0 else None,
            "history": history}


def cmd_compress(args) -> dict:
    records = _read_jsonl(args.input)
    codes = [rec["code"] for rec in records if rec.get("split", "train") in args.splits]
    if not codes:
        raise CorpusError(f"{args.input}: no code to compress")
    before = sum(map(len, codes)) / len(codes)
    rounds = []

    def note(sid, v, score, avg):
        rounds.append({"symbol": sid, "length": len(v), "score": score, "avg_len": avg})
        log.info("symbol %d: len %d score %d avg %.1f", sid, len(v), score, avg)

    docs, table = compress(codes, args.max_len, args.target_avg, args.max_rounds, note)
    table.save(args.table)
    after = sum(map(len, docs)) / len(docs)
    return {"table": args.table, "documents": len(docs), "replacements": len(table.entries),
            "avg_len_before": before, "avg_len_after": after, "rounds": rounds}


def cmd_decode(args) -> dict:
    from .train import load_checkpoint

    state = load_checkpoint(args.model)
    model = state.model
    table = SymbolTable.load(args.table) if args.table else state.table
    examples = []
    for lineno, rec in read_records(args.input):
        # inputs to decode need not carry reference code
        ex = example_from_record(rec if "code" in rec else dict(rec, code=""), model.schema, lineno)
        if args.split == "all" or ex.split == args.split:
            examples.append(ex)
    beam = args.beam or model.config.beam
    max_len = args.max_len or model.config.max_decode_len
    out = []
    truncated = 0
    for ex in examples:
        res = beam_decode(model, ex.fields, beam, max_len)
        truncated += res.truncated
        spans = copy_spans(build_lattice(model, ex.fields, res.units)) if res.units else []
        out.append({"id": ex.id, "code": units_to_text(res.units, table), "score": float(res.score),
                    "truncated": res.truncated, "copy_spans": spans})
    _write_jsonl(args.out, out)
    return {"out": args.out, "decoded": len(out), "truncated": truncated, "beam": beam}


def cmd_eval(args) -> dict:
    preds = {rec["id"]: rec["code"] for rec in _read_jsonl(args.pred)}
    gold = [rec for rec in _read_jsonl(args.gold) if args.split == "all" or rec.get("split", "train") == args.split]
    if not gold:
        raise CorpusError(f"{args.gold}: no gold records in split {args.split!r}")
    missing = [rec["id"] for rec in gold if rec["id"] not in preds]
    if missing:
        raise KeyError(f"no prediction for {len(missing)} gold ids, e.g. {missing[:3]}")
    ids = [rec["id"] for rec in gold]
    report = evaluate(ids, [preds[i] for i in ids], [rec["code"] for rec in gold])
    d = report.to_dict()
    if args.report:
        _write_json(args.report, d)
    return {"bleu4": d["bleu4"], "exact_accuracy": d["exact_accuracy"], "examples": len(ids)}


def cmd_retrieve(args) -> dict:
    schema = Schema.load(args.schema)
    train = load_dataset(args.train, schema)["train"]
    if not train:
        raise CorpusError(f"{args.train}: no training examples to retrieve from")
    splits = load_dataset(args.input or args.train, schema)
    queries = [ex for s in splits.values() for ex in s] if args.split == "all" else splits[args.split]
    out = []
    for ex in queries:
        hit = retrieve_nearest(ex.fields, train)
        out.append({"id": ex.id, "code": hit.target, "neighbour": hit.id})
    _write_jsonl(args.out, out)
    return {"out": args.out, "queries": len(out)}


def cmd_synth(args) -> dict:
    from .synthetic import SCHEMA, card_corpus

    corpus = card_corpus(args.n, args.seed, args.test_fraction, args.valid_fraction)
    write_dataset(args.out, corpus)
    if args.schema_out:
        _write_json(args.schema_out, SCHEMA.to_dict())
    counts = {s: sum(e.split == s for e in corpus) for s in ("train", "valid", "test")}
    return {"out": args.out, "counts": counts}


def cmd_ablate(args) -> dict:
    from .experiments import ABLATIONS, ablation_run, overfit_smoke

    if args.which == "overfit":
        r = overfit_smoke(max_epochs=args.epochs or 200)
        return {"epochs": r.epochs, "train_exact_accuracy": r.accuracy, "seconds": r.seconds}
    results = {}
    for name in ABLATIONS:
        rep = ablation_run(name, epochs=args.epochs or 15,
                           log=lambda n, rec: log.info("%s epoch %d loss %.3f", n, rec["epoch"], rec["loss"]))
        results[name] = {"bleu4": round(rep.bleu4, 1), "exact_accuracy": round(rep.exact_accuracy, 1)}
    return results


# parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lpncode", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON config file; overrides profile defaults, flags override it")
    t.add_argument("--profile", choices=["desk", "full"], default="desk")
    for flag, name, typ in _RUN_FLAGS:
        t.add_argument(flag, dest=name, type=typ, default=None)
    for name in _DIM_FIELDS:
        t.add_argument("--" + name.replace("_", "-"), dest="dim_" + name, type=int, default=None)
    t.add_argument("--resume", help="continue from a checkpoint (its config wins)")
    t.add_argument("--workers", type=int, default=1, help="processes for per-example gradients")
    t.set_defaults(func=cmd_train)

    c = sub.add_parser("compress", help="build a compression table")
    c.add_argument("--input", required=True, help="record file whose code fields are compressed")
    c.add_argument("--max-len", type=int, required=True)
    c.add_argument("--target-avg", type=float, required=True)
    c.add_argument("--max-rounds", type=int, default=None)
    c.add_argument("--table", required=True, help="output table file")
    c.add_argument("--splits", nargs="+", default=["train"])
    c.set_defaults(func=cmd_compress)

    d = sub.add_parser("decode", help="decode records with a checkpoint")
    d.add_argument("--model", required=True)
    d.add_argument("--input", required=True)
    d.add_argument("--table", help="compression table (default: the checkpoint's own)")
    d.add_argument("--beam", type=int, default=0)
    d.add_argument("--max-len", type=int, default=0)
    d.add_argument("--split", default="all", choices=["all", "train", "valid", "test"])
    d.add_argument("--out", required=True)
    d.set_defaults(func=cmd_decode)

    e = sub.add_parser("eval", help="score predictions")
    e.add_argument("--pred", required=True)
    e.add_argument("--gold", required=True)
    e.add_argument("--report")
    e.add_argument("--split", default="all", choices=["all", "train", "valid", "test"])
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("retrieve", help="Levenshtein nearest-neighbour baseline")
    r.add_argument("--train", required=True, help="record file; its train split is the memory")
    r.add_argument("--input", help="record file with queries (default: --train)")
    r.add_argument("--schema", required=True)
    r.add_argument("--split", default="test", choices=["all", "train", "valid", "test"])
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_retrieve)

    s = sub.add_parser("synth", help="write a synthetic card corpus")
    s.add_argument("--n", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--test-fraction", type=float, default=0.2)
    s.add_argument("--valid-fraction", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.add_argument("--schema-out")
    s.set_defaults(func=cmd_synth)

    a = sub.add_parser("ablate", help="desk-scale experiments on synthetic cards")
    a.add_argument("which", choices=["ablation", "overfit"])
    a.add_argument("--epochs", type=int, default=None)
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s", stream=sys.stderr)
    try:
        result = args.func(args)
    except EXPECTED_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": type(exc).__name__, "message": str(msg)}), file=sys.stderr)
        return 1
    print(json.dumps(result, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
