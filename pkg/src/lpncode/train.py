"""Mini-batch AdaDelta training with validation-BLEU model selection."""

from __future__ import annotations

import json
import logging
import time
from collections import OrderedDict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .compressor import SymbolTable, compress
from .config import RunConfig
from .corpus import Example, Schema, Vocab, build_vocab
from .decoder import beam_decode, units_to_text
from .diffcore import AdaDelta, Params, Tape, backward, clip_by_global_norm
from .evaluate import evaluate
from .lpn import LPNModel, example_loss

log = logging.getLogger(__name__)


@dataclass
class TrainItem:
    id: str
    fields: tuple
    units: tuple[str, ...]


def prepare_targets(train: Sequence[Example], cfg: RunConfig) -> tuple[list[tuple[str, ...]], SymbolTable | None]:
    """Output unit sequences for training, compressed when the config asks for it."""
    target = cfg.compress_target
    if cfg.compress_rate > 0 and train:
        target = (1.0 - cfg.compress_rate) * sum(len(ex.target) for ex in train) / len(train)
    if cfg.compress_max_len >= 2 and target > 0:
        docs, table = compress([ex.target for ex in train], cfg.compress_max_len, target)
        return [tuple(table.units(d)) for d in docs], table
    return [tuple(ex.target) for ex in train], None


def table_to_meta(table: SymbolTable | None) -> dict | None:
    if table is None:
        return None
    return {"alphabet": table.alphabet, "entries": [[sid, list(exp)] for sid, exp in table.entries]}


def table_from_meta(d: dict | None) -> SymbolTable | None:
    if d is None:
        return None
    table = SymbolTable(d["alphabet"])
    for sid, exp in d["entries"]:
        if table.add(exp) != sid:
            raise ValueError("corrupt symbol table in checkpoint")
    return table


@dataclass
class TrainState:
    model: LPNModel
    optimizer: AdaDelta
    table: SymbolTable | None = None
    epoch: int = 0
    step: int = 0
    best_bleu: float = -1.0
    history: list[dict] = field(default_factory=list)


def save_checkpoint(path, state: TrainState) -> None:
    arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
    for k, v in state.model.params.items():
        arrays["param/" + k] = v
    for k, v in state.optimizer.sq_grad.items():
        arrays["adadelta.sq_grad/" + k] = v
    for k, v in state.optimizer.sq_delta.items():
        arrays["adadelta.sq_delta/" + k] = v
    meta = {
        "config": state.model.config.to_dict(),
        "schema": state.model.schema.to_dict(),
        "vocab": state.model.vocab.to_dict(),
        "table": table_to_meta(state.table),
        "epoch": state.epoch,
        "step": state.step,
        "best_bleu": state.best_bleu,
    }
    save_arrays(path, arrays, state.model.config.model_digest(), meta)


def load_checkpoint(path) -> TrainState:
    arrays, digest, meta = load_arrays(path)
    cfg = RunConfig.from_dict(meta["config"])
    if digest != cfg.model_digest():
        raise ValueError(f"{path}: config digest mismatch")
    schema = Schema.from_dict(meta["schema"])
    vocab = Vocab.from_dict(meta["vocab"])
    params = Params(cfg.seed, cfg.init_scale)
    model = LPNModel(cfg, schema, vocab, params=params)
    fresh = model._init_params()
    for name in fresh:
        key = "param/" + name
        if key not in arrays or arrays[key].shape != fresh[name].shape:
            raise ValueError(f"{path}: missing or misshapen parameter {name}")
        params.arrays[name] = arrays[key].copy()
    opt = AdaDelta(params, cfg.rho, cfg.eps)
    for name in params:
        opt.sq_grad[name] = arrays["adadelta.sq_grad/" + name].copy()
        opt.sq_delta[name] = arrays["adadelta.sq_delta/" + name].copy()
    return TrainState(model, opt, table_from_meta(meta.get("table")), meta["epoch"], meta["step"],
                      meta["best_bleu"])


def _example_grad(model: LPNModel, item: TrainItem, rng) -> tuple[float, "OrderedDict[str, np.ndarray]"]:
    tape = Tape(model.params)
    loss, _ = example_loss(model, tape, item.id, item.fields, item.units, rng)
    return float(loss.value), backward(tape, loss)


_WORKER_MODEL: LPNModel | None = None


def _worker_init(model: LPNModel) -> None:
    global _WORKER_MODEL
    _WORKER_MODEL = model


def _worker_grad(args):
    arrays, item, seed = args
    model = _WORKER_MODEL
    for k, v in arrays.items():
        model.params.arrays[k] = v
    rng = np.random.default_rng(seed) if seed is not None else None
    return _example_grad(model, item, rng)


def decode_split(model: LPNModel, examples: Sequence[Example], table: SymbolTable | None,
                 beam: int, max_len: int) -> list[str]:
    return [units_to_text(beam_decode(model, ex.fields, beam, max_len).units, table) for ex in examples]


class Trainer:
    """Owns the parameters; the only writer during training."""

    def __init__(self, cfg: RunConfig, schema: Schema, train: Sequence[Example],
                 valid: Sequence[Example] = (), out_dir=None, state: TrainState | None = None,
                 workers: int = 1):
        self.cfg = cfg.validate()
        self.train = list(train)
        self.valid = list(valid)
        self.out_dir = Path(out_dir) if out_dir else None
        self.workers = workers
        targets, table = prepare_targets(self.train, cfg)
        if state is None:
            vocab = build_vocab(self.train, cfg.unk_singleton_prob, targets)
            model = LPNModel(cfg, schema, vocab)
            state = TrainState(model, AdaDelta(model.params, cfg.rho, cfg.eps), table)
        self.state = state
        self.items = [TrainItem(ex.id, ex.fields, t) for ex, t in zip(self.train, targets)]
        if self.out_dir:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    @property
    def model(self) -> LPNModel:
        return self.state.model

    def _batch_grads(self, batch: list[TrainItem], rng) -> tuple[float, "OrderedDict[str, np.ndarray]"]:
        total = self.model.params.zeros_like()
        loss_sum = 0.0
        stochastic = self.cfg.embedding == "lookup" and self.cfg.unk_singleton_prob > 0
        if self.workers > 1 and len(batch) > 1:
            seeds = [int(rng.integers(2**31)) if stochastic else None for _ in batch]
            arrays = self.model.params.arrays
            with ProcessPoolExecutor(self.workers, initializer=_worker_init, initargs=(self.model,)) as pool:
                results = list(pool.map(_worker_grad, [(arrays, it, s) for it, s in zip(batch, seeds)]))
        else:
            results = [_example_grad(self.model, it, rng if stochastic else None) for it in batch]
        # ordered reduction keeps runs reproducible
        for loss, grads in results:
            loss_sum += loss
            for k, g in grads.items():
                total[k] += g
        return loss_sum, total

    def run_epoch(self) -> dict:
        st = self.state
        rng = np.random.default_rng([self.cfg.seed, st.epoch])
        order = rng.permutation(len(self.items))
        losses = []
        t0 = time.time()
        bs = self.cfg.batch_size
        for b in range(0, len(order), bs):
            batch = [self.items[i] for i in order[b:b + bs]]
            loss, grads = self._batch_grads(batch, rng)
            norm = clip_by_global_norm(grads, self.cfg.clip_norm)
            st.optimizer.step(self.model.params, grads)
            st.step += 1
            losses.append(loss)
            self._log({"step": st.step, "epoch": st.epoch + 1, "loss": loss / len(batch), "grad_norm": norm})
        st.epoch += 1
        rec = {"epoch": st.epoch, "loss": float(np.sum(losses)) / max(len(self.items), 1),
               "seconds": time.time() - t0}
        if self.valid and self.cfg.valid_interval > 0 and st.epoch % self.cfg.valid_interval == 0:
            rec["valid_bleu"] = self.validate()
            if rec["valid_bleu"] > st.best_bleu:
                st.best_bleu = rec["valid_bleu"]
                if self.out_dir:
                    save_checkpoint(self.out_dir / "best.ckpt", st)
            self._log({"step": st.step, "epoch": st.epoch, "val_bleu": rec["valid_bleu"]})
        if self.out_dir:
            save_checkpoint(self.out_dir / "last.ckpt", st)
        st.history.append(rec)
        return rec

    def validate(self) -> float:
        beam = self.cfg.valid_beam or self.cfg.beam
        preds = decode_split(self.model, self.valid, self.state.table, beam, self.cfg.max_decode_len)
        return evaluate([e.id for e in self.valid], preds, [e.target for e in self.valid]).bleu4

    def fit(self, epochs: int | None = None, until_epoch: int | None = None) -> list[dict]:
        stop = until_epoch if until_epoch is not None else self.state.epoch + (epochs or self.cfg.epochs)
        out = []
        while self.state.epoch < stop:
            rec = self.run_epoch()
            log.info("epoch %d loss %.4f%s", rec["epoch"], rec["loss"],
                     f" val BLEU {rec['valid_bleu']:.2f}" if "valid_bleu" in rec else "")
            out.append(rec)
        return out

    def _log(self, rec: dict) -> None:
        if self.out_dir:
            with open(self.out_dir / "train_log.jsonl", "a", encoding="utf-8") as fh:
                fh.write(json.dumps(rec) + "\n")
