"""Desk-scale experiments on synthetic cards: the overfit smoke run and the ablations.

Both use small models trained with single-example AdaDelta updates; with
batches of 20 the adaptive step sizes grow too slowly for a few hundred
examples to get anywhere in a handful of epochs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .config import ModelDims, desk_profile
from .evaluate import EvalReport, evaluate
from .synthetic import SCHEMA, card_corpus
from .train import Trainer, decode_split

ABLATION_DIMS = ModelDims(char_emb=8, c2w_hidden=16, word_dim=16, text_hidden=16, common=16,
                          attn_hidden=16, out_emb=8, dec_hidden=32, pointer_hidden=16)
OVERFIT_DIMS = ModelDims(char_emb=8, c2w_hidden=16, word_dim=16, text_hidden=16, common=16,
                         attn_hidden=16, out_emb=8, dec_hidden=64, pointer_hidden=16)

# name -> (predictors, attention)
ABLATIONS = {
    "full": ("lpn", "structured"),
    "no_lpn": ("char", "structured"),
    "no_attention": ("lpn", "none"),
}


@dataclass
class OverfitResult:
    epochs: int
    accuracy: float
    seconds: float
    losses: list[float]


def overfit_smoke(n: int = 5, max_epochs: int = 200, check_every: int = 10, seed: int = 7,
                  beam: int = 4) -> OverfitResult:
    """Train on ``n`` cards until beam decoding reproduces every one of them."""
    train = card_corpus(n, seed=seed, test_fraction=0.0)
    cfg = desk_profile(dims=OVERFIT_DIMS, batch_size=1, unk_singleton_prob=0.0, beam=beam,
                       max_decode_len=2 * max(len(e.target) for e in train))
    trainer = Trainer(cfg, SCHEMA, train)
    t0 = time.time()
    losses: list[float] = []
    acc = 0.0
    for epoch in range(1, max_epochs + 1):
        losses.append(trainer.run_epoch()["loss"])
        if epoch % check_every == 0 or epoch == max_epochs:
            preds = decode_split(trainer.model, train, None, beam, cfg.max_decode_len)
            acc = evaluate([e.id for e in train], preds, [e.target for e in train]).exact_accuracy
            if acc == 100.0:
                break
    return OverfitResult(epoch, acc, time.time() - t0, losses)


def ablation_run(name: str, n: int = 300, epochs: int = 15, seed: int = 0, beam: int = 4,
                 log=None) -> EvalReport:
    """Train one ablation configuration and score it on the held-out cards."""
    predictors, attention = ABLATIONS[name]
    corpus = card_corpus(n, seed=seed)
    train = [e for e in corpus if e.split == "train"]
    test = [e for e in corpus if e.split == "test"]
    cfg = desk_profile(dims=ABLATION_DIMS, predictors=predictors, attention=attention, batch_size=2,
                       unk_singleton_prob=0.0, beam=beam, max_decode_len=80)
    trainer = Trainer(cfg, SCHEMA, train)
    for _ in range(epochs):
        rec = trainer.run_epoch()
        if log is not None:
            log(name, rec)
    preds = decode_split(trainer.model, test, None, beam, cfg.max_decode_len)
    return evaluate([e.id for e in test], preds, [e.target for e in test])
