"""Stack-based beam search over predictors and segments, with prefix merging.

Hypotheses live in one stack per prefix length.  Expanding a prefix of length
``L`` pushes its CHAR continuations into stack ``L+1`` and each copy segment
of length ``m`` into stack ``L+m``.  Two paths that reach the same prefix are
merged by adding their probabilities, and since the decoder state depends only
on the prefix the merged hypothesis keeps a single state.  Every contribution
to stack ``L`` arrives before stack ``L`` itself is expanded, so merging is
complete per prefix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .compressor import SymbolTable
from .corpus import NIL, Field
from .diffcore import Tape
from .lpn import LPNModel, PredictorKind


@dataclass
class Hypothesis:
    prefix: tuple[str, ...]
    score: float
    # the (segment, predictor) that first produced this prefix; merged paths
    # only add probability mass
    prev: tuple[str, ...] | None = None
    predictor: int | None = None
    finished: bool = False


@dataclass
class DecodeResult:
    units: tuple[str, ...]
    score: float
    truncated: bool = False
    ranked: list[tuple[tuple[str, ...], float]] = field(default_factory=list)

    @property
    def text(self) -> str:
        return "".join(self.units)


def _logaddexp(a: float, b: float) -> float:
    if a == -math.inf:
        return b
    if b == -math.inf:
        return a
    m = max(a, b)
    return m + math.log(math.exp(a - m) + math.exp(b - m))


class _States:
    """Decoder states keyed by prefix, computed lazily from the nearest ancestor."""

    def __init__(self, model: LPNModel, tape: Tape, enc):
        self.model = model
        self.tape = tape
        self.enc = enc
        self.state: dict[tuple[str, ...], tuple] = {(): model.initial_state(tape)}
        self.steps: dict[tuple[str, ...], object] = {}

    def step(self, prefix: tuple[str, ...]):
        """StepOut for extending ``prefix`` (its state consumed prefix[:-1])."""
        out = self.steps.get(prefix)
        if out is not None:
            return out
        st = self.get_state(prefix)
        prev = self.model.unit_id(prefix[-1]) if prefix else self.model.bos
        out = self.model.step(self.tape, self.enc, st, prev)
        self.steps[prefix] = out
        return out

    def get_state(self, prefix: tuple[str, ...]):
        st = self.state.get(prefix)
        if st is not None:
            return st
        # walk back to the closest prefix with a known state
        k = len(prefix) - 1
        while prefix[:k] not in self.state:
            k -= 1
        for j in range(k, len(prefix)):
            out = self.step(prefix[:j])
            self.state[prefix[:j + 1]] = (out.h, out.c)
        return self.state[prefix]


def beam_decode(model: LPNModel, fields: Sequence[Field], beam: int = 64, max_len: int = 400,
                char_width: int | None = None, keep: int = 10) -> DecodeResult:
    """Best output for ``fields`` under merged beam search.

    ``char_width`` caps CHAR expansions per hypothesis (defaults to ``beam``).
    ``keep`` limits how many finished outputs are returned in ``ranked``.
    """
    if beam < 1 or max_len < 1:
        raise ValueError("beam and max_len must be >= 1")
    fields = model.check_fields(fields)
    tape = Tape(model.params, record=False)
    enc = model.encode(tape, fields)
    states = _States(model, tape, enc)
    vocab = model.vocab
    width = beam if char_width is None else char_width
    eos, unk = vocab.eos, vocab.unk
    # finished hypotheses sit in the stack after their last unit and compete
    # for beam slots there; they are collected rather than expanded
    stacks: dict[int, dict[tuple, Hypothesis]] = {0: {((), False): Hypothesis((), 0.0)}}
    finished: list[Hypothesis] = []
    copies = copyable_units(model, fields)
    for L in range(0, max_len + 2):
        stack = stacks.pop(L, None)
        if not stack:
            continue
        ranked = sorted(stack.values(), key=lambda h: (-h.score, h.prefix, h.finished))[:beam]
        for hyp in ranked:
            if hyp.finished:
                finished.append(hyp)
                continue
            out = states.step(hyp.prefix)
            pred_lp = out.pred_lp.value
            char_lp = out.char_lp.value
            base = hyp.score + pred_lp[0]
            _push(stacks, hyp.prefix, base + char_lp[eos], hyp.prefix, 0, finished=True)
            if L == max_len:
                continue
            order = np.argsort(-char_lp, kind="stable")
            taken = 0
            for uid in order:
                if uid == eos or uid == unk:
                    continue
                if taken >= width:
                    break
                taken += 1
                _push(stacks, hyp.prefix + (vocab.units[uid],), base + char_lp[uid], hyp.prefix, 0)
            for r_idx, word, tok in copies:
                if L + len(tok) > max_len:
                    continue
                r = model.predictors[r_idx]
                s = hyp.score + pred_lp[r_idx]
                if r.kind is PredictorKind.COPY_TEXT:
                    s += out.copy_lp(r.field).value[word]
                _push(stacks, hyp.prefix + tuple(tok), s, hyp.prefix, r_idx)
    finished.sort(key=lambda h: (-h.score, h.prefix))
    top = finished[0]
    # EOS is forced once a prefix reaches max_len, so such an output may be cut short
    return DecodeResult(top.prefix, top.score, len(top.prefix) >= max_len,
                        [(h.prefix, h.score) for h in finished[:keep]])


def _push(stacks, prefix, score, prev, predictor, finished: bool = False) -> None:
    stack = stacks.setdefault(len(prefix) + finished, {})
    key = (prefix, finished)
    old = stack.get(key)
    if old is None:
        stack[key] = Hypothesis(prefix, score, prev, predictor, finished)
    else:
        old.score = _logaddexp(old.score, score)


def copyable_units(model: LPNModel, fields: Sequence[Field]) -> list[tuple[int, int | None, str]]:
    """Every unit the copy predictors can emit: (predictor, word index, text)."""
    out = []
    for r_idx, r in enumerate(model.predictors):
        if r.kind is PredictorKind.CHAR:
            continue
        f = fields[r.field]
        toks = [(None, f.tokens[0])] if r.kind is PredictorKind.COPY_SINGULAR else list(enumerate(f.tokens))
        out.extend((r_idx, word, tok) for word, tok in toks if tok != NIL)
    return out


def greedy_decode(model: LPNModel, fields: Sequence[Field], max_len: int = 400) -> DecodeResult:
    """Argmax CHAR unit at every step (ignores copy predictors)."""
    fields = model.check_fields(fields)
    tape = Tape(model.params, record=False)
    enc = model.encode(tape, fields)
    state = model.initial_state(tape)
    prev = model.bos
    units: list[str] = []
    score = 0.0
    vocab = model.vocab
    for _ in range(max_len + 1):
        out = model.step(tape, enc, state, prev)
        lp = out.char_lp.value.copy()
        lp[vocab.unk] = -np.inf
        if len(units) == max_len:
            uid = vocab.eos
        else:
            uid = int(np.argmax(lp))
        score += out.pred_lp.value[0] + lp[uid]
        if uid == vocab.eos:
            return DecodeResult(tuple(units), score, len(units) >= max_len)
        units.append(vocab.units[uid])
        state = (out.h, out.c)
        prev = uid
    raise AssertionError("unreachable: EOS is forced at max_len")


def units_to_text(units: Sequence[str], table: SymbolTable | None) -> str:
    """Join output units, expanding compression symbols.

    Single characters pass through as they are: copy predictors can emit
    input characters that never occurred in the compressed training code.
    """
    if table is None or not table.entries:
        return "".join(units)
    return "".join(u if len(u) == 1 else table.expand(table.unit_to_id(u)) for u in units)


def decode_and_restore(model: LPNModel, fields: Sequence[Field], table: SymbolTable | None,
                       beam: int = 64, max_len: int = 400) -> str:
    """Beam decode, then expand compression symbols back into source text."""
    return units_to_text(beam_decode(model, fields, beam, max_len).units, table)
