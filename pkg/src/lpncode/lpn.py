"""Latent predictor network: heads, segmentation lattice and exact marginal.

The decoder is a character LSTM.  At output position ``t`` (0-based, ``t``
units already emitted) one step computes::

    z_t    = attend(input rows, h_prev)
    h_cur  = LSTM([emb(y_{t-1}); z_t], h_prev)
    P(r)   = softmax(W_r [h_prev; z_t])              predictor choice
    P(c)   = softmax(W_y h_cur)                       CHAR emits one unit
    P(i|k) = softmax_i(w_k . tanh(A_k f_ki + B_k [h_prev; z_t]))   COPY_TEXT(k)

COPY_SINGULAR(k) emits its field's whole value with probability 1.  Every way
of segmenting the target into predictor outputs is an edge path through a
lattice over positions ``0..n+1`` (the last edge always emits EOS through
CHAR).  ``log P(y|x)`` is the log-sum over paths, computed by a forward
recurrence.  Training differentiates that recurrence directly, so the
forward-backward posteriors never need to be written out by hand.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterator, Sequence

import numpy as np

from .config import RunConfig
from .corpus import EOS, NIL, Field, FieldKind, Schema, Vocab
from .diffcore import Params, Tape, Var, backward, lstm_step
from .encoder import EncodedInput, attend, encode_input, init_encoder_params


class PredictorKind(str, Enum):
    CHAR = "char"
    COPY_SINGULAR = "copy_singular"
    COPY_TEXT = "copy_text"


@dataclass(frozen=True)
class Predictor:
    kind: PredictorKind
    field: int | None = None
    name: str = "char"


def predictor_set(schema: Schema, mode: str = "lpn") -> list[Predictor]:
    """One CHAR head, then one copy head per field in schema order."""
    preds = [Predictor(PredictorKind.CHAR)]
    if mode == "char":
        return preds
    for k, spec in enumerate(schema.fields):
        kind = PredictorKind.COPY_SINGULAR if spec.kind is FieldKind.SINGULAR else PredictorKind.COPY_TEXT
        preds.append(Predictor(kind, k, spec.name))
    return preds


class LatticeError(ValueError):
    pass


@dataclass
class StepOut:
    """Everything one decoder step exposes to the lattice and to beam search."""

    h_prev: Var
    z: Var
    h: Var
    c: Var
    pred_lp: Var
    char_lp: Var
    q: Var
    _model: "LPNModel" = field(repr=False, default=None)
    _tape: Tape = field(repr=False, default=None)
    _enc: EncodedInput = field(repr=False, default=None)
    _copy: dict = field(default_factory=dict, repr=False)

    def copy_lp(self, k: int) -> Var:
        if k not in self._copy:
            self._copy[k] = self._model.copy_text_dist(self._tape, self._enc, k, self.q)
        return self._copy[k]


class LPNModel:
    """Parameters plus the forward computations shared by training and decoding."""

    def __init__(self, config: RunConfig, schema: Schema, vocab: Vocab, params: Params | None = None):
        self.config = config
        self.schema = schema
        self.vocab = vocab
        self.dims = config.dims
        self.predictors = predictor_set(schema, config.predictors)
        self.bos = len(vocab.units)
        self.unk_units = 0
        self.params = params if params is not None else self._init_params()

    def _init_params(self) -> Params:
        d = self.dims
        p = Params(self.config.seed, self.config.init_scale)
        init_encoder_params(p, d, self.vocab, self.config.embedding, self.config.attention)
        p.add("dec.emb", (len(self.vocab.units) + 1, d.out_emb))
        p.add("dec.lstm.w", (4 * d.dec_hidden, d.out_emb + d.common + d.dec_hidden))
        p.add("dec.lstm.b", (4 * d.dec_hidden,))
        p.add("out.w", (len(self.vocab.units), d.dec_hidden))
        p.add("out.b", (len(self.vocab.units),))
        if len(self.predictors) > 1:
            p.add("pred.w", (len(self.predictors), d.dec_hidden + d.common))
            p.add("pred.b", (len(self.predictors),))
        for r in self.predictors:
            if r.kind is PredictorKind.COPY_TEXT:
                pre = f"ptr.{r.name}"
                p.add(pre + ".wf", (d.pointer_hidden, d.common))
                p.add(pre + ".wq", (d.pointer_hidden, d.dec_hidden + d.common))
                p.add(pre + ".b", (d.pointer_hidden,))
                p.add(pre + ".v", (d.pointer_hidden,))
        return p

    # encoding --------------------------------------------------------------

    def check_fields(self, fields: Sequence[Field]) -> tuple[Field, ...]:
        fields = tuple(fields)
        if [f.name for f in fields] != self.schema.names:
            raise LatticeError(f"input fields {[f.name for f in fields]} do not match schema {self.schema.names}")
        return fields

    def encode(self, tape: Tape, fields: Sequence[Field], rng=None) -> EncodedInput:
        fields = self.check_fields(fields)
        enc = encode_input(tape, fields, self.vocab, self.dims, self.config.embedding,
                           self.config.attention, rng)
        enc.ptr_keys = {}
        return enc

    def initial_state(self, tape: Tape) -> tuple[Var, Var]:
        zero = tape.const(np.zeros(self.dims.dec_hidden))
        return zero, zero

    # heads -------------------------------------------------------------------

    def step(self, tape: Tape, enc: EncodedInput, state: tuple[Var, Var], prev_id: int) -> StepOut:
        h_prev, c_prev = state
        z, _ = attend(tape, enc, h_prev)
        x = tape.concat([tape.lookup(tape.param("dec.emb"), prev_id), z])
        h, c = lstm_step(tape, "dec.lstm", x, (h_prev, c_prev))
        char_lp = tape.log_softmax(tape.affine(tape.param("out.w"), h, tape.param("out.b")))
        q = tape.concat([h_prev, z])
        pred_lp = self.predictor_dist(tape, q)
        return StepOut(h_prev, z, h, c, pred_lp, char_lp, q, self, tape, enc)

    def predictor_dist(self, tape: Tape, q: Var) -> Var:
        if len(self.predictors) == 1:
            return tape.const(np.zeros(1))
        return tape.log_softmax(tape.affine(tape.param("pred.w"), q, tape.param("pred.b")))

    def copy_text_dist(self, tape: Tape, enc: EncodedInput, k: int, q: Var) -> Var:
        f = enc.fields[k]
        if f.kind is not FieldKind.TEXT:
            raise LatticeError(f"field {f.name!r} is not a text field")
        pre = f"ptr.{f.name}"
        keys = enc.ptr_keys.get(k)
        if keys is None:
            rows = tape.lookup(enc.matrix, enc.rows[k])
            keys = tape.affine(tape.param(pre + ".wf"), rows, tape.param(pre + ".b"))
            enc.ptr_keys[k] = keys
        e = tape.tanh(tape.add(keys, tape.matmul(tape.param(pre + ".wq"), q)))
        return tape.log_softmax(tape.matmul(e, tape.param(pre + ".v")))

    def unit_id(self, unit: str) -> int:
        uid = self.vocab.unit_to_id.get(unit)
        if uid is None:
            self.unk_units += 1
            return self.vocab.unk
        return uid

    def predictor_index(self, kind: PredictorKind, k: int | None = None) -> int:
        for i, r in enumerate(self.predictors):
            if r.kind is kind and r.field == k:
                return i
        raise KeyError((kind, k))


# lattice -------------------------------------------------------------------


@dataclass
class Edge:
    start: int
    end: int
    predictor: int
    word: int | None
    units: tuple[str, ...]
    pred_lp: float
    seg_lp: float

    @property
    def logp(self) -> float:
        return self.pred_lp + self.seg_lp


@dataclass
class PositionDists:
    """Numeric copies of the distributions computed at one position."""

    pred_lp: np.ndarray
    char_lp: np.ndarray
    copy_lp: dict = field(default_factory=dict)


@dataclass
class SegLattice:
    units: tuple[str, ...]
    predictors: list[Predictor]
    edges: list[Edge]
    dists: list[PositionDists] = field(default_factory=list)
    fields: tuple[Field, ...] = ()

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def final(self) -> int:
        return self.n + 1

    def incoming(self) -> list[list[int]]:
        inc: list[list[int]] = [[] for _ in range(self.final + 1)]
        for e_id, e in enumerate(self.edges):
            inc[e.end].append(e_id)
        return inc

    def outgoing(self) -> list[list[int]]:
        out: list[list[int]] = [[] for _ in range(self.final + 1)]
        for e_id, e in enumerate(self.edges):
            out[e.start].append(e_id)
        return out


def copy_matches(units: Sequence[str], fields: Sequence[Field], predictors: Sequence[Predictor],
                 t: int) -> list[tuple[int, int | None, int]]:
    """Copy edges starting at ``t``: (predictor index, word index, length).

    Matching is exact and case-sensitive; NIL placeholders are never copied.
    """
    out = []
    for r_idx, r in enumerate(predictors):
        if r.kind is PredictorKind.CHAR:
            continue
        f = fields[r.field]
        if r.kind is PredictorKind.COPY_SINGULAR:
            tok = f.tokens[0]
            if tok != NIL and _matches(units, t, tok):
                out.append((r_idx, None, len(tok)))
        else:
            for i, tok in enumerate(f.tokens):
                if tok != NIL and _matches(units, t, tok):
                    out.append((r_idx, i, len(tok)))
    return out


def _matches(units: Sequence[str], t: int, tok: str) -> bool:
    L = len(tok)
    if t + L > len(units):
        return False
    for j in range(L):
        if units[t + j] != tok[j]:
            return False
    return True


@dataclass
class LatticeRun:
    lattice: SegLattice
    log_marginal: Var


def run_lattice(model: LPNModel, tape: Tape, fields: Sequence[Field], units: Sequence[str],
                rng=None, enc: EncodedInput | None = None) -> LatticeRun:
    """Build the lattice for (x, y) and the forward recurrence on ``tape``.

    Hidden states are computed once per position by one left-to-right sweep
    over the raw target units, shared by every edge leaving that position.
    """
    fields = model.check_fields(fields)
    units = tuple(units)
    if enc is None:
        enc = model.encode(tape, fields, rng)
    preds = model.predictors
    char_r = 0
    n = len(units)
    state = model.initial_state(tape)
    prev = model.bos
    edges: list[Edge] = []
    dists: list[PositionDists] = []
    edge_scores: list[Var] = []  # one vector per position
    zero = tape.const(np.zeros(1))
    for t in range(n + 1):
        out = model.step(tape, enc, state, prev)
        target = model.unit_id(units[t]) if t < n else model.vocab.eos
        matches = copy_matches(units, fields, preds, t) if t < n else []
        pieces = [out.pred_lp, out.char_lp]
        offs = [0, len(preds)]
        size = len(preds) + out.char_lp.value.shape[0]
        copy_off: dict[int, int] = {}
        for r_idx, word, _ in matches:
            if preds[r_idx].kind is PredictorKind.COPY_TEXT and r_idx not in copy_off:
                k = preds[r_idx].field
                lp = out.copy_lp(k)
                copy_off[r_idx] = size
                pieces.append(lp)
                size += lp.value.shape[0]
        zero_off = size
        pieces.append(zero)
        pd = PositionDists(out.pred_lp.value.copy(), out.char_lp.value.copy(),
                           {preds[r].field: out.copy_lp(preds[r].field).value.copy() for r in copy_off})
        dists.append(pd)
        pred_idx = [char_r]
        seg_idx = [len(preds) + target]
        end = t + 1
        edges.append(Edge(t, end, char_r, None, (units[t],) if t < n else (EOS,),
                          float(pd.pred_lp[char_r]), float(pd.char_lp[target])))
        for r_idx, word, L in matches:
            pred_idx.append(r_idx)
            if word is None:
                seg_idx.append(zero_off)
                seg_lp = 0.0
            else:
                seg_idx.append(copy_off[r_idx] + word)
                seg_lp = float(pd.copy_lp[preds[r_idx].field][word])
            edges.append(Edge(t, t + L, r_idx, word, units[t:t + L], float(pd.pred_lp[r_idx]), seg_lp))
        if len(pieces) == 3 and not matches:
            # CHAR only at this position: skip the concat
            s = tape.add(tape.pick(out.pred_lp, char_r), tape.gather(out.char_lp, [target]))
        else:
            u = tape.concat(pieces)
            s = tape.add(tape.gather(u, pred_idx), tape.gather(u, seg_idx))
        edge_scores.append(s)
        state = (out.h, out.c)
        if t < n:
            prev = model.unit_id(units[t])
    lattice = SegLattice(units, preds, edges, dists, fields)
    return LatticeRun(lattice, _tape_forward(tape, lattice, edge_scores))


def _tape_forward(tape: Tape, lattice: SegLattice, edge_scores: list[Var]) -> Var:
    # edges were appended position by position, so an edge's slot in the
    # flattened score vector equals its index in lattice.edges
    flat = edge_scores[0] if len(edge_scores) == 1 else tape.concat(edge_scores)
    alpha: list[Var | None] = [None] * (lattice.final + 1)
    alpha[0] = tape.const(0.0)
    inc = lattice.incoming()
    for j in range(1, lattice.final + 1):
        ids = [e for e in inc[j] if alpha[lattice.edges[e].start] is not None]
        if not ids:
            continue
        if len(ids) == 1:
            e = ids[0]
            alpha[j] = tape.add(alpha[lattice.edges[e].start], tape.pick(flat, e))
        else:
            prev = tape.stack([alpha[lattice.edges[e].start] for e in ids])
            alpha[j] = tape.logsumexp(tape.add(prev, tape.gather(flat, ids)))
    if alpha[lattice.final] is None:
        return tape.const(-np.inf)
    return alpha[lattice.final]


def build_lattice(model: LPNModel, fields: Sequence[Field], units: Sequence[str]) -> SegLattice:
    tape = Tape(model.params, record=False)
    return run_lattice(model, tape, fields, units).lattice


# numeric dynamic programs over a built lattice ----------------------------


def _lse(values: list[float]) -> float:
    if not values:
        return -math.inf
    m = max(values)
    if m == -math.inf:
        return m
    return m + math.log(sum(math.exp(v - m) for v in values))


def forward_marginal(lattice: SegLattice) -> float:
    """``log P(y|x)``: log-sum over every edge path from position 0 to the end."""
    return forward_backward(lattice)[0][lattice.final]


def forward_backward(lattice: SegLattice) -> tuple[np.ndarray, np.ndarray]:
    """Log prefix (alpha) and suffix (beta) sums per position."""
    size = lattice.final + 1
    alpha = np.full(size, -np.inf)
    beta = np.full(size, -np.inf)
    alpha[0] = 0.0
    inc, out = lattice.incoming(), lattice.outgoing()
    edges = lattice.edges
    for j in range(1, size):
        alpha[j] = _lse([alpha[edges[e].start] + edges[e].logp for e in inc[j]])
    beta[lattice.final] = 0.0
    for j in range(size - 2, -1, -1):
        beta[j] = _lse([edges[e].logp + beta[edges[e].end] for e in out[j]])
    return alpha, beta


def edge_posteriors(lattice: SegLattice) -> np.ndarray:
    """Posterior probability of each edge, ``alpha_start * edge * beta_end / P(y|x)``."""
    alpha, beta = forward_backward(lattice)
    total = alpha[lattice.final]
    if total == -np.inf:
        raise LatticeError("no segmentation generates the target")
    return np.array([math.exp(alpha[e.start] + e.logp + beta[e.end] - total) for e in lattice.edges])


def posterior_segmentation(lattice: SegLattice) -> list[Edge]:
    """Most probable single path (max-product)."""
    size = lattice.final + 1
    best = np.full(size, -np.inf)
    back: list[int | None] = [None] * size
    best[0] = 0.0
    inc = lattice.incoming()
    for j in range(1, size):
        for e in inc[j]:
            edge = lattice.edges[e]
            s = best[edge.start] + edge.logp
            if s > best[j]:
                best[j], back[j] = s, e
    if best[lattice.final] == -np.inf:
        raise LatticeError("no segmentation generates the target")
    path = []
    j = lattice.final
    while j > 0:
        edge = lattice.edges[back[j]]
        path.append(edge)
        j = edge.start
    return path[::-1]


def count_paths(lattice: SegLattice, start: int = 0) -> int:
    """Number of edge paths from ``start`` to the final position."""
    ways = [0] * (lattice.final + 1)
    ways[lattice.final] = 1
    out = lattice.outgoing()
    for j in range(lattice.final - 1, start - 1, -1):
        ways[j] = sum(ways[lattice.edges[e].end] for e in out[j])
    return ways[start]


# brute-force oracle --------------------------------------------------------


@dataclass(frozen=True)
class Segment:
    start: int
    predictor: int
    word: int | None
    text: str


def enumerate_segmentations(units: Sequence[str], fields: Sequence[Field],
                            predictors: Sequence[Predictor], start: int = 0) -> Iterator[list[Segment]]:
    """Every way to write ``units[start:]`` as a sequence of predictor outputs.

    Works from the target string and the field values directly, not from a
    lattice; the terminal EOS step is implied and not listed.
    """
    units = tuple(units)
    n = len(units)

    def rec(t: int):
        if t == n:
            yield []
            return
        options = [Segment(t, 0, None, units[t])]
        for r_idx, r in enumerate(predictors):
            if r.kind is PredictorKind.CHAR:
                continue
            f = fields[r.field]
            cands = [(None, f.tokens[0])] if r.kind is PredictorKind.COPY_SINGULAR else list(enumerate(f.tokens))
            for word, tok in cands:
                if tok == NIL:
                    continue
                if "".join(units[t:t + len(tok)]) == tok and all(len(u) == 1 for u in units[t:t + len(tok)]):
                    options.append(Segment(t, r_idx, word, tok))
        for seg in options:
            for rest in rec(t + len(seg.text)):
                yield [seg] + rest

    yield from rec(start)


def segmentation_logp(seg: list[Segment], lattice: SegLattice, vocab: Vocab) -> float:
    """``log P(y, omega | x)`` of one enumerated segmentation, read from the
    per-position distributions stored on the lattice."""
    total = 0.0
    for s in seg:
        d = lattice.dists[s.start]
        total += d.pred_lp[s.predictor]
        r = lattice.predictors[s.predictor]
        if r.kind is PredictorKind.CHAR:
            total += d.char_lp[vocab.unit_to_id.get(s.text, vocab.unk)]
        elif r.kind is PredictorKind.COPY_TEXT:
            total += d.copy_lp[r.field][s.word]
    end = lattice.dists[lattice.n]
    return total + end.pred_lp[0] + end.char_lp[vocab.eos]


def brute_force_marginal(lattice: SegLattice, vocab: Vocab) -> float:
    logs = [segmentation_logp(s, lattice, vocab)
            for s in enumerate_segmentations(lattice.units, lattice.fields, lattice.predictors)]
    return _lse(logs)


# training objective --------------------------------------------------------


class NonFiniteLoss(FloatingPointError):
    pass


def example_loss(model: LPNModel, tape: Tape, example_id: str, fields, units, rng=None) -> tuple[Var, SegLattice]:
    run = run_lattice(model, tape, fields, units, rng)
    loss = tape.scale(run.log_marginal, -1.0)
    if not np.isfinite(loss.value):
        raise NonFiniteLoss(f"example {example_id!r}: non-finite loss {float(loss.value)}")
    return loss, run.lattice


def loss_and_gradients(model: LPNModel, example_id: str, fields, units, rng=None):
    """Negative log marginal likelihood and its gradient for every parameter."""
    tape = Tape(model.params)
    loss, _ = example_loss(model, tape, example_id, fields, units, rng)
    return float(loss.value), backward(tape, loss)


def lattice_report(lattice: SegLattice) -> str:
    """Plain-text dump: one line per edge with log-probs and posterior."""
    post = edge_posteriors(lattice)
    alpha, beta = forward_backward(lattice)
    lines = [f"target length {lattice.n}, edges {len(lattice.edges)}, log P(y|x) = {alpha[lattice.final]:.6f}"]
    for e, p in zip(lattice.edges, post):
        r = lattice.predictors[e.predictor]
        who = r.kind.value if r.field is None else f"{r.kind.value}:{r.name}"
        if e.word is not None:
            who += f"[{e.word}]"
        lines.append(f"{e.start:5d} -> {e.end:5d}  {who:28s} {''.join(e.units)!r:24s} "
                     f"logP(r)={e.pred_lp:9.4f} logP(s)={e.seg_lp:9.4f} post={p:.4f}")
    return "\n".join(lines)


def copy_spans(lattice: SegLattice) -> list[dict]:
    """Copied segments on the Viterbi path, for highlight reports."""
    spans = []
    for e in posterior_segmentation(lattice):
        r = lattice.predictors[e.predictor]
        if r.kind is not PredictorKind.CHAR:
            spans.append({"start": e.start, "end": e.end, "field": r.name, "text": "".join(e.units)})
    return spans
