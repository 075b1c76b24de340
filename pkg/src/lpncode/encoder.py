"""Input encoding and structured attention.

Every input token becomes a row ``f(x_ki)`` in one common space: singular
tokens go embedding -> singular projection, text tokens go embedding ->
Bi-LSTM over their field -> text projection.  Attention scores all rows of all
fields jointly with ``v(f, h) = w . tanh(Wf f + Wh h + b)``.

With ``attention="none"`` the fields are concatenated into one token sequence,
a single Bi-LSTM runs over it, and the context vector is a fixed projection of
its final states (a plain sequence-to-sequence encoder).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import ModelDims
from .corpus import Field, FieldKind, Vocab
from .diffcore import Params, Tape, Var, lstm_step


def init_encoder_params(params: Params, dims: ModelDims, vocab: Vocab, embedding: str, attention: str) -> None:
    d = dims
    if embedding == "c2w":
        params.add("enc.c2w.emb", (len(vocab.in_chars), d.char_emb))
        params.add("enc.c2w.fwd.w", (4 * d.c2w_hidden, d.char_emb + d.c2w_hidden))
        params.add("enc.c2w.fwd.b", (4 * d.c2w_hidden,))
        params.add("enc.c2w.bwd.w", (4 * d.c2w_hidden, d.char_emb + d.c2w_hidden))
        params.add("enc.c2w.bwd.b", (4 * d.c2w_hidden,))
        params.add("enc.c2w.out.w", (d.word_dim, 2 * d.c2w_hidden))
        params.add("enc.c2w.out.b", (d.word_dim,))
    else:
        params.add("enc.lookup", (len(vocab.words), d.word_dim))
    params.add("enc.ctx.fwd.w", (4 * d.text_hidden, d.word_dim + d.text_hidden))
    params.add("enc.ctx.fwd.b", (4 * d.text_hidden,))
    params.add("enc.ctx.bwd.w", (4 * d.text_hidden, d.word_dim + d.text_hidden))
    params.add("enc.ctx.bwd.b", (4 * d.text_hidden,))
    if attention == "structured":
        params.add("enc.proj.singular.w", (d.common, d.word_dim))
        params.add("enc.proj.singular.b", (d.common,))
        params.add("enc.proj.text.w", (d.common, 2 * d.text_hidden))
        params.add("enc.proj.text.b", (d.common,))
        params.add("att.wf", (d.attn_hidden, d.common))
        params.add("att.wh", (d.attn_hidden, d.dec_hidden))
        params.add("att.b", (d.attn_hidden,))
        params.add("att.v", (d.attn_hidden,))
    else:
        params.add("enc.proj.seq.w", (d.common, 2 * d.text_hidden))
        params.add("enc.proj.seq.b", (d.common,))
        params.add("enc.seq.z.w", (d.common, 2 * d.text_hidden))
        params.add("enc.seq.z.b", (d.common,))


@dataclass
class EncodedInput:
    """Projected rows for every (field, token) pair, in field order.

    ``rows[k]`` holds the row indices of field ``k`` inside ``matrix``.
    ``att_keys`` caches ``Wf f + b`` for every row; ``fixed_z`` is set only for
    the attention-free encoder.
    """

    matrix: Var
    rows: list[np.ndarray]
    fields: tuple[Field, ...]
    att_keys: Var | None = None
    fixed_z: Var | None = None

    @property
    def n_rows(self) -> int:
        return self.matrix.value.shape[0]

    def index(self, k: int, i: int) -> int:
        return int(self.rows[k][i])


def _char_matrix(tokens: list[str], vocab: Vocab, reverse: bool) -> tuple[np.ndarray, np.ndarray]:
    longest = max(len(t) for t in tokens)
    ids = np.zeros((len(tokens), longest), dtype=np.intp)
    mask = np.zeros((len(tokens), longest))
    for r, tok in enumerate(tokens):
        chars = tok[::-1] if reverse else tok
        ids[r, :len(chars)] = [vocab.in_char_id(c) for c in chars]
        mask[r, :len(chars)] = 1.0
    return ids, mask


def embed_tokens_c2w(tape: Tape, tokens: list[str], vocab: Vocab, dims: ModelDims) -> Var:
    """C2W vectors for a batch of tokens, one row each.

    Forward and backward character LSTMs run over all tokens at once; shorter
    tokens are masked so their state freezes after their last character.
    """
    if any(len(t) == 0 for t in tokens):
        raise ValueError("C2W needs non-empty tokens")
    emb = tape.param("enc.c2w.emb")
    finals = []
    for direction, reverse in (("fwd", False), ("bwd", True)):
        ids, mask = _char_matrix(tokens, vocab, reverse)
        h = tape.const(np.zeros((len(tokens), dims.c2w_hidden)))
        c = h
        for step in range(ids.shape[1]):
            x = tape.lookup(emb, ids[:, step])
            m = None if mask[:, step].all() else mask[:, step]
            h, c = lstm_step(tape, f"enc.c2w.{direction}", x, (h, c), m)
        finals.append(h)
    return tape.affine(tape.param("enc.c2w.out.w"), tape.concat(finals, axis=-1), tape.param("enc.c2w.out.b"))


def embed_token_c2w(tape: Tape, token: str, vocab: Vocab, dims: ModelDims) -> Var:
    return tape.lookup(embed_tokens_c2w(tape, [token], vocab, dims), 0)


def _bilstm(tape: Tape, prefix: str, emb: Var, seqs: list[list[int]], hidden: int) -> tuple[Var, Var, Var]:
    """Bi-LSTM over several sequences of rows of ``emb`` batched together.

    Returns (outputs, last_fwd, last_bwd) where ``outputs`` has one row per
    sequence element, in sequence order, holding ``[fwd; bwd]``.
    """
    n_seq = len(seqs)
    longest = max(len(s) for s in seqs)
    per_dir = []
    lasts = []
    for direction, reverse in (("fwd", False), ("bwd", True)):
        h = tape.const(np.zeros((n_seq, hidden)))
        c = h
        outs = []
        for step in range(longest):
            idx = np.zeros(n_seq, dtype=np.intp)
            mask = np.zeros(n_seq)
            for r, s in enumerate(seqs):
                if step < len(s):
                    idx[r] = s[len(s) - 1 - step] if reverse else s[step]
                    mask[r] = 1.0
            x = tape.lookup(emb, idx)
            h, c = lstm_step(tape, f"{prefix}.{direction}", x, (h, c), None if mask.all() else mask)
            outs.append(h)
        lasts.append(h)
        # (step, seq) -> flat row step * n_seq + seq
        flat = tape.reshape(tape.stack(outs), (longest * n_seq, hidden))
        order = []
        for r, s in enumerate(seqs):
            for j in range(len(s)):
                step = len(s) - 1 - j if reverse else j
                order.append(step * n_seq + r)
        per_dir.append(tape.lookup(flat, np.array(order, dtype=np.intp)))
    return tape.concat(per_dir, axis=-1), lasts[0], lasts[1]


def token_embeddings(tape: Tape, fields: tuple[Field, ...], vocab: Vocab, dims: ModelDims,
                     embedding: str, rng=None) -> tuple[Var, dict[str, int]]:
    """One row per distinct token string of the example, plus a token -> row map.

    In lookup mode ``rng`` enables stochastic replacement of singletons by UNK.
    """
    distinct = sorted({tok for f in fields for tok in f.tokens})
    where = {tok: r for r, tok in enumerate(distinct)}
    if embedding == "c2w":
        return embed_tokens_c2w(tape, distinct, vocab, dims), where
    if rng is not None:
        ids = [vocab.training_word_id(t, rng) for t in distinct]
    else:
        ids = [vocab.word_id(t) for t in distinct]
    return tape.lookup(tape.param("enc.lookup"), np.array(ids, dtype=np.intp)), where


def encode_input(tape: Tape, fields: tuple[Field, ...], vocab: Vocab, dims: ModelDims,
                 embedding: str = "c2w", attention: str = "structured", rng=None) -> EncodedInput:
    emb, where = token_embeddings(tape, fields, vocab, dims, embedding, rng)
    if attention == "none":
        seq = [where[t] for f in fields for t in f.tokens]
        out, last_f, last_b = _bilstm(tape, "enc.ctx", emb, [seq], dims.text_hidden)
        matrix = tape.affine(tape.param("enc.proj.seq.w"), out, tape.param("enc.proj.seq.b"))
        final = tape.reshape(tape.concat([last_f, last_b], axis=-1), (2 * dims.text_hidden,))
        z = tape.affine(tape.param("enc.seq.z.w"), final, tape.param("enc.seq.z.b"))
        rows, start = [], 0
        for f in fields:
            rows.append(np.arange(start, start + len(f.tokens)))
            start += len(f.tokens)
        return EncodedInput(matrix, rows, fields, fixed_z=z)

    blocks = []
    placement: list[np.ndarray] = []
    offset = 0
    sing = [k for k, f in enumerate(fields) if f.kind is FieldKind.SINGULAR]
    text = [k for k, f in enumerate(fields) if f.kind is FieldKind.TEXT]
    rows: list[np.ndarray] = [np.empty(0, dtype=np.intp)] * len(fields)
    if sing:
        idx = np.array([where[fields[k].tokens[0]] for k in sing], dtype=np.intp)
        s_emb = tape.lookup(emb, idx)
        blocks.append(tape.affine(tape.param("enc.proj.singular.w"), s_emb, tape.param("enc.proj.singular.b")))
        for j, k in enumerate(sing):
            rows[k] = np.array([offset + j])
        offset += len(sing)
    if text:
        seqs = [[where[t] for t in fields[k].tokens] for k in text]
        out, _, _ = _bilstm(tape, "enc.ctx", emb, seqs, dims.text_hidden)
        blocks.append(tape.affine(tape.param("enc.proj.text.w"), out, tape.param("enc.proj.text.b")))
        for k, s in zip(text, seqs):
            rows[k] = np.arange(offset, offset + len(s))
            offset += len(s)
    stacked = blocks[0] if len(blocks) == 1 else tape.concat(blocks, axis=0)
    # reorder so rows follow field order
    order = np.concatenate([rows[k] for k in range(len(fields))])
    matrix = tape.lookup(stacked, order)
    new_rows, start = [], 0
    for f in fields:
        new_rows.append(np.arange(start, start + len(f.tokens)))
        start += len(f.tokens)
    keys = tape.affine(tape.param("att.wf"), matrix, tape.param("att.b"))
    return EncodedInput(matrix, new_rows, fields, att_keys=keys)


def attend(tape: Tape, enc: EncodedInput, h_prev: Var) -> tuple[Var, Var]:
    """Context vector and joint attention weights over every input row."""
    if enc.fixed_z is not None:
        n = enc.n_rows
        return enc.fixed_z, tape.const(np.full(n, 1.0 / n))
    e = tape.tanh(tape.add(enc.att_keys, tape.matmul(tape.param("att.wh"), h_prev)))
    a = tape.softmax(tape.matmul(e, tape.param("att.v")))
    return tape.matmul(a, enc.matrix), a
