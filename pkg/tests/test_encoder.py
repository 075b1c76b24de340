import numpy as np
import pytest

from helpers import TINY_DIMS, fields_for, numeric_grad, rel_error
from lpncode.corpus import Example, Schema, build_vocab
from lpncode.diffcore import Params, Tape, backward
from lpncode.encoder import attend, embed_token_c2w, encode_input, init_encoder_params

FIG3 = Schema.from_dict({"fields": [
    {"name": "cost", "kind": "singular"},
    {"name": "attack", "kind": "singular"},
    {"name": "name", "kind": "text"},
]})


def _setup(schema, values, embedding="c2w", attention="structured", seed=0, scale=0.5):
    fields = fields_for(schema, values)
    vocab = build_vocab([Example("e", fields, "x")], 0.0)
    p = Params(seed, scale)
    init_encoder_params(p, TINY_DIMS, vocab, embedding, attention)
    return p, fields, vocab


def _encode(p, fields, vocab, embedding="c2w", attention="structured"):
    t = Tape(p, record=False)
    return t, encode_input(t, fields, vocab, TINY_DIMS, embedding, attention)


class TestC2W:
    def test_zero_weights_single_char(self):
        p, fields, vocab = _setup(FIG3, {"cost": "8", "attack": "6", "name": "Tirion"})
        for k in p:
            p.arrays[k][:] = 0.0
        t = Tape(p)
        np.testing.assert_array_equal(embed_token_c2w(t, "8", vocab, TINY_DIMS).value, np.zeros(TINY_DIMS.word_dim))

    def test_pure_and_case_sensitive(self):
        p, fields, vocab = _setup(FIG3, {"cost": "8", "attack": "6", "name": "Fordring fordring"}, seed=2)
        t = Tape(p)
        a = embed_token_c2w(t, "Fordring", vocab, TINY_DIMS).value
        b = embed_token_c2w(t, "Fordring", vocab, TINY_DIMS).value
        c = embed_token_c2w(t, "fordring", vocab, TINY_DIMS).value
        np.testing.assert_array_equal(a, b)
        assert not np.allclose(a, c)

    def test_unknown_chars_use_reserved_id(self):
        p, fields, vocab = _setup(FIG3, {"cost": "8", "attack": "6", "name": "ab"})
        t = Tape(p)
        np.testing.assert_array_equal(embed_token_c2w(t, "é", vocab, TINY_DIMS).value,
                                      embed_token_c2w(t, "ü", vocab, TINY_DIMS).value)


class TestEncodeInput:
    values = {"cost": "8", "attack": "6", "name": "Tirion Fordring"}

    @pytest.mark.parametrize("embedding", ["c2w", "lookup"])
    def test_fig3_row_count(self, embedding):
        p, fields, vocab = _setup(FIG3, self.values, embedding)
        _, enc = _encode(p, fields, vocab, embedding)
        assert enc.matrix.value.shape == (4, TINY_DIMS.common)
        assert [list(r) for r in enc.rows] == [[0], [1], [2, 3]]

    def test_empty_text_field_is_one_nil_row(self):
        p, fields, vocab = _setup(FIG3, {"cost": "8", "attack": "6", "name": ""})
        _, enc = _encode(p, fields, vocab)
        assert enc.n_rows == 3 and fields[2].tokens == ("NIL",)

    def test_rerun_identical(self):
        p, fields, vocab = _setup(FIG3, self.values)
        _, a = _encode(p, fields, vocab)
        _, b = _encode(p, fields, vocab)
        np.testing.assert_array_equal(a.matrix.value, b.matrix.value)

    def test_unknown_lookup_word_maps_to_unk(self):
        p, fields, vocab = _setup(FIG3, self.values, "lookup")
        other = fields_for(FIG3, {"cost": "8", "attack": "6", "name": "Tirion Zzz"})
        _, enc = _encode(p, other, vocab, "lookup")
        assert np.all(np.isfinite(enc.matrix.value))

    @pytest.mark.parametrize("kind", ["singular", "text"])
    def test_permuting_same_kind_fields_permutes_rows(self, kind):
        schema = Schema.from_dict({"fields": [
            {"name": "a", "kind": kind}, {"name": "b", "kind": kind}, {"name": "c", "kind": "text"}]})
        swapped = Schema.from_dict({"fields": [
            {"name": "b", "kind": kind}, {"name": "a", "kind": kind}, {"name": "c", "kind": "text"}]})
        vals = {"a": "x1 y", "b": "zz", "c": "q r"} if kind == "text" else {"a": "7", "b": "9", "c": "q r"}
        p, fields, vocab = _setup(schema, vals, seed=5)
        _, enc = _encode(p, fields, vocab)
        _, enc2 = _encode(p, fields_for(swapped, vals), vocab)
        m, m2 = enc.matrix.value, enc2.matrix.value
        na, nb = len(enc.rows[0]), len(enc.rows[1])
        np.testing.assert_array_equal(m2[:nb], m[na:na + nb])
        np.testing.assert_array_equal(m2[nb:na + nb], m[:na])
        np.testing.assert_array_equal(m2[na + nb:], m[na + nb:])


class TestAttend:
    values = {"cost": "8", "attack": "6", "name": "Tirion Fordring"}

    def test_zero_affinity_uniform(self):
        p, fields, vocab = _setup(FIG3, self.values)
        p.arrays["att.v"][:] = 0.0
        t, enc = _encode(p, fields, vocab)
        z, a = attend(t, enc, t.const(np.ones(TINY_DIMS.dec_hidden)))
        np.testing.assert_allclose(a.value, np.full(4, 0.25), atol=1e-15)
        np.testing.assert_allclose(z.value, enc.matrix.value.mean(axis=0), atol=1e-14)

    @pytest.mark.parametrize("seed", range(5))
    def test_joint_distribution(self, seed):
        p, fields, vocab = _setup(FIG3, self.values, seed=seed, scale=2.0)
        t, enc = _encode(p, fields, vocab)
        h = t.const(np.random.default_rng(seed).normal(size=TINY_DIMS.dec_hidden))
        _, a = attend(t, enc, h)
        assert a.value.shape == (4,)
        assert abs(a.value.sum() - 1.0) <= 1e-12 and np.all(a.value > 0)

    def test_single_token(self):
        schema = Schema.from_dict({"fields": [{"name": "cost", "kind": "singular"}]})
        p, fields, vocab = _setup(schema, {"cost": "5"})
        t, enc = _encode(p, fields, vocab)
        z, a = attend(t, enc, t.const(np.ones(TINY_DIMS.dec_hidden)))
        np.testing.assert_array_equal(a.value, [1.0])
        np.testing.assert_array_equal(z.value, enc.matrix.value[0])

    def test_sequence_mode_has_fixed_context(self):
        p, fields, vocab = _setup(FIG3, self.values, attention="none")
        t, enc = _encode(p, fields, vocab, attention="none")
        z1, _ = attend(t, enc, t.const(np.zeros(TINY_DIMS.dec_hidden)))
        z2, _ = attend(t, enc, t.const(np.ones(TINY_DIMS.dec_hidden)))
        np.testing.assert_array_equal(z1.value, z2.value)
        assert enc.n_rows == 4


@pytest.mark.parametrize("embedding", ["c2w", "lookup"])
@pytest.mark.parametrize("attention", ["structured", "none"])
def test_gradients_of_context_vector(embedding, attention):
    p, fields, vocab = _setup(FIG3, {"cost": "8", "attack": "6", "name": "Tirion Fordring"},
                              embedding, attention, seed=11)
    h = np.random.default_rng(0).normal(size=TINY_DIMS.dec_hidden)
    w = np.random.default_rng(1).normal(size=TINY_DIMS.common)

    def build(t):
        enc = encode_input(t, fields, vocab, TINY_DIMS, embedding, attention)
        z, _ = attend(t, enc, t.const(h))
        return t.matmul(z, t.const(w))

    tape = Tape(p)
    grads = backward(tape, build(tape))
    for name, arr in p.items():
        num = numeric_grad(lambda: float(build(Tape(p, record=False)).value), arr)
        assert rel_error(grads[name], num) <= 1e-4, name
