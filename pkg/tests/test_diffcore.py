import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from helpers import numeric_grad, rel_error
from lpncode.checkpoint import CheckpointError, load_arrays, save_arrays
from lpncode.diffcore import (
    AdaDelta,
    BackwardStats,
    NonFiniteError,
    Params,
    ShapeError,
    Tape,
    adadelta_update,
    backward,
    clip_by_global_norm,
    forward_op,
    lstm_step,
)


def _check(build, params: Params, tol=1e-4):
    """Analytic vs central-difference gradient of scalar ``build(tape)`` for every param."""

    def f():
        t = Tape(params)
        return float(build(t).value)

    tape = Tape(params)
    grads = backward(tape, build(tape))
    for name, arr in params.items():
        num = numeric_grad(f, arr)
        assert rel_error(grads[name], num) <= tol, name


def _params(seed=0, **shapes):
    p = Params(seed, scale=1.0)
    for name, shape in shapes.items():
        p.add(name, shape)
    return p


class TestForwardExamples:
    def test_tanh_zero(self):
        t = Tape()
        assert forward_op(t, "tanh", t.const([0.0])).value.tolist() == [0.0]

    def test_softmax_symmetric(self):
        t = Tape()
        np.testing.assert_array_equal(t.softmax(t.const([0.0, 0.0])).value, [0.5, 0.5])

    def test_logsumexp_normalized(self):
        t = Tape()
        v = t.logsumexp(t.const([math.log(0.3), math.log(0.7)])).value
        assert abs(float(v)) < 1e-15

    def test_shape_error_names_op(self):
        t = Tape()
        with pytest.raises(ShapeError) as err:
            t.matmul(t.const(np.ones((2, 3))), t.const(np.ones(2)))
        assert err.value.op == "matmul"
        assert err.value.shapes == ((2, 3), (2,))

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            forward_op(Tape(), "conv2d")

    def test_check_finite(self):
        t = Tape(check_finite=True)
        with pytest.raises(NonFiniteError):
            t.logsumexp(t.const([-np.inf, -np.inf]))


class TestBackwardExamples:
    def test_linear(self):
        p = Params()
        p.arrays["w"] = np.array([3.0, 4.0])
        t = Tape(p)
        loss = t.matmul(t.param("w"), t.const([1.0, 2.0]))
        np.testing.assert_array_equal(backward(t, loss)["w"], [1.0, 2.0])

    def test_logsumexp_equal_inputs(self):
        p = Params()
        p.arrays["x"] = np.array([1.7, 1.7])
        t = Tape(p)
        g = backward(t, t.logsumexp(t.param("x")))["x"]
        np.testing.assert_allclose(g, [0.5, 0.5], atol=1e-15)

    def test_unused_param_gets_zero(self):
        p = _params(a=(3,), b=(2, 2))
        t = Tape(p)
        g = backward(t, t.sum(t.param("a")))
        np.testing.assert_array_equal(g["b"], np.zeros((2, 2)))
        np.testing.assert_array_equal(g["a"], np.ones(3))

    def test_non_scalar_loss(self):
        p = _params(a=(3,))
        t = Tape(p)
        with pytest.raises(ShapeError):
            backward(t, t.param("a"))

    def test_visits_every_node_once(self):
        p = _params(w=(4, 4), x=(4,))
        t = Tape(p)
        h = t.param("x")
        for _ in range(5):
            h = t.tanh(t.matmul(t.param("w"), h))
        loss = t.sum(h)
        stats = BackwardStats()
        backward(t, loss, stats)
        assert stats.visited == len(t)


class TestFiniteDifferences:
    """Every op kind against central differences at step 1e-5, tolerance 1e-4."""

    def test_elementwise(self):
        p = _params(a=(3, 4), b=(4,))
        _check(lambda t: t.sum(t.mul(t.tanh(t.add(t.param("a"), t.param("b"))),
                                     t.sigmoid(t.sub(t.param("b"), t.param("a"))))), p)

    def test_scale_reshape(self):
        p = _params(a=(2, 3))
        _check(lambda t: t.sum(t.tanh(t.reshape(t.scale(t.param("a"), -1.5), (3, 2)))), p)

    def test_matmul_all_ranks(self):
        p = _params(m=(3, 4), n=(4, 2), v=(4,), u=(3,))
        _check(lambda t: t.sum(t.tanh(t.matmul(t.param("m"), t.param("n")))), p)
        _check(lambda t: t.sum(t.tanh(t.matmul(t.param("m"), t.param("v")))), p)
        _check(lambda t: t.sum(t.tanh(t.matmul(t.param("u"), t.param("m")))), p)
        _check(lambda t: t.tanh(t.matmul(t.param("v"), t.param("v"))), p)

    def test_affine(self):
        p = _params(w=(3, 4), b=(3,), x=(4,), xs=(5, 4))
        _check(lambda t: t.sum(t.tanh(t.affine(t.param("w"), t.param("x"), t.param("b")))), p)
        _check(lambda t: t.sum(t.tanh(t.affine(t.param("w"), t.param("xs"), t.param("b")))), p)

    def test_concat_stack(self):
        p = _params(a=(3,), b=(2,), m=(2, 3))
        _check(lambda t: t.sum(t.tanh(t.concat([t.param("a"), t.param("b"), t.param("a")]))), p)
        _check(lambda t: t.sum(t.tanh(t.concat([t.param("m"), t.param("m")], axis=0))), p)
        _check(lambda t: t.sum(t.tanh(t.stack([t.param("a"), t.scale(t.param("a"), 2.0)]))), p)

    def test_lookup_gather_slice(self):
        p = _params(table=(5, 3), v=(6,))
        _check(lambda t: t.sum(t.tanh(t.lookup(t.param("table"), np.array([1, 3, 1])))), p)
        _check(lambda t: t.sum(t.tanh(t.lookup(t.param("table"), 4))), p)
        _check(lambda t: t.sum(t.tanh(t.gather(t.param("v"), [0, 5, 5, 2]))), p)
        _check(lambda t: t.tanh(t.pick(t.param("v"), 3)), p)
        _check(lambda t: t.sum(t.tanh(t.slice(t.param("v"), 1, 4))), p)

    def test_normalizers(self):
        p = _params(x=(5,), m=(2, 4), w=(5,))
        _check(lambda t: t.matmul(t.softmax(t.param("x")), t.param("w")), p)
        _check(lambda t: t.matmul(t.log_softmax(t.param("x")), t.param("w")), p)
        _check(lambda t: t.logsumexp(t.mul(t.param("x"), t.param("w"))), p)
        _check(lambda t: t.sum(t.tanh(t.log_softmax(t.param("m")))), p)
        _check(lambda t: t.sum(t.logsumexp(t.param("m"))), p)

    def test_logsumexp_with_neg_inf_entry(self):
        p = _params(x=(3,))
        _check(lambda t: t.logsumexp(t.concat([t.param("x"), t.const([-np.inf])])), p)

    @pytest.mark.parametrize("batched", [False, True])
    @pytest.mark.parametrize("masked", [False, True])
    def test_lstm_cell(self, batched, masked):
        rows = (3,) if batched else ()
        p = _params(seed=4, w=(8, 5), b=(8,), x=rows + (3,), h=rows + (2,), c=rows + (2,))
        mask = np.array([1.0, 0.0, 1.0]) if (batched and masked) else None

        def build(t):
            h, c = t.lstm_cell(t.param("w"), t.param("b"), t.param("x"), t.param("h"), t.param("c"), mask)
            h2, c2 = t.lstm_cell(t.param("w"), t.param("b"), t.param("x"), h, c, mask)
            return t.sum(t.add(t.tanh(h2), t.mul(c2, c2)))

        _check(build, p)


def _lstm_reference(w, b, x, h, c):
    """Gate equations written out with plain numpy."""
    H = h.shape[0]
    pre = w @ np.concatenate([x, h]) + b
    sig = lambda v: 1.0 / (1.0 + np.exp(-v))
    i, f, o, g = sig(pre[:H]), sig(pre[H:2 * H]), sig(pre[2 * H:3 * H]), np.tanh(pre[3 * H:])
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


class TestLSTMStep:
    def _params(self, w, b):
        p = Params()
        p.arrays["cell.w"] = np.asarray(w, dtype=float)
        p.arrays["cell.b"] = np.asarray(b, dtype=float)
        return p

    def test_zero_weights_give_zero_hidden(self):
        p = self._params(np.zeros((8, 5)), np.zeros(8))
        t = Tape(p)
        h, c = lstm_step(t, "cell", t.const([1.0, -2.0, 3.0]), (t.const(np.zeros(2)), t.const(np.zeros(2))))
        np.testing.assert_array_equal(h.value, np.zeros(2))

    def test_hand_computed_two_unit_cell(self):
        # 2 hidden units, 1 input: each gate pre-activation hand-evaluated
        w = np.zeros((8, 3))
        b = np.zeros(8)
        w[:, 0] = [0.5, -0.5, 1.0, 0.0, 0.2, 0.1, 0.3, -0.3]
        b[:] = [0.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5]
        p = self._params(w, b)
        t = Tape(p)
        h, c = lstm_step(t, "cell", t.const([2.0]), (t.const([0.0, 0.0]), t.const([1.0, -1.0])))
        sig = lambda v: 1.0 / (1.0 + math.exp(-v))
        # rows are [i0 i1 f0 f1 o0 o1 g0 g1]; pre = 2 * w[:, 0] + b
        # unit 0: i = s(1.0), f = s(2.0), o = s(0.4), g = tanh(1.1)
        c0 = sig(2.0) * 1.0 + sig(1.0) * math.tanh(1.1)
        h0 = sig(0.4) * math.tanh(c0)
        # unit 1: i = s(-0.9), f = s(0.0), o = s(0.2), g = tanh(-0.1)
        c1 = sig(0.0) * -1.0 + sig(-0.9) * math.tanh(-0.1)
        h1 = sig(0.2) * math.tanh(c1)
        np.testing.assert_allclose(c.value, [c0, c1], atol=1e-14)
        np.testing.assert_allclose(h.value, [h0, h1], atol=1e-14)

    def test_matches_reference_and_is_pure(self):
        rng = np.random.default_rng(1)
        w, b = rng.normal(size=(12, 7)), rng.normal(size=12)
        x, h0, c0 = rng.normal(size=4), rng.normal(size=3), rng.normal(size=3)
        p = self._params(w, b)
        outs = []
        for _ in range(2):
            t = Tape(p)
            h, c = lstm_step(t, "cell", t.const(x), (t.const(h0), t.const(c0)))
            outs.append((h.value.copy(), c.value.copy()))
        np.testing.assert_array_equal(outs[0][0], outs[1][0])
        rh, rc = _lstm_reference(w, b, x, h0, c0)
        np.testing.assert_allclose(outs[0][0], rh, atol=1e-13)
        np.testing.assert_allclose(outs[0][1], rc, atol=1e-13)

    def test_dimension_mismatch(self):
        p = self._params(np.zeros((8, 5)), np.zeros(8))
        t = Tape(p)
        with pytest.raises(ShapeError):
            lstm_step(t, "cell", t.const(np.zeros(4)), (t.const(np.zeros(2)), t.const(np.zeros(2))))


class TestAdaDelta:
    def test_zero_gradient(self):
        x = np.array([1.0, -2.0])
        sg, sd = np.array([0.4, 0.2]), np.array([0.1, 0.3])
        adadelta_update(x, np.zeros(2), sg, sd, 0.95, 1e-6)
        np.testing.assert_array_equal(x, [1.0, -2.0])
        np.testing.assert_allclose(sg, [0.38, 0.19], atol=1e-15)
        np.testing.assert_allclose(sd, [0.095, 0.285], atol=1e-15)

    def test_first_step_magnitude(self):
        x, sg, sd = np.zeros(1), np.zeros(1), np.zeros(1)
        delta = adadelta_update(x, np.ones(1), sg, sd, 0.95, 1e-6)
        assert abs(abs(delta[0]) - math.sqrt(1e-6 / (0.05 + 1e-6))) <= 1e-12

    def test_second_identical_step_not_smaller(self):
        x, sg, sd = np.zeros(1), np.zeros(1), np.zeros(1)
        d1 = adadelta_update(x, np.ones(1), sg, sd, 0.95, 1e-6)
        d2 = adadelta_update(x, np.ones(1), sg, sd, 0.95, 1e-6)
        assert abs(d2[0]) >= abs(d1[0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adadelta_update(np.zeros(2), np.zeros(3), np.zeros(2), np.zeros(2), 0.95, 1e-6)

    def test_optimizer_wrapper(self):
        p = _params(a=(2,))
        before = p["a"].copy()
        opt = AdaDelta(p)
        opt.step(p, {"a": np.array([1.0, -1.0])})
        assert np.all(np.sign(p["a"] - before) == [-1.0, 1.0])


def test_clip_by_global_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    norm = clip_by_global_norm(g, 1.0)
    assert norm == 5.0
    np.testing.assert_allclose([g["a"][0], g["b"][0]], [0.6, 0.8])


def test_seeded_init_is_reproducible():
    a, b = Params(7), Params(7)
    for p in (a, b):
        p.add("x", (3, 3))
    np.testing.assert_array_equal(a["x"], b["x"])
    assert np.all(np.abs(a["x"]) <= 0.08)


finite = st.floats(-30, 30, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.integers(1, 8), elements=finite))
def test_softmax_properties(x):
    t = Tape()
    s = t.softmax(t.const(x)).value
    assert abs(s.sum() - 1.0) <= 1e-12
    assert np.all(s > 0)
    np.testing.assert_allclose(np.exp(t.log_softmax(t.const(x)).value), s, atol=1e-12, rtol=0)


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(0)
        arrays_in = {"a": rng.normal(size=(3, 4)), "b.c": rng.normal(size=7), "s": np.array([np.pi])}
        path = tmp_path / "x.ckpt"
        save_arrays(path, arrays_in, "digest123", {"epoch": 3})
        out, digest, meta = load_arrays(path)
        assert digest == "digest123" and meta == {"epoch": 3}
        assert list(out) == list(arrays_in)
        for k in arrays_in:
            assert out[k].tobytes() == arrays_in[k].astype("<f8").tobytes()

    def test_rejects_garbage(self, tmp_path):
        path = tmp_path / "bad.ckpt"
        path.write_bytes(b"not a checkpoint")
        with pytest.raises(CheckpointError):
            load_arrays(path)
