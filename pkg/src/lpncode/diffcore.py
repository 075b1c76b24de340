"""Small reverse-mode autodiff engine over float64 numpy arrays.

Graphs are built per example on a :class:`Tape`.  Every op computes its value
eagerly and, when the tape is recording, pushes a closure that maps the output
gradient to input gradients.  :func:`backward` walks the tape once in reverse.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Raised when an op receives inputs with incompatible shapes."""

    def __init__(self, op: str, *shapes):
        self.op = op
        self.shapes = tuple(tuple(s) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in self.shapes)}")


class NonFiniteError(FloatingPointError):
    pass


class Params:
    """Named trainable arrays.

    Initialization is uniform in [-scale, scale] from a seeded generator so a
    given (seed, creation order) pair always yields the same values.
    """

    def __init__(self, seed: int = 0, scale: float = 0.08):
        self.arrays: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.rng = np.random.default_rng(seed)
        self.scale = scale

    def add(self, name: str, shape: Sequence[int], init: str = "uniform") -> np.ndarray:
        if name in self.arrays:
            raise KeyError(f"duplicate parameter {name!r}")
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise ShapeError("param:" + name, shape)
        if init == "zeros":
            arr = np.zeros(shape, dtype=DTYPE)
        else:
            arr = self.rng.uniform(-self.scale, self.scale, size=shape).astype(DTYPE)
        self.arrays[name] = arr
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self.arrays

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def zeros_like(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.arrays.items())

    def copy(self) -> "Params":
        other = Params.__new__(Params)
        other.arrays = OrderedDict((k, v.copy()) for k, v in self.arrays.items())
        other.rng = np.random.default_rng(0)
        other.scale = self.scale
        return other

    def count(self) -> int:
        return int(sum(v.size for v in self.arrays.values()))


class Var:
    __slots__ = ("tape", "idx", "value")

    def __init__(self, tape: "Tape", idx: int, value: np.ndarray):
        self.tape = tape
        self.idx = idx
        self.value = value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(#{self.idx}, shape={self.value.shape})"

    # operator sugar; keeps model code readable
    def __add__(self, other):
        return self.tape.add(self, other)

    def __mul__(self, other):
        return self.tape.mul(self, other)

    def __matmul__(self, other):
        return self.tape.matmul(self, other)

    def __getitem__(self, idx):
        return self.tape.pick(self, idx)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _logsumexp(x: np.ndarray) -> np.ndarray:
    m = np.max(x, axis=-1, keepdims=True)
    if not np.all(np.isfinite(m)):
        m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        return np.log(np.sum(np.exp(x - m), axis=-1)) + m[..., 0]


class Tape:
    """Records op results and backward closures in topological order.

    With ``record=False`` only values are computed, which is what the decoder
    uses at inference time.
    """

    def __init__(self, params: Params | None = None, record: bool = True, check_finite: bool = False):
        self.params = params
        self.record = record
        self.check_finite = check_finite
        self.values: list[np.ndarray] = []
        self.parents: list[tuple[int, ...]] = []
        self.backfns: list[Callable | None] = []
        self.kinds: list[str] = []
        self.param_nodes: dict[str, int] = {}

    def __len__(self):
        return len(self.values)

    def _push(self, kind: str, value, parents: tuple = (), backfn=None) -> Var:
        value = np.asarray(value, dtype=DTYPE)
        if self.check_finite and not np.all(np.isfinite(value)):
            raise NonFiniteError(f"{kind} produced a non-finite value")
        idx = len(self.values)
        self.values.append(value)
        self.kinds.append(kind)
        if self.record:
            self.parents.append(tuple(p.idx for p in parents))
            self.backfns.append(backfn)
        else:
            self.parents.append(())
            self.backfns.append(None)
        return Var(self, idx, value)

    def _lift(self, x) -> Var:
        if isinstance(x, Var):
            return x
        return self.const(x)

    # leaves ---------------------------------------------------------------

    def const(self, value) -> Var:
        return self._push("const", np.array(value, dtype=DTYPE))

    def param(self, name: str) -> Var:
        idx = self.param_nodes.get(name)
        if idx is not None:
            return Var(self, idx, self.values[idx])
        var = self._push("param", self.params[name])
        self.param_nodes[name] = var.idx
        return var

    # elementwise ------------------------------------------------------------

    def add(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        try:
            out = a.value + b.value
        except ValueError:
            raise ShapeError("add", a.shape, b.shape) from None
        sa, sb = a.shape, b.shape
        return self._push("add", out, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))

    def sub(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        try:
            out = a.value - b.value
        except ValueError:
            raise ShapeError("sub", a.shape, b.shape) from None
        sa, sb = a.shape, b.shape
        return self._push("sub", out, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))

    def mul(self, a, b) -> Var:
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        try:
            out = av * bv
        except ValueError:
            raise ShapeError("mul", a.shape, b.shape) from None
        return self._push(
            "mul", out, (a, b),
            lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape)),
        )

    def scale(self, a: Var, c: float) -> Var:
        return self._push("scale", a.value * c, (a,), lambda g: (g * c,))

    def tanh(self, a: Var) -> Var:
        y = np.tanh(a.value)
        return self._push("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))

    def sigmoid(self, a: Var) -> Var:
        y = _sigmoid(a.value)
        return self._push("sigmoid", y, (a,), lambda g: (g * y * (1.0 - y),))

    # linear algebra -----------------------------------------------------

    def matmul(self, a, b) -> Var:
        """numpy ``@`` semantics for 1-D and 2-D operands."""
        a, b = self._lift(a), self._lift(b)
        av, bv = a.value, b.value
        if av.ndim not in (1, 2) or bv.ndim not in (1, 2) or av.shape[-1] != bv.shape[0]:
            raise ShapeError("matmul", av.shape, bv.shape)
        out = av @ bv

        def back(g):
            if av.ndim == 2 and bv.ndim == 2:
                return g @ bv.T, av.T @ g
            if av.ndim == 2:  # matrix-vector
                return np.outer(g, bv), av.T @ g
            if bv.ndim == 2:  # vector-matrix
                return bv @ g, np.outer(av, g)
            return g * bv, g * av  # dot product

        return self._push("matmul", out, (a, b), back)

    def matvec(self, w: Var, x: Var) -> Var:
        if w.value.ndim != 2 or x.value.ndim != 1:
            raise ShapeError("matvec", w.shape, x.shape)
        return self.matmul(w, x)

    def affine(self, w: Var, x: Var, b: Var) -> Var:
        """``x @ w.T + b`` for a vector or a stack of row vectors."""
        wv, xv, bv = w.value, x.value, b.value
        if wv.ndim != 2 or xv.shape[-1] != wv.shape[1] or bv.shape != (wv.shape[0],):
            raise ShapeError("affine", wv.shape, xv.shape, bv.shape)
        out = xv @ wv.T + bv

        def back(g):
            if xv.ndim == 1:
                return np.outer(g, xv), g @ wv, g
            return g.T @ xv, g @ wv, g.sum(axis=0)

        return self._push("affine", out, (w, x, b), back)

    # structure ------------------------------------------------------------

    def concat(self, parts: Sequence[Var], axis: int = -1) -> Var:
        parts = [self._lift(p) for p in parts]
        vals = [p.value for p in parts]
        try:
            out = np.concatenate(vals, axis=axis)
        except ValueError:
            raise ShapeError("concat", *[v.shape for v in vals]) from None
        splits = np.cumsum([v.shape[axis] for v in vals])[:-1]
        return self._push("concat", out, tuple(parts), lambda g: tuple(np.split(g, splits, axis=axis)))

    def stack(self, parts: Sequence[Var]) -> Var:
        parts = [self._lift(p) for p in parts]
        try:
            out = np.stack([p.value for p in parts])
        except ValueError:
            raise ShapeError("stack", *[p.shape for p in parts]) from None
        return self._push("stack", out, tuple(parts), lambda g: tuple(g))

    def lookup(self, table: Var, rows) -> Var:
        """Row lookup; ``rows`` is an int or an int array."""
        tv = table.value
        rows_arr = np.asarray(rows)
        if tv.ndim != 2 or np.any(rows_arr < 0) or np.any(rows_arr >= tv.shape[0]):
            raise ShapeError("lookup", tv.shape, rows_arr.shape)
        out = tv[rows_arr]
        shape = tv.shape

        def back(g):
            full = np.zeros(shape, dtype=DTYPE)
            np.add.at(full, rows_arr, g)
            return (full,)

        return self._push("lookup", out, (table,), back)

    def gather(self, vec: Var, index) -> Var:
        """Index the last axis of a vector; scalar index yields a 0-d value."""
        vv = vec.value
        idx = np.asarray(index, dtype=np.intp)
        if vv.ndim != 1 or (idx.size and (idx.min() < 0 or idx.max() >= vv.shape[0])):
            raise ShapeError("gather", vv.shape, idx.shape)
        out = vv[idx]
        n = vv.shape[0]

        def back(g):
            full = np.zeros(n, dtype=DTYPE)
            np.add.at(full, idx, g)
            return (full,)

        return self._push("gather", out, (vec,), back)

    def pick(self, vec: Var, index: int) -> Var:
        return self.gather(vec, int(index))

    def slice(self, vec: Var, start: int, stop: int) -> Var:
        vv = vec.value
        if not 0 <= start < stop <= vv.shape[-1]:
            raise ShapeError("slice", vv.shape, (start, stop))
        shape = vv.shape

        def back(g):
            full = np.zeros(shape, dtype=DTYPE)
            full[..., start:stop] = g
            return (full,)

        return self._push("slice", vv[..., start:stop], (vec,), back)

    def reshape(self, a: Var, shape) -> Var:
        old = a.shape
        try:
            out = a.value.reshape(shape)
        except ValueError:
            raise ShapeError("reshape", old, tuple(shape)) from None
        return self._push("reshape", out, (a,), lambda g: (g.reshape(old),))

    def sum(self, a: Var) -> Var:
        shape = a.shape
        return self._push("sum", np.sum(a.value), (a,), lambda g: (np.broadcast_to(g, shape).copy(),))

    # normalizers ------------------------------------------------------------

    def softmax(self, a: Var) -> Var:
        x = a.value
        e = np.exp(x - np.max(x, axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)

        def back(g):
            return (y * (g - np.sum(g * y, axis=-1, keepdims=True)),)

        return self._push("softmax", y, (a,), back)

    def log_softmax(self, a: Var) -> Var:
        x = a.value
        y = x - _logsumexp(x)[..., None]
        p = np.exp(y)

        def back(g):
            return (g - p * np.sum(g, axis=-1, keepdims=True),)

        return self._push("log_softmax", y, (a,), back)

    def logsumexp(self, a: Var) -> Var:
        """Reduce the last axis.  ``-inf`` entries are allowed and get zero gradient."""
        x = a.value
        y = _logsumexp(x)
        if np.all(np.isfinite(y)):
            p = np.exp(x - y[..., None])
        else:
            p = np.zeros_like(x)

        def back(g):
            return (np.asarray(g)[..., None] * p,)

        return self._push("logsumexp", y, (a,), back)

    # fused recurrent cell ---------------------------------------------------

    def lstm_cell(self, w: Var, b: Var, x: Var, h: Var, c: Var, mask=None) -> tuple[Var, Var]:
        """One LSTM step, gates ordered (input, forget, output, candidate).

        ``w`` has shape (4H, X+H).  Inputs may be single vectors or stacks of
        rows.  Rows where the optional constant ``mask`` is 0 carry their
        previous state through unchanged.
        """
        wv, bv, xv, hv, cv = w.value, b.value, x.value, h.value, c.value
        H = hv.shape[-1]
        X = xv.shape[-1]
        if (wv.shape != (4 * H, X + H) or bv.shape != (4 * H,) or cv.shape != hv.shape
                or xv.shape[:-1] != hv.shape[:-1]):
            raise ShapeError("lstm_cell", wv.shape, bv.shape, xv.shape, hv.shape, cv.shape)
        xh = np.concatenate([xv, hv], axis=-1)
        pre = xh @ wv.T + bv
        ig = _sigmoid(pre[..., :H])
        fg = _sigmoid(pre[..., H:2 * H])
        og = _sigmoid(pre[..., 2 * H:3 * H])
        cand = np.tanh(pre[..., 3 * H:])
        c_new = fg * cv + ig * cand
        tc = np.tanh(c_new)
        h_new = og * tc
        if mask is not None:
            m = np.asarray(mask, dtype=DTYPE).reshape(hv.shape[:-1] + (1,))
            h_new = m * h_new + (1.0 - m) * hv
            c_new = m * c_new + (1.0 - m) * cv
        else:
            m = None
        out = np.concatenate([h_new, c_new], axis=-1)

        def back(g):
            gh, gc = g[..., :H], g[..., H:]
            if m is not None:
                gh_pass, gc_pass = (1.0 - m) * gh, (1.0 - m) * gc
                gh, gc = m * gh, m * gc
            gc_tot = gc + gh * og * (1.0 - tc * tc)
            d_og = gh * tc * og * (1.0 - og)
            d_fg = gc_tot * cv * fg * (1.0 - fg)
            d_ig = gc_tot * cand * ig * (1.0 - ig)
            d_cand = gc_tot * ig * (1.0 - cand * cand)
            dpre = np.concatenate([d_ig, d_fg, d_og, d_cand], axis=-1)
            if dpre.ndim == 1:
                dw = np.outer(dpre, xh)
                db = dpre
            else:
                dw = dpre.T @ xh
                db = dpre.sum(axis=0)
            dxh = dpre @ wv
            dx, dh = dxh[..., :X], dxh[..., X:]
            dc = gc_tot * fg
            if m is not None:
                dh = dh + gh_pass
                dc = dc + gc_pass
            return dw, db, dx, dh, dc

        state = self._push("lstm_cell", out, (w, b, x, h, c), back)
        return self.slice(state, 0, H), self.slice(state, H, 2 * H)


def forward_op(tape: Tape, kind: str, *inputs, **kwargs) -> Var:
    """Dispatch an op by name, e.g. ``forward_op(t, "tanh", x)``."""
    fn = getattr(tape, kind, None)
    if fn is None or kind.startswith("_"):
        raise ValueError(f"unknown op kind {kind!r}")
    return fn(*inputs, **kwargs)


class BackwardStats:
    visited = 0


def backward(tape: Tape, loss: Var, stats: BackwardStats | None = None) -> "OrderedDict[str, np.ndarray]":
    """Gradient of scalar ``loss`` with respect to every array in ``tape.params``.

    Parameters that never entered the graph get zero gradient.
    """
    if loss.value.size != 1:
        raise ShapeError("backward", loss.shape)
    if not tape.record:
        raise RuntimeError("tape was not recording")
    n = loss.idx + 1
    grads: list = [None] * n
    grads[loss.idx] = np.ones_like(loss.value)
    visited = 0
    for i in range(n - 1, -1, -1):
        visited += 1
        g = grads[i]
        fn = tape.backfns[i]
        if g is None or fn is None:
            continue
        in_grads = fn(g)
        for p, pg in zip(tape.parents[i], in_grads):
            if grads[p] is None:
                grads[p] = pg
            else:
                grads[p] = grads[p] + pg
    if stats is not None:
        stats.visited = visited
    out: "OrderedDict[str, np.ndarray]" = OrderedDict()
    if tape.params is not None:
        for name, arr in tape.params.items():
            idx = tape.param_nodes.get(name)
            g = grads[idx] if idx is not None and idx < n else None
            out[name] = np.zeros_like(arr) if g is None else np.asarray(g, dtype=DTYPE).reshape(arr.shape)
    return out


def lstm_step(tape: Tape, prefix: str, x: Var, state: tuple[Var, Var], mask=None) -> tuple[Var, Var]:
    """Run the LSTM whose weights are stored as ``{prefix}.w`` / ``{prefix}.b``."""
    h, c = state
    return tape.lstm_cell(tape.param(prefix + ".w"), tape.param(prefix + ".b"), x, h, c, mask)


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: "OrderedDict[str, np.ndarray]", max_norm: float) -> float:
    norm = global_norm(grads.values())
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for k in grads:
            grads[k] *= factor
    return norm


class AdaDelta:
    """Zeiler's AdaDelta.  No learning rate; state is two running averages per array."""

    def __init__(self, params: Params, rho: float = 0.95, eps: float = 1e-6):
        self.rho = rho
        self.eps = eps
        self.sq_grad = params.zeros_like()
        self.sq_delta = params.zeros_like()

    def step(self, params: Params, grads) -> None:
        for name, g in grads.items():
            adadelta_update(params[name], g, self.sq_grad[name], self.sq_delta[name], self.rho, self.eps)


def adadelta_update(param: np.ndarray, grad: np.ndarray, sq_grad: np.ndarray,
                    sq_delta: np.ndarray, rho: float, eps: float) -> np.ndarray:
    """In-place AdaDelta step on one array; returns the applied delta."""
    if not (param.shape == grad.shape == sq_grad.shape == sq_delta.shape):
        raise ShapeError("adadelta_update", param.shape, grad.shape, sq_grad.shape, sq_delta.shape)
    sq_grad *= rho
    sq_grad += (1.0 - rho) * grad * grad
    delta = -np.sqrt(sq_delta + eps) / np.sqrt(sq_grad + eps) * grad
    sq_delta *= rho
    sq_delta += (1.0 - rho) * delta * delta
    param += delta
    return delta
