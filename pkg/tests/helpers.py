"""Shared oracles for the test suite."""

import numpy as np

from lpncode.config import ModelDims, RunConfig
from lpncode.corpus import Example, Schema, build_vocab, make_field


def numeric_grad(f, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite differences of scalar ``f()`` with respect to array ``x`` (mutated in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + step
        fp = f()
        x[i] = old - step
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * step)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom == 0.0:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


TINY_DIMS = ModelDims(char_emb=3, c2w_hidden=3, word_dim=4, text_hidden=3, common=4,
                      attn_hidden=3, out_emb=3, dec_hidden=4, pointer_hidden=3)

FIG4_SCHEMA = Schema.from_dict({
    "name": "fig4",
    "fields": [
        {"name": "name", "kind": "text"},
        {"name": "cost", "kind": "singular"},
        {"name": "attack", "kind": "singular"},
        {"name": "health", "kind": "singular"},
    ],
})
FIG4_VALUES = {"name": "Tirion Fordring", "cost": "8", "attack": "6", "health": "6"}
FIG4_CODE = "init('Tirion Fordring',8,6,6)"


def fields_for(schema: Schema, values: dict):
    return tuple(make_field(spec, values[spec.name], schema.exceptions) for spec in schema.fields)


def fig4_example() -> Example:
    return Example("tirion", fields_for(FIG4_SCHEMA, FIG4_VALUES), FIG4_CODE)


def tiny_config(**kw) -> RunConfig:
    base = dict(dims=TINY_DIMS, seed=3, init_scale=0.5, unk_singleton_prob=0.0)
    base.update(kw)
    return RunConfig(**base).validate()


def fig4_model(**kw):
    from lpncode.lpn import LPNModel

    ex = fig4_example()
    vocab = build_vocab([ex], 0.0)
    return LPNModel(tiny_config(**kw), FIG4_SCHEMA, vocab), ex


def random_instance(seed: int, max_len: int = 12, alphabet: str = "abc", path_cap: int = 5000):
    """Random small (model, fields, target) with >= 3 predictors and some copyable spans.

    Targets are assembled from field tokens and loose characters so copy edges
    actually occur; instances with too many segmentations are shortened.
    """
    from lpncode.lpn import LPNModel, build_lattice, count_paths

    rng = np.random.default_rng(seed)

    def word(lo, hi):
        return "".join(alphabet[i] for i in rng.integers(len(alphabet), size=int(rng.integers(lo, hi + 1))))

    n_text = int(rng.integers(1, 3))
    specs = [{"name": "s0", "kind": "singular"}] + [{"name": f"t{k}", "kind": "text"} for k in range(n_text)]
    if rng.random() < 0.5:
        specs.append({"name": "s1", "kind": "singular"})
    schema = Schema.from_dict({"fields": specs})
    values = {}
    for s in specs:
        if s["kind"] == "singular":
            values[s["name"]] = word(1, 3)
        else:
            values[s["name"]] = " ".join(word(1, 3) for _ in range(int(rng.integers(1, 4))))
    fields = fields_for(schema, values)
    pool = [t for f in fields for t in f.tokens]
    target = ""
    goal = int(rng.integers(1, max_len + 1))
    while len(target) < goal:
        piece = pool[rng.integers(len(pool))] if rng.random() < 0.6 else word(1, 2)
        target += piece
    target = target[:goal]
    ex = Example(f"r{seed}", fields, target)
    # CHAR covers the whole alphabet, so no target unit falls back to UNK
    vocab = build_vocab([ex], 0.0, [tuple(alphabet)])
    cfg = tiny_config(seed=seed, init_scale=float(rng.uniform(0.3, 1.0)))
    model = LPNModel(cfg, schema, vocab)
    lattice = build_lattice(model, fields, tuple(target))
    while count_paths(lattice) > path_cap:
        target = target[:-1]
        lattice = build_lattice(model, fields, tuple(target))
    return model, fields, tuple(target), lattice
