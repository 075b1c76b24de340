"""Synthetic card corpora with copy-heavy targets.

Cards get random pronounceable names, small integer stats and a one- or
two-clause effect text; the code embeds the name, the stats and the effect
amounts, so most of each target can be copied from the input.  Names are drawn
fresh per card, so held-out cards carry names never seen in training.
"""

from __future__ import annotations

import numpy as np

from .corpus import Example, Schema, make_field

SCHEMA = Schema.from_dict({
    "name": "synthetic-cards",
    "fields": [
        {"name": "name", "kind": "text"},
        {"name": "cost", "kind": "singular"},
        {"name": "attack", "kind": "singular"},
        {"name": "health", "kind": "singular"},
        {"name": "rarity", "kind": "singular"},
        {"name": "description", "kind": "text"},
    ],
})

_ONSETS = ["b", "br", "d", "dr", "f", "g", "gr", "k", "l", "m", "n", "p", "r", "s", "st", "t", "th", "v", "z"]
_VOWELS = ["a", "e", "i", "o", "u", "ai", "ou"]
_CODAS = ["", "", "n", "r", "s", "l", "th", "x"]
RARITIES = ["COMMON", "RARE", "EPIC", "LEGENDARY"]
EFFECTS = [
    ("Deal {} damage", "damage"),
    ("Draw {} cards", "draw"),
    ("Gain {} armor", "armor"),
    ("Restore {} health", "heal"),
]


def random_word(rng, syllables: int | None = None) -> str:
    n = syllables or int(rng.integers(2, 4))
    word = "".join(_ONSETS[rng.integers(len(_ONSETS))] + _VOWELS[rng.integers(len(_VOWELS))]
                   + _CODAS[rng.integers(len(_CODAS))] for _ in range(n))
    return word.capitalize()


def random_card(rng, idx: int, split: str = "train", clauses: int | None = None) -> Example:
    words = int(rng.integers(1, 3))
    name = " ".join(random_word(rng) for _ in range(words))
    cost, attack, health = (int(v) for v in rng.integers(0, 10, size=3))
    rarity = RARITIES[rng.integers(len(RARITIES))]
    k = clauses or int(rng.integers(1, 3))
    picks = rng.choice(len(EFFECTS), size=k, replace=False)
    amounts = [int(v) for v in rng.integers(1, 10, size=k)]
    text = " and ".join(EFFECTS[p][0].format(a) for p, a in zip(picks, amounts)) + "."
    effect = ";".join(f"{EFFECTS[p][1]}({a})" for p, a in zip(picks, amounts))
    code = f"init('{name}',{cost},{attack},{health},{rarity}):{effect}"
    values = {"name": name, "cost": cost, "attack": attack, "health": health, "rarity": rarity,
              "description": text}
    fields = tuple(make_field(spec, values[spec.name], SCHEMA.exceptions) for spec in SCHEMA.fields)
    return Example(f"card{idx:04d}", fields, code, split)


def card_corpus(n: int, seed: int = 0, test_fraction: float = 0.2, valid_fraction: float = 0.0,
                clauses: int | None = None) -> list[Example]:
    rng = np.random.default_rng(seed)
    n_test = int(round(n * test_fraction))
    n_valid = int(round(n * valid_fraction))
    out = []
    for i in range(n):
        split = "test" if i >= n - n_test else ("valid" if i >= n - n_test - n_valid else "train")
        out.append(random_card(rng, i, split, clauses))
    return out
