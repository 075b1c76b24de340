"""Structured card-style records: schema, tokenization, splits and vocabularies.

Record file format (one JSON object per line)::

    {"id": "divine_favor",
     "split": "train",                      # train | valid | test (default train)
     "fields": [{"name": "name", "kind": "text", "value": "Divine Favor"}, ...],
     "code": "class DivineFavor(SpellCard): ..."}

Schema file (JSON)::

    {"name": "hs",
     "fields": [{"name": "name", "kind": "text"}, {"name": "cost", "kind": "singular"}, ...],
     "exceptions": ["{G}", "{T}"]}
"""

from __future__ import annotations

import json
import re
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

NIL = "NIL"
EOS = "<EOS>"
UNK = "<UNK>"
BOS = "<BOS>"
SPLITS = ("train", "valid", "test")


class CorpusError(ValueError):
    pass


class FieldKind(str, Enum):
    SINGULAR = "singular"
    TEXT = "text"


@dataclass(frozen=True)
class FieldSpec:
    name: str
    kind: FieldKind


@dataclass(frozen=True)
class Schema:
    fields: tuple[FieldSpec, ...]
    exceptions: tuple[str, ...] = ()
    name: str = ""

    @classmethod
    def from_dict(cls, d: dict) -> "Schema":
        specs = tuple(FieldSpec(f["name"], FieldKind(f["kind"].lower())) for f in d["fields"])
        names = [s.name for s in specs]
        if len(set(names)) != len(names):
            raise CorpusError(f"duplicate field names in schema: {names}")
        return cls(specs, tuple(d.get("exceptions", ())), d.get("name", ""))

    @classmethod
    def load(cls, path) -> "Schema":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "fields": [{"name": f.name, "kind": f.kind.value} for f in self.fields],
            "exceptions": list(self.exceptions),
        }

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.fields]


@dataclass(frozen=True)
class Field:
    name: str
    kind: FieldKind
    tokens: tuple[str, ...]

    def __post_init__(self):
        if not self.tokens:
            raise CorpusError(f"field {self.name!r} has no tokens")
        if self.kind is FieldKind.SINGULAR and len(self.tokens) != 1:
            raise CorpusError(f"singular field {self.name!r} must hold exactly one token")

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class Example:
    id: str
    fields: tuple[Field, ...]
    target: str
    split: str = "train"

    def field(self, name: str) -> Field:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch)[0] in "PS"


def _split_plain(text: str, keep: str = "") -> list[str]:
    out: list[str] = []
    for chunk in text.split():
        word = []
        for ch in chunk:
            if _is_punct(ch) and ch not in keep:
                if word:
                    out.append("".join(word))
                    word = []
                out.append(ch)
            else:
                word.append(ch)
        if word:
            out.append("".join(word))
    return out


def tokenize_text_field(raw: str, exceptions: Sequence[str] = ()) -> list[str]:
    """Split on whitespace and on every punctuation/symbol character.

    Exception literals (e.g. ``"{G}"``) survive as single tokens.  Empty input
    gives ``["NIL"]``.
    """
    tokens: list[str] = []
    if exceptions:
        pattern = re.compile("|".join(re.escape(e) for e in sorted(exceptions, key=len, reverse=True)))
        pos = 0
        for m in pattern.finditer(raw):
            tokens.extend(_split_plain(raw[pos:m.start()]))
            tokens.append(m.group(0))
            pos = m.end()
        tokens.extend(_split_plain(raw[pos:]))
    else:
        tokens = _split_plain(raw)
    return tokens or [NIL]


def make_field(spec: FieldSpec, value, exceptions: Sequence[str] = ()) -> Field:
    raw = "" if value is None else str(value)
    if spec.kind is FieldKind.SINGULAR:
        raw = raw.strip()
        return Field(spec.name, spec.kind, (raw or NIL,))
    return Field(spec.name, spec.kind, tuple(tokenize_text_field(raw, exceptions)))


def example_from_record(rec: dict, schema: Schema, lineno: int | None = None) -> Example:
    where = f" (line {lineno})" if lineno is not None else ""
    if "id" not in rec:
        raise CorpusError(f"record without id{where}")
    ex_id = str(rec["id"])
    given: dict[str, object] = {}
    for f in rec.get("fields", []):
        given[f["name"]] = f.get("value", "")
    fields = []
    for spec in schema.fields:
        if spec.name not in given:
            raise CorpusError(f"example {ex_id!r}: missing required field {spec.name!r}{where}")
        fields.append(make_field(spec, given[spec.name], schema.exceptions))
    split = rec.get("split", "train")
    if split not in SPLITS:
        raise CorpusError(f"example {ex_id!r}: unknown split {split!r}{where}")
    code = rec.get("code")
    if code is None:
        raise CorpusError(f"example {ex_id!r}: missing code{where}")
    return Example(ex_id, tuple(fields), code, split)


def example_to_record(ex: Example) -> dict:
    return {
        "id": ex.id,
        "split": ex.split,
        "fields": [{"name": f.name, "kind": f.kind.value, "value": f.text if f.tokens != (NIL,) else ""}
                   for f in ex.fields],
        "code": ex.target,
    }


def read_records(path) -> list[tuple[int, dict]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}: malformed record on line {lineno}: {exc.msg}") from None
            if not isinstance(rec, dict):
                raise CorpusError(f"{path}: malformed record on line {lineno}: not an object")
            out.append((lineno, rec))
    return out


def load_dataset(path, schema: Schema) -> dict[str, list[Example]]:
    """Read a record file into ``{"train": [...], "valid": [...], "test": [...]}``."""
    splits: dict[str, list[Example]] = {s: [] for s in SPLITS}
    seen: dict[str, str] = {}
    for lineno, rec in read_records(path):
        ex = example_from_record(rec, schema, lineno)
        if ex.id in seen:
            raise CorpusError(f"duplicate example id {ex.id!r} (line {lineno})")
        seen[ex.id] = ex.split
        splits[ex.split].append(ex)
    return splits


def write_dataset(path, examples: Iterable[Example]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(json.dumps(example_to_record(ex), ensure_ascii=False) + "\n")


def split_manifest(splits: dict[str, list[Example]]) -> dict:
    return {
        "splits": {s: [ex.id for ex in splits.get(s, [])] for s in SPLITS},
        "counts": {s: len(splits.get(s, [])) for s in SPLITS},
    }


def write_manifest(path, splits: dict[str, list[Example]]) -> None:
    Path(path).write_text(json.dumps(split_manifest(splits), indent=2, sort_keys=True) + "\n", encoding="utf-8")


@dataclass
class Vocab:
    """Output units, input words and input characters, each with dense ids.

    Output unit ids: 0 is EOS, 1 is UNK.  Input word and input char ids: 0 is UNK.
    """

    units: list[str]
    words: list[str]
    in_chars: list[str]
    singletons: frozenset = field(default_factory=frozenset)
    unk_singleton_prob: float = 0.0

    def __post_init__(self):
        self.unit_to_id = {u: i for i, u in enumerate(self.units)}
        self.word_to_id = {w: i for i, w in enumerate(self.words)}
        self.in_char_to_id = {c: i for i, c in enumerate(self.in_chars)}

    @property
    def eos(self) -> int:
        return 0

    @property
    def unk(self) -> int:
        return 1

    def unit_id(self, u: str) -> int:
        return self.unit_to_id.get(u, 1)

    def word_id(self, w: str) -> int:
        return self.word_to_id.get(w, 0)

    def in_char_id(self, c: str) -> int:
        return self.in_char_to_id.get(c, 0)

    def to_dict(self) -> dict:
        return {"units": self.units, "words": self.words, "in_chars": self.in_chars,
                "singletons": sorted(self.singletons), "unk_singleton_prob": self.unk_singleton_prob}

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(list(d["units"]), list(d["words"]), list(d["in_chars"]), frozenset(d.get("singletons", ())),
                   float(d.get("unk_singleton_prob", 0.0)))

    def training_word_id(self, w: str, rng) -> int:
        """Word id with singletons replaced by UNK at ``unk_singleton_prob``."""
        if self.unk_singleton_prob > 0 and w in self.singletons and rng.random() < self.unk_singleton_prob:
            return 0
        return self.word_id(w)


def build_vocab(train: Sequence[Example], unk_singleton_prob: float = 0.5,
                targets: Sequence[Sequence[str]] | None = None) -> Vocab:
    """Vocabularies from the training split only.

    ``targets`` optionally overrides the output unit sequences (compressed
    corpora carry non-terminal units); by default every target character is a
    unit.
    """
    if not train:
        raise CorpusError("cannot build a vocabulary from an empty training split")
    if targets is None:
        targets = [ex.target for ex in train]
    units = sorted({u for t in targets for u in t})
    counts: Counter = Counter(tok for ex in train for f in ex.fields for tok in f.tokens)
    words = sorted(counts)
    in_chars = sorted({ch for w in words for ch in w})
    singletons = frozenset(w for w, n in counts.items() if n == 1)
    if not 0.0 <= unk_singleton_prob <= 1.0:
        raise CorpusError(f"unk_singleton_prob must be in [0, 1], got {unk_singleton_prob}")
    return Vocab([EOS, UNK] + units, [UNK] + words, [UNK] + in_chars, singletons, unk_singleton_prob)
