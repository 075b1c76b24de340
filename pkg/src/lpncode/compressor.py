"""Greedy dictionary compression of a code corpus.

Each round finds the substring ``v`` (length 2..max_len, measured in current
symbols) that maximizes ``(len(v) - 1) * C(v)``, where ``C`` counts
non-overlapping occurrences left to right within each document, and replaces
it everywhere with a fresh symbol.  Documents are sequences of integer symbol
ids: base characters take ids ``0..base_size-1`` (sorted alphabet order) and
every new symbol is the next id above.

Internally each document is held as a ``str`` whose code points are the
symbol ids, so counting and replacement reuse ``str.count``/``str.replace``
(both are non-overlapping, left to right).
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

Symbols = Sequence[int]


class CompressionError(ValueError):
    pass


@dataclass
class SymbolTable:
    """Base alphabet plus ordered replacements ``symbol id -> expansion``."""

    alphabet: str
    entries: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)

    def __post_init__(self):
        self._char_id = {c: i for i, c in enumerate(self.alphabet)}
        self._expansions = {sid: exp for sid, exp in self.entries}

    @property
    def base_size(self) -> int:
        return len(self.alphabet)

    def next_id(self) -> int:
        return self.base_size + len(self.entries)

    def add(self, expansion: Sequence[int]) -> int:
        sid = self.next_id()
        exp = tuple(int(s) for s in expansion)
        if any(s >= sid or s < 0 for s in exp):
            raise CompressionError(f"expansion of {sid} references an unknown or later symbol")
        self.entries.append((sid, exp))
        self._expansions[sid] = exp
        return sid

    def encode(self, text: str) -> list[int]:
        try:
            return [self._char_id[c] for c in text]
        except KeyError as exc:
            raise CompressionError(f"character {exc.args[0]!r} is not in the base alphabet") from None

    def unit(self, sid: int) -> str:
        """Display form used as a model output unit: the character, or ``<Xn>``."""
        if 0 <= sid < self.base_size:
            return self.alphabet[sid]
        if sid in self._expansions:
            return f"<X{sid - self.base_size + 1}>"
        raise CompressionError(f"unknown symbol id {sid}")

    def unit_to_id(self, unit: str) -> int:
        if len(unit) == 1 and unit in self._char_id:
            return self._char_id[unit]
        if unit.startswith("<X") and unit.endswith(">"):
            sid = int(unit[2:-1]) + self.base_size - 1
            if sid in self._expansions:
                return sid
        raise CompressionError(f"unknown unit {unit!r}")

    def units(self, symbols: Symbols) -> list[str]:
        return [self.unit(s) for s in symbols]

    def expand(self, sid: int) -> str:
        return decompress([sid], self)

    # table file -----------------------------------------------------------

    def save(self, path) -> None:
        lines = ["#alphabet\t" + _escape(self.alphabet)]
        for sid, exp in self.entries:
            lines.append(f"{sid}\t{self._escape_symbols(exp)}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")

    @classmethod
    def load(cls, path) -> "SymbolTable":
        text = Path(path).read_text(encoding="utf-8")
        lines = text.split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        if not lines or not lines[0].startswith("#alphabet\t"):
            raise CompressionError(f"{path}: missing alphabet header")
        alphabet = "".join(_unescape(lines[0][len("#alphabet\t"):]))
        table = cls(alphabet)
        for lineno, line in enumerate(lines[1:], 2):
            sid_text, sep, body = line.partition("\t")
            if not sep:
                raise CompressionError(f"{path}: line {lineno}: expected 'id<TAB>expansion'")
            exp = []
            for piece in _unescape(body):
                exp.append(piece if isinstance(piece, int) else table._char_id[piece])
            sid = table.add(exp)
            if sid != int(sid_text):
                raise CompressionError(f"{path}: line {lineno}: symbol ids must be dense, got {sid_text}")
        return table

    def _escape_symbols(self, symbols: Iterable[int]) -> str:
        out = []
        for s in symbols:
            if s < self.base_size:
                out.append(_escape(self.alphabet[s]))
            else:
                out.append("\\{" + str(s) + "}")
        return "".join(out)


# Table escaping: backslash, newline, tab and carriage return are written as
# \\ \n \t \r; a reference to an earlier symbol is written \{id}.
_ESC = {"\\": "\\\\", "\n": "\\n", "\t": "\\t", "\r": "\\r"}
_UNESC = {"\\": "\\", "n": "\n", "t": "\t", "r": "\r"}


def _escape(text: str) -> str:
    return "".join(_ESC.get(c, c) for c in text)


def _unescape(text: str) -> list:
    out: list = []
    i = 0
    while i < len(text):
        c = text[i]
        if c != "\\":
            out.append(c)
            i += 1
            continue
        nxt = text[i + 1] if i + 1 < len(text) else ""
        if nxt in _UNESC:
            out.append(_UNESC[nxt])
            i += 2
        elif nxt == "{":
            end = text.index("}", i)
            out.append(int(text[i + 2:end]))
            i = end + 1
        else:
            raise CompressionError(f"bad escape at offset {i}: {text[i:i + 2]!r}")
    return out


def _to_str(doc: Symbols) -> str:
    return "".join(map(chr, doc))


def _from_str(doc: str) -> list[int]:
    return [ord(c) for c in doc]


def count_occurrences(corpus: Sequence[Symbols], v: Symbols) -> int:
    """Non-overlapping occurrences of ``v``, greedy left to right, summed over documents."""
    if len(v) == 0:
        raise CompressionError("pattern must be non-empty")
    pat = _to_str(v)
    return sum(_to_str(doc).count(pat) for doc in corpus)


def _nonoverlap_count(positions: list[tuple[int, int]], length: int) -> int:
    count = 0
    last_doc, last_end = -1, 0
    for doc, pos in positions:
        if doc != last_doc:
            last_doc, last_end = doc, 0
        if pos >= last_end:
            count += 1
            last_end = pos + length
    return count


def _better(score: int, cand: str, best_score: int, best: str | None) -> bool:
    # higher score, then longer, then lexicographically smaller
    if best is None or score > best_score:
        return True
    if score < best_score:
        return False
    if len(cand) != len(best):
        return len(cand) > len(best)
    return cand < best


def _best_substring_str(docs: Sequence[str], max_len: int) -> tuple[str, int] | None:
    if max_len < 2:
        raise CompressionError("max_len must be >= 2")
    # occurrence positions (overlapping) of every length-2 segment
    occ: dict[str, list[tuple[int, int]]] = defaultdict(list)
    for d, doc in enumerate(docs):
        for p in range(len(doc) - 1):
            occ[doc[p:p + 2]].append((d, p))
    best: str | None = None
    best_score = 0
    s = 2
    while True:
        counts = {}
        for v, positions in occ.items():
            c = _nonoverlap_count(positions, s)
            if c < 2:
                continue
            counts[v] = c
            score = (s - 1) * c
            if _better(score, v, best_score, best):
                best, best_score = v, score
        if s == max_len:
            break
        # keep segments whose best case at max length can still reach the incumbent
        survivors = [v for v, c in counts.items() if (max_len - 1) * c >= best_score]
        if not survivors:
            break
        nxt: dict[str, list[tuple[int, int]]] = defaultdict(list)
        for v in survivors:
            for d, p in occ[v]:
                doc = docs[d]
                if p + s < len(doc):
                    nxt[doc[p:p + s + 1]].append((d, p))
        occ = nxt
        s += 1
    if best is None or best_score <= 0:
        return None
    return best, best_score


def best_substring(corpus: Sequence[Symbols], max_len: int) -> tuple[tuple[int, ...], int] | None:
    """Most compressing repeated substring and its score, or None.

    Only substrings occurring at least twice are candidates.
    """
    found = _best_substring_str([_to_str(d) for d in corpus], max_len)
    if found is None:
        return None
    v, score = found
    return tuple(_from_str(v)), score


def average_length(corpus: Sequence[Symbols]) -> float:
    return sum(len(d) for d in corpus) / len(corpus) if corpus else 0.0


def compress_symbols(corpus: Sequence[Symbols], table: SymbolTable, max_len: int,
                     target_avg_len: float, max_rounds: int | None = None, log=None):
    if target_avg_len <= 0:
        raise CompressionError("target average length must be positive")
    docs = [_to_str(d) for d in corpus]
    rounds = 0
    while docs and sum(map(len, docs)) / len(docs) > target_avg_len:
        if max_rounds is not None and rounds >= max_rounds:
            break
        found = _best_substring_str(docs, max_len)
        if found is None:
            break
        v, score = found
        sid = table.add(_from_str(v))
        sym = chr(sid)
        docs = [doc.replace(v, sym) for doc in docs]
        rounds += 1
        if log is not None:
            log(sid, v, score, sum(map(len, docs)) / len(docs))
    return [_from_str(d) for d in docs]


def compress(corpus: Sequence[str], max_len: int, target_avg_len: float,
             max_rounds: int | None = None, log=None) -> tuple[list[list[int]], SymbolTable]:
    """Compress text documents; returns symbol-id documents and the table."""
    table = SymbolTable("".join(sorted({c for doc in corpus for c in doc})))
    encoded = [table.encode(doc) for doc in corpus]
    return compress_symbols(encoded, table, max_len, target_avg_len, max_rounds, log), table


def decompress(text: Symbols, table: SymbolTable) -> str:
    """Expand every non-terminal, latest first, down to base characters."""
    base = table.base_size
    seq = list(text)
    for s in seq:
        if s < 0 or (s >= base and s not in table._expansions):
            raise CompressionError(f"unknown symbol id {s}")
    doc = _to_str(seq)
    for sid, exp in reversed(table.entries):
        sym = chr(sid)
        if sym in doc:
            doc = doc.replace(sym, _to_str(exp))
    return "".join(table.alphabet[ord(c)] for c in doc)


def compress_with_table(text: str, table: SymbolTable) -> list[int]:
    """Apply an existing table's replacements, in order, to a new document."""
    doc = _to_str(table.encode(text))
    for sid, exp in table.entries:
        doc = doc.replace(_to_str(exp), chr(sid))
    return _from_str(doc)
