"""Token-level BLEU-4, exact match, and the Levenshtein retrieval baseline."""

from __future__ import annotations

import logging
import math
import unicodedata
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

from .corpus import Example, Field

log = logging.getLogger(__name__)


def eval_tokenize(code: str) -> list[str]:
    """Split on whitespace and on every punctuation/symbol character except ``_``."""
    out: list[str] = []
    for chunk in code.split():
        word = []
        for ch in chunk:
            if ch != "_" and unicodedata.category(ch)[0] in "PS":
                if word:
                    out.append("".join(word))
                    word = []
                out.append(ch)
            else:
                word.append(ch)
        if word:
            out.append("".join(word))
    return out


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu_stats(candidate: Sequence[str], reference: Sequence[str], max_n: int = 4) -> list[int]:
    """[cand_len, ref_len, match_1, total_1, ..., match_n, total_n]"""
    stats = [len(candidate), len(reference)]
    for n in range(1, max_n + 1):
        cand = _ngrams(candidate, n)
        ref = _ngrams(reference, n)
        stats.append(sum(min(c, ref[g]) for g, c in cand.items()))
        stats.append(max(len(candidate) - n + 1, 0))
    return stats


def bleu_from_stats(stats: Sequence[int], max_n: int = 4) -> float:
    c, r = stats[0], stats[1]
    if c == 0:
        return 0.0
    log_p = 0.0
    for n in range(max_n):
        match, total = stats[2 + 2 * n], stats[3 + 2 * n]
        if match == 0 or total == 0:
            return 0.0
        log_p += math.log(match / total) / max_n
    bp = 1.0 if c > r else math.exp(1.0 - r / c)
    return 100.0 * bp * math.exp(log_p)


def bleu4(candidates: Sequence[Sequence[str]], references: Sequence[Sequence[str]]) -> float:
    """Unsmoothed corpus BLEU-4 (single reference per candidate), as a percentage."""
    if len(candidates) != len(references):
        raise ValueError(f"{len(candidates)} candidates but {len(references)} references")
    if not candidates:
        log.warning("BLEU on an empty corpus is 0")
        return 0.0
    total = [0] * 10
    for cand, ref in zip(candidates, references):
        for i, v in enumerate(bleu_stats(cand, ref)):
            total[i] += v
    return bleu_from_stats(total)


def sentence_bleu(candidate: Sequence[str], reference: Sequence[str]) -> float:
    return bleu_from_stats(bleu_stats(candidate, reference))


def exact_accuracy(preds: Sequence[str], golds: Sequence[str]) -> float:
    if len(preds) != len(golds):
        raise ValueError(f"{len(preds)} predictions but {len(golds)} references")
    if not preds:
        return 0.0
    return 100.0 * sum(p == g for p, g in zip(preds, golds)) / len(preds)


@dataclass
class EvalReport:
    bleu4: float
    exact_accuracy: float
    examples: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"bleu4": round(self.bleu4, 1), "exact_accuracy": round(self.exact_accuracy, 1),
                "bleu4_raw": self.bleu4, "exact_accuracy_raw": self.exact_accuracy,
                "examples": self.examples}


def evaluate(ids: Sequence[str], preds: Sequence[str], golds: Sequence[str]) -> EvalReport:
    cand = [eval_tokenize(p) for p in preds]
    ref = [eval_tokenize(g) for g in golds]
    records = [{"id": i, "bleu": sentence_bleu(c, r), "match": p == g}
               for i, c, r, p, g in zip(ids, cand, ref, preds, golds)]
    return EvalReport(bleu4(cand, ref), exact_accuracy(preds, golds), records)


def levenshtein(a: str, b: str) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        for j, cb in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def field_distance(query: Sequence[Field], other: Sequence[Field]) -> float:
    """Mean per-field edit distance between space-joined token strings."""
    if [f.name for f in query] != [f.name for f in other]:
        raise ValueError("schema mismatch between query and candidate fields")
    return sum(levenshtein(q.text, o.text) for q, o in zip(query, other)) / len(query)


def retrieve_nearest(query: Sequence[Field], train: Sequence[Example]) -> Example:
    """Training example with the smallest average field distance; ties go to the smallest id."""
    if not train:
        raise ValueError("retrieval needs a non-empty training set")
    return min(train, key=lambda ex: (field_distance(query, ex.fields), ex.id))
