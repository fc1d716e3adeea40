"""Recognition quality metrics: edit distance, CER, WER, alphabet overlap."""

from __future__ import annotations

from dataclasses import dataclass

from .alphabet import Alphabet
from .errors import ContractError


def levenshtein(a: str, b: str) -> int:
    """Minimum insert/delete/substitute edits, unit costs."""
    if a == b:
        return 0
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class EvalReport:
    cer: float
    wer: float
    edits: list
    sample_count: int

    def as_dict(self) -> dict:
        return {
            "cer": self.cer,
            "wer": self.wer,
            "edits": list(self.edits),
            "sample_count": self.sample_count,
        }


def cer(refs, hyps) -> float:
    """Corpus-level character error rate, percent.

    Sum of edit distances over sum of reference lengths; this weights long
    words by their length instead of averaging per-sample ratios.
    """
    if len(refs) != len(hyps):
        raise ContractError("cer: refs and hyps differ in length")
    total_len = sum(len(r) for r in refs)
    if total_len == 0:
        raise ContractError("cer: empty reference corpus")
    total_edits = sum(levenshtein(r, h) for r, h in zip(refs, hyps))
    return 100.0 * total_edits / total_len


def wer(refs, hyps) -> float:
    """Exact-match word error rate, percent (samples are single words)."""
    if len(refs) != len(hyps):
        raise ContractError("wer: refs and hyps differ in length")
    if not refs:
        raise ContractError("wer: empty corpus")
    wrong = sum(1 for r, h in zip(refs, hyps) if r != h)
    return 100.0 * wrong / len(refs)


def evaluate_pairs(refs, hyps) -> EvalReport:
    edits = [levenshtein(r, h) for r, h in zip(refs, hyps)]
    return EvalReport(cer=cer(refs, hyps), wer=wer(refs, hyps), edits=edits, sample_count=len(refs))


def alphabet_overlap(source: Alphabet, target: Alphabet) -> int:
    """ceil(100 * |source ∩ target| / |target|), via integer arithmetic."""
    inter = len(set(source.chars) & set(target.chars))
    return -(-100 * inter // len(target.chars))
