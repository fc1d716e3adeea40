"""Edit distance against a recursive oracle, rate definitions, overlap."""

import pytest

from amdadapt.alphabet import Alphabet
from amdadapt.errors import ContractError
from amdadapt.metrics import alphabet_overlap, cer, evaluate_pairs, levenshtein, wer
from amdadapt.rng import Rng
from _oracles import levenshtein_recursive


def _random_string(rng: Rng, max_len: int, chars="abcd") -> str:
    n = rng.randint(max_len + 1)
    return "".join(chars[rng.randint(len(chars))] for _ in range(n))


def test_known_distance():
    assert levenshtein("kitten", "sitting") == 3


def test_matches_recursive_oracle():
    rng = Rng(77)
    for _ in range(300):
        a = _random_string(rng, 12)
        b = _random_string(rng, 12)
        assert levenshtein(a, b) == levenshtein_recursive(a, b), (a, b)


def test_metric_axioms():
    rng = Rng(78)
    strings = [_random_string(rng, 8) for _ in range(12)]
    for a in strings:
        assert levenshtein(a, a) == 0
        for b in strings:
            assert levenshtein(a, b) == levenshtein(b, a)
            assert levenshtein(a, b) >= 0
    for a in strings[:6]:
        for b in strings[:6]:
            for c in strings[:6]:
                assert levenshtein(a, c) <= levenshtein(a, b) + levenshtein(b, c)


def test_empty_string_cases():
    assert levenshtein("", "") == 0
    assert levenshtein("", "abc") == 3
    assert levenshtein("abc", "") == 3


def test_cer_weights_by_reference_length():
    # 1 edit in a 10-char word and 1 edit in a 2-char word: 2/12, not
    # the per-sample average (1/10 + 1/2)/2
    refs = ["aaaaaaaaaa", "bb"]
    hyps = ["aaaaaaaaab", "bc"]
    assert cer(refs, hyps) == pytest.approx(100.0 * 2 / 12)


def test_cer_empty_hypotheses_counts_deletions():
    assert cer(["abcd"], [""]) == 100.0


def test_cer_validation():
    with pytest.raises(ContractError):
        cer(["a"], [])
    with pytest.raises(ContractError):
        cer([""], ["a"])


def test_wer_exact_match_fraction():
    refs = ["one", "two", "three", "four"]
    hyps = ["one", "tw", "three", "fourr"]
    assert wer(refs, hyps) == 50.0
    with pytest.raises(ContractError):
        wer([], [])


def test_evaluate_pairs_bundles_everything():
    rep = evaluate_pairs(["ab", "cd"], ["ab", "ce"])
    assert rep.cer == 25.0
    assert rep.wer == 50.0
    assert rep.edits == [0, 1]
    assert rep.sample_count == 2
    d = rep.as_dict()
    assert d["cer"] == 25.0 and d["edits"] == [0, 1]


def test_alphabet_overlap_rounds_up():
    src = Alphabet("abc")
    assert alphabet_overlap(src, Alphabet("abc")) == 100
    assert alphabet_overlap(src, Alphabet("abz")) == 67  # 2/3 -> 66.7, ceil
    assert alphabet_overlap(src, Alphabet("xyz")) == 0
    assert alphabet_overlap(src, Alphabet("abcdefg")) == 43  # 3/7 -> 42.9
