import math
import random
from collections import Counter

import pytest
import regex
from hypothesis import given, strategies as st
from sacrebleu.metrics import BLEU

from xmlmt.metrics import (
    NAMED_ENTITIES,
    NAMED_ENTITY_PATTERN,
    NUMBER_PATTERN,
    NUMBERS,
    EvalPair,
    bleu_stats,
    corpus_bleu,
    evaluate,
    extract_ne_num,
    ne_num_precision_recall,
    plain_text,
    split_at_tags,
    strip_xml,
    xml_accuracy,
    xml_bleu,
    xml_match,
)
from xmlmt.xml_model import parse_segment


def ep(h, r):
    return EvalPair(parse_segment(h), parse_segment(r))


def sacre(hyps, refs):
    bleu = BLEU(tokenize="none", smooth_method="none")
    return bleu.corpus_score([" ".join(h) for h in hyps], [[" ".join(r) for r in refs]]).score


class TestStrip:
    def test_examples(self):
        assert plain_text(parse_segment("<b>Save</b> now")) == "Save now"
        assert plain_text(parse_segment("a &lt; b")) == "a < b"
        assert plain_text(parse_segment("plain")) == "plain"

    @given(st.lists(st.sampled_from(["x", "<b>", "</b>", "&amp;", "<i>"]), max_size=10))
    def test_idempotent(self, toks):
        seg = parse_segment(" ".join(toks))
        once = strip_xml(seg)
        assert not any(t.is_tag for t in once.tokens)
        assert strip_xml(once) == once


class TestBleu:
    def test_perfect(self):
        assert corpus_bleu([["a", "b"], ["c", "d", "e", "f", "g"]], [["a", "b"], ["c", "d", "e", "f", "g"]]) == 100.0

    def test_empty_hypotheses(self):
        assert corpus_bleu([[], []], [["a", "b"], ["c"]]) == 0.0

    def test_cat_sat(self):
        # oracle value frozen from sacrebleu: no hypothesis 4-gram, so 0
        assert sacre([["the", "cat", "sat"]], [["the", "cat", "sat", "down"]]) == 0.0
        assert corpus_bleu([["the", "cat", "sat"]], [["the", "cat", "sat", "down"]]) == 0.0

    def test_brevity_penalty_closed_form(self):
        hyp = "a b c d e".split()
        ref = "a b c d e f g h".split()
        assert corpus_bleu([hyp], [ref]) == pytest.approx(100 * math.exp(1 - 8 / 5))

    def test_errors(self):
        with pytest.raises(ValueError):
            corpus_bleu([["a"]], [])
        with pytest.raises(ValueError):
            corpus_bleu([], [])

    def test_stats_additive(self):
        a = bleu_stats(["a", "b"], ["a", "c"])
        b = bleu_stats(["c"], ["c"])
        assert (a + b).hyp_len == 3

    @pytest.mark.parametrize("seed", range(20))
    def test_against_sacrebleu(self, seed):
        rng = random.Random(seed)
        vocab = "a b c d e f".split()
        refs = [[rng.choice(vocab) for _ in range(rng.randint(4, 12))] for _ in range(rng.randint(1, 6))]
        hyps = [[t if rng.random() < 0.7 else rng.choice(vocab) for t in r][: rng.randint(4, len(r) + 1)] for r in refs]
        assert corpus_bleu(hyps, refs) == pytest.approx(sacre(hyps, refs), abs=0.01)

    @given(st.lists(st.tuples(st.lists(st.sampled_from("abc"), max_size=6), st.lists(st.sampled_from("abc"), max_size=6)), min_size=1, max_size=5))
    def test_range(self, pairs):
        hyps, refs = zip(*pairs)
        score = corpus_bleu(hyps, refs)
        assert 0.0 <= score <= 100.0
        if all(h == r for h, r in pairs):
            assert score == 100.0


class TestNeNum:
    def test_time(self):
        assert extract_ne_num("at 12:57 AM", NUMBERS) == Counter({"12:57": 1})
        assert regex.findall(NUMBER_PATTERN, "at 12:57 AM") == ["12:57"]

    def test_named_entities(self):
        assert extract_ne_num("Salesforce の API", NAMED_ENTITIES) == Counter({"Salesforce": 1, "API": 1})
        assert regex.findall(NAMED_ENTITY_PATTERN, "Salesforce の API") == ["Salesforce", "API"]

    def test_none(self):
        assert extract_ne_num("no digits", NUMBERS) == Counter()

    def test_precision_recall_examples(self):
        assert ne_num_precision_recall([ep("12 3", "3 12")]) == (1.0, 1.0)
        assert ne_num_precision_recall([ep("A B", "A")], mode=NAMED_ENTITIES) == (0.5, 1.0)
        assert ne_num_precision_recall([ep("A A", "A")], mode=NAMED_ENTITIES) == (0.5, 1.0)

    def test_zero_denominators(self):
        assert ne_num_precision_recall([ep("x", "y")]) == (1.0, 1.0)

    def test_non_alphabetic_flag(self):
        pairs = [ep("API 3", "API 3 Salesforce")]
        assert ne_num_precision_recall(pairs) == (1.0, 1.0)
        assert ne_num_precision_recall(pairs, non_alphabetic=True) == (1.0, 2 / 3)

    @given(st.text(alphabet="0123456789.,'/:aZ$ Q-", max_size=30))
    def test_patterns_against_regex_module(self, text):
        assert extract_ne_num(text, NUMBERS) == Counter(regex.findall(NUMBER_PATTERN, text))
        assert extract_ne_num(text, NAMED_ENTITIES) == Counter(regex.findall(NAMED_ENTITY_PATTERN, text))

    @given(st.lists(st.sampled_from(["1", "2", "Q", "x"]), max_size=5), st.lists(st.sampled_from(["1", "2", "Q", "x"]), max_size=5))
    def test_swap_symmetry(self, h, r):
        p, rec = ne_num_precision_recall([ep(" ".join(h), " ".join(r))], non_alphabetic=True)
        p2, rec2 = ne_num_precision_recall([ep(" ".join(r), " ".join(h))], non_alphabetic=True)
        assert (p, rec) == (rec2, p2)
        assert 0 <= p <= 1 and 0 <= rec <= 1


class TestXmlFamily:
    def test_accuracy(self):
        assert xml_accuracy([parse_segment("<b>x</b>"), parse_segment("</b> x <b>")]) == 0.5
        assert xml_accuracy([parse_segment("x"), parse_segment("y")]) == 1.0
        with pytest.raises(ValueError):
            xml_accuracy([])

    def test_match(self):
        assert xml_match([ep("<b>x</b>", "<b>x</b>")]) == 1.0
        assert xml_match([ep("<b>x</b> <i>y</i>", "<i>y'</i> <b>x'</b>")]) == 0.0
        assert xml_match([ep("<b>x</b> <i>y</i>", "<i>y'</i> <b>x'</b>")], ordered=False) == 1.0
        assert xml_match([ep("<b>x", "<b>x</b>")]) == 0.0
        with pytest.raises(ValueError):
            xml_match([])

    def test_split(self):
        assert split_at_tags(parse_segment("<b>a b</b> c &amp;")) == [[], ["a", "b"], ["c", "&"]]

    def test_bleu_identical(self):
        pairs = [ep("<b>a b c d</b> e f", "<b>a b c d</b> e f")]
        assert xml_bleu(pairs) == 100.0

    def test_bleu_mismatch(self):
        assert xml_bleu([ep("a b c d", "<b>a b c d</b>")]) == 0.0

    def test_bleu_hand_count(self):
        # chunks: hyp [], [a b c d], [e], [], [], [] vs ref [], [a b c d], [e], [], [x y], [z]
        # every hypothesis n-gram matches; lengths 5 vs 8
        pairs = [ep("<b>a b c d</b> e", "<b>a b c d</b> e"), ep("x y z", "<i>x y</i> z")]
        assert xml_bleu(pairs) == pytest.approx(100 * math.exp(-0.6))

    @given(st.lists(st.tuples(st.sampled_from(["<b>x</b>", "x", "</b>", "<b><i>y</i></b>", "<i>y</i> <b>x</b>"]), st.sampled_from(["<b>x</b>", "x", "<b><i>y</i></b>"])), min_size=1, max_size=6))
    def test_match_le_accuracy(self, pairs):
        eps = [ep(h, r) for h, r in pairs]
        assert xml_match(eps) <= xml_accuracy([e.hypothesis for e in eps])


def test_evaluate_report():
    hyps = [parse_segment("<b>12 Save</b> now"), parse_segment("x y z w")]
    rep = evaluate(hyps, hyps)
    assert rep.bleu_no_xml == 100.0
    assert rep.xml_match == 1.0
    assert rep.xml_bleu == 100.0
    assert rep.size == 2
    assert set(rep.to_dict()) >= {"bleu_no_xml", "ne_num_precision", "ne_num_recall", "xml_accuracy", "xml_match", "xml_bleu"}
