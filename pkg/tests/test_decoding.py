import json
import math
import pickle
import random
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from synth import noisy_echo, random_tagged_source, suite_vocab, tag_multiset
from xmlmt.decoding import (
    BOS,
    EOS,
    GENERATED,
    RETRIEVAL,
    SOURCE,
    BeamConfig,
    BigramScorer,
    NoisyScorer,
    ScriptedScorer,
    StepDistribution,
    TranslationMemory,
    UniformScorer,
    UnknownTokenError,
    Vocabulary,
    VocabularyError,
    beam_search,
    combine,
    combine_distributions,
    constrained_beam_search,
    copies,
    load_scorer,
    restore_attributes,
    retrieve_tm,
    unconstrained_beam_search,
)
from xmlmt.extraction import SegmentPair
from xmlmt.xml_model import parse_segment, parse_segment_with_attributes, serialize_segment, validate_xml


def V(*words, tags=("b", "i")):
    return Vocabulary.build([words], tags=tags)


def dist(vocab, **attn):
    return StepDistribution(np.full(len(vocab), -math.log(len(vocab))), **attn)


class TestVocabulary:
    def test_build_order(self):
        v = V("z", "a", tags=("i", "b"))
        assert v.tokens == [BOS, EOS, "&amp;", "&lt;", "&gt;", "<b>", "</b>", "<i>", "</i>", "a", "z"]
        assert v.open_ids == {"b": 5, "i": 7}
        assert v.close_ids == {"b": 6, "i": 8}

    def test_bijection(self):
        v = V("a", "c")
        assert [v.index(t) for t in v.tokens] == list(range(len(v)))

    def test_duplicates(self):
        with pytest.raises(ValueError):
            Vocabulary(["a", "a"])

    def test_unknown(self):
        with pytest.raises(UnknownTokenError):
            V("a").index("q")

    def test_pickle(self):
        v = V("a")
        assert pickle.loads(pickle.dumps(v)) == v


class TestScorers:
    def test_uniform(self):
        v = V("a")
        d = UniformScorer(v).step(["a"], [BOS])
        assert np.allclose(d.gen_logprobs, math.log(1 / len(v)))

    def test_scripted(self):
        v = V("a", "c")
        d = ScriptedScorer(v, {"BOS": {"a": 1.0}}).step(["a"], [BOS])
        assert np.exp(d.gen_logprobs)[v.index("a")] == 1.0
        assert np.exp(d.gen_logprobs).sum() == pytest.approx(1.0)

    def test_scripted_default_error(self):
        s = ScriptedScorer(V("a"), {}, default="error")
        with pytest.raises(KeyError):
            s.step(["a"], [BOS])

    def test_scripted_json(self, tmp_path):
        path = tmp_path / "s.json"
        path.write_text(json.dumps({"vocab": [BOS, EOS, "a"], "steps": {"BOS": {"a": 2, EOS: 2}}}))
        s = ScriptedScorer.from_json(path)
        assert np.exp(s.step(["a"], [BOS]).gen_logprobs)[s.vocab.index("a")] == pytest.approx(0.5)

    def test_prefix_must_start_with_bos(self):
        with pytest.raises(ValueError):
            UniformScorer(V("a")).step(["a"], ["a"])

    def test_unknown_token(self):
        with pytest.raises(UnknownTokenError):
            UniformScorer(V("a")).step(["nope"], [BOS])

    def test_bigram_hand_counts(self):
        # a->b twice, b->. twice, .->a once, .->EOS once
        v = V("a", "b", ".")
        s = BigramScorer(v).fit([["a", "b", ".", "a", "b", "."]])
        p = lambda prev, nxt: float(np.exp(s.step(["a"], [BOS, prev]).gen_logprobs[v.index(nxt)]))
        assert p("a", "b") == 1.0
        assert p("b", ".") == 1.0
        assert p(".", "a") == pytest.approx(0.5)
        assert p(".", EOS) == pytest.approx(0.5)
        assert float(np.exp(s.step(["a"], [BOS]).gen_logprobs[v.index("a")])) == 1.0

    def test_bigram_unseen_context_uniform(self):
        v = V("a", "b")
        s = BigramScorer(v).fit([["a"]])
        assert np.allclose(np.exp(s.step(["a"], [BOS, "b"]).gen_logprobs), 1 / len(v))

    def test_bigram_unfitted(self):
        with pytest.raises(RuntimeError):
            BigramScorer(V("a")).step(["a"], [BOS])

    def test_noisy_deterministic(self):
        v = V("a")
        a = NoisyScorer(UniformScorer(v), seed=3).step(["a"], [BOS, "a"])
        b = NoisyScorer(UniformScorer(v), seed=3).step(["a"], [BOS, "a"])
        c = NoisyScorer(UniformScorer(v), seed=4).step(["a"], [BOS, "a"])
        assert np.array_equal(a.gen_logprobs, b.gen_logprobs)
        assert not np.array_equal(a.gen_logprobs, c.gen_logprobs)
        assert np.exp(a.gen_logprobs).sum() == pytest.approx(1.0)

    def test_load_scorer(self, tmp_path):
        v = V("a")
        assert isinstance(load_scorer("uniform", v), UniformScorer)
        assert isinstance(load_scorer("random:0.5", v), NoisyScorer)
        corpus = tmp_path / "train.jsonl"
        corpus.write_text(json.dumps({"id": "0", "src": "x", "tgt": "<b>q</b> r"}) + "\n")
        s = load_scorer(f"bigram:{corpus}", v)
        assert "q" in s.vocab and "a" in s.vocab and "<b>" in s.vocab
        with pytest.raises(ValueError):
            load_scorer("neural", v)
        with pytest.raises(OSError):
            load_scorer(f"scripted:{tmp_path / 'missing.json'}")

    def test_step_check(self):
        d = StepDistribution(np.log(np.full(4, 0.25)), np.array([0.5, 0.5]))
        d.check(4, n_source=1)
        with pytest.raises(ValueError):
            d.check(4, n_source=2)


class TestCombine:
    def test_no_copy(self):
        v = V("A", "B")
        d = dist(v, source_attention=np.array([0.6, 0.3, 0.1]))
        out = combine(d, ["A", "B"], None, v)
        assert out.channel == GENERATED and out.delta_source == 1
        assert np.allclose(out.probs, np.exp(d.gen_logprobs))

    def test_source_copy_aggregates(self):
        v = V("A", "B")
        d = dist(v, source_attention=np.array([0.1, 0.5, 0.4]))
        out = combine_distributions(d, ["A", "A"], None, v)
        expected = np.zeros(len(v))
        expected[v.index("A")] = 1.0
        assert np.allclose(out, expected)

    def test_retrieval_copy(self):
        v = V("A", "B")
        d = dist(v, source_attention=np.array([0.6, 0.4]), retrieval_attention=np.array([0.2, 0.8]))
        out = combine(d, ["A"], ["B"], v)
        assert (out.delta_source, out.delta_retrieval, out.channel) == (1, 0, RETRIEVAL)
        assert out.probs[v.index("B")] == 1.0

    def test_source_beats_retrieval(self):
        v = V("A", "B")
        d = dist(v, source_attention=np.array([0.2, 0.8]), retrieval_attention=np.array([0.2, 0.8]))
        assert combine(d, ["A"], ["B"], v).channel == SOURCE

    def test_renormalized(self):
        v = V("A", "B")
        d = dist(v, source_attention=np.array([0.2, 0.6, 0.2]))
        out = combine_distributions(d, ["A", "B"], None, v)
        assert out[v.index("A")] == pytest.approx(0.75)
        assert out[v.index("B")] == pytest.approx(0.25)

    def test_tie_goes_to_no_copy(self):
        assert not copies(np.array([0.5, 0.5]), ["A"])

    def test_length_mismatch(self):
        v = V("A")
        with pytest.raises(ValueError):
            combine(dist(v, source_attention=np.array([0.5, 0.5])), ["A", "A"], None, v)

    @given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=6), st.sampled_from([0.5, 2.0, 3.0]))
    def test_argmax_invariance(self, raw, power):
        att = np.array(raw) / sum(raw)
        scaled = att ** power
        scaled /= scaled.sum()
        tokens = ["A"] * (len(att) - 1)
        assert copies(att, tokens) == copies(scaled, tokens)

    @settings(max_examples=200)
    @given(st.integers(0, 2**32 - 1))
    def test_random_sums_to_one(self, seed):
        rng = np.random.default_rng(seed)
        v = V("A", "B", "C")
        words = ["A", "B", "C", "<b>", "</b>"]
        src = list(rng.choice(words, rng.integers(1, 5)))
        ret = list(rng.choice(words, rng.integers(1, 5)))
        d = StepDistribution(
            np.log(rng.dirichlet(np.ones(len(v)))),
            rng.dirichlet(np.ones(len(src) + 1)),
            rng.dirichlet(np.ones(len(ret) + 1)),
        )
        out = combine_distributions(d, src, ret, v)
        assert (out >= 0).all()
        assert out.sum() == pytest.approx(1.0, abs=1e-6)


def pair(src, tgt):
    return SegmentPair(parse_segment(src), parse_segment(tgt))


def brute_jaccard(query, pairs):
    n = len(pairs)
    sets = [set(p.source.surfaces) for p in pairs]
    df = Counter(t for s in sets for t in s)
    idf = lambda t: math.log((1 + n) / (1 + df[t])) + 1
    out = []
    for s in sets:
        inter = sum(idf(t) for t in query & s)
        union = sum(idf(t) for t in query | s)
        out.append(inter / union if union else 1.0)
    return out


class TestMemory:
    def test_exact(self):
        mem = TranslationMemory([pair("a b", "x"), pair("c d", "y")])
        assert retrieve_tm(parse_segment("c d"), mem).target.surfaces == ["y"]

    def test_empty(self):
        assert retrieve_tm(parse_segment("a"), TranslationMemory()) is None
        assert retrieve_tm(parse_segment("a"), None) is None

    def test_toy_brute_force(self):
        pairs = [pair("the cat sat", "1"), pair("the dog sat down", "2"), pair("a cat ran", "3")]
        mem = TranslationMemory(pairs)
        query = {"the", "cat", "ran"}
        sims = brute_jaccard(query, pairs)
        winner = max(range(3), key=lambda i: (sims[i], -i))
        assert mem.retrieve(sorted(query)) is pairs[winner]
        for i in range(3):
            assert mem.similarity(sorted(query), i) == pytest.approx(sims[i])

    def test_tie_lowest_index(self):
        pairs = [pair("a", "1"), pair("a", "2")]
        assert TranslationMemory(pairs).retrieve(["a"]) is pairs[0]

    def test_no_overlap(self):
        pairs = [pair("a", "1"), pair("b", "2")]
        mem = TranslationMemory(pairs)
        assert mem.retrieve(["z"]) is pairs[0]
        assert mem.retrieve(["z"], min_similarity=0.1) is None

    @given(st.lists(st.lists(st.sampled_from("abcde"), min_size=1, max_size=4), min_size=1, max_size=6), st.sets(st.sampled_from("abcdef"), min_size=1))
    def test_matches_brute_force(self, sources, query):
        pairs = [pair(" ".join(s), str(i)) for i, s in enumerate(sources)]
        sims = brute_jaccard(query, pairs)
        best = max(sims)
        winner = next(i for i, s in enumerate(sims) if math.isclose(s, best, rel_tol=1e-12))
        got = TranslationMemory(pairs).retrieve(sorted(query))
        assert sims[pairs.index(got)] == pytest.approx(best)
        assert pairs.index(got) == winner

    def test_from_jsonl(self, tmp_path):
        path = tmp_path / "tm.jsonl"
        path.write_text(json.dumps({"id": "0", "src": "a b", "tgt": "<b>x</b>"}) + "\n")
        assert len(TranslationMemory.from_jsonl(path)) == 1


class TestBeam:
    def test_forced_output(self):
        v = V("a", "b")
        s = ScriptedScorer(v, {"BOS": {"a": 1.0}, "BOS a": {"b": 1.0}, "BOS a b": {EOS: 1.0}})
        r = beam_search(s, parse_segment("a"), cfg=BeamConfig(beam_size=2))
        assert r.tokens == ["a", "b"] and not r.truncated
        assert r.copy_trace == [GENERATED, GENERATED]

    def test_eos_preferring_scorer_still_emits_tags(self):
        v = V("x")
        # EOS first everywhere; the remaining tokens are ranked so the search can progress
        s = NoisyScorer(UniformScorer(v), scale=0.0, bias={EOS: 3.0, "<b>": 1.5, "</b>": 1.0})
        r = constrained_beam_search(s, parse_segment("<b>x</b>"), cfg=BeamConfig(beam_size=2, max_length=20))
        assert not r.truncated
        assert r.tokens.count("<b>") == 1 and r.tokens.count("</b>") == 1
        assert validate_xml(r.segment)

    def test_unconstrained_invalid(self):
        v = V("x")
        s = ScriptedScorer(v, {"BOS": {"</b>": 1.0}, "BOS </b>": {EOS: 1.0}})
        r = unconstrained_beam_search(s, parse_segment("<b>x</b>"))
        assert serialize_segment(r.segment) == "</b>"
        assert not validate_xml(r.segment)
        assert validate_xml(constrained_beam_search(s, parse_segment("<b>x</b>")).segment)

    @pytest.mark.parametrize("seed", range(10))
    def test_tag_free_modes_agree(self, seed):
        v = suite_vocab()
        src = parse_segment("w1 w2 w3")
        a = beam_search(noisy_echo(v, seed), src, cfg=BeamConfig(constrained=True))
        b = beam_search(noisy_echo(v, seed), src, cfg=BeamConfig(constrained=False))
        if not any(t.startswith("<") for t in a.tokens + b.tokens):
            assert a.tokens == b.tokens

    def test_uniform_noise_100_seeds(self):
        v = V("x", "y", tags=("b", "i"))
        src = parse_segment("<b>x</b> <i>y</i>")
        done = 0
        for seed in range(100):
            s = NoisyScorer(UniformScorer(v), seed=seed, scale=1.0)
            r = beam_search(s, src, cfg=BeamConfig(4, 20), check_invariants=True)
            if not r.truncated:
                done += 1
                assert validate_xml(r.segment)
                assert tag_multiset(r.segment) == Counter({"<b>": 1, "</b>": 1, "<i>": 1, "</i>": 1})
        assert done > 0

    def test_truncation_flag(self):
        v = V("x")
        s = NoisyScorer(UniformScorer(v), scale=0.0, bias={EOS: -50.0})
        r = beam_search(s, parse_segment("x"), cfg=BeamConfig(2, 5))
        assert r.truncated and len(r.tokens) == 5

    def test_deterministic(self):
        v = suite_vocab()
        src = random_tagged_source(random.Random(1))
        a = beam_search(noisy_echo(v, 7), src)
        b = beam_search(noisy_echo(v, 7), src)
        assert a == b

    def test_vocabulary_gap(self):
        with pytest.raises(VocabularyError):
            beam_search(UniformScorer(V("x")), parse_segment("<u>x</u>"))
        with pytest.raises(VocabularyError):
            beam_search(UniformScorer(V("x")), parse_segment("q"))

    def test_malformed_source(self):
        with pytest.raises(ValueError):
            beam_search(UniformScorer(V("x")), parse_segment("<b>x"))

    def test_config(self):
        with pytest.raises(ValueError):
            BeamConfig(beam_size=0)
        with pytest.raises(ValueError):
            BeamConfig(max_length=1)

    def test_length_penalty_is_per_step(self):
        v = V("x")
        s = ScriptedScorer(v, {"BOS": {"x": 1.0}, "BOS x": {EOS: 1.0}})
        r = beam_search(s, parse_segment("x"), cfg=BeamConfig(1, 10, length_penalty=0.5))
        assert r.score == pytest.approx(1.0)

    def test_source_copy_and_attributes(self):
        v = V("go", "here", "aqui", tags=("xref",))
        src, attrs = parse_segment_with_attributes('go <xref href="a.html">here</xref>')
        # slots: null, go, <xref>, here, </xref>
        steps = {
            "BOS": {"gen": {"aqui": 1.0}, "source_attention": [0.1, 0.8, 0.05, 0.05, 0.0]},
            "BOS go": {"gen": {"aqui": 1.0}, "source_attention": [0.1, 0.0, 0.9, 0.0, 0.0]},
            "BOS go <xref>": {"gen": {"aqui": 1.0}, "source_attention": [0.9, 0.0, 0.0, 0.1, 0.0]},
            "BOS go <xref> aqui": {"gen": {"</xref>": 1.0}, "source_attention": [1.0, 0, 0, 0, 0]},
            "BOS go <xref> aqui </xref>": {"gen": {EOS: 1.0}, "source_attention": [1.0, 0, 0, 0, 0]},
        }
        r = beam_search(ScriptedScorer(v, steps), src, cfg=BeamConfig(1, 10))
        assert r.tokens == ["go", "<xref>", "aqui", "</xref>"]
        assert r.copy_trace == [SOURCE, SOURCE, GENERATED, GENERATED]
        assert r.source_positions == [0, 1, None, None]
        assert restore_attributes(r, attrs) == 'go <xref href="a.html">aqui</xref>'

    def test_retrieval_copy(self):
        v = V("a", "b", "c")
        mem = TranslationMemory([pair("a", "c")])
        steps = {
            "BOS": {"gen": {"a": 1.0}, "retrieval_attention": [0.2, 0.8]},
            "BOS c": {"gen": {EOS: 1.0}, "retrieval_attention": [1.0, 0.0]},
        }
        r = beam_search(ScriptedScorer(v, steps), parse_segment("a"), mem, BeamConfig(1, 5))
        assert r.tokens == ["c"]
        assert r.copy_trace == [RETRIEVAL]
        assert r.retrieved.surfaces == ["c"]

    def test_masked_copy_falls_back_to_generation(self):
        v = V("x")
        # the source channel wants </b> first, which the close mask forbids
        steps = {"BOS": {"gen": {"<b>": 1.0}, "source_attention": [0.0, 0.0, 0.0, 1.0]}}
        r = beam_search(ScriptedScorer(v, steps), parse_segment("<b>x</b>"), cfg=BeamConfig(1, 10))
        assert r.tokens[0] == "<b>" and r.copy_trace[0] == GENERATED

