"""Structure-aware translation metrics.

Three families: BLEU on tag-stripped text, precision/recall of numbers and
named entities, and the XML family (validity rate, structure match rate and
chunk-wise BLEU over structure-matching outputs).
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

from .xml_model import (
    ENTITY_CHARS,
    Text,
    TokenKind,
    XmlSegment,
    canonical_skeleton,
    tag_skeleton,
    validate_xml,
)

# Kept verbatim; `--explain` prints them.
NUMBER_PATTERN = r"[0-9.,'/:]*[0-9]+[0-9.,'/:]*"
NAMED_ENTITY_PATTERN = r"[.,'/:a-zA-Z$]*[A-Z]+[.,'/:a-zA-Z$]*"

NUMBERS = "numbers"
NAMED_ENTITIES = "named_entities"

_PATTERNS = {
    NUMBERS: re.compile(NUMBER_PATTERN),
    NAMED_ENTITIES: re.compile(NAMED_ENTITY_PATTERN),
}

MAX_ORDER = 4


class EvalPair(NamedTuple):
    hypothesis: XmlSegment
    reference: XmlSegment


def strip_xml(seg: XmlSegment) -> XmlSegment:
    """Drop tag tokens and turn entity tokens into the characters they stand for."""
    out = []
    for tok in seg.tokens:
        if tok.is_tag:
            continue
        if tok.kind is TokenKind.ENTITY:
            out.append(Text(ENTITY_CHARS[tok.value]))
        else:
            out.append(tok)
    return XmlSegment(tuple(out))


def plain_text(seg: XmlSegment) -> str:
    return " ".join(t.value for t in strip_xml(seg).tokens)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


class BleuStats(NamedTuple):
    """Sufficient statistics; summing them across sentences gives corpus counts."""

    matches: tuple
    totals: tuple
    ref_totals: tuple
    hyp_len: int
    ref_len: int

    def __add__(self, other):
        return BleuStats(
            tuple(a + b for a, b in zip(self.matches, other.matches)),
            tuple(a + b for a, b in zip(self.totals, other.totals)),
            tuple(a + b for a, b in zip(self.ref_totals, other.ref_totals)),
            self.hyp_len + other.hyp_len,
            self.ref_len + other.ref_len,
        )


def bleu_stats(hyp: Sequence[str], ref: Sequence[str], max_order: int = MAX_ORDER) -> BleuStats:
    matches, totals, ref_totals = [], [], []
    for n in range(1, max_order + 1):
        h, r = _ngrams(hyp, n), _ngrams(ref, n)
        matches.append(sum((h & r).values()))
        totals.append(max(len(hyp) - n + 1, 0))
        ref_totals.append(max(len(ref) - n + 1, 0))
    return BleuStats(tuple(matches), tuple(totals), tuple(ref_totals), len(hyp), len(ref))


def bleu_from_stats(stats: BleuStats) -> float:
    if stats.hyp_len == 0:
        return 100.0 if stats.ref_len == 0 else 0.0
    log_sum = 0.0
    for m, t, rt in zip(stats.matches, stats.totals, stats.ref_totals):
        if t == 0 and rt == 0:
            # no n-grams of this order on either side: vacuously perfect
            continue
        if m == 0:
            return 0.0
        log_sum += math.log(m / t)
    bp = 1.0 if stats.hyp_len >= stats.ref_len else math.exp(1 - stats.ref_len / stats.hyp_len)
    return 100.0 * bp * math.exp(log_sum / len(stats.matches))


def corpus_bleu(hyps: Sequence[Sequence[str]], refs: Sequence[Sequence[str]], max_order: int = MAX_ORDER) -> float:
    """Unsmoothed corpus-level BLEU on pre-tokenized text, single reference.

    An n-gram order for which neither side has any n-gram counts as a
    precision of 1; otherwise a zero precision gives a score of 0.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    if not hyps:
        raise ValueError("empty corpus")
    total = BleuStats((0,) * max_order, (0,) * max_order, (0,) * max_order, 0, 0)
    for h, r in zip(hyps, refs):
        total = total + bleu_stats(list(h), list(r), max_order)
    return bleu_from_stats(total)


def extract_ne_num(text: str, mode: str = NUMBERS) -> Counter:
    """Multiset of leftmost, non-overlapping matches of the mode's pattern."""
    return Counter(_PATTERNS[mode].findall(text))


def ne_num_items(seg: XmlSegment, non_alphabetic: bool = False) -> Counter:
    """Numbers, plus named entities when the text's language is non-alphabetic."""
    text = plain_text(seg)
    items = extract_ne_num(text, NUMBERS)
    if non_alphabetic:
        items += extract_ne_num(text, NAMED_ENTITIES)
    return items


def ne_num_precision_recall(
    eval_pairs: Iterable[EvalPair],
    mode: Optional[str] = None,
    non_alphabetic: bool = False,
) -> tuple[float, float]:
    """Corpus precision and recall of extracted items (multiset matching).

    ``mode`` restricts to one pattern; by default numbers are always used and
    named entities only with ``non_alphabetic``. A zero denominator yields 1.0.
    """
    matched = hyp_total = ref_total = 0
    for hyp, ref in eval_pairs:
        if mode is None:
            h, r = ne_num_items(hyp, non_alphabetic), ne_num_items(ref, non_alphabetic)
        else:
            h, r = extract_ne_num(plain_text(hyp), mode), extract_ne_num(plain_text(ref), mode)
        matched += sum((h & r).values())
        hyp_total += sum(h.values())
        ref_total += sum(r.values())
    precision = matched / hyp_total if hyp_total else 1.0
    recall = matched / ref_total if ref_total else 1.0
    return precision, recall


def _nonempty(items, what):
    items = list(items)
    if not items:
        raise ValueError(f"{what} needs at least one example")
    return items


def xml_accuracy(hyps: Iterable[XmlSegment]) -> float:
    hyps = _nonempty(hyps, "xml_accuracy")
    return sum(validate_xml(h) for h in hyps) / len(hyps)


def structure_matches(hyp: XmlSegment, ref: XmlSegment, ordered: bool = True) -> bool:
    if not (validate_xml(hyp) and validate_xml(ref)):
        return False
    hs, rs = tag_skeleton(hyp), tag_skeleton(ref)
    if not ordered:
        hs, rs = canonical_skeleton(hs), canonical_skeleton(rs)
    return hs == rs


def xml_match(eval_pairs: Iterable[EvalPair], ordered: bool = True) -> float:
    pairs = _nonempty(eval_pairs, "xml_match")
    return sum(structure_matches(h, r, ordered) for h, r in pairs) / len(pairs)


def split_at_tags(seg: XmlSegment) -> list[list[str]]:
    """Text chunks between tag tokens (tags + 1 chunks, possibly empty)."""
    chunks: list[list[str]] = [[]]
    for tok in strip_entities(seg):
        if tok.is_tag:
            chunks.append([])
        else:
            chunks[-1].append(tok.value)
    return chunks


def strip_entities(seg: XmlSegment):
    for tok in seg.tokens:
        if tok.kind is TokenKind.ENTITY:
            yield Text(ENTITY_CHARS[tok.value])
        else:
            yield tok


def xml_bleu_chunks(eval_pairs: Iterable[EvalPair], ordered: bool = True) -> tuple[list, list]:
    hyp_chunks, ref_chunks = [], []
    for hyp, ref in eval_pairs:
        rc = split_at_tags(ref)
        if structure_matches(hyp, ref, ordered):
            hc = split_at_tags(hyp)
        else:
            hc = [[] for _ in rc]
        hyp_chunks.extend(hc)
        ref_chunks.extend(rc)
    return hyp_chunks, ref_chunks


def xml_bleu(eval_pairs: Iterable[EvalPair], ordered: bool = True) -> float:
    """Corpus BLEU over positionally paired text chunks.

    Outputs whose structure does not match the reference contribute empty
    chunks, which costs them every n-gram and the whole reference length.
    """
    pairs = _nonempty(eval_pairs, "xml_bleu")
    hyp_chunks, ref_chunks = xml_bleu_chunks(pairs, ordered)
    return corpus_bleu(hyp_chunks, ref_chunks)


@dataclass
class EvalReport:
    bleu_no_xml: float
    ne_num_precision: float
    ne_num_recall: float
    xml_accuracy: float
    xml_match: float
    xml_bleu: float
    size: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(
    hyps: Sequence[XmlSegment],
    refs: Sequence[XmlSegment],
    non_alphabetic: bool = False,
    ordered: bool = True,
    tokenize: Optional[Callable[[str], Sequence[str]]] = None,
) -> EvalReport:
    """Every metric family on one corpus.

    ``tokenize`` re-tokenizes the tag-stripped text for BLEU (e.g. a
    language-specific tokenizer); by default segment tokens are used as is.
    """
    if len(hyps) != len(refs):
        raise ValueError(f"{len(hyps)} hypotheses vs {len(refs)} references")
    pairs = [EvalPair(h, r) for h, r in zip(hyps, refs)]
    if tokenize is None:
        def to_tokens(seg):
            return [t.value for t in strip_xml(seg).tokens]
    else:
        def to_tokens(seg):
            return list(tokenize(plain_text(seg)))
    bleu = corpus_bleu([to_tokens(h) for h in hyps], [to_tokens(r) for r in refs])
    precision, recall = ne_num_precision_recall(pairs, non_alphabetic=non_alphabetic)
    return EvalReport(
        bleu_no_xml=bleu,
        ne_num_precision=precision,
        ne_num_recall=recall,
        xml_accuracy=xml_accuracy(hyps),
        xml_match=xml_match(pairs, ordered),
        xml_bleu=xml_bleu(pairs, ordered),
        size=len(pairs),
    )
