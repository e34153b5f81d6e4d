"""Parallel segment extraction from page-aligned bilingual XML documents.

Pipeline per file pair: :func:`linearize` both trees, :func:`align_elements`
by tag name, :func:`extract_pairs`, then :func:`normalize_urls`. Across the
whole corpus: :func:`filter_and_dedupe` and :func:`split_dataset`.
"""

from __future__ import annotations

import logging
import random
import re
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, NamedTuple, Optional, Sequence

from .xml_model import (
    TRANSLATABLE,
    UNTRANSLATABLE,
    TagPolicy,
    Text,
    Token,
    TokenKind,
    XmlSegment,
    parse_segment,
    serialize_segment,
)

logger = logging.getLogger(__name__)

# ElementTree elements carry tag/attrib/text/tail/children, which is all we need.
XmlElement = ET.Element

URL_PATTERN = r"(https?|ftp)://[^\s<>\"]+"
MAX_URLS = 9
_URL_TRAILING = ".,;:!?)]}'"


class TooManyUrlsError(ValueError):
    pass


class AlignedElementPair(NamedTuple):
    source_index: int
    target_index: int
    tag: str


@dataclass(frozen=True)
class SegmentPair:
    source: XmlSegment
    target: XmlSegment
    file_id: str = ""
    element_ordinal: int = 0

    @property
    def key(self) -> tuple:
        return (self.source.tokens, self.target.tokens)

    def to_record(self, id: str) -> dict:
        return {
            "id": id,
            "file": self.file_id,
            "src": serialize_segment(self.source),
            "tgt": serialize_segment(self.target),
        }

    @classmethod
    def from_record(cls, record: dict) -> "SegmentPair":
        return cls(
            parse_segment(record["src"]),
            parse_segment(record["tgt"]),
            record.get("file", ""),
            record.get("ordinal", 0),
        )


def local_name(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def linearize(doc: XmlElement, policy: TagPolicy = TagPolicy()) -> list[XmlElement]:
    """Translatable elements of ``doc`` in document (pre-)order.

    Nested translatable elements are emitted as units of their own. Subtrees
    of untranslatable elements are never visited.
    """
    out = []

    def visit(elem):
        if not isinstance(elem.tag, str):
            return
        cat = policy.category(local_name(elem.tag))
        if cat == UNTRANSLATABLE:
            return
        if cat == TRANSLATABLE:
            out.append(elem)
        for child in elem:
            visit(child)

    visit(doc)
    return out


def align_elements(src: Sequence[XmlElement], tgt: Sequence[XmlElement]) -> list[AlignedElementPair]:
    """Monotone alignment maximizing the number of equal-tag pairs.

    Mismatches are disallowed and gaps are free, so this is a longest common
    subsequence over tag names. Among optimal alignments the lexicographically
    smallest list of ``(source_index, target_index)`` pairs is returned.
    """
    a = [local_name(e.tag) if hasattr(e, "tag") else e for e in src]
    b = [local_name(e.tag) if hasattr(e, "tag") else e for e in tgt]
    n, m = len(a), len(b)
    # best[i][j]: max matches within a[i:], b[j:]
    best = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n - 1, -1, -1):
        row, below = best[i], best[i + 1]
        ai = a[i]
        for j in range(m - 1, -1, -1):
            v = below[j] if below[j] > row[j + 1] else row[j + 1]
            if ai == b[j] and below[j + 1] + 1 > v:
                v = below[j + 1] + 1
            row[j] = v

    pairs = []
    i = j = 0
    while best[i][j] > 0:
        need = best[i][j] - 1
        found = None
        for ii in range(i, n):
            if best[ii][j] <= need:
                break
            for jj in range(j, m):
                if a[ii] == b[jj] and best[ii + 1][jj + 1] == need:
                    found = (ii, jj)
                    break
                if best[ii][jj] <= need:
                    break
            if found:
                break
        ii, jj = found
        pairs.append(AlignedElementPair(ii, jj, a[ii]))
        i, j = ii + 1, jj + 1
    return pairs


def _escape(text: Optional[str]) -> str:
    if not text:
        return ""
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def render_element(elem: XmlElement, policy: TagPolicy = TagPolicy()) -> str:
    """Inner markup of ``elem`` after applying the tag categories.

    Untranslatable children are removed (their tail text stays). Nested
    translatable children stay inline only when followed by tail text.
    Transparent children stay inline. The element's own tag and every
    attribute are dropped.
    """
    parts = [_escape(elem.text)]
    for child in elem:
        if not isinstance(child.tag, str):
            parts.append(_escape(child.tail))
            continue
        name = local_name(child.tag)
        cat = policy.category(name)
        if cat == UNTRANSLATABLE:
            pass
        elif cat == TRANSLATABLE and not (child.tail and child.tail.strip()):
            pass
        else:
            parts.append(f"<{name}>{render_element(child, policy)}</{name}>")
        parts.append(_escape(child.tail))
    return "".join(parts)


def element_segment(elem: XmlElement, policy: TagPolicy = TagPolicy(), tokenizer=None) -> XmlSegment:
    text = render_element(elem, policy)
    return parse_segment(text) if tokenizer is None else parse_segment(text, tokenizer)


def _has_text(seg: XmlSegment) -> bool:
    return any(not t.is_tag for t in seg.tokens)


def extract_pairs(
    src: Sequence[XmlElement],
    tgt: Sequence[XmlElement],
    aligned: Iterable[AlignedElementPair],
    policy: TagPolicy = TagPolicy(),
    file_id: str = "",
    tokenizer=None,
) -> list[SegmentPair]:
    """One :class:`SegmentPair` per aligned element pair.

    Pairs where either side has no text left (e.g. a container whose
    translatable children were all lifted out) are skipped.
    """
    pairs = []
    for al in aligned:
        s = element_segment(src[al.source_index], policy, tokenizer)
        t = element_segment(tgt[al.target_index], policy, tokenizer)
        if _has_text(s) and _has_text(t):
            pairs.append(SegmentPair(s, t, file_id, al.source_index))
    return pairs


def _find_urls(tok: Token, pattern: re.Pattern) -> list[tuple[int, int]]:
    spans = []
    for m in pattern.finditer(tok.value):
        end = m.end()
        while end > m.start() and tok.value[end - 1] in _URL_TRAILING:
            end -= 1
        if end > m.start():
            spans.append((m.start(), end))
    return spans


def normalize_urls(pair: SegmentPair, pattern: str | re.Pattern = URL_PATTERN) -> SegmentPair:
    """Replace URL-like strings with ``#URL1#`` .. ``#URL9#`` placeholders.

    Numbering follows first appearance on the source side, then the target
    side; the same URL gets the same placeholder on both sides. Trailing
    punctuation is not considered part of a URL. Raises
    :class:`TooManyUrlsError` past nine distinct URLs.
    """
    rx = re.compile(pattern) if isinstance(pattern, str) else pattern
    numbering: dict[str, str] = {}

    def rewrite(seg: XmlSegment) -> XmlSegment:
        out = []
        changed = False
        for tok in seg.tokens:
            if tok.kind is not TokenKind.TEXT:
                out.append(tok)
                continue
            spans = _find_urls(tok, rx)
            if not spans:
                out.append(tok)
                continue
            pieces, pos = [], 0
            for start, end in spans:
                url = tok.value[start:end]
                if url not in numbering:
                    if len(numbering) == MAX_URLS:
                        raise TooManyUrlsError(f"more than {MAX_URLS} distinct URLs")
                    numbering[url] = f"#URL{len(numbering) + 1}#"
                pieces.append(tok.value[pos:start])
                pieces.append(numbering[url])
                pos = end
            pieces.append(tok.value[pos:])
            out.append(Text("".join(pieces)))
            changed = True
        return XmlSegment(tuple(out)) if changed else seg

    source = rewrite(pair.source)
    target = rewrite(pair.target)
    if source is pair.source and target is pair.target:
        return pair
    return replace(pair, source=source, target=target)


def tags_consistent(pair: SegmentPair) -> bool:
    return pair.source.tag_multiset() == pair.target.tag_multiset()


def filter_and_dedupe(pairs: Iterable[SegmentPair]) -> list[SegmentPair]:
    """Keep tag-consistent pairs (order-free), first occurrence of each duplicate."""
    seen = set()
    kept = []
    for pair in pairs:
        if not tags_consistent(pair):
            continue
        if pair.key in seen:
            continue
        seen.add(pair.key)
        kept.append(pair)
    return kept


class DatasetSplit(NamedTuple):
    train: list
    dev: list
    test: list


def split_dataset(pairs: Sequence, seed: int, dev_size: int = 2000, test_size: int = 2000) -> DatasetSplit:
    """Seeded shuffle, then dev, test, and the remainder as train.

    With ``dev_size + test_size`` pairs or fewer, dev and test each get
    ``len(pairs) // 10`` items instead.
    """
    pairs = list(pairs)
    order = list(range(len(pairs)))
    random.Random(seed).shuffle(order)
    if len(pairs) <= dev_size + test_size:
        dev_size = test_size = len(pairs) // 10
    shuffled = [pairs[k] for k in order]
    return DatasetSplit(
        train=shuffled[dev_size + test_size:],
        dev=shuffled[:dev_size],
        test=shuffled[dev_size:dev_size + test_size],
    )


@dataclass
class CorpusStats:
    length_histogram: dict[int, int] = field(default_factory=dict)
    tag_count_histogram: dict[int, int] = field(default_factory=dict)
    fraction_with_tags: float = 0.0
    size: int = 0

    def to_dict(self) -> dict:
        return {
            "size": self.size,
            "fraction_with_tags": self.fraction_with_tags,
            "length_histogram": {str(k): v for k, v in sorted(self.length_histogram.items())},
            "tag_count_histogram": {str(k): v for k, v in sorted(self.tag_count_histogram.items())},
        }


def corpus_stats(pairs: Sequence[SegmentPair]) -> CorpusStats:
    """Source-side token length and tag count histograms."""
    lengths = Counter(len(p.source) for p in pairs)
    tag_counts = Counter(p.source.tag_count() for p in pairs)
    with_tags = sum(v for k, v in tag_counts.items() if k > 0)
    return CorpusStats(
        length_histogram=dict(lengths),
        tag_count_histogram=dict(tag_counts),
        fraction_with_tags=with_tags / len(pairs) if pairs else 0.0,
        size=len(pairs),
    )


def extract_document_pair(
    src_root: XmlElement,
    tgt_root: XmlElement,
    policy: TagPolicy = TagPolicy(),
    file_id: str = "",
    url_pattern: Optional[str] = URL_PATTERN,
    tokenizer=None,
) -> list[SegmentPair]:
    """Linearize, align and extract one page-aligned file pair."""
    src = linearize(src_root, policy)
    tgt = linearize(tgt_root, policy)
    pairs = extract_pairs(src, tgt, align_elements(src, tgt), policy, file_id, tokenizer)
    if url_pattern is None:
        return pairs
    out = []
    for pair in pairs:
        try:
            out.append(normalize_urls(pair, url_pattern))
        except TooManyUrlsError:
            logger.warning("%s: dropping element %d with too many URLs", file_id, pair.element_ordinal)
    return out


@dataclass
class CorpusLayout:
    """File pairs found under ``<root>/<lang>/<name>.xml``."""

    paired: list[tuple[str, Path, Path]]
    unpaired: list[Path]


def find_file_pairs(root: str | Path, src_lang: str, tgt_lang: str) -> CorpusLayout:
    root = Path(root)
    src_dir, tgt_dir = root / src_lang, root / tgt_lang
    src_files = {p.relative_to(src_dir).as_posix(): p for p in src_dir.rglob("*.xml")} if src_dir.is_dir() else {}
    tgt_files = {p.relative_to(tgt_dir).as_posix(): p for p in tgt_dir.rglob("*.xml")} if tgt_dir.is_dir() else {}
    names = sorted(src_files.keys() & tgt_files.keys())
    unpaired = sorted(
        [src_files[k] for k in src_files.keys() - tgt_files.keys()]
        + [tgt_files[k] for k in tgt_files.keys() - src_files.keys()]
    )
    for path in unpaired:
        logger.info("no counterpart for %s, skipping", path)
    return CorpusLayout([(name, src_files[name], tgt_files[name]) for name in names], unpaired)
