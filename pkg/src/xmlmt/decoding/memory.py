from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Optional, Sequence

from ..extraction import SegmentPair
from ..xml_model import XmlSegment


class TranslationMemory:
    """Past translation pairs with an inverted index over source tokens.

    Similarity is Jaccard over source token sets, each token weighted by a
    smoothed inverse document frequency ``log((1 + N) / (1 + df)) + 1``.
    """

    def __init__(self, pairs: Iterable[SegmentPair] = ()):
        self.pairs = list(pairs)
        self._sets = [frozenset(p.source.surfaces) for p in self.pairs]
        self._df = Counter()
        self._index: dict[str, list[int]] = defaultdict(list)
        for i, toks in enumerate(self._sets):
            self._df.update(toks)
            for tok in toks:
                self._index[tok].append(i)
        self._weights = [sum(self.idf(t) for t in toks) for toks in self._sets]

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "TranslationMemory":
        pairs = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    pairs.append(SegmentPair.from_record(json.loads(line)))
        return cls(pairs)

    def __len__(self):
        return len(self.pairs)

    def idf(self, token: str) -> float:
        return math.log((1 + len(self.pairs)) / (1 + self._df.get(token, 0))) + 1.0

    def similarity(self, source: XmlSegment | Sequence[str], i: int) -> float:
        query = _token_set(source)
        return self._jaccard(query, sum(self.idf(t) for t in query), i)

    def _jaccard(self, query: frozenset, query_weight: float, i: int) -> float:
        inter = sum(self.idf(t) for t in query & self._sets[i])
        union = query_weight + self._weights[i] - inter
        return inter / union if union > 0 else 1.0

    def retrieve(self, source: XmlSegment | Sequence[str], min_similarity: float = 0.0) -> Optional[SegmentPair]:
        """Most similar pair; ties go to the lowest index. ``None`` for an empty memory."""
        if not self.pairs:
            return None
        query = _token_set(source)
        qw = sum(self.idf(t) for t in query)
        candidates = sorted({i for t in query for i in self._index.get(t, ())})
        best_i, best_sim = None, -1.0
        for i in candidates:
            sim = self._jaccard(query, qw, i)
            if sim > best_sim:
                best_i, best_sim = i, sim
        if best_i is None:
            # no shared token: every similarity is 0 except empty-vs-empty
            best_i = next((i for i, s in enumerate(self._sets) if not s and not query), 0)
            best_sim = self._jaccard(query, qw, best_i)
        if best_sim < min_similarity:
            return None
        return self.pairs[best_i]


def _token_set(source) -> frozenset:
    if isinstance(source, XmlSegment):
        return frozenset(source.surfaces)
    return frozenset(source)


def retrieve_tm(source: XmlSegment | Sequence[str], memory: Optional[TranslationMemory]) -> Optional[SegmentPair]:
    if memory is None:
        return None
    return memory.retrieve(source)
