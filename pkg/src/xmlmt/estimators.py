"""scikit-learn style wrappers around the extraction and decoding pipelines.

These follow the estimator conventions (constructor only stores parameters,
``fit`` returns ``self``, learned state ends with an underscore) so they
work with ``get_params``/``set_params``, ``clone`` and grid search.
"""

from __future__ import annotations

import xml.etree.ElementTree as ET
from typing import Optional

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .decoding import (
    BeamConfig,
    BigramScorer,
    Scorer,
    TranslationMemory,
    UniformScorer,
    Vocabulary,
    beam_search,
)
from .extraction import (
    URL_PATTERN,
    SegmentPair,
    extract_document_pair,
    filter_and_dedupe,
    normalize_urls,
)
from .metrics import xml_bleu, EvalPair
from .validation import (
    check_consistent_length,
    check_documents,
    check_nonempty,
    check_positive_int,
    check_segments,
)
from .xml_model import TagPolicy, serialize_segment


class SegmentExtractor(TransformerMixin, BaseEstimator):
    """Page-aligned XML document pairs to filtered, deduplicated segment pairs.

    ``transform`` takes an iterable of ``(src_root, tgt_root)`` or
    ``(file_id, src_root, tgt_root)``; roots may be ``Element`` objects or
    XML strings.
    """

    def __init__(self, policy: Optional[TagPolicy] = None, url_pattern: Optional[str] = URL_PATTERN, dedupe: bool = True):
        self.policy = policy
        self.url_pattern = url_pattern
        self.dedupe = dedupe

    def fit(self, X=None, y=None):
        self.policy_ = self.policy if self.policy is not None else TagPolicy()
        return self

    def transform(self, X) -> list[SegmentPair]:
        check_is_fitted(self, "policy_")
        pairs = []
        for file_id, src, tgt in check_documents(X):
            src = ET.fromstring(src) if isinstance(src, str) else src
            tgt = ET.fromstring(tgt) if isinstance(tgt, str) else tgt
            pairs.extend(extract_document_pair(src, tgt, self.policy_, file_id, self.url_pattern))
        if self.dedupe:
            pairs = filter_and_dedupe(pairs)
        return pairs


class UrlNormalizer(TransformerMixin, BaseEstimator):
    def __init__(self, pattern: str = URL_PATTERN):
        self.pattern = pattern

    def fit(self, X=None, y=None):
        return self

    def transform(self, X):
        return [normalize_urls(p, self.pattern) for p in X]


class XmlTranslator(BaseEstimator):
    """Constrained beam-search translator.

    ``fit`` builds the shared vocabulary from sources, targets and the tag
    policy, fits the scorer on the targets (``scorer="bigram"``) and, with
    ``use_memory``, indexes the training pairs as a translation memory. A
    :class:`~xmlmt.decoding.Scorer` instance may be passed instead, in
    which case it is used as is.
    """

    def __init__(
        self,
        scorer="bigram",
        beam_size: int = 4,
        max_length: int = 200,
        length_penalty: float = 0.0,
        constrained: bool = True,
        use_memory: bool = False,
        smoothing: float = 0.1,
        policy: Optional[TagPolicy] = None,
    ):
        self.scorer = scorer
        self.beam_size = beam_size
        self.max_length = max_length
        self.length_penalty = length_penalty
        self.constrained = constrained
        self.use_memory = use_memory
        self.smoothing = smoothing
        self.policy = policy

    def _config(self) -> BeamConfig:
        check_positive_int(self.beam_size, "beam_size")
        check_positive_int(self.max_length, "max_length", minimum=2)
        return BeamConfig(self.beam_size, self.max_length, self.length_penalty, self.constrained)

    def fit(self, X, y=None):
        self._config()
        if isinstance(self.scorer, Scorer):
            self.scorer_ = self.scorer
            self.vocabulary_ = self.scorer.vocab
            self.memory_ = None
            if self.use_memory and y is not None:
                self.memory_ = self._memory(X, y)
            return self
        sources = check_segments(X, "X")
        check_nonempty(sources)
        targets = check_segments(y, "y") if y is not None else []
        if targets:
            check_consistent_length(sources, targets)
        policy = self.policy if self.policy is not None else TagPolicy()
        self.vocabulary_ = Vocabulary.build(
            [s.surfaces for s in sources] + [t.surfaces for t in targets], tags=policy.tags
        )
        if self.scorer == "bigram":
            if not targets:
                raise ValueError("the bigram scorer needs targets")
            self.scorer_ = BigramScorer(self.vocabulary_, self.smoothing).fit(t.surfaces for t in targets)
        elif self.scorer == "uniform":
            self.scorer_ = UniformScorer(self.vocabulary_)
        else:
            raise ValueError(f"unknown scorer {self.scorer!r}")
        self.memory_ = self._memory(sources, targets) if self.use_memory and targets else None
        return self

    def _memory(self, X, y):
        sources, targets = check_segments(X, "X"), check_segments(y, "y")
        check_consistent_length(sources, targets)
        return TranslationMemory(SegmentPair(s, t) for s, t in zip(sources, targets))

    def decode(self, X):
        """Full :class:`~xmlmt.decoding.DecodeResult` objects."""
        check_is_fitted(self, "scorer_")
        cfg = self._config()
        return [beam_search(self.scorer_, seg, self.memory_, cfg) for seg in check_segments(X)]

    def predict(self, X) -> list[str]:
        return [serialize_segment(r.segment) for r in self.decode(X)]

    def score(self, X, y) -> float:
        """XML-BLEU of the predictions against ``y``."""
        hyps = [r.segment for r in self.decode(X)]
        refs = check_segments(y, "y")
        check_consistent_length(hyps, refs)
        return xml_bleu([EvalPair(h, r) for h, r in zip(hyps, refs)])
