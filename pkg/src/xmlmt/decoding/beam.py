"""XML-constrained beam search.

Each expansion scores ``log p + s + alpha`` for every vocabulary entry. In
constrained mode three masks keep the output well-formed and tag-complete:

* an opening tag is allowed only while the source still has an unopened
  instance of that tag;
* a closing tag is allowed only for the most recently opened tag;
* ``EOS`` is allowed only once every source tag has been opened and closed.

Successors are the global top-``beam_size`` (candidate, token) entries, ties
broken by lower candidate index, then lower vocabulary index. The search
starts from a single ``BOS`` candidate, so the first step never yields two
identical successors. A finished candidate competes with its frozen score and
is carried over at most once per step.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..xml_model import TokenKind, XmlSegment, token_from_surface, validate_xml
from .copy import GENERATED, SOURCE, combine, copied_position
from .memory import TranslationMemory
from .scorers import Scorer
from .vocab import BOS, EOS, Vocabulary

logger = logging.getLogger(__name__)

NEG_INF = -np.inf


class VocabularyError(ValueError):
    pass


@dataclass
class BeamConfig:
    beam_size: int = 4
    max_length: int = 200
    length_penalty: float = 0.0
    constrained: bool = True

    def __post_init__(self):
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        if self.max_length < 2:
            raise ValueError("max_length must be >= 2")


@dataclass
class BeamCandidate:
    y: tuple[str, ...]
    s: float
    t: Counter = field(default_factory=Counter)
    t_stack: tuple[str, ...] = ()
    channels: tuple[str, ...] = ()
    origins: tuple[Optional[int], ...] = ()

    @property
    def finished(self) -> bool:
        return self.y[-1] == EOS


@dataclass
class DecodeResult:
    """Best candidate of a search.

    ``truncated`` is set when the search stopped (length limit or no
    admissible continuation) before the candidate emitted ``EOS``.
    ``copy_trace`` labels every emitted token with the channel it came from;
    ``source_positions`` gives, for source-copied tokens, the index of the
    source token it was copied from.
    """

    segment: XmlSegment
    truncated: bool
    score: float
    copy_trace: list[str]
    source_positions: list[Optional[int]]
    retrieved: Optional[XmlSegment] = None

    @property
    def tokens(self) -> list[str]:
        return self.segment.surfaces


class _TagIndex:
    def __init__(self, vocab: Vocabulary):
        self.open_names = list(vocab.open_ids)
        self.open_ids = np.array([vocab.open_ids[n] for n in self.open_names], dtype=int)
        self.close_ids = np.array(list(vocab.close_ids.values()), dtype=int)
        self.close_by_name = dict(vocab.close_ids)
        self.open_by_id = {i: n for n, i in vocab.open_ids.items()}


def _apply_masks(row: np.ndarray, cand: BeamCandidate, tags: _TagIndex, eos: int):
    if len(tags.open_ids):
        blocked = np.array([cand.t[n] <= 0 for n in tags.open_names])
        row[tags.open_ids[blocked]] = NEG_INF
    if len(tags.close_ids):
        keep = tags.close_by_name.get(cand.t_stack[-1]) if cand.t_stack else None
        kept = row[keep] if keep is not None else None
        row[tags.close_ids] = NEG_INF
        if keep is not None:
            row[keep] = kept
    if cand.t or cand.t_stack:
        row[eos] = NEG_INF


def check_candidate(cand: BeamCandidate, source_tags: Counter):
    """Debug harness: the bookkeeping of a constrained candidate is consistent."""
    opened = Counter()
    stack = []
    for tok in cand.y[1:]:
        if tok in (BOS, EOS):
            continue
        t = token_from_surface(tok)
        if t.kind is TokenKind.OPEN:
            opened[t.value] += 1
            stack.append(t.value)
        elif t.kind is TokenKind.CLOSE:
            assert stack and stack[-1] == t.value, f"bad close in {cand.y}"
            stack.pop()
    assert tuple(stack) == cand.t_stack, (stack, cand.t_stack)
    assert opened + cand.t == source_tags, (opened, cand.t, source_tags)
    assert sum(cand.t.values()) + len(cand.t_stack) <= sum(source_tags.values())


def beam_search(
    scorer: Scorer,
    source: XmlSegment,
    memory: Optional[TranslationMemory] = None,
    cfg: BeamConfig = BeamConfig(),
    check_invariants: bool = False,
) -> DecodeResult:
    vocab = scorer.vocab
    src = tuple(source.surfaces)
    source_tags = Counter(t.value for t in source.tokens if t.kind is TokenKind.OPEN)
    if cfg.constrained:
        if not validate_xml(source):
            raise ValueError(f"source is not well-formed: {source}")
        missing = [n for n in source_tags if n not in vocab.open_ids or n not in vocab.close_ids]
        if missing:
            raise VocabularyError(f"vocabulary lacks tags {sorted(missing)}")
    gaps = [tok for tok in src if tok not in vocab]
    if gaps:
        raise VocabularyError(f"vocabulary lacks source tokens {gaps[:5]}")

    retrieved_pair = memory.retrieve(source) if memory is not None else None
    retrieved = tuple(retrieved_pair.target.surfaces) if retrieved_pair is not None else None

    tags = _TagIndex(vocab)
    size = len(vocab)
    beam = [BeamCandidate((BOS,), 0.0, Counter(source_tags) if cfg.constrained else Counter())]
    step = 0
    while not beam[0].finished and step < cfg.max_length:
        rows = []
        step_info = []
        for cand in beam:
            if cand.finished:
                row = np.full(size, NEG_INF)
                row[vocab.eos] = cand.s
                rows.append(row)
                step_info.append(None)
                continue
            d = scorer.step(src, cand.y, retrieved)
            combined = combine(d, src, retrieved, vocab)
            row = _scores(combined.probs, cand, cfg, tags, vocab)
            channel = combined.channel
            if channel != GENERATED and not np.isfinite(row).any():
                # copy mass entirely masked: fall back to generation
                channel = GENERATED
                row = _scores(np.exp(d.gen_logprobs), cand, cfg, tags, vocab)
            rows.append(row)
            step_info.append((channel, d.source_attention if channel == SOURCE else None))

        flat = np.concatenate(rows)
        order = np.argsort(-flat, kind="stable")
        chosen = [k for k in order[:cfg.beam_size] if np.isfinite(flat[k])]
        if not chosen:
            logger.debug("no admissible continuation at step %d", step)
            break
        new_beam = []
        for k in chosen:
            j, w = divmod(int(k), size)
            cand = beam[j]
            if cand.finished:
                new_beam.append(cand)
                continue
            tok = vocab.tokens[w]
            channel, att = step_info[j]
            origin = copied_position(att, src, tok) if att is not None else None
            t, t_stack = cand.t, cand.t_stack
            if cfg.constrained:
                name = tags.open_by_id.get(w)
                if name is not None:
                    t = t.copy()
                    t[name] -= 1
                    if t[name] == 0:
                        del t[name]
                    t_stack = t_stack + (name,)
                elif t_stack and w == tags.close_by_name.get(t_stack[-1]):
                    t_stack = t_stack[:-1]
            new = BeamCandidate(
                cand.y + (tok,),
                float(flat[k]),
                t,
                t_stack,
                cand.channels + (channel,),
                cand.origins + (origin,),
            )
            if check_invariants and cfg.constrained:
                check_candidate(new, source_tags)
            new_beam.append(new)
        beam = new_beam
        step += 1

    best = beam[0]
    out = list(best.y[1:])
    channels, origins = list(best.channels), list(best.origins)
    if best.finished:
        out, channels, origins = out[:-1], channels[:-1], origins[:-1]
    return DecodeResult(
        segment=XmlSegment.from_surfaces(out),
        truncated=not best.finished,
        score=best.s,
        copy_trace=channels,
        source_positions=origins,
        retrieved=retrieved_pair.target if retrieved_pair is not None else None,
    )


def _scores(probs, cand, cfg, tags, vocab):
    with np.errstate(divide="ignore"):
        row = np.log(probs) + cand.s + cfg.length_penalty
    row[vocab.bos] = NEG_INF
    if cfg.constrained:
        _apply_masks(row, cand, tags, vocab.eos)
    return row


def constrained_beam_search(scorer, source, memory=None, cfg: Optional[BeamConfig] = None, **kw) -> DecodeResult:
    cfg = cfg or BeamConfig()
    if not cfg.constrained:
        cfg = BeamConfig(cfg.beam_size, cfg.max_length, cfg.length_penalty, True)
    return beam_search(scorer, source, memory, cfg, **kw)


def unconstrained_beam_search(scorer, source, memory=None, cfg: Optional[BeamConfig] = None, **kw) -> DecodeResult:
    cfg = cfg or BeamConfig(constrained=False)
    if cfg.constrained:
        cfg = BeamConfig(cfg.beam_size, cfg.max_length, cfg.length_penalty, False)
    return beam_search(scorer, source, memory, cfg, **kw)


def restore_attributes(result: DecodeResult, source_attributes: Sequence[Optional[dict]]) -> str:
    """Serialize the output, re-attaching attributes to source-copied opening tags.

    ``source_attributes`` is aligned with the source tokens, as returned by
    :func:`~xmlmt.xml_model.parse_segment_with_attributes`. Tags that were
    generated, or copied from a retrieved translation, stay bare.
    """
    from xml.sax.saxutils import quoteattr

    parts = []
    prev = None
    for tok, channel, pos in zip(result.segment.tokens, result.copy_trace, result.source_positions):
        if prev is not None and prev.kind is not TokenKind.OPEN and tok.kind is not TokenKind.CLOSE:
            parts.append(" ")
        surface = tok.surface
        if tok.kind is TokenKind.OPEN and channel == SOURCE and pos is not None:
            attrs = source_attributes[pos] or {}
            if attrs:
                rendered = "".join(f" {k}={quoteattr(v)}" for k, v in attrs.items())
                surface = f"<{tok.value}{rendered}>"
        parts.append(surface)
        prev = tok
    return "".join(parts)
