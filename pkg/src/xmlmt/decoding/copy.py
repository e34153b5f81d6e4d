"""Discrete copy decisions over the generation, source and retrieval channels.

Each copy channel attends over ``[null, z_1 .. z_U]``. The channel copies
only when some token slot gets strictly more attention than the null slot;
the source channel is consulted first, then the retrieval channel, then
generation. A copy distribution aggregates attention per vocabulary entry
and is renormalized over the token slots.
"""

from __future__ import annotations

from typing import NamedTuple, Optional, Sequence

import numpy as np

from .scorers import StepDistribution
from .vocab import Vocabulary

GENERATED = "generated"
SOURCE = "source"
RETRIEVAL = "retrieval"


def copies(attention: Optional[np.ndarray], tokens: Optional[Sequence[str]]) -> bool:
    """True when the channel copies, i.e. its delta is 0. Ties go to the null slot."""
    if attention is None:
        return False
    n = len(tokens) if tokens is not None else 0
    if len(attention) != n + 1:
        raise ValueError(f"attention has {len(attention)} slots for {n} tokens")
    if n == 0:
        return False
    return bool(attention[1:].max() > attention[0])


def copy_distribution(attention: np.ndarray, tokens: Sequence[str], vocab: Vocabulary) -> np.ndarray:
    probs = np.zeros(len(vocab))
    np.add.at(probs, vocab.indices(tokens), attention[1:])
    total = probs.sum()
    if total <= 0:
        raise ValueError("copy channel has no mass on token slots")
    return probs / total


class Combined(NamedTuple):
    probs: np.ndarray
    channel: str
    delta_source: int
    delta_retrieval: int


def combine(
    d: StepDistribution,
    source_tokens: Optional[Sequence[str]],
    retrieved_tokens: Optional[Sequence[str]],
    vocab: Vocabulary,
) -> Combined:
    """Final distribution plus the channel that produced it."""
    copy_src = copies(d.source_attention, source_tokens)
    copy_ret = copies(d.retrieval_attention, retrieved_tokens)
    ds, dr = int(not copy_src), int(not copy_ret)
    if copy_src:
        return Combined(copy_distribution(d.source_attention, source_tokens, vocab), SOURCE, ds, dr)
    if copy_ret:
        return Combined(copy_distribution(d.retrieval_attention, retrieved_tokens, vocab), RETRIEVAL, ds, dr)
    return Combined(np.exp(d.gen_logprobs), GENERATED, ds, dr)


def combine_distributions(
    d: StepDistribution,
    source_tokens: Optional[Sequence[str]],
    retrieved_tokens: Optional[Sequence[str]],
    vocab: Vocabulary,
) -> np.ndarray:
    """``(1 - ds) * p_s + ds * (dr * p_g + (1 - dr) * p_r)`` with 0/1 deltas."""
    return combine(d, source_tokens, retrieved_tokens, vocab).probs


def copied_position(attention: np.ndarray, tokens: Sequence[str], token: str) -> Optional[int]:
    """Index into ``tokens`` of the most-attended slot holding ``token``."""
    best, best_pos = -1.0, None
    for i, tok in enumerate(tokens):
        if tok == token and attention[i + 1] > best:
            best, best_pos = attention[i + 1], i
    return best_pos
