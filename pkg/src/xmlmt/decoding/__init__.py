"""Constrained decoding over a pluggable step scorer."""

from .beam import (
    BeamCandidate,
    BeamConfig,
    DecodeResult,
    VocabularyError,
    beam_search,
    constrained_beam_search,
    restore_attributes,
    unconstrained_beam_search,
)
from .copy import GENERATED, RETRIEVAL, SOURCE, combine, combine_distributions, copies
from .memory import TranslationMemory, retrieve_tm
from .scorers import (
    BigramScorer,
    NoisyScorer,
    Scorer,
    ScriptedScorer,
    StepDistribution,
    UniformScorer,
    load_scorer,
)
from .vocab import BOS, EOS, UnknownTokenError, Vocabulary

__all__ = [
    "BOS",
    "EOS",
    "GENERATED",
    "RETRIEVAL",
    "SOURCE",
    "BeamCandidate",
    "BeamConfig",
    "BigramScorer",
    "DecodeResult",
    "NoisyScorer",
    "Scorer",
    "ScriptedScorer",
    "StepDistribution",
    "TranslationMemory",
    "UniformScorer",
    "UnknownTokenError",
    "Vocabulary",
    "VocabularyError",
    "beam_search",
    "combine",
    "combine_distributions",
    "constrained_beam_search",
    "copies",
    "load_scorer",
    "restore_attributes",
    "retrieve_tm",
    "unconstrained_beam_search",
]
