"""Step scorers: the pluggable model behind the decoder.

A scorer maps ``(source, prefix, retrieved)`` token surfaces to a
:class:`StepDistribution`. The neural model is not part of this package; the
scorers here are reference implementations used for testing and for the CLI.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

from .vocab import BOS, EOS, UnknownTokenError, Vocabulary


def log_softmax(logits: np.ndarray) -> np.ndarray:
    finite = logits[np.isfinite(logits)]
    if finite.size == 0:
        raise ValueError("no finite logits")
    shifted = logits - finite.max()
    with np.errstate(divide="ignore"):
        return shifted - np.log(np.exp(shifted).sum())


def _log(probs: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(probs)


@dataclass
class StepDistribution:
    """One decoding step.

    ``source_attention`` covers ``[null, x_1 .. x_N]`` and
    ``retrieval_attention`` covers ``[null, z_1 .. z_U]`` where ``z`` are the
    retrieved target tokens; slot 0 is the do-not-copy slot.
    """

    gen_logprobs: np.ndarray
    source_attention: Optional[np.ndarray] = None
    retrieval_attention: Optional[np.ndarray] = None

    def check(self, vocab_size: int, n_source: Optional[int] = None, n_retrieved: Optional[int] = None, atol=1e-6):
        if self.gen_logprobs.shape != (vocab_size,):
            raise ValueError(f"gen_logprobs has shape {self.gen_logprobs.shape}, expected ({vocab_size},)")
        total = np.exp(self.gen_logprobs).sum()
        if abs(total - 1.0) > atol:
            raise ValueError(f"generation probabilities sum to {total}")
        for name, att, n in (
            ("source_attention", self.source_attention, n_source),
            ("retrieval_attention", self.retrieval_attention, n_retrieved),
        ):
            if att is None:
                continue
            if n is not None and len(att) != n + 1:
                raise ValueError(f"{name} has length {len(att)}, expected {n + 1}")
            if (att < 0).any() or abs(att.sum() - 1.0) > atol:
                raise ValueError(f"{name} is not a distribution")


class Scorer:
    """Base class. Subclasses implement :meth:`step`.

    ``thread_safe`` tells the decoder whether one instance may serve
    concurrent calls.
    """

    thread_safe = True

    def __init__(self, vocab: Vocabulary):
        self.vocab = vocab

    def step(self, source: Sequence[str], prefix: Sequence[str], retrieved: Optional[Sequence[str]] = None) -> StepDistribution:
        raise NotImplementedError

    def _check(self, source, prefix, retrieved=None):
        if not prefix or prefix[0] != BOS:
            raise ValueError("prefix must start with BOS")
        # earlier prefix tokens were checked when they were the last one
        for seq in (source, prefix[-1:], retrieved or ()):
            for tok in seq:
                if tok not in self.vocab:
                    raise UnknownTokenError(tok)


class UniformScorer(Scorer):
    def step(self, source, prefix, retrieved=None):
        self._check(source, prefix, retrieved)
        return StepDistribution(np.full(len(self.vocab), -np.log(len(self.vocab))))


class ScriptedScorer(Scorer):
    """Replays fixed distributions keyed by the space-joined prefix.

    Each entry is either a ``{token: prob}`` mapping or a dict with ``gen``
    and optional ``source_attention`` / ``retrieval_attention`` lists.
    Probabilities are renormalized; unlisted tokens get zero. Prefixes with
    no entry fall back to ``default`` (``"uniform"`` or ``"error"``).
    """

    def __init__(self, vocab: Vocabulary, steps: Mapping[str, Mapping], default: str = "uniform"):
        super().__init__(vocab)
        if default not in ("uniform", "error"):
            raise ValueError(f"unknown default {default!r}")
        self.default = default
        self.steps = {}
        for key, entry in steps.items():
            if "gen" in entry:
                gen = entry["gen"]
                src_att = entry.get("source_attention")
                ret_att = entry.get("retrieval_attention")
            else:
                gen, src_att, ret_att = entry, None, None
            probs = np.zeros(len(vocab))
            for tok, p in gen.items():
                probs[vocab.index(tok)] += p
            if probs.sum() <= 0:
                raise ValueError(f"step {key!r} has no probability mass")
            probs /= probs.sum()
            self.steps[key] = StepDistribution(
                _log(probs),
                None if src_att is None else np.asarray(src_att, dtype=float),
                None if ret_att is None else np.asarray(ret_att, dtype=float),
            )

    @classmethod
    def from_json(cls, path: str | Path) -> "ScriptedScorer":
        """``{"vocab": [...], "steps": {prefix: entry}, "default": ...}``"""
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(Vocabulary(data["vocab"]), data["steps"], data.get("default", "uniform"))

    def step(self, source, prefix, retrieved=None):
        self._check(source, prefix, retrieved)
        key = " ".join(prefix)
        if key in self.steps:
            return self.steps[key]
        if self.default == "error":
            raise KeyError(f"no scripted step for prefix {key!r}")
        return StepDistribution(np.full(len(self.vocab), -np.log(len(self.vocab))))


class BigramScorer(Scorer):
    """Count-based bigram model over target token sequences.

    ``smoothing`` is an add-k constant; with the default 0 the estimates are
    plain maximum likelihood. A context never seen in training gets a
    uniform distribution.
    """

    def __init__(self, vocab: Vocabulary, smoothing: float = 0.0):
        super().__init__(vocab)
        self.smoothing = smoothing
        self.counts = np.zeros((len(vocab), len(vocab)))
        self._logprobs = None

    def fit(self, sequences: Iterable[Sequence[str]]) -> "BigramScorer":
        counts = np.zeros((len(self.vocab), len(self.vocab)))
        for seq in sequences:
            ids = self.vocab.indices([BOS, *seq, EOS])
            for a, b in zip(ids, ids[1:]):
                counts[a, b] += 1
        self.counts = counts
        probs = counts + self.smoothing
        totals = probs.sum(axis=1, keepdims=True)
        unseen = totals[:, 0] == 0
        probs[unseen] = 1.0
        totals[unseen] = len(self.vocab)
        self._logprobs = _log(probs / totals)
        return self

    def step(self, source, prefix, retrieved=None):
        self._check(source, prefix, retrieved)
        if self._logprobs is None:
            raise RuntimeError("BigramScorer used before fit()")
        return StepDistribution(self._logprobs[self.vocab.index(prefix[-1])].copy())


class _NoiseTable:
    # noise depends only on (prefix length, last token); cached per key
    def __init__(self, size: int, seed: int, scale: float):
        self.size, self.seed, self.scale = size, seed, scale
        self._cache: dict[tuple[int, int], np.ndarray] = {}

    def __call__(self, length: int, last: int) -> np.ndarray:
        key = (length, last)
        vec = self._cache.get(key)
        if vec is None:
            rng = np.random.default_rng([self.seed, length, last])
            vec = self._cache[key] = rng.normal(0.0, self.scale, self.size)
        return vec


class NoisyScorer(Scorer):
    """Wraps a scorer and perturbs its generation log-probabilities.

    The perturbation is Gaussian, deterministic for a given ``seed``, and
    optionally shifted by a fixed per-token ``bias`` (in log space). Copy
    attentions pass through unchanged.
    """

    def __init__(self, base: Scorer, seed: int = 0, scale: float = 1.0, bias: Optional[Mapping[str, float]] = None):
        super().__init__(base.vocab)
        self.base = base
        self.seed = seed
        self.scale = scale
        self.bias = np.zeros(len(self.vocab))
        for tok, b in (bias or {}).items():
            self.bias[self.vocab.index(tok)] += b
        self._noise = _NoiseTable(len(self.vocab), seed, scale)

    def step(self, source, prefix, retrieved=None):
        d = self.base.step(source, prefix, retrieved)
        noise = self._noise(len(prefix), self.vocab.index(prefix[-1]))
        logits = d.gen_logprobs + noise + self.bias
        return StepDistribution(log_softmax(logits), d.source_attention, d.retrieval_attention)


def load_scorer(spec: str, vocab: Optional[Vocabulary] = None, seed: int = 0) -> Scorer:
    """Build a scorer from a CLI spec.

    ``uniform``, ``scripted:PATH``, ``bigram:PATH`` (JSON-lines with a
    ``tgt`` field) and ``random`` / ``random:SCALE``. All but ``scripted``
    need ``vocab``; ``bigram`` extends it with the training tokens.
    """
    kind, _, arg = spec.partition(":")
    if kind == "scripted":
        return ScriptedScorer.from_json(arg)
    if kind == "uniform":
        return UniformScorer(vocab)
    if kind == "random":
        return NoisyScorer(UniformScorer(vocab), seed=seed, scale=float(arg) if arg else 1.0)
    if kind == "bigram":
        from ..xml_model import parse_segment

        seqs = []
        with open(arg, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    seqs.append(parse_segment(json.loads(line)["tgt"]).surfaces)
        base = [vocab.tokens] if vocab is not None else []
        full = Vocabulary.build(base + seqs)
        return BigramScorer(full).fit(seqs)
    raise ValueError(f"unknown scorer spec {spec!r}")

