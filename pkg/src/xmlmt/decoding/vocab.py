from __future__ import annotations

from typing import Iterable, Sequence

from ..xml_model import ENTITIES, TokenKind, token_from_surface

BOS = "BOS"
EOS = "EOS"


class UnknownTokenError(KeyError):
    pass


class Vocabulary:
    """Shared source/target vocabulary of token surfaces.

    Always holds ``BOS``, ``EOS`` and the three entities; tag tokens are
    recognized by their ``<name>``/``</name>`` surface.
    """

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        for special in (BOS, EOS, *ENTITIES):
            if special not in tokens:
                tokens.append(special)
        self.tokens = tokens
        self._index = {}
        for i, tok in enumerate(tokens):
            if tok in self._index:
                raise ValueError(f"duplicate vocabulary entry {tok!r}")
            self._index[tok] = i
        self.bos = self._index[BOS]
        self.eos = self._index[EOS]
        self.open_ids: dict[str, int] = {}
        self.close_ids: dict[str, int] = {}
        for i, tok in enumerate(tokens):
            if tok in (BOS, EOS):
                continue
            kind = token_from_surface(tok)
            if kind.kind is TokenKind.OPEN:
                self.open_ids[kind.value] = i
            elif kind.kind is TokenKind.CLOSE:
                self.close_ids[kind.value] = i

    @classmethod
    def build(cls, sequences: Iterable[Sequence[str]] = (), tags: Iterable[str] = ()) -> "Vocabulary":
        """Specials first, then tag pairs, then every other token, each sorted."""
        tag_names = set(tags)
        words = set()
        for seq in sequences:
            for tok in seq:
                if tok in (BOS, EOS):
                    continue
                t = token_from_surface(tok)
                if t.is_tag:
                    tag_names.add(t.value)
                elif tok not in ENTITIES:
                    words.add(tok)
        tokens = [BOS, EOS, *ENTITIES]
        for name in sorted(tag_names):
            tokens += [f"<{name}>", f"</{name}>"]
        tokens += sorted(words)
        return cls(tokens)

    def __len__(self):
        return len(self.tokens)

    def __contains__(self, tok):
        return tok in self._index

    def __iter__(self):
        return iter(self.tokens)

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __getstate__(self):
        return {"tokens": self.tokens}

    def __setstate__(self, state):
        self.__init__(state["tokens"])

    def index(self, tok: str) -> int:
        try:
            return self._index[tok]
        except KeyError:
            raise UnknownTokenError(tok) from None

    def indices(self, toks: Iterable[str]) -> list[int]:
        return [self.index(t) for t in toks]
