"""Markup-bearing text segments.

A segment is a flat token sequence where every ``<name>``/``</name>`` tag and
each of the escape entities ``&amp;``, ``&lt;`` and ``&gt;`` is a single atomic
token. Everything else is text, split by a pluggable tokenizer (whitespace by
default).

Serialization convention: tokens are joined with a single space, except that
no space follows an opening tag and no space precedes a closing tag. So
``Click <b>Save</b> now`` survives a parse/serialize round trip verbatim.
"""

from __future__ import annotations

import configparser
import enum
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

logger = logging.getLogger(__name__)

ENTITIES = ("&amp;", "&lt;", "&gt;")
ENTITY_CHARS = {"&amp;": "&", "&lt;": "<", "&gt;": ">"}

_NAME = r"[A-Za-z_][-A-Za-z0-9_.:]*"
_TAG_NAME_RE = re.compile(rf"^{_NAME}$")
_ENTITY_RE = re.compile("|".join(re.escape(e) for e in ENTITIES))
# lenient mode only: attributes and self-closing tags
_LENIENT_TAG_RE = re.compile(
    rf"<(/?)({_NAME})((?:\s+[^\s=<>/]+\s*=\s*(?:\"[^\"]*\"|'[^']*'))*)\s*(/?)>"
)
_ATTR_RE = re.compile(r"([^\s=<>/]+)\s*=\s*(?:\"([^\"]*)\"|'([^']*)')")

Tokenizer = Callable[[str], Sequence[str]]


class SegmentParseError(ValueError):
    """Malformed tag syntax. ``offset`` is the UTF-8 byte offset of the culprit."""

    def __init__(self, message: str, text: str, char_offset: int):
        self.offset = len(text[:char_offset].encode("utf-8"))
        super().__init__(f"{message} at byte offset {self.offset}")


class MalformedSegmentError(ValueError):
    """Raised when an operation needs a well-formed segment and did not get one."""


class TokenKind(enum.Enum):
    TEXT = "text"
    OPEN = "open"
    CLOSE = "close"
    ENTITY = "entity"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    value: str

    def __post_init__(self):
        if self.kind in (TokenKind.OPEN, TokenKind.CLOSE):
            if not _TAG_NAME_RE.match(self.value):
                raise ValueError(f"invalid tag name {self.value!r}")
        elif self.kind is TokenKind.ENTITY:
            if self.value not in ENTITIES:
                raise ValueError(f"unknown entity {self.value!r}")
        elif not self.value or any(c.isspace() for c in self.value):
            raise ValueError(f"text token must be non-empty without whitespace: {self.value!r}")

    @property
    def is_tag(self) -> bool:
        return self.kind in (TokenKind.OPEN, TokenKind.CLOSE)

    @property
    def surface(self) -> str:
        if self.kind is TokenKind.OPEN:
            return f"<{self.value}>"
        if self.kind is TokenKind.CLOSE:
            return f"</{self.value}>"
        return self.value

    def __repr__(self):
        return f"{self.kind.name.title()}({self.value!r})"


def Text(value: str) -> Token:
    return Token(TokenKind.TEXT, value)


def Open(name: str) -> Token:
    return Token(TokenKind.OPEN, name)


def Close(name: str) -> Token:
    return Token(TokenKind.CLOSE, name)


def Entity(value: str) -> Token:
    return Token(TokenKind.ENTITY, value)


def token_from_surface(surface: str) -> Token:
    """Inverse of :attr:`Token.surface` for a single token string."""
    if surface in ENTITIES:
        return Entity(surface)
    if surface.startswith("</") and surface.endswith(">"):
        return Close(surface[2:-1])
    if surface.startswith("<") and surface.endswith(">") and len(surface) > 2:
        return Open(surface[1:-1])
    return Text(surface)


@dataclass(frozen=True)
class XmlSegment:
    tokens: tuple[Token, ...] = ()

    def __post_init__(self):
        if not isinstance(self.tokens, tuple):
            object.__setattr__(self, "tokens", tuple(self.tokens))

    @classmethod
    def from_surfaces(cls, surfaces: Iterable[str]) -> "XmlSegment":
        return cls(tuple(token_from_surface(s) for s in surfaces))

    def __len__(self):
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)

    def __str__(self):
        return serialize_segment(self)

    @property
    def surfaces(self) -> list[str]:
        return [t.surface for t in self.tokens]

    def tag_multiset(self) -> Counter:
        """Counter over tag names; open and close tokens counted separately."""
        return Counter(t.surface for t in self.tokens if t.is_tag)

    def tag_count(self) -> int:
        return sum(1 for t in self.tokens if t.is_tag)


def whitespace_tokenizer(text: str) -> list[str]:
    return text.split()


def parse_segment(
    text: str,
    tokenizer: Tokenizer = whitespace_tokenizer,
    lenient: bool = False,
) -> XmlSegment:
    """Tokenize ``text`` into an :class:`XmlSegment`.

    Tags and entities become atomic tokens and always force token
    boundaries; the text between them is handed to ``tokenizer``. Attributes
    and self-closing tags raise :class:`SegmentParseError` unless ``lenient``
    is set, in which case attributes are dropped (with a warning) and
    ``<x/>`` becomes ``<x></x>``.
    """
    return _parse(text, tokenizer, lenient)[0]


def parse_segment_with_attributes(
    text: str, tokenizer: Tokenizer = whitespace_tokenizer
) -> tuple[XmlSegment, list[Optional[dict[str, str]]]]:
    """Lenient parse that also returns the attributes of each opening tag.

    The second element is aligned with the token list: an attribute dict for
    every opening tag, ``None`` elsewhere.
    """
    return _parse(text, tokenizer, lenient=True, quiet=True)


def _parse(text, tokenizer, lenient, quiet=False):
    tokens: list[Token] = []
    attrs: list[Optional[dict[str, str]]] = []

    def add_words(chunk: str):
        # tokenizers may return blank pieces (e.g. character splitting)
        for piece in tokenizer(chunk):
            if piece.strip():
                tokens.append(Text(piece))
                attrs.append(None)

    def add_text(chunk: str):
        pos = 0
        for m in _ENTITY_RE.finditer(chunk):
            add_words(chunk[pos:m.start()])
            tokens.append(Entity(m.group()))
            attrs.append(None)
            pos = m.end()
        add_words(chunk[pos:])

    i = 0
    n = len(text)
    while i < n:
        lt = text.find("<", i)
        if lt < 0:
            add_text(text[i:])
            break
        add_text(text[i:lt])
        gt = text.find(">", lt + 1)
        nxt = text.find("<", lt + 1)
        if gt < 0 or (0 <= nxt < gt):
            raise SegmentParseError("unterminated '<'", text, lt)
        body = text[lt + 1:gt]
        closing = body.startswith("/")
        name = body[1:] if closing else body
        if _TAG_NAME_RE.match(name):
            tokens.append(Close(name) if closing else Open(name))
            attrs.append(None if closing else {})
        elif not name.strip() or name.strip() == "/":
            raise SegmentParseError("empty tag name", text, lt)
        else:
            m = _LENIENT_TAG_RE.fullmatch(text, lt, gt + 1)
            if not lenient or m is None or (m.group(1) and (m.group(3) or m.group(4))):
                raise SegmentParseError(f"malformed tag {text[lt:gt + 1]!r}", text, lt)
            tag_attrs = {a: v1 if v1 or not v2 else v2 for a, v1, v2 in _ATTR_RE.findall(m.group(3))}
            if tag_attrs and not quiet:
                logger.warning("dropping attributes of <%s> at offset %d", m.group(2), lt)
            if m.group(1):
                tokens.append(Close(m.group(2)))
                attrs.append(None)
            else:
                tokens.append(Open(m.group(2)))
                attrs.append(tag_attrs)
                if m.group(4):
                    tokens.append(Close(m.group(2)))
                    attrs.append(None)
        i = gt + 1
    return XmlSegment(tuple(tokens)), attrs


def serialize_segment(seg: XmlSegment | Iterable[Token]) -> str:
    tokens = seg.tokens if isinstance(seg, XmlSegment) else tuple(seg)
    parts: list[str] = []
    prev: Optional[Token] = None
    for tok in tokens:
        if prev is not None and prev.kind is not TokenKind.OPEN and tok.kind is not TokenKind.CLOSE:
            parts.append(" ")
        parts.append(tok.surface)
        prev = tok
    return "".join(parts)


def validate_xml(seg: XmlSegment | Iterable[Token]) -> bool:
    """True iff the tag tokens nest properly, as if wrapped in a dummy root."""
    stack: list[str] = []
    for tok in seg:
        if tok.kind is TokenKind.OPEN:
            stack.append(tok.value)
        elif tok.kind is TokenKind.CLOSE:
            if not stack or stack.pop() != tok.value:
                return False
    return not stack


@dataclass(frozen=True)
class TagNode:
    name: str
    children: tuple["TagNode", ...] = ()

    def __repr__(self):
        if not self.children:
            return self.name
        return f"{self.name}[{', '.join(map(repr, self.children))}]"


TagSkeleton = tuple[TagNode, ...]


def tag_skeleton(seg: XmlSegment) -> TagSkeleton:
    """Ordered forest of tag names with all text dropped."""
    if not validate_xml(seg):
        raise MalformedSegmentError(f"not well-formed: {serialize_segment(seg)!r}")
    stack: list[tuple[str, list]] = [("", [])]
    for tok in seg:
        if tok.kind is TokenKind.OPEN:
            stack.append((tok.value, []))
        elif tok.kind is TokenKind.CLOSE:
            name, kids = stack.pop()
            stack[-1][1].append(TagNode(name, tuple(kids)))
    return tuple(stack[0][1])


def canonical_skeleton(skel: TagSkeleton) -> TagSkeleton:
    """Sort siblings recursively, for order-free structure comparison."""
    nodes = [TagNode(n.name, canonical_skeleton(n.children)) for n in skel]
    return tuple(sorted(nodes, key=repr))


# Tag categories of the documentation corpus the toolkit was built for.
DEFAULT_TRANSLATABLE = frozenset("""
    title p li shortdesc indexterm note section entry dt dd fn cmd xref info
    stepresult stepxmp example context term choice stentry result navtitle
    linktext postreq prereq cite chentry sli choption chdesc choptionhd
    chdeschd sectiondiv pd pt stepsection index-see conbody fig body ul
""".split())
DEFAULT_TRANSPARENT = frozenset("""
    ph uicontrol b parmname i u menucascade image userinput codeph
    systemoutput filepath varname apiname
""".split())
DEFAULT_UNTRANSLATABLE = frozenset("sup codeblock prodname".split())

TRANSLATABLE = "translatable"
TRANSPARENT = "transparent"
UNTRANSLATABLE = "untranslatable"


@dataclass(frozen=True)
class TagPolicy:
    """Tag-name categories driving extraction.

    Tags in none of the three sets fall back to ``unknown`` (transparent by
    default): they are kept inline and their children are visited.
    """

    translatable: frozenset = field(default=DEFAULT_TRANSLATABLE)
    transparent: frozenset = field(default=DEFAULT_TRANSPARENT)
    untranslatable: frozenset = field(default=DEFAULT_UNTRANSLATABLE)
    unknown: str = TRANSPARENT

    def __post_init__(self):
        for name in ("translatable", "transparent", "untranslatable"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        overlap = (
            (self.translatable & self.transparent)
            | (self.translatable & self.untranslatable)
            | (self.transparent & self.untranslatable)
        )
        if overlap:
            raise ValueError(f"tag categories overlap: {sorted(overlap)}")
        if self.unknown not in (TRANSLATABLE, TRANSPARENT, UNTRANSLATABLE):
            raise ValueError(f"bad fallback category {self.unknown!r}")

    def category(self, tag: str) -> str:
        if tag in self.translatable:
            return TRANSLATABLE
        if tag in self.transparent:
            return TRANSPARENT
        if tag in self.untranslatable:
            return UNTRANSLATABLE
        return self.unknown

    @property
    def tags(self) -> frozenset:
        return self.translatable | self.transparent | self.untranslatable

    @classmethod
    def from_file(cls, path: str | Path) -> "TagPolicy":
        """Read an INI file with a ``[tags]`` section.

        Each of ``translatable``, ``transparent`` and ``untranslatable`` holds a
        whitespace- or comma-separated list; a missing key keeps the default.
        An optional ``unknown`` key sets the fallback category.
        """
        parser = configparser.ConfigParser()
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
        if "tags" not in parser:
            raise ValueError(f"{path}: missing [tags] section")
        section = parser["tags"]
        kwargs = {}
        for key in ("translatable", "transparent", "untranslatable"):
            if key in section:
                kwargs[key] = frozenset(section[key].replace(",", " ").split())
        if "unknown" in section:
            kwargs["unknown"] = section["unknown"].strip()
        return cls(**kwargs)

    def to_ini(self) -> str:
        lines = ["[tags]"]
        for key in ("translatable", "transparent", "untranslatable"):
            lines.append(f"{key} = {' '.join(sorted(getattr(self, key)))}")
        lines.append(f"unknown = {self.unknown}")
        return "\n".join(lines) + "\n"
