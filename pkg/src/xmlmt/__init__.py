"""Markup-aware machine translation toolkit.

Parallel segment extraction from tag-aligned XML documents, structure-aware
evaluation metrics, and XML-constrained beam search with discrete copy
channels over a pluggable scorer.
"""

from .xml_model import (
    Close,
    Entity,
    Open,
    TagPolicy,
    Text,
    Token,
    TokenKind,
    XmlSegment,
    parse_segment,
    serialize_segment,
    tag_skeleton,
    validate_xml,
)

__version__ = "0.1.0"

__all__ = [
    "Close",
    "Entity",
    "Open",
    "TagPolicy",
    "Text",
    "Token",
    "TokenKind",
    "XmlSegment",
    "parse_segment",
    "serialize_segment",
    "tag_skeleton",
    "validate_xml",
]
