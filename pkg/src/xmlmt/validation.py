"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

from typing import Iterable, Sequence

from .xml_model import XmlSegment, parse_segment


def check_segments(X, name: str = "X", lenient: bool = False) -> list[XmlSegment]:
    """Coerce strings, token lists or segments into a list of :class:`XmlSegment`."""
    if isinstance(X, (str, XmlSegment)):
        raise TypeError(f"{name} must be a sequence of segments, not a single segment")
    out = []
    for i, item in enumerate(X):
        if isinstance(item, XmlSegment):
            out.append(item)
        elif isinstance(item, str):
            out.append(parse_segment(item, lenient=lenient))
        elif isinstance(item, (list, tuple)) and all(isinstance(t, str) for t in item):
            out.append(XmlSegment.from_surfaces(item))
        else:
            raise TypeError(f"{name}[{i}] has unsupported type {type(item).__name__}")
    return out


def check_consistent_length(*arrays: Sequence):
    lengths = {len(a) for a in arrays if a is not None}
    if len(lengths) > 1:
        raise ValueError(f"inconsistent numbers of samples: {sorted(lengths)}")


def check_nonempty(X: Sequence, name: str = "X"):
    if len(X) == 0:
        raise ValueError(f"{name} is empty")


def check_positive_int(value, name: str, minimum: int = 1) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < minimum:
        raise ValueError(f"{name} must be an integer >= {minimum}, got {value!r}")
    return value


def check_documents(X: Iterable) -> list[tuple]:
    """Normalize document pairs to ``(file_id, src_root, tgt_root)`` triples."""
    out = []
    for i, item in enumerate(X):
        if len(item) == 2:
            out.append((str(i), item[0], item[1]))
        elif len(item) == 3:
            out.append(tuple(item))
        else:
            raise ValueError(f"document {i}: expected (src, tgt) or (file_id, src, tgt)")
    return out
