"""Phrase construction and tokenization shared by curation and embedding."""

from __future__ import annotations

import re

DEFAULT_PHRASE_TEMPLATE = "{name} is {value}"

_NONWORD = re.compile(r"[^A-Za-z0-9]+")
_CAMEL = re.compile(r"(?<=[a-z0-9])(?=[A-Z])")


def tokenize(text: str) -> list[str]:
    """Lowercased tokens split on whitespace, punctuation, underscores,
    hyphens, and camelCase boundaries.

    Never returns an empty list: when no token survives, the raw string is
    the single token.
    """
    parts: list[str] = []
    for chunk in _NONWORD.split(text):
        if chunk:
            parts.extend(p.lower() for p in _CAMEL.split(chunk) if p)
    return parts if parts else [text]


def build_phrase(column_name: str, raw_value: str, template: str = DEFAULT_PHRASE_TEMPLATE) -> str:
    """Textual rendering of one categorical cell, e.g. "fruit is apple".

    Numerical cells never go through phrases (their embedding is the scaled
    header embedding); callers only invoke this for categorical values. An
    empty value falls back to the header-only phrase.
    """
    if raw_value.strip() == "":
        return column_name
    return template.format(name=column_name, value=raw_value)
