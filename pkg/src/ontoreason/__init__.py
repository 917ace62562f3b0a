"""Fuzzy-set neural reasoning over TBox and ABox of an ontology."""

from ontoreason.kb import KbSplit, KnowledgeBase, Vocab, load_kb
from ontoreason.query import And, Anchor, Not, Or, Proj, QueryInstance, parse_query, render_query

__all__ = [
    "And",
    "Anchor",
    "KbSplit",
    "KnowledgeBase",
    "Not",
    "Or",
    "Proj",
    "QueryInstance",
    "Vocab",
    "load_kb",
    "parse_query",
    "render_query",
]

__version__ = "0.1.0"
