"""Toolkit for correcting noisy structured lexicographic XML.

Edits are expressed as commands over element ids, kept in plain-text
command sets, and applied by replaying the whole sequence against the
untouched source document. See README.md and dml-grammar.md.
"""

from .document import (
    Document, ElementNode, TextNode, iter_elements, load_xml, serialize_xml,
    tree_equal,
)
from .errors import (
    ApplyError, AuditError, DiffError, DmlError, ManifestError, RuleError,
    ScriptError, XmlLoadError,
)
from .interpreter import ApplyReport, apply_set, execute, resolve
from .syntax import (
    Command, CommandSet, Comment, CreateClone, CreateElement,
    CreateTextElement, MoveElement, Relation, RemoveAttribute, RemoveElement,
    RemoveText, Retag, SetAttribute, SetText, parse_script, print_script,
)

__all__ = [
    "ApplyError", "ApplyReport", "AuditError", "Command", "CommandSet",
    "Comment", "CreateClone", "CreateElement", "CreateTextElement",
    "DiffError", "DmlError", "Document", "ElementNode", "ManifestError",
    "MoveElement", "Relation", "RemoveAttribute", "RemoveElement",
    "RemoveText", "Retag", "RuleError", "ScriptError", "SetAttribute",
    "SetText", "TextNode", "XmlLoadError", "apply_set", "execute",
    "iter_elements", "load_xml", "parse_script", "print_script", "resolve",
    "serialize_xml", "tree_equal",
]
