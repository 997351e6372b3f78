"""Command script syntax: AST, line parser, and canonical printer.

A script is line-oriented. Each line is blank, a comment (first
non-blank character ``#``), or one command:

    CREATE Element      tag relation anchor [bind]
    CREATE TextElement  tag "text" relation anchor [bind]
    CREATE Clone        source relation anchor [bind]
    REMOVE Element      target
    REMOVE Text         target
    REMOVE Attribute    target attribute
    RETAG               target tag
    MOVE Element        target relation anchor
    SET Attribute       target attribute "value"
    SET Text            target "text"

Keywords are case-insensitive and a fused verb-object spelling such as
``REMOVEattribute`` is accepted. Relations are ``under`` (last child),
``firstunder`` (first child), ``before`` and ``after`` (adjacent
sibling). Text and attribute values are double-quoted with the escapes
``\\\\  \\"  \\n  \\t  \\uXXXX``; every other argument is a bare
whitespace-delimited token. Target/anchor/source tokens are resolved at
run time, variable bindings first, then document ids. The full grammar
is documented in ``dml-grammar.md``.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

from .errors import ScriptError

NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_-]*\Z")
PLACEHOLDER_RE = re.compile(r"\$[A-Za-z][A-Za-z0-9_]*\Z")
_COMMENT_META_RE = re.compile(r"#\s*([A-Za-z][\w.-]*)\s+(\d{1,2}/\d{1,2}/\d{4})(\s|$)")


class Relation(enum.Enum):
    UNDER = "under"
    FIRST_UNDER = "firstunder"
    BEFORE = "before"
    AFTER = "after"

    @property
    def token(self) -> str:
        return self.value


@dataclass(frozen=True, slots=True)
class Loc:
    path: str
    line: int

    def __str__(self) -> str:
        return f"{self.path}:{self.line}"


@dataclass(slots=True)
class Comment:
    text: str  # the whole line, verbatim
    author: str | None = None
    date: str | None = None
    loc: Loc | None = field(default=None, compare=False)


def make_comment(text: str, loc: Loc | None = None) -> Comment:
    """Comment with author/date picked out of the ``# NAME M/D/YYYY …``
    convention when the line happens to follow it."""
    meta = _COMMENT_META_RE.match(text.strip())
    return Comment(text, meta.group(1) if meta else None,
                   meta.group(2) if meta else None, loc)


@dataclass(slots=True)
class Command:
    loc: Loc | None = field(default=None, compare=False, kw_only=True)
    # (rule name, matched id) when produced by a generator
    provenance: tuple[str, str] | None = field(default=None, compare=False, kw_only=True)

    verb = ""

    def refs(self) -> tuple[str, ...]:
        """The argument tokens resolved against bindings/ids at run time."""
        return ()


@dataclass(slots=True)
class CreateElement(Command):
    tag: str
    relation: Relation
    anchor: str
    bind: str | None = None
    verb = "CREATE"

    def refs(self):
        return (self.anchor,)


@dataclass(slots=True)
class CreateTextElement(Command):
    tag: str
    text: str
    relation: Relation
    anchor: str
    bind: str | None = None
    verb = "CREATE"

    def refs(self):
        return (self.anchor,)


@dataclass(slots=True)
class CreateClone(Command):
    source: str
    relation: Relation
    anchor: str
    bind: str | None = None
    verb = "CREATE"

    def refs(self):
        return (self.source, self.anchor)


@dataclass(slots=True)
class RemoveElement(Command):
    target: str
    verb = "REMOVE"

    def refs(self):
        return (self.target,)


@dataclass(slots=True)
class RemoveText(Command):
    target: str
    verb = "REMOVE"

    def refs(self):
        return (self.target,)


@dataclass(slots=True)
class RemoveAttribute(Command):
    target: str
    attr: str
    verb = "REMOVE"

    def refs(self):
        return (self.target,)


@dataclass(slots=True)
class Retag(Command):
    target: str
    tag: str
    verb = "RETAG"

    def refs(self):
        return (self.target,)


@dataclass(slots=True)
class MoveElement(Command):
    target: str
    relation: Relation
    anchor: str
    verb = "MOVE"

    def refs(self):
        return (self.target, self.anchor)


@dataclass(slots=True)
class SetAttribute(Command):
    target: str
    attr: str
    value: str
    verb = "SET"

    def refs(self):
        return (self.target,)


@dataclass(slots=True)
class SetText(Command):
    target: str
    text: str
    verb = "SET"

    def refs(self):
        return (self.target,)


@dataclass(slots=True)
class CommandSet:
    name: str
    items: list[Comment | Command] = field(default_factory=list)
    source_path: str = field(default="<script>", compare=False)

    def commands(self) -> list[Command]:
        return [item for item in self.items if isinstance(item, Command)]


_VERB_OBJECTS = {
    "CREATE": {"element", "textelement", "clone"},
    "REMOVE": {"element", "text", "attribute"},
    "MOVE": {"element"},
    "SET": {"attribute", "text"},
}
_RELATIONS = {r.value: r for r in Relation}


@dataclass(frozen=True, slots=True)
class _Token:
    value: str
    quoted: bool


def _tokenize(line: str, loc: Loc) -> list[_Token]:
    tokens: list[_Token] = []
    i, n = 0, len(line)
    while i < n:
        if line[i].isspace():
            i += 1
            continue
        if line[i] == '"':
            value, i = _read_string(line, i, loc)
            if i < n and not line[i].isspace():
                raise ScriptError(f"unexpected character {line[i]!r} after closing quote",
                                  loc.path, loc.line)
            tokens.append(_Token(value, True))
        else:
            j = i
            while j < n and not line[j].isspace():
                j += 1
            tokens.append(_Token(line[i:j], False))
            i = j
    return tokens


def _read_string(line: str, start: int, loc: Loc) -> tuple[str, int]:
    out: list[str] = []
    i = start + 1
    n = len(line)
    while i < n:
        ch = line[i]
        if ch == '"':
            return "".join(out), i + 1
        if ch == "\\":
            if i + 1 >= n:
                break
            esc = line[i + 1]
            if esc == "\\":
                out.append("\\")
            elif esc == '"':
                out.append('"')
            elif esc == "n":
                out.append("\n")
            elif esc == "t":
                out.append("\t")
            elif esc == "u":
                hexdigits = line[i + 2:i + 6]
                if len(hexdigits) != 4 or any(c not in "0123456789abcdefABCDEF" for c in hexdigits):
                    raise ScriptError(f"bad \\u escape in string: {line[i:i + 6]!r}",
                                      loc.path, loc.line)
                out.append(chr(int(hexdigits, 16)))
                i += 6
                continue
            else:
                raise ScriptError(f"bad escape \\{esc} in string", loc.path, loc.line)
            i += 2
        else:
            out.append(ch)
            i += 1
    raise ScriptError("unterminated string", loc.path, loc.line)


def parse_script(text: str, name: str, *, source_path: str | None = None,
                 allow_placeholders: bool = False) -> CommandSet:
    """Parse script text into a CommandSet.

    ``allow_placeholders`` admits ``$NAME`` tokens in the bind slot; the
    generator module uses it for command templates.
    """
    path = source_path if source_path is not None else name
    items: list[Comment | Command] = []
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw[:-1] if raw.endswith("\r") else raw
        stripped = line.strip()
        loc = Loc(path, lineno)
        if not stripped:
            continue
        if stripped.startswith("#"):
            items.append(make_comment(line, loc))
            continue
        items.append(_parse_command(_tokenize(line, loc), loc, allow_placeholders))
    return CommandSet(name, items, path)


def _parse_command(tokens: list[_Token], loc: Loc, allow_placeholders: bool) -> Command:
    def fail(message: str):
        raise ScriptError(message, loc.path, loc.line)

    head = tokens[0]
    if head.quoted:
        fail(f"command cannot start with a string: {head.value!r}")
    verb = head.value.upper()
    args: list[_Token]
    if verb == "RETAG":
        spelled, args = "RETAG", tokens[1:]
    else:
        obj = None
        if verb in _VERB_OBJECTS:
            if len(tokens) < 2:
                fail(f"{verb} needs an object (one of: "
                     f"{', '.join(sorted(_VERB_OBJECTS[verb]))})")
            obj_token = tokens[1]
            if obj_token.quoted or obj_token.value.lower() not in _VERB_OBJECTS[verb]:
                fail(f"unknown object {obj_token.value!r} for {verb}")
            obj = obj_token.value.lower()
            args = tokens[2:]
        else:
            for candidate in _VERB_OBJECTS:
                rest = head.value[len(candidate):].lower()
                if head.value.upper().startswith(candidate) and rest in _VERB_OBJECTS[candidate]:
                    verb, obj = candidate, rest
                    args = tokens[1:]
                    break
            else:
                fail(f"unknown command verb {head.value!r}")
        spelled = f"{verb} {_CANONICAL_OBJECT[obj]}"

    builder = _BUILDERS[spelled]
    return builder(args, spelled, loc, allow_placeholders)


_CANONICAL_OBJECT = {
    "element": "Element",
    "textelement": "TextElement",
    "clone": "Clone",
    "text": "Text",
    "attribute": "Attribute",
}


def _arity(args: list[_Token], spelled: str, loc: Loc, *counts: int) -> None:
    if len(args) not in counts:
        expected = " or ".join(str(c) for c in counts)
        noun = "argument" if counts == (1,) else "arguments"
        raise ScriptError(f"{spelled} expects {expected} {noun}", loc.path, loc.line)


def _bare(token: _Token, what: str, loc: Loc) -> str:
    if token.quoted:
        raise ScriptError(f"expected {what}, found quoted string {token.value!r}",
                          loc.path, loc.line)
    return token.value


def _string(token: _Token, what: str, loc: Loc) -> str:
    if not token.quoted:
        raise ScriptError(f"expected quoted string for {what}, found {token.value!r}",
                          loc.path, loc.line)
    return token.value


def _name(token: _Token, what: str, loc: Loc) -> str:
    value = _bare(token, what, loc)
    if not NAME_RE.match(value):
        raise ScriptError(f"invalid {what} {value!r}", loc.path, loc.line)
    return value


def _relation(token: _Token, loc: Loc) -> Relation:
    value = _bare(token, "relation", loc).lower()
    if value not in _RELATIONS:
        raise ScriptError(f"unknown relation {token.value!r}", loc.path, loc.line)
    return _RELATIONS[value]


def _bind(token: _Token, loc: Loc, allow_placeholders: bool) -> str:
    value = _bare(token, "bind variable", loc)
    if NAME_RE.match(value) or (allow_placeholders and PLACEHOLDER_RE.match(value)):
        return value
    raise ScriptError(f"invalid bind variable {value!r}", loc.path, loc.line)


def _build_create_element(args, spelled, loc, ph):
    _arity(args, spelled, loc, 3, 4)
    bind = _bind(args[3], loc, ph) if len(args) == 4 else None
    return CreateElement(_name(args[0], "tag", loc), _relation(args[1], loc),
                         _bare(args[2], "anchor", loc), bind, loc=loc)


def _build_create_text_element(args, spelled, loc, ph):
    _arity(args, spelled, loc, 4, 5)
    bind = _bind(args[4], loc, ph) if len(args) == 5 else None
    return CreateTextElement(_name(args[0], "tag", loc), _string(args[1], "text", loc),
                             _relation(args[2], loc), _bare(args[3], "anchor", loc),
                             bind, loc=loc)


def _build_create_clone(args, spelled, loc, ph):
    _arity(args, spelled, loc, 3, 4)
    bind = _bind(args[3], loc, ph) if len(args) == 4 else None
    return CreateClone(_bare(args[0], "source", loc), _relation(args[1], loc),
                       _bare(args[2], "anchor", loc), bind, loc=loc)


def _no_bind(args, spelled, loc, count):
    if len(args) == count + 1 and not args[count].quoted:
        raise ScriptError(f"bind variable {args[count].value!r} is only legal on CREATE commands",
                          loc.path, loc.line)


def _build_remove_element(args, spelled, loc, ph):
    _no_bind(args, spelled, loc, 1)
    _arity(args, spelled, loc, 1)
    return RemoveElement(_bare(args[0], "target", loc), loc=loc)


def _build_remove_text(args, spelled, loc, ph):
    _no_bind(args, spelled, loc, 1)
    _arity(args, spelled, loc, 1)
    return RemoveText(_bare(args[0], "target", loc), loc=loc)


def _build_remove_attribute(args, spelled, loc, ph):
    _no_bind(args, spelled, loc, 2)
    _arity(args, spelled, loc, 2)
    return RemoveAttribute(_bare(args[0], "target", loc), _name(args[1], "attribute", loc),
                           loc=loc)


def _build_retag(args, spelled, loc, ph):
    _no_bind(args, spelled, loc, 2)
    _arity(args, spelled, loc, 2)
    return Retag(_bare(args[0], "target", loc), _name(args[1], "tag", loc), loc=loc)


def _build_move_element(args, spelled, loc, ph):
    _no_bind(args, spelled, loc, 3)
    _arity(args, spelled, loc, 3)
    return MoveElement(_bare(args[0], "target", loc), _relation(args[1], loc),
                       _bare(args[2], "anchor", loc), loc=loc)


def _build_set_attribute(args, spelled, loc, ph):
    _arity(args, spelled, loc, 3)
    return SetAttribute(_bare(args[0], "target", loc), _name(args[1], "attribute", loc),
                        _string(args[2], "value", loc), loc=loc)


def _build_set_text(args, spelled, loc, ph):
    _arity(args, spelled, loc, 2)
    return SetText(_bare(args[0], "target", loc), _string(args[1], "text", loc), loc=loc)


_BUILDERS = {
    "CREATE Element": _build_create_element,
    "CREATE TextElement": _build_create_text_element,
    "CREATE Clone": _build_create_clone,
    "REMOVE Element": _build_remove_element,
    "REMOVE Text": _build_remove_text,
    "REMOVE Attribute": _build_remove_attribute,
    "RETAG": _build_retag,
    "MOVE Element": _build_move_element,
    "SET Attribute": _build_set_attribute,
    "SET Text": _build_set_text,
}

_CONTROL_RE = re.compile(r"[\x00-\x1f]")


def quote_string(s: str) -> str:
    s = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    s = _CONTROL_RE.sub(lambda m: f"\\u{ord(m.group()):04X}", s)
    return f'"{s}"'


def print_command(cmd: Command) -> str:
    if isinstance(cmd, CreateElement):
        line = f"CREATE Element {cmd.tag} {cmd.relation.token} {cmd.anchor}"
        return f"{line} {cmd.bind}" if cmd.bind else line
    if isinstance(cmd, CreateTextElement):
        line = (f"CREATE TextElement {cmd.tag} {quote_string(cmd.text)} "
                f"{cmd.relation.token} {cmd.anchor}")
        return f"{line} {cmd.bind}" if cmd.bind else line
    if isinstance(cmd, CreateClone):
        line = f"CREATE Clone {cmd.source} {cmd.relation.token} {cmd.anchor}"
        return f"{line} {cmd.bind}" if cmd.bind else line
    if isinstance(cmd, RemoveElement):
        return f"REMOVE Element {cmd.target}"
    if isinstance(cmd, RemoveText):
        return f"REMOVE Text {cmd.target}"
    if isinstance(cmd, RemoveAttribute):
        return f"REMOVE Attribute {cmd.target} {cmd.attr}"
    if isinstance(cmd, Retag):
        return f"RETAG {cmd.target} {cmd.tag}"
    if isinstance(cmd, MoveElement):
        return f"MOVE Element {cmd.target} {cmd.relation.token} {cmd.anchor}"
    if isinstance(cmd, SetAttribute):
        return f"SET Attribute {cmd.target} {cmd.attr} {quote_string(cmd.value)}"
    if isinstance(cmd, SetText):
        return f"SET Text {cmd.target} {quote_string(cmd.text)}"
    raise TypeError(f"not a command: {cmd!r}")


def print_script(command_set: CommandSet) -> str:
    """Canonical text for a CommandSet; parse_script round-trips it."""
    lines = []
    for item in command_set.items:
        lines.append(item.text if isinstance(item, Comment) else print_command(item))
    return "".join(line + "\n" for line in lines)
