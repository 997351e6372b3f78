"""Run-time command generation from declarative pattern rules.

A rule is data, not code: a structural pattern plus command templates
whose reference slots hold placeholders. Generation walks the current
document, emits one command block per match in document order, and never
mutates anything; the pipeline regenerates sets on every run so a rule
sees repairs made by earlier stages.

Placeholders: ``$SELF`` (the matched element), ``$PARENT``, ``$PREV``
(preceding element sibling), and ``$NEW1``, ``$NEW2``, … for elements
the block itself creates; ``$NEWk`` becomes a fresh bind variable unique
within the generated set.

The charmap generator is the legacy-encoding repair: a table mapping
code-unit sequences to their Unicode replacements, applied
longest-match-first in one pass over the text of selected tags,
emitting a text rewrite wherever the result differs.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

from .document import Document, ElementNode
from .errors import RuleError
from .syntax import Command, CommandSet, SetText, make_comment, parse_script

_NEW_RE = re.compile(r"\$NEW[1-9][0-9]*\Z")
_KNOWN = ("$SELF", "$PARENT", "$PREV")


@dataclass(slots=True)
class AttrTest:
    name: str
    op: str  # equals | exists | absent
    value: str | None = None

    def matches(self, elem: ElementNode) -> bool:
        if self.op == "equals":
            return elem.attrs.get(self.name) == self.value
        if self.op == "exists":
            return self.name in elem.attrs
        return self.name not in elem.attrs


@dataclass(slots=True)
class ChildCount:
    exact: int | None = None
    min: int | None = None
    max: int | None = None

    def matches(self, n: int) -> bool:
        if self.exact is not None and n != self.exact:
            return False
        if self.min is not None and n < self.min:
            return False
        return self.max is None or n <= self.max


@dataclass(slots=True)
class Pattern:
    tag: str | None = None  # None or "*": any tag
    attr_tests: list[AttrTest] = field(default_factory=list)
    child_count: ChildCount | None = None  # element children of the match
    text_equals: str | None = None
    text_matches: str | None = None  # regex, searched in concatenated text
    parent_tag: str | None = None
    prev_tag: str | None = None
    root_child: bool | None = None

    def matches(self, elem: ElementNode, parent: ElementNode | None,
                prev: ElementNode | None, root: ElementNode) -> bool:
        if self.tag not in (None, "*") and elem.tag != self.tag:
            return False
        if any(not t.matches(elem) for t in self.attr_tests):
            return False
        if self.child_count is not None and not self.child_count.matches(
                len(elem.element_children())):
            return False
        if self.text_equals is not None and elem.text() != self.text_equals:
            return False
        if self.text_matches is not None and not re.search(self.text_matches, elem.text()):
            return False
        if self.parent_tag is not None and (parent is None or parent.tag != self.parent_tag):
            return False
        if self.prev_tag is not None and (prev is None or prev.tag != self.prev_tag):
            return False
        if self.root_child is not None and (parent is root) != self.root_child:
            return False
        return True


@dataclass(slots=True)
class Rule:
    name: str
    match: Pattern
    emit: list[Command]  # templates parsed with placeholders allowed

    def required_placeholders(self) -> set[str]:
        needed: set[str] = set()
        for cmd in self.emit:
            for ref in cmd.refs():
                if ref.startswith("$"):
                    needed.add(ref)
            bind = getattr(cmd, "bind", None)
            if bind and bind.startswith("$"):
                needed.add(bind)
        return needed


def match_all(doc: Document, pattern: Pattern) -> list[dict[str, str]]:
    """Capture environments for every matching element, document order.

    Environments always bind SELF and carry PARENT/PREV only when the
    element has them; an element without a parent or preceding sibling
    simply fails any context test that needs one.
    """
    results: list[dict[str, str]] = []

    def visit(elem: ElementNode, parent: ElementNode | None, prev: ElementNode | None):
        if pattern.matches(elem, parent, prev, doc.root):
            env = {"SELF": elem.id}
            if parent is not None:
                env["PARENT"] = parent.id
            if prev is not None:
                env["PREV"] = prev.id
            results.append(env)
        last: ElementNode | None = None
        for child in elem.element_children():
            visit(child, elem, last)
            last = child

    visit(doc.root, None, None)
    return results


def _substitute(template: Command, mapping: dict[str, str], rule_name: str,
                self_id: str) -> Command:
    def lookup(placeholder: str) -> str:
        try:
            return mapping[placeholder]
        except KeyError:
            raise RuleError(f"rule {rule_name!r}: unbound placeholder "
                            f"{placeholder!r}") from None

    updates: dict[str, str] = {}
    for slot in ("target", "anchor", "source"):
        value = getattr(template, slot, None)
        if value is not None and value.startswith("$"):
            updates[slot] = lookup(value)
    bind = getattr(template, "bind", None)
    if bind and bind.startswith("$"):
        updates["bind"] = lookup(bind)
    cmd = replace(template, **updates)
    cmd.provenance = (rule_name, self_id)
    cmd.loc = None
    return cmd


def generate(doc: Document, rules: list[Rule], set_name: str) -> CommandSet:
    """Instantiate every rule against the current document state.

    Each match contributes a comment line naming the rule and matched id
    followed by its instantiated commands. Matches lacking a PARENT/PREV
    capture that the templates need are skipped. The document is not
    touched.
    """
    items: list = []
    fresh = 0
    for rule in rules:
        needed = rule.required_placeholders()
        news = sorted(n for n in needed if _NEW_RE.match(n))
        contextual = [n for n in needed if n in ("$PARENT", "$PREV")]
        for env in match_all(doc, rule.match):
            if any(n[1:] not in env for n in contextual):
                continue
            mapping = {f"${k}": v for k, v in env.items()}
            for n in news:
                fresh += 1
                mapping[n] = f"v{fresh}"
            items.append(make_comment(f"# rule {rule.name}: {env['SELF']}"))
            for template in rule.emit:
                items.append(_substitute(template, mapping, rule.name, env["SELF"]))
    return CommandSet(set_name, items, f"<generated:{set_name}>")


def compile_charmap(table: dict[str, str]) -> dict[str, list[str]]:
    """Index table keys by first character, longest first."""
    by_first: dict[str, list[str]] = {}
    for key in sorted(table, key=len, reverse=True):
        if not key:
            raise RuleError("charmap keys must be non-empty")
        by_first.setdefault(key[0], []).append(key)
    return by_first


def apply_charmap(text: str, table: dict[str, str],
                  compiled: dict[str, list[str]] | None = None) -> str:
    """One left-to-right pass; at each position the longest matching key
    wins, unmatched characters pass through."""
    if compiled is None:
        compiled = compile_charmap(table)
    out: list[str] = []
    i, n = 0, len(text)
    while i < n:
        for key in compiled.get(text[i], ()):
            if text.startswith(key, i):
                out.append(table[key])
                i += len(key)
                break
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


def charmap_generate(doc: Document, tags: set[str] | list[str],
                     table: dict[str, str], set_name: str) -> CommandSet:
    """Text rewrite commands for every element of the given tags whose
    concatenated text changes under the mapping; already-converted text
    produces nothing, so a second pass over the result is empty."""
    wanted = set(tags)
    compiled = compile_charmap(table)
    items: list = [make_comment(f"# charmap conversion: tags {', '.join(sorted(wanted))}")]
    count = 0
    for elem in _document_order(doc.root):
        if elem.tag not in wanted:
            continue
        text = elem.text()
        if not text:
            continue
        mapped = apply_charmap(text, table, compiled)
        if mapped != text:
            cmd = SetText(elem.id, mapped)
            cmd.provenance = ("charmap", elem.id)
            items.append(cmd)
            count += 1
    if count == 0:
        items.clear()
    return CommandSet(set_name, items, f"<generated:{set_name}>")


def _document_order(root: ElementNode):
    stack = [root]
    while stack:
        elem = stack.pop()
        yield elem
        stack.extend(reversed(elem.element_children()))


# --- rule / charmap file formats -------------------------------------------

def rules_from_json(data: dict, source: str = "<rules>") -> list[Rule]:
    if not isinstance(data, dict) or not isinstance(data.get("rules"), list):
        raise RuleError(f"{source}: rule file must be an object with a 'rules' array")
    rules = []
    for i, entry in enumerate(data["rules"]):
        name = entry.get("name")
        if not name or not isinstance(name, str):
            raise RuleError(f"{source}: rule #{i + 1} has no name")
        try:
            pattern = _pattern_from_json(entry.get("match", {}))
            emit = _templates_from_json(entry.get("emit", []), name)
        except RuleError:
            raise
        except (KeyError, TypeError, ValueError) as exc:
            raise RuleError(f"{source}: rule {name!r}: {exc}") from exc
        rule = Rule(name, pattern, emit)
        unknown = {n for n in rule.required_placeholders()
                   if n not in _KNOWN and not _NEW_RE.match(n)}
        if unknown:
            raise RuleError(f"{source}: rule {name!r} uses unknown placeholder "
                            f"{sorted(unknown)[0]!r}")
        if not emit:
            raise RuleError(f"{source}: rule {name!r} emits nothing")
        rules.append(rule)
    return rules


def _pattern_from_json(match: dict) -> Pattern:
    attr_tests = []
    for test in match.get("attrs", []):
        op = test.get("op", "equals")
        if op not in ("equals", "exists", "absent"):
            raise ValueError(f"unknown attribute op {op!r}")
        if op == "equals" and "value" not in test:
            raise ValueError(f"attribute test on {test.get('name')!r} needs a value")
        attr_tests.append(AttrTest(test["name"], op, test.get("value")))
    child_count = None
    if "childCount" in match:
        raw = match["childCount"]
        child_count = (ChildCount(exact=int(raw)) if isinstance(raw, int)
                       else ChildCount(exact=raw.get("exact"),
                                       min=raw.get("min"), max=raw.get("max")))
    text_equals = text_matches = None
    if "text" in match:
        raw = match["text"]
        if isinstance(raw, str):
            text_equals = raw
        elif "equals" in raw:
            text_equals = raw["equals"]
        elif "matches" in raw:
            text_matches = raw["matches"]
        else:
            raise ValueError("text test needs 'equals' or 'matches'")
    context = match.get("context", {})
    return Pattern(
        tag=match.get("tag"),
        attr_tests=attr_tests,
        child_count=child_count,
        text_equals=text_equals,
        text_matches=text_matches,
        parent_tag=context.get("parent"),
        prev_tag=context.get("prev"),
        root_child=context.get("rootChild"),
    )


def _templates_from_json(lines: list, rule_name: str) -> list[Command]:
    if not isinstance(lines, list):
        raise RuleError(f"rule {rule_name!r}: emit must be an array of command lines")
    templates: list[Command] = []
    for line in lines:
        parsed = parse_script(line, f"rule {rule_name!r}", allow_placeholders=True)
        for cmd in parsed.commands():
            templates.append(cmd)
    return templates


def load_rules(path) -> list[Rule]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RuleError(f"{path}: not valid JSON: {exc}") from exc
    return rules_from_json(data, str(path))


def load_charmap(path) -> dict[str, str]:
    with open(path, encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise RuleError(f"{path}: not valid JSON: {exc}") from exc
    if (not isinstance(data, dict)
            or not all(isinstance(k, str) and k and isinstance(v, str)
                       for k, v in data.items())):
        raise RuleError(f"{path}: charmap must be a JSON object of "
                        "non-empty strings to strings")
    return data
