"""Execution of command sets against a document.

Each set runs with a fresh variable environment; a variable is bound by
the ``bind`` slot of a CREATE command and is visible for the rest of
that set only. Reference tokens resolve environment-first, then against
the document id index, so a binding shadows an equal id (a lint warning
is recorded when that happens).

A command validates everything before touching the tree: a failing
command leaves the document exactly as it was. ``failFast`` application
raises on the first failure; ``collect`` skips failing commands and
records them, which is what generated sets of several hundred thousand
commands want.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .document import Document, ElementNode, TextNode, copy_subtree, iter_elements
from .errors import ApplyError
from .syntax import (
    Command, CommandSet, CreateClone, CreateElement, CreateTextElement, Loc,
    MoveElement, Relation, RemoveAttribute, RemoveElement, RemoveText, Retag,
    SetAttribute, SetText, print_command,
)

FAIL_FAST = "failFast"
COLLECT = "collect"


@dataclass(slots=True)
class Failure:
    location: Loc | None
    command: str
    reason: str

    def to_json(self) -> dict:
        return {
            "file": self.location.path if self.location else None,
            "line": self.location.line if self.location else None,
            "command": self.command,
            "reason": self.reason,
        }


@dataclass(slots=True)
class ApplyReport:
    set_name: str
    commands_applied: int = 0
    per_verb_counts: dict[str, int] = field(default_factory=dict)
    failures: list[Failure] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "setName": self.set_name,
            "commandsApplied": self.commands_applied,
            "perVerbCounts": dict(self.per_verb_counts),
            "failures": [f.to_json() for f in self.failures],
            "warnings": list(self.warnings),
        }


def _fail(cmd: Command, message: str):
    loc = cmd.loc or Loc("<command>", 0)
    raise ApplyError(message, loc.path, loc.line)


def resolve(ref: str, env: dict[str, str], doc: Document) -> str:
    """Resolve a reference token to a node id: bindings first, then ids."""
    if ref in env:
        bound = env[ref]
        if bound not in doc.index:
            raise ApplyError(f"variable {ref!r} is bound to {bound!r}, "
                             "which is no longer in the document")
        return bound
    if ref in doc.index:
        return ref
    raise ApplyError(f"unresolved reference {ref!r}: neither a bound variable nor an id")


def _resolve(cmd: Command, ref: str, env: dict[str, str], doc: Document) -> str:
    try:
        return resolve(ref, env, doc)
    except ApplyError as exc:
        _fail(cmd, exc.reason)


def _check_bind(cmd, bind, env, doc, warnings):
    if bind is None:
        return
    if bind in env:
        _fail(cmd, f"variable {bind!r} is already bound (to {env[bind]!r})")
    if warnings is not None and bind in doc.index:
        warnings.append(f"{cmd.loc or ''}: binding {bind!r} shadows an existing element id")


def _placement(cmd, relation: Relation, anchor: ElementNode) -> tuple[ElementNode, int]:
    """Parent and child index where the relation puts a node, computed
    against the current tree (call after any detach)."""
    if relation is Relation.UNDER:
        return anchor, len(anchor.children)
    if relation is Relation.FIRST_UNDER:
        return anchor, 0
    parent = anchor.parent
    if parent is None:
        _fail(cmd, f"relation {relation.token!r} needs a non-root anchor")
    base = parent.children.index(anchor)
    return parent, base if relation is Relation.BEFORE else base + 1


def _check_sibling_anchor(cmd, relation: Relation, anchor: ElementNode):
    if relation in (Relation.BEFORE, Relation.AFTER) and anchor.parent is None:
        _fail(cmd, f"relation {relation.token!r} needs a non-root anchor")


def execute(cmd: Command, doc: Document, env: dict[str, str],
            warnings: list[str] | None = None) -> list[str]:
    """Run one command; returns every id it resolved or created.

    Mutates the document (and possibly the environment); raises
    ApplyError with the command's location on any failure, leaving the
    tree untouched in that case.
    """
    if isinstance(cmd, (CreateElement, CreateTextElement)):
        anchor_id = _resolve(cmd, cmd.anchor, env, doc)
        anchor = doc.index[anchor_id]
        _check_bind(cmd, cmd.bind, env, doc, warnings)
        _check_sibling_anchor(cmd, cmd.relation, anchor)
        new_id = doc.allocate_derived_id(anchor_id)
        elem = ElementNode(cmd.tag, new_id, {}, [])
        if isinstance(cmd, CreateTextElement):
            elem.children.append(TextNode(cmd.text))
        parent, pos = _placement(cmd, cmd.relation, anchor)
        doc.insert_element(elem, parent, pos)
        if cmd.bind:
            env[cmd.bind] = new_id
        return [anchor_id, new_id]

    if isinstance(cmd, CreateClone):
        source_id = _resolve(cmd, cmd.source, env, doc)
        anchor_id = _resolve(cmd, cmd.anchor, env, doc)
        source = doc.index[source_id]
        anchor = doc.index[anchor_id]
        _check_bind(cmd, cmd.bind, env, doc, warnings)
        _check_sibling_anchor(cmd, cmd.relation, anchor)
        clone = copy_subtree(source)
        created = []
        for sub in iter_elements(clone):
            sub.id = doc.allocate_derived_id(sub.id)
            created.append(sub.id)
        parent, pos = _placement(cmd, cmd.relation, anchor)
        doc.insert_element(clone, parent, pos)
        if cmd.bind:
            env[cmd.bind] = clone.id
        return [source_id, anchor_id, *created]

    if isinstance(cmd, RemoveElement):
        target_id = _resolve(cmd, cmd.target, env, doc)
        target = doc.index[target_id]
        if target.parent is None:
            _fail(cmd, "cannot remove the root element")
        doc.detach_element(target)
        return [target_id]

    if isinstance(cmd, RemoveText):
        target_id = _resolve(cmd, cmd.target, env, doc)
        target = doc.index[target_id]
        target.children = [c for c in target.children if not isinstance(c, TextNode)]
        return [target_id]

    if isinstance(cmd, RemoveAttribute):
        target_id = _resolve(cmd, cmd.target, env, doc)
        target = doc.index[target_id]
        if cmd.attr == doc.id_attribute:
            _fail(cmd, f"attribute {cmd.attr!r} is the id attribute and cannot be edited")
        if cmd.attr not in target.attrs:
            _fail(cmd, f"element {target_id!r} has no attribute {cmd.attr!r}")
        del target.attrs[cmd.attr]
        return [target_id]

    if isinstance(cmd, Retag):
        target_id = _resolve(cmd, cmd.target, env, doc)
        doc.index[target_id].tag = cmd.tag
        return [target_id]

    if isinstance(cmd, MoveElement):
        target_id = _resolve(cmd, cmd.target, env, doc)
        anchor_id = _resolve(cmd, cmd.anchor, env, doc)
        target = doc.index[target_id]
        anchor = doc.index[anchor_id]
        if target.parent is None:
            _fail(cmd, "cannot move the root element")
        if target is anchor:
            _fail(cmd, f"move target {target_id!r} cannot be its own anchor")
        probe = anchor
        while probe is not None:
            if probe is target:
                _fail(cmd, f"anchor {anchor_id!r} is inside the subtree of {target_id!r}")
            probe = probe.parent
        _check_sibling_anchor(cmd, cmd.relation, anchor)
        doc.detach_element(target)
        parent, pos = _placement(cmd, cmd.relation, anchor)
        doc.insert_element(target, parent, pos)
        return [target_id, anchor_id]

    if isinstance(cmd, SetAttribute):
        target_id = _resolve(cmd, cmd.target, env, doc)
        if cmd.attr == doc.id_attribute:
            _fail(cmd, f"attribute {cmd.attr!r} is the id attribute and cannot be edited")
        doc.index[target_id].attrs[cmd.attr] = cmd.value
        return [target_id]

    if isinstance(cmd, SetText):
        target_id = _resolve(cmd, cmd.target, env, doc)
        target = doc.index[target_id]
        kept: list = []
        insert_at = None
        for child in target.children:
            if isinstance(child, TextNode):
                if insert_at is None:
                    insert_at = len(kept)
            else:
                kept.append(child)
        kept.insert(insert_at if insert_at is not None else len(kept), TextNode(cmd.text))
        target.children = kept
        return [target_id]

    raise TypeError(f"not an executable command: {cmd!r}")


def apply_set(command_set: CommandSet, doc: Document, mode: str = FAIL_FAST,
              trace: list | None = None) -> ApplyReport:
    """Execute a set's commands in file order with a fresh environment.

    ``failFast`` raises ApplyError at the first failing command (the
    partial report rides on the exception); ``collect`` records failures
    and keeps going. ``trace``, if given, receives one
    ``(Loc, [ids])`` entry per applied command for the audit log.
    """
    if mode not in (FAIL_FAST, COLLECT):
        raise ValueError(f"unknown apply mode: {mode!r}")
    env: dict[str, str] = {}
    report = ApplyReport(set_name=command_set.name)
    for cmd in command_set.commands():
        try:
            ids = execute(cmd, doc, env, report.warnings)
        except ApplyError as exc:
            if mode == FAIL_FAST:
                exc.report = report
                raise
            report.failures.append(Failure(cmd.loc, print_command(cmd), exc.reason))
            continue
        report.commands_applied += 1
        report.per_verb_counts[cmd.verb] = report.per_verb_counts.get(cmd.verb, 0) + 1
        if trace is not None:
            trace.append((cmd.loc, ids))
    return report


def dry_run_refs(command_set: CommandSet, doc: Document) -> list[Failure]:
    """Static reference check: no mutation, bindings and derived-id
    allocation simulated against the loaded document.

    Removals blank out the target's current subtree ids, so the check is
    an approximation when commands move elements around before removing
    them; it is meant as a lint, not a proof.
    """
    env: dict[str, str] = {}
    created: set[str] = set()
    removed: set[str] = set()

    def visible(ref: str) -> str | None:
        if ref in env:
            return env[ref]
        if (ref in doc.index or ref in created) and ref not in removed:
            return ref
        return None

    def simulate_alloc(base: str) -> str:
        n = 1
        while f"{base}+{n}" in doc.index or f"{base}+{n}" in created:
            n += 1
        created.add(f"{base}+{n}")
        return f"{base}+{n}"

    problems: list[Failure] = []
    for cmd in command_set.commands():
        bad = [ref for ref in cmd.refs() if visible(ref) is None]
        if bad:
            problems.append(Failure(cmd.loc, print_command(cmd),
                                    f"unresolved reference {bad[0]!r}"))
            continue
        if isinstance(cmd, (CreateElement, CreateTextElement, CreateClone)):
            if cmd.bind in env:
                problems.append(Failure(cmd.loc, print_command(cmd),
                                        f"variable {cmd.bind!r} is already bound"))
                continue
            anchor_id = visible(cmd.anchor)
            new_id = simulate_alloc(anchor_id)
            if isinstance(cmd, CreateClone):
                source = doc.index.get(visible(cmd.source))
                if source is not None:
                    for sub in iter_elements(source):
                        if sub.id != source.id:
                            simulate_alloc(sub.id)
            if cmd.bind:
                env[cmd.bind] = new_id
        elif isinstance(cmd, RemoveElement):
            target = doc.index.get(visible(cmd.target))
            if target is not None:
                removed.update(sub.id for sub in iter_elements(target))
            else:
                removed.add(visible(cmd.target))
    return problems
