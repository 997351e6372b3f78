"""Command sets as documentation and data: per-node change history,
per-stage command statistics, and an id-keyed tree diff that emits an
executable command set.

History and stats work off a completed run directory (the effective
per-stage set files, the per-stage resolved-id logs, and
``report.json``); nothing re-runs the pipeline. The diff compares two
documents that share an id space and produces commands that turn one
into the other, matching elements purely by id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .document import (
    Document, ElementNode, TextNode, canonical_children, copy_subtree,
    iter_elements, load_xml, tree_equal,
)
from .errors import AuditError, DiffError
from .interpreter import apply_set, execute
from .syntax import (
    Command, CommandSet, Comment, CreateElement, CreateTextElement, Loc,
    MoveElement, Relation, RemoveAttribute, RemoveElement, RemoveText, Retag,
    SetAttribute, SetText, make_comment, parse_script, print_command,
)


# --- run-directory access ---------------------------------------------------

@dataclass(slots=True)
class RunStage:
    name: str
    kind: str
    set_path: Path | None
    resolved_log: Path | None
    excluded: bool


def _read_run(run_dir) -> tuple[dict, list[RunStage]]:
    run_dir = Path(run_dir)
    report_path = run_dir / "report.json"
    if not report_path.exists():
        raise AuditError(f"{run_dir} is not a run directory: no report.json")
    report = json.loads(report_path.read_text(encoding="utf-8"))
    stages = []
    for raw in report.get("stages", []):
        set_file = raw.get("setFile")
        log_file = raw.get("resolvedLog")
        set_path = run_dir / set_file if set_file else None
        log_path = run_dir / log_file if log_file else None
        if set_path is not None and not set_path.exists():
            raise AuditError(f"run artifact missing: {set_path}")
        stages.append(RunStage(raw["name"], raw["kind"], set_path,
                               log_path if log_path and log_path.exists() else None,
                               raw.get("excluded", False)))
    return report, stages


# --- node history -----------------------------------------------------------

@dataclass(slots=True)
class HistoryEntry:
    stage: str
    file: str
    line: int
    command: str
    comment: str | None

    def to_json(self) -> dict:
        return {"stage": self.stage, "file": self.file, "line": self.line,
                "command": self.command, "comment": self.comment}


@dataclass(slots=True)
class NodeHistory:
    node_id: str
    include_descendants: bool
    verified: bool  # resolved-id logs were available for every stage
    entries: list[HistoryEntry] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"id": self.node_id, "includeDescendants": self.include_descendants,
                "verified": self.verified,
                "entries": [e.to_json() for e in self.entries]}


def node_history(run_dir, node_id: str, include_descendants: bool = False) -> NodeHistory:
    """Every command in the run that touched the id, in application order,
    each with the nearest preceding comment from its set file.

    With ``include_descendants`` the query widens to the subtree below
    the id in the final state plus any id derived from it (``id+…``).
    Matching uses the interpreter's resolved-id logs when the run has
    them; without logs it falls back to textual tokens, which cannot see
    through variables (the result is marked unverified).
    """
    run_dir = Path(run_dir)
    _, stages = _read_run(run_dir)
    targets = {node_id}
    prefixes: list[str] = []
    if include_descendants:
        prefixes.append(node_id + "+")
        final_path = run_dir / "final.xml"
        if not final_path.exists():
            raise AuditError(f"run artifact missing: {final_path}")
        final = load_xml(final_path.read_bytes(), source_path=str(final_path))
        anchor = final.lookup(node_id)
        if anchor is not None:
            targets.update(e.id for e in iter_elements(anchor))

    def is_hit(ids) -> bool:
        return any(i in targets or any(i.startswith(p) for p in prefixes)
                   for i in ids)

    history = NodeHistory(node_id, include_descendants, verified=True)
    for stage in stages:
        if stage.set_path is None:
            continue
        resolved: dict[tuple[str, int], list[str]] | None = None
        if stage.resolved_log is not None:
            resolved = {}
            with open(stage.resolved_log, encoding="utf-8") as fh:
                for line in fh:
                    entry = json.loads(line)
                    resolved[(entry["f"], entry["l"])] = entry["i"]
        else:
            history.verified = False
        cmd_set = parse_script(stage.set_path.read_text(encoding="utf-8"),
                               stage.name, source_path=stage.set_path.name)
        last_comment: str | None = None
        for item in cmd_set.items:
            if isinstance(item, Comment):
                last_comment = item.text
                continue
            if resolved is not None:
                ids = resolved.get((item.loc.path, item.loc.line))
                hit = ids is not None and is_hit(ids)
            else:
                hit = is_hit(item.refs())
            if hit:
                history.entries.append(HistoryEntry(
                    stage.name, item.loc.path, item.loc.line,
                    print_command(item), last_comment))
    return history


# --- stats -------------------------------------------------------------------

@dataclass(slots=True)
class StageStats:
    name: str
    kind: str
    per_verb: dict[str, int]
    total: int

    def to_json(self) -> dict:
        return {"name": self.name, "kind": self.kind,
                "perVerbCounts": dict(self.per_verb), "total": self.total}


@dataclass(slots=True)
class CommandStats:
    per_stage: list[StageStats] = field(default_factory=list)

    def grand_totals(self) -> dict[str, int]:
        sums = {"manual": 0, "generated": 0}
        for stage in self.per_stage:
            sums[stage.kind] += stage.total
        return sums

    def to_json(self) -> dict:
        return {"stages": [s.to_json() for s in self.per_stage],
                "totals": self.grand_totals()}


def stats(run_dir) -> CommandStats:
    """Command counts per stage and verb, recounted from the set files in
    the run directory (not copied from the pipeline's own report)."""
    _, stages = _read_run(run_dir)
    result = CommandStats()
    for stage in stages:
        per_verb: dict[str, int] = {}
        total = 0
        if stage.set_path is not None:
            cmd_set = parse_script(stage.set_path.read_text(encoding="utf-8"),
                                   stage.name, source_path=stage.set_path.name)
            for cmd in cmd_set.commands():
                per_verb[cmd.verb] = per_verb.get(cmd.verb, 0) + 1
                total += 1
        result.per_stage.append(StageStats(stage.name, stage.kind, per_verb, total))
    return result


def format_stats_table(stats_result: CommandStats) -> str:
    """Plain-text table: one row per stage, manual/generated columns."""
    rows = [("stage", "manual", "generated", "commands")]
    for stage in stats_result.per_stage:
        breakdown = " ".join(f"{verb}:{n}" for verb, n in sorted(stage.per_verb.items()))
        rows.append((stage.name,
                     str(stage.total) if stage.kind == "manual" else "",
                     str(stage.total) if stage.kind == "generated" else "",
                     breakdown))
    totals = stats_result.grand_totals()
    rows.append(("total", str(totals["manual"]), str(totals["generated"]), ""))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for i, row in enumerate(rows):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[j] for j in range(4)))
    return "\n".join(lines) + "\n"


# --- id-keyed diff -----------------------------------------------------------

def diff_to_dml(before: Document, after: Document, set_name: str = "diff") -> CommandSet:
    """An executable edit script turning ``before`` into ``after``.

    Elements are matched by id. Ids present only in ``after`` become
    CREATE commands bound to fresh variables (the id correspondence is
    recorded in comments, since real ids are always allocator-assigned);
    applying the result reproduces ``after`` exactly up to a bijection
    on those created ids. Ids present only in ``before`` become REMOVE
    commands for the maximal vanished subtrees. The script is correct,
    not minimal.

    Raises DiffError for the rare document pairs the command language
    cannot bridge (an element that must sit between two text nodes whose
    original neighbours are all gone).
    """
    if before.id_attribute != after.id_attribute:
        raise DiffError("documents use different id attributes: "
                        f"{before.id_attribute!r} vs {after.id_attribute!r}")
    if before.root.id != after.root.id:
        raise DiffError(f"root ids differ ({before.root.id!r} vs {after.root.id!r}); "
                        "no command can replace the root")

    return _Differ(before, after, set_name).run()


def _looks_like_var(node_id: str, prefix: str) -> bool:
    rest = node_id[len(prefix):]
    return node_id.startswith(prefix) and rest.isdigit() and rest != ""


class _Differ:
    def __init__(self, before: Document, after: Document, set_name: str):
        self.after = after
        self.work = Document(copy_subtree(before.root), "<diff-work>", before.id_attribute)
        self.before_ids = set(before.index)
        self.set_name = set_name
        self.items: list[Comment | Command] = []
        self.env: dict[str, str] = {}
        self.var_for_after_id: dict[str, str] = {}  # created after-id -> bind var
        self.var_for_work_id: dict[str, str] = {}   # allocated work id -> bind var
        self.fresh = 0
        # bind variables must not collide with any id on either side:
        # resolution is environment-first, so a clash would hijack refs
        self.var_prefix = "n"
        all_ids = self.before_ids | set(after.index)
        while any(_looks_like_var(i, self.var_prefix) for i in all_ids):
            self.var_prefix += "n"

    def run(self) -> CommandSet:
        self.visit(self.after.root)
        self.remove_doomed()
        created_work = {wid for wid in self.var_for_work_id}
        created_after = set(self.after.index) - self.before_ids
        if not tree_equal(self.work, self.after, canonical_text=True,
                          created_a=created_work, created_b=created_after):
            raise DiffError("internal error: edit script did not converge")
        return CommandSet(self.set_name, self.items, "<diff>")

    # every emitted command is applied to the work tree immediately, so
    # later anchors and id allocation see exactly what replay will see
    def emit(self, cmd: Command) -> None:
        self.items.append(cmd)
        execute(cmd, self.work, self.env)

    def ref(self, after_id: str) -> str:
        """Reference token for an after-element: its own id, or the bind
        variable when the diff created it."""
        return self.var_for_after_id.get(after_id, after_id)

    def work_ref(self, work_id: str) -> str:
        return self.var_for_work_id.get(work_id, work_id)

    def visit(self, a_elem: ElementNode) -> None:
        w_elem = self.work.index[self.work_id_of(a_elem.id)]
        if w_elem.tag != a_elem.tag:
            self.emit(Retag(self.ref(a_elem.id), a_elem.tag))
        self.fix_attrs(a_elem, w_elem)
        self.fix_children(a_elem, w_elem)
        for child in a_elem.element_children():
            self.visit(child)

    def fix_attrs(self, a_elem: ElementNode, w_elem: ElementNode) -> None:
        if list(w_elem.attrs.items()) == list(a_elem.attrs.items()):
            return
        target = self.ref(a_elem.id)
        # plan the cheap reconciliation and check it lands in after's order
        kept = [(k, a_elem.attrs[k]) for k in w_elem.attrs if k in a_elem.attrs]
        appended = [(k, v) for k, v in a_elem.attrs.items() if k not in w_elem.attrs]
        if kept + appended == list(a_elem.attrs.items()):
            for k in list(w_elem.attrs):
                if k not in a_elem.attrs:
                    self.emit(RemoveAttribute(target, k))
            for k, v in a_elem.attrs.items():
                if w_elem.attrs.get(k) != v:
                    self.emit(SetAttribute(target, k, v))
        else:
            # order changed: rebuild the attribute list wholesale
            for k in list(w_elem.attrs):
                self.emit(RemoveAttribute(target, k))
            for k, v in a_elem.attrs.items():
                self.emit(SetAttribute(target, k, v))

    def fix_children(self, a_elem: ElementNode, w_elem: ElementNode) -> None:
        target = canonical_children(a_elem)
        if self.sequences_match(target, w_elem):
            return
        p_ref = self.ref(a_elem.id)
        self.fix_text(target, a_elem, w_elem, p_ref)
        # position every element child; stale occupants drift right and
        # are pulled away or removed later
        prev_ref: str | None = None
        texts_passed = 0
        after_text = False
        for item in target:
            if isinstance(item, str):
                texts_passed += 1
                after_text = True
                continue
            self.place_child(item, w_elem, p_ref, prev_ref, after_text, texts_passed,
                             total_texts=sum(1 for t in target if isinstance(t, str)))
            prev_ref = self.ref(item.id)
            after_text = False

    def work_id_of(self, after_id: str) -> str | None:
        """The id of the work element corresponding to an after-element,
        or None while the diff has not created it yet."""
        if after_id in self.before_ids:
            return after_id
        var = self.var_for_after_id.get(after_id)
        return self.env[var] if var is not None else None

    def sequences_match(self, target: list, w_elem: ElementNode) -> bool:
        current = canonical_children(w_elem)
        if len(current) != len(target):
            return False
        for t_item, c_item in zip(target, current):
            if isinstance(t_item, str) or isinstance(c_item, str):
                if t_item != c_item:
                    return False
            elif self.work_id_of(t_item.id) != c_item.id:
                return False
        return True

    def fix_text(self, target: list, a_elem: ElementNode, w_elem: ElementNode,
                 p_ref: str) -> None:
        target_texts = [t for t in target if isinstance(t, str)]
        current_texts = [t for t in canonical_children(w_elem) if isinstance(t, str)]
        if target_texts == current_texts:
            return
        if not target_texts:
            self.emit(RemoveText(p_ref))
        elif len(target_texts) == 1:
            self.emit(SetText(p_ref, target_texts[0]))
        else:
            raise DiffError(
                f"element {a_elem.id!r}: the text interleaving "
                f"{target_texts!r} cannot be reproduced from {current_texts!r}")

    def place_child(self, a_child: ElementNode, w_parent: ElementNode, p_ref: str,
                    prev_ref: str | None, after_text: bool, texts_passed: int,
                    total_texts: int) -> None:
        created = a_child.id not in self.before_ids
        # pick the slot: after the previous placed element, at the front,
        # or pinned against the first occupant behind a text node
        if not after_text:
            relation = Relation.AFTER if prev_ref is not None else Relation.FIRST_UNDER
            anchor = prev_ref if prev_ref is not None else p_ref
        else:
            occupant = self.occupant_after_text(w_parent, texts_passed)
            if (occupant is not None and not created
                    and occupant.id == self.work_id_of(a_child.id)):
                return  # already sitting exactly at this slot
            if occupant is not None:
                relation, anchor = Relation.BEFORE, self.work_ref(occupant.id)
            elif texts_passed == total_texts:
                relation, anchor = Relation.UNDER, p_ref
            else:
                raise DiffError(
                    f"element {a_child.id!r} must be placed between text nodes "
                    f"of {w_parent.id!r}, but no anchor element remains there")
        if created:
            self.fresh += 1
            var = f"{self.var_prefix}{self.fresh}"
            self.items.append(make_comment(f"# new element {var} is {a_child.id} here"))
            kids = canonical_children(a_child)
            texts = [k for k in kids if isinstance(k, str)]
            if len(texts) >= 2:
                # several text children are impossible to synthesize
                # directly; clone an element with the same text skeleton
                # and let the usual machinery replace everything else
                source = self.find_clone_source(a_child, texts)
                if source is None:
                    raise DiffError(
                        f"created element {a_child.id!r} interleaves text "
                        f"{texts!r} and no element with that text layout "
                        "exists to clone")
                cmd = CreateClone(self.work_ref(source.id), relation, anchor, var)
            elif len(kids) == 1 and texts:
                cmd = CreateTextElement(a_child.tag, kids[0], relation, anchor, var)
            else:
                cmd = CreateElement(a_child.tag, relation, anchor, var)
            self.emit(cmd)
            self.var_for_after_id[a_child.id] = var
            self.var_for_work_id[self.env[var]] = var
        else:
            move = MoveElement(self.ref(a_child.id), relation, anchor)
            w_child = self.work.index[a_child.id]
            if not (w_child.parent is w_parent and self.already_placed(move)):
                self.emit(move)

    def already_placed(self, move: MoveElement) -> bool:
        """True when the move would provably not change the tree (target
        already immediately at the requested slot)."""
        target = self.work.index[self.env.get(move.target, move.target)]
        anchor = self.work.index[self.env.get(move.anchor, move.anchor)]
        siblings = target.parent.children if target.parent else []
        if move.relation is Relation.AFTER:
            elems = [c for c in siblings if isinstance(c, ElementNode)]
            i = elems.index(target)
            if i == 0 or elems[i - 1] is not anchor:
                return False
            # no text between anchor and target
            lo = siblings.index(anchor)
            hi = siblings.index(target)
            return not any(isinstance(c, TextNode) and c.content
                           for c in siblings[lo + 1:hi])
        if move.relation is Relation.FIRST_UNDER:
            for c in anchor.children:
                if isinstance(c, TextNode) and c.content:
                    return False
                if isinstance(c, ElementNode):
                    return c is target
        return False

    def find_clone_source(self, a_child: ElementNode,
                          texts: list[str]) -> ElementNode | None:
        """A work element whose direct text layout equals ``texts``. The
        derived-id grammar usually points straight at the original clone
        source; otherwise any element with the right skeleton does."""
        def skeleton_matches(elem: ElementNode) -> bool:
            return [t for t in canonical_children(elem) if isinstance(t, str)] == texts

        if "+" in a_child.id:
            base = self.work.index.get(a_child.id.rsplit("+", 1)[0])
            if base is not None and skeleton_matches(base):
                return base
        for elem in iter_elements(self.work.root):
            if skeleton_matches(elem):
                return elem
        return None

    def occupant_after_text(self, w_parent: ElementNode, ordinal: int) -> ElementNode | None:
        count = 0
        in_text = False
        for child in w_parent.children:
            if isinstance(child, TextNode):
                if child.content and not in_text:
                    count += 1
                    in_text = True
            else:
                in_text = False
                if count >= ordinal:
                    return child
        return None

    def remove_doomed(self) -> None:
        # an element corresponds to the after state only if it is a
        # surviving original or one of our own creations; a clone payload
        # whose fresh id happens to equal some after id is still doomed
        def keep(node_id: str) -> bool:
            return ((node_id in self.before_ids and node_id in self.after.index)
                    or node_id in self.var_for_work_id)

        roots = [e for e in iter_elements(self.work.root)
                 if not keep(e.id) and (e.parent is None or keep(e.parent.id))]
        for elem in roots:
            self.emit(RemoveElement(self.work_ref(elem.id)))


def verify_diff(before: Document, after: Document, script: CommandSet) -> bool:
    """Apply the script to a copy of ``before`` and compare against
    ``after`` up to the created-id bijection; the check the diff's own
    tests are built on."""
    replay = Document(copy_subtree(before.root), "<replay>", before.id_attribute)
    apply_set(script, replay)
    created_replay = set(replay.index) - set(before.index)
    created_after = set(after.index) - set(before.index)
    return tree_equal(replay, after, canonical_text=True,
                      created_a=created_replay, created_b=created_after)
