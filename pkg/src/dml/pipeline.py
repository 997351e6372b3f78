"""End-to-end runs: load source, apply staged command sets, snapshot,
report, and support rollback by exclusion.

The source file is never written to; every run replays it from scratch
into a fresh ``run-NNNN`` subdirectory of the manifest's work
directory. A run directory is self-contained evidence: the effective
(post-exclusion) command set of every stage, a resolved-id log per
stage, any requested snapshots, the final state as ``final.xml``, and
``report.json``. Generator stages
regenerate their sets from the current in-memory document on every run;
a cached set from an earlier run would miss repairs made by earlier
stages this run, which is the whole point of staging.

Undo works by exclusion, not by editing history: rerun the manifest
minus one command (``file:line`` of a manual set) or minus one generated
block (``rule:matched-id``) or minus a whole stage, and everything later
is replayed on top.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from .document import Document, load_xml, serialize_xml
from .errors import ManifestError
from .generators import charmap_generate, generate, load_charmap, load_rules
from .interpreter import COLLECT, FAIL_FAST, ApplyReport, apply_set
from .syntax import Comment, CommandSet, parse_script, print_script

MANUAL = "manual"
GENERATED = "generated"


@dataclass(slots=True)
class Stage:
    name: str
    kind: str  # MANUAL | GENERATED
    path: str | None = None  # manual set file
    rules_path: str | None = None
    charmap_path: str | None = None
    charmap_tags: list[str] = field(default_factory=list)
    snapshot_after: bool = False
    apply_mode: str | None = None  # default: failFast manual, collect generated

    def mode(self) -> str:
        if self.apply_mode is not None:
            return self.apply_mode
        return FAIL_FAST if self.kind == MANUAL else COLLECT


@dataclass(slots=True)
class Manifest:
    source_xml: Path
    output_xml: Path
    work_dir: Path
    stages: list[Stage]
    id_attribute: str = "ID"
    missing_id_policy: str = "strict"
    base_dir: Path = Path(".")  # stage-relative paths resolve here

    def stage_named(self, name: str) -> Stage:
        for stage in self.stages:
            if stage.name == name:
                return stage
        raise ManifestError(f"no stage named {name!r}")


@dataclass(frozen=True, slots=True)
class ExcludeStage:
    stage_name: str


@dataclass(frozen=True, slots=True)
class ExcludeCommand:
    file: str
    line: int
    stage_name: str | None = None


@dataclass(frozen=True, slots=True)
class ExcludeMatch:
    rule: str
    node_id: str


Exclusion = ExcludeStage | ExcludeCommand | ExcludeMatch


@dataclass(slots=True)
class StageReport:
    name: str
    kind: str
    apply_mode: str
    excluded: bool = False
    report: ApplyReport | None = None
    set_file: str | None = None  # effective set, relative to the run dir
    resolved_log: str | None = None
    snapshot: str | None = None

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "kind": self.kind,
            "applyMode": self.apply_mode,
            "excluded": self.excluded,
            "report": self.report.to_json() if self.report else None,
            "setFile": self.set_file,
            "resolvedLog": self.resolved_log,
            "snapshot": self.snapshot,
        }


@dataclass(slots=True)
class RunReport:
    run_dir: Path
    source_path: str
    output_path: str
    source_digest: str
    output_digest: str
    stages: list[StageReport] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def totals(self) -> dict[str, int]:
        sums = {MANUAL: 0, GENERATED: 0}
        for stage in self.stages:
            if stage.report is not None:
                sums[stage.kind] += stage.report.commands_applied
        return sums

    def to_json(self) -> dict:
        return {
            "runDir": str(self.run_dir),
            "source": self.source_path,
            "output": self.output_path,
            "sourceDigest": self.source_digest,
            "outputDigest": self.output_digest,
            "totals": self.totals(),
            "stages": [s.to_json() for s in self.stages],
            "warnings": list(self.warnings),
        }


def digest(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def load_manifest(path) -> Manifest:
    """Read and validate a manifest file; paths resolve against its directory."""
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: not valid JSON: {exc}") from exc
    return manifest_from_json(data, path.parent)


def manifest_from_json(data: dict, base_dir) -> Manifest:
    base = Path(base_dir)

    def require(key: str) -> object:
        if key not in data:
            raise ManifestError(f"manifest is missing {key!r}")
        return data[key]

    policy = data.get("missingIdPolicy", "strict")
    if policy not in ("strict", "assign"):
        raise ManifestError(f"bad missingIdPolicy {policy!r}")
    stages = [_stage_from_json(raw, i) for i, raw in enumerate(require("stages"))]
    names = [s.name for s in stages]
    for name in names:
        if names.count(name) > 1:
            raise ManifestError(f"duplicate stage name {name!r}")
    return Manifest(
        source_xml=base / str(require("sourceXml")),
        output_xml=base / str(require("outputXml")),
        work_dir=base / str(require("workDir")),
        stages=stages,
        id_attribute=data.get("idAttribute", "ID"),
        missing_id_policy=policy,
        base_dir=base,
    )


_STAGE_NAME_OK = re.compile(r"[A-Za-z0-9][A-Za-z0-9_.-]*\Z")


def _stage_from_json(raw: dict, index: int) -> Stage:
    name = raw.get("name")
    if not name:
        raise ManifestError(f"stage #{index + 1} has no name")
    if not _STAGE_NAME_OK.match(name):
        raise ManifestError(f"stage name {name!r} is not filename-safe")
    mode = raw.get("applyMode")
    if mode not in (None, FAIL_FAST, COLLECT):
        raise ManifestError(f"stage {name!r}: bad applyMode {mode!r}")
    kind = raw.get("kind")
    if not isinstance(kind, dict) or len(kind) != 1:
        raise ManifestError(f"stage {name!r}: kind must be one of "
                            "{'manualSet': …} or {'generator': …}")
    stage = Stage(name=name, kind="", snapshot_after=bool(raw.get("snapshotAfter", False)),
                  apply_mode=mode)
    if "manualSet" in kind:
        stage.kind = MANUAL
        stage.path = kind["manualSet"].get("path")
        if not stage.path:
            raise ManifestError(f"stage {name!r}: manualSet needs a path")
    elif "generator" in kind:
        stage.kind = GENERATED
        spec = kind["generator"]
        if "rulesPath" in spec:
            stage.rules_path = spec["rulesPath"]
        elif "charmap" in spec:
            stage.charmap_path = spec["charmap"].get("tablePath")
            stage.charmap_tags = list(spec["charmap"].get("tags", []))
            if not stage.charmap_path or not stage.charmap_tags:
                raise ManifestError(f"stage {name!r}: charmap needs tablePath and tags")
        else:
            raise ManifestError(f"stage {name!r}: generator needs rulesPath or charmap")
    else:
        raise ManifestError(f"stage {name!r}: unknown kind {next(iter(kind))!r}")
    return stage


def _next_run_dir(work_dir: Path) -> Path:
    work_dir.mkdir(parents=True, exist_ok=True)
    taken = [int(p.name[4:]) for p in work_dir.glob("run-*")
             if p.is_dir() and p.name[4:].isdigit()]
    counter = max(taken, default=0) + 1
    while True:
        candidate = work_dir / f"run-{counter:04d}"
        try:
            candidate.mkdir()
            return candidate
        except FileExistsError:
            counter += 1


class _ExclusionTracker:
    """Resolves which exclusions apply where and remembers which ones
    never matched anything, for the end-of-run warning."""

    def __init__(self, manifest: Manifest, exclusions):
        self.by_stage: set[str] = set()
        self.commands: dict[ExcludeCommand, bool] = {}
        self.matches: dict[ExcludeMatch, bool] = {}
        names = {s.name for s in manifest.stages}
        for exc in exclusions:
            if isinstance(exc, ExcludeStage):
                if exc.stage_name not in names:
                    raise ManifestError(f"exclusion refers to unknown stage {exc.stage_name!r}")
                self.by_stage.add(exc.stage_name)
            elif isinstance(exc, ExcludeCommand):
                if exc.stage_name is not None and exc.stage_name not in names:
                    raise ManifestError(f"exclusion refers to unknown stage {exc.stage_name!r}")
                self.commands[exc] = False
            elif isinstance(exc, ExcludeMatch):
                self.matches[exc] = False
            else:
                raise ManifestError(f"unknown exclusion {exc!r}")

    def stage_excluded(self, stage: Stage) -> bool:
        return stage.name in self.by_stage

    def filter_manual(self, stage: Stage, cmd_set: CommandSet) -> CommandSet:
        relevant = {}
        for exc in self.commands:
            if exc.stage_name is not None and exc.stage_name != stage.name:
                continue
            if exc.stage_name is None and not _same_file(exc.file, stage.path):
                continue
            relevant[exc.line] = exc
        if not relevant:
            return cmd_set
        kept = []
        for item in cmd_set.items:
            line = item.loc.line if item.loc else None
            exc = relevant.get(line)
            if exc is None:
                kept.append(item)
                continue
            if isinstance(item, Comment):
                raise ManifestError(
                    f"exclusion {exc.file}:{exc.line} points at a comment, not a command")
            self.commands[exc] = True
        return CommandSet(cmd_set.name, kept, cmd_set.source_path)

    def filter_generated(self, cmd_set: CommandSet) -> CommandSet:
        if not self.matches:
            return cmd_set
        wanted = {(m.rule, m.node_id): m for m in self.matches}
        # group items into comment-headed blocks; a header whose whole
        # block is excluded disappears with it
        blocks: list[tuple[Comment | None, list]] = [(None, [])]
        for item in cmd_set.items:
            if isinstance(item, Comment):
                blocks.append((item, []))
            else:
                blocks[-1][1].append(item)
        kept: list = []
        for comment, commands in blocks:
            surviving = []
            for cmd in commands:
                exc = wanted.get(cmd.provenance or ("", ""))
                if exc is None:
                    surviving.append(cmd)
                else:
                    self.matches[exc] = True
            if comment is not None and (surviving or not commands):
                kept.append(comment)
            kept.extend(surviving)
        return CommandSet(cmd_set.name, kept, cmd_set.source_path)

    def unmatched_warnings(self) -> list[str]:
        out = []
        for exc, hit in self.commands.items():
            if not hit:
                out.append(f"exclusion matched nothing: {exc.file}:{exc.line}")
        for exc, hit in self.matches.items():
            if not hit:
                out.append(f"exclusion matched nothing: {exc.rule}:{exc.node_id}")
        return out


def _same_file(given: str, stage_path: str | None) -> bool:
    if stage_path is None:
        return False
    return given == stage_path or Path(given).name == Path(stage_path).name


def run_pipeline(manifest: Manifest, exclusions: tuple | list = ()) -> RunReport:
    """Apply all stages in order; returns the report (also written to the
    run directory as ``report.json``)."""
    source = manifest.source_xml
    output = manifest.output_xml
    if source.resolve() == output.resolve():
        raise ManifestError("outputXml must differ from sourceXml; the source is read-only")
    try:
        source_bytes = source.read_bytes()
    except OSError as exc:
        raise ManifestError(f"cannot read source {source}: {exc}") from exc

    tracker = _ExclusionTracker(manifest, exclusions)
    run_dir = _next_run_dir(manifest.work_dir)
    doc = load_xml(source_bytes, id_attribute=manifest.id_attribute,
                   missing_id_policy=manifest.missing_id_policy,
                   source_path=str(source))
    report = RunReport(run_dir, str(source), str(output), digest(source_bytes), "")
    if doc.assigned_ids:
        report.warnings.append(
            f"assigned {len(doc.assigned_ids)} missing ids "
            f"({doc.assigned_ids[0]} … {doc.assigned_ids[-1]})")

    for number, stage in enumerate(manifest.stages, start=1):
        prefix = f"{number:02d}-{stage.name}"
        stage_report = StageReport(stage.name, stage.kind, stage.mode())
        report.stages.append(stage_report)

        if tracker.stage_excluded(stage):
            stage_report.excluded = True
        else:
            cmd_set = _stage_command_set(manifest, stage, doc, tracker)
            set_file = f"{prefix}.generated.dml" if stage.kind == GENERATED else f"{prefix}.dml"
            set_text = print_script(cmd_set)
            (run_dir / set_file).write_text(set_text, encoding="utf-8")
            stage_report.set_file = set_file
            effective = parse_script(set_text, stage.name, source_path=set_file)
            trace: list = []
            try:
                stage_report.report = apply_set(effective, doc, stage.mode(), trace)
            finally:
                log_name = f"{prefix}.resolved.jsonl"
                _write_resolved_log(run_dir / log_name, trace)
                stage_report.resolved_log = log_name

        if stage.snapshot_after:
            snapshot_name = f"{prefix}.xml"
            (run_dir / snapshot_name).write_bytes(serialize_xml(doc))
            stage_report.snapshot = snapshot_name

    output_bytes = serialize_xml(doc)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_bytes(output_bytes)
    (run_dir / "final.xml").write_bytes(output_bytes)
    report.output_digest = digest(output_bytes)
    report.warnings.extend(tracker.unmatched_warnings())

    (run_dir / "report.json").write_text(
        json.dumps(report.to_json(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    (manifest.work_dir / "LATEST").write_text(run_dir.name + "\n", encoding="utf-8")
    if digest(source.read_bytes()) != report.source_digest:
        raise ManifestError(f"source file {source} changed during the run")
    return report


def rollback(manifest: Manifest, exclusions: tuple | list) -> RunReport:
    """Undo past edits while keeping later ones: replay the manifest with
    the undone commands excluded. Identical to run_pipeline; the name
    documents the workflow."""
    return run_pipeline(manifest, exclusions)


def _stage_command_set(manifest: Manifest, stage: Stage, doc: Document,
                       tracker: _ExclusionTracker) -> CommandSet:
    base = manifest.base_dir
    if stage.kind == MANUAL:
        path = base / stage.path
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ManifestError(f"stage {stage.name!r}: cannot read {path}: {exc}") from exc
        cmd_set = parse_script(text, stage.name, source_path=stage.path)
        return tracker.filter_manual(stage, cmd_set)
    if stage.rules_path is not None:
        rules = load_rules(base / stage.rules_path)
        generated = generate(doc, rules, stage.name)
    else:
        table = load_charmap(base / stage.charmap_path)
        generated = charmap_generate(doc, stage.charmap_tags, table, stage.name)
    return tracker.filter_generated(generated)


def _write_resolved_log(path: Path, trace: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for loc, ids in trace:
            fh.write(json.dumps({"f": loc.path if loc else None,
                                 "l": loc.line if loc else None,
                                 "i": ids}, ensure_ascii=False) + "\n")
