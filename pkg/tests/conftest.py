"""Shared fixtures and randomized builders.

The builders are plain seeded-``random`` generators rather than
hypothesis strategies so the large acceptance sweeps can control the
exact number of cases; the hypothesis-based tests wrap them or build
ASTs directly.
"""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from dml.document import Document, ElementNode, TextNode, copy_subtree, load_xml
from dml.errors import ApplyError
from dml.interpreter import execute
from dml.syntax import (
    Command, CommandSet, CreateClone, CreateElement, CreateTextElement,
    MoveElement, Relation, RemoveAttribute, RemoveElement, RemoveText, Retag,
    SetAttribute, SetText, make_comment,
)

FIXTURES = Path(__file__).parent / "fixtures"

TAG_POOL = ["ENTRY", "FORM", "ORTH", "PRON", "SENSE", "TRANS", "TR", "USG",
            "GRAM", "COLLOC", "NOTE"]
ATTR_NAME_POOL = ["TYPE", "N", "LANG", "SRC", "REG"]
ATTR_VALUE_POOL = ["time", "rare", "3", "ur", "en", "fig", "colloquial",
                   "a&b", 'say "so"', "x<y"]
TEXT_POOL = ["rare", "rarely", "طرف", "tür'fah", "goal in children's game",
             "a<b>c", "x & y", "شانگ", "to yield, submit", "leg", "  ", "\n  "]


@pytest.fixture
def misrole_before() -> bytes:
    return (FIXTURES / "entry_misrole_before.xml").read_bytes()


@pytest.fixture
def misrole_after() -> bytes:
    return (FIXTURES / "entry_misrole_after.xml").read_bytes()


@pytest.fixture
def misrole_script() -> str:
    return (FIXTURES / "entry_misrole.dml").read_text(encoding="utf-8")


@pytest.fixture
def misrole_doc(misrole_before) -> Document:
    return load_xml(misrole_before, source_path="entry_misrole_before.xml")


def copy_document(doc: Document) -> Document:
    return Document(copy_subtree(doc.root), doc.source_path, doc.id_attribute)


def build_random_document(rng: random.Random, n_elements: int = 20) -> Document:
    """A plausible noisy-lexicon tree: unique ids, mixed content, no two
    adjacent text nodes (the shape XML parsing can actually produce)."""
    counter = rng.randrange(100, 10_000)
    root = ElementNode("LEXICON", str(counter), {}, [])
    elements = [root]
    ids = {root.id}
    for _ in range(max(0, n_elements - 1)):
        parent = rng.choice(elements)
        counter += rng.randrange(1, 4)
        node_id = str(counter)
        if rng.random() < 0.1:
            derived = f"{rng.choice(sorted(ids))}+{rng.randrange(1, 3)}"
            if derived not in ids:
                node_id = derived
        ids.add(node_id)
        elem = ElementNode(rng.choice(TAG_POOL), node_id, {}, [], parent)
        for name in rng.sample(ATTR_NAME_POOL, k=rng.choice((0, 0, 1, 2))):
            elem.attrs[name] = rng.choice(ATTR_VALUE_POOL)
        parent.children.insert(rng.randrange(len(parent.children) + 1), elem)
        elements.append(elem)
    for elem in elements:
        if rng.random() < 0.45:
            slots = list(range(len(elem.children) + 1))
            k = min(len(slots), rng.choice((1, 1, 2)))
            for slot in sorted(rng.sample(slots, k), reverse=True):
                elem.children.insert(slot, TextNode(rng.choice(TEXT_POOL)))
    return Document(root, "<random>")


def _propose_command(rng: random.Random, work: Document, env: dict[str, str],
                     var_counter: list[int]) -> Command:
    def pick_ref() -> str:
        live_vars = [v for v in env]
        if live_vars and rng.random() < 0.25:
            return rng.choice(live_vars)
        return rng.choice(sorted(work.index))

    def pick_bind() -> str | None:
        if rng.random() < 0.5:
            var_counter[0] += 1
            return f"v{var_counter[0]}"
        return None

    relation = rng.choice(list(Relation))
    kind = rng.randrange(10)
    if kind == 0:
        return CreateElement(rng.choice(TAG_POOL), relation, pick_ref(), pick_bind())
    if kind == 1:
        return CreateTextElement(rng.choice(TAG_POOL), rng.choice(TEXT_POOL),
                                 relation, pick_ref(), pick_bind())
    if kind == 2:
        return CreateClone(pick_ref(), relation, pick_ref(), pick_bind())
    if kind == 3:
        return RemoveElement(pick_ref())
    if kind == 4:
        return RemoveText(pick_ref())
    if kind == 5:
        return RemoveAttribute(pick_ref(), rng.choice(ATTR_NAME_POOL))
    if kind == 6:
        return Retag(pick_ref(), rng.choice(TAG_POOL))
    if kind == 7:
        return MoveElement(pick_ref(), relation, pick_ref())
    if kind == 8:
        return SetAttribute(pick_ref(), rng.choice(ATTR_NAME_POOL),
                            rng.choice(ATTR_VALUE_POOL))
    return SetText(pick_ref(), rng.choice(TEXT_POOL))


def build_random_script(rng: random.Random, doc: Document, n_commands: int = 8,
                        name: str = "random") -> CommandSet:
    """A script of commands that all succeed against ``doc``, built by
    actually executing candidates on a scratch copy."""
    work = copy_document(doc)
    env: dict[str, str] = {}
    var_counter = [0]
    items: list = []
    if rng.random() < 0.3:
        items.append(make_comment("# QA 1/15/2012 randomized repair batch"))
    made = 0
    attempts = 0
    while made < n_commands and attempts < n_commands * 40:
        attempts += 1
        cmd = _propose_command(rng, work, env, var_counter)
        try:
            execute(cmd, work, env)
        except ApplyError:
            continue
        items.append(cmd)
        made += 1
    return CommandSet(name, items, "<generated>")
