import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import build_random_document, copy_document
from dml.document import load_xml, serialize_xml, tree_equal
from dml.errors import RuleError
from dml.generators import (
    AttrTest, ChildCount, Pattern, apply_charmap, charmap_generate, generate,
    load_charmap, load_rules, match_all, rules_from_json,
)
from dml.interpreter import apply_set
from dml.syntax import (
    Comment, CreateElement, MoveElement, Relation, RemoveAttribute, Retag,
    SetText, parse_script, print_script,
)

# A lexicon where two senses were split off their entries: the senses sit
# at root level immediately after the entry they belong to.
STRAY = (b'<LEX ID="L">'
         b'<ENTRY ID="e1"><FORM ID="f1"/></ENTRY>'
         b'<SENSE ID="s1">one</SENSE>'
         b'<ENTRY ID="e2"><FORM ID="f2"/><SENSE ID="s0">ok</SENSE></ENTRY>'
         b'<SENSE ID="s2">two</SENSE>'
         b'</LEX>')

STRAY_RULES = {
    "rules": [{
        "name": "reattach-stray-sense",
        "match": {"tag": "SENSE", "context": {"prev": "ENTRY", "rootChild": True}},
        "emit": ["MOVE Element $SELF under $PREV"],
    }]
}


def test_match_all_stray_senses_hand_enumerated():
    # oracle: by hand on the 8-element fixture, s1 and s2 match (root
    # children with a preceding ENTRY sibling); s0 is inside an entry.
    doc = load_xml(STRAY)
    pattern = Pattern(tag="SENSE", prev_tag="ENTRY", root_child=True)
    envs = match_all(doc, pattern)
    assert envs == [
        {"SELF": "s1", "PARENT": "L", "PREV": "e1"},
        {"SELF": "s2", "PARENT": "L", "PREV": "e2"},
    ]


def test_match_all_no_matches(misrole_doc):
    assert match_all(misrole_doc, Pattern(tag="ZZZ")) == []


def test_match_all_attr_equals(misrole_doc):
    envs = match_all(misrole_doc, Pattern(tag="USG", attr_tests=[AttrTest("TYPE", "equals", "time")]))
    assert len(envs) == 1 and envs[0]["SELF"] == "351795"


def test_match_all_attr_exists_absent(misrole_doc):
    assert [e["SELF"] for e in match_all(misrole_doc, Pattern(attr_tests=[AttrTest("N", "exists")]))] == ["351794"]
    absent = [e["SELF"] for e in match_all(misrole_doc, Pattern(attr_tests=[AttrTest("N", "absent")]))]
    assert "351794" not in absent and "351782" in absent


def test_match_all_text_and_child_count(misrole_doc):
    assert [e["SELF"] for e in match_all(misrole_doc, Pattern(text_equals="rare"))] == ["351795"]
    assert [e["SELF"] for e in match_all(misrole_doc, Pattern(text_matches="t.r"))] == ["351785"]
    assert [e["SELF"] for e in match_all(misrole_doc, Pattern(child_count=ChildCount(exact=2)))] == [
        "351782", "351783"]
    assert [e["SELF"] for e in match_all(misrole_doc, Pattern(child_count=ChildCount(min=1, max=2)))] == [
        "351782", "351783", "351794"]


def test_match_all_document_order():
    doc = load_xml(STRAY)
    envs = match_all(doc, Pattern())
    assert [e["SELF"] for e in envs] == ["L", "e1", "f1", "s1", "e2", "f2", "s0", "s2"]


def test_generate_stray_sense_rule():
    doc = load_xml(STRAY)
    rules = rules_from_json(STRAY_RULES)
    generated = generate(doc, rules, "stray")
    assert generated.commands() == [
        MoveElement("s1", Relation.UNDER, "e1"),
        MoveElement("s2", Relation.UNDER, "e2"),
    ]
    comments = [i for i in generated.items if isinstance(i, Comment)]
    assert len(comments) == 2
    assert "reattach-stray-sense" in comments[0].text and "s1" in comments[0].text
    # applying does the repair
    apply_set(generated, doc)
    assert doc.lookup("s1").parent.id == "e1"
    assert doc.lookup("s2").parent.id == "e2"


def test_generate_empty_rules(misrole_doc):
    assert generate(misrole_doc, [], "none").items == []


def test_generate_does_not_mutate(misrole_doc):
    before = serialize_xml(misrole_doc)
    generate(misrole_doc, rules_from_json(STRAY_RULES), "x")
    assert serialize_xml(misrole_doc) == before


USAGE_RULES = {
    "rules": [{
        "name": "usage-to-translation",
        "match": {
            "tag": "USG",
            "attrs": [{"name": "TYPE", "op": "equals", "value": "time"}],
            "context": {"parent": "SENSE"},
        },
        "emit": [
            "CREATE Element TRANS under $PARENT $NEW1",
            "RETAG $SELF TR",
            "REMOVE Attribute $SELF TYPE",
            "MOVE Element $SELF under $NEW1",
        ],
    }]
}


def test_generate_reproduces_worked_example(misrole_doc, misrole_after):
    rules = rules_from_json(USAGE_RULES)
    generated = generate(misrole_doc, rules, "usage")
    assert generated.commands() == [
        CreateElement("TRANS", Relation.UNDER, "351794", "v1"),
        Retag("351795", "TR"),
        RemoveAttribute("351795", "TYPE"),
        MoveElement("351795", Relation.UNDER, "v1"),
    ]
    apply_set(generated, misrole_doc)
    assert serialize_xml(misrole_doc) == misrole_after


def test_generated_set_survives_print_and_parse(misrole_doc):
    generated = generate(misrole_doc, rules_from_json(USAGE_RULES), "usage")
    reparsed = parse_script(print_script(generated), "usage")
    assert reparsed.commands() == generated.commands()


def test_match_needing_prev_skips_elements_without_one():
    doc = load_xml(b'<L ID="L"><SENSE ID="s1"/><ENTRY ID="e1"/><SENSE ID="s2"/></L>')
    rules = rules_from_json({
        "rules": [{"name": "needs-prev",
                   "match": {"tag": "SENSE"},
                   "emit": ["MOVE Element $SELF under $PREV"]}]
    })
    generated = generate(doc, rules, "g")
    # s1 has no preceding sibling: skipped; s2 follows e1: emitted
    assert generated.commands() == [MoveElement("s2", Relation.UNDER, "e1")]


def test_rule_validation_errors():
    with pytest.raises(RuleError) as err:
        rules_from_json({"rules": [{"name": "bad", "match": {},
                                    "emit": ["MOVE Element $WHAT under $SELF"]}]})
    assert "$WHAT" in str(err.value) and "bad" in str(err.value)
    with pytest.raises(RuleError):
        rules_from_json({"rules": [{"match": {}, "emit": ["REMOVE Element $SELF"]}]})
    with pytest.raises(RuleError):
        rules_from_json({"rules": [{"name": "empty", "match": {}, "emit": []}]})
    with pytest.raises(RuleError):
        rules_from_json({"rules": [{"name": "p", "match": {"attrs": [{"name": "A", "op": "weird"}]},
                                    "emit": ["REMOVE Element $SELF"]}]})


def test_rules_and_charmap_files_load(tmp_path):
    rules_path = tmp_path / "rules.json"
    rules_path.write_text(json.dumps(STRAY_RULES), encoding="utf-8")
    assert load_rules(rules_path)[0].name == "reattach-stray-sense"
    cm_path = tmp_path / "map.json"
    cm_path.write_text('{"x": "ط"}', encoding="utf-8")
    assert load_charmap(cm_path) == {"x": "ط"}
    bad = tmp_path / "bad.json"
    bad.write_text('{"": "y"}', encoding="utf-8")
    with pytest.raises(RuleError):
        load_charmap(bad)


# --- charmap ----------------------------------------------------------------

def test_apply_charmap_direct_substitution():
    # oracle: plain string substitution
    assert apply_charmap("xyz", {"x": "ط"}) == "طyz"


def test_apply_charmap_longest_match_wins():
    assert apply_charmap("abc", {"a": "1", "ab": "2"}) == "2c"
    assert apply_charmap("aab", {"a": "1", "ab": "2"}) == "12"


def test_charmap_generate_emits_only_changes():
    doc = load_xml(b'<L ID="L"><ORTH ID="o1">xyz</ORTH><ORTH ID="o2">yz</ORTH>'
                   b'<PRON ID="p1">x</PRON></L>')
    generated = charmap_generate(doc, {"ORTH"}, {"x": "ط"}, "enc")
    assert generated.commands() == [SetText("o1", "طyz")]
    assert generated.commands()[0].provenance == ("charmap", "o1")


def test_charmap_generate_empty_table(misrole_doc):
    assert charmap_generate(misrole_doc, {"ORTH"}, {}, "enc").items == []


def test_charmap_idempotent_after_apply():
    doc = load_xml(b'<L ID="L"><ORTH ID="o1">xyz</ORTH></L>')
    table = {"x": "ط", "y": "ب"}
    first = charmap_generate(doc, {"ORTH"}, table, "enc")
    apply_set(first, doc)
    assert doc.lookup("o1").text() == "طبz"
    second = charmap_generate(doc, {"ORTH"}, table, "enc")
    assert second.items == []


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_charmap_idempotence_random(seed):
    rng = random.Random(seed)
    doc = build_random_document(rng, 15)
    # keys from the latin half, values from a disjoint block, so the
    # mapped output can never re-trigger the table
    keys = rng.sample(["a", "b", "c", "ra", "re", "el", "to"], k=4)
    table = {k: chr(0x0600 + rng.randrange(0x50)) for k in keys}
    tags = set(rng.sample(["ENTRY", "FORM", "ORTH", "PRON", "SENSE", "TRANS",
                           "TR", "USG", "GRAM", "COLLOC", "NOTE"], k=5))
    first = charmap_generate(doc, tags, table, "enc")
    apply_set(first, doc)
    assert charmap_generate(doc, tags, table, "enc").items == []
