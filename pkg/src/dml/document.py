"""ID-indexed in-memory model of a lexicographic XML document.

Every element carries a unique identifier in a dedicated attribute
(``ID`` by default); the identifier is the address space for all edit
commands. Text is kept verbatim as text nodes between elements, never
normalized, because the character data is the lexicographic payload.

Loading is deliberately strict: UTF-8 only, no DOCTYPE (and therefore no
entity expansion beyond the five predefined entities), a single root.
CDATA sections are folded into ordinary text. XML comments and
processing instructions are dropped on load; round-trip fidelity is
guaranteed for documents in canonical serialized form.
"""

from __future__ import annotations

import xml.parsers.expat
from dataclasses import dataclass, field

from .errors import XmlLoadError

DEFAULT_ID_ATTRIBUTE = "ID"
GENERATED_ID_PREFIX = "gen-"


@dataclass(eq=False, slots=True)
class TextNode:
    content: str


@dataclass(eq=False, slots=True)
class ElementNode:
    tag: str
    id: str
    attrs: dict[str, str]
    children: list["ElementNode | TextNode"] = field(default_factory=list)
    parent: "ElementNode | None" = None

    def element_children(self) -> list["ElementNode"]:
        return [c for c in self.children if isinstance(c, ElementNode)]

    def text_children(self) -> list[TextNode]:
        return [c for c in self.children if isinstance(c, TextNode)]

    def text(self) -> str:
        """Concatenated content of the direct text-node children."""
        return "".join(c.content for c in self.children if isinstance(c, TextNode))


Node = ElementNode | TextNode


def iter_elements(root: ElementNode):
    """Yield ``root`` and every descendant element in document order."""
    stack = [root]
    while stack:
        elem = stack.pop()
        yield elem
        stack.extend(reversed(elem.element_children()))


class Document:
    """A mutable element tree plus the id index kept consistent with it.

    The index maps every reachable element id to its node; mutation goes
    through :meth:`insert_element` / :meth:`detach_element` so the two
    can never drift apart. A document is single-writer: concurrent
    readers are fine only while nobody mutates.
    """

    def __init__(self, root: ElementNode, source_path: str = "<memory>",
                 id_attribute: str = DEFAULT_ID_ATTRIBUTE):
        self.root = root
        self.source_path = source_path
        self.id_attribute = id_attribute
        self.assigned_ids: list[str] = []
        self._reserved: set[str] = set()
        self.index: dict[str, ElementNode] = {}
        for elem in iter_elements(root):
            if elem.id in self.index:
                raise XmlLoadError(f"duplicate id {elem.id!r}", source_path)
            self.index[elem.id] = elem

    def lookup(self, node_id: str) -> ElementNode | None:
        return self.index.get(node_id)

    def allocate_derived_id(self, base: str) -> str:
        """Reserve and return ``base+n`` for the smallest free n >= 1."""
        if base not in self.index:
            raise KeyError(base)
        n = 1
        candidate = f"{base}+1"
        while candidate in self.index or candidate in self._reserved:
            n += 1
            candidate = f"{base}+{n}"
        self._reserved.add(candidate)
        return candidate

    def insert_element(self, elem: ElementNode, parent: ElementNode, position: int) -> None:
        """Attach a detached subtree at ``parent.children[position]``."""
        assert elem.parent is None
        for sub in iter_elements(elem):
            if sub.id in self.index:
                raise XmlLoadError(f"id {sub.id!r} already present in document", self.source_path)
            self.index[sub.id] = sub
            self._reserved.discard(sub.id)
        parent.children.insert(position, elem)
        elem.parent = parent

    def detach_element(self, elem: ElementNode) -> None:
        """Detach a non-root subtree; its ids leave the index."""
        parent = elem.parent
        assert parent is not None
        parent.children.remove(elem)
        elem.parent = None
        for sub in iter_elements(elem):
            del self.index[sub.id]

    def rescan_ids(self) -> dict[str, ElementNode]:
        """Index rebuilt by full traversal; the consistency oracle in tests."""
        return {elem.id: elem for elem in iter_elements(self.root)}


def load_xml(data: bytes, *, id_attribute: str = DEFAULT_ID_ATTRIBUTE,
             missing_id_policy: str = "strict", source_path: str = "<xml>") -> Document:
    """Parse UTF-8 XML bytes into a Document.

    ``missing_id_policy`` is ``strict`` (an element without the id
    attribute is an error) or ``assign`` (fresh ``gen-N`` ids are handed
    out in document order and recorded in ``Document.assigned_ids``).
    """
    if missing_id_policy not in ("strict", "assign"):
        raise ValueError(f"unknown missing_id_policy: {missing_id_policy!r}")

    parser = xml.parsers.expat.ParserCreate()
    parser.buffer_text = True
    parser.ordered_attributes = True

    stack: list[ElementNode] = []
    root: list[ElementNode] = []
    index: dict[str, ElementNode] = {}
    id_lines: dict[str, int] = {}
    missing: list[ElementNode] = []

    def fail(message: str, line: int | None = None):
        raise XmlLoadError(message, source_path,
                           line if line is not None else parser.CurrentLineNumber)

    def on_decl(version, encoding, standalone):
        if encoding is not None and encoding.lower() not in ("utf-8", "utf8"):
            fail(f"unsupported encoding {encoding!r}: only UTF-8 is accepted")

    def on_doctype(*args):
        fail("DOCTYPE declarations are not allowed (no entity expansion)")

    def on_start(name, attrlist):
        attrs = {}
        node_id = None
        for i in range(0, len(attrlist), 2):
            k, v = attrlist[i], attrlist[i + 1]
            if k == id_attribute:
                node_id = v
            else:
                attrs[k] = v
        line = parser.CurrentLineNumber
        if node_id is not None:
            if node_id in index:
                fail(f"duplicate id {node_id!r} (first seen at line {id_lines[node_id]})", line)
            if not node_id:
                fail(f"empty {id_attribute} attribute on <{name}>", line)
        elif missing_id_policy == "strict":
            fail(f"element <{name}> has no {id_attribute} attribute", line)
        elem = ElementNode(name, node_id or "", attrs, [], stack[-1] if stack else None)
        if node_id is not None:
            index[node_id] = elem
            id_lines[node_id] = line
        else:
            missing.append(elem)
        if stack:
            stack[-1].children.append(elem)
        else:
            root.append(elem)
        stack.append(elem)

    def on_end(name):
        stack.pop()

    def on_text(data):
        if not stack:
            return  # whitespace outside the root element
        children = stack[-1].children
        if children and isinstance(children[-1], TextNode):
            children[-1].content += data
        else:
            children.append(TextNode(data))

    parser.XmlDeclHandler = on_decl
    parser.StartDoctypeDeclHandler = on_doctype
    parser.StartElementHandler = on_start
    parser.EndElementHandler = on_end
    parser.CharacterDataHandler = on_text

    try:
        parser.Parse(data, True)
    except xml.parsers.expat.ExpatError as exc:
        raise XmlLoadError(f"malformed XML: {xml.parsers.expat.errors.messages[exc.code]}",
                           source_path, exc.lineno) from exc
    if not root:
        raise XmlLoadError("no root element", source_path)

    counter = 1
    for elem in missing:
        while f"{GENERATED_ID_PREFIX}{counter}" in index:
            counter += 1
        elem.id = f"{GENERATED_ID_PREFIX}{counter}"
        index[elem.id] = elem
        counter += 1

    doc = Document(root[0], source_path, id_attribute)
    doc.assigned_ids = [e.id for e in missing]
    return doc


def _escape_text(s: str) -> str:
    # A raw CR would be folded to LF on reparse, so it must be a char ref.
    s = s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    return s.replace("\r", "&#xD;")


def _escape_attr(s: str) -> str:
    # Parsers normalize tab/LF/CR in attribute values to spaces; keep
    # them round-trippable with character references.
    s = _escape_text(s).replace('"', "&quot;")
    return s.replace("\t", "&#x9;").replace("\n", "&#xA;")


def serialize_xml(doc: Document, *, pretty: bool = False) -> bytes:
    """Serialize to canonical UTF-8 bytes.

    The id attribute comes first, remaining attributes keep stored
    order, and escaping is minimal: ``& < >`` in text plus ``"`` in
    attribute values, with whitespace that reparsing would normalize
    (CR in text; tab/LF/CR in attributes) as character references.
    With ``pretty`` off nothing is added or removed; with ``pretty`` on,
    indentation is introduced only inside elements that have no
    text-node children.
    """
    out: list[str] = []
    _write_element(out, doc.root, doc.id_attribute, 0, pretty)
    if pretty:
        out.append("\n")
    return "".join(out).encode("utf-8")


def _write_element(out: list[str], elem: ElementNode, id_attribute: str,
                   depth: int, pretty: bool) -> None:
    out.append(f"<{elem.tag} {id_attribute}=\"{_escape_attr(elem.id)}\"")
    for k, v in elem.attrs.items():
        out.append(f' {k}="{_escape_attr(v)}"')
    if not elem.children:
        out.append("/>")
        return
    out.append(">")
    indent = pretty and not any(isinstance(c, TextNode) for c in elem.children)
    for child in elem.children:
        if indent:
            out.append("\n" + "  " * (depth + 1))
        if isinstance(child, TextNode):
            out.append(_escape_text(child.content))
        else:
            _write_element(out, child, id_attribute, depth + 1, pretty)
    if indent:
        out.append("\n" + "  " * depth)
    out.append(f"</{elem.tag}>")


def canonical_children(elem: ElementNode) -> list[ElementNode | str]:
    """Children as serialization sees them: adjacent text merged, empty dropped."""
    merged: list[ElementNode | str] = []
    for child in elem.children:
        if isinstance(child, TextNode):
            if not child.content:
                continue
            if merged and isinstance(merged[-1], str):
                merged[-1] += child.content
            else:
                merged.append(child.content)
        else:
            merged.append(child)
    return merged


def tree_equal(a: ElementNode | Document, b: ElementNode | Document, *,
               canonical_text: bool = True,
               created_a: frozenset[str] | set[str] = frozenset(),
               created_b: frozenset[str] | set[str] = frozenset()) -> bool:
    """Structural equality: tags, ids, attribute maps, text, child order.

    With ``canonical_text`` the comparison sees text the way serialized
    XML does (adjacent text nodes merged, empty ones invisible); without
    it the exact text-node layout must match. ``created_a``/``created_b``
    name ids that did not exist in a common ancestor document: those may
    differ between the sides as long as the pairing stays a bijection;
    all other ids must agree exactly.
    """
    if isinstance(a, Document):
        a = a.root
    if isinstance(b, Document):
        b = b.root
    forward: dict[str, str] = {}
    reverse: dict[str, str] = {}

    def ids_match(x: str, y: str) -> bool:
        if x in created_a and y in created_b:
            if x in forward or y in reverse:
                return forward.get(x) == y and reverse.get(y) == x
            forward[x] = y
            reverse[y] = x
            return True
        return x == y and x not in created_a and y not in created_b

    def walk(x: ElementNode, y: ElementNode) -> bool:
        if x.tag != y.tag or not ids_match(x.id, y.id) or x.attrs != y.attrs:
            return False
        if canonical_text:
            xs, ys = canonical_children(x), canonical_children(y)
        else:
            xs = [c if isinstance(c, ElementNode) else c.content for c in x.children]
            ys = [c if isinstance(c, ElementNode) else c.content for c in y.children]
        if len(xs) != len(ys):
            return False
        for cx, cy in zip(xs, ys):
            if isinstance(cx, str) or isinstance(cy, str):
                if cx != cy:
                    return False
            elif not walk(cx, cy):
                return False
        return True

    return walk(a, b)


def copy_subtree(elem: ElementNode) -> ElementNode:
    """Deep copy with a detached root; ids are copied verbatim."""
    clone = ElementNode(elem.tag, elem.id, dict(elem.attrs), [], None)
    for child in elem.children:
        if isinstance(child, TextNode):
            clone.children.append(TextNode(child.content))
        else:
            sub = copy_subtree(child)
            sub.parent = clone
            clone.children.append(sub)
    return clone
