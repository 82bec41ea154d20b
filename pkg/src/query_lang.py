"""Query types, grounded queries and dataset records.

Query types use the Lisp-like grammar

    node := "(e)" | "(p," node ")" | "(i," node ("," node)+ ")"

Grounded queries extend it with `(e,<vertex text>)` and `(p,<Relation>,node)`.
Inside vertex texts the characters `\\ ( ) ,` are backslash-escaped.
"""
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Callable, FrozenSet, List, Optional, Sequence, Tuple, Union

import jsonschema

from src.errors import KGFormatError, QueryParseError, RecordSchemaError, UnknownRelationError
from src.kg_store import Edge, KnowledgeGraph, RelationType

RECORD_SCHEMA_PATH = Path(__file__).resolve().parent.parent / "ceqa_record_schema.json"
TARGET_VARIABLE = "V_?"
SPLITS = ("train", "valid", "test")
_ESCAPED = "\\(),"


@dataclass(frozen=True)
class TypeE:
    pass


@dataclass(frozen=True)
class TypeP:
    child: "QueryTypeNode"


@dataclass(frozen=True)
class TypeI:
    children: Tuple["QueryTypeNode", ...]


QueryTypeNode = Union[TypeE, TypeP, TypeI]


@dataclass(frozen=True)
class Anchor:
    vertex: int


@dataclass(frozen=True)
class Proj:
    rel: RelationType
    child: "GroundedNode"
    var: str = ""


@dataclass(frozen=True)
class Inter:
    children: Tuple["GroundedNode", ...]
    var: str = ""


GroundedNode = Union[Anchor, Proj, Inter]

# Variable-free query terms are plain graph edges.
InformationalAtomic = Edge


class ConstraintFamily(Enum):
    OCCURRENCE = "occurrence"
    TEMPORAL = "temporal"


@dataclass(frozen=True)
class QueryInstance:
    query: GroundedNode
    info_atomics: Tuple[InformationalAtomic, ...]
    answers: FrozenSet[int]
    contradictory_answers: FrozenSet[int]
    constraint_family: ConstraintFamily
    split: str

    def __post_init__(self):
        if self.answers & self.contradictory_answers:
            raise RecordSchemaError("answers", "overlaps contradictory_answers")
        if self.split not in SPLITS:
            raise RecordSchemaError("split", f"unknown split {self.split!r}")

    @property
    def query_type(self) -> QueryTypeNode:
        return erase(self.query)


class _Reader:

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def skip_space(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def peek(self) -> str:
        self.skip_space()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def expect(self, char: str) -> None:
        if self.peek() != char:
            found = self.text[self.pos] if self.pos < len(self.text) else "end of input"
            raise QueryParseError(f"expected {char!r}, found {found!r}", self.pos)
        self.pos += 1

    def head(self) -> Tuple[str, int]:
        self.skip_space()
        start = self.pos
        while self.pos < len(self.text) and self.text[self.pos].isalpha():
            self.pos += 1
        return self.text[start:self.pos], start

    def until(self, stops: str) -> str:
        chars = []
        while self.pos < len(self.text) and self.text[self.pos] not in stops:
            char = self.text[self.pos]
            if char == "\\":
                self.pos += 1
                if self.pos >= len(self.text):
                    raise QueryParseError("dangling escape", self.pos)
                char = self.text[self.pos]
            chars.append(char)
            self.pos += 1
        return "".join(chars)

    def finish(self) -> None:
        if self.peek():
            raise QueryParseError("trailing input", self.pos)


def _parse_children(reader: _Reader, parse_node: Callable, start: int) -> list:
    children = []
    while reader.peek() == ",":
        reader.pos += 1
        children.append(parse_node(reader))
    if len(children) < 2:
        raise QueryParseError("intersection arity < 2", start)
    reader.expect(")")
    return children


def _parse_type_node(reader: _Reader) -> QueryTypeNode:
    reader.expect("(")
    head, start = reader.head()
    if head == "e":
        reader.expect(")")
        return TypeE()
    if head == "p":
        reader.expect(",")
        child = _parse_type_node(reader)
        reader.expect(")")
        return TypeP(child)
    if head == "i":
        return TypeI(tuple(_parse_children(reader, _parse_type_node, start)))
    raise QueryParseError(f"unknown head token {head!r}", start)


def parse_query_type(s: str) -> QueryTypeNode:
    reader = _Reader(s)
    node = _parse_type_node(reader)
    reader.finish()
    return node


def serialize_query_type(t: QueryTypeNode) -> str:
    if isinstance(t, TypeE):
        return "(e)"
    if isinstance(t, TypeP):
        return f"(p,{serialize_query_type(t.child)})"
    return "(i," + ",".join(serialize_query_type(c) for c in t.children) + ")"


def stats(t: QueryTypeNode) -> Tuple[int, int]:
    """Return (number of anchors, max projections on a root-to-leaf path)."""
    if isinstance(t, TypeE):
        return 1, 0
    if isinstance(t, TypeP):
        anchors, depth = stats(t.child)
        return anchors, depth + 1
    child_stats = [stats(c) for c in t.children]
    return sum(a for a, _ in child_stats), max(d for _, d in child_stats)


def erase(q: GroundedNode) -> QueryTypeNode:
    if isinstance(q, Anchor):
        return TypeE()
    if isinstance(q, Proj):
        return TypeP(erase(q.child))
    return TypeI(tuple(erase(c) for c in q.children))


def label_variables(q: GroundedNode) -> GroundedNode:
    """Assign variable labels by post-order numbering; the root becomes V_?.

    An intersection and its direct operands denote one variable and share a label.
    """
    count = 0

    def visit(node: GroundedNode, cell: Optional[list], is_root: bool):
        nonlocal count
        if isinstance(node, Anchor):
            return lambda: node
        own = cell is None
        if own:
            cell = [None]
        if isinstance(node, Proj):
            build_child = visit(node.child, None, False)
            build = lambda: Proj(node.rel, build_child(), cell[0])
        else:
            builders = [visit(c, cell, False) for c in node.children]
            build = lambda: Inter(tuple(b() for b in builders), cell[0])
        if own:
            if is_root:
                cell[0] = TARGET_VARIABLE
            else:
                count += 1
                cell[0] = f"V_{count}"
        return build

    return visit(q, None, True)()


def variables(q: GroundedNode) -> List[str]:
    seen: List[str] = []

    def visit(node: GroundedNode) -> None:
        if isinstance(node, Anchor):
            return
        children = (node.child,) if isinstance(node, Proj) else node.children
        for child in children:
            visit(child)
        if node.var not in seen:
            seen.append(node.var)

    visit(q)
    return seen


def anchors(q: GroundedNode) -> List[int]:
    if isinstance(q, Anchor):
        return [q.vertex]
    if isinstance(q, Proj):
        return anchors(q.child)
    return [v for c in q.children for v in anchors(c)]


def count_nodes(q: GroundedNode) -> int:
    if isinstance(q, Anchor):
        return 1
    if isinstance(q, Proj):
        return 1 + count_nodes(q.child)
    return 1 + sum(count_nodes(c) for c in q.children)


def _escape(text: str) -> str:
    return "".join("\\" + c if c in _ESCAPED else c for c in text)


def serialize_grounded(q: GroundedNode, g: KnowledgeGraph) -> str:
    if isinstance(q, Anchor):
        return f"(e,{_escape(g.text(q.vertex))})"
    if isinstance(q, Proj):
        return f"(p,{q.rel.name},{serialize_grounded(q.child, g)})"
    return "(i," + ",".join(serialize_grounded(c, g) for c in q.children) + ")"


def _parse_grounded_node(reader: _Reader, g: KnowledgeGraph) -> GroundedNode:
    reader.expect("(")
    head, start = reader.head()
    if head == "e":
        reader.expect(",")
        text_start = reader.pos
        text = reader.until(")")
        reader.expect(")")
        try:
            return Anchor(g.vertex_id(text))
        except KGFormatError:
            raise QueryParseError(f"unknown vertex {text!r}", text_start) from None
    if head == "p":
        reader.expect(",")
        rel_start = reader.pos
        name = reader.until(",").strip()
        try:
            rel = RelationType.parse(name)
        except UnknownRelationError:
            raise QueryParseError(f"unknown relation {name}", rel_start) from None
        reader.expect(",")
        child = _parse_grounded_node(reader, g)
        reader.expect(")")
        return Proj(rel, child)
    if head == "i":
        children = _parse_children(reader, lambda r: _parse_grounded_node(r, g), start)
        return Inter(tuple(children))
    raise QueryParseError(f"unknown head token {head!r}", start)


def parse_grounded(s: str, g: KnowledgeGraph) -> GroundedNode:
    reader = _Reader(s)
    node = _parse_grounded_node(reader, g)
    reader.finish()
    return label_variables(node)


@lru_cache(maxsize=1)
def record_validator() -> jsonschema.Draft7Validator:
    with open(RECORD_SCHEMA_PATH, "r", encoding="utf-8") as f:
        schema = json.load(f)
    return jsonschema.Draft7Validator(schema)


def _schema_field(error: jsonschema.ValidationError) -> str:
    if error.validator == "required":
        return error.message.split("'")[1]
    if error.path:
        return str(error.path[0])
    return "record"


def validate_record(record: dict) -> None:
    errors = sorted(record_validator().iter_errors(record), key=lambda e: list(map(str, e.path)))
    if errors:
        raise RecordSchemaError(_schema_field(errors[0]), errors[0].message)


def instance_to_record(q: QueryInstance, g: KnowledgeGraph) -> dict:
    return {
        "type": serialize_query_type(q.query_type),
        "query": serialize_grounded(q.query, g),
        "info_atomics": [[g.text(a.head), a.rel.name, g.text(a.tail)] for a in q.info_atomics],
        "answers": [g.text(v) for v in sorted(q.answers)],
        "contradictory_answers": [g.text(v) for v in sorted(q.contradictory_answers)],
        "family": q.constraint_family.value,
        "split": q.split,
    }


def serialize_instance(q: QueryInstance, g: KnowledgeGraph) -> str:
    return json.dumps(instance_to_record(q, g), ensure_ascii=False)


def _vertex_set(texts: Sequence[str], g: KnowledgeGraph, name: str) -> FrozenSet[int]:
    try:
        return frozenset(g.vertex_id(t) for t in texts)
    except KGFormatError as e:
        raise RecordSchemaError(name, str(e)) from None


def record_to_instance(record: dict, g: KnowledgeGraph) -> QueryInstance:
    validate_record(record)
    try:
        query = parse_grounded(record["query"], g)
    except QueryParseError as e:
        raise RecordSchemaError("query", str(e)) from None
    if serialize_query_type(erase(query)) != record["type"]:
        raise RecordSchemaError("type", f"{record['type']} does not match the query shape")
    info = []
    for head, relation, tail in record["info_atomics"]:
        try:
            info.append(Edge(g.vertex_id(head), RelationType.parse(relation), g.vertex_id(tail)))
        except KGFormatError as e:
            raise RecordSchemaError("info_atomics", str(e)) from None
    return QueryInstance(
        query=query,
        info_atomics=tuple(info),
        answers=_vertex_set(record["answers"], g, "answers"),
        contradictory_answers=_vertex_set(record["contradictory_answers"], g, "contradictory_answers"),
        constraint_family=ConstraintFamily(record["family"]),
        split=record["split"],
    )


def parse_instance(line: str, g: KnowledgeGraph) -> QueryInstance:
    try:
        record = json.loads(line)
    except json.JSONDecodeError as e:
        raise RecordSchemaError("record", f"invalid JSON: {e}") from None
    if not isinstance(record, dict):
        raise RecordSchemaError("record", "expected a JSON object")
    return record_to_instance(record, g)
