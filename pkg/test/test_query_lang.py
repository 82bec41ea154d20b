import json
import re

import numpy as np
import pytest

from src.errors import QueryParseError, RecordSchemaError
from src.kg_store import Edge, Eventuality, KnowledgeGraph, RelationType
from src.query_lang import (
    TARGET_VARIABLE,
    Anchor,
    ConstraintFamily,
    Inter,
    Proj,
    QueryInstance,
    TypeE,
    TypeI,
    TypeP,
    anchors,
    erase,
    instance_to_record,
    parse_grounded,
    parse_instance,
    parse_query_type,
    serialize_grounded,
    serialize_instance,
    serialize_query_type,
    stats,
    variables,
)


def test_parse_2i():
    assert parse_query_type("(i,(p,(e)),(p,(e)))") == TypeI((TypeP(TypeE()), TypeP(TypeE())))


def test_parse_allows_whitespace_and_canonicalizes():
    t = parse_query_type(" ( i , (p,(e)) , (p, (e)) ) ")
    assert serialize_query_type(t) == "(i,(p,(e)),(p,(e)))"


@pytest.mark.parametrize("text, message", [
    ("(i,(p,(e)))", "intersection arity < 2"),
    ("(p,(e)", "expected ')'"),
    ("(x,(e))", "unknown head token"),
    ("(e))", "trailing input"),
])
def test_parse_errors(text, message):
    with pytest.raises(QueryParseError, match=re.escape(message)) as info:
        parse_query_type(text)
    assert info.value.offset >= 0


@pytest.mark.parametrize("text, expected", [
    ("(i,(p,(p,(e))),(p,(p,(e))))", (2, 2)),
    ("(p,(e))", (1, 1)),
    ("(e)", (1, 0)),
    ("(p,(i,(p,(e)),(p,(e)),(p,(e))))", (3, 2)),
])
def test_stats(text, expected):
    assert stats(parse_query_type(text)) == expected


def _random_type(rng, anchors_left, depth_left):
    choice = rng.integers(3)
    if choice == 1 and depth_left > 0:
        return TypeP(_random_type(rng, anchors_left, depth_left - 1))
    if choice == 2 and anchors_left >= 2:
        k = int(rng.integers(2, anchors_left + 1))
        share = [1] * k
        return TypeI(tuple(_random_type(rng, s, depth_left) for s in share))
    return TypeE()


def test_random_types_round_trip():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        t = _random_type(rng, 3, 2)
        assert parse_query_type(serialize_query_type(t)) == t
        n_anchors, depth = stats(t)
        assert n_anchors <= 3 and depth <= 2


def test_grounded_labels(restaurant_graph, restaurant_query, vid):
    assert restaurant_query.var == TARGET_VARIABLE
    inter = restaurant_query.child
    assert isinstance(inter, Inter)
    assert inter.var == "V_1"
    assert all(c.var == "V_1" for c in inter.children)
    assert variables(restaurant_query) == ["V_1", TARGET_VARIABLE]
    assert sorted(anchors(restaurant_query)) == sorted(
        [vid("PersonX complains"), vid("PersonX leaves the restaurant")])
    assert serialize_query_type(erase(restaurant_query)) == "(p,(i,(p,(e)),(p,(e))))"


def test_grounded_round_trip(restaurant_graph, restaurant_query):
    text = serialize_grounded(restaurant_query, restaurant_graph)
    assert text.startswith("(p,Reason,(i,(p,Succession,(e,PersonX complains))")
    assert parse_grounded(text, restaurant_graph) == restaurant_query


def test_grounded_escapes_special_characters():
    g = KnowledgeGraph([Eventuality(0, "a (b), c"), Eventuality(1, "d\\e")],
                       [Edge(0, RelationType.Reason, 1)])
    q = parse_grounded("(p,Reason,(e,a \\(b\\)\\, c))", g)
    assert q.child == Anchor(0)
    assert parse_grounded(serialize_grounded(q, g), g) == q


def test_grounded_unknown_vertex_and_relation(restaurant_graph):
    with pytest.raises(QueryParseError, match="unknown vertex"):
        parse_grounded("(p,Reason,(e,nobody))", restaurant_graph)
    with pytest.raises(QueryParseError, match="unknown relation Causes"):
        parse_grounded("(p,Causes,(e,Food is bad))", restaurant_graph)


def _fixture_instance(restaurant_graph, restaurant_query, restaurant_info, vid):
    return QueryInstance(
        query=restaurant_query,
        info_atomics=tuple(restaurant_info),
        answers=frozenset({vid("Staff is new"), vid("PersonY adds ketchup")}),
        contradictory_answers=frozenset({vid("PersonY adds vinegar"), vid("PersonY adds soy sauce")}),
        constraint_family=ConstraintFamily.OCCURRENCE,
        split="test",
    )


def test_instance_round_trip(restaurant_graph, restaurant_query, restaurant_info, vid):
    instance = _fixture_instance(restaurant_graph, restaurant_query, restaurant_info, vid)
    line = serialize_instance(instance, restaurant_graph)
    assert parse_instance(line, restaurant_graph) == instance
    assert json.loads(line)["info_atomics"][0] == ["PersonY adds ketchup", "ChosenAlternative", "PersonY adds vinegar"]


def test_three_info_atomics_keep_order(restaurant_graph, restaurant_query, vid):
    info = (
        Edge(vid("Food is bad"), RelationType.Precedence, vid("PersonY adds soy sauce")),
        Edge(vid("PersonY adds ketchup"), RelationType.ChosenAlternative, vid("PersonY adds vinegar")),
        Edge(vid("Service is bad"), RelationType.Conjunction, vid("Food is bad")),
    )
    instance = QueryInstance(restaurant_query, info, frozenset({vid("Staff is new")}),
                             frozenset({vid("PersonY adds vinegar")}), ConstraintFamily.TEMPORAL, "valid")
    assert parse_instance(serialize_instance(instance, restaurant_graph), restaurant_graph).info_atomics == info


def test_missing_answers_names_field(restaurant_graph, restaurant_query, restaurant_info, vid):
    record = instance_to_record(_fixture_instance(restaurant_graph, restaurant_query, restaurant_info, vid), restaurant_graph)
    del record["answers"]
    with pytest.raises(RecordSchemaError) as info:
        parse_instance(json.dumps(record), restaurant_graph)
    assert info.value.field == "answers"


def test_type_must_match_query(restaurant_graph, restaurant_query, restaurant_info, vid):
    record = instance_to_record(_fixture_instance(restaurant_graph, restaurant_query, restaurant_info, vid), restaurant_graph)
    record["type"] = "(p,(e))"
    with pytest.raises(RecordSchemaError) as info:
        parse_instance(json.dumps(record), restaurant_graph)
    assert info.value.field == "type"


def test_overlapping_answer_sets_rejected(restaurant_query, vid):
    a = vid("Staff is new")
    with pytest.raises(RecordSchemaError, match="answers"):
        QueryInstance(restaurant_query, (), frozenset({a}), frozenset({a}), ConstraintFamily.OCCURRENCE, "train")


def test_proj_nodes_compare_by_structure():
    left = Proj(RelationType.Reason, Anchor(1), "V_?")
    right = Proj(RelationType.Reason, Anchor(1), "V_?")
    assert left == right and hash(left) == hash(right)
