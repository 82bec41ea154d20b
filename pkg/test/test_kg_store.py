import pytest

from src.errors import KGFormatError, SplitError, UnknownRelationError, VertexRangeError
from src.kg_store import (
    NUM_RELATIONS,
    Edge,
    RelationType,
    generate_synthetic_graph,
    load_graph,
    load_split,
    serialize_graph,
    split_edges,
    split_sizes,
    write_split,
)


def test_fixture_graph_shape(restaurant_graph):
    assert restaurant_graph.num_vertices == 8
    assert restaurant_graph.num_edges == 8


def test_relation_names_and_count():
    assert NUM_RELATIONS == 14
    assert RelationType.parse("ChosenAlternative") is RelationType.ChosenAlternative
    assert [r.value for r in RelationType] == list(range(14))


def test_load_rejects_unknown_relation(tmp_path):
    path = tmp_path / "g.tsv"
    path.write_text("a\tPrecedence\tb\nb\tCauses\tc\n", encoding="utf-8")
    with pytest.raises(UnknownRelationError) as info:
        load_graph(path)
    assert info.value.line_no == 2
    assert "unknown relation Causes" in str(info.value)


def test_load_rejects_wrong_field_count(tmp_path):
    path = tmp_path / "g.tsv"
    path.write_text("a\tPrecedence\n", encoding="utf-8")
    with pytest.raises(KGFormatError, match="line 1"):
        load_graph(path)


def test_load_skips_comments_and_dedups(tmp_path):
    path = tmp_path / "g.tsv"
    path.write_text("# header\n\na\tReason\tb\na\tReason\tb\nb\tResult\tb\n", encoding="utf-8")
    g = load_graph(path)
    assert g.num_edges == 2
    assert g.num_vertices == 2
    assert any(e.is_self_loop for e in g.edges)


def test_indexes(restaurant_graph, vid):
    food = vid("Food is bad")
    tails = restaurant_graph.successors(food, RelationType.Reason)
    assert {restaurant_graph.text(t) for t in tails} == {
        "PersonY adds ketchup", "PersonY adds soy sauce", "PersonY adds vinegar"}
    assert list(tails) == sorted(tails)
    heads = restaurant_graph.predecessors(food, RelationType.Succession)
    assert {restaurant_graph.text(h) for h in heads} == {"PersonX complains", "PersonX leaves the restaurant"}
    assert restaurant_graph.in_edges(food) == tuple(sorted(
        (h, RelationType.Succession) for h in heads))


def test_vertex_range(restaurant_graph):
    with pytest.raises(VertexRangeError):
        restaurant_graph.successors(99, RelationType.Reason)


def test_serialize_round_trip(tmp_path, restaurant_graph):
    path = tmp_path / "copy.tsv"
    path.write_text(serialize_graph(restaurant_graph), encoding="utf-8")
    again = load_graph(path)
    assert again.vocabulary == restaurant_graph.vocabulary
    assert again.edges == restaurant_graph.edges


def test_split_sizes_rounding():
    assert split_sizes(141252, (0.8, 0.1, 0.1)) == (113002, 14125, 14125)
    assert sum(split_sizes(10, (0.8, 0.1, 0.1))) == 10
    with pytest.raises(SplitError):
        split_sizes(10, (0.5, 0.5, 0.5))
    with pytest.raises(SplitError):
        split_sizes(10, (1.0, 0.0, 0.0))


def test_split_is_cumulative_and_deterministic():
    g = generate_synthetic_graph(40, 200, seed=3)
    split = split_edges(g, (0.8, 0.1, 0.1), seed=11)
    train, valid, test = (set(split.graph(s).edges) for s in ("train", "valid", "test"))
    assert train <= valid <= test
    assert test == set(g.edges)
    assert (len(train), len(valid) - len(train), len(test) - len(valid)) == split_sizes(200, (0.8, 0.1, 0.1))
    again = split_edges(g, (0.8, 0.1, 0.1), seed=11)
    assert again.train.edges == split.train.edges
    assert split.train.vocabulary == g.vocabulary


def test_split_needs_three_edges(restaurant_graph):
    small = restaurant_graph.with_edges(restaurant_graph.edges[:2])
    with pytest.raises(SplitError):
        split_edges(small, (0.8, 0.1, 0.1), seed=0)


def test_write_and_load_split(tmp_path):
    g = generate_synthetic_graph(30, 90, seed=1)
    split = split_edges(g, (0.8, 0.1, 0.1), seed=2)
    write_split(split, tmp_path)
    loaded = load_split(tmp_path)
    assert loaded.test.vocabulary == g.vocabulary
    assert set(loaded.train.edges) == set(split.train.edges)
    assert loaded.smaller("test") is loaded.valid
    assert loaded.smaller("train") is None


def test_synthetic_graph_has_no_self_loops():
    g = generate_synthetic_graph(20, 150, seed=5)
    assert g.num_edges == 150
    assert not any(e.is_self_loop for e in g.edges)
    assert g.edges == generate_synthetic_graph(20, 150, seed=5).edges


def test_edges_are_ordered():
    assert Edge(0, RelationType.Reason, 1) < Edge(0, RelationType.Result, 0)
