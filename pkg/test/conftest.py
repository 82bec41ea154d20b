import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

from src.kg_store import Edge, Eventuality, KnowledgeGraph, RelationType, load_graph  # noqa: E402
from src.query_lang import parse_grounded  # noqa: E402
from src.utils import read_json_file  # noqa: E402

FIXTURES = ROOT / "fixtures"


@pytest.fixture
def restaurant_graph() -> KnowledgeGraph:
    return load_graph(FIXTURES / "figure_example.tsv")


@pytest.fixture
def restaurant_info(restaurant_graph):
    return load_graph(FIXTURES / "figure_example_info.tsv", vocabulary=restaurant_graph.vocabulary).edges


@pytest.fixture
def restaurant_query(restaurant_graph):
    return parse_grounded(read_json_file(FIXTURES / "figure_example_query.json")["query"], restaurant_graph)


@pytest.fixture
def vid(restaurant_graph):
    return restaurant_graph.vertex_id


@pytest.fixture
def make_graph():
    """Small graphs from (head, relation value, tail) triples over vertices v0..vN."""
    def build(num_vertices, triples) -> KnowledgeGraph:
        vertices = [Eventuality(i, f"v{i}") for i in range(num_vertices)]
        return KnowledgeGraph(vertices, [Edge(h, RelationType(r), t) for h, r, t in triples])
    return build
