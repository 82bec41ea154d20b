"""Eventuality knowledge graphs: loading, indexing and cumulative edge splits."""
import math
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from src.errors import KGFormatError, SplitError, UnknownRelationError, VertexRangeError
from src.utils import get_logger
from utils.parser import normalize_text, parse_kg_line

logger = get_logger("kg_store")


class RelationType(IntEnum):
    Precedence = 0
    Succession = 1
    Synchronous = 2
    Reason = 3
    Result = 4
    Condition = 5
    Concession = 6
    Contrast = 7
    Conjunction = 8
    Instantiation = 9
    Restatement = 10
    Alternative = 11
    ChosenAlternative = 12
    Exception = 13

    @classmethod
    def parse(cls, name: str, line_no: Optional[int] = None) -> "RelationType":
        try:
            return cls[name]
        except KeyError:
            raise UnknownRelationError(name, line_no) from None


NUM_RELATIONS = len(RelationType)


@dataclass(frozen=True)
class Eventuality:
    id: int
    text: str


@dataclass(frozen=True, order=True)
class Edge:
    head: int
    rel: RelationType
    tail: int

    @property
    def is_self_loop(self) -> bool:
        return self.head == self.tail


class KnowledgeGraph:
    """Immutable vertex/edge store with forward, backward and incoming-edge indexes."""

    def __init__(self, vertices: Sequence[Eventuality], edges: Iterable[Edge]):
        self._vertices = tuple(vertices)
        for i, vertex in enumerate(self._vertices):
            if vertex.id != i:
                raise KGFormatError(f"vertex ids must be dense, found {vertex.id} at position {i}")
        self._ids = {vertex.text: vertex.id for vertex in self._vertices}
        if len(self._ids) != len(self._vertices):
            raise KGFormatError("vertex texts must be unique")

        unique: Dict[Edge, None] = {}
        for edge in edges:
            self._check_vertex(edge.head)
            self._check_vertex(edge.tail)
            unique.setdefault(edge, None)
        self._edges = tuple(unique)

        fwd: Dict[Tuple[int, RelationType], List[int]] = {}
        bwd: Dict[Tuple[int, RelationType], List[int]] = {}
        incoming: Dict[int, List[Tuple[int, RelationType]]] = {}
        outgoing: Dict[int, List[Tuple[RelationType, int]]] = {}
        for edge in self._edges:
            fwd.setdefault((edge.head, edge.rel), []).append(edge.tail)
            bwd.setdefault((edge.tail, edge.rel), []).append(edge.head)
            incoming.setdefault(edge.tail, []).append((edge.head, edge.rel))
            outgoing.setdefault(edge.head, []).append((edge.rel, edge.tail))
        self._fwd = {key: tuple(sorted(ids)) for key, ids in fwd.items()}
        self._bwd = {key: tuple(sorted(ids)) for key, ids in bwd.items()}
        self._in = {key: tuple(sorted(pairs)) for key, pairs in incoming.items()}
        self._out = {key: tuple(sorted(pairs)) for key, pairs in outgoing.items()}

    @property
    def vertices(self) -> Tuple[Eventuality, ...]:
        return self._vertices

    @property
    def edges(self) -> Tuple[Edge, ...]:
        return self._edges

    @property
    def fwd_index(self) -> Mapping[Tuple[int, RelationType], Tuple[int, ...]]:
        return MappingProxyType(self._fwd)

    @property
    def num_vertices(self) -> int:
        return len(self._vertices)

    @property
    def num_edges(self) -> int:
        return len(self._edges)

    @property
    def vocabulary(self) -> Tuple[str, ...]:
        return tuple(vertex.text for vertex in self._vertices)

    def text(self, v: int) -> str:
        self._check_vertex(v)
        return self._vertices[v].text

    def vertex_id(self, text: str) -> int:
        try:
            return self._ids[normalize_text(text)]
        except KeyError:
            raise KGFormatError(f"unknown vertex {text!r}") from None

    def successors(self, v: int, r: RelationType) -> Tuple[int, ...]:
        self._check_vertex(v)
        return self._fwd.get((v, r), ())

    def predecessors(self, v: int, r: RelationType) -> Tuple[int, ...]:
        self._check_vertex(v)
        return self._bwd.get((v, r), ())

    def in_edges(self, v: int) -> Tuple[Tuple[int, RelationType], ...]:
        self._check_vertex(v)
        return self._in.get(v, ())

    def out_edges(self, v: int) -> Tuple[Tuple[RelationType, int], ...]:
        self._check_vertex(v)
        return self._out.get(v, ())

    def has_edge(self, head: int, rel: RelationType, tail: int) -> bool:
        return tail in self._fwd.get((head, rel), ())

    def with_edges(self, edges: Iterable[Edge]) -> "KnowledgeGraph":
        return KnowledgeGraph(self._vertices, edges)

    def _check_vertex(self, v: int) -> None:
        if not 0 <= v < len(self._vertices):
            raise VertexRangeError(f"vertex id {v} out of range for {len(self._vertices)} vertices")

    def __repr__(self) -> str:
        return f"KnowledgeGraph(|V|={self.num_vertices}, |E|={self.num_edges})"


@dataclass(frozen=True)
class GraphSplit:
    train: KnowledgeGraph
    valid: KnowledgeGraph
    test: KnowledgeGraph

    def graph(self, split: str) -> KnowledgeGraph:
        if split not in ("train", "valid", "test"):
            raise SplitError(f"unknown split {split!r}")
        return getattr(self, split)

    def smaller(self, split: str) -> Optional[KnowledgeGraph]:
        return {"train": None, "valid": self.train, "test": self.valid}[split]


def load_graph(path: Path, vocabulary: Optional[Sequence[str]] = None) -> KnowledgeGraph:
    """Read a `head<TAB>relation<TAB>tail` file.

    Vertex ids follow first occurrence unless a vocabulary fixes them.
    """
    texts: List[str] = list(vocabulary) if vocabulary is not None else []
    ids = {text: i for i, text in enumerate(texts)}
    edges = []

    def intern(text: str, line_no: int) -> int:
        if text not in ids:
            if vocabulary is not None:
                raise KGFormatError(f"vertex {text!r} not in vocabulary", line_no)
            ids[text] = len(texts)
            texts.append(text)
        return ids[text]

    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            fields = parse_kg_line(line, line_no)
            if fields is None:
                continue
            head, relation, tail = fields
            rel = RelationType.parse(relation, line_no)
            edges.append(Edge(intern(head, line_no), rel, intern(tail, line_no)))

    graph = KnowledgeGraph([Eventuality(i, text) for i, text in enumerate(texts)], edges)
    loops = sum(1 for edge in graph.edges if edge.is_self_loop)
    if loops:
        logger.warning("%s: %d self-loop edge(s) kept", path, loops)
    logger.debug("loaded %s from %s", graph, path)
    return graph


def serialize_graph(g: KnowledgeGraph) -> str:
    return "".join(f"{g.text(e.head)}\t{e.rel.name}\t{g.text(e.tail)}\n" for e in g.edges)


def write_graph(g: KnowledgeGraph, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(serialize_graph(g))


def write_vocabulary(g: KnowledgeGraph, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for text in g.vocabulary:
            f.write(text + "\n")


def read_vocabulary(path: Path) -> List[str]:
    with open(path, "r", encoding="utf-8") as f:
        return [line.rstrip("\n") for line in f if line.strip()]


def split_sizes(n: int, ratios: Sequence[float]) -> Tuple[int, int, int]:
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise SplitError(f"ratios must be three positive numbers, got {tuple(ratios)}")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise SplitError(f"ratios must sum to 1, got {sum(ratios)!r}")
    n_train = math.floor(ratios[0] * n + 0.5)
    n_seen = math.floor((ratios[0] + ratios[1]) * n + 0.5)
    return n_train, n_seen - n_train, n - n_seen


def split_edges(g: KnowledgeGraph, ratios: Sequence[float], seed: int) -> GraphSplit:
    """Shuffle edges and build cumulative train/valid/test graphs over one vertex set."""
    if g.num_edges < 3:
        raise SplitError(f"need at least 3 edges to split, graph has {g.num_edges}")
    n_train, n_valid, n_test = split_sizes(g.num_edges, ratios)
    order = np.random.default_rng(seed).permutation(g.num_edges)
    shuffled = [g.edges[i] for i in order]
    split = GraphSplit(
        train=g.with_edges(shuffled[:n_train]),
        valid=g.with_edges(shuffled[:n_train + n_valid]),
        test=g.with_edges(shuffled),
    )
    logger.info("split %d edges into %d/%d/%d", g.num_edges, n_train, n_valid, n_test)
    return split


def generate_synthetic_graph(num_vertices: int, num_edges: int, seed: int) -> KnowledgeGraph:
    """Uniform random EVKG over all 14 relations, without self-loops."""
    capacity = num_vertices * (num_vertices - 1) * NUM_RELATIONS
    if num_edges > capacity:
        raise KGFormatError(f"cannot place {num_edges} distinct edges on {num_vertices} vertices")
    rng = np.random.default_rng(seed)
    vertices = [Eventuality(i, f"event {i}") for i in range(num_vertices)]
    edges: Dict[Edge, None] = {}
    while len(edges) < num_edges:
        head, tail = rng.integers(0, num_vertices, size=2)
        if head == tail:
            continue
        rel = RelationType(int(rng.integers(0, NUM_RELATIONS)))
        edges.setdefault(Edge(int(head), rel, int(tail)), None)
    return KnowledgeGraph(vertices, edges)


def write_split(split: GraphSplit, out_dir: Path) -> List[Path]:
    """Write `vertices.txt` and the three cumulative `graph_<split>.tsv` files."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    vocabulary_path = out_dir / "vertices.txt"
    write_vocabulary(split.test, vocabulary_path)
    paths = [vocabulary_path]
    for name in ("train", "valid", "test"):
        path = out_dir / f"graph_{name}.tsv"
        write_graph(split.graph(name), path)
        paths.append(path)
    return paths


def load_split(data_dir: Path) -> GraphSplit:
    data_dir = Path(data_dir)
    vocabulary = read_vocabulary(data_dir / "vertices.txt")
    return GraphSplit(*(load_graph(data_dir / f"graph_{name}.tsv", vocabulary)
                        for name in ("train", "valid", "test")))
