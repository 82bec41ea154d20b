import itertools
from dataclasses import dataclass
from typing import Dict, FrozenSet, Iterator, List, Sequence, Tuple

from src.errors import GroundingError
from src.kg_store import Edge, KnowledgeGraph
from src.query_lang import Anchor, GroundedNode, Inter, Proj, anchors, variables

DEFAULT_GROUNDING_CAP = 10_000

Grounding = Dict[str, int]


@dataclass(frozen=True)
class GroundingSet:
    groundings: Tuple[Grounding, ...]
    truncated: bool

    def __len__(self) -> int:
        return len(self.groundings)

    def __iter__(self) -> Iterator[Grounding]:
        return iter(self.groundings)


def answer_set(g: KnowledgeGraph, q: GroundedNode) -> FrozenSet[int]:
    return _answer_sets(g, q, {})[q]


def _answer_sets(g: KnowledgeGraph, q: GroundedNode,
                 memo: Dict[GroundedNode, FrozenSet[int]]) -> Dict[GroundedNode, FrozenSet[int]]:
    if q in memo:
        return memo
    if isinstance(q, Anchor):
        g.text(q.vertex)
        memo[q] = frozenset((q.vertex,))
    elif isinstance(q, Proj):
        sources = _answer_sets(g, q.child, memo)[q.child]
        memo[q] = frozenset(u for s in sources for u in g.successors(s, q.rel))
    else:
        child_sets = sorted((_answer_sets(g, c, memo)[c] for c in q.children), key=len)
        result = child_sets[0]
        for other in child_sets[1:]:
            if not result:
                break
            result = result & other
        memo[q] = result
    return memo


def _ground(g: KnowledgeGraph, node: GroundedNode, target: int, assignment: Grounding,
            memo: Dict[GroundedNode, FrozenSet[int]]) -> Iterator[Grounding]:
    if isinstance(node, Anchor):
        if node.vertex == target:
            yield assignment
        return
    bound = assignment.get(node.var)
    if bound is not None and bound != target:
        return
    assignment = {**assignment, node.var: target}
    if isinstance(node, Proj):
        child = node.child
        if isinstance(child, Anchor):
            if g.has_edge(child.vertex, node.rel, target):
                yield assignment
            return
        reachable = _answer_sets(g, child, memo)[child]
        for source in g.predecessors(target, node.rel):
            if source in reachable:
                yield from _ground(g, child, source, assignment, memo)
    else:
        yield from _ground_all(g, node.children, target, assignment, memo)


def _ground_all(g: KnowledgeGraph, children: Sequence[GroundedNode], target: int,
                assignment: Grounding, memo) -> Iterator[Grounding]:
    if not children:
        yield assignment
        return
    for partial in _ground(g, children[0], target, assignment, memo):
        yield from _ground_all(g, children[1:], target, partial, memo)


def enumerate_groundings(g: KnowledgeGraph, q: GroundedNode, answer: int,
                         cap: int = DEFAULT_GROUNDING_CAP) -> GroundingSet:
    """All variable assignments realizing `answer` at V_?, up to `cap`.

    `truncated` is set only when a grounding beyond the cap exists.
    """
    memo = _answer_sets(g, q, {})
    if answer not in memo[q]:
        raise GroundingError(f"vertex {answer} is not an answer of the query")
    return _collect(g, q, answer, cap, memo)


def answer_groundings(g: KnowledgeGraph, q: GroundedNode,
                      cap: int = DEFAULT_GROUNDING_CAP) -> Dict[int, GroundingSet]:
    """`enumerate_groundings` for every answer, sharing one bottom-up pass. Keys are sorted."""
    memo = _answer_sets(g, q, {})
    return {a: _collect(g, q, a, cap, memo) for a in sorted(memo[q])}


def _collect(g: KnowledgeGraph, q: GroundedNode, answer: int, cap: int,
             memo: Dict[GroundedNode, FrozenSet[int]]) -> GroundingSet:
    found: List[Grounding] = []
    seen = set()
    truncated = False
    for assignment in _ground(g, q, answer, {}, memo):
        key = tuple(sorted(assignment.items()))
        if key in seen:
            continue
        if len(found) >= cap:
            truncated = True
            break
        seen.add(key)
        found.append(assignment)
    return GroundingSet(tuple(found), truncated)


def chain_vertices(gs: GroundingSet, q: GroundedNode) -> FrozenSet[int]:
    if not gs.groundings:
        raise GroundingError("empty grounding set")
    vertices = set(anchors(q))
    for grounding in gs:
        vertices.update(grounding.values())
    return frozenset(vertices)


def computational_atomics(q: GroundedNode, grounding: Grounding) -> List[Edge]:
    """The graph edges a grounding realizes, one per projection node."""
    atomics: List[Edge] = []

    def value(node: GroundedNode) -> int:
        if isinstance(node, Anchor):
            return node.vertex
        try:
            return grounding[node.var]
        except KeyError:
            raise GroundingError(f"variable {node.var} is not covered by the grounding") from None

    def visit(node: GroundedNode) -> None:
        if isinstance(node, Proj):
            visit(node.child)
            atomics.append(Edge(value(node.child), node.rel, value(node)))
        elif isinstance(node, Inter):
            for child in node.children:
                visit(child)

    visit(q)
    return atomics


def brute_force_answers(g: KnowledgeGraph, q: GroundedNode) -> FrozenSet[int]:
    """Exhaustive evaluator: try every assignment of every variable."""
    labels = variables(q)
    answers = set()
    for values in itertools.product(range(g.num_vertices), repeat=len(labels)):
        grounding = dict(zip(labels, values))
        if all(g.has_edge(e.head, e.rel, e.tail) for e in computational_atomics(q, grounding)):
            answers.add(grounding[q.var] if not isinstance(q, Anchor) else q.vertex)
    if isinstance(q, Anchor):
        return frozenset((q.vertex,))
    return frozenset(answers)
