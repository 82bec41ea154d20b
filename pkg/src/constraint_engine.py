"""Implicit occurrence and temporal constraints of discourse relations, and their solvers.

Occurrence constraints are propositional formulas over eta(v), "eventuality v occurs";
they are decided by DPLL over a Tseitin CNF. Temporal constraints are strict or
equal orderings of timestamps tau(v); they are decided by merging equal events
with union-find and topologically sorting the remaining strict order.
"""
import itertools
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

from src.errors import ConstraintLimitError
from src.kg_store import Edge, KnowledgeGraph, RelationType
from src.query_lang import GroundedNode, InformationalAtomic
from src.symbolic_exec import (
    DEFAULT_GROUNDING_CAP,
    Grounding,
    GroundingSet,
    computational_atomics,
    enumerate_groundings,
)
from src.utils import get_logger

logger = get_logger("constraint_engine")

DEFAULT_VARIABLE_LIMIT = 64
ORACLE_VARIABLE_LIMIT = 20
ORACLE_EVENT_LIMIT = 6


@dataclass(frozen=True)
class Var:
    vertex: int


@dataclass(frozen=True)
class Not:
    child: "Formula"


@dataclass(frozen=True)
class And:
    children: Tuple["Formula", ...]


@dataclass(frozen=True)
class Or:
    children: Tuple["Formula", ...]


@dataclass(frozen=True)
class Implies:
    premise: "Formula"
    conclusion: "Formula"


@dataclass(frozen=True)
class Iff:
    left: "Formula"
    right: "Formula"


@dataclass(frozen=True)
class TrueF:
    pass


Formula = Union[Var, Not, And, Or, Implies, Iff, TrueF]
_FORMULA_TYPES = (Var, Not, And, Or, Implies, Iff, TrueF)


@dataclass(frozen=True)
class Before:
    a: int
    b: int


@dataclass(frozen=True)
class Same:
    a: int
    b: int

    def __post_init__(self):
        if self.a > self.b:
            first, second = self.b, self.a
            object.__setattr__(self, "a", first)
            object.__setattr__(self, "b", second)


TemporalConstraint = Union[Before, Same]


def after(a: int, b: int) -> Before:
    """tau(a) after tau(b), stored as Before(b, a)."""
    return Before(b, a)


@dataclass(frozen=True)
class ConstraintSet:
    occ: Tuple[Formula, ...]
    temp: Tuple[TemporalConstraint, ...]


class VerdictStatus(Enum):
    VALID = "Valid"
    OCCURRENCE_CONTRADICTION = "OccurrenceContradiction"
    TEMPORAL_CONTRADICTION = "TemporalContradiction"


@dataclass(frozen=True)
class Verdict:
    status: VerdictStatus
    witness: Optional[Grounding] = None
    possibly_incomplete: bool = False
    groundings_checked: int = 0

    @property
    def is_valid(self) -> bool:
        return self.status is VerdictStatus.VALID


def evaluate(f: Formula, assignment: Mapping[int, bool]) -> bool:
    if isinstance(f, Var):
        return assignment[f.vertex]
    if isinstance(f, Not):
        return not evaluate(f.child, assignment)
    if isinstance(f, And):
        return all(evaluate(c, assignment) for c in f.children)
    if isinstance(f, Or):
        return any(evaluate(c, assignment) for c in f.children)
    if isinstance(f, Implies):
        return not evaluate(f.premise, assignment) or evaluate(f.conclusion, assignment)
    if isinstance(f, Iff):
        return evaluate(f.left, assignment) == evaluate(f.right, assignment)
    return True


def _children(f: Formula) -> Tuple[Formula, ...]:
    if isinstance(f, Not):
        return (f.child,)
    if isinstance(f, (And, Or)):
        return f.children
    if isinstance(f, Implies):
        return f.premise, f.conclusion
    if isinstance(f, Iff):
        return f.left, f.right
    return ()


def formula_vars(f: Union[Formula, Sequence[Formula]]) -> List[int]:
    """Distinct eventuality ids of a formula or conjunction, in first-seen order."""
    seen: Dict[int, None] = {}
    stack = list(reversed(_as_conjunction(f)))
    while stack:
        node = stack.pop()
        if isinstance(node, Var):
            seen.setdefault(node.vertex, None)
        stack.extend(reversed(_children(node)))
    return list(seen)


def _as_conjunction(f: Union[Formula, Sequence[Formula]]) -> Tuple[Formula, ...]:
    if isinstance(f, _FORMULA_TYPES):
        return (f,)
    return tuple(f)


_BOTH_OCCUR = frozenset({
    RelationType.Precedence, RelationType.Succession, RelationType.Synchronous,
    RelationType.Concession, RelationType.Contrast, RelationType.Conjunction,
    RelationType.Instantiation,
})


def derive(atomic: Edge) -> Tuple[Formula, Tuple[TemporalConstraint, ...]]:
    """Occurrence formula and temporal constraints implied by one grounded atomic."""
    v1, v2 = Var(atomic.head), Var(atomic.tail)
    rel = atomic.rel
    if rel in _BOTH_OCCUR:
        occ: Formula = And((v1, v2))
    elif rel is RelationType.Reason:
        occ = And((v1, v2, Implies(v2, v1)))
    elif rel is RelationType.Result:
        occ = And((v1, v2, Implies(v1, v2)))
    elif rel is RelationType.Condition:
        occ = Implies(v1, v2)
    elif rel is RelationType.Restatement:
        occ = Iff(v1, v2)
    elif rel is RelationType.Alternative:
        occ = Or((v1, v2))
    elif rel is RelationType.ChosenAlternative:
        occ = And((v1, Not(v2)))
    else:
        occ = And((Not(v1), v2, Implies(Not(v2), v1)))

    head, tail = atomic.head, atomic.tail
    if rel in (RelationType.Precedence, RelationType.Result):
        temp: Tuple[TemporalConstraint, ...] = (Before(head, tail),)
    elif rel in (RelationType.Succession, RelationType.Reason, RelationType.Condition):
        temp = (after(head, tail),)
    elif rel is RelationType.Synchronous:
        temp = (Same(head, tail),)
    else:
        temp = ()
    return occ, temp


def derive_for_grounding(q: GroundedNode, info: Sequence[InformationalAtomic],
                         grounding: Grounding) -> ConstraintSet:
    occ: List[Formula] = []
    temp: List[TemporalConstraint] = []
    for atomic in [*computational_atomics(q, grounding), *info]:
        f, ts = derive(atomic)
        occ.append(f)
        temp.extend(ts)
    return ConstraintSet(tuple(occ), tuple(temp))


class _Tseitin:

    def __init__(self):
        self.ids: Dict[int, int] = {}
        self.clauses: List[List[int]] = []
        self.next_id = 1

    def fresh(self) -> int:
        lit = self.next_id
        self.next_id += 1
        return lit

    def literal(self, f: Formula) -> int:
        if isinstance(f, Var):
            if f.vertex not in self.ids:
                self.ids[f.vertex] = self.fresh()
            return self.ids[f.vertex]
        if isinstance(f, Not):
            return -self.literal(f.child)
        if isinstance(f, TrueF):
            lit = self.fresh()
            self.clauses.append([lit])
            return lit
        if isinstance(f, Implies):
            return self._or([-self.literal(f.premise), self.literal(f.conclusion)])
        if isinstance(f, Or):
            return self._or([self.literal(c) for c in f.children])
        if isinstance(f, And):
            lits = [self.literal(c) for c in f.children]
            out = self.fresh()
            for lit in lits:
                self.clauses.append([-out, lit])
            self.clauses.append([out] + [-lit for lit in lits])
            return out
        left, right = self.literal(f.left), self.literal(f.right)
        out = self.fresh()
        self.clauses.extend([[-out, -left, right], [-out, left, -right],
                             [out, left, right], [out, -left, -right]])
        return out

    def _or(self, lits: List[int]) -> int:
        out = self.fresh()
        self.clauses.append([-out] + lits)
        for lit in lits:
            self.clauses.append([out, -lit])
        return out

    def assert_true(self, f: Formula) -> None:
        if isinstance(f, And):
            for child in f.children:
                self.assert_true(child)
        elif not isinstance(f, TrueF):
            self.clauses.append([self.literal(f)])


def to_cnf(formulas: Sequence[Formula]) -> Tuple[List[List[int]], Dict[int, int]]:
    """Clauses over integer literals and the eventuality-id to variable map."""
    encoder = _Tseitin()
    # user variables get the lowest numbers so branching tries them first
    for vertex in formula_vars(formulas):
        encoder.literal(Var(vertex))
    for f in formulas:
        encoder.assert_true(f)
    return encoder.clauses, encoder.ids


def _force(clauses: List[List[int]], lit: int) -> Optional[List[List[int]]]:
    reduced = []
    for clause in clauses:
        if lit in clause:
            continue
        rest = [l for l in clause if l != -lit]
        if not rest:
            return None
        reduced.append(rest)
    return reduced


def _dpll(clauses: List[List[int]], model: Dict[int, bool]) -> Optional[Dict[int, bool]]:
    while True:
        unit = next((clause[0] for clause in clauses if len(clause) == 1), None)
        if unit is None:
            break
        model = {**model, abs(unit): unit > 0}
        clauses = _force(clauses, unit)
        if clauses is None:
            return None
    if not clauses:
        return model
    var = min(abs(l) for clause in clauses for l in clause)
    for lit in (var, -var):
        reduced = _force(clauses, lit)
        if reduced is None:
            continue
        result = _dpll(reduced, {**model, var: lit > 0})
        if result is not None:
            return result
    return None


def solve_occurrence(f: Union[Formula, Sequence[Formula]],
                     limit: int = DEFAULT_VARIABLE_LIMIT) -> Optional[Dict[int, bool]]:
    """A satisfying eta-assignment of the conjunction, or None when unsatisfiable."""
    formulas = _as_conjunction(f)
    user_vars = formula_vars(formulas)
    if len(user_vars) > limit:
        raise ConstraintLimitError(f"{len(user_vars)} occurrence variables exceed the limit of {limit}")
    clauses, ids = to_cnf(formulas)
    model = _dpll(clauses, {})
    if model is None:
        return None
    return {vertex: model.get(lit, False) for vertex, lit in ids.items()}


def sat_occurrence(f: Union[Formula, Sequence[Formula]], limit: int = DEFAULT_VARIABLE_LIMIT) -> bool:
    return solve_occurrence(f, limit) is not None


class _UnionFind:

    def __init__(self):
        self.parent: Dict[int, int] = {}

    def find(self, x: int) -> int:
        self.parent.setdefault(x, x)
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[max(rx, ry)] = min(rx, ry)


def temporal_order(ts: Sequence[TemporalConstraint]) -> Optional[List[Tuple[int, ...]]]:
    """Classes of simultaneous events in a feasible strict order, or None if infeasible."""
    uf = _UnionFind()
    for c in ts:
        uf.find(c.a)
        uf.find(c.b)
        if isinstance(c, Same):
            uf.union(c.a, c.b)

    successors: Dict[int, set] = defaultdict(set)
    indegree: Dict[int, int] = {uf.find(x): 0 for x in list(uf.parent)}
    for c in ts:
        if not isinstance(c, Before):
            continue
        ra, rb = uf.find(c.a), uf.find(c.b)
        if ra == rb:
            return None
        if rb not in successors[ra]:
            successors[ra].add(rb)
            indegree[rb] += 1

    members: Dict[int, List[int]] = defaultdict(list)
    for x in sorted(uf.parent):
        members[uf.find(x)].append(x)

    ready = sorted(r for r, d in indegree.items() if d == 0)
    order: List[Tuple[int, ...]] = []
    while ready:
        root = ready.pop(0)
        order.append(tuple(members[root]))
        for nxt in sorted(successors[root]):
            indegree[nxt] -= 1
            if indegree[nxt] == 0:
                ready.append(nxt)
        ready.sort()
    if len(order) != len(indegree):
        return None
    return order


def feasible_temporal(ts: Sequence[TemporalConstraint]) -> bool:
    return temporal_order(ts) is not None


def oracle_sat(f: Union[Formula, Sequence[Formula]]) -> bool:
    """Truth-table check used to cross-examine the DPLL solver."""
    formulas = _as_conjunction(f)
    names = formula_vars(formulas)
    if len(names) > ORACLE_VARIABLE_LIMIT:
        raise ConstraintLimitError(f"oracle handles at most {ORACLE_VARIABLE_LIMIT} variables, got {len(names)}")
    for values in itertools.product((False, True), repeat=len(names)):
        assignment = dict(zip(names, values))
        if all(evaluate(g, assignment) for g in formulas):
            return True
    return False


def oracle_temporal(ts: Sequence[TemporalConstraint]) -> bool:
    """Try every weak ordering of the mentioned events."""
    events = sorted({x for c in ts for x in (c.a, c.b)})
    if len(events) > ORACLE_EVENT_LIMIT:
        raise ConstraintLimitError(f"oracle handles at most {ORACLE_EVENT_LIMIT} events, got {len(events)}")
    for ranks in itertools.product(range(len(events)), repeat=len(events)):
        tau = dict(zip(events, ranks))
        if all(tau[c.a] < tau[c.b] if isinstance(c, Before) else tau[c.a] == tau[c.b] for c in ts):
            return True
    return False


def check_answer(kg: KnowledgeGraph, q: GroundedNode, info: Sequence[InformationalAtomic], answer: int,
                 cap: int = DEFAULT_GROUNDING_CAP, limit: int = DEFAULT_VARIABLE_LIMIT,
                 groundings: Optional[GroundingSet] = None) -> Verdict:
    """Valid when some grounding of the answer passes both solvers.

    Otherwise the verdict names the family that failed every grounding (occurrence
    first), or the family that failed more groundings when neither failed them all.
    `groundings`, when given, must be `enumerate_groundings(kg, q, answer, cap)`.
    """
    if groundings is None:
        groundings = enumerate_groundings(kg, q, answer, cap)
    if groundings.truncated:
        logger.warning("grounding cap %d reached for answer %s", cap, kg.text(answer))
    occ_failures = temp_failures = 0
    for grounding in groundings:
        constraints = derive_for_grounding(q, info, grounding)
        occ_ok = sat_occurrence(constraints.occ, limit)
        temp_ok = feasible_temporal(constraints.temp)
        if occ_ok and temp_ok:
            return Verdict(VerdictStatus.VALID, grounding, groundings.truncated, len(groundings))
        occ_failures += not occ_ok
        temp_failures += not temp_ok

    total = len(groundings)
    if occ_failures == total:
        status = VerdictStatus.OCCURRENCE_CONTRADICTION
    elif temp_failures == total:
        status = VerdictStatus.TEMPORAL_CONTRADICTION
    elif occ_failures >= temp_failures:
        status = VerdictStatus.OCCURRENCE_CONTRADICTION
    else:
        status = VerdictStatus.TEMPORAL_CONTRADICTION
    return Verdict(status, None, groundings.truncated, total)


def _name(vertex: int, names: Optional[Mapping[int, str]]) -> str:
    return names[vertex] if names is not None else str(vertex)


def render_formula(f: Formula, names: Optional[Mapping[int, str]] = None) -> str:
    def wrap(child: Formula) -> str:
        text = render_formula(child, names)
        return f"({text})" if isinstance(child, (And, Or, Implies, Iff)) else text

    if isinstance(f, Var):
        return f"eta({_name(f.vertex, names)})"
    if isinstance(f, Not):
        return "~" + wrap(f.child)
    if isinstance(f, And):
        return " & ".join(wrap(c) for c in f.children)
    if isinstance(f, Or):
        return " | ".join(wrap(c) for c in f.children)
    if isinstance(f, Implies):
        return f"{wrap(f.premise)} -> {wrap(f.conclusion)}"
    if isinstance(f, Iff):
        return f"{wrap(f.left)} <-> {wrap(f.right)}"
    return "true"


def render_temporal(ts: Sequence[TemporalConstraint], names: Optional[Mapping[int, str]] = None) -> str:
    if not ts:
        return "none"
    parts = []
    for c in ts:
        op = "<" if isinstance(c, Before) else "="
        parts.append(f"tau({_name(c.a, names)}) {op} tau({_name(c.b, names)})")
    return " & ".join(parts)
