from pathlib import Path

import numpy as np
import pytest

from src.constraint_engine import (
    And,
    Before,
    Iff,
    Implies,
    Not,
    Or,
    Same,
    TrueF,
    Var,
    VerdictStatus,
    after,
    check_answer,
    derive,
    derive_for_grounding,
    evaluate,
    feasible_temporal,
    formula_vars,
    oracle_sat,
    oracle_temporal,
    render_formula,
    render_temporal,
    sat_occurrence,
    solve_occurrence,
    temporal_order,
)
from src.errors import ConstraintLimitError
from src.kg_store import Edge, RelationType
from src.query_lang import Anchor, Proj, label_variables

GOLDEN = Path(__file__).resolve().parent / "golden" / "relation_constraints.tsv"


def test_table_snapshot():
    names = {1: "V1", 2: "V2"}
    lines = ["relation\toccurrence\ttemporal"]
    for rel in RelationType:
        occ, temp = derive(Edge(1, rel, 2))
        lines.append(f"{rel.name}\t{render_formula(occ, names)}\t{render_temporal(temp, names)}")
    assert "\n".join(lines) + "\n" == GOLDEN.read_text(encoding="utf-8")


def test_chosen_alternative():
    go_home, buy_umbrella = 1, 2
    occ, temp = derive(Edge(go_home, RelationType.ChosenAlternative, buy_umbrella))
    assert occ == And((Var(go_home), Not(Var(buy_umbrella))))
    assert temp == ()


def test_reason_implies_precedence():
    food_bad, add_soy = 1, 2
    occ, temp = derive(Edge(food_bad, RelationType.Reason, add_soy))
    assert Implies(Var(add_soy), Var(food_bad)) in occ.children
    assert temp == (Before(add_soy, food_bad),)


def test_conjunction():
    occ, temp = derive(Edge(3, RelationType.Conjunction, 4))
    assert occ == And((Var(3), Var(4)))
    assert temp == ()


def test_normalized_temporal_constructors():
    assert after(1, 2) == Before(2, 1)
    assert Same(5, 2) == Same(2, 5)
    assert Same(5, 2).a == 2


def test_umbrella_query_is_unsatisfiable():
    # query edge (goHome, Conjunction, V?) with V? = buyUmbrella, plus the informational atomic
    go_home, buy_umbrella = 1, 2
    occ_info, _ = derive(Edge(go_home, RelationType.ChosenAlternative, buy_umbrella))
    occ_query, _ = derive(Edge(go_home, RelationType.Conjunction, buy_umbrella))
    assert not sat_occurrence([occ_info, occ_query])
    assert sat_occurrence([occ_info])


def test_sat_trivial_cases():
    assert sat_occurrence(Var(1))
    assert sat_occurrence([])
    assert sat_occurrence(TrueF())
    assert not sat_occurrence([Var(1), Not(Var(1))])


def test_sat_small_formula_matches_truth_table():
    f = [Or((Var(1), Var(2))), Not(Var(1)), Implies(Not(Var(2)), Var(1))]
    assert sat_occurrence(f) == oracle_sat(f)
    model = solve_occurrence(f)
    assert model == {1: False, 2: True}
    assert all(evaluate(g, model) for g in f)


def test_variable_limit():
    f = [Or(tuple(Var(i) for i in range(70)))]
    with pytest.raises(ConstraintLimitError):
        sat_occurrence(f)
    assert sat_occurrence(f, limit=70)
    with pytest.raises(ConstraintLimitError):
        oracle_sat(f)


def test_temporal_cases():
    a, b, c = 1, 2, 3
    assert not feasible_temporal([Before(a, b), Before(b, a)])
    assert feasible_temporal([Same(a, b), Before(a, c)])
    assert oracle_temporal([Same(a, b), Before(a, c)])
    assert oracle_temporal([Before(a, b)])
    assert not feasible_temporal([Same(a, b), Before(b, a)])
    assert feasible_temporal([])
    assert temporal_order([Same(a, b), Before(a, c)]) == [(a, b), (c,)]


def test_temporal_oracle_limit():
    ts = [Before(i, i + 1) for i in range(7)]
    with pytest.raises(ConstraintLimitError):
        oracle_temporal(ts)
    assert feasible_temporal(ts)


def test_soy_sauce_example_is_infeasible():
    food_bad, add_soy = 1, 2
    ts = [Before(food_bad, add_soy), Before(add_soy, food_bad)]
    assert not feasible_temporal(ts)


def _random_formula(rng, n_vars, depth):
    if depth == 0 or rng.random() < 0.3:
        leaf = Var(int(rng.integers(n_vars)))
        return Not(leaf) if rng.random() < 0.3 else leaf
    kind = rng.integers(5)
    if kind == 0:
        return Not(_random_formula(rng, n_vars, depth - 1))
    if kind == 1:
        return And(tuple(_random_formula(rng, n_vars, depth - 1) for _ in range(int(rng.integers(2, 4)))))
    if kind == 2:
        return Or(tuple(_random_formula(rng, n_vars, depth - 1) for _ in range(int(rng.integers(2, 4)))))
    if kind == 3:
        return Implies(_random_formula(rng, n_vars, depth - 1), _random_formula(rng, n_vars, depth - 1))
    return Iff(_random_formula(rng, n_vars, depth - 1), _random_formula(rng, n_vars, depth - 1))


def _random_conjunction(rng):
    n_vars = int(rng.integers(1, 13))
    return [_random_formula(rng, n_vars, 3) for _ in range(int(rng.integers(1, 6)))]


def _random_temporal(rng):
    n_events = int(rng.integers(2, 6))
    ts = []
    for _ in range(int(rng.integers(1, 8))):
        a, b = (int(x) for x in rng.integers(n_events, size=2))
        ts.append(Same(a, b) if rng.random() < 0.25 else Before(a, b))
    return ts


def test_dpll_agrees_with_truth_table():
    rng = np.random.default_rng(12)
    for _ in range(1000):
        f = _random_conjunction(rng)
        model = solve_occurrence(f)
        assert (model is not None) == oracle_sat(f)
        if model is not None:
            assert all(evaluate(g, model) for g in f)


def test_temporal_solver_agrees_with_weak_orders():
    rng = np.random.default_rng(5)
    for _ in range(500):
        ts = _random_temporal(rng)
        order = temporal_order(ts)
        assert (order is not None) == oracle_temporal(ts)
        if order is not None:
            tau = {v: i for i, cls in enumerate(order) for v in cls}
            assert all(tau[c.a] < tau[c.b] if isinstance(c, Before) else tau[c.a] == tau[c.b] for c in ts)


def test_adding_constraints_never_restores_satisfiability():
    rng = np.random.default_rng(9)
    for _ in range(300):
        f = _random_conjunction(rng)
        if sat_occurrence(f):
            continue
        assert not sat_occurrence(f + _random_conjunction(rng))
    for _ in range(300):
        ts = _random_temporal(rng)
        if feasible_temporal(ts):
            continue
        assert not feasible_temporal(ts + _random_temporal(rng))


def test_temporal_invariant_under_reordering_and_swaps():
    rng = np.random.default_rng(3)
    for _ in range(200):
        ts = _random_temporal(rng)
        shuffled = [ts[int(i)] for i in rng.permutation(len(ts))]
        swapped = [Same(c.b, c.a) if isinstance(c, Same) else c for c in shuffled]
        assert feasible_temporal(ts) == feasible_temporal(shuffled) == feasible_temporal(swapped)


def test_formula_vars_order():
    assert formula_vars([And((Var(3), Not(Var(1)))), Var(3), Var(2)]) == [3, 1, 2]


def test_derive_for_grounding_on_fixture(restaurant_query, restaurant_info, vid):
    grounding = {"V_?": vid("PersonY adds soy sauce"), "V_1": vid("Food is bad")}
    cs = derive_for_grounding(restaurant_query, restaurant_info, grounding)
    assert len(cs.occ) == 5
    assert Before(vid("Food is bad"), vid("PersonY adds soy sauce")) in cs.temp
    assert Before(vid("PersonY adds soy sauce"), vid("Food is bad")) in cs.temp
    assert not feasible_temporal(cs.temp)


def test_fixture_verdicts(restaurant_graph, restaurant_query, restaurant_info, vid):
    def verdict(text):
        return check_answer(restaurant_graph, restaurant_query, restaurant_info, vid(text))

    assert verdict("PersonY adds vinegar").status is VerdictStatus.OCCURRENCE_CONTRADICTION
    assert verdict("PersonY adds soy sauce").status is VerdictStatus.TEMPORAL_CONTRADICTION
    for text in ("Staff is new", "PersonY adds ketchup"):
        result = verdict(text)
        assert result.status is VerdictStatus.VALID
        assert result.witness is not None
    assert verdict("PersonY adds vinegar").witness is None


def test_occurrence_wins_when_both_families_fail(make_graph):
    # 0 -Reason-> 1 with info (1 ChosenAlternative-negated) and (0 before 1)
    g = make_graph(2, [(0, int(RelationType.Reason), 1)])
    q = label_variables(Proj(RelationType.Reason, Anchor(0)))
    info = (Edge(0, RelationType.ChosenAlternative, 1), Edge(0, RelationType.Precedence, 1))
    assert check_answer(g, q, info, 1).status is VerdictStatus.OCCURRENCE_CONTRADICTION


def test_valid_if_any_grounding_is_consistent(make_graph):
    # answer 3 reachable through 1 and through 2; only the path through 2 survives
    g = make_graph(4, [(0, 0, 1), (0, 0, 2), (1, 0, 3), (2, 0, 3)])
    q = label_variables(Proj(RelationType.Precedence, Proj(RelationType.Precedence, Anchor(0))))
    info = (Edge(3, RelationType.ChosenAlternative, 1),)
    verdict = check_answer(g, q, info, 3)
    assert verdict.status is VerdictStatus.VALID
    assert verdict.witness["V_1"] == 2
    assert verdict.groundings_checked >= 1


def test_truncated_groundings_are_marked(make_graph):
    g = make_graph(4, [(0, 0, 1), (0, 0, 2), (1, 0, 3), (2, 0, 3)])
    q = label_variables(Proj(RelationType.Precedence, Proj(RelationType.Precedence, Anchor(0))))
    assert check_answer(g, q, (), 3, cap=1).possibly_incomplete
    assert not check_answer(g, q, (), 3).possibly_incomplete
