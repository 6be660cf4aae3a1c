import random

import pytest

from corpus import queens, random_binary_csp
from domsplit.dominion import format_constraint, parse_model, serialize_model
from domsplit.engine import (
    Branching,
    Budget,
    BudgetExhausted,
    Decision,
    DecisionKind,
    Mode,
    SearchPath,
    Stats,
    solve,
)
from domsplit.model import Assignment, Domain, ModelError, VarRef
from domsplit.nogoods import (
    Nogood,
    SplitUnavailable,
    extract_restart_nogoods,
    partition_constraint,
    split_model,
)
from domsplit.oracle import enumerate_all

Q = [VarRef("queens", i) for i in range(4)]
A, X = DecisionKind.ASSIGN, DecisionKind.EXCLUDE


def stop_at(m, nodes, branching=Branching.N_WAY, mode=Mode.ALL):
    outcome = solve(m, Budget(max_nodes=nodes), mode, branching)
    assert isinstance(outcome, BudgetExhausted), outcome
    return outcome


def solution_set(m):
    return set(enumerate_all(m))


class TestExtract:
    def test_nway_first_value_closed(self, queens4):
        stop = stop_at(queens4, 4)
        assert extract_restart_nogoods(stop.path, Branching.N_WAY) == [Nogood(((Q[0], 1),))]

    def test_two_way_exclusions(self):
        x = VarRef("x", 0)
        path = SearchPath((Decision(x, 1, X, 0), Decision(x, 2, X, 0)), ((1, 2),), (x,))
        assert extract_restart_nogoods(path, Branching.TWO_WAY) == [Nogood(((x, 1),)), Nogood(((x, 2),))]

    def test_empty_path(self):
        assert extract_restart_nogoods(SearchPath((), ((),), (Q[0],))) == []

    def test_prefix_is_included(self):
        path = SearchPath((Decision(Q[0], 2, A, 0),), ((), (1,)), (Q[0], Q[1]))
        (ng,) = extract_restart_nogoods(path)
        assert ng.literals == ((Q[0], 2), (Q[1], 1))
        free = parse_model("language Dominion 0.1\ndim queens[4]: int\nfind queens[..]: int {1..4}\nsuch that\n")
        excluded = [a for a in enumerate_all(free) if ng.excludes(a)]
        assert {(a[Q[0]], a[Q[1]]) for a in excluded} == {(2, 1)}
        assert len(excluded) == 16

    def test_closed_without_ancestor_rejected(self):
        path = SearchPath((), ((), (1,)), (Q[0], Q[1]))
        with pytest.raises(ModelError, match="unassigned ancestor"):
            extract_restart_nogoods(path)

    def test_exclusion_in_nway_path_rejected(self):
        path = SearchPath((Decision(Q[0], 1, X, 0),), ((1,),), (Q[0],))
        with pytest.raises(ModelError, match="n-way"):
            extract_restart_nogoods(path, Branching.N_WAY)

    def test_two_way_mismatch_rejected(self):
        path = SearchPath((Decision(Q[0], 1, X, 0),), ((1, 2),), (Q[0],))
        with pytest.raises(ModelError, match="do not match"):
            extract_restart_nogoods(path, Branching.TWO_WAY)


class TestSplit:
    def test_worked_example(self, queens4):
        s = split_model(queens4, stop_at(queens4, 4), 2, Branching.N_WAY)
        assert [format_constraint(c, queens4) for c in s.nogood_constraints] == [
            "resume_0 not(resume_0_i eq(queens[0], 1))"
        ]
        assert [format_constraint(c, queens4) for c in s.partition_constraints] == [
            "split_lo leq(queens[1], 2)",
            "split_hi leq(3, queens[1])",
        ]
        assert s.frontier == Q[1]
        assert [tuple(d) for d in s.partition] == [(1, 2), (3, 4)]

    def test_factor_one_is_the_resumed_base(self, queens4):
        s = split_model(queens4, stop_at(queens4, 4), 1)
        assert s.parts == (s.resumed_base,)
        assert s.partition_constraints == (None,)

    def test_two_way_root_split(self, queens4):
        x = Q[0]
        path = SearchPath((Decision(x, 1, X, 0), Decision(x, 2, X, 0)), ((1, 2),), (x,))
        stop = BudgetExhausted(path, x, Domain.range(1, 4), Stats())
        s = split_model(queens4, stop, 2, Branching.TWO_WAY)
        assert [tuple(d) for d in s.partition] == [(3,), (4,)]
        assert [format_constraint(c, queens4) for c in s.partition_constraints] == [
            "split_lo leq(queens[0], 3)",
            "split_hi leq(4, queens[0])",
        ]
        assert [set(enumerate_all(p)) for p in s.parts] == [
            {Assignment(zip(Q, (3, 1, 4, 2)))},
            set(),
        ]

    def test_middle_parts_bound_both_sides(self):
        m = queens(6)
        s = split_model(m, stop_at(m, 0), 3)
        labels = [c.label for c in s.partition_constraints]
        assert labels == ["split_lo", "split_1", "split_hi"]
        assert format_constraint(s.partition_constraints[1], m) == "split_1 and(split_1_lo leq(3, queens[0]), split_1_hi leq(queens[0], 4))"

    def test_labels_stay_fresh_when_nested(self, queens4):
        s = split_model(queens4, stop_at(queens4, 4), 2)
        inner = split_model(s.parts[1], stop_at(s.parts[1], 1), 2)
        new = inner.nogood_constraints + tuple(c for c in inner.partition_constraints if c)
        assert all(c.label not in s.parts[1].labels() for c in new)
        assert any(c.label.startswith("split2_") for c in inner.partition_constraints if c)

    def test_fallback_when_frontier_is_fixed(self):
        m = parse_model(
            "language Dominion 0.1\ndim x[3]: int\nfind x[..]: int {1..3}\nsuch that\n"
            "fix eq(x[1], 2)\n"
        )
        s = split_model(m, stop_at(m, 3), 2)
        assert s.frontier == VarRef("x", 2)
        assert solution_set(m) == set().union(*map(solution_set, s.parts)) | set(stop_at(m, 3).solutions)

    def test_unavailable_when_nothing_left(self):
        m = parse_model("language Dominion 0.1\ndim x[2]: int\nfind x[..]: int {1..2}\nsuch that\n")
        # after 4 nodes x[0]=1 is finished and x[0]=2 leaves x[1] free, so split on x[1]
        stop = stop_at(m, 4)
        assert len(split_model(m, stop, 2).parts) == 2
        stop = stop_at(m, 5)
        with pytest.raises(SplitUnavailable) as info:
            split_model(m, stop, 2)
        assert solution_set(info.value.base) == solution_set(m) - set(stop.solutions)

    def test_partition_constraint_without_bounds(self):
        d = Domain.range(1, 4)
        assert partition_constraint(Q[0], d, d, "s") is None


def _split_cases():
    rng = random.Random(31)
    models = [queens(n) for n in (4, 5, 6)] + [random_binary_csp(rng) for _ in range(12)]
    for i, m in enumerate(models):
        for nodes in (0, 2, 5, 11):
            for n in (2, 3):
                yield pytest.param(m, nodes, n, id=f"m{i}-b{nodes}-n{n}")


@pytest.mark.parametrize("m, nodes, n", list(_split_cases()))
def test_split_is_an_exact_disjoint_cover(m, nodes, n):
    outcome = solve(m, Budget(max_nodes=nodes), Mode.ALL)
    everything = solution_set(m)
    if not isinstance(outcome, BudgetExhausted):
        assert set(outcome.solutions) == everything
        return
    emitted = set(outcome.solutions)
    try:
        s = split_model(m, outcome, n, Branching.N_WAY)
    except SplitUnavailable as exc:
        assert solution_set(exc.base) == everything - emitted
        return
    base = solution_set(s.resumed_base)
    # the nogoods remove exactly the explored region
    assert base == everything - emitted
    parts = [solution_set(p) for p in s.parts]
    assert set().union(*parts) == base
    assert sum(map(len, parts)) == len(base)
    for p in s.parts:
        text = serialize_model(p)
        again = parse_model(text)
        assert again == p and serialize_model(again) == text
        assert solution_set(again) == solution_set(p)


@pytest.mark.parametrize("branching", [Branching.N_WAY, Branching.TWO_WAY])
def test_nested_splits_preserve_the_solution_set(branching):
    m = queens(6)
    pending = [(m, 0)]
    found = []
    while pending:
        current, depth = pending.pop()
        outcome = solve(current, Budget(max_nodes=3 + depth), Mode.ALL, branching)
        found.extend(outcome.solutions)
        if not isinstance(outcome, BudgetExhausted):
            continue
        try:
            s = split_model(current, outcome, 2, branching)
        except SplitUnavailable as exc:
            found.extend(enumerate_all(exc.base))
            continue
        if depth == 3:
            found.extend(enumerate_all(s.resumed_base))
        else:
            pending.extend((p, depth + 1) for p in s.parts)
    assert sorted(found, key=lambda a: tuple(a.values())) == enumerate_all(m)
