"""Budgeted depth-first search with propagation.

Variables are branched on in declaration order, values in ascending order.
Search level ``i`` always decides variable ``i``, so a stopped search is
described completely by its decisions plus, per level, the values whose
subtrees were fully explored ("closed").  That description is what restart
nogoods are built from.

Budgets are checked only immediately before a left (``x = v``) branch.  Under
2-way branching the right branch ``x != v`` follows its closed left sibling
without a check, which keeps the closed values of a level identical to its
exclusions.
"""

from __future__ import annotations

import enum
import time
from collections import deque
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from typing import Optional, Union

from .model import (
    Add,
    AllDiff,
    And,
    Assignment,
    Constraint,
    Domain,
    Eq,
    IntLit,
    Leq,
    Model,
    Not,
    Var,
    VarRef,
    scope,
)

__all__ = [
    "Aborted",
    "Branching",
    "Budget",
    "BudgetExhausted",
    "Consistent",
    "Decision",
    "DecisionKind",
    "Exhausted",
    "Mode",
    "SearchPath",
    "SolutionFound",
    "Solver",
    "Stats",
    "Wipeout",
    "propagate",
    "solve",
    "solve_streaming",
]


class Mode(str, enum.Enum):
    FIRST = "first"
    ALL = "all"


class Branching(str, enum.Enum):
    TWO_WAY = "2way"
    N_WAY = "nway"


class DecisionKind(str, enum.Enum):
    ASSIGN = "assign"
    EXCLUDE = "exclude"


@dataclass(frozen=True)
class Decision:
    var: VarRef
    value: int
    kind: DecisionKind
    level: int


@dataclass(frozen=True)
class SearchPath:
    """Decisions on the current branch and the closed values of every open level.

    ``closed[i]`` lists, in the order they were refuted, the values of
    ``levels[i]`` whose subtrees are finished given the assignments of levels
    ``0..i-1``.
    """

    decisions: tuple[Decision, ...] = ()
    closed: tuple[tuple[int, ...], ...] = ()
    levels: tuple[VarRef, ...] = ()

    def __post_init__(self):
        if len(self.levels) != len(self.closed):
            raise ValueError("one variable per open level expected")
        for d in self.decisions:
            if d.kind is DecisionKind.ASSIGN and d.level < len(self.closed) and d.value in self.closed[d.level]:
                raise ValueError(f"value {d.value} of {d.var} is both current and closed")

    def assigned(self) -> list[tuple[VarRef, int]]:
        return [(d.var, d.value) for d in self.decisions if d.kind is DecisionKind.ASSIGN]


@dataclass(frozen=True)
class Budget:
    max_nodes: Optional[int] = None
    max_millis: Optional[int] = None

    def __post_init__(self):
        for bound in (self.max_nodes, self.max_millis):
            if bound is not None and bound < 0:
                raise ValueError("budget bounds must be non-negative")

    @property
    def unbounded(self) -> bool:
        return self.max_nodes is None and self.max_millis is None

    def to_json(self) -> dict:
        return {"max_nodes": self.max_nodes, "max_millis": self.max_millis}

    @classmethod
    def from_json(cls, data: Mapping) -> Budget:
        return cls(data.get("max_nodes"), data.get("max_millis"))


@dataclass
class Stats:
    nodes: int = 0
    propagations: int = 0
    wall_millis: float = 0.0
    solutions_emitted: int = 0

    def to_json(self) -> dict:
        return {
            "nodes": self.nodes,
            "propagations": self.propagations,
            "wall_millis": round(self.wall_millis, 3),
            "solutions_emitted": self.solutions_emitted,
        }


@dataclass(frozen=True)
class SolutionFound:
    assignment: Assignment
    stats: Stats


@dataclass(frozen=True)
class Exhausted:
    solutions: tuple[Assignment, ...]
    stats: Stats


@dataclass(frozen=True)
class BudgetExhausted:
    path: SearchPath
    frontier: VarRef
    frontier_root_domain: Domain
    stats: Stats
    solutions: tuple[Assignment, ...] = ()


@dataclass(frozen=True)
class Aborted:
    """The solution callback raised; ``error`` is the exception."""

    error: BaseException
    stats: Stats
    solutions: tuple[Assignment, ...] = ()


Outcome = Union[SolutionFound, Exhausted, BudgetExhausted, Aborted]


@dataclass(frozen=True)
class Consistent:
    domains: dict[VarRef, Domain] = field(default_factory=dict)


@dataclass(frozen=True)
class Wipeout:
    var: Optional[VarRef]


class _Stop(Exception):
    def __init__(self, level: int):
        self.level = level


class _Found(Exception):
    pass


class _CallbackFailed(Exception):
    pass


def _compile_expr(e, index: dict[VarRef, int]):
    if isinstance(e, IntLit):
        value = e.value
        return lambda env: value
    if isinstance(e, Var):
        i = index[e.ref]
        return lambda env: env[i]
    base = _compile_expr(e.base, index)
    offset = e.offset
    return lambda env: base(env) + offset


def _compile_check(c: Constraint, index: dict[VarRef, int]) -> Callable[[list], bool]:
    body = c.body
    if isinstance(body, (Eq, Leq)):
        lhs, rhs = _compile_expr(body.lhs, index), _compile_expr(body.rhs, index)
        if isinstance(body, Eq):
            return lambda env: lhs(env) == rhs(env)
        return lambda env: lhs(env) <= rhs(env)
    if isinstance(body, Not):
        inner = _compile_check(body.inner, index)
        return lambda env: not inner(env)
    if isinstance(body, And):
        parts = [_compile_check(p, index) for p in body.parts]
        return lambda env: all(p(env) for p in parts)
    idx = [index[r] for r in body.vars]
    return lambda env: len({env[i] for i in idx}) == len(idx)


@dataclass
class _Prop:
    scope: tuple[int, ...]
    check: Callable[[list], bool]


def _compile_props(model: Model) -> list[_Prop]:
    index = {ref: i for i, ref in enumerate(model.variables)}
    props = []
    for c in model.constraints:
        if isinstance(c.body, AllDiff):
            idx = list(dict.fromkeys(index[r] for r in c.body.vars))
            if len(idx) < len(c.body.vars):
                # a repeated variable can never differ from itself
                props.append(_Prop((idx[0],), lambda env: False))
            for a in range(len(idx)):
                for b in range(a + 1, len(idx)):
                    i, j = idx[a], idx[b]
                    props.append(_Prop((i, j), lambda env, i=i, j=j: env[i] != env[j]))
            continue
        props.append(_Prop(tuple(index[r] for r in scope(c)), _compile_check(c, index)))
    return props


class Solver:
    """One search over one model.  Not thread-safe while running; reusable between runs."""

    def __init__(self, model: Model, branching: Branching = Branching.N_WAY, propagation: bool = True):
        self.model = model
        self.branching = Branching(branching)
        self.propagation = propagation
        self.refs = model.variables
        self.n = len(self.refs)
        self.props = _compile_props(model)
        self.watch: list[list[int]] = [[] for _ in self.refs]
        for k, p in enumerate(self.props):
            for v in p.scope:
                self.watch[v].append(k)
        self.initial = [set(model.domain_of(r)) for r in self.refs]

    # -- domain store with trail ---------------------------------------------

    def _reset(self, domains: Optional[list[set[int]]] = None):
        self.dom = [set(d) for d in (domains or self.initial)]
        self.trail: list[tuple[int, int]] = []
        self.env = [0] * self.n
        self.stats = Stats()

    def _remove(self, var: int, value: int):
        self.dom[var].discard(value)
        self.trail.append((var, value))

    def _undo(self, mark: int):
        trail, dom = self.trail, self.dom
        while len(trail) > mark:
            var, value = trail.pop()
            dom[var].add(value)

    # -- propagation -----------------------------------------------------------

    def _revise(self, prop: _Prop) -> tuple[list[int], Optional[int]]:
        """Run one propagator.  Returns (changed vars, wiped var or -1 / None)."""
        dom, env, check = self.dom, self.env, prop.check
        sc = prop.scope
        changed: list[int] = []
        if len(sc) == 0:
            return changed, (None if not check(env) else -1)
        if len(sc) == 2:
            x, y = sc
            for a, b in ((x, y), (y, x)):
                removed = False
                for va in list(dom[a]):
                    env[a] = va
                    for vb in dom[b]:
                        env[b] = vb
                        if check(env):
                            break
                    else:
                        self._remove(a, va)
                        removed = True
                if removed:
                    changed.append(a)
                    if not dom[a]:
                        return changed, a
            return changed, -1
        free = [v for v in sc if len(dom[v]) > 1]
        if len(free) > 1:
            return changed, -1
        for v in sc:
            if len(dom[v]) == 1:
                env[v] = next(iter(dom[v]))
        if not free:
            return changed, (-1 if check(env) else sc[-1])
        x = free[0]
        for va in list(dom[x]):
            env[x] = va
            if not check(env):
                self._remove(x, va)
                if x not in changed:
                    changed.append(x)
        return changed, (x if not dom[x] else -1)

    def _propagate(self, changed_vars: Optional[list[int]] = None) -> Optional[int]:
        """Fixpoint; returns ``-1`` when consistent, else the wiped var index (or None)."""
        if changed_vars is None:
            queue = deque(range(len(self.props)))
        else:
            queue = deque(dict.fromkeys(k for v in changed_vars for k in self.watch[v]))
        queued = set(queue)
        while queue:
            k = queue.popleft()
            queued.discard(k)
            self.stats.propagations += 1
            changed, wiped = self._revise(self.props[k])
            if wiped != -1:
                return wiped
            for v in changed:
                for k2 in self.watch[v]:
                    if k2 != k and k2 not in queued:
                        queue.append(k2)
                        queued.add(k2)
        return -1

    def _assign(self, var: int, value: int) -> bool:
        for other in [v for v in self.dom[var] if v != value]:
            self._remove(var, other)
        if not self.propagation:
            return True
        return self._propagate([var]) == -1

    def _exclude(self, var: int, value: int) -> bool:
        self._remove(var, value)
        if not self.dom[var]:
            return False
        if not self.propagation:
            return True
        return self._propagate([var]) == -1

    # -- search ------------------------------------------------------------------

    def run(
        self,
        budget: Budget = Budget(),
        mode: Mode = Mode.FIRST,
        on_solution: Optional[Callable[[Assignment], object]] = None,
    ) -> Outcome:
        mode = Mode(mode)
        self._reset()
        self.budget = budget
        self.mode = mode
        self.on_solution = on_solution
        self.solutions: list[Assignment] = []
        self.decisions: list[Decision] = []
        self.current: list[Optional[int]] = [None] * self.n
        self.closed: list[list[int]] = [[] for _ in range(self.n)]
        self.started = time.monotonic()
        try:
            if self.propagation and self._propagate() != -1:
                return Exhausted((), self._finish())
            self.root = [set(d) for d in self.dom]
            self._search(0)
        except _Found:
            return SolutionFound(self.solutions[0], self._finish())
        except _Stop as stop:
            path = SearchPath(
                tuple(self.decisions),
                tuple(tuple(c) for c in self.closed[: stop.level + 1]),
                self.refs[: stop.level + 1],
            )
            return BudgetExhausted(
                path,
                self.refs[stop.level],
                Domain.from_values(self.root[stop.level]),
                self._finish(),
                tuple(self.solutions),
            )
        except _CallbackFailed as failure:
            return Aborted(failure.__cause__, self._finish(), tuple(self.solutions))
        return Exhausted(tuple(self.solutions), self._finish())

    def _finish(self) -> Stats:
        self.stats.wall_millis = (time.monotonic() - self.started) * 1000.0
        self.stats.solutions_emitted = len(self.solutions)
        return self.stats

    def _check_budget(self, level: int):
        b = self.budget
        if b.max_nodes is not None and self.stats.nodes >= b.max_nodes:
            raise _Stop(level)
        if b.max_millis is not None and (time.monotonic() - self.started) * 1000.0 >= b.max_millis:
            raise _Stop(level)

    def _leaf(self):
        values = self.current
        if not self.propagation:
            env = list(values)
            if not all(p.check(env) for p in self.props):
                return
        solution = Assignment(zip(self.refs, values))
        self.solutions.append(solution)
        if self.on_solution is not None:
            try:
                self.on_solution(solution)
            except Exception as exc:
                raise _CallbackFailed() from exc
        if self.mode is Mode.FIRST:
            raise _Found()

    def _left(self, level: int, value: int):
        self._check_budget(level)
        mark = len(self.trail)
        self.stats.nodes += 1
        self.decisions.append(Decision(self.refs[level], value, DecisionKind.ASSIGN, level))
        self.current[level] = value
        if self._assign(level, value):
            self._search(level + 1)
        self._undo(mark)
        self.decisions.pop()
        self.current[level] = None
        self.closed[level].append(value)

    def _search(self, level: int):
        if level == self.n:
            self._leaf()
            return
        if self.branching is Branching.N_WAY:
            for value in sorted(self.dom[level]):
                self._left(level, value)
        else:
            mark, depth = len(self.trail), len(self.decisions)
            while self.dom[level]:
                value = min(self.dom[level])
                self._left(level, value)
                self.stats.nodes += 1
                self.decisions.append(Decision(self.refs[level], value, DecisionKind.EXCLUDE, level))
                if not self._exclude(level, value):
                    break
            self._undo(mark)
            del self.decisions[depth:]
        self.closed[level].clear()


def solve(
    m: Model,
    budget: Budget = Budget(),
    mode: Mode = Mode.FIRST,
    branching: Branching = Branching.N_WAY,
    propagation: bool = True,
) -> Outcome:
    return Solver(m, branching, propagation).run(budget, mode)


def solve_streaming(
    m: Model,
    on_solution: Callable[[Assignment], object],
    budget: Budget = Budget(),
    mode: Mode = Mode.FIRST,
    branching: Branching = Branching.N_WAY,
    propagation: bool = True,
) -> Outcome:
    """Like :func:`solve`, calling ``on_solution`` once per solution as it is found."""
    return Solver(m, branching, propagation).run(budget, mode, on_solution)


def propagate(m: Model, domains: Optional[Mapping[VarRef, Domain]] = None) -> Union[Consistent, Wipeout]:
    """Propagate ``m``'s constraints to a fixpoint starting from ``domains``.

    Variables missing from ``domains`` start at their declared domain.
    """
    solver = Solver(m)
    start = [set(domains[r]) if domains and r in domains else set(d) for r, d in zip(solver.refs, solver.initial)]
    if any(not d for d in start):
        first = next(i for i, d in enumerate(start) if not d)
        return Wipeout(solver.refs[first])
    solver._reset(start)
    wiped = solver._propagate()
    if wiped != -1:
        return Wipeout(None if wiped is None else solver.refs[wiped])
    return Consistent({r: Domain.from_values(d) for r, d in zip(solver.refs, solver.dom)})

