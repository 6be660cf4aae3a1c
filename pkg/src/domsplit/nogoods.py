"""Restart nogoods and model splitting.

A stopped search is turned into constraints in two steps.  Every closed value
``c`` at level ``i`` becomes the nogood "not (prefix above i and x_i = c)",
which removes exactly the finished subtrees.  The remaining space is then
split on one variable into ``n`` models with bound constraints.

Positive decisions on the current path are never asserted: their unexplored
siblings must stay reachable in the split models.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .engine import Branching, BudgetExhausted, Consistent, DecisionKind, SearchPath, propagate
from .model import (
    And,
    Assignment,
    Constraint,
    Domain,
    Eq,
    IntLit,
    Leq,
    Model,
    ModelError,
    Not,
    Var,
    VarRef,
    add_constraints,
    domain_partition,
)

__all__ = [
    "Nogood",
    "SplitSet",
    "SplitUnavailable",
    "extract_restart_nogoods",
    "nogood_constraints",
    "partition_constraint",
    "split_model",
]


class SplitUnavailable(Exception):
    """No variable of the resumed model has two or more values left to split on."""

    def __init__(self, base: Model):
        super().__init__("no variable with at least two values to partition")
        self.base = base


@dataclass(frozen=True)
class Nogood:
    literals: tuple[tuple[VarRef, int], ...]

    def __post_init__(self):
        if not self.literals:
            raise ValueError("a nogood needs at least one literal")
        if len({ref for ref, _ in self.literals}) != len(self.literals):
            raise ValueError("nogood mentions a variable twice")

    def excludes(self, a: Assignment) -> bool:
        return all(a[ref] == value for ref, value in self.literals)

    def to_constraint(self, label: str) -> Constraint:
        inner = label + "_i"
        eqs = [Eq(Var(ref), IntLit(value)) for ref, value in self.literals]
        if len(eqs) == 1:
            return Constraint(label, Not(Constraint(inner, eqs[0])))
        parts = tuple(Constraint(f"{inner}_{j}", eq) for j, eq in enumerate(eqs))
        return Constraint(label, Not(Constraint(inner, And(parts))))


def extract_restart_nogoods(path: SearchPath, branching: Optional[Branching] = None) -> list[Nogood]:
    """One nogood per closed value, prefixed by the assignments above its level."""
    assigned: dict[int, tuple[VarRef, int]] = {}
    excluded: dict[int, list[int]] = {}
    for d in path.decisions:
        if d.kind is DecisionKind.ASSIGN:
            if d.level in assigned:
                raise ModelError(f"two assignments at level {d.level}")
            assigned[d.level] = (d.var, d.value)
        else:
            if branching is Branching.N_WAY:
                raise ModelError("exclusion decision in an n-way path")
            excluded.setdefault(d.level, []).append(d.value)
    if branching is Branching.TWO_WAY:
        for level, closed in enumerate(path.closed):
            if list(closed) != excluded.get(level, []):
                raise ModelError(f"closed values at level {level} do not match its exclusions")

    nogoods = []
    for level, closed in enumerate(path.closed):
        if not closed:
            continue
        try:
            prefix = tuple(assigned[j] for j in range(level))
        except KeyError:
            raise ModelError(f"level {level} has closed values but an unassigned ancestor") from None
        var = path.levels[level]
        current = assigned.get(level)
        for value in closed:
            if current is not None and current[1] == value:
                raise ModelError(f"value {value} of {var} is both current and closed")
            nogoods.append(Nogood(prefix + ((var, value),)))
    return nogoods


def _fresh_stem(used: set[str], stem: str) -> str:
    def taken(s: str) -> bool:
        return any(label == s or label.startswith(s + "_") for label in used)

    if not taken(stem):
        return stem
    k = 2
    while taken(f"{stem}{k}"):
        k += 1
    return f"{stem}{k}"


def nogood_constraints(m: Model, nogoods: list[Nogood]) -> list[Constraint]:
    """Label nogoods ``resume_<k>`` with ``k`` chosen to avoid labels already in ``m``."""
    used = m.labels()
    out = []
    k = 0
    for ng in nogoods:
        while any(label == f"resume_{k}" or label.startswith(f"resume_{k}_") for label in used):
            k += 1
        c = ng.to_constraint(f"resume_{k}")
        used.add(c.label)
        out.append(c)
        k += 1
    return out


def partition_constraint(
    var: VarRef, part: Domain, remaining: Domain, label: str
) -> Optional[Constraint]:
    """Bounds confining ``var`` to ``part`` among ``remaining``.

    ``part`` must be a contiguous run of ``remaining``; a bound equal to the
    corresponding end of ``remaining`` is left out.  Returns ``None`` when no
    bound is needed.
    """
    bounds = []
    if part.min > remaining.min:
        bounds.append(("lo", Leq(IntLit(part.min), Var(var))))
    if part.max < remaining.max:
        bounds.append(("hi", Leq(Var(var), IntLit(part.max))))
    if not bounds:
        return None
    if len(bounds) == 1:
        return Constraint(label, bounds[0][1])
    return Constraint(label, And(tuple(Constraint(f"{label}_{tag}", b) for tag, b in bounds)))


@dataclass(frozen=True)
class SplitSet:
    resumed_base: Model
    parts: tuple[Model, ...]
    frontier: VarRef
    partition: tuple[Domain, ...]
    nogoods: tuple[Nogood, ...] = ()
    nogood_constraints: tuple[Constraint, ...] = ()
    partition_constraints: tuple[Optional[Constraint], ...] = ()


def split_model(
    m: Model, stop: BudgetExhausted, n: int, branching: Optional[Branching] = None
) -> SplitSet:
    """Resume ``m`` past the explored region of ``stop`` and split the rest ``n`` ways.

    The split variable is ``stop.frontier`` unless it has fewer than two
    values left after root propagation of the resumed model, in which case
    the next variable in order (wrapping around) with two or more is used.
    Raises :class:`SplitUnavailable` if there is none.
    """
    if n < 1:
        raise ValueError("split factor must be positive")
    nogoods = extract_restart_nogoods(stop.path, branching)
    ng_constraints = nogood_constraints(m, nogoods)
    base = add_constraints(m, ng_constraints)

    root = propagate(base)
    if not isinstance(root, Consistent):
        raise SplitUnavailable(base)
    if n == 1:
        return SplitSet(
            base, (base,), stop.frontier, (root.domains[stop.frontier],), tuple(nogoods), tuple(ng_constraints), (None,)
        )

    order = list(base.variables)
    start = order.index(stop.frontier)
    for var in order[start:] + order[:start]:
        remaining = root.domains[var]
        if len(remaining) >= 2:
            break
    else:
        raise SplitUnavailable(base)

    partition = domain_partition(remaining, n)
    stem = _fresh_stem(base.labels(), "split")
    k = len(partition)
    parts, part_constraints = [], []
    for i, dom in enumerate(partition):
        tag = "lo" if i == 0 else "hi" if i == k - 1 else str(i)
        c = partition_constraint(var, dom, remaining, f"{stem}_{tag}")
        part_constraints.append(c)
        parts.append(add_constraints(base, [c]) if c is not None else base)
    return SplitSet(
        base, tuple(parts), var, tuple(partition), tuple(nogoods), tuple(ng_constraints), tuple(part_constraints)
    )
