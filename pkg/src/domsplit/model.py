"""Core value types: domains, variable references, constraint ASTs and models.

Everything here is immutable.  A :class:`Model` is the unit that gets split,
serialized and shipped to workers, so equality is structural.
"""

from __future__ import annotations

import operator
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass, field
from functools import reduce
from typing import Callable, Union

__all__ = [
    "Add",
    "AllDiff",
    "And",
    "Assignment",
    "Constraint",
    "Domain",
    "Eq",
    "IntLit",
    "Leq",
    "Model",
    "ModelError",
    "Not",
    "Var",
    "VarDecl",
    "VarRef",
    "add_constraints",
    "all_labels",
    "domain_partition",
    "eval_constraint",
    "evaluate",
    "scope",
]


class ModelError(ValueError):
    """Structural problem with a model: bad reference, duplicate label, empty domain."""


@dataclass(frozen=True)
class Domain:
    """Finite integer set kept as sorted, disjoint, non-adjacent inclusive intervals."""

    intervals: tuple[tuple[int, int], ...] = ()

    def __post_init__(self):
        prev_hi = None
        for lo, hi in self.intervals:
            if lo > hi:
                raise ValueError(f"bad interval {lo}..{hi}")
            if prev_hi is not None and lo <= prev_hi + 1:
                raise ValueError("intervals not in canonical form")
            prev_hi = hi

    @classmethod
    def range(cls, lo: int, hi: int) -> Domain:
        return cls(((lo, hi),)) if lo <= hi else cls()

    @classmethod
    def from_values(cls, values: Iterable[int]) -> Domain:
        intervals: list[list[int]] = []
        for v in sorted(set(values)):
            if intervals and v == intervals[-1][1] + 1:
                intervals[-1][1] = v
            else:
                intervals.append([v, v])
        return cls(tuple((lo, hi) for lo, hi in intervals))

    def __iter__(self) -> Iterator[int]:
        for lo, hi in self.intervals:
            yield from range(lo, hi + 1)

    def __len__(self) -> int:
        return sum(hi - lo + 1 for lo, hi in self.intervals)

    def __contains__(self, value: object) -> bool:
        return any(lo <= value <= hi for lo, hi in self.intervals)  # type: ignore[operator]

    def __bool__(self) -> bool:
        return bool(self.intervals)

    @property
    def min(self) -> int:
        return self.intervals[0][0]

    @property
    def max(self) -> int:
        return self.intervals[-1][1]

    def is_contiguous(self) -> bool:
        return len(self.intervals) == 1

    def __repr__(self) -> str:
        parts = [str(lo) if lo == hi else f"{lo}..{hi}" for lo, hi in self.intervals]
        return "Domain{" + ", ".join(parts) + "}"


def domain_partition(d: Domain, n: int) -> list[Domain]:
    """Split ``d`` into ``min(n, |d|)`` contiguous runs of its values.

    The first ``|d| mod k`` parts get the extra value, so sizes differ by at
    most one.  Runs follow value order, not numeric range, so gapped domains
    never produce an empty part.
    """
    if n < 1:
        raise ValueError("n must be positive")
    if not d:
        raise ValueError("cannot partition an empty domain")
    values = list(d)
    k = min(n, len(values))
    size, extra = divmod(len(values), k)
    parts = []
    start = 0
    for i in range(k):
        stop = start + size + (1 if i < extra else 0)
        parts.append(Domain.from_values(values[start:stop]))
        start = stop
    return parts


@dataclass(frozen=True, order=True)
class VarRef:
    array: str
    index: int

    def __str__(self) -> str:
        return f"{self.array}[{self.index}]"


@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class Var:
    ref: VarRef


@dataclass(frozen=True)
class Add:
    base: Union[Var, IntLit]
    offset: int


Expr = Union[IntLit, Var, Add]


@dataclass(frozen=True)
class AllDiff:
    vars: tuple[VarRef, ...]


@dataclass(frozen=True)
class Eq:
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Leq:
    lhs: Expr
    rhs: Expr


@dataclass(frozen=True)
class Not:
    inner: Constraint


@dataclass(frozen=True)
class And:
    parts: tuple[Constraint, ...]

    def __post_init__(self):
        if len(self.parts) < 2:
            raise ModelError("and() needs at least two parts")


Body = Union[AllDiff, Eq, Leq, Not, And]


@dataclass(frozen=True)
class Constraint:
    label: str
    body: Body


@dataclass(frozen=True)
class VarDecl:
    name: str
    length: int
    domain: Domain


@dataclass(frozen=True)
class Model:
    params: tuple[tuple[str, int], ...] = ()
    vars: tuple[VarDecl, ...] = ()
    constraints: tuple[Constraint, ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)  # type: ignore[assignment]

    def __post_init__(self):
        index: dict[VarRef, int] = {}
        decls: dict[str, VarDecl] = {}
        for decl in self.vars:
            if decl.name in decls:
                raise ModelError(f"array {decl.name!r} declared twice")
            if not decl.domain:
                raise ModelError(f"empty domain for {decl.name!r}")
            decls[decl.name] = decl
            for i in range(decl.length):
                index[VarRef(decl.name, i)] = len(index)
        object.__setattr__(self, "_index", index)
        seen: set[str] = set()
        for c in self.constraints:
            for label in all_labels(c):
                if label in seen:
                    raise ModelError(f"duplicate constraint label {label!r}")
                seen.add(label)
            for ref in scope(c):
                if ref not in index:
                    raise ModelError(f"unresolved reference {ref} in {c.label!r}")

    @property
    def variables(self) -> tuple[VarRef, ...]:
        return tuple(self._index)

    def index_of(self, ref: VarRef) -> int:
        try:
            return self._index[ref]
        except KeyError:
            raise ModelError(f"unresolved reference {ref}") from None

    def decl(self, name: str) -> VarDecl:
        for d in self.vars:
            if d.name == name:
                return d
        raise ModelError(f"no array named {name!r}")

    def domain_of(self, ref: VarRef) -> Domain:
        self.index_of(ref)
        return self.decl(ref.array).domain

    def labels(self) -> set[str]:
        return {label for c in self.constraints for label in all_labels(c)}


class Assignment(Mapping):
    """Hashable, read-only map from :class:`VarRef` to value."""

    __slots__ = ("_items", "_map")

    def __init__(self, items: Iterable[tuple[VarRef, int]] | Mapping[VarRef, int] = ()):
        if isinstance(items, Mapping):
            items = items.items()
        self._items = tuple((ref, int(v)) for ref, v in items)
        self._map = dict(self._items)

    def __getitem__(self, ref: VarRef) -> int:
        return self._map[ref]

    def __iter__(self):
        return (ref for ref, _ in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __hash__(self) -> int:
        return hash(frozenset(self._items))

    def __eq__(self, other: object) -> bool:
        if isinstance(other, Mapping):
            return self._map == dict(other.items())
        return NotImplemented

    def __repr__(self) -> str:
        return f"Assignment({self.by_array()!r})"

    def by_array(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for ref, v in sorted(self._items):
            out.setdefault(ref.array, []).append(v)
        return out

    @classmethod
    def for_model(cls, model: Model, values: Iterable[int]) -> Assignment:
        return cls(zip(model.variables, values))


def all_labels(c: Constraint) -> Iterator[str]:
    yield c.label
    body = c.body
    if isinstance(body, Not):
        yield from all_labels(body.inner)
    elif isinstance(body, And):
        for part in body.parts:
            yield from all_labels(part)


def _expr_refs(e: Expr) -> Iterator[VarRef]:
    if isinstance(e, Var):
        yield e.ref
    elif isinstance(e, Add):
        yield from _expr_refs(e.base)


def _refs(c: Constraint) -> Iterator[VarRef]:
    body = c.body
    if isinstance(body, AllDiff):
        yield from body.vars
    elif isinstance(body, (Eq, Leq)):
        yield from _expr_refs(body.lhs)
        yield from _expr_refs(body.rhs)
    elif isinstance(body, Not):
        yield from _refs(body.inner)
    else:
        for part in body.parts:
            yield from _refs(part)


def scope(c: Constraint) -> tuple[VarRef, ...]:
    """Distinct variables mentioned by ``c``, in order of first mention."""
    return tuple(dict.fromkeys(_refs(c)))


def _eval_expr(e: Expr, lookup: Callable[[VarRef], object]):
    if isinstance(e, IntLit):
        return e.value
    if isinstance(e, Var):
        return lookup(e.ref)
    return _eval_expr(e.base, lookup) + e.offset


def evaluate(c: Constraint, lookup: Callable[[VarRef], object]):
    """Evaluate ``c`` with values supplied by ``lookup``.

    Only comparison and bitwise operators are used, so ``lookup`` may return
    plain ints or numpy arrays (one column per variable) alike.
    """
    body = c.body
    if isinstance(body, Eq):
        return _eval_expr(body.lhs, lookup) == _eval_expr(body.rhs, lookup)
    if isinstance(body, Leq):
        return _eval_expr(body.lhs, lookup) <= _eval_expr(body.rhs, lookup)
    if isinstance(body, Not):
        return operator.xor(evaluate(body.inner, lookup), True)
    if isinstance(body, And):
        return reduce(operator.and_, (evaluate(p, lookup) for p in body.parts))
    values = [lookup(ref) for ref in body.vars]
    result = True
    for i in range(len(values)):
        for j in range(i + 1, len(values)):
            result = result & (values[i] != values[j])
    return result


def eval_constraint(c: Constraint, a: Mapping[VarRef, int]) -> bool:
    def lookup(ref: VarRef) -> int:
        try:
            return a[ref]
        except KeyError:
            raise ModelError(f"unresolved reference {ref}") from None

    return bool(evaluate(c, lookup))


def add_constraints(m: Model, cs: Iterable[Constraint]) -> Model:
    """Return a copy of ``m`` with ``cs`` appended; labels must be new."""
    cs = tuple(cs)
    if not cs:
        return m
    used = m.labels()
    for c in cs:
        for label in all_labels(c):
            if label in used:
                raise ModelError(f"duplicate constraint label {label!r}")
            used.add(label)
    return Model(m.params, m.vars, m.constraints + cs)
