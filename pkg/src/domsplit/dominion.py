"""Reader and writer for the Dominion 0.1 subset used by model files.

The accepted language::

    language Dominion 0.1
    letting n = 4
    dim queens[n]: int
    find queens[..]: int {1..n}
    such that
    alldifferent alldiff(queens[..])
    diagonals1 [ not(eq1 eq(queens[i], add(queens[j], j-i))) |
        i in {0..n-2}, j in {i+1..n-1} ]

Comprehensions are expanded at parse time; each instance label gets the
generator values appended (``diagonals1_0_1``).  Nested labels are suffixed
the same way so that labels stay unique.  Two small extensions over the
published grammar: ``and(...)`` for multi-literal nogoods, and explicit
variable lists / gapped domains (``alldiff(x[0], x[2])``, ``{1..2, 5}``),
which only appear when a model cannot be written otherwise.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Union

from .model import (
    Add,
    AllDiff,
    And,
    Constraint,
    Domain,
    Eq,
    IntLit,
    Leq,
    Model,
    ModelError,
    Not,
    Var,
    VarDecl,
    VarRef,
    all_labels,
)

__all__ = [
    "Comprehension",
    "DominionSyntaxError",
    "SourceModel",
    "expand_comprehension",
    "format_constraint",
    "load_model",
    "parse_model",
    "read_source",
    "serialize_model",
]

HEADER = "language Dominion 0.1"
INT64_MIN, INT64_MAX = -(2**63), 2**63 - 1
ATOMS = ("alldiff", "eq", "leq", "not", "and")


class DominionSyntaxError(ModelError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {message}")
        self.line = line
        self.col = col


_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+|\#[^\n]*)
  | (?P<int>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>\.\.|[\[\](){}:,|=+\-*.])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise DominionSyntaxError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind != "ws":
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        newlines = m.group().count("\n")
        if newlines:
            line += newlines
            line_start = m.start() + m.group().rindex("\n") + 1
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# Unevaluated integer expressions: ints, names, or (op, lhs, rhs) / ("neg", e).
IntExpr = Union[int, str, tuple]


def _eval_int(e: IntExpr, env: dict[str, int], where: Token) -> int:
    if isinstance(e, int):
        return e
    if isinstance(e, str):
        if e not in env:
            raise DominionSyntaxError(f"unbound identifier {e!r}", where.line, where.col)
        return env[e]
    if e[0] == "neg":
        return -_eval_int(e[1], env, where)
    op, lhs, rhs = e
    a, b = _eval_int(lhs, env, where), _eval_int(rhs, env, where)
    return a + b if op == "+" else a - b if op == "-" else a * b


# Constraint templates mirror the model AST but hold IntExprs.
@dataclass(frozen=True)
class _TVar:
    array: str
    index: IntExpr
    tok: Token


@dataclass(frozen=True)
class _TLit:
    value: IntExpr
    tok: Token


@dataclass(frozen=True)
class _TAdd:
    base: object
    offset: IntExpr
    tok: Token


@dataclass(frozen=True)
class _TCon:
    label: str
    kind: str
    args: tuple
    tok: Token


@dataclass(frozen=True)
class Comprehension:
    """A constraint template plus ``(name, lower, upper)`` inclusive generators."""

    template: _TCon
    generators: tuple[tuple[str, IntExpr, IntExpr], ...]


def _label_suffix(values: tuple[int, ...]) -> str:
    return "".join(f"_{v}" if v >= 0 else f"_m{-v}" for v in values)


def _instantiate(t: _TCon, env: dict[str, int], suffix: str, arrays: dict[str, VarDecl]) -> Constraint:
    def ref(tv: _TVar) -> VarRef:
        if tv.array not in arrays:
            raise DominionSyntaxError(f"unknown array {tv.array!r}", tv.tok.line, tv.tok.col)
        idx = _eval_int(tv.index, env, tv.tok)
        if not 0 <= idx < arrays[tv.array].length:
            raise DominionSyntaxError(f"index {idx} out of range for {tv.array!r}", tv.tok.line, tv.tok.col)
        return VarRef(tv.array, idx)

    def expr(te):
        if isinstance(te, _TVar):
            return Var(ref(te))
        if isinstance(te, _TLit):
            return IntLit(_eval_int(te.value, env, te.tok))
        base = expr(te.base)
        offset = _eval_int(te.offset, env, te.tok)
        if isinstance(base, Add):
            return Add(base.base, base.offset + offset)
        return Add(base, offset)

    if t.kind == "alldiff":
        refs = []
        for item in t.args:
            if isinstance(item, str):
                if item not in arrays:
                    raise DominionSyntaxError(f"unknown array {item!r}", t.tok.line, t.tok.col)
                refs.extend(VarRef(item, i) for i in range(arrays[item].length))
            else:
                refs.append(ref(item))
        body = AllDiff(tuple(refs))
    elif t.kind in ("eq", "leq"):
        cls = Eq if t.kind == "eq" else Leq
        body = cls(expr(t.args[0]), expr(t.args[1]))
    elif t.kind == "not":
        body = Not(_instantiate(t.args[0], env, suffix, arrays))
    else:
        body = And(tuple(_instantiate(p, env, suffix, arrays) for p in t.args))
    return Constraint(t.label + suffix, body)


def expand_comprehension(
    c: Comprehension, params: dict[str, int], arrays: dict[str, VarDecl] | None = None
) -> list[Constraint]:
    """Ground every instance of ``c`` in lexicographic generator order.

    Later generators may refer to earlier ones.  ``arrays`` defaults to
    "whatever the template mentions, unbounded".
    """
    if arrays is None:
        arrays = _ArraysAnyLength()
    out: list[Constraint] = []

    def walk(i: int, env: dict[str, int], values: tuple[int, ...]):
        if i == len(c.generators):
            out.append(_instantiate(c.template, env, _label_suffix(values), arrays))
            return
        name, lo, hi = c.generators[i]
        lo_v = _eval_int(lo, env, c.template.tok)
        hi_v = _eval_int(hi, env, c.template.tok)
        for v in range(lo_v, hi_v + 1):
            walk(i + 1, {**env, name: v}, values + (v,))

    walk(0, dict(params), ())
    return out


class _ArraysAnyLength(dict):
    def __missing__(self, name):
        return VarDecl(name, INT64_MAX, Domain.range(0, 0))

    def __contains__(self, name):
        return True


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.pos = 0
        self.params: dict[str, int] = {}
        self.arrays: dict[str, VarDecl] = {}
        self.lengths: dict[str, int] = {}

    # token helpers
    @property
    def tok(self) -> Token:
        return self.tokens[self.pos]

    def peek(self, offset: int = 1) -> Token:
        return self.tokens[min(self.pos + offset, len(self.tokens) - 1)]

    def error(self, message: str, tok: Token | None = None):
        tok = tok or self.tok
        return DominionSyntaxError(message, tok.line, tok.col)

    def at(self, text: str) -> bool:
        return self.tok.kind != "eof" and self.tok.text == text

    def expect(self, text: str) -> Token:
        if not self.at(text):
            found = self.tok.text or "end of file"
            raise self.error(f"expected {text!r}, found {found!r}")
        self.pos += 1
        return self.tokens[self.pos - 1]

    def ident(self) -> Token:
        if self.tok.kind != "ident":
            raise self.error(f"expected identifier, found {self.tok.text or 'end of file'!r}")
        self.pos += 1
        return self.tokens[self.pos - 1]

    # integer expressions
    def intexpr(self) -> IntExpr:
        e = self.term()
        while self.at("+") or self.at("-"):
            op = self.expect(self.tok.text).text
            e = (op, e, self.term())
        return e

    def term(self) -> IntExpr:
        e = self.factor()
        while self.at("*"):
            self.expect("*")
            e = ("*", e, self.factor())
        return e

    def factor(self) -> IntExpr:
        tok = self.tok
        if self.at("-"):
            self.expect("-")
            return ("neg", self.factor())
        if self.at("("):
            self.expect("(")
            e = self.intexpr()
            self.expect(")")
            return e
        if tok.kind == "int":
            self.pos += 1
            value = int(tok.text)
            if value > INT64_MAX:
                raise self.error("integer literal out of 64-bit range", tok)
            return value
        if tok.kind == "ident":
            self.pos += 1
            return tok.text
        raise self.error(f"expected integer expression, found {tok.text or 'end of file'!r}")

    def const(self) -> int:
        tok = self.tok
        value = _eval_int(self.intexpr(), self.params, tok)
        if not INT64_MIN <= value <= INT64_MAX:
            raise self.error("integer out of 64-bit range", tok)
        return value

    # model structure
    def model(self) -> Model:
        start = self.tok
        for word in ("language", "Dominion"):
            if not self.at(word):
                raise self.error(f"model must start with {HEADER!r}", start)
            self.pos += 1
        if not (self.tok.text == "0" and self.peek().text == "." and self.peek(2).text == "1"):
            raise self.error("unsupported language version, expected 0.1")
        self.pos += 3

        while self.at("letting"):
            self.expect("letting")
            name = self.ident()
            self.expect("=")
            if name.text in self.params:
                raise self.error(f"{name.text!r} bound twice", name)
            self.params[name.text] = self.const()

        while self.at("dim"):
            self.expect("dim")
            name = self.ident()
            self.expect("[")
            length = self.const()
            self.expect("]")
            self.expect(":")
            self.expect("int")
            if name.text in self.lengths:
                raise self.error(f"array {name.text!r} declared twice", name)
            if length < 0:
                raise self.error("negative array length", name)
            self.lengths[name.text] = length

        while self.at("find"):
            self.expect("find")
            name = self.ident()
            if name.text not in self.lengths:
                raise self.error(f"find for undeclared array {name.text!r}", name)
            if name.text in self.arrays:
                raise self.error(f"find given twice for {name.text!r}", name)
            self.expect("[")
            self.expect("..")
            self.expect("]")
            self.expect(":")
            self.expect("int")
            brace = self.expect("{")
            values: set[int] = set()
            while True:
                lo = self.const()
                hi = lo
                if self.at(".."):
                    self.expect("..")
                    hi = self.const()
                values.update(range(lo, hi + 1))
                if not self.at(","):
                    break
                self.expect(",")
            self.expect("}")
            domain = Domain.from_values(values)
            if not domain:
                raise self.error(f"empty domain for {name.text!r}", brace)
            self.arrays[name.text] = VarDecl(name.text, self.lengths[name.text], domain)

        missing = [n for n in self.lengths if n not in self.arrays]
        if missing:
            raise self.error(f"no find for array {missing[0]!r}")

        self.expect("such")
        self.expect("that")
        constraints: list[Constraint] = []
        seen: set[str] = set()
        while self.tok.kind != "eof":
            label = self.ident()
            if self.at("["):
                self.expect("[")
                template = self.atom(label)
                self.expect("|")
                gens = [self.generator()]
                while self.at(","):
                    self.expect(",")
                    gens.append(self.generator())
                self.expect("]")
                ground = expand_comprehension(Comprehension(template, tuple(gens)), self.params, self.arrays)
            else:
                ground = [_instantiate(self.atom(label), self.params, "", self.arrays)]
            for c in ground:
                for lab in all_labels(c):
                    if lab in seen:
                        raise self.error(f"duplicate constraint label {lab!r}", label)
                    seen.add(lab)
            constraints.extend(ground)

        decls = tuple(self.arrays[n] for n in self.lengths)
        return Model(tuple(self.params.items()), decls, tuple(constraints))

    def generator(self) -> tuple[str, IntExpr, IntExpr]:
        name = self.ident()
        self.expect("in")
        self.expect("{")
        lo = self.intexpr()
        self.expect("..")
        hi = self.intexpr()
        self.expect("}")
        return name.text, lo, hi

    def atom(self, label: Token) -> _TCon:
        tok = self.tok
        if tok.kind != "ident" or tok.text not in ATOMS or self.peek().text != "(":
            raise self.error(f"expected one of {', '.join(ATOMS)} after label {label.text!r}", tok)
        kind = tok.text
        self.pos += 1
        self.expect("(")
        if kind == "alldiff":
            args: list = []
            while True:
                name = self.ident()
                if self.at("[") and self.peek().text == "..":
                    self.expect("[")
                    self.expect("..")
                    self.expect("]")
                    args.append(name.text)
                else:
                    self.expect("[")
                    args.append(_TVar(name.text, self.intexpr(), name))
                    self.expect("]")
                if not self.at(","):
                    break
                self.expect(",")
        elif kind in ("eq", "leq"):
            lhs = self.expr()
            self.expect(",")
            args = [lhs, self.expr()]
        elif kind == "not":
            args = [self.atom(self.ident())]
        else:
            args = [self.atom(self.ident())]
            while self.at(","):
                self.expect(",")
                args.append(self.atom(self.ident()))
            if len(args) < 2:
                raise self.error("and() needs at least two parts", tok)
        self.expect(")")
        return _TCon(label.text, kind, tuple(args), label)

    def expr(self):
        tok = self.tok
        if tok.kind == "ident" and tok.text == "add" and self.peek().text == "(":
            self.pos += 1
            self.expect("(")
            base = self.expr()
            self.expect(",")
            offset = self.intexpr()
            self.expect(")")
            return _TAdd(base, offset, tok)
        if tok.kind == "ident" and self.peek().text == "[" and tok.text in self.lengths:
            self.pos += 1
            self.expect("[")
            index = self.intexpr()
            self.expect("]")
            return _TVar(tok.text, index, tok)
        return _TLit(self.intexpr(), tok)


def parse_model(text: str) -> Model:
    """Parse model text; raises :class:`DominionSyntaxError` with a position on bad input."""
    return _Parser(text).model()


@dataclass(frozen=True)
class SourceModel:
    text: str
    model: Model
    origin: str = "generated"


def read_source(path: str | Path) -> SourceModel:
    text = Path(path).read_text(encoding="utf-8")
    return SourceModel(text, parse_model(text), str(path))


def load_model(path: str | Path) -> Model:
    return read_source(path).model


def _format_expr(e) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, Var):
        return str(e.ref)
    return f"add({_format_expr(e.base)}, {e.offset})"


def _format_atom(c: Constraint, m: Model | None) -> str:
    body = c.body
    if isinstance(body, AllDiff):
        refs = body.vars
        if m is not None and refs and len({r.array for r in refs}) == 1:
            decl = m.decl(refs[0].array)
            if refs == tuple(VarRef(decl.name, i) for i in range(decl.length)):
                return f"alldiff({decl.name}[..])"
        if not refs:
            raise ModelError("alldiff over no variables cannot be written")
        return "alldiff(" + ", ".join(map(str, refs)) + ")"
    if isinstance(body, Eq):
        return f"eq({_format_expr(body.lhs)}, {_format_expr(body.rhs)})"
    if isinstance(body, Leq):
        return f"leq({_format_expr(body.lhs)}, {_format_expr(body.rhs)})"
    if isinstance(body, Not):
        return f"not({format_constraint(body.inner, m)})"
    return "and(" + ", ".join(format_constraint(p, m) for p in body.parts) + ")"


def format_constraint(c: Constraint, m: Model | None = None) -> str:
    """One ground constraint as ``label atom``."""
    return f"{c.label} {_format_atom(c, m)}"


def _format_domain(d: Domain) -> str:
    return "{" + ", ".join(str(lo) if lo == hi else f"{lo}..{hi}" for lo, hi in d.intervals) + "}"


def serialize_model(m: Model) -> str:
    lines = [HEADER]
    lines += [f"letting {name} = {value}" for name, value in m.params]
    lines += [f"dim {d.name}[{d.length}]: int" for d in m.vars]
    lines += [f"find {d.name}[..]: int {_format_domain(d.domain)}" for d in m.vars]
    lines.append("such that")
    lines += [format_constraint(c, m) for c in m.constraints]
    return "\n".join(lines) + "\n"
