"""Labeled abstract syntax and a reader for the parenthesized surface form.

Every subexpression carries a program point, a positive integer unique
within one program.  Points come from explicit ``@N`` annotations in the
source; anything left unlabeled is numbered by a pre-order pass that
skips ids already taken explicitly.

Surface form (EBNF sketch)::

    o    ::= term ('@' INT)?
    term ::= INT | 'true' | 'false' | '()' | IDENT
           | '(' 'λ' IDENT '.' o ')'              abstraction (λ may be spelled \\)
           | '(' o o ')'                          application
           | '(' OP o o ')'                       OP in + - * < = && ||
           | '(' 'let' IDENT o o ')'
           | '(' 'let' 'rec' IDENT o o ')'
           | '(' 'case' o '[' pat '->' o (',' pat '->' o)* ']' ')'
           | '(' 'ref' o ')'
           | '(' o ':=' o ')'
           | '(' '!' o ')'
           | '(' o ')'                            grouping
    pat  ::= INT | 'true' | 'false' | IDENT | '_' | '(' pat (',' pat)* ')'

An unlabeled group ``(x@5)`` is transparent.  A labeled group around an
unlabeled term, ``(5)@4``, just labels the term.  A labeled group around
an already-labeled occurrence, ``(5@3)@4``, denotes a pass-through node
that owns the outer point; this is how a value position carries a point
of its own on top of the inner expression's point.

Parsing alpha-renames duplicate binders so that every binding occurrence
introduces a distinct name.  Programs whose binders are already distinct
come through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass


PRIM_OPS = ("+", "-", "*", "<", "=", "&&", "||")

_KEYWORDS = frozenset({"let", "rec", "case", "ref", "true", "false"})


class SyntaxModuleError(Exception):
    """Base for everything raised by this module."""


class ParseError(SyntaxModuleError):
    def __init__(self, message: str, line: int, col: int):
        super().__init__(f"{message} (line {line}, column {col})")
        self.line = line
        self.col = col


class DuplicatePointError(SyntaxModuleError):
    def __init__(self, point: int):
        super().__init__(f"program point {point} is annotated more than once")
        self.point = point


class CaseArityError(SyntaxModuleError):
    """A case alternative is not of the shape ``pattern -> occurrence``."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


class Expression:
    __slots__ = ()


@dataclass(frozen=True)
class Occurrence:
    expr: Expression
    point: int

    def __str__(self) -> str:
        return pretty(self)


@dataclass(frozen=True)
class Variable(Expression):
    name: str


@dataclass(frozen=True)
class Constant(Expression):
    # int for naturals, bool for truth values, () for unit
    value: object


@dataclass(frozen=True)
class Abstraction(Expression):
    param: str
    body: Occurrence


@dataclass(frozen=True)
class Application(Expression):
    fn: Occurrence
    arg: Occurrence


@dataclass(frozen=True)
class FunctionalApplication(Expression):
    op: str
    left: Occurrence
    right: Occurrence


@dataclass(frozen=True)
class Let(Expression):
    name: str
    bound: Occurrence
    body: Occurrence


@dataclass(frozen=True)
class LetRec(Expression):
    name: str
    bound: Occurrence
    body: Occurrence


@dataclass(frozen=True)
class Case(Expression):
    scrutinee: Occurrence
    patterns: tuple
    clauses: tuple


@dataclass(frozen=True)
class Ref(Expression):
    init: Occurrence


@dataclass(frozen=True)
class Assign(Expression):
    target: Occurrence
    value: Occurrence


@dataclass(frozen=True)
class Deref(Expression):
    ref: Occurrence


@dataclass(frozen=True)
class Group(Expression):
    """Pass-through wrapper for a doubly labeled position like (5@3)@4."""

    inner: Occurrence


class Pattern:
    __slots__ = ()


@dataclass(frozen=True)
class PNat(Pattern):
    value: int


@dataclass(frozen=True)
class PBool(Pattern):
    value: bool


@dataclass(frozen=True)
class PVar(Pattern):
    name: str


@dataclass(frozen=True)
class PWildcard(Pattern):
    pass


@dataclass(frozen=True)
class PTuple(Pattern):
    items: tuple


# ---------------------------------------------------------------------------
# Lexer
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Token:
    kind: str  # INT IDENT PUNCT OP EOF
    text: str
    line: int
    col: int


_PUNCT2 = ("->", ":=", "&&", "||")
_PUNCT1 = "()[].,@!_" + "+-*<="


def _lex(src: str) -> list[_Token]:
    toks: list[_Token] = []
    line, col = 1, 1
    i = 0
    n = len(src)
    while i < n:
        ch = src[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and src[i] != "\n":
                i += 1
            continue
        two = src[i : i + 2]
        if two in _PUNCT2:
            toks.append(_Token("PUNCT", two, line, col))
            i += 2
            col += 2
            continue
        if ch in ("λ", "\\"):
            toks.append(_Token("PUNCT", "λ", line, col))
            i += 1
            col += 1
            continue
        if ch.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            toks.append(_Token("INT", src[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch.isalpha():
            j = i
            while j < n and (src[j].isalnum() or src[j] == "_" or src[j] == "'"):
                j += 1
            toks.append(_Token("IDENT", src[i:j], line, col))
            col += j - i
            i = j
            continue
        if ch in _PUNCT1:
            toks.append(_Token("PUNCT", ch, line, col))
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {ch!r}", line, col)
    toks.append(_Token("EOF", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _RawOcc:
    """Parse-time occurrence whose point may still be unassigned."""

    __slots__ = ("expr", "point")

    def __init__(self, expr, point):
        self.expr = expr
        self.point = point


class _Parser:
    def __init__(self, tokens: list[_Token]):
        self.toks = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> _Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> _Token:
        tok = self.toks[self.pos]
        if tok.kind != "EOF":
            self.pos += 1
        return tok

    def expect(self, text: str) -> _Token:
        tok = self.next()
        if tok.text != text:
            raise ParseError(f"expected {text!r}, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return tok

    def fail(self, message: str):
        tok = self.peek()
        raise ParseError(message, tok.line, tok.col)

    # -- occurrences --------------------------------------------------------

    def occurrence(self) -> _RawOcc:
        occ = self.term()
        if self.peek().text == "@":
            self.next()
            point = self.int_literal()
            if occ.point is None:
                occ = _RawOcc(occ.expr, point)
            else:
                # labeled group around a labeled occurrence: pass-through node
                occ = _RawOcc(Group(_finalize_placeholder(occ)), point)
        return occ

    def int_literal(self) -> int:
        tok = self.next()
        if tok.kind != "INT":
            raise ParseError(f"expected an integer, found {tok.text!r}", tok.line, tok.col)
        return int(tok.text)

    def term(self) -> _RawOcc:
        tok = self.peek()
        if tok.kind == "INT":
            self.next()
            return _RawOcc(Constant(int(tok.text)), None)
        if tok.kind == "IDENT":
            self.next()
            if tok.text == "true":
                return _RawOcc(Constant(True), None)
            if tok.text == "false":
                return _RawOcc(Constant(False), None)
            if tok.text in _KEYWORDS:
                raise ParseError(f"keyword {tok.text!r} cannot appear here", tok.line, tok.col)
            return _RawOcc(Variable(tok.text), None)
        if tok.text == "(":
            return self.parenthesized()
        self.fail(f"unexpected token {tok.text or 'end of input'!r}")

    def parenthesized(self) -> _RawOcc:
        self.expect("(")
        tok = self.peek()
        if tok.text == ")":
            self.next()
            return _RawOcc(Constant(()), None)
        if tok.text == "λ":
            return self.abstraction()
        if tok.text == "!":
            self.next()
            ref = self.occurrence()
            self.expect(")")
            return _RawOcc(Deref(ref), None)
        if tok.text in PRIM_OPS:
            self.next()
            left = self.occurrence()
            right = self.occurrence()
            self.expect(")")
            return _RawOcc(FunctionalApplication(tok.text, left, right), None)
        if tok.kind == "IDENT" and tok.text == "let":
            return self.let_form()
        if tok.kind == "IDENT" and tok.text == "case":
            return self.case_form()
        if tok.kind == "IDENT" and tok.text == "ref":
            self.next()
            init = self.occurrence()
            self.expect(")")
            return _RawOcc(Ref(init), None)
        first = self.occurrence()
        after = self.peek()
        if after.text == ")":
            self.next()
            return first  # transparent grouping
        if after.text == ":=":
            self.next()
            value = self.occurrence()
            self.expect(")")
            return _RawOcc(Assign(first, value), None)
        second = self.occurrence()
        self.expect(")")
        return _RawOcc(Application(first, second), None)

    def abstraction(self) -> _RawOcc:
        self.expect("λ")
        name = self.binder()
        self.expect(".")
        body = self.occurrence()
        self.expect(")")
        return _RawOcc(Abstraction(name, body), None)

    def let_form(self) -> _RawOcc:
        self.expect("let")
        recursive = False
        if self.peek().kind == "IDENT" and self.peek().text == "rec":
            self.next()
            recursive = True
        name = self.binder()
        bound = self.occurrence()
        body = self.occurrence()
        self.expect(")")
        ctor = LetRec if recursive else Let
        return _RawOcc(ctor(name, bound, body), None)

    def case_form(self) -> _RawOcc:
        self.expect("case")
        scrutinee = self.occurrence()
        self.expect("[")
        patterns = []
        clauses = []
        while True:
            pat = self.pattern()
            tok = self.next()
            if tok.text != "->":
                raise CaseArityError(
                    f"case alternative needs 'pattern -> occurrence', found {tok.text or 'end of input'!r} "
                    f"at line {tok.line}, column {tok.col}"
                )
            clause = self.occurrence()
            patterns.append(pat)
            clauses.append(clause)
            tok = self.next()
            if tok.text == "]":
                break
            if tok.text != ",":
                raise ParseError(f"expected ',' or ']', found {tok.text!r}", tok.line, tok.col)
        self.expect(")")
        return _RawOcc(Case(scrutinee, tuple(patterns), tuple(clauses)), None)

    def ident(self) -> str:
        tok = self.next()
        if tok.kind != "IDENT" or tok.text in _KEYWORDS:
            raise ParseError(f"expected a name, found {tok.text or 'end of input'!r}", tok.line, tok.col)
        return tok.text

    def binder(self) -> str:
        # A binding position also accepts the throwaway name "_".
        if self.peek().text == "_":
            self.next()
            return "_"
        return self.ident()

    def pattern(self) -> Pattern:
        tok = self.next()
        if tok.kind == "INT":
            return PNat(int(tok.text))
        if tok.text == "true":
            return PBool(True)
        if tok.text == "false":
            return PBool(False)
        if tok.text == "_":
            return PWildcard()
        if tok.kind == "IDENT" and tok.text not in _KEYWORDS:
            return PVar(tok.text)
        if tok.text == "(":
            items = [self.pattern()]
            while self.peek().text == ",":
                self.next()
                items.append(self.pattern())
            self.expect(")")
            return PTuple(tuple(items))
        raise ParseError(f"expected a pattern, found {tok.text or 'end of input'!r}", tok.line, tok.col)


def _finalize_placeholder(raw: _RawOcc) -> Occurrence:
    """Wrap a labeled raw occurrence so it can sit inside a Group node.

    The inner tree may still contain raw children with unassigned points;
    the point-assignment pass walks through this wrapper and rebuilds the
    whole tree with proper occurrences, so only the shape matters here.
    """

    return Occurrence(raw.expr, raw.point)


# ---------------------------------------------------------------------------
# Point assignment and binder freshening
# ---------------------------------------------------------------------------


def _children(expr: Expression):
    match expr:
        case Variable() | Constant():
            return ()
        case Abstraction(_, body):
            return (body,)
        case Application(fn, arg):
            return (fn, arg)
        case FunctionalApplication(_, left, right):
            return (left, right)
        case Let(_, bound, body) | LetRec(_, bound, body):
            return (bound, body)
        case Case(scrutinee, _, clauses):
            return (scrutinee, *clauses)
        case Ref(init):
            return (init,)
        case Assign(target, value):
            return (target, value)
        case Deref(ref):
            return (ref,)
        case Group(inner):
            return (inner,)
    raise TypeError(f"unknown expression {expr!r}")


def _rebuild(expr: Expression, children: tuple) -> Expression:
    match expr:
        case Variable() | Constant():
            return expr
        case Abstraction(param, _):
            return Abstraction(param, children[0])
        case Application(_, _):
            return Application(children[0], children[1])
        case FunctionalApplication(op, _, _):
            return FunctionalApplication(op, children[0], children[1])
        case Let(name, _, _):
            return Let(name, children[0], children[1])
        case LetRec(name, _, _):
            return LetRec(name, children[0], children[1])
        case Case(_, patterns, _):
            return Case(children[0], patterns, tuple(children[1:]))
        case Ref(_):
            return Ref(children[0])
        case Assign(_, _):
            return Assign(children[0], children[1])
        case Deref(_):
            return Deref(children[0])
        case Group(_):
            return Group(children[0])
    raise TypeError(f"unknown expression {expr!r}")


def _collect_explicit(occ, seen: set):
    point = occ.point
    if point is not None:
        if point in seen:
            raise DuplicatePointError(point)
        seen.add(point)
    for child in _children(occ.expr):
        _collect_explicit(child, seen)


def _assign_points(occ, taken: set, counter: list) -> Occurrence:
    point = occ.point
    if point is None:
        while counter[0] in taken:
            counter[0] += 1
        point = counter[0]
        taken.add(point)
    kids = tuple(_assign_points(c, taken, counter) for c in _children(occ.expr))
    return Occurrence(_rebuild(occ.expr, kids), point)


def _freshen(occ: Occurrence, env: dict, taken: set, avoid: set, counter: list) -> Occurrence:
    """Rename duplicate binders so every binding occurrence is unique.

    ``taken`` holds binder names accepted so far; a binder keeps its name
    only while it is still unclaimed.  ``avoid`` holds every identifier
    appearing anywhere in the program plus every generated name, so no
    rename can capture or shadow something that already exists.
    """

    def fresh(name: str) -> str:
        if name not in taken:
            taken.add(name)
            return name
        while True:
            counter[0] += 1
            base = name if name != "_" else "wild"
            candidate = f"{base}_{counter[0]}"
            if candidate not in avoid and candidate not in taken:
                taken.add(candidate)
                avoid.add(candidate)
                return candidate

    expr = occ.expr
    match expr:
        case Variable(name):
            return Occurrence(Variable(env.get(name, name)), occ.point)
        case Constant():
            return occ
        case Abstraction(param, body):
            new = fresh(param)
            return Occurrence(
                Abstraction(new, _freshen(body, {**env, param: new}, taken, avoid, counter)), occ.point
            )
        case Let(name, bound, body):
            bound2 = _freshen(bound, env, taken, avoid, counter)
            new = fresh(name)
            body2 = _freshen(body, {**env, name: new}, taken, avoid, counter)
            return Occurrence(Let(new, bound2, body2), occ.point)
        case LetRec(name, bound, body):
            new = fresh(name)
            inner = {**env, name: new}
            return Occurrence(
                LetRec(
                    new,
                    _freshen(bound, inner, taken, avoid, counter),
                    _freshen(body, inner, taken, avoid, counter),
                ),
                occ.point,
            )
        case Case(scrutinee, patterns, clauses):
            scrut2 = _freshen(scrutinee, env, taken, avoid, counter)
            pats2 = []
            clauses2 = []
            for pat, clause in zip(patterns, clauses):
                if isinstance(pat, PVar):
                    new = fresh(pat.name)
                    pats2.append(PVar(new))
                    clauses2.append(_freshen(clause, {**env, pat.name: new}, taken, avoid, counter))
                else:
                    pats2.append(pat)
                    clauses2.append(_freshen(clause, env, taken, avoid, counter))
            return Occurrence(Case(scrut2, tuple(pats2), tuple(clauses2)), occ.point)
        case _:
            kids = tuple(_freshen(c, env, taken, avoid, counter) for c in _children(expr))
            return Occurrence(_rebuild(expr, kids), occ.point)


def parse(source: str) -> Occurrence:
    """Parse a surface program into a fully labeled occurrence tree."""

    parser = _Parser(_lex(source))
    raw = parser.occurrence()
    trailing = parser.peek()
    if trailing.kind != "EOF":
        raise ParseError(f"unexpected trailing input {trailing.text!r}", trailing.line, trailing.col)
    seen: set = set()
    _collect_explicit(raw, seen)
    tree = _assign_points(raw, seen, [1])
    binders: list = []
    _binder_list(tree, binders)
    if len(binders) == len(set(binders)):
        return tree
    avoid = set(binders)
    _free_names(tree, frozenset(), avoid)
    return _freshen(tree, {}, set(), avoid, [0])


def _binder_list(occ: Occurrence, out: list):
    expr = occ.expr
    if isinstance(expr, (Let, LetRec)):
        out.append(expr.name)
    elif isinstance(expr, Abstraction):
        out.append(expr.param)
    elif isinstance(expr, Case):
        for pat in expr.patterns:
            if isinstance(pat, PVar):
                out.append(pat.name)
    for child in _children(expr):
        _binder_list(child, out)


def _free_names(occ: Occurrence, bound: frozenset, out: set):
    expr = occ.expr
    match expr:
        case Variable(name):
            if name not in bound:
                out.add(name)
        case Abstraction(param, body):
            _free_names(body, bound | {param}, out)
        case Let(name, b, body):
            _free_names(b, bound, out)
            _free_names(body, bound | {name}, out)
        case LetRec(name, b, body):
            _free_names(b, bound | {name}, out)
            _free_names(body, bound | {name}, out)
        case Case(scrutinee, patterns, clauses):
            _free_names(scrutinee, bound, out)
            for pat, clause in zip(patterns, clauses):
                extra = {pat.name} if isinstance(pat, PVar) else set()
                _free_names(clause, bound | extra, out)
        case _:
            for child in _children(expr):
                _free_names(child, bound, out)


# ---------------------------------------------------------------------------
# Queries and printing
# ---------------------------------------------------------------------------


def free_vars(occ: Occurrence) -> frozenset:
    """Names that occur free in the occurrence."""

    out: set = set()
    _free_names(occ, frozenset(), out)
    return frozenset(out)


def all_points(occ: Occurrence) -> frozenset:
    out: set = set()

    def walk(o):
        out.add(o.point)
        for child in _children(o.expr):
            walk(child)

    walk(occ)
    return frozenset(out)


def subterm_at(occ: Occurrence, point: int):
    """The subterm labeled with the given point, or None."""

    if occ.point == point:
        return occ
    for child in _children(occ.expr):
        hit = subterm_at(child, point)
        if hit is not None:
            return hit
    return None


def children(occ: Occurrence) -> tuple:
    return _children(occ.expr)


def _pretty_pattern(pat: Pattern) -> str:
    match pat:
        case PNat(v):
            return str(v)
        case PBool(v):
            return "true" if v else "false"
        case PVar(name):
            return name
        case PWildcard():
            return "_"
        case PTuple(items):
            return "(" + ", ".join(_pretty_pattern(i) for i in items) + ")"
    raise TypeError(f"unknown pattern {pat!r}")


def pretty(occ: Occurrence) -> str:
    """Render with every point explicit; parse(pretty(o)) == o."""

    expr = occ.expr
    p = occ.point
    match expr:
        case Variable(name):
            return f"{name}@{p}"
        case Constant(value):
            if value is True:
                return f"true@{p}"
            if value is False:
                return f"false@{p}"
            if value == ():
                return f"()@{p}"
            return f"{value}@{p}"
        case Abstraction(param, body):
            return f"(λ {param}. {pretty(body)})@{p}"
        case Application(fn, arg):
            return f"({pretty(fn)} {pretty(arg)})@{p}"
        case FunctionalApplication(op, left, right):
            return f"({op} {pretty(left)} {pretty(right)})@{p}"
        case Let(name, bound, body):
            return f"(let {name} {pretty(bound)} {pretty(body)})@{p}"
        case LetRec(name, bound, body):
            return f"(let rec {name} {pretty(bound)} {pretty(body)})@{p}"
        case Case(scrutinee, patterns, clauses):
            alts = ", ".join(
                f"{_pretty_pattern(pat)} -> {pretty(clause)}" for pat, clause in zip(patterns, clauses)
            )
            return f"(case {pretty(scrutinee)} [{alts}])@{p}"
        case Ref(init):
            return f"(ref {pretty(init)})@{p}"
        case Assign(target, value):
            return f"({pretty(target)} := {pretty(value)})@{p}"
        case Deref(ref):
            return f"(!{pretty(ref)})@{p}"
        case Group(inner):
            return f"({pretty(inner)})@{p}"
    raise TypeError(f"unknown expression {expr!r}")
