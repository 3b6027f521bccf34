"""Collecting big-step semantics with dependency tracking.

Evaluation produces, besides the value, a *dependency pair* (L, V): the
location occurrences and variable occurrences the value was computed
from.  A side table ``w`` records, for every binding made during the
run, the pair the bound value carried at binding time; keys of ``w`` are
atomic occurrences, a subject (variable name or store location) tagged
with the program point the binding happened at.

Alongside ``w`` the run grows a strict order on program points with
three kinds of edges:

* dependency edges: every point mentioned in a binding's pair precedes
  the binding point;
* threading edges: the point a binding rule was entered from precedes
  the binding point (assignments are exempt: an assignment is ordered
  by its chaining edge and the written value's dependency edges);
* chaining edges: a subject's previous binding point precedes its new
  one, so the bindings of one subject always form a chain and the
  interpretation of a subject is the chain's top.

Self edges are dropped, and an edge whose addition would close a cycle
is dropped too; the latter can only be provoked by recursive programs,
which the type system rejects.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .syntax import (
    Abstraction,
    Application,
    Assign,
    Case,
    Constant,
    Deref,
    FunctionalApplication,
    Group,
    Let,
    LetRec,
    Occurrence,
    PBool,
    PNat,
    PTuple,
    PVar,
    PWildcard,
    Pattern,
    Ref,
    Variable,
)


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Location:
    index: int

    def __str__(self) -> str:
        return f"loc{self.index}"


@dataclass(eq=False)
class Closure:
    param: str
    body: Occurrence
    env: dict
    lam_point: int

    def __str__(self) -> str:
        return f"<fun@{self.lam_point}>"


@dataclass(eq=False)
class RecClosure(Closure):
    name: str = ""
    bind_point: int = 0

    def __str__(self) -> str:
        return f"<rec {self.name}@{self.lam_point}>"


def show_value(value: object) -> str:
    if value is True:
        return "true"
    if value is False:
        return "false"
    if value == () and isinstance(value, tuple):
        return "()"
    if isinstance(value, (int, Location, Closure)):
        return str(value)
    return repr(value)


# ---------------------------------------------------------------------------
# Dependency pairs and the collected state
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DepPair:
    """A set of location occurrences and a set of variable occurrences.

    Members are (subject, point) tuples; subjects in ``locs`` are
    Location values, subjects in ``vars`` are variable names.
    """

    locs: frozenset = frozenset()
    vars: frozenset = frozenset()

    def union(self, other: "DepPair") -> "DepPair":
        return DepPair(self.locs | other.locs, self.vars | other.vars)

    def points(self) -> frozenset:
        return frozenset(pt for _, pt in self.locs) | frozenset(pt for _, pt in self.vars)

    def is_empty(self) -> bool:
        return not self.locs and not self.vars


EMPTY_PAIR = DepPair()


def var_pair(name: str, point: int) -> DepPair:
    return DepPair(frozenset(), frozenset({(name, point)}))


class DepState:
    """The function w plus the realized order on program points."""

    def __init__(self):
        self.w: dict = {}
        self.edges: set = set()
        self.latest: dict = {}
        self._succ: dict = {}

    # -- order ---------------------------------------------------------------

    def reachable(self, start: int, goal: int) -> bool:
        if start == goal:
            return True
        stack = [start]
        seen = {start}
        while stack:
            node = stack.pop()
            for nxt in self._succ.get(node, ()):
                if nxt == goal:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def add_edge(self, before: int, after: int):
        if before == after:
            return
        if self.reachable(after, before):
            return  # would close a cycle; only recursion can get here
        self.edges.add((before, after))
        self._succ.setdefault(before, set()).add(after)

    def precedes(self, a: int, b: int) -> bool:
        """a strictly precedes b in the realized order (transitively)."""

        return a != b and self.reachable(a, b)

    def closure(self) -> frozenset:
        """All strictly ordered pairs, transitively."""

        out = set()
        for start in self._succ:
            stack = list(self._succ[start])
            seen = set()
            while stack:
                node = stack.pop()
                if node in seen:
                    continue
                seen.add(node)
                out.add((start, node))
                stack.extend(self._succ.get(node, ()))
        return frozenset(out)

    # -- bindings --------------------------------------------------------------

    def bind(self, subject, point: int, pair: DepPair, incoming, threading: bool = True):
        for dep_point in pair.points():
            self.add_edge(dep_point, point)
        if threading and incoming is not None:
            self.add_edge(incoming, point)
        previous = self.latest.get(subject)
        if previous is not None:
            self.add_edge(previous, point)
        key = (subject, point)
        if key in self.w:
            self.w[key] = self.w[key].union(pair)
        else:
            self.w[key] = pair
        self.latest[subject] = point

    def bound_points(self, subject) -> frozenset:
        return frozenset(pt for subj, pt in self.w if subj == subject)

    def ip(self, subject):
        """Interpretation: the top of the subject's binding chain.

        Returns the binding point, or None when the subject was never
        bound.  Chaining edges make the temporally last binding also the
        order-greatest one, so ``latest`` is the supremum.
        """

        return self.latest.get(subject)

    def subjects(self) -> frozenset:
        return frozenset(self.latest)


def transitive_closure(edges) -> frozenset:
    succ: dict = {}
    for a, b in edges:
        succ.setdefault(a, set()).add(b)
    out = set()
    for start in succ:
        stack = list(succ[start])
        seen = set()
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            out.add((start, node))
            stack.extend(succ.get(node, ()))
    return frozenset(out)


def points(obj) -> frozenset:
    """The occurring points of a dependency pair or of a whole w table.

    For a pair this is every point mentioned in it; for a w mapping it is
    every binding point plus every point mentioned in any bound pair.
    """

    if isinstance(obj, DepPair):
        return obj.points()
    out = set()
    for (_, point), pair in obj.items():
        out.add(point)
        out |= pair.points()
    return frozenset(out)


def induced_dependency_edges(w: dict) -> frozenset:
    """The dependency-direction edges of the order a w table induces.

    Every point mentioned in a binding's pair precedes the binding point.
    """

    out = set()
    for (_, point), pair in w.items():
        for dep_point in pair.points():
            if dep_point != point:
                out.add((dep_point, point))
    return frozenset(out)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class EvalError(Exception):
    def __init__(self, message: str, point: int):
        super().__init__(f"{message} (at point {point})")
        self.point = point


class UnboundVariable(EvalError):
    def __init__(self, name: str, point: int):
        super().__init__(f"unbound variable {name!r}", point)
        self.name = name


class NotAFunction(EvalError):
    def __init__(self, value, point: int):
        super().__init__(f"cannot apply non-function {show_value(value)}", point)


class NotAReference(EvalError):
    def __init__(self, value, point: int):
        super().__init__(f"expected a reference, found {show_value(value)}", point)


class MatchFailure(EvalError):
    def __init__(self, value, point: int):
        super().__init__(f"no pattern matches {show_value(value)}", point)


class UnsupportedPattern(EvalError):
    def __init__(self, point: int):
        super().__init__("unsupported pattern form", point)


class AmbiguousPredecessor(EvalError):
    def __init__(self, subject, points, point: int = 0):
        super().__init__(
            f"no unique greatest binding of {subject} among points {sorted(points)}", point
        )
        self.subject = subject
        self.points = frozenset(points)


class PrimTypeError(EvalError):
    def __init__(self, op: str, point: int):
        super().__init__(f"operator {op!r} applied to unsuitable operands", point)


class EvalBudgetExceeded(EvalError):
    def __init__(self, budget: int, point: int):
        super().__init__(f"evaluation exceeded the step budget of {budget}", point)
        self.budget = budget


# ---------------------------------------------------------------------------
# Pattern matching
# ---------------------------------------------------------------------------


def match(pattern: Pattern, value, point: int = 0) -> dict | None:
    """The bindings a successful match produces, or None on mismatch.

    Tuple patterns are rejected outright: the expression language has no
    tuple constructor, so no value could ever match one.
    """

    match pattern:
        case PNat(n):
            return {} if isinstance(value, int) and not isinstance(value, bool) and value == n else None
        case PBool(b):
            return {} if isinstance(value, bool) and value == b else None
        case PVar(name):
            return {name: value}
        case PWildcard():
            return {}
        case PTuple(_):
            raise UnsupportedPattern(point)
    raise TypeError(f"unknown pattern {pattern!r}")


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class StepEvent:
    kind: str  # "begin" | "end" | "bind"
    occ: Occurrence | None = None
    env: dict | None = None
    store: dict | None = None
    dep: DepState | None = None
    value: object = None
    pair: DepPair | None = None
    incoming: int | None = None
    subject: object = None
    point: int | None = None


@dataclass
class EvalOutcome:
    value: object
    pair: DepPair
    dep: DepState
    store: dict
    steps: int
    point: int | None = None
    loc_origin: dict = field(default_factory=dict)


def _apply_prim(op: str, left, right, point: int):
    def nat(x) -> bool:
        return isinstance(x, int) and not isinstance(x, bool)

    if op in ("+", "-", "*", "<"):
        if not (nat(left) and nat(right)):
            raise PrimTypeError(op, point)
        if op == "+":
            return left + right
        if op == "-":
            return left - right
        if op == "*":
            return left * right
        return left < right
    if op == "=":
        comparable = (nat(left) and nat(right)) or (
            isinstance(left, bool) and isinstance(right, bool)
        ) or (left == () and right == () and isinstance(left, tuple) and isinstance(right, tuple))
        if not comparable:
            raise PrimTypeError(op, point)
        return left == right
    if op in ("&&", "||"):
        if not (isinstance(left, bool) and isinstance(right, bool)):
            raise PrimTypeError(op, point)
        return (left and right) if op == "&&" else (left or right)
    raise PrimTypeError(op, point)


class _Evaluator:
    def __init__(self, budget: int, on_step, tamper, store=None, dep=None):
        self.store: dict = store if store is not None else {}
        self.dep = dep if dep is not None else DepState()
        self.steps = 0
        self.budget = budget
        self.on_step = on_step
        self.tamper = tamper
        self.next_location = 1 + max((loc.index for loc in self.store), default=-1)
        self.loc_origin: dict = {}

    def fresh_location(self) -> Location:
        loc = Location(self.next_location)
        self.next_location += 1
        return loc

    def notify(self, event: StepEvent):
        if self.on_step is not None:
            self.on_step(event)

    def bind(self, subject, point, pair, incoming, threading=True):
        self.dep.bind(subject, point, pair, incoming, threading)
        self.notify(StepEvent(kind="bind", subject=subject, point=point, pair=pair, dep=self.dep, store=self.store))

    def eval(self, occ: Occurrence, env: dict, incoming):
        self.steps += 1
        if self.steps > self.budget:
            raise EvalBudgetExceeded(self.budget, occ.point)
        self.notify(StepEvent(kind="begin", occ=occ, env=env, store=self.store, dep=self.dep, incoming=incoming))
        value, pair = self._dispatch(occ, env, incoming)
        if self.tamper is not None:
            swapped = self.tamper(occ, value, pair)
            if swapped is not None:
                value, pair = swapped
        self.notify(
            StepEvent(kind="end", occ=occ, env=env, store=self.store, dep=self.dep, value=value, pair=pair)
        )
        return value, pair

    def _dispatch(self, occ: Occurrence, env: dict, incoming):
        expr = occ.expr
        p = occ.point
        match expr:
            case Constant(value):
                return value, EMPTY_PAIR

            case Variable(name):
                if name not in env:
                    raise UnboundVariable(name, p)
                value, bind_point = env[name]
                looked_up = self.dep.w.get((name, bind_point), EMPTY_PAIR)
                return value, looked_up.union(var_pair(name, p))

            case Abstraction(param, body):
                return Closure(param, body, env, lam_point=p), EMPTY_PAIR

            case Group(inner):
                return self.eval(inner, env, incoming)

            case Let(name, bound, body):
                bound_value, bound_pair = self.eval(bound, env, incoming)
                bind_point = bound.point
                self.bind(name, bind_point, bound_pair, incoming)
                inner_env = {**env, name: (bound_value, bind_point)}
                return self.eval(body, inner_env, bind_point)

            case LetRec(name, bound, body):
                if isinstance(bound.expr, Abstraction):
                    closure, bound_pair = self.eval(bound, env, incoming)
                    closure = RecClosure(
                        param=closure.param,
                        body=closure.body,
                        env=closure.env,
                        lam_point=closure.lam_point,
                        name=name,
                        bind_point=bound.point,
                    )
                else:
                    # nothing to tie a knot through; behave like a plain let
                    closure, bound_pair = self.eval(bound, env, incoming)
                bind_point = bound.point
                self.bind(name, bind_point, bound_pair, incoming)
                inner_env = {**env, name: (closure, bind_point)}
                return self.eval(body, inner_env, bind_point)

            case Application(fn, arg):
                fn_value, fn_pair = self.eval(fn, env, incoming)
                arg_value, arg_pair = self.eval(arg, env, fn.point)
                if not isinstance(fn_value, Closure):
                    raise NotAFunction(fn_value, p)
                bind_point = arg.point
                self.bind(fn_value.param, bind_point, arg_pair, incoming)
                call_env = dict(fn_value.env)
                if isinstance(fn_value, RecClosure):
                    call_env[fn_value.name] = (fn_value, fn_value.bind_point)
                call_env[fn_value.param] = (arg_value, bind_point)
                body_value, body_pair = self.eval(fn_value.body, call_env, bind_point)
                return body_value, fn_pair.union(body_pair)

            case FunctionalApplication(op, left, right):
                left_value, left_pair = self.eval(left, env, incoming)
                right_value, right_pair = self.eval(right, env, left.point)
                return _apply_prim(op, left_value, right_value, p), left_pair.union(right_pair)

            case Ref(init):
                init_value, init_pair = self.eval(init, env, incoming)
                location = self.fresh_location()
                self.store[location] = init_value
                self.loc_origin[location] = p
                self.bind(location, p, init_pair, incoming)
                return location, init_pair

            case Assign(target, value_occ):
                target_value, target_pair = self.eval(target, env, incoming)
                written_value, written_pair = self.eval(value_occ, env, target.point)
                if not isinstance(target_value, Location):
                    raise NotAReference(target_value, p)
                self.store[target_value] = written_value
                self.bind(target_value, p, written_pair, incoming, threading=False)
                return (), target_pair

            case Deref(ref):
                ref_value, ref_pair = self.eval(ref, env, incoming)
                if not isinstance(ref_value, Location):
                    raise NotAReference(ref_value, p)
                content = self.store[ref_value]
                current = self.dep.ip(ref_value)
                stored_pair = self.dep.w.get((ref_value, current), EMPTY_PAIR)
                result_pair = DepPair(
                    ref_pair.locs | {(ref_value, current)} | stored_pair.locs,
                    ref_pair.vars | stored_pair.vars,
                )
                return content, result_pair

            case Case(scrutinee, patterns, clauses):
                scrut_value, scrut_pair = self.eval(scrutinee, env, incoming)
                for pattern, clause in zip(patterns, clauses):
                    bindings = match(pattern, scrut_value, p)
                    if bindings is None:
                        continue
                    branch_env = env
                    bind_point = scrutinee.point
                    for name, bound_value in bindings.items():
                        self.bind(name, bind_point, scrut_pair, incoming)
                        branch_env = {**branch_env, name: (bound_value, bind_point)}
                    branch_value, branch_pair = self.eval(clause, branch_env, bind_point)
                    return branch_value, branch_pair.union(scrut_pair)
                raise MatchFailure(scrut_value, p)

        raise TypeError(f"unknown expression {expr!r}")


def _seed_env(env: dict | None) -> dict:
    """Normalize a caller-supplied environment to (value, bind point) entries."""

    seeded = {}
    for name, entry in (env or {}).items():
        if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[1], (int, type(None))):
            seeded[name] = entry
        else:
            seeded[name] = (entry, None)
    return seeded


def evaluate(
    program: Occurrence,
    *,
    budget: int = 1_000_000,
    on_step=None,
    tamper=None,
    env: dict | None = None,
) -> EvalOutcome:
    """Run the program and collect w, the realized order, and the result pair."""

    machine = _Evaluator(budget, on_step, tamper)
    value, pair = machine.eval(program, _seed_env(env), None)
    return EvalOutcome(
        value=value,
        pair=pair,
        dep=machine.dep,
        store=machine.store,
        steps=machine.steps,
        point=program.point,
        loc_origin=machine.loc_origin,
    )


def eval_occurrence(
    occ: Occurrence,
    env: dict | None = None,
    store: dict | None = None,
    dep: DepState | None = None,
    incoming: int | None = None,
    *,
    budget: int = 1_000_000,
    on_step=None,
    tamper=None,
) -> EvalOutcome:
    """One evaluation step in a caller-supplied state.

    The store and dependency state are updated in place when given, so a
    sequence of calls sees each other's bindings; the outcome's point is
    the evaluated occurrence's own point, where every rule ends.
    """

    machine = _Evaluator(budget, on_step, tamper, store=store, dep=dep)
    value, pair = machine.eval(occ, _seed_env(env), incoming)
    return EvalOutcome(
        value=value,
        pair=pair,
        dep=machine.dep,
        store=machine.store,
        steps=machine.steps,
        point=occ.point,
        loc_origin=machine.loc_origin,
    )


def ip_sem(subject, dep: DepState):
    """The interpretation of a subject: its order-greatest binding atom.

    Returns (subject, point) for the unique greatest binding point of the
    subject in dom(w), or None when the subject was never bound.  When no
    unique greatest point exists the order is ambiguous for the subject,
    which chaining edges normally prevent.
    """

    candidates = dep.bound_points(subject)
    if not candidates:
        return None
    tops = [
        p
        for p in candidates
        if not any(dep.precedes(p, q) for q in candidates if q != p)
    ]
    if len(tops) != 1:
        raise AmbiguousPredecessor(subject, candidates)
    return (subject, tops[0])
