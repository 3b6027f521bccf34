"""Dependency types, the checking walk, and the approximated order's queries.

A base type is a pair (delta, kappa): delta collects the atomic
occurrences a value may have been computed from, kappa the names the
value may be aliased under when it is a reference.  Reference contents
are typed through *internal variables*, one per allocation point; the
current entry of an internal variable fuses the content's dependencies
with the alias set of the location it stands for.  Abstractions get an
opaque arrow type that remembers its origin points plus any atoms that
were pushed onto it by reads; the atoms land in the result when the
abstraction is applied.

Checking walks the program in evaluation order and descends into an
abstraction's body at its application site, which linearity makes
unique, so the walk sees the same environment and store history the
evaluator does.  The walk is total on the linear fragment: used-twice
abstractions, abstractions stored in references, references stored in
references, and recursive descents are rejected.

The module also owns the approximated order: the Pi graph built by
:mod:`refflow.approx`, its maximal chains, and the chain-wise
interpretation of a subject's binding points.
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
    Ref,
    Variable,
    free_vars,
)
from .semantics import Closure, Location


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IVar:
    """Internal variable standing for the reference allocated at a point."""

    point: int

    def __str__(self) -> str:
        return f"v{self.point}"


def subject_key(subject):
    """Deterministic sort key for names and internal variables."""

    if isinstance(subject, IVar):
        return (1, subject.point, "")
    return (0, 0, subject)


def atom_key(atom):
    subject, point = atom
    return (*subject_key(subject), point)


def show_atom(atom) -> str:
    subject, point = atom
    return f"{subject}@{point}"


class Type:
    __slots__ = ()


@dataclass(frozen=True)
class Base(Type):
    delta: frozenset = frozenset()
    kappa: frozenset = frozenset()

    def __str__(self) -> str:
        deltas = ", ".join(show_atom(a) for a in sorted(self.delta, key=atom_key))
        kappas = ", ".join(str(s) for s in sorted(self.kappa, key=subject_key))
        return f"({{{deltas}}}, {{{kappas}}})"


@dataclass(frozen=True)
class Arrow(Type):
    origins: frozenset
    pending: frozenset = frozenset()

    def __str__(self) -> str:
        origin_text = ",".join(str(p) for p in sorted(self.origins))
        if not self.pending:
            return f"fun[{origin_text}]"
        pending_text = ", ".join(show_atom(a) for a in sorted(self.pending, key=atom_key))
        return f"fun[{origin_text}]+{{{pending_text}}}"


def push_atoms(ty: Type, atoms: frozenset) -> Type:
    """Add atoms to a type where they will surface in a result."""

    if not atoms:
        return ty
    if isinstance(ty, Base):
        return Base(ty.delta | atoms, ty.kappa)
    return Arrow(ty.origins, ty.pending | atoms)


def kappa_ivars(ty: Base):
    return sorted((s for s in ty.kappa if isinstance(s, IVar)), key=subject_key)


# ---------------------------------------------------------------------------
# Errors
# ---------------------------------------------------------------------------


class TypeCheckError(Exception):
    def __init__(self, message: str, point: int):
        super().__init__(f"{message} (at point {point})")
        self.point = point


class LinearityViolation(TypeCheckError):
    def __init__(self, points):
        pts = tuple(sorted(points))
        text = " and ".join(str(p) for p in pts)
        super().__init__(f"abstraction used more than once, at points {text}", pts[-1])
        self.points = pts


class RecursiveApplication(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("abstraction applied within its own body", point)


class AbstractionInRef(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("abstractions cannot be stored in references", point)


class UnsupportedRefContent(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("references cannot store other references", point)


class NonReferenceDeref(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("dereference of a non-reference", point)


class NonReferenceAssign(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("assignment to a non-reference", point)


class NonFunctionApplication(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("application of a non-function", point)


class PrimShapeError(TypeCheckError):
    def __init__(self, op: str, point: int):
        super().__init__(f"operator {op!r} applied to a function", point)
        self.op = op


class CaseOnAbstraction(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("constant patterns cannot match a function", point)


class UndefinedUnion(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("the types have no union", point)


class UnknownPoint(Exception):
    def __init__(self, point: int):
        super().__init__(f"point {point} does not occur in the order")
        self.point = point


class UnboundName(TypeCheckError):
    def __init__(self, name: str, point: int):
        super().__init__(f"unbound name {name!r}", point)
        self.name = name


class UnsupportedPattern(TypeCheckError):
    def __init__(self, point: int):
        super().__init__("tuple patterns are outside the typed fragment", point)


# ---------------------------------------------------------------------------
# Union
# ---------------------------------------------------------------------------


def type_union(left: Type, right: Type, point: int = 0) -> Type:
    """The least upper bound of two types of the same shape.

    Base types join component-wise on both sets; arrows join their
    origins and their pending atoms.  A base type has no union with an
    arrow: no value is both a function and a non-function.
    """

    if isinstance(left, Base) and isinstance(right, Base):
        return Base(left.delta | right.delta, left.kappa | right.kappa)
    if isinstance(left, Arrow) and isinstance(right, Arrow):
        return Arrow(left.origins | right.origins, left.pending | right.pending)
    raise UndefinedUnion(point)


# ---------------------------------------------------------------------------
# Type environments
# ---------------------------------------------------------------------------


class TypeEnv:
    """Append-only history of typed bindings, with a current view.

    Keys are atomic occurrences (subject, point); ``latest`` tracks the
    point each subject was most recently bound at along the walk.
    """

    def __init__(self):
        self.entries: dict = {}
        self.latest: dict = {}

    def bind(self, subject, point: int, ty: Type):
        key = (subject, point)
        if key in self.entries:
            self.entries[key] = type_union(self.entries[key], ty, point)
        else:
            self.entries[key] = ty
        self.latest[subject] = point

    def current(self, subject) -> Type | None:
        point = self.latest.get(subject)
        if point is None:
            return None
        return self.entries[(subject, point)]

    def at(self, subject, point: int) -> Type | None:
        return self.entries.get((subject, point))

    def bound_points(self, subject) -> frozenset:
        return frozenset(pt for subj, pt in self.entries if subj == subject)

    def subjects(self) -> frozenset:
        return frozenset(subj for subj, _ in self.entries)

    def items(self):
        return sorted(self.entries.items(), key=lambda kv: atom_key(kv[0]))


# ---------------------------------------------------------------------------
# The approximated order
# ---------------------------------------------------------------------------


class Pi:
    """Happens-before approximation: cover edges over visited points."""

    def __init__(self, visit: tuple, edges: frozenset):
        self.visit = visit
        self.edges = edges
        self.final = visit[-1] if visit else None
        self._succ: dict = {}
        self._pred: dict = {}
        for a, b in edges:
            self._succ.setdefault(a, set()).add(b)
            self._pred.setdefault(b, set()).add(a)

    def precedes(self, a: int, b: int) -> bool:
        """a strictly precedes b, transitively."""

        if a == b:
            return False
        stack = [a]
        seen = {a}
        while stack:
            node = stack.pop()
            for nxt in self._succ.get(node, ()):
                if nxt == b:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False

    def at_or_before(self, a: int, b: int) -> bool:
        return a == b or self.precedes(a, b)

    def closure(self) -> frozenset:
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

    def predecessors(self, point: int):
        return sorted(self._pred.get(point, ()))

    @property
    def points(self) -> frozenset:
        out = set(self.visit)
        for a, b in self.edges:
            out.add(a)
            out.add(b)
        return frozenset(out)


def _reduced_predecessors(pi: Pi) -> dict:
    """Predecessor lists of the transitive reduction of the order.

    An edge is dropped when a longer path connects the same endpoints;
    chains enumerated over what remains are exactly the maximal chains
    of the order's closure.
    """

    closure = pi.closure()
    reachable = set(closure)
    pred: dict = {}
    for a, b in sorted(pi.edges):
        mids = (c for c in pi.points if c != a and c != b)
        if any((a, c) in reachable and (c, b) in reachable for c in mids):
            continue
        pred.setdefault(b, []).append(a)
    return {node: sorted(parents) for node, parents in pred.items()}


def p_chains(pi: Pi, point: int, limit: int = 100_000) -> frozenset:
    """All maximal chains of the order's closure whose greatest element
    is ``point``, each as an ascending tuple ending at ``point``.

    The count is capped to guard against pathological graphs; the cap is
    far above anything reachable at tested sizes.
    """

    if point not in pi.points:
        raise UnknownPoint(point)
    pred = _reduced_predecessors(pi)
    chains = set()
    stack = [(point, (point,))]
    while stack:
        node, path = stack.pop()
        parents = pred.get(node, ())
        if not parents:
            chains.add(tuple(reversed(path)))
            if len(chains) >= limit:
                raise RuntimeError("chain enumeration exceeded its cap")
            continue
        for parent in parents:
            stack.append((parent, path + (parent,)))
    return frozenset(chains)


def ip_type(subject, gamma: TypeEnv, pi: Pi, at: int | None = None) -> frozenset:
    """Chain-wise interpretation of a subject for a query at ``at``: on
    each maximal chain ending at the query point, the greatest binding
    occurrence of the subject; returned as the set of atoms over all
    chains.

    Computed by a backward search that stops at binding points, which
    visits each point once and agrees with per-chain enumeration.
    """

    if at is None:
        at = pi.final
    bound = gamma.bound_points(subject)
    if at is None or not bound:
        return frozenset()
    if at in bound:
        return frozenset({(subject, at)})
    found = set()
    stack = [at]
    seen = {at}
    while stack:
        node = stack.pop()
        for pred in pi.predecessors(node):
            if pred in seen:
                continue
            seen.add(pred)
            if pred in bound:
                found.add((subject, pred))
            else:
                stack.append(pred)
    return frozenset(found)


# ---------------------------------------------------------------------------
# Linearity pre-check
# ---------------------------------------------------------------------------


def _resolve_abstraction(occ: Occurrence):
    """The abstraction occurrence behind pass-through wrappers, or None."""

    expr = occ.expr
    if isinstance(expr, Abstraction):
        return occ
    if isinstance(expr, Group):
        return _resolve_abstraction(expr.inner)
    return None


def _use_points(occ: Occurrence, name: str, out: list):
    expr = occ.expr
    match expr:
        case Variable(n):
            if n == name:
                out.append(occ.point)
        case _:
            # binders are globally unique after parsing, so no shadowing
            for child in _children_of(expr):
                _use_points(child, name, out)


def _children_of(expr):
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


def linear_use_check(program: Occurrence) -> tuple:
    """Violations of the linear-abstraction discipline, without raising.

    Flags names bound to a syntactic abstraction and used twice, and
    abstractions placed under ref, directly or through such a name; uses
    of abstractions that flow through parameters are caught during the
    checking walk instead.  Returns the violations in program order.
    """

    violations: list = []

    def is_abstraction_valued(occ: Occurrence, fun_names: frozenset) -> bool:
        if _resolve_abstraction(occ) is not None:
            return True
        expr = occ.expr
        if isinstance(expr, Group):
            return is_abstraction_valued(expr.inner, fun_names)
        return isinstance(expr, Variable) and expr.name in fun_names

    def walk(occ: Occurrence, fun_names: frozenset):
        expr = occ.expr
        if isinstance(expr, (Let, LetRec)) and _resolve_abstraction(expr.bound) is not None:
            uses: list = []
            _use_points(expr.body, expr.name, uses)
            if isinstance(expr, LetRec):
                _use_points(expr.bound, expr.name, uses)
            if len(uses) > 1:
                violations.append(LinearityViolation(uses))
            fun_names = fun_names | {expr.name}
        if isinstance(expr, Ref) and is_abstraction_valued(expr.init, fun_names):
            violations.append(AbstractionInRef(occ.point))
        for child in _children_of(expr):
            walk(child, fun_names)

    walk(program, frozenset())
    return tuple(violations)


# ---------------------------------------------------------------------------
# The checking walk
# ---------------------------------------------------------------------------


MUTATIONS = (
    "tvar-drop-atom",
    "tlet1-drop-kappa",
    "tcase-drop-scrutinee",
    "trefread-drop-delta-prime",
)


@dataclass
class Analysis:
    """Everything the checking walk produced."""

    program: Occurrence
    gamma: TypeEnv
    type_of: dict
    result_type: Type
    lam_scopes: dict
    claims: dict
    mutation: str | None = None
    _pi: Pi | None = field(default=None, repr=False)
    _alias_base: tuple | None = field(default=None, repr=False)

    @property
    def pi(self) -> Pi:
        if self._pi is None:
            from .approx import approximate_pi

            self._pi = approximate_pi(self.program)
        return self._pi

    @property
    def alias_base(self) -> tuple:
        if self._alias_base is None:
            from .approx import build_alias_base

            self._alias_base = build_alias_base(self.program)
        return self._alias_base


# The triple a checked program yields: its Γ, its Π, and its alias base.
AnalysisContext = Analysis


class _Checker:
    def __init__(self, program: Occurrence, mutation: str | None, allow_free: bool):
        if mutation is not None and mutation not in MUTATIONS:
            raise ValueError(f"unknown mutation {mutation!r}")
        self.program = program
        self.mutation = mutation
        self.allow_free = allow_free
        self.gamma = TypeEnv()
        self.type_of: dict = {}
        self.lam_occ: dict = {}
        self.lam_scopes: dict = {}
        self.claims: dict = {}
        self.active: set = set()

    def run(self) -> Analysis:
        violations = linear_use_check(self.program)
        if violations:
            raise violations[0]
        scope: dict = {}
        if self.allow_free:
            scope = {name: Base() for name in free_vars(self.program)}
        result = self.check(self.program, scope)
        return Analysis(
            program=self.program,
            gamma=self.gamma,
            type_of=self.type_of,
            result_type=result,
            lam_scopes=self.lam_scopes,
            claims=self.claims,
            mutation=self.mutation,
        )

    def check(self, occ: Occurrence, scope: dict) -> Type:
        ty = self._dispatch(occ, scope)
        self.type_of[occ.point] = ty
        return ty

    def _bound_type(self, ty: Type, name: str) -> Type:
        """The type a binder records: aliased bindings join the alias set."""

        if isinstance(ty, Arrow):
            return ty
        if ty.kappa:
            return Base(ty.delta, ty.kappa | {name})
        return Base(ty.delta, frozenset())

    def _dispatch(self, occ: Occurrence, scope: dict) -> Type:
        expr = occ.expr
        p = occ.point
        match expr:
            case Constant(_):
                return Base()

            case Variable(name):
                if name not in scope:
                    raise UnboundName(name, p)
                ty = scope[name]
                if self.mutation == "tvar-drop-atom":
                    return ty
                return push_atoms(ty, frozenset({(name, p)}))

            case Abstraction(_, _):
                self.lam_occ[p] = occ
                self.lam_scopes[p] = dict(scope)
                return Arrow(frozenset({p}))

            case Group(inner):
                return self.check(inner, scope)

            case Let(name, bound, body):
                bound_ty = self.check(bound, scope)
                recorded = self._bound_type(bound_ty, name)
                if self.mutation == "tlet1-drop-kappa" and isinstance(recorded, Base):
                    recorded = Base(recorded.delta, frozenset())
                self.gamma.bind(name, p, recorded)
                return self.check(body, {**scope, name: recorded})

            case LetRec(name, bound, body):
                lam = _resolve_abstraction(bound)
                if lam is None:
                    bound_ty = self.check(bound, scope)
                    recorded = self._bound_type(bound_ty, name)
                    self.gamma.bind(name, p, recorded)
                    return self.check(body, {**scope, name: recorded})
                rec_ty = Arrow(frozenset({lam.point}))
                inner_scope = {**scope, name: rec_ty}
                self.check(bound, inner_scope)
                self.gamma.bind(name, p, rec_ty)
                return self.check(body, inner_scope)

            case Application(fn, arg):
                fn_ty = self.check(fn, scope)
                if not isinstance(fn_ty, Arrow):
                    raise NonFunctionApplication(p)
                arg_ty = self.check(arg, scope)
                origins = sorted(fn_ty.origins)
                forked = len(origins) > 1
                snapshot = dict(self.gamma.latest)
                branch_latests: list = []
                result: Type | None = None
                for lam_point in origins:
                    if lam_point in self.active:
                        raise RecursiveApplication(fn.point)
                    if lam_point in self.claims and self.claims[lam_point] != fn.point:
                        raise LinearityViolation((self.claims[lam_point], fn.point))
                    self.claims[lam_point] = fn.point
                    if forked:
                        # only one body runs; type each from the same state
                        self.gamma.latest = dict(snapshot)
                    lam = self.lam_occ[lam_point]
                    param = lam.expr.param
                    recorded = self._bound_type(arg_ty, param)
                    self.gamma.bind(param, arg.point, recorded)
                    body_scope = {**self.lam_scopes[lam_point], param: recorded}
                    self.active.add(lam_point)
                    try:
                        body_ty = self.check(lam.expr.body, body_scope)
                    finally:
                        self.active.discard(lam_point)
                    result = body_ty if result is None else type_union(result, body_ty, p)
                    branch_latests.append(dict(self.gamma.latest))
                if forked:
                    self._merge_branches(snapshot, branch_latests, p)
                return push_atoms(result, fn_ty.pending)

            case FunctionalApplication(op, left, right):
                left_ty = self.check(left, scope)
                right_ty = self.check(right, scope)
                if isinstance(left_ty, Arrow) or isinstance(right_ty, Arrow):
                    raise PrimShapeError(op, p)
                return Base(left_ty.delta | right_ty.delta)

            case Ref(init):
                init_ty = self.check(init, scope)
                if isinstance(init_ty, Arrow):
                    raise AbstractionInRef(p)
                if init_ty.kappa:
                    raise UnsupportedRefContent(p)
                internal = IVar(p)
                self.gamma.bind(internal, p, Base(init_ty.delta, frozenset({internal})))
                return Base(init_ty.delta, frozenset({internal}))

            case Assign(target, value):
                target_ty = self.check(target, scope)
                value_ty = self.check(value, scope)
                if isinstance(target_ty, Arrow) or not target_ty.kappa:
                    raise NonReferenceAssign(p)
                if isinstance(value_ty, Arrow):
                    raise AbstractionInRef(p)
                if value_ty.kappa:
                    raise UnsupportedRefContent(p)
                stored = Base(target_ty.delta | value_ty.delta, target_ty.kappa)
                for internal in kappa_ivars(target_ty):
                    self.gamma.bind(internal, p, stored)
                return Base(target_ty.delta, frozenset())

            case Deref(ref):
                ref_ty = self.check(ref, scope)
                if isinstance(ref_ty, Arrow) or not any(
                    isinstance(s, IVar) for s in ref_ty.kappa
                ):
                    raise NonReferenceDeref(p)
                delta = set(ref_ty.delta)
                for internal in kappa_ivars(ref_ty):
                    stored = self.gamma.current(internal)
                    delta |= stored.delta
                    if self.mutation != "trefread-drop-delta-prime":
                        delta.add((internal, p))
                return Base(frozenset(delta), frozenset())

            case Case(scrutinee, patterns, clauses):
                scrut_ty = self.check(scrutinee, scope)
                snapshot = dict(self.gamma.latest)
                branch_latests = []
                result: Type | None = None
                for pattern, clause in zip(patterns, clauses):
                    self.gamma.latest = dict(snapshot)
                    branch_scope = scope
                    match pattern:
                        case PVar(name):
                            recorded = self._bound_type(scrut_ty, name)
                            self.gamma.bind(name, scrutinee.point, recorded)
                            branch_scope = {**scope, name: recorded}
                        case PWildcard():
                            pass
                        case PNat(_) | PBool(_):
                            if isinstance(scrut_ty, Arrow):
                                raise CaseOnAbstraction(p)
                        case PTuple(_):
                            raise UnsupportedPattern(p)
                    branch_ty = self.check(clause, branch_scope)
                    result = branch_ty if result is None else type_union(result, branch_ty, p)
                    branch_latests.append(dict(self.gamma.latest))
                self._merge_branches(snapshot, branch_latests, p)
                if self.mutation == "tcase-drop-scrutinee":
                    return result
                if isinstance(scrut_ty, Base):
                    return push_atoms(result, scrut_ty.delta)
                return push_atoms(result, scrut_ty.pending)

        raise TypeError(f"unknown expression {expr!r}")

    def _merge_branches(self, snapshot: dict, branch_latests: list, point: int):
        """Combine the store typings the branches left behind.

        A subject that existed before the case and was rebound on some
        branch gets a merged entry at the case's point, the union over
        what each branch would leave it as.  Subjects born inside one
        branch keep their single entry.
        """

        merged_latest = dict(snapshot)
        for latest in branch_latests:
            for subject, pt in latest.items():
                if subject not in snapshot:
                    merged_latest.setdefault(subject, pt)
        self.gamma.latest = merged_latest
        pre_subjects = sorted(snapshot, key=subject_key)
        for subject in pre_subjects:
            points = {latest.get(subject, snapshot[subject]) for latest in branch_latests}
            if points == {snapshot[subject]}:
                continue
            union: Type | None = None
            for latest in branch_latests:
                ty = self.gamma.entries[(subject, latest.get(subject, snapshot[subject]))]
                union = ty if union is None else type_union(union, ty, point)
            self.gamma.bind(subject, point, union)


def typecheck(
    program: Occurrence, mutation: str | None = None, *, allow_free: bool = False
) -> Analysis:
    """Type the program, or raise a TypeCheckError explaining the rejection.

    With ``allow_free`` the program's free variables are admitted as
    opaque inputs of empty base type, so their reads still surface as
    atoms in the result's dependency set.
    """

    return _Checker(program, mutation, allow_free).run()


# ---------------------------------------------------------------------------
# Value membership
# ---------------------------------------------------------------------------


def type_value(value, ty: Type, loc_origin: dict | None = None) -> bool:
    """Whether a runtime value inhabits a static type.

    Ground values need an alias-free base type; a location needs its
    allocation point's internal variable in the alias set; a closure
    needs its abstraction point among the arrow's origins.
    """

    if isinstance(value, Closure):
        return isinstance(ty, Arrow) and value.lam_point in ty.origins
    if isinstance(value, Location):
        if not isinstance(ty, Base):
            return False
        if loc_origin is not None and value in loc_origin:
            return IVar(loc_origin[value]) in ty.kappa
        return any(isinstance(s, IVar) for s in ty.kappa)
    return isinstance(ty, Base) and not ty.kappa
