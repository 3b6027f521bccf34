"""The differential soundness oracle and its program generator.

The oracle runs the static pipeline and the collecting evaluator on the
same program and checks, step by step, that the static artifacts
over-approximate what the run actually did.  The verdict is split into
six clauses:

* dependency: every runtime dependency pair is covered by the
  corresponding static dependency set;
* alias: locations are covered by internal variables of the typing, and
  the names a location is reachable under sit inside one alias block;
* type: runtime values inhabit their static types;
* environment: every live binding has a typed counterpart;
* order: the realized point order is contained in the approximated one;
* ip: the run's interpretation of each location is among the chain-wise
  interpretations of its internal variable.

A report carries one verdict per clause with witnesses on failure plus
an activity counter saying how often the clause actually had something
to check, so a fuzz campaign can tell vacuous passes from real ones.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from .approx import approximate_pi, build_alias_base
from .semantics import (
    Closure,
    DepPair,
    DepState,
    EvalBudgetExceeded,
    EvalError,
    Location,
    evaluate,
    ip_sem,
)
from .syntax import (
    Abstraction,
    Application,
    Assign,
    Case,
    Deref,
    FunctionalApplication,
    Group,
    Let,
    LetRec,
    Occurrence,
    PVar,
    Ref,
    Variable,
    parse,
)
from .typesys import (
    Analysis,
    Arrow,
    Base,
    IVar,
    Pi,
    Type,
    TypeEnv,
    ip_type,
    show_atom,
    subject_key,
    type_value,
    typecheck,
)


CLAUSES = ("dependency", "alias", "type", "environment", "order", "ip")


class ShapeMismatch(Exception):
    """A location met an arrow type: no agreement clause admits that."""

    def __init__(self, value, ty):
        super().__init__(f"value {value} cannot agree with arrow type {ty}")


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------


@dataclass
class ClauseVerdict:
    holds: bool = True
    activity: int = 0
    witnesses: tuple = ()

    def check(self, ok: bool, witness: str):
        self.activity += 1
        if not ok:
            self.holds = False
            if len(self.witnesses) < 5:
                self.witnesses = self.witnesses + (witness,)


@dataclass
class AgreementReport:
    outcome: str = "pass"  # pass | fail | inconclusive
    clauses: dict = field(default_factory=lambda: {name: ClauseVerdict() for name in CLAUSES})
    binding_lemma: ClauseVerdict = field(default_factory=ClauseVerdict)
    steps: int = 0
    note: str = ""

    @property
    def verdict(self) -> bool:
        return self.outcome == "pass"

    def settle(self):
        if self.outcome == "inconclusive":
            return self
        failed = [name for name in CLAUSES if not self.clauses[name].holds]
        if not self.binding_lemma.holds:
            failed.append("binding_lemma")
        self.outcome = "fail" if failed else "pass"
        return self

    def failed_clauses(self) -> tuple:
        return tuple(name for name in CLAUSES if not self.clauses[name].holds)

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome,
            "steps": self.steps,
            "note": self.note,
            "binding_lemma": {
                "holds": self.binding_lemma.holds,
                "activity": self.binding_lemma.activity,
                "witnesses": list(self.binding_lemma.witnesses),
            },
            "clauses": {
                name: {
                    "holds": verdict.holds,
                    "activity": verdict.activity,
                    "witnesses": list(verdict.witnesses),
                }
                for name, verdict in sorted(self.clauses.items())
            },
        }


# ---------------------------------------------------------------------------
# Small helpers over runtime state
# ---------------------------------------------------------------------------


def _entry_value(entry):
    """Environments may store (value, bind point) pairs internally."""

    if isinstance(entry, tuple) and len(entry) == 2 and isinstance(entry[1], (int, type(None))):
        return entry[0]
    return entry


def _env_inverse(env: dict, location: Location) -> tuple:
    return tuple(sorted(name for name, entry in env.items() if _entry_value(entry) == location))


def _block_of(alias_base: tuple, subject):
    for block in alias_base:
        if subject in block:
            return block
    return None


def _delta_subjects(delta: frozenset) -> frozenset:
    return frozenset(subject for subject, _ in delta)


def _covering_ivars(dep: DepState, gamma: TypeEnv, location: Location, candidates) -> tuple:
    """Internal variables whose typing covers every binding point of the
    location: for each p with (location, p) in dom(w), (vx, p) in dom(Γ)."""

    wpoints = dep.bound_points(location)
    covering = []
    for internal in candidates:
        if all(gamma.at(internal, point) is not None for point in wpoints):
            covering.append(internal)
    return tuple(covering)


def _gamma_ivars(gamma: TypeEnv) -> tuple:
    return tuple(
        sorted((s for s in gamma.subjects() if isinstance(s, IVar)), key=subject_key)
    )


def _show_pair(pair: DepPair) -> str:
    locs = ", ".join(f"{loc}@{pt}" for loc, pt in sorted(pair.locs, key=lambda a: (a[0].index, a[1])))
    vars_ = ", ".join(f"{name}@{pt}" for name, pt in sorted(pair.vars))
    return f"({{{locs}}}, {{{vars_}}})"


# ---------------------------------------------------------------------------
# The agreement clauses
# ---------------------------------------------------------------------------


def _dep_agree(report, env, pair: DepPair, delta: frozenset, alias_base: tuple, where: str):
    clause = report.clauses["dependency"]
    for atom in sorted(pair.vars):
        clause.check(atom in delta, f"{where}: variable occurrence {show_atom(atom)} not in delta")
    represented = _delta_subjects(delta)
    for location, point in sorted(pair.locs, key=lambda a: (a[0].index, a[1])):
        holders = _env_inverse(env, location)
        if holders:
            block = _block_of(alias_base, holders[0])
            ok = (
                block is not None
                and all(name in block for name in holders)
                and bool(block & represented)
            )
            clause.check(
                ok,
                f"{where}: holders {list(holders)} of {location}@{point} not in a delta-represented block",
            )
        else:
            ok = any(isinstance(subject, IVar) for subject in represented)
            clause.check(
                ok,
                f"{where}: no internal-variable occurrence in delta covers unreachable {location}@{point}",
            )


def _alias_agree(report, env, dep: DepState, location: Location, gamma: TypeEnv,
                 kappa: frozenset, alias_base: tuple, where: str):
    clause = report.clauses["alias"]
    kappa_internals = sorted((s for s in kappa if isinstance(s, IVar)), key=subject_key)
    covering = _covering_ivars(dep, gamma, location, kappa_internals)
    clause.check(
        bool(covering),
        f"{where}: no internal variable in kappa covers all binding points of {location}",
    )
    if not covering:
        return
    holders = _env_inverse(env, location)
    if holders:
        block = _block_of(alias_base, holders[0])
        ok = (
            block is not None
            and all(name in block for name in holders)
            and any(internal in block for internal in covering)
        )
        clause.check(
            ok,
            f"{where}: holders {list(holders)} of {location} share no block with its internal variable",
        )
    else:
        ok = any(_block_of(alias_base, internal) is not None for internal in covering)
        clause.check(ok, f"{where}: covering internal variable of {location} is in no block")


def _type_agree(report, env, value, dep: DepState, pair: DepPair, gamma: TypeEnv,
                ty: Type, alias_base: tuple, where: str):
    if isinstance(value, Location):
        if not isinstance(ty, Base):
            report.clauses["type"].check(False, f"{where}: location {value} typed as arrow {ty}")
            return
        _dep_agree(report, env, pair, ty.delta, alias_base, where)
        _alias_agree(report, env, dep, value, gamma, ty.kappa, alias_base, where)
        return
    if isinstance(ty, Arrow):
        _dep_agree(report, env, pair, ty.pending, alias_base, where)
        return
    _dep_agree(report, env, pair, ty.delta, alias_base, where)


# ---------------------------------------------------------------------------
# Public clause checks
# ---------------------------------------------------------------------------


def well_typed_env(gamma: TypeEnv, pi: Pi, env: dict, loc_origin: dict | None = None) -> bool:
    """Whether every bound value inhabits some recorded type of its name."""

    for name in sorted(env):
        value = _entry_value(env[name])
        admitted = any(
            type_value(value, gamma.at(name, point), loc_origin)
            for point in sorted(gamma.bound_points(name))
        )
        if not admitted:
            return False
    return True


def dep_agree(env: dict, pair: DepPair, delta: frozenset, alias_base: tuple) -> bool:
    """Whether a static dependency set covers a runtime dependency pair."""

    report = AgreementReport()
    _dep_agree(report, env, pair, delta, alias_base, "query")
    return report.clauses["dependency"].holds


def alias_agree(env: dict, dep: DepState, location: Location, gamma: TypeEnv,
                kappa: frozenset, alias_base: tuple) -> bool:
    """Whether the typing's alias information covers a location's story."""

    report = AgreementReport()
    _alias_agree(report, env, dep, location, gamma, kappa, alias_base, "query")
    return report.clauses["alias"].holds


def type_agree(env: dict, value, dep: DepState, pair: DepPair, gamma: TypeEnv,
               ty: Type, alias_base: tuple) -> bool:
    """Whether a runtime value-with-pair agrees with a static type."""

    if isinstance(value, Location) and isinstance(ty, Arrow):
        raise ShapeMismatch(value, ty)
    report = AgreementReport()
    _type_agree(report, env, value, dep, pair, gamma, ty, alias_base, "query")
    return report.clauses["dependency"].holds and report.clauses["alias"].holds and report.clauses["type"].holds


def env_agree(env: dict, sto: dict, dep: DepState, gamma: TypeEnv, pi: Pi,
              alias_base: tuple, *, at: int | None = None,
              loc_origin: dict | None = None) -> AgreementReport:
    """All six clauses on one state, as a report."""

    report = AgreementReport()
    judge = _Judge(None, gamma, pi, alias_base, report)
    judge.check_env(env, dep, "state")
    judge.check_store(env, sto, dep, "state")
    judge.check_order(dep)
    judge.check_ip(dep, at=at)
    return report.settle()


# ---------------------------------------------------------------------------
# The step-by-step judge
# ---------------------------------------------------------------------------


def _fv_by_point(occ: Occurrence, table: dict) -> frozenset:
    expr = occ.expr
    match expr:
        case Variable(name):
            fv = frozenset({name})
        case Abstraction(param, body):
            fv = _fv_by_point(body, table) - {param}
        case Let(name, bound, body):
            fv = _fv_by_point(bound, table) | (_fv_by_point(body, table) - {name})
        case LetRec(name, bound, body):
            fv = (_fv_by_point(bound, table) | _fv_by_point(body, table)) - {name}
        case Application(a, b) | FunctionalApplication(_, a, b) | Assign(a, b):
            fv = _fv_by_point(a, table) | _fv_by_point(b, table)
        case Case(scrutinee, patterns, clauses):
            fv = _fv_by_point(scrutinee, table)
            for pattern, clause in zip(patterns, clauses):
                bound_names = {pattern.name} if isinstance(pattern, PVar) else set()
                fv = fv | (_fv_by_point(clause, table) - bound_names)
        case Ref(inner) | Deref(inner) | Group(inner):
            fv = _fv_by_point(inner, table)
        case _:
            fv = frozenset()
    table[occ.point] = frozenset(fv)
    return table[occ.point]


class _Judge:
    """Applies the clauses to events as a run unfolds."""

    def __init__(self, analysis: Analysis | None, gamma: TypeEnv, pi: Pi,
                 alias_base: tuple, report: AgreementReport):
        self.analysis = analysis
        self.gamma = gamma
        self.pi = pi
        self.alias_base = alias_base
        self.report = report
        self.pi_closure = pi.closure() if pi is not None else frozenset()
        self.fv_table: dict = {}
        if analysis is not None:
            _fv_by_point(analysis.program, self.fv_table)
        self.stack: list = []
        self.seen_env: set = set()
        self.seen_store: set = set()

    # -- per-clause primitives -----------------------------------------------

    def check_env(self, env: dict, dep: DepState, where: str):
        for name in sorted(env):
            entry = env[name]
            value = _entry_value(entry)
            bind_point = entry[1] if entry is not value else None
            key = (name, bind_point)
            if key in self.seen_env:
                continue
            self.seen_env.add(key)
            points = sorted(self.gamma.bound_points(name))
            self.report.clauses["environment"].check(
                bool(points), f"{where}: no typing entry mentions {name}"
            )
            if not points:
                continue
            admitted = any(type_value(value, self.gamma.at(name, pt)) for pt in points)
            self.report.clauses["type"].check(
                admitted, f"{where}: value of {name} inhabits none of its recorded types"
            )

    def check_store(self, env: dict, sto: dict, dep: DepState, where: str):
        for location in sorted(sto, key=lambda loc: loc.index):
            current = dep.latest.get(location)
            key = (location, current)
            if key in self.seen_store:
                continue
            self.seen_store.add(key)
            covering = _covering_ivars(dep, self.gamma, location, _gamma_ivars(self.gamma))
            self.report.clauses["alias"].check(
                bool(covering),
                f"{where}: no internal variable covers the binding points of {location}",
            )
            if not covering or current is None:
                continue
            internal = covering[0]
            stored_ty = self.gamma.at(internal, current)
            self.report.clauses["alias"].check(
                stored_ty is not None,
                f"{where}: no typing entry {internal}@{current} matches the newest write",
            )
            if stored_ty is None:
                continue
            content = sto[location]
            # the entry fuses the content's delta with the location's
            # alias set; the content itself is never reference-typed
            content_ty = Base(stored_ty.delta) if isinstance(stored_ty, Base) else stored_ty
            self.report.clauses["type"].check(
                type_value(content, content_ty),
                f"{where}: content of {location} does not inhabit {internal}@{current}",
            )
            written_pair = dep.w.get((location, current), DepPair())
            _type_agree(
                self.report, env, content, dep, written_pair, self.gamma,
                stored_ty, self.alias_base, f"{where}: {location}@{current}",
            )

    def check_order(self, dep: DepState):
        clause = self.report.clauses["order"]
        for edge in sorted(dep.edges):
            clause.check(
                edge in self.pi_closure or edge in self.pi.edges,
                f"realized edge {edge} missing from the approximated order",
            )

    def check_ip(self, dep: DepState, at: int | None = None):
        """Some query point's chain-wise interpretation must contain the
        internal-variable occurrence matching each location's semantic
        interpretation; the semantic point itself and the final point
        answer nearly every case, the scan covers the rest."""

        clause = self.report.clauses["ip"]
        for location in sorted(
            (s for s in dep.subjects() if isinstance(s, Location)), key=lambda loc: loc.index
        ):
            try:
                atom = ip_sem(location, dep)
            except EvalError as err:
                clause.check(False, f"semantic interpretation of {location}: {err}")
                continue
            if atom is None:
                continue
            _, sem_point = atom
            candidates = _covering_ivars(dep, self.gamma, location, _gamma_ivars(self.gamma))
            queries = [sem_point]
            if at is not None:
                queries.append(at)
            queries.extend(sorted(self.pi.points))
            ok = False
            for internal in candidates:
                if ok:
                    break
                for query in queries:
                    if (internal, sem_point) in ip_type(internal, self.gamma, self.pi, at=query):
                        ok = True
                        break
            clause.check(
                ok,
                f"{location} interpreted at {sem_point}, not among chain-wise interpretations",
            )

    # -- event hook ------------------------------------------------------------

    def on_step(self, event):
        if event.kind == "begin":
            self.stack.append(event.occ.point)
            return
        if event.kind == "bind":
            if isinstance(event.subject, str):
                for frame in self.stack:
                    self.report.binding_lemma.check(
                        event.subject not in self.fv_table.get(frame, frozenset()),
                        f"{event.subject} bound during evaluation of point {frame} where it is free",
                    )
            return
        # end event
        if self.stack:
            self.stack.pop()
        point = event.occ.point
        ty = self.analysis.type_of.get(point)
        if ty is None:
            self.report.clauses["type"].check(
                False, f"point {point} was evaluated but never typed"
            )
            return
        where = f"point {point}"
        if isinstance(event.value, Location) and not isinstance(ty, Base):
            self.report.clauses["type"].check(False, f"{where}: location typed as arrow {ty}")
            return
        _type_agree(
            self.report, event.env, event.value, event.dep, event.pair,
            self.gamma, ty, self.alias_base, where,
        )
        self.check_env(event.env, event.dep, where)
        self.check_store(event.env, event.store, event.dep, where)


# ---------------------------------------------------------------------------
# The oracle
# ---------------------------------------------------------------------------


def check_soundness(
    program: Occurrence,
    *,
    budget: int = 1_000_000,
    mutation: str | None = None,
    tamper=None,
) -> AgreementReport:
    """Differential run: static pipeline vs collecting evaluation.

    Typing rejections propagate as TypeCheckError; a budget overrun
    makes the report inconclusive; any other runtime error on a program
    the checker accepted is reported as a failure outright.
    """

    analysis = typecheck(program, mutation)
    pi = approximate_pi(program)
    alias_base = build_alias_base(program)
    report = AgreementReport()
    judge = _Judge(analysis, analysis.gamma, pi, alias_base, report)
    try:
        outcome = evaluate(program, budget=budget, on_step=judge.on_step, tamper=tamper)
    except EvalBudgetExceeded:
        report.outcome = "inconclusive"
        report.note = f"evaluation exceeded {budget} steps"
        report.steps = budget
        return report
    except EvalError as err:
        report.outcome = "fail"
        report.note = f"runtime error on an accepted program: {err}"
        return report
    report.steps = outcome.steps
    report.clauses["type"].check(
        type_value(outcome.value, analysis.result_type, outcome.loc_origin),
        "result value does not inhabit the result type",
    )
    judge.check_order(outcome.dep)
    judge.check_ip(outcome.dep, at=pi.final)
    return report.settle()


# ---------------------------------------------------------------------------
# Program generation
# ---------------------------------------------------------------------------


_NAT = "nat"
_BOOL = "bool"
_UNIT = "unit"


def _ref(kind):
    return ("ref", kind)


def _is_ref(kind) -> bool:
    return isinstance(kind, tuple) and kind[0] == "ref"


class _Gen:
    """Budget-driven generator of closed, well-typed, terminating programs."""

    def __init__(self, rng: random.Random, size: int):
        self.rng = rng
        self.budget = max(1, size)
        self.counter = 0

    def fresh(self) -> str:
        letters = "abcdgkmnqrstu"
        name = f"{letters[self.counter % len(letters)]}{self.counter}"
        self.counter += 1
        return name

    def spend(self, amount: int = 1):
        self.budget -= amount

    def vars_of(self, scope: tuple, kind) -> list:
        return [name for name, k in scope if k == kind]

    def refs_in(self, scope: tuple) -> list:
        return [(name, k) for name, k in scope if _is_ref(k)]

    def literal(self, kind) -> str:
        if kind == _NAT:
            return str(self.rng.randrange(10))
        if kind == _BOOL:
            return self.rng.choice(["true", "false"])
        if kind == _UNIT:
            return "()"
        inner = kind[1]
        self.spend()
        return f"(ref {self.leaf(inner, ())})"

    def leaf(self, kind, scope: tuple) -> str:
        names = self.vars_of(scope, kind)
        if names and self.rng.random() < 0.7:
            return self.rng.choice(names)
        return self.literal(kind)

    def gen(self, kind, scope: tuple, depth: int) -> str:
        if self.budget <= 0 or depth >= 6:
            return self.leaf(kind, scope)
        choices = ["leaf", "let", "let"]
        if kind in (_NAT, _BOOL):
            choices += ["prim", "case", "case"]
        if _is_ref(kind):
            choices += ["alloc", "alloc"]
        if kind != _UNIT and not _is_ref(kind):
            refs = [name for name, k in scope if k == _ref(kind)]
            if refs:
                choices += ["deref", "deref"]
        if kind == _UNIT and self.refs_in(scope):
            choices += ["assign", "assign", "assign"]
        if self.refs_in(scope):
            choices.append("refcase")
        if depth <= 3:
            choices += ["apply", "letrec"]
        action = self.rng.choice(choices)
        self.spend()
        if action == "leaf":
            return self.leaf(kind, scope)
        if action == "let":
            return self.gen_let(kind, scope, depth)
        if action == "prim":
            return self.gen_prim(kind, scope, depth)
        if action == "case":
            return self.gen_case(kind, scope, depth)
        if action == "alloc":
            refs = self.vars_of(scope, kind)
            if refs and self.rng.random() < 0.5:
                return self.rng.choice(refs)  # alias an existing reference
            return f"(ref {self.gen(kind[1], scope, depth + 1)})"
        if action == "deref":
            refs = [name for name, k in scope if k == _ref(kind)]
            return f"(! {self.rng.choice(refs)})"
        if action == "assign":
            name, ref_kind = self.rng.choice(self.refs_in(scope))
            return f"({name} := {self.gen(ref_kind[1], scope, depth + 1)})"
        if action == "refcase":
            return self.gen_refcase(kind, scope, depth)
        if action == "apply":
            return self.gen_apply(kind, scope, depth)
        return self.gen_letrec(kind, scope, depth)

    def pick_kind(self):
        roll = self.rng.random()
        if roll < 0.4:
            return _NAT
        if roll < 0.6:
            return _BOOL
        if roll < 0.7:
            return _UNIT
        return _ref(_NAT if self.rng.random() < 0.7 else _BOOL)

    def gen_let(self, kind, scope: tuple, depth: int) -> str:
        bound_kind = self.pick_kind()
        name = self.fresh()
        bound = self.gen(bound_kind, scope, depth + 1)
        body = self.gen(kind, scope + ((name, bound_kind),), depth + 1)
        return f"(let {name} {bound} {body})"

    def gen_prim(self, kind, scope: tuple, depth: int) -> str:
        if kind == _NAT:
            op = self.rng.choice(["+", "*"])
            left = self.gen(_NAT, scope, depth + 1)
            right = self.gen(_NAT, scope, depth + 1)
        else:
            op = self.rng.choice(["<", "=", "&&", "||"])
            operand = _NAT if op in ("<", "=") else _BOOL
            left = self.gen(operand, scope, depth + 1)
            right = self.gen(operand, scope, depth + 1)
        return f"({op} {left} {right})"

    def gen_case(self, kind, scope: tuple, depth: int) -> str:
        scrut_kind = self.rng.choice([_NAT, _BOOL])
        scrutinee = self.gen(scrut_kind, scope, depth + 1)
        arms = []
        if scrut_kind == _BOOL:
            arms.append(f"true -> {self.gen(kind, scope, depth + 1)}")
            arms.append(f"false -> {self.gen(kind, scope, depth + 1)}")
        else:
            arms.append(f"{self.rng.randrange(3)} -> {self.gen(kind, scope, depth + 1)}")
            if self.rng.random() < 0.5:
                name = self.fresh()
                inner_scope = scope + ((name, scrut_kind),)
                arms.append(f"{name} -> {self.gen(kind, inner_scope, depth + 1)}")
            else:
                arms.append(f"_ -> {self.gen(kind, scope, depth + 1)}")
        return f"(case {scrutinee} [{', '.join(arms)}])"

    def gen_refcase(self, kind, scope: tuple, depth: int) -> str:
        ref_name, ref_kind = self.rng.choice(self.refs_in(scope))
        name = self.fresh()
        inner_scope = scope + ((name, ref_kind),)
        body = self.gen(kind, inner_scope, depth + 1)
        return f"(case {ref_name} [{name} -> {body}])"

    def gen_apply(self, kind, scope: tuple, depth: int) -> str:
        arg_kind = self.rng.choice([_NAT, _BOOL])
        param = self.fresh()
        body = self.gen(kind, scope + ((param, arg_kind),), depth + 1)
        arg = self.gen(arg_kind, scope, depth + 1)
        if self.rng.random() < 0.5:
            return f"((λ{param}. {body}) {arg})"
        fn = self.fresh()
        return f"(let {fn} (λ{param}. {body}) ({fn} {arg}))"

    def gen_letrec(self, kind, scope: tuple, depth: int) -> str:
        # the bound abstraction never calls itself, so every run terminates
        arg_kind = self.rng.choice([_NAT, _BOOL])
        param = self.fresh()
        fn = self.fresh()
        body = self.gen(kind, scope + ((param, arg_kind),), depth + 1)
        arg = self.gen(arg_kind, scope, depth + 1)
        return f"(let rec {fn} (λ{param}. {body}) ({fn} {arg}))"


def gen_program(seed: int, size: int) -> Occurrence:
    """A deterministic, closed, well-typed, terminating random program."""

    if size < 1:
        raise ValueError("size must be at least 1")
    rng = random.Random(f"{seed}|{size}")
    gen = _Gen(rng, size)
    kind = gen.pick_kind()
    return parse(gen.gen(kind, (), 0))
