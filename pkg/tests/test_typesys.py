"""Static analysis tests: types, environment, chains, linearity.

Tags: [DERIVED] hand-computed oracle, [PAPER] value quoted from the
source material's worked examples, [TRIVIAL] structural sanity.
"""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refflow.semantics import Location
from refflow.syntax import parse
from refflow.typesys import (
    AbstractionInRef,
    Arrow,
    Base,
    IVar,
    LinearityViolation,
    NonReferenceDeref,
    Pi,
    TypeEnv,
    UndefinedUnion,
    UnknownPoint,
    ip_type,
    linear_use_check,
    p_chains,
    type_union,
    type_value,
    typecheck,
)

from conftest import ALIAS_CHAIN_SRC, DOUBLE_USE_SRC

V2 = IVar(2)


def atoms(*pairs):
    return frozenset(pairs)


# ---------------------------------------------------------------------------
# The reference program's static facts
# ---------------------------------------------------------------------------


def test_reference_program_result_type(alias_chain):
    """[DERIVED] The read's type collects the alias-chain uses, the
    write's source, and the deref-site internal occurrence; the result
    is a number, so kappa is empty."""
    analysis = typecheck(alias_chain)
    assert analysis.result_type == Base(
        atoms(("x", 5), ("x", 6), ("z", 7), (V2, 10)), frozenset()
    )


def test_reference_program_gamma(alias_chain):
    """[DERIVED] The environment holds exactly five entries: the cell at
    its birth and at its rewrite, and the three let binders."""
    analysis = typecheck(alias_chain)
    assert analysis.gamma.entries == {
        (V2, 2): Base(frozenset(), frozenset({V2})),
        ("x", 12): Base(frozenset(), frozenset({V2, "x"})),
        ("z", 9): Base(frozenset(), frozenset()),
        (V2, 8): Base(atoms(("x", 5), ("z", 7)), frozenset({"x", V2})),
        ("y", 11): Base(atoms(("x", 5)), frozenset()),
    }


def test_reference_program_per_point_types(alias_chain):
    """[DERIVED] Spot-checks of the per-point table: the uses of x carry
    the alias pair, the write carries its target's footprint."""
    analysis = typecheck(alias_chain)
    assert analysis.type_of[5] == Base(atoms(("x", 5)), frozenset({"x", V2}))
    assert analysis.type_of[7] == Base(atoms(("z", 7)), frozenset())
    assert analysis.type_of[8] == Base(atoms(("x", 5)), frozenset())
    assert analysis.type_of[10] == analysis.result_type


def test_var_use_joins_entry_and_occurrence():
    """[PAPER] A variable use is its entry's type joined with its own
    occurrence."""
    analysis = typecheck(parse("(let x (y@1)@2 (x@3)@4)@5"), allow_free=True)
    assert analysis.type_of[3] == Base(atoms(("y", 1), ("x", 3)), frozenset())


def test_case_over_approximates_clauses():
    """[DERIVED] The case type contains each clause's type and the
    scrutinee's footprint."""
    src = "(let s (4@1)@2 (case (s@3)@4 [0 -> (7@5)@6, n -> (n@7)@8])@9)@10"
    analysis = typecheck(parse(src))
    case_ty = analysis.type_of[9]
    for clause_point in (6, 8):
        clause_ty = analysis.type_of[clause_point]
        assert clause_ty.delta <= case_ty.delta
        assert clause_ty.kappa <= case_ty.kappa
    assert analysis.type_of[3].delta <= case_ty.delta


# ---------------------------------------------------------------------------
# Unions
# ---------------------------------------------------------------------------


def test_union_is_componentwise_on_base():
    """[DERIVED] Base unions join both components."""
    a = Base(atoms(("x", 1)), frozenset({"x"}))
    b = Base(atoms(("y", 2)), frozenset({V2}))
    assert type_union(a, b, 0) == Base(atoms(("x", 1), ("y", 2)), frozenset({"x", V2}))


def test_union_of_arrows_joins_origins_and_pending():
    """[DERIVED] Arrow unions keep every origin and every pending atom."""
    a = Arrow(frozenset({2}), atoms(("x", 1)))
    b = Arrow(frozenset({5}), atoms(("y", 3)))
    assert type_union(a, b, 0) == Arrow(frozenset({2, 5}), atoms(("x", 1), ("y", 3)))


def test_union_of_mixed_shapes_is_undefined():
    """[TRIVIAL] Base with Arrow has no union."""
    with pytest.raises(UndefinedUnion):
        type_union(Base(), Arrow(frozenset({1})), 0)


@settings(max_examples=80, deadline=None)
@given(
    st.lists(st.tuples(st.sampled_from("xyz"), st.integers(1, 9)), max_size=4),
    st.lists(st.tuples(st.sampled_from("xyz"), st.integers(1, 9)), max_size=4),
    st.lists(st.tuples(st.sampled_from("xyz"), st.integers(1, 9)), max_size=4),
)
def test_union_laws(d1, d2, d3):
    """[DERIVED] Union is commutative, associative, idempotent on
    same-shape types."""
    a, b, c = (Base(frozenset(d)) for d in (d1, d2, d3))
    assert type_union(a, b, 0) == type_union(b, a, 0)
    assert type_union(type_union(a, b, 0), c, 0) == type_union(a, type_union(b, c, 0), 0)
    assert type_union(a, a, 0) == a


# ---------------------------------------------------------------------------
# Chains and the type-level IP
# ---------------------------------------------------------------------------


def test_p_chains_documented_cases():
    """[DERIVED] Maximal chains ending at the query point, over the
    closure of the cover edges."""
    pi = Pi((1, 2, 3, 4), frozenset({(1, 2), (2, 4), (3, 4)}))
    assert p_chains(pi, 4) == frozenset({(1, 2, 4), (3, 4)})
    assert p_chains(Pi((1,), frozenset()), 1) == frozenset({(1,)})
    linear = Pi((1, 2, 3), frozenset({(1, 2), (2, 3)}))
    assert p_chains(linear, 3) == frozenset({(1, 2, 3)})


def test_p_chains_unknown_point():
    """[TRIVIAL] Querying a point outside the order raises."""
    with pytest.raises(UnknownPoint):
        p_chains(Pi((1,), frozenset()), 99)


def test_ip_type_single_chain():
    """[DERIVED] On one chain the IP is the latest entry at or before
    the query point."""
    gamma = TypeEnv()
    gamma.bind(V2, 2, Base())
    gamma.bind(V2, 8, Base(atoms(("z", 7))))
    pi = Pi((2, 8, 10), frozenset({(2, 8), (8, 10)}))
    assert ip_type(V2, gamma, pi, at=10) == frozenset({(V2, 8)})


def test_ip_type_joining_branches():
    """[DERIVED] Two branches joining contribute one supremum each."""
    v9 = IVar(9)
    gamma = TypeEnv()
    gamma.bind(v9, 3, Base())
    gamma.bind(v9, 4, Base())
    pi = Pi((1, 3, 4, 5), frozenset({(1, 3), (1, 4), (3, 5), (4, 5)}))
    assert ip_type(v9, gamma, pi, at=5) == frozenset({(v9, 3), (v9, 4)})


def test_ip_type_unbound_subject():
    """[TRIVIAL] A subject with no entries has no predecessors."""
    pi = Pi((1,), frozenset())
    assert ip_type("ghost", TypeEnv(), pi, at=1) == frozenset()


def test_ip_type_on_reference_program(alias_chain):
    """[DERIVED] At the end of the reference program the cell's IP is
    its rewrite entry."""
    analysis = typecheck(alias_chain)
    assert ip_type(V2, analysis.gamma, analysis.pi, at=12) == frozenset({(V2, 8)})


# ---------------------------------------------------------------------------
# Value admission
# ---------------------------------------------------------------------------


def test_type_value_constants_and_locations():
    """[PAPER] Constants admit any Base with empty kappa; locations
    require kappa nonempty."""
    assert type_value(5, Base(atoms(("x", 1)), frozenset()))
    assert not type_value(5, Base(frozenset(), frozenset({V2})))
    assert not type_value(Location(0), Base(frozenset(), frozenset()))
    assert type_value(Location(0), Base(frozenset(), frozenset({V2})))


# ---------------------------------------------------------------------------
# Linearity
# ---------------------------------------------------------------------------


def test_single_use_abstraction_accepted():
    """[TRIVIAL] One use of a function-valued binder is fine."""
    assert linear_use_check(parse(r"(let f (\y. (y@1))@2 ((f@3) (1@4))@5)@6")) == ()


def test_double_use_rejected_with_points(double_use):
    """[PAPER] Applying a bound abstraction twice is a violation naming
    both use points."""
    violations = linear_use_check(double_use)
    assert violations and isinstance(violations[0], LinearityViolation)
    assert violations[0].points == (3, 4)
    with pytest.raises(LinearityViolation):
        typecheck(double_use)


def test_abstraction_in_ref_rejected():
    """[PAPER] A reference cannot hold an abstraction, directly or
    through a function-valued name."""
    direct = linear_use_check(parse(r"(ref (\y. (y@1))@2)@3"))
    assert direct and isinstance(direct[0], AbstractionInRef)
    named = linear_use_check(parse(r"(let f (\y. (y@1))@2 (ref (f@3))@4)@5"))
    assert named and isinstance(named[0], AbstractionInRef)


# ---------------------------------------------------------------------------
# Rejections and free variables
# ---------------------------------------------------------------------------


def test_deref_of_non_reference_rejected():
    """[TRIVIAL] Reading a number is a shape error."""
    with pytest.raises(NonReferenceDeref):
        typecheck(parse("(let n (1@1)@2 (!(n@3))@4)@5"))


def test_free_variables_need_allow_free():
    """[TRIVIAL] Free names are rejected by default and admitted as
    opaque inputs with allow_free."""
    from refflow.typesys import UnboundName

    prog = parse("(+ (h@1) (1@2))@3")
    with pytest.raises(UnboundName):
        typecheck(prog)
    analysis = typecheck(prog, allow_free=True)
    assert analysis.type_of[1] == Base(atoms(("h", 1)), frozenset())


def test_wrapping_in_unused_let_preserves_result_type(alias_chain):
    """[DERIVED] Weakening: binding an unused name around a program does
    not change the program's result type."""
    wrapped = parse("(let u (9@91)@92 " + ALIAS_CHAIN_SRC + ")@93")
    assert typecheck(wrapped).result_type == typecheck(alias_chain).result_type


# ---------------------------------------------------------------------------
# Mutations
# ---------------------------------------------------------------------------


def test_mutations_change_the_analysis(alias_chain):
    """[DERIVED] Each documented mutation visibly alters the analysis
    output on the reference program."""
    from refflow.typesys import NonReferenceAssign

    baseline = typecheck(alias_chain)
    tvar = typecheck(alias_chain, "tvar-drop-atom")
    assert ("x", 5) not in tvar.type_of[5].delta
    # Dropping kappa at the let makes the later write through x look
    # like a write through a number, so the program is now rejected.
    with pytest.raises(NonReferenceAssign):
        typecheck(alias_chain, "tlet1-drop-kappa")
    plain_ref = parse("(let x (ref 1@1)@2 (x@3)@4)@5")
    tlet = typecheck(plain_ref, "tlet1-drop-kappa")
    assert typecheck(plain_ref).gamma.entries[("x", 5)].kappa
    assert tlet.gamma.entries[("x", 5)].kappa == frozenset()
    tref = typecheck(alias_chain, "trefread-drop-delta-prime")
    assert tref.type_of[10].delta < baseline.type_of[10].delta


def test_tcase_mutation_drops_scrutinee():
    """[DERIVED] The case mutation stops joining the scrutinee's type
    into the result."""
    src = "(let s (4@1)@2 (case (s@3)@4 [0 -> (7@5)@6, n -> (1@7)@8])@9)@10"
    prog = parse(src)
    baseline = typecheck(prog)
    mutated = typecheck(prog, "tcase-drop-scrutinee")
    assert ("s", 3) in baseline.type_of[9].delta
    assert ("s", 3) not in mutated.type_of[9].delta
