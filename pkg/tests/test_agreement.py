"""Soundness oracle and generator tests.

Tags: [DERIVED] hand-computed oracle, [TRIVIAL] structural sanity.
"""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refflow.agreement import (
    CLAUSES,
    AgreementReport,
    check_soundness,
    dep_agree,
    gen_program,
    well_typed_env,
)
from refflow.semantics import DepPair, DepState, Location, evaluate
from refflow.syntax import free_vars, parse, pretty
from refflow.typesys import Base, TypeCheckError, typecheck


# ---------------------------------------------------------------------------
# The oracle on the reference program
# ---------------------------------------------------------------------------


def test_reference_program_agrees(alias_chain):
    """[DERIVED] Every clause holds on the worked example, with the
    hand-counted number of checks per clause."""
    report = check_soundness(alias_chain)
    assert report.outcome == "pass"
    assert report.steps == 12
    activity = {name: report.clauses[name].activity for name in CLAUSES}
    assert activity == {
        "dependency": 15,
        "alias": 10,
        "type": 6,
        "environment": 3,
        "order": 5,
        "ip": 1,
    }
    assert report.binding_lemma.holds and report.binding_lemma.activity == 6


def test_trivial_program_agrees():
    """[TRIVIAL] A constant has nothing to disagree about."""
    report = check_soundness(parse("5"))
    assert report.outcome == "pass"


def test_rejected_program_raises():
    """[TRIVIAL] A program the checker rejects never reaches the
    differential run."""
    with pytest.raises(TypeCheckError):
        check_soundness(parse(r"(let x (\y. (y@1))@2 ((x@3) ((x@4) (1@5))@6)@7)@8"))


def test_budget_overrun_is_inconclusive():
    """[TRIVIAL] Running out of steps is reported, not failed."""
    src = "(let a (1@1)@2 (let b (2@3)@4 (a@5)@6)@7)@8"
    report = check_soundness(parse(src), budget=3)
    assert report.outcome == "inconclusive"


# ---------------------------------------------------------------------------
# Tampering: the oracle notices runtime lies
# ---------------------------------------------------------------------------


def test_tampered_pair_fails_dependency(alias_chain):
    """[DERIVED] Injecting a ghost occurrence into a run-time pair
    breaks the dependency clause."""

    def tamper(occ, value, pair):
        if occ.point == 4:
            return value, pair.union(DepPair(frozenset(), frozenset({("ghost", 99)})))
        return None

    report = check_soundness(alias_chain, tamper=tamper)
    assert report.outcome == "fail"
    assert "dependency" in report.failed_clauses()


def test_tampered_value_fails_type(alias_chain):
    """[DERIVED] Swapping a computed number for a location breaks the
    type clause: a location needs a nonempty alias set."""

    def tamper(occ, value, pair):
        if occ.point == 3:
            return Location(99), pair
        return None

    report = check_soundness(alias_chain, tamper=tamper)
    assert report.outcome == "fail"
    assert "type" in report.failed_clauses()


# ---------------------------------------------------------------------------
# Agreement primitives
# ---------------------------------------------------------------------------


def test_dep_agree_requires_delta_to_cover(alias_chain):
    """[DERIVED] A pair outside delta disagrees; within it, agrees."""
    analysis = typecheck(alias_chain)
    alias = analysis.alias_base
    env = {"x": (Location(0), 2)}
    inside = DepPair(frozenset(), frozenset({("x", 5)}))
    outside = DepPair(frozenset(), frozenset({("ghost", 99)}))
    delta = frozenset({("x", 5)})
    assert dep_agree(env, inside, delta, alias)
    assert not dep_agree(env, outside, delta, alias)


def test_well_typed_env_on_reference_state(alias_chain):
    """[DERIVED] The final environment of the reference run is admitted
    by its final entries."""
    analysis = typecheck(alias_chain)
    outcome = evaluate(alias_chain)
    env = {"x": (Location(0), 2)}
    assert well_typed_env(analysis.gamma, analysis.pi, env, outcome.loc_origin)


# ---------------------------------------------------------------------------
# The generator
# ---------------------------------------------------------------------------


def test_generator_is_deterministic():
    """[TRIVIAL] Same seed and size, same program."""
    assert pretty(gen_program(7, 12)) == pretty(gen_program(7, 12))
    assert pretty(gen_program(7, 12)) != pretty(gen_program(8, 12))


def test_generator_rejects_non_positive_size():
    """[TRIVIAL] Size must be at least 1."""
    with pytest.raises(ValueError):
        gen_program(0, 0)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=100_000), st.integers(min_value=1, max_value=25))
def test_generated_programs_are_closed_and_typed(seed, size):
    """[DERIVED] Generated programs are closed, accepted by the
    checker, and terminate within the default budget."""
    prog = gen_program(seed, size)
    assert free_vars(prog) == frozenset()
    typecheck(prog)
    evaluate(prog)


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=100_000), st.integers(min_value=1, max_value=25))
def test_generated_programs_agree(seed, size):
    """[DERIVED] The static analysis agrees with the run on generated
    programs."""
    report = check_soundness(gen_program(seed, size))
    assert report.outcome == "pass", report.to_dict()


# ---------------------------------------------------------------------------
# Report plumbing
# ---------------------------------------------------------------------------


def test_report_to_dict_is_sorted(alias_chain):
    """[TRIVIAL] The serialized report lists clauses alphabetically and
    carries outcome, steps, and note."""
    doc = check_soundness(alias_chain).to_dict()
    assert list(doc["clauses"]) == sorted(doc["clauses"])
    assert doc["outcome"] == "pass"
    assert set(doc) == {"outcome", "steps", "note", "binding_lemma", "clauses"}


def test_settle_flags_binding_lemma():
    """[TRIVIAL] A lemma violation alone fails the report."""
    report = AgreementReport()
    report.binding_lemma.check(False, witness="x rebound in its own scope")
    assert report.settle().outcome == "fail"
