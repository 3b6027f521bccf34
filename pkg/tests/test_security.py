"""Noninterference tests.

Tags: [DERIVED] hand-computed oracle, [TRIVIAL] structural sanity.
"""

from __future__ import annotations

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from refflow.security import (
    HIGH,
    LOW,
    Flow,
    LabelingError,
    check_noninterference,
    default_labeling,
    expanded_origins,
    level_of,
    parse_labeling,
    semantic_low_flows,
)
from refflow.syntax import parse

from conftest import DIRECT_FLOW_SRC, INDIRECT_FLOW_SRC, NO_FLOW_SRC

H_HIGH = {"h": HIGH}


# ---------------------------------------------------------------------------
# The documented examples
# ---------------------------------------------------------------------------


def test_direct_flow_is_a_violation():
    """[DERIVED] Binding a high variable's value to a low name is
    witnessed as (h@1, binding of l at 2)."""
    verdict = check_noninterference(parse(DIRECT_FLOW_SRC), H_HIGH)
    assert not verdict.ok
    assert verdict.flows == (Flow("h", 1, "l", 2),)
    assert verdict.formulations_agree


def test_constant_binding_passes():
    """[DERIVED] The same shape with a constant has no flow."""
    verdict = check_noninterference(parse(NO_FLOW_SRC), H_HIGH)
    assert verdict.ok and verdict.flows == ()
    assert verdict.formulations_agree


def test_indirect_flow_through_a_cell():
    """[DERIVED] Writing the secret into a reference and reading it
    back is witnessed at the read's binding."""
    verdict = check_noninterference(parse(INDIRECT_FLOW_SRC), H_HIGH)
    assert not verdict.ok
    assert Flow("h", 4, "l", 7) in verdict.flows
    assert verdict.formulations_agree


def test_unlabeled_program_trivially_passes():
    """[TRIVIAL] With every name low there is no high source."""
    assert check_noninterference(parse(DIRECT_FLOW_SRC), {}).ok


def test_high_binder_is_not_a_sink():
    """[DERIVED] Flows into a high binder are not violations."""
    prog = parse("(let k (h@1)@2 (k@3)@4)")
    assert check_noninterference(prog, {"h": HIGH, "k": HIGH}).ok


# ---------------------------------------------------------------------------
# Labelings
# ---------------------------------------------------------------------------


def test_parse_labeling_grammar():
    """[TRIVIAL] Comments, blank lines, and spacing are tolerated;
    repeated consistent lines collapse."""
    text = "# inputs\nh = high\n\nl=low\nh = high  # again\n"
    assert parse_labeling(text) == {"h": HIGH, "l": LOW}


def test_parse_labeling_rejects_bad_lines():
    """[TRIVIAL] Bad syntax, bad levels, and conflicts all name their
    line."""
    with pytest.raises(LabelingError) as exc:
        parse_labeling("h high")
    assert exc.value.line == 1
    with pytest.raises(LabelingError):
        parse_labeling("h = secret")
    with pytest.raises(LabelingError) as exc:
        parse_labeling("h = high\nh = low")
    assert exc.value.line == 2


def test_level_default_is_low():
    """[TRIVIAL] Unlabeled names are low."""
    assert level_of({}, "anything") == LOW
    assert level_of({"h": HIGH}, "h") == HIGH


def test_default_labeling_is_deterministic():
    """[TRIVIAL] The generated labeling is a pure function of the
    program and marks every third sorted name high."""
    prog = parse("(let a 1 (let b 2 (let c 3 (let d 4 d))))")
    labeling = default_labeling(prog)
    assert labeling == {"a": HIGH, "b": LOW, "c": LOW, "d": HIGH}
    assert default_labeling(prog, stride=2) == {"a": HIGH, "b": LOW, "c": HIGH, "d": LOW}
    with pytest.raises(ValueError):
        default_labeling(prog, stride=0)


# ---------------------------------------------------------------------------
# Expansion
# ---------------------------------------------------------------------------


def test_expansion_pulls_internal_entries():
    """[DERIVED] The read's origin set mentions the cell's internal
    variable; expansion pulls the written secret through it."""
    from refflow.typesys import IVar, typecheck

    prog = parse(INDIRECT_FLOW_SRC)
    analysis = typecheck(prog, allow_free=True)
    read_ty = analysis.type_of[7]
    direct = {subject for subject, _ in read_ty.delta}
    assert IVar(2) in direct
    expanded = expanded_origins(read_ty, analysis.gamma, analysis.pi, 7)
    assert ("h", 4) in expanded


# ---------------------------------------------------------------------------
# Properties against the run and against wider labelings
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=100_000), st.integers(min_value=1, max_value=25))
def test_formulations_agree_on_generated_programs(seed, size):
    """[DERIVED] The origin reading and the chain reading return the
    same flows on generated labeled programs."""
    from refflow.agreement import gen_program

    prog = gen_program(seed, size)
    verdict = check_noninterference(prog, default_labeling(prog))
    assert verdict.formulations_agree


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=100_000), st.integers(min_value=1, max_value=25))
def test_static_pass_implies_no_runtime_flow(seed, size):
    """[DERIVED] Whenever the static verdict passes, the run's actual
    dependency footprints carry nothing high into a low binding; when
    it fails, the runtime flows are a subset of the witnessed ones."""
    from refflow.agreement import gen_program

    prog = gen_program(seed, size)
    labeling = default_labeling(prog)
    verdict = check_noninterference(prog, labeling)
    semantic = semantic_low_flows(prog, labeling)
    if verdict.ok:
        assert semantic == ()
    static_pairs = {(f.subject, f.binding) for f in verdict.flows}
    assert {(f.subject, f.binding) for f in semantic} <= static_pairs


@settings(max_examples=60, deadline=None)
@given(st.integers(min_value=0, max_value=100_000), st.integers(min_value=1, max_value=25))
def test_raising_a_label_preserves_other_flows(seed, size):
    """[DERIVED] Raising one name to high never erases a flow into a
    different binder."""
    from refflow.agreement import gen_program

    prog = gen_program(seed, size)
    labeling = default_labeling(prog)
    verdict = check_noninterference(prog, labeling)
    low_names = sorted(name for name, level in labeling.items() if level == LOW)
    if not low_names:
        return
    raised = low_names[seed % len(low_names)]
    wider = check_noninterference(prog, {**labeling, raised: HIGH})
    kept = {flow for flow in verdict.flows if flow.binder != raised}
    assert kept <= set(wider.flows)
