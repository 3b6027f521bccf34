"""Shared fixtures: the worked reference program and friends.

The reference program allocates a reference, writes it through an
alias chain, and reads it back:

    (let x (ref 4@1)@2
      (let y (let z (5@3)@4 ((x@5) := (z@7))@8)@9
        (!(x@6))@10)@11)@12

Its run-time facts (bindings, order, result) and its static facts
(types, environment, order approximation, alias blocks) are derived by
hand in the test modules and asserted exactly.
"""

from __future__ import annotations

import pytest

from refflow.syntax import parse

ALIAS_CHAIN_SRC = (
    "(let x (ref 4@1)@2"
    " (let y (let z (5@3)@4 ((x@5) := (z@7))@8)@9"
    " (!(x@6))@10)@11)@12"
)

# Single-use abstraction applied twice: rejected by the linearity check.
DOUBLE_USE_SRC = r"(let x (\y. (y@1))@2 ((x@3) ((x@4) (1@5))@6)@7)@8"

# Direct flow of a free variable into a binding, and its harmless twin.
DIRECT_FLOW_SRC = "(let l (h@1)@2 (l@3)@4)"
NO_FLOW_SRC = "(let l (1@1)@2 (l@3)@4)"

# Flow through a reference cell: the secret is written, then read back.
INDIRECT_FLOW_SRC = (
    "(let r (ref 0@1)@2"
    " (let _ ((r@3) := (h@4))@5"
    " (let l (!(r@6))@7 (l@8)@9)@10)@11)@12"
)


@pytest.fixture
def alias_chain():
    return parse(ALIAS_CHAIN_SRC)


@pytest.fixture
def double_use():
    return parse(DOUBLE_USE_SRC)
