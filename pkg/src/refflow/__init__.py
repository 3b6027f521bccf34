"""refflow: data-flow and alias analysis for a small lambda calculus with references."""

from __future__ import annotations

__version__ = "0.1.0"
