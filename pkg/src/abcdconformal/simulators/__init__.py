"""The three benchmark generative models and seeded reference tables."""

from . import grf, lotka_volterra, ma2
from .table import GenerationBudgetError, ReferenceTable, generate_reference_table

__all__ = [
    "ma2",
    "grf",
    "lotka_volterra",
    "ReferenceTable",
    "GenerationBudgetError",
    "generate_reference_table",
]
