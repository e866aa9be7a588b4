"""Best constants of forward-reverse Brascamp-Lieb inequalities on Euclidean spaces.

The package computes the Gaussian best constant of the inequality for a
datum (c, d, B), certifies optimality of candidate extremizers, decides
finiteness combinatorially, and ships a catalog of classical data with
known closed forms.
"""
from .core import (
    BlockDiagonal,
    Datum,
    DatumFormatError,
    SpdOperator,
    SymmetricOperator,
    ValidationReport,
    datum_from_dict,
    datum_to_dict,
    direct_sum,
    dual_datum,
    load_datum,
    map_extremizers_to_dual,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "BlockDiagonal",
    "Datum",
    "DatumFormatError",
    "SpdOperator",
    "SymmetricOperator",
    "ValidationReport",
    "datum_from_dict",
    "datum_to_dict",
    "direct_sum",
    "dual_datum",
    "load_datum",
    "map_extremizers_to_dual",
    "validate",
    "__version__",
]
