from .core import (
    CirParams,
    GeneralFormCoeffs,
    GFunction,
    Payoff,
    PayoffKind,
    Regime,
    from_general_form,
    g_argmax,
    g_eval,
    payoff_eval,
    to_general_form,
)
from .errors import GcirError

__version__ = "0.1.0"

__all__ = [
    "CirParams",
    "GeneralFormCoeffs",
    "GFunction",
    "GcirError",
    "Payoff",
    "PayoffKind",
    "Regime",
    "from_general_form",
    "g_argmax",
    "g_eval",
    "payoff_eval",
    "to_general_form",
]
