"""Numerical laboratory for expert prediction against an adversary that corrupts one expert per round."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    CapacityError, InfeasibleError, InvalidInputError, LimAdvError, NumericalError,
    UnsupportedRegimeError,
)
from .game_core import (  # noqa: E402
    AdversaryControl, ExpertModel, FinalCondition, ForecasterControl, check_final_condition,
    expected_gain, gain_distribution,
)

__all__ = [
    "AdversaryControl", "CapacityError", "ExpertModel", "FinalCondition", "ForecasterControl",
    "InfeasibleError", "InvalidInputError", "LimAdvError", "NumericalError",
    "UnsupportedRegimeError", "check_final_condition", "expected_gain", "gain_distribution",
]
