"""Float64 tensor ops, tape-based gradients and Adam for the two small networks."""
from . import ops
from .adam import AdamState, Params, adam_step
from .gradcheck import grad_check
from .tape import NonFiniteError, Tape, Var, value_of

__all__ = [
    "AdamState", "NonFiniteError", "Params", "Tape", "Var",
    "adam_step", "grad_check", "ops", "value_of",
]
