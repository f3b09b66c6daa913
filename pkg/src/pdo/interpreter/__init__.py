"""Deterministic, sandboxed contract language."""

from .evaluator import (
    DEFAULT_MAX_STEPS,
    PRIMITIVES,
    ArityError,
    BadMethodResult,
    BudgetExhausted,
    ContractRaised,
    ContractTypeError,
    DepthExceeded,
    EvalError,
    StepBudget,
    UnknownMethod,
    eval_method,
    evaluate,
)
from .reader import SPECIAL_FORMS, Method, ParseError, Program, canonicalize, parse, render
from .values import (
    EMPTY_STATE,
    Assoc,
    Symbol,
    ValueEncodingError,
    decode_value,
    encode_value,
    from_json,
    to_json,
    values_equal,
)

__all__ = [
    "DEFAULT_MAX_STEPS", "PRIMITIVES", "SPECIAL_FORMS", "EMPTY_STATE",
    "ArityError", "Assoc", "BadMethodResult", "BudgetExhausted", "ContractRaised",
    "ContractTypeError", "DepthExceeded", "EvalError", "Method", "ParseError",
    "Program", "StepBudget", "Symbol", "UnknownMethod", "ValueEncodingError",
    "canonicalize", "decode_value", "encode_value", "eval_method", "evaluate",
    "from_json", "parse", "render", "to_json", "values_equal",
]
