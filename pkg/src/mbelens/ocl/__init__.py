"""Constraint-language subset: parsing, printing and compliance evaluation."""
from .ast import (
    Arith,
    BoolOp,
    CollOp,
    Compare,
    Constraint,
    Expr,
    Literal,
    Nav,
    Neg,
    Not,
    SelfRef,
    VarRef,
    to_source,
)
from .evaluator import (
    ComplianceResult,
    EvaluationError,
    OclEvalError,
    Violation,
    check_compliance,
    evaluate,
    explain_violation,
)
from .parser import OclSyntaxError, parse_constraints, parse_expression

__all__ = [
    "Arith", "BoolOp", "CollOp", "Compare", "Constraint", "Expr", "Literal", "Nav", "Neg",
    "Not", "SelfRef", "VarRef", "to_source",
    "ComplianceResult", "EvaluationError", "OclEvalError", "Violation", "check_compliance",
    "evaluate", "explain_violation",
    "OclSyntaxError", "parse_constraints", "parse_expression",
]
