"""Reverse-mode automatic differentiation of SSA-form programs."""

from .ir import FunctionIR, parse_ir, print_ir, validate

__version__ = "0.1.0"

__all__ = ["FunctionIR", "parse_ir", "print_ir", "validate", "__version__"]
