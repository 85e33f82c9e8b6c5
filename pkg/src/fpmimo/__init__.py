"""Finite-precision Krylov solvers and a massive-MIMO detection harness.

The package emulates reduced-precision floating-point arithmetic in software,
provides conjugate-gradient detectors that mix a working precision with
separate matrix-vector and inner-product precisions (optionally with a
block-Jacobi preconditioner), and ships a Monte-Carlo link-level harness for
bit-error-rate and computational-cost studies on correlated MIMO channels.
"""

from fpmimo.errors import ContractViolation, FormatError

__version__ = "0.1.0"

__all__ = ["ContractViolation", "FormatError", "__version__"]
