#!/usr/bin/env python3
"""
Shared exception types for the lsgrad-dtn laboratory.

Solver non-convergence is NOT an exception: results carry a ``converged``
flag and the CLI maps it to exit code 2.
"""


class InvalidArgument(ValueError):
    """Raised when a precondition on grids, fields or options is violated"""
    pass


class OracleSizeError(InvalidArgument):
    """Raised when an exact oracle is asked to run beyond its size cap"""
    pass


def require(condition: bool, message: str) -> None:
    """Raise InvalidArgument(message) unless condition holds."""
    if not condition:
        raise InvalidArgument(message)
