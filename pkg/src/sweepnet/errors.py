"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: SchemaError -> 1, PreconditionError
(including InfeasibleError) -> 2, SolverError -> 3.
"""


class SchemaError(ValueError):
    """Malformed input: file does not parse or violates the document schema."""


class PreconditionError(RuntimeError):
    """A mathematical precondition fails (rank, balance, safe load, feasibility)."""


class InfeasibleError(PreconditionError):
    """A constraint system that must be nonempty is empty."""


class SolverError(RuntimeError):
    """Numerical solver failed to converge or produced an invalid certificate."""
