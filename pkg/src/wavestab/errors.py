"""Exception taxonomy shared across the package.

The CLI maps these onto its exit codes: schema problems exit 1, failed
geometry assumptions exit 2 and solver preconditions exit 3.
"""


class WavestabError(Exception):
    """Base class for package errors."""


class SchemaError(WavestabError):
    """Configuration document failed validation."""


class SolverPreconditionError(WavestabError):
    """A solver precondition (CFL, compatibility, horizon) was violated."""


class CflError(SolverPreconditionError):
    pass


class CompatibilityError(SolverPreconditionError):
    pass


class HorizonError(SolverPreconditionError):
    pass
