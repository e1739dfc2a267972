"""Exception types shared across the package.

The CLI maps these onto process exit codes (see :mod:`ppstl.cli`):
invariant breaches exit with 2, infeasible configurations with 3, and
scenario schema problems with 4.
"""


class PpstlError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PpstlError, ValueError):
    """An argument violates a documented precondition."""


class AssumptionViolationError(PpstlError):
    """A structural assumption on the graphs or matrices does not hold."""


class EmptyNeighborhoodError(PpstlError):
    """The k-hop neighborhood is empty, so no estimation problem exists."""


class LocalityError(PpstlError):
    """A computation tried to read data outside its communication scope.

    This is the decentralization contract: estimator and controller code
    may only touch quantities reachable through one-hop exchange.
    """


class InfeasibleError(PpstlError):
    """No admissible funnel/relaxation exists for the requested margins."""

    def __init__(self, message: str, binding: str = ""):
        super().__init__(message)
        self.binding = binding  # name of the constraint that failed


class InsufficientDataError(PpstlError):
    """A trajectory is too short for the formula horizon being monitored."""


class ScenarioError(PpstlError):
    """Scenario file failed schema validation; carries per-path messages."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems) or "invalid scenario")
