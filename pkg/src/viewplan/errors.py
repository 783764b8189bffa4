"""Exception hierarchy.

Every error carries an ``exit_code`` used by the command-line front end:
2 usage/validation, 3 contract/protocol, 4 transport, 5 internal.
"""


class ViewPlanError(Exception):
    exit_code = 5


class ValidationError(ViewPlanError, ValueError):
    exit_code = 2


class InvalidDepth(ValidationError):
    pass


class InvalidCount(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class UnknownRecipe(ValidationError):
    pass


class DegeneratePointMap(ValidationError):
    pass


class DegenerateRender(ValidationError):
    pass


class NotEnoughCandidates(ValidationError):
    pass


class NumericalFailure(ViewPlanError):
    pass


class ContractViolation(ViewPlanError):
    exit_code = 3


class ProtocolError(ViewPlanError):
    exit_code = 3


class TransportError(ViewPlanError):
    exit_code = 4


class CompleterError(ViewPlanError):
    """A completer failed during planning; ``step`` is the planning step index."""

    def __init__(self, step, cause):
        super().__init__(f"completer failed at step {step}: {type(cause).__name__}: {cause}")
        self.step = step
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 5)
