"""Exception types raised across herdopt."""


class HerdoptError(Exception):
    pass


class SingularMatrix(HerdoptError):
    pass


class StepSizeUnderflow(HerdoptError):
    """Adaptive step shrank below the floor; usually stiffness or blow-up."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class MissingControls(HerdoptError):
    pass


class MaxNodesExceeded(HerdoptError):
    pass


class NotConverged(HerdoptError):
    pass


class Diverged(HerdoptError):
    pass


class MaxIterationsExceeded(HerdoptError):
    pass


class NoStabilizingSolution(HerdoptError):
    pass


class ControllerStalled(HerdoptError):
    pass


class ParseError(HerdoptError):
    pass


class ValidationError(HerdoptError):
    pass
