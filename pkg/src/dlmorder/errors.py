"""Exception hierarchy shared by every module."""


class DlmOrderError(Exception):
    """Base class for all package errors."""


class InvalidInput(DlmOrderError, ValueError):
    pass


class EvaluationError(DlmOrderError, ArithmeticError):
    pass


class InvalidToken(InvalidInput):
    pass


class SequenceTooLong(InvalidInput):
    pass


class TrainingDiverged(DlmOrderError, ArithmeticError):
    pass


class SamplerStalled(DlmOrderError, RuntimeError):
    pass


class SamplerViolation(DlmOrderError, RuntimeError):
    pass


class UnsupportedModel(DlmOrderError):
    pass


class BlockTooLarge(InvalidInput):
    pass
