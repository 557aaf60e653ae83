"""
Exception hierarchy for RankSight

Every error carries the exit code ranksight.py terminates with.
"""


class RankSightError(Exception):
    """Base class for all RankSight failures"""
    exit_code = 1


# exit code 2: bad input, bad config, bad files

class ValidationError(RankSightError):
    exit_code = 2


class ConfigError(ValidationError):
    pass


class InvalidEnergy(ValidationError):
    pass


class InvalidRank(ValidationError):
    pass


class SpaceShapeError(ValidationError):
    pass


class UnknownLayer(ValidationError):
    pass


class InvalidBaseline(ValidationError):
    pass


class ContractViolation(ValidationError):
    pass


class InvalidSize(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed binary container; offset is the byte position of the problem"""

    def __init__(self, message, offset=0):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class LogReplayError(ValidationError):
    pass


# exit code 3: evaluation failed

class EvaluatorError(RankSightError):
    exit_code = 3


class ProtocolError(EvaluatorError):
    pass


class EvalTimeout(EvaluatorError):
    pass


class ModelShapeError(EvaluatorError):
    pass


class ProfileBuildError(EvaluatorError):
    pass


# exit code 4: numerics went wrong

class NumericalError(RankSightError):
    exit_code = 4


class InvalidMatrix(NumericalError):
    pass


class DegenerateSpectrum(NumericalError):
    pass


class StaleCache(NumericalError):
    pass


class DegenerateFullset(NumericalError):
    pass


class DivergenceError(NumericalError):
    """Retraining blew up; history holds the per-epoch error trace"""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


# exit code 5: nothing to report

class EmptyResultError(RankSightError):
    exit_code = 5


class NoFeasiblePoint(EmptyResultError):
    pass


class EmptyCondensedSet(EmptyResultError):
    pass
