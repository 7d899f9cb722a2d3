"""Exception types shared across the package.

Every error raised by lara code derives from :class:`LaraError` so callers
(and the CLI) can distinguish domain failures from programming bugs.
"""


class LaraError(Exception):
    """Base class for all lara errors."""


# --- file parsing -----------------------------------------------------------

class MalformedLine(LaraError):
    def __init__(self, line_no: int, reason: str = ""):
        self.line_no = line_no
        msg = f"malformed line {line_no}"
        if reason:
            msg += f": {reason}"
        super().__init__(msg)


class NegativeGrade(LaraError):
    pass


class DuplicatePair(LaraError):
    pass


class DuplicateDoc(LaraError):
    pass


class IncompleteLabels(LaraError):
    pass


# --- probability handling ---------------------------------------------------

class ZeroMass(LaraError):
    pass


class UnknownGrade(LaraError):
    pass


# --- LLM bridge -------------------------------------------------------------

class MissingField(LaraError):
    pass


class EndpointUnreachable(LaraError):
    pass


class NoGradeTokenFound(LaraError):
    pass


# --- configuration (shared by strategies, engine, service) -------------------

class InvalidConfig(LaraError):
    pass


# --- strategies -------------------------------------------------------------

class Exhausted(LaraError):
    """No selectable pair remains for the strategy."""


class UnknownPair(LaraError):
    pass


class DoubleObserve(LaraError):
    pass


class InvalidAssessorCount(InvalidConfig):
    pass


# --- metrics ----------------------------------------------------------------

class KeyMismatch(LaraError):
    pass


class TooFewSystems(LaraError):
    pass


# --- engine -----------------------------------------------------------------

class UnknownCollection(LaraError):
    pass


# --- annotation service -----------------------------------------------------

class SessionNotFound(LaraError):
    pass


class GroupBudgetExhausted(LaraError):
    pass


class NoPendingAssignment(LaraError):
    pass


class GradeOutOfRange(LaraError):
    pass


class StaleAssignment(LaraError):
    pass


class SessionNotFinalizable(LaraError):
    pass
