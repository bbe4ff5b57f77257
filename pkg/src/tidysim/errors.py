"""Exception hierarchy shared by every tidysim module."""


class TidySimError(Exception):
    """Base class; the CLI maps any of these to a nonzero exit."""


# --- maps -----------------------------------------------------------------

class ParseError(TidySimError, ValueError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        where = ""
        if line is not None:
            where = f"line {line}"
            if column is not None:
                where += f", column {column}"
            where += ": "
        super().__init__(where + message)


class InconsistentDimensions(ParseError):
    pass


class UnknownRoomLabel(ParseError):
    pass


class UnknownRoom(TidySimError, KeyError):
    def __str__(self):
        return f"unknown room: {self.args[0]!r}"


class RoomHasNoFreeCell(TidySimError):
    pass


class OutOfBounds(TidySimError, ValueError):
    pass


# --- preference model -----------------------------------------------------

class DuplicateRating(ParseError):
    pass


class RatingOutOfScale(ParseError):
    pass


class VocabularyMismatch(TidySimError):
    pass


class EmptyCorpus(TidySimError):
    pass


class DivergenceDetected(TidySimError, FloatingPointError):
    pass


class UnknownUser(TidySimError, KeyError):
    def __str__(self):
        return f"unknown user: {self.args[0]!r}"


class UnknownItem(TidySimError, KeyError):
    def __str__(self):
        return f"unknown item: {self.args[0]!r}"


class UnknownObject(TidySimError, KeyError):
    def __str__(self):
        return f"unknown object: {self.args[0]!r}"


class ModelFormatError(TidySimError, ValueError):
    pass


# --- behavior trees -------------------------------------------------------

class MalformedTree(TidySimError, ValueError):
    pass


class UnboundLeaf(TidySimError, LookupError):
    pass


class MissingBinding(TidySimError, LookupError):
    pass


class BlackboardKeyMissing(TidySimError, KeyError):
    def __str__(self):
        return f"blackboard key missing: {self.args[0]!r}"


# --- navigation -----------------------------------------------------------

class GoalUntraversable(TidySimError):
    pass


class NoPathExists(TidySimError):
    pass


class NoApproachExists(TidySimError):
    pass


# --- simulation -----------------------------------------------------------

class UnknownReceptacle(TidySimError, KeyError):
    def __str__(self):
        return f"unknown receptacle: {self.args[0]!r}"


class NoTempLocation(TidySimError):
    pass


class ConfigError(TidySimError):
    pass
