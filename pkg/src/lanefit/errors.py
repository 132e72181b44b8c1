"""Exception types raised across the lanefit modules."""


class LaneFitError(Exception):
    """Base class for all lanefit errors."""


class HorizonSingularity(LaneFitError):
    """A point sits on (or behind) the projected horizon and maps to infinity."""


class SingularMatrix(LaneFitError):
    pass


class RankDeficient(LaneFitError):
    """Too few distinct rows to determine the requested polynomial."""


class InfeasibleStart(LaneFitError):
    pass


class MissingLabels(LaneFitError):
    pass


class DegenerateCamera(LaneFitError):
    """The camera sees no ground at all."""


class ParseError(LaneFitError):
    def __init__(self, msg, line=None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


class SchemaError(LaneFitError):
    def __init__(self, missing, line=None):
        self.missing = list(missing)
        self.line = line
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}missing key(s): {', '.join(self.missing)}")


class MisalignedRows(LaneFitError):
    pass


class MissingImage(LaneFitError):
    pass
