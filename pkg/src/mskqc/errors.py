"""Exception hierarchy shared by all mskqc modules."""


class MskqcError(Exception):
    pass


class UnknownStructure(MskqcError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class GeometryError(MskqcError, ValueError):
    pass


class FormatError(MskqcError, ValueError):
    """Malformed file or table. ``offset`` is the byte position where parsing failed."""

    def __init__(self, message, offset=None, column=None):
        self.offset = offset
        self.column = column
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class StackError(MskqcError, ValueError):
    pass


class CaseError(MskqcError, ValueError):
    pass


class EmptyMask(MskqcError, ValueError):
    pass


class EmptyStructure(MskqcError, ValueError):
    pass


class ShapeError(MskqcError, ValueError):
    pass


class CalibrationError(MskqcError, ValueError):
    pass


class DegenerateLabels(MskqcError, ValueError):
    pass


class SingularFit(MskqcError, ValueError):
    pass


class NoNegativeTrend(MskqcError, ValueError):
    pass


class DegenerateInput(MskqcError, ValueError):
    pass


class UnsupportedN(MskqcError, ValueError):
    pass


class SpecError(MskqcError, ValueError):
    pass
