"""Exception types shared across the package."""


class CreflowError(Exception):
    """Base class for all package-specific errors."""


class FormulaSyntaxError(CreflowError):
    """Raised on malformed formula text; carries the byte offset of the error."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset


class UnknownEntity(CreflowError):
    pass


class UnknownPredicate(CreflowError):
    pass


class UnknownEvaluator(CreflowError):
    pass


class MissingAttribute(CreflowError):
    pass


class MissingStream(CreflowError):
    pass


class HorizonMismatch(CreflowError):
    pass


class SpecValidationError(CreflowError):
    pass


class SchemaError(CreflowError):
    """Malformed or wrong-version structured input file."""


class LayoutMismatch(CreflowError):
    pass


class ShapeMismatch(CreflowError):
    pass


class DimMismatch(CreflowError):
    pass


class TOutOfRange(CreflowError):
    pass


class EmptyGroup(CreflowError):
    pass


class DegenerateWorld(CreflowError):
    pass


class ConstructionViolated(CreflowError):
    pass


class SingularSystem(CreflowError):
    pass


class InsufficientSamples(CreflowError):
    pass


class NonFiniteLoss(CreflowError):
    pass
