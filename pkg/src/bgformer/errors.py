class BGFormerError(ValueError):
    """Base class for every error raised on bad input."""


class ShapeError(BGFormerError):
    pass


class ContractError(BGFormerError):
    """A documented precondition was violated."""


class DomainError(BGFormerError):
    """A point lies on or outside the Poincare ball."""


class ParseError(BGFormerError):
    """A dataset, checkpoint or config file could not be decoded."""
