"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes; the message names both."""


class ContractError(ValueError):
    """A documented precondition was violated by the caller."""


class IngestError(RuntimeError):
    """Dataset directory is unreadable or incomplete."""


class ParseError(IngestError):
    """A dataset file contains a malformed token; carries the line number."""


class IntegrityError(IngestError):
    """Dataset files are mutually inconsistent; carries the line number."""
