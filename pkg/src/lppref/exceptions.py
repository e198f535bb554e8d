"""Exception types raised across the package."""


class InvalidArgumentError(ValueError):
    """An argument is outside its documented domain."""


class EmptyDataError(ValueError):
    """An operation needs at least one observed rating or record."""


class DivergenceError(ArithmeticError):
    """Training produced a non-finite factor entry."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class CoverageError(ValueError):
    """A user pool cannot cover every item."""

    def __init__(self, missing):
        self.missing = list(missing)
        shown = ", ".join(str(m) for m in self.missing[:10])
        more = "" if len(self.missing) <= 10 else f" (+{len(self.missing) - 10} more)"
        super().__init__(f"no user rates item(s): {shown}{more}")


class CategoryMappingError(ValueError):
    """A source category has no unified counterpart."""
