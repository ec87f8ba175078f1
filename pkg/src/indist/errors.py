class ValidationError(ValueError):
    """Invalid argument or malformed input data."""


class ParseError(ValidationError):
    def __init__(self, message: str, line: int | None = None, path=None):
        self.line = line
        self.path = path
        if path is not None and line is not None:
            where = f"{path}:{line}: "
        elif path is not None:
            where = f"{path}: "
        elif line is not None:
            where = f"line {line}: "
        else:
            where = ""
        super().__init__(where + message)


class ConvergenceError(RuntimeError):
    """A numerical search failed to converge or to bracket a root."""
