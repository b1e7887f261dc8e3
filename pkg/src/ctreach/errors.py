"""Error type shared across the package.

Every operational failure carries a stable machine-readable ``code`` (used by the
service layer and the CLI exit status) next to a human-readable message.
"""


class CtreachError(Exception):
    """Analysis or model error with a stable error code.

    Parameters
    ----------
    code : str
        Stable identifier, e.g. ``"assumption-violated"`` or ``"trivial-problem"``.
    message : str
        Human-readable description.
    """

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ModelFormatError(CtreachError):
    """Raised on malformed model files; carries the offending line number."""

    def __init__(self, message: str, line: int | None = None):
        loc = f" (line {line})" if line is not None else ""
        super().__init__("model-format", f"{message}{loc}")
        self.line = line
