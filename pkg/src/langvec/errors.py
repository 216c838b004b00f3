"""Exception types shared across the package."""


class LangvecError(Exception):
    """Base class for all langvec errors."""


class ShapeError(LangvecError):
    """Operands have incompatible shapes."""


class ConfigError(LangvecError):
    """Invalid configuration or violated precondition."""


class CorpusFormatError(LangvecError):
    """A corpus file could not be parsed."""


class UnknownLanguageError(LangvecError, KeyError):
    """A language code is not present in the model's language table."""

    def __init__(self, code, known):
        self.code = code
        self.known = sorted(known)
        super().__init__(f"unknown language {code!r}; known: {', '.join(self.known)}")

    def __str__(self):
        return self.args[0]


class CheckpointError(LangvecError):
    """Base class for checkpoint load failures."""


class BadMagicError(CheckpointError):
    """File does not start with the checkpoint magic."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint format version is not supported."""

    def __init__(self, found, supported):
        self.found = found
        self.supported = supported
        super().__init__(f"checkpoint version {found} not supported (reader supports {supported})")


class TruncatedCheckpointError(CheckpointError):
    """Checkpoint file ended before the expected number of bytes."""


class DivergenceError(LangvecError):
    """Training produced a non-finite loss or gradient."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result
