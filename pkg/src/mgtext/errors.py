"""Exception types shared across the package."""


class MgtextError(Exception):
    """Base class for all package errors."""


class ShapeError(MgtextError, ValueError):
    """Tensor extents incompatible with the requested operation."""


class ConfigError(MgtextError, ValueError):
    """Invalid model or tokenizer configuration."""


class LabelError(MgtextError, ValueError):
    """Target id outside the valid class range."""


class AlphabetError(MgtextError, ValueError):
    """Text contains characters outside the recognizer alphabet (or is empty)."""


class LengthError(MgtextError, ValueError):
    """Text or token sequence exceeds the supported length."""


class CorpusError(MgtextError, ValueError):
    """Tokenizer training corpus is empty or malformed."""


class ProtocolError(MgtextError, ValueError):
    """Fusion called with inputs that violate its contract."""


class FormatError(MgtextError, ValueError):
    """Checkpoint or image file is malformed; message names the byte offset."""
