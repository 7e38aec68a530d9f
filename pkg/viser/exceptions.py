"""Exception types raised by viser.

Errors that signal bad input data or configuration subclass `ValueError` so callers
that only know the standard library still catch them.
"""


class ViserError(Exception):
    """Base class for all viser errors."""


class ManifestParseError(ViserError, ValueError):
    """A manifest (or other line-delimited input) line could not be parsed."""
    def __init__(self, path, line_number, reason):
        self.path = path
        self.line_number = line_number
        self.reason = reason
        super().__init__(f"{path}:{line_number}: {reason}")


class ValidationError(ViserError, ValueError):
    """Parsed data violates a domain invariant (duplicate ids, unknown tags, ...)."""


class ConfigError(ViserError, ValueError):
    """Experiment configuration failed validation.

    Arguments:
        messages {list of str} -- One message per offending field.
    """
    def __init__(self, messages):
        if isinstance(messages, str):
            messages = [messages]
        self.messages = list(messages)
        super().__init__("; ".join(self.messages))


class ExtractorUnavailable(ViserError, RuntimeError):
    """The embedding extractor could not be reached after exhausting retries."""


class ProtocolError(ViserError, RuntimeError):
    """A protocol run failed."""
