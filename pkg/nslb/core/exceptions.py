# =============================================================================
# NSLB - EXCEPTIONS
# =============================================================================

"""
Exception hierarchy shared by every service.
"""

from typing import Optional

from .constants import ERROR_MESSAGES


class NSLBError(Exception):
    """Base error; `detail` is the human-readable diagnostic."""

    code = "BAD_CONFIG"

    def __init__(self, detail: Optional[str] = None, code: Optional[str] = None):
        if code is not None:
            self.code = code
        base = ERROR_MESSAGES.get(self.code, "")
        self.detail = f"{base}: {detail}" if detail and base else (detail or base)
        super().__init__(self.detail)


class UsageError(NSLBError):
    """Invalid arguments to a library call."""
    code = "EMPTY_ARGMAX"


class ConfigurationError(NSLBError):
    """Invalid or inconsistent configuration."""
    code = "BAD_CONFIG"


class NumericUnderflowError(NSLBError):
    """Likelihood mass vanished."""
    code = "ZERO_LIKELIHOOD"


class InstanceTooLargeError(NSLBError):
    """Exact enumeration guard tripped."""
    code = "INSTANCE_TOO_LARGE"


class AgentProtocolError(NSLBError):
    """act/update called out of order."""
    code = "UPDATE_WITHOUT_ACT"


class DataFormatError(NSLBError):
    """Missing or malformed input data file."""
    code = "MALFORMED_LINE"

    def __init__(self, detail: Optional[str] = None, line_number: Optional[int] = None,
                 path: Optional[str] = None, code: Optional[str] = None):
        self.line_number = line_number
        self.path = path
        location = ""
        if path is not None:
            location = str(path) if line_number is None else f"{path}:{line_number}"
        elif line_number is not None:
            location = f"line {line_number}"
        if location and detail:
            detail = f"{location}: {detail}"
        elif location:
            detail = location
        super().__init__(detail, code=code)
