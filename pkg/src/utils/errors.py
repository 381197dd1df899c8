from typing import Any, Dict, Optional


class RDDMError(Exception):
    pass


class DimensionError(RDDMError, ValueError):
    pass


class ContractError(RDDMError, ValueError):
    pass


class FormatError(RDDMError):

    def __init__(self, message: str, offset: Optional[int] = None):

        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(RDDMError):

    def __init__(self, message: str, path: Optional[str] = None):

        if path:
            message = f"{path}: {message}"
        super().__init__(message)
        self.path = path


class NumericError(RDDMError, ArithmeticError):

    def __init__(self, message: str, diagnostic: Optional[Dict[str, Any]] = None):

        self.diagnostic = diagnostic or {}
        if self.diagnostic:
            details = " ".join(f"{key}={value}" for key, value in self.diagnostic.items())
            message = f"{message} [{details}]"
        super().__init__(message)
