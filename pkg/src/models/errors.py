from typing import Any, Dict, Optional


class SyncLabError(Exception):
    """Base class for every error raised by the lab."""


class ConfigurationError(SyncLabError, ValueError):
    def __init__(self, message: str, key_path: Optional[str] = None):
        super().__init__(message)
        self.key_path = key_path


class DomainError(SyncLabError, ValueError):
    pass


class ContractViolation(SyncLabError, RuntimeError):
    pass


class TrainingError(SyncLabError, RuntimeError):
    def __init__(
        self,
        message: str,
        diagnostics: Optional[Dict[str, Any]] = None,
        report: Any = None,
    ):
        super().__init__(message)
        self.diagnostics = diagnostics or {}
        self.report = report


class CheckpointError(SyncLabError, ValueError):
    pass
