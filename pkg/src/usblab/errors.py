"""Exception types shared across the package."""


class UsbLabError(Exception):
    """Base class for all errors raised by this package."""


class DomainError(UsbLabError, ValueError):
    """An argument violates a documented domain constraint."""


class ConfigError(UsbLabError, ValueError):
    """An experiment or workload configuration is inconsistent."""


class TrainingError(UsbLabError, RuntimeError):
    """Classifier training diverged; carries the offending epoch."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
