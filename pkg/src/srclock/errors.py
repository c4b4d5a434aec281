"""Exception types raised across the package."""


class SrclockError(Exception):
    pass


class ConfigError(SrclockError, ValueError):
    """Invalid configuration value or unknown key.

    ``key`` names the offending entry (dotted path) when known.
    """

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class IntegrationDiverged(SrclockError, RuntimeError):
    """Non-finite moments encountered during integration."""

    def __init__(self, t, snapshot=None, message=None):
        super().__init__(message or f"integration diverged at t={t:.9g} s")
        self.t = t
        self.snapshot = snapshot


class PairingError(SrclockError, ValueError):
    pass


class InsufficientDataError(SrclockError, ValueError):
    pass


class FitError(SrclockError, RuntimeError):
    pass
