# ruff:noqa:D101 docstrings


class FbsimError(Exception):
    """Base class for all fbsim errors."""


class InvalidParamsError(FbsimError, ValueError):
    pass


class TraceMismatchError(FbsimError, ValueError):
    """A jitter trace does not cover the stripes an operation needs."""


class NoBandingDetectedError(FbsimError, RuntimeError):
    """No spectral peak cleared the prominence threshold."""

    def __init__(self, msg: str, prominence: float = 0.0) -> None:
        super().__init__(msg)
        self.prominence = prominence


class ImageReadError(FbsimError, OSError):
    pass
