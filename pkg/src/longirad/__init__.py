"""Longitudinal lesion tracking, radiomic features and survival modeling."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("longirad")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import ConfigError, LongiradError, NumericalError, ValidationError

__all__ = ["ConfigError", "LongiradError", "NumericalError", "ValidationError", "__version__"]
