"""Three-channel gland instance segmentation on a small numpy autodiff core."""

from .errors import ConfigError, DataError, DomainError, GlandError, InternalError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "DomainError", "GlandError", "InternalError", "__version__"]
