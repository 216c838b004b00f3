"""Character-level multilingual language modeling with continuous language vectors."""

from .kernels import backend_name

__version__ = "0.1.0"

__all__ = ["backend_name", "__version__"]
