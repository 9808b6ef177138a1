"""Same-class path connectivity for small classifiers."""
from ._backend import available as available_backends
from ._backend import backend_name, set_backend

__version__ = "0.1.0"

__all__ = ["available_backends", "backend_name", "set_backend", "__version__"]
