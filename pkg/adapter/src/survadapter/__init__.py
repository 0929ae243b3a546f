"""Reference external-classifier server for the survclass line protocol."""

__version__ = "0.1.0"

from .server import BACKENDS, FrequencyBackend, TabPFNBackend, resolve_backend, serve
