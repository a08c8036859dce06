"""Reference decode server for the simulseq streaming bridge protocol."""

from .adapter import RealModelAdapter
from .server import (
    PROTOCOL_VERSION,
    ServerConfig,
    StepReply,
    ToyBackend,
    handle_stream,
    make_backend,
    serve,
)

__version__ = "0.1.0"

__all__ = [
    "PROTOCOL_VERSION",
    "RealModelAdapter",
    "ServerConfig",
    "StepReply",
    "ToyBackend",
    "handle_stream",
    "make_backend",
    "serve",
    "__version__",
]
