"""Live publication channel and operator control inlet."""

from . import protocol
from .client import StreamClient
from .server import (
    DEFAULT_HOST,
    DEFAULT_PORT,
    CLIENT_QUEUE_DEPTH,
    ControlMailbox,
    LengthPrefixedTransport,
    StreamServer,
    stats_to_json,
)

__all__ = [
    "protocol",
    "StreamClient",
    "DEFAULT_HOST",
    "DEFAULT_PORT",
    "CLIENT_QUEUE_DEPTH",
    "ControlMailbox",
    "LengthPrefixedTransport",
    "StreamServer",
    "stats_to_json",
]
