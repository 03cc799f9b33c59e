"""Denoiser service speaking the SDS wire protocol.

The training engine posts noised renders plus a skeleton conditioning image
and expects a noise prediction back.  This package is the service side of
that contract: a fake mode that returns hash-seeded pseudo-noise for
integration tests, and a best-effort adapter for a real conditioned
diffusion model.
"""

from .app import ServerConfig, ServerError, make_server, serve
from .protocol import (
    PROTOCOL_VERSION,
    STATUS_BAD_REQUEST,
    STATUS_MODEL_ERROR,
    STATUS_OK,
    WIRE_MAGIC,
    ProtocolError,
    decode_request,
    decode_response,
    encode_request,
    encode_response,
)

__all__ = [
    "PROTOCOL_VERSION",
    "STATUS_BAD_REQUEST",
    "STATUS_MODEL_ERROR",
    "STATUS_OK",
    "WIRE_MAGIC",
    "ProtocolError",
    "ServerConfig",
    "ServerError",
    "decode_request",
    "decode_response",
    "encode_request",
    "encode_response",
    "make_server",
    "serve",
]
