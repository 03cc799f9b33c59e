"""SDS wire protocol v1 codec.

One binary request/response pair per denoising call, transported as an HTTP
POST body with content-type application/octet-stream:

    request:  magic "SKLF-SDS1", then little-endian
              protocol u16 (= 1), timestep u32, guidance_scale f32,
              channels u16, height u16, width u16, prompt_len u16,
              prompt bytes (UTF-8),
              z_t payload (C*H*W f32, channel-major),
              conditioning image (3*H*W u8 RGB, channel-major)
    response: magic "SKLF-SDS1", status u16
              (0 = ok, 1 = bad request, 2 = model error), then the noise
              prediction (C*H*W f32) on status 0; error statuses may carry
              a u16 length plus a UTF-8 message.

Anything that fails to parse raises ProtocolError; the service maps that to
status 1 so a client bug can never take the server down.
"""

import struct

import numpy as np

WIRE_MAGIC = b"SKLF-SDS1"
PROTOCOL_VERSION = 1

STATUS_OK = 0
STATUS_BAD_REQUEST = 1
STATUS_MODEL_ERROR = 2

_REQ_HEAD = struct.Struct("<HIfHHHH")  # version, timestep, scale, C, H, W, prompt_len
_RESP_HEAD = struct.Struct("<H")  # status


class ProtocolError(ValueError):
    """Request or response bytes do not parse as the wire protocol."""


def encode_request(timestep, guidance_scale, prompt, z_t, conditioning):
    """Serialize one denoising request.

    Args:
        timestep: diffusion timestep, u32 range.
        guidance_scale: classifier-free guidance scale forwarded to the model.
        prompt: text prompt, UTF-8.
        z_t: (H, W, C) float array, sent as little-endian f32 channel-major.
        conditioning: (H, W, 3) uint8 skeleton map.

    Returns:
        Request bytes.
    """
    z = np.asarray(z_t)
    cond = np.asarray(conditioning)
    if z.ndim != 3:
        raise ValueError(f"z_t must be (H, W, C), got {z.shape}")
    h, w, c = z.shape
    if cond.shape != (h, w, 3) or cond.dtype != np.uint8:
        raise ValueError(
            f"conditioning must be ({h}, {w}, 3) uint8, got {cond.dtype} {cond.shape}"
        )
    prompt_bytes = prompt.encode("utf-8")
    if max(h, w, c) > 0xFFFF or len(prompt_bytes) > 0xFFFF:
        raise ValueError("field exceeds u16 range")
    if not 0 <= int(timestep) <= 0xFFFFFFFF:
        raise ValueError(f"timestep {timestep} outside u32 range")
    head = _REQ_HEAD.pack(PROTOCOL_VERSION, int(timestep), float(guidance_scale),
                          c, h, w, len(prompt_bytes))
    z_wire = np.ascontiguousarray(z.transpose(2, 0, 1), dtype="<f4").tobytes()
    cond_wire = np.ascontiguousarray(cond.transpose(2, 0, 1)).tobytes()
    return WIRE_MAGIC + head + prompt_bytes + z_wire + cond_wire


def decode_request(data: bytes) -> dict:
    """Parse request bytes into a dict of typed fields.

    Raises ProtocolError for wrong magic, unsupported protocol version,
    truncation, or payload size mismatch.
    """
    if not data.startswith(WIRE_MAGIC):
        raise ProtocolError(f"bad request magic {data[:9]!r}")
    off = len(WIRE_MAGIC)
    if len(data) < off + _REQ_HEAD.size:
        raise ProtocolError("truncated request header")
    version, timestep, scale, c, h, w, plen = _REQ_HEAD.unpack_from(data, off)
    if version != PROTOCOL_VERSION:
        raise ProtocolError(f"unsupported protocol version {version}")
    off += _REQ_HEAD.size
    prompt = data[off : off + plen]
    if len(prompt) != plen:
        raise ProtocolError("truncated prompt")
    off += plen
    z_bytes = c * h * w * 4
    cond_bytes = 3 * h * w
    if len(data) != off + z_bytes + cond_bytes:
        raise ProtocolError(
            f"payload size {len(data) - off} != expected {z_bytes + cond_bytes}"
        )
    z = np.frombuffer(data, dtype="<f4", count=c * h * w, offset=off)
    z = z.reshape(c, h, w).transpose(1, 2, 0)
    off += z_bytes
    cond = np.frombuffer(data, dtype=np.uint8, count=cond_bytes, offset=off)
    cond = cond.reshape(3, h, w).transpose(1, 2, 0)
    return {
        "version": version,
        "timestep": timestep,
        "guidance_scale": scale,
        "prompt": prompt.decode("utf-8"),
        "z_t": z,
        "conditioning": cond,
    }


def encode_response(eps_hat=None, status: int = STATUS_OK, message: str = "") -> bytes:
    """Serialize a response: noise payload on ok, optional message otherwise."""
    if status == STATUS_OK:
        arr = np.ascontiguousarray(
            np.asarray(eps_hat).transpose(2, 0, 1), dtype="<f4")
        return WIRE_MAGIC + _RESP_HEAD.pack(STATUS_OK) + arr.tobytes()
    msg = message.encode("utf-8")
    return WIRE_MAGIC + _RESP_HEAD.pack(status) + struct.pack("<H", len(msg)) + msg


def decode_response(data: bytes):
    """Parse response bytes.

    Returns:
        (status, payload): payload is the raw f32 noise bytes on status 0,
        or the decoded message string otherwise.
    """
    if not data.startswith(WIRE_MAGIC):
        raise ProtocolError(f"bad response magic {data[:9]!r}")
    off = len(WIRE_MAGIC)
    if len(data) < off + _RESP_HEAD.size:
        raise ProtocolError("truncated response status")
    (status,) = _RESP_HEAD.unpack_from(data, off)
    off += _RESP_HEAD.size
    if status == STATUS_OK:
        return status, data[off:]
    if len(data) >= off + 2:
        (mlen,) = struct.unpack_from("<H", data, off)
        return status, data[off + 2 : off + 2 + mlen].decode("utf-8", "replace")
    return status, ""
