import numpy as np
import pytest

from skelfield_server.noise import fake_noise
from skelfield_server.protocol import (
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


def sample_request(h=4, w=3, c=2, prompt="a person", timestep=99):
    rng = np.random.default_rng(0)
    z = rng.standard_normal((h, w, c)).astype("<f4")
    cond = rng.integers(0, 256, size=(h, w, 3), dtype=np.uint8)
    return z, cond, encode_request(timestep=timestep, guidance_scale=5.0,
                                   prompt=prompt, z_t=z, conditioning=cond)


def test_request_round_trip():
    z, cond, data = sample_request()
    req = decode_request(data)
    assert req["version"] == PROTOCOL_VERSION
    assert req["timestep"] == 99
    assert req["guidance_scale"] == np.float32(5.0)
    assert req["prompt"] == "a person"
    assert np.array_equal(req["z_t"], z)
    assert np.array_equal(req["conditioning"], cond)


def test_request_rejects_bad_magic():
    _, _, data = sample_request()
    with pytest.raises(ProtocolError, match="magic"):
        decode_request(b"BADMAGIC!" + data[9:])


def test_request_rejects_other_version():
    _, _, data = sample_request()
    bad = bytearray(data)
    bad[9] = 2  # protocol u16 low byte
    with pytest.raises(ProtocolError, match="version 2"):
        decode_request(bytes(bad))


@pytest.mark.parametrize("cut", [3, 12, 20, -7, -1])
def test_request_rejects_truncation(cut):
    _, _, data = sample_request()
    with pytest.raises(ProtocolError):
        decode_request(data[:cut])


def test_request_rejects_trailing_garbage():
    _, _, data = sample_request()
    with pytest.raises(ProtocolError, match="payload"):
        decode_request(data + b"\x00")


def test_response_ok_round_trip():
    eps = np.random.default_rng(1).standard_normal((4, 3, 2)).astype("<f4")
    status, payload = decode_response(encode_response(eps))
    assert status == STATUS_OK
    back = np.frombuffer(payload, dtype="<f4").reshape(2, 4, 3).transpose(1, 2, 0)
    assert np.array_equal(back, eps)


def test_response_error_carries_message():
    data = encode_response(status=STATUS_BAD_REQUEST, message="short read")
    assert data.startswith(WIRE_MAGIC)
    status, message = decode_response(data)
    assert status == STATUS_BAD_REQUEST
    assert message == "short read"
    status, message = decode_response(
        encode_response(status=STATUS_MODEL_ERROR, message="oom"))
    assert status == STATUS_MODEL_ERROR
    assert message == "oom"


def test_fake_noise_is_a_pure_function_of_bytes():
    a = fake_noise(b"request-one", 64)
    b = fake_noise(b"request-one", 64)
    c = fake_noise(b"request-two", 64)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    assert a.dtype == np.float32
    assert a.shape == (64,)


def test_fake_noise_prefix_stability():
    # Longer draws extend, never reshuffle, the stream for the same bytes.
    short = fake_noise(b"req", 16)
    long = fake_noise(b"req", 64)
    assert np.array_equal(long[:16], short)


def test_fake_noise_moments():
    x = fake_noise(b"moment-check", 200_000).astype(np.float64)
    assert abs(x.mean()) < 0.01
    assert abs(x.var() - 1.0) < 0.02
    assert np.abs(x).max() <= 6.0  # sum of 12 uniforms is bounded
