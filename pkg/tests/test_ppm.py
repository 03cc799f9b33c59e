import numpy as np
import pytest

from skelfield import ppm


def test_header_layout():
    img = np.zeros((2, 3, 3), dtype=np.uint8)
    data = ppm.encode_ppm(img)
    assert data.startswith(b"P6\n3 2\n255\n")
    assert len(data) == len(b"P6\n3 2\n255\n") + 18


def test_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8)
    path = tmp_path / "img.ppm"
    ppm.write_ppm(path, img)
    back = ppm.read_ppm(path)
    assert np.array_equal(img, back)
    # identical bytes when re-encoded
    assert ppm.encode_ppm(back) == path.read_bytes()


def test_decode_accepts_comments():
    img = np.arange(12, dtype=np.uint8).reshape(2, 2, 3)
    data = b"P6\n# a comment\n2 2\n# another\n255\n" + img.tobytes()
    assert np.array_equal(ppm.decode_ppm(data), img)


@pytest.mark.parametrize(
    "data,match",
    [
        (b"P3\n1 1\n255\n\x00\x00\x00", "not a binary"),
        (b"P6\n1 1\n65535\n\x00\x00", "maxval"),
        (b"P6\n2 2\n255\n\x00\x00\x00", "pixel bytes"),
        (b"P6\n0 2\n255\n", "dimensions"),
    ],
)
def test_decode_rejects(data, match):
    with pytest.raises(ppm.PPMError, match=match):
        ppm.decode_ppm(data)


def test_to_rgb8_rounding_and_clipping():
    img = np.array([[[0.0, 0.5, 1.0], [1.5, -0.2, 0.25]]])
    out = ppm.to_rgb8(img)
    assert out.tolist() == [[[0, 128, 255], [255, 0, 64]]]


def test_to_rgb8_gray_broadcast():
    out = ppm.to_rgb8(np.full((2, 2), 0.5))
    assert out.shape == (2, 2, 3)
    assert np.all(out == 128)


def test_to_rgb8_takes_first_three_channels():
    img = np.zeros((1, 1, 4))
    img[0, 0] = [0.1, 0.2, 0.3, 0.9]
    out = ppm.to_rgb8(img)
    assert out[0, 0].tolist() == [26, 51, 77]
