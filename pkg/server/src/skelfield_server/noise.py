"""Deterministic pseudo-noise for fake mode.

The fake backend must give the engine a noise prediction that is
bit-reproducible from the request bytes alone, across restarts and across
machines.  We therefore avoid every library RNG and every transcendental
function:

  - seed: first 8 bytes of SHA-256 over the raw request;
  - stream: counter mode, block i = SHA-256(seed || i) giving 8 u32 words;
  - normals: Irwin-Hall sum of 12 uniforms minus 6, which has exactly zero
    mean and unit variance and needs only adds and one multiply, so the
    output bytes do not depend on the platform's libm.

The Irwin-Hall tails are clipped at +/-6 sigma; for a test oracle that
trade-off is irrelevant and determinism is everything.
"""

import hashlib

import numpy as np

_WORDS_PER_BLOCK = 8  # sha256 digest = 32 bytes = 8 u32
_UNIFORMS_PER_SAMPLE = 12


def _u32_stream(seed: bytes, n_words: int) -> np.ndarray:
    blocks = (n_words + _WORDS_PER_BLOCK - 1) // _WORDS_PER_BLOCK
    raw = b"".join(
        hashlib.sha256(seed + i.to_bytes(8, "little")).digest()
        for i in range(blocks)
    )
    return np.frombuffer(raw, dtype="<u4")[:n_words]


def fake_noise(request_bytes: bytes, count: int) -> np.ndarray:
    """Pseudo-normal samples determined entirely by the request bytes.

    Args:
        request_bytes: the raw wire request.
        count: number of samples (C*H*W for a full noise image).

    Returns:
        (count,) float32 array with mean 0 and variance 1 per construction.
    """
    seed = hashlib.sha256(request_bytes).digest()[:8]
    words = _u32_stream(seed, count * _UNIFORMS_PER_SAMPLE)
    uniforms = words.astype(np.float64) * (1.0 / 4294967296.0)
    sums = uniforms.reshape(count, _UNIFORMS_PER_SAMPLE).sum(axis=1)
    return (sums - 6.0).astype("<f4")
