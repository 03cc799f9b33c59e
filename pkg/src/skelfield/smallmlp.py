"""Minimal dense networks with explicit reverse-mode gradients.

Both the radiance field and the density-weighting net are small MLPs whose
gradients must flow through a custom volume-rendering backward pass, so the
forward/backward pair is written out by hand on flat parameter vectors rather
than pulled from an autodiff framework. Hidden layers use softplus (smooth,
monotone, cheap stable backward); output heads are linear and get squashed by
the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def embed_dim(in_dim: int, n_freq: int) -> int:
    return in_dim * (1 + 2 * n_freq)


def positional_embedding(x: np.ndarray, n_freq: int) -> np.ndarray:
    """Frequency-encode coordinates.

    Args:
        x: (..., D) coordinates, already scaled to roughly [-pi, pi].
        n_freq: number of octaves L.

    Returns:
        (..., D*(1+2L)) array [x, sin(x), cos(x), sin(2x), cos(2x), ...].
    """
    parts = [x]
    for level in range(n_freq):
        arg = x * float(2**level)
        parts.append(np.sin(arg))
        parts.append(np.cos(arg))
    return np.concatenate(parts, axis=-1)


def softplus(z: np.ndarray) -> np.ndarray:
    # max(z,0) + log1p(exp(-|z|)) never overflows and never loses precision
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


@dataclass(frozen=True)
class MLPSpec:
    """Layer widths of a dense net: in_dim -> hidden... -> out_dim."""

    in_dim: int
    hidden: tuple[int, ...]
    out_dim: int

    def layer_dims(self) -> list[tuple[int, int]]:
        widths = [self.in_dim, *self.hidden, self.out_dim]
        return list(zip(widths[:-1], widths[1:]))

    def param_count(self) -> int:
        return sum(fi * fo + fo for fi, fo in self.layer_dims())


def _split_params(spec: MLPSpec, params: np.ndarray):
    """Views (W, b) per layer into the flat parameter vector."""
    layers = []
    off = 0
    for fi, fo in spec.layer_dims():
        w = params[off : off + fi * fo].reshape(fi, fo)
        off += fi * fo
        b = params[off : off + fo]
        off += fo
        layers.append((w, b))
    if off != params.size:
        raise ValueError(f"expected {spec.param_count()} params, got {params.size}")
    return layers


def init_params(
    spec: MLPSpec,
    rng: np.random.Generator,
    dtype=np.float32,
    zero_head: bool = True,
) -> np.ndarray:
    """He-style init for hidden layers; output head optionally zeroed.

    A zero head makes the net output exactly 0 everywhere at creation, which
    downstream code relies on for predictable fresh-field behaviour. Head
    weights still receive gradient immediately (their grad is h^T dy), so
    nothing stays stuck at zero.
    """
    params = np.zeros(spec.param_count(), dtype=dtype)
    layers = _split_params(spec, params)
    for i, (w, _) in enumerate(layers):
        last = i == len(layers) - 1
        if last and zero_head:
            continue
        scale = np.sqrt(2.0 / w.shape[0])
        if last:
            scale *= 0.1
        w[...] = rng.normal(0.0, scale, size=w.shape).astype(dtype)
    return params


def forward(spec: MLPSpec, params: np.ndarray, x: np.ndarray):
    """Batched forward pass.

    Args:
        spec: layer widths.
        params: flat parameter vector.
        x: (M, in_dim) inputs.

    Returns:
        (y, cache): y is (M, out_dim); cache feeds backward().
    """
    layers = _split_params(spec, params)
    a = np.ascontiguousarray(x, dtype=params.dtype)
    acts = [a]
    for w, b in layers[:-1]:
        a = softplus(a @ w + b)
        acts.append(a)
    w, b = layers[-1]
    y = a @ w + b
    return y, (spec, params, acts)


def backward(cache, dy: np.ndarray) -> np.ndarray:
    """Gradient of sum(y * dy) w.r.t. the flat parameters.

    Args:
        cache: second return value of forward().
        dy: (M, out_dim) upstream gradient.

    Returns:
        flat gradient, same shape and dtype as params.
    """
    spec, params, acts = cache
    layers = _split_params(spec, params)
    grads = np.zeros_like(params)
    glayers = _split_params(spec, grads)

    dy = np.ascontiguousarray(dy, dtype=params.dtype)
    d = dy
    for i in range(len(layers) - 1, -1, -1):
        w, _ = layers[i]
        gw, gb = glayers[i]
        gw += acts[i].T @ d
        gb += d.sum(axis=0)
        if i > 0:
            d = d @ w.T
            # sigmoid(z) recovered from the stored softplus output h >= 0
            d = d * (1.0 - np.exp(-acts[i]))
    return grads
