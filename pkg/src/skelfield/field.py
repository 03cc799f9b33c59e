"""Neural radiance-style feature field with differentiable volume rendering.

The field is a small MLP from frequency-encoded positions to a density and a
feature vector. Rendering integrates samples along camera rays by standard
emission-absorption quadrature; the backward pass is written out analytically
so per-pixel feature gradients flow back to the MLP parameters (and, when an
articulation hook is installed, to the hook's parameters) without any
framework. View direction is deliberately not an input: avatars must look
consistent from every angle, so all appearance is Lambertian.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import expit

from . import smallmlp
from .conditioning import Camera, camera_rays
from .seeds import derive_rng

CHECKPOINT_MAGIC = b"SKLF-FIELD v1"


class RenderError(ValueError):
    """Invalid render request."""


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


@dataclass(frozen=True)
class FieldConfig:
    """Architecture and fixed constants of one field.

    density_bias shifts the raw density head before the softplus, so a fresh
    (zero-head) field starts out uniformly near-transparent with
    tau = softplus(density_bias) everywhere.
    position_scale is the rough spatial half-extent of the content; positions
    are divided by it (times pi) before frequency encoding.
    background is the feature vector composited behind transparent pixels.
    """

    n_freq: int = 6
    hidden: tuple[int, ...] = (48, 48, 48)
    channels: int = 4
    density_bias: float = -2.0
    position_scale: float = 1.5
    background: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.channels < 1:
            raise RenderError(f"channels must be >= 1, got {self.channels}")
        if self.background is not None and len(self.background) != self.channels:
            raise RenderError(
                f"background has {len(self.background)} entries for "
                f"{self.channels} channels"
            )

    def mlp_spec(self) -> smallmlp.MLPSpec:
        return smallmlp.MLPSpec(
            smallmlp.embed_dim(3, self.n_freq), tuple(self.hidden), 1 + self.channels
        )

    def background_vector(self) -> np.ndarray:
        if self.background is None:
            return np.zeros(self.channels)
        return np.asarray(self.background, dtype=np.float64)

    def to_dict(self) -> dict:
        return {
            "n_freq": self.n_freq,
            "hidden": list(self.hidden),
            "channels": self.channels,
            "density_bias": self.density_bias,
            "position_scale": self.position_scale,
            "background": None if self.background is None else list(self.background),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FieldConfig":
        bg = d["background"]
        return cls(
            n_freq=int(d["n_freq"]),
            hidden=tuple(int(h) for h in d["hidden"]),
            channels=int(d["channels"]),
            density_bias=float(d["density_bias"]),
            position_scale=float(d["position_scale"]),
            background=None if bg is None else tuple(float(v) for v in bg),
        )


class RadianceField:
    """Parameter vector plus config; all math routed through module functions."""

    def __init__(self, config: FieldConfig, params: np.ndarray):
        spec = config.mlp_spec()
        if params.size != spec.param_count():
            raise RenderError(
                f"field expects {spec.param_count()} params, got {params.size}"
            )
        self.config = config
        self.params = params

    @classmethod
    def create(cls, config: FieldConfig, seed: int = 0, dtype=np.float32):
        rng = derive_rng(seed, "field-init")
        params = smallmlp.init_params(config.mlp_spec(), rng, dtype=dtype)
        return cls(config, params)

    def query(self, positions: np.ndarray, with_cache: bool = False):
        """Density and features at world positions.

        Args:
            positions: (M, 3).

        Returns:
            (tau, features [, cache]): (M,) nonnegative density, (M, C)
            features in (0, 1).
        """
        pos = np.asarray(positions, dtype=self.params.dtype)
        emb = smallmlp.positional_embedding(
            pos * (np.pi / self.config.position_scale), self.config.n_freq
        )
        raw, cache = smallmlp.forward(self.config.mlp_spec(), self.params, emb)
        tau = smallmlp.softplus(raw[:, 0] + self.config.density_bias)
        feat = expit(raw[:, 1:])
        if with_cache:
            return tau, feat, cache
        return tau, feat

    def query_backward(self, cache, tau, feat, d_tau, d_feat) -> np.ndarray:
        """Pull gradients on (tau, features) back to the flat parameters."""
        dz0 = d_tau * (1.0 - np.exp(-tau))  # softplus' recovered from output
        draw = np.concatenate([dz0[:, None], d_feat * feat * (1.0 - feat)], axis=1)
        return smallmlp.backward(cache, draw)


@dataclass
class RayBatch:
    """Rays with per-ray integration bounds. Directions are unit length."""

    origins: np.ndarray
    directions: np.ndarray
    near: np.ndarray
    far: np.ndarray

    def __len__(self) -> int:
        return self.origins.shape[0]


def generate_rays(
    camera: Camera,
    pixels: np.ndarray | None = None,
    near: float | None = None,
    far: float | None = None,
) -> RayBatch:
    """Rays through pixel centers (all pixels row-major when pixels is None).

    near/far default to the camera's but can be tightened around the content
    so samples are not wasted on empty space.
    """
    origins, dirs = camera_rays(camera, pixels)
    m = origins.shape[0]
    lo = camera.near if near is None else float(near)
    hi = camera.far if far is None else float(far)
    return RayBatch(
        origins=origins,
        directions=dirs,
        near=np.full(m, lo),
        far=np.full(m, hi),
    )


def sample_along_rays(rays: RayBatch, n_samples: int, jitter_seed: int | tuple | None):
    """Stratified sample parameters and segment lengths.

    Returns (t, delta): both (M, N). With jitter_seed None samples sit at
    bin midpoints (deterministic rendering); otherwise each bin gets one
    uniform draw from a stream derived from the seed (an int or a tuple of
    tags, e.g. (master_seed, stage, iteration)).
    """
    if n_samples < 2:
        raise RenderError(f"need at least 2 samples per ray, got {n_samples}")
    if np.any(rays.near >= rays.far):
        raise RenderError("rays with near >= far")
    m = len(rays)
    if jitter_seed is None:
        u = np.full((m, n_samples), 0.5)
    else:
        tags = jitter_seed if isinstance(jitter_seed, tuple) else (jitter_seed,)
        u = derive_rng("render-jitter", *tags).random((m, n_samples))
    span = (rays.far - rays.near)[:, None]
    t = rays.near[:, None] + (np.arange(n_samples)[None, :] + u) / n_samples * span
    delta = np.diff(t, axis=1, append=rays.far[:, None])
    return t, delta


@dataclass
class RenderOutput:
    features: np.ndarray  # (M, C) composited features
    opacity: np.ndarray  # (M,) 1 - background transmittance
    cache: "RenderCache | None"


@dataclass
class RenderCache:
    field: RadianceField
    mlp_cache: tuple
    tau: np.ndarray
    feat: np.ndarray
    delta: np.ndarray
    trans: np.ndarray  # (M, N+1) transmittance, trans[:, 0] == 1
    weights: np.ndarray  # (M, N)
    background: np.ndarray
    hook: object | None
    hook_cache: object | None
    density_scale: np.ndarray | None


@dataclass
class RenderGrads:
    field: np.ndarray
    deformation: np.ndarray | None


def render(
    field: RadianceField,
    rays: RayBatch,
    n_samples: int = 48,
    jitter_seed: int | tuple | None = None,
    deformation=None,
    background: np.ndarray | None = None,
    keep_cache: bool = False,
) -> RenderOutput:
    """Emission-absorption quadrature along each ray.

    Sample positions are lifted through the optional deformation hook (which
    maps them into the field's canonical frame and scales density); densities
    then attenuate transmittance over each segment and features accumulate
    with the usual alpha weights. Fully transparent rays return the
    background feature vector.
    """
    t, delta = sample_along_rays(rays, n_samples, jitter_seed)
    m, n = t.shape
    positions = (rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :])
    flat = positions.reshape(m * n, 3)

    hook_cache = None
    density_scale = None
    if deformation is not None:
        flat, density_scale, hook_cache = deformation.transform(flat)
        density_scale = density_scale.reshape(m, n)

    tau, feat, mlp_cache = field.query(flat, with_cache=True)
    tau = tau.reshape(m, n)
    feat = feat.reshape(m, n, -1)

    eff = tau * density_scale if density_scale is not None else tau
    s = eff * delta
    trans = np.exp(-np.concatenate([np.zeros((m, 1)), np.cumsum(s, axis=1)], axis=1))
    alpha = -np.expm1(-s)
    weights = trans[:, :n] * alpha

    bg = field.config.background_vector() if background is None else np.asarray(background, np.float64)
    if bg.shape != (feat.shape[2],):
        raise RenderError(f"background shape {bg.shape} for {feat.shape[2]} channels")
    out = np.einsum("mn,mnc->mc", weights, feat) + trans[:, n:] * bg
    opacity = 1.0 - trans[:, n]

    cache = None
    if keep_cache:
        cache = RenderCache(
            field=field, mlp_cache=mlp_cache, tau=tau, feat=feat, delta=delta,
            trans=trans, weights=weights, background=bg,
            hook=deformation, hook_cache=hook_cache, density_scale=density_scale,
        )
    return RenderOutput(features=out, opacity=opacity, cache=cache)


def backprop_render(
    cache: RenderCache,
    grad_features: np.ndarray,
    grad_opacity: np.ndarray | None = None,
) -> RenderGrads:
    """Exact gradient of the quadrature w.r.t. field (and hook) parameters.

    Args:
        grad_features: (M, C) upstream gradient on composited features.
        grad_opacity: optional (M,) upstream gradient on opacity.

    Derivation sketch, per ray with s_k = tau_k * scale_k * delta_k:
    d out / d s_k collects the sample's own alpha response through the later
    transmittances, minus everything it shadows, minus the background term;
    all suffix sums vectorize with a reversed cumsum.
    """
    m, n = cache.tau.shape
    g = np.asarray(grad_features, dtype=np.float64)
    u = np.einsum("mc,mnc->mn", g, cache.feat)  # per-sample feature response
    uw = u * cache.weights
    suffix = np.cumsum(uw[:, ::-1], axis=1)[:, ::-1] - uw
    b = g @ cache.background
    t_end = cache.trans[:, n]
    ds = u * cache.trans[:, 1:] - suffix - (b * t_end)[:, None]
    if grad_opacity is not None:
        ds = ds + (np.asarray(grad_opacity, np.float64) * t_end)[:, None]

    scale = cache.density_scale if cache.density_scale is not None else 1.0
    d_tau = ds * scale * cache.delta
    d_feat = cache.weights[..., None] * g[:, None, :]

    field_grads = cache.field.query_backward(
        cache.mlp_cache,
        cache.tau.reshape(-1),
        cache.feat.reshape(m * n, -1),
        d_tau.reshape(-1),
        d_feat.reshape(m * n, -1),
    )

    hook_grads = None
    if cache.hook is not None:
        d_scale = ds * cache.tau * cache.delta
        hook_grads = cache.hook.backward(cache.hook_cache, d_scale.reshape(-1))
    return RenderGrads(field=field_grads, deformation=hook_grads)


# ---------------------------------------------------------------------------
# checkpoint format: magic, u32 json length, canonical json, then u64-counted
# f32 parameter blocks for the field and (optionally) the deformation net

def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def save_checkpoint(path, field: RadianceField, deformation_net=None) -> None:
    meta = {
        "field": field.config.to_dict(),
        "dtype": np.dtype(field.params.dtype).name,
        "deformation": None if deformation_net is None else deformation_net.config.to_dict(),
    }
    blob = _canonical_json(meta)
    # Write-then-rename so a crash mid-save never corrupts an existing file.
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<Q", field.params.size))
        fh.write(np.ascontiguousarray(field.params, dtype="<f4").tobytes())
        if deformation_net is None:
            fh.write(struct.pack("<Q", 0))
        else:
            fh.write(struct.pack("<Q", deformation_net.params.size))
            fh.write(np.ascontiguousarray(deformation_net.params, dtype="<f4").tobytes())
    os.replace(tmp, path)


def load_checkpoint(path):
    """Returns (field, deformation_net_or_None)."""
    from .articulation import DensityWeightNet, DrnConfig  # cycle-free at runtime

    with open(path, "rb") as fh:
        data = fh.read()
    if not data.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path}: bad magic {data[:13]!r}")
    off = len(CHECKPOINT_MAGIC)
    try:
        (json_len,) = struct.unpack_from("<I", data, off)
        off += 4
        meta = json.loads(data[off : off + json_len].decode("utf-8"))
        off += json_len
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad config block: {exc}") from exc

    dtype = np.dtype(meta.get("dtype", "float32"))
    config = FieldConfig.from_dict(meta["field"])

    def take_block(what):
        nonlocal off
        if off + 8 > len(data):
            raise CheckpointError(f"{path}: truncated before {what} count")
        (count,) = struct.unpack_from("<Q", data, off)
        off += 8
        nbytes = count * 4
        if off + nbytes > len(data):
            raise CheckpointError(f"{path}: truncated {what} block")
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=off).copy()
        off += nbytes
        return arr

    field_params = take_block("field")
    drn_params = take_block("deformation")
    if off != len(data):
        raise CheckpointError(f"{path}: {len(data) - off} trailing bytes")

    field = RadianceField(config, field_params.astype(dtype))
    net = None
    if meta.get("deformation") is not None:
        cfg = DrnConfig.from_dict(meta["deformation"])
        if drn_params.size == 0:
            raise CheckpointError(f"{path}: deformation config without params")
        net = DensityWeightNet(cfg, drn_params.astype(dtype))
    elif drn_params.size:
        raise CheckpointError(f"{path}: deformation params without config")
    return field, net
