"""Training loops for skeleton-conditioned radiance fields.

Three stages, each a plain loop over seeded iterations:

  1. ``pretrain_init``      silhouette-matched initialization: the field's
                            render is regressed onto the body's mask so the
                            optimization starts from a sensible occupancy.
  2. ``train_static``       score-guided optimization in the canonical pose:
                            every iteration renders the field and the body's
                            skeleton map from the *same* sampled camera, so
                            the guidance signal is view-aligned by
                            construction.
  3. ``train_animatable``   same loop but with a pose sampled per iteration;
                            rays are bent into the canonical frame through
                            the articulation hook and the density weighting
                            net trains jointly with (or instead of) the field.

Every random draw comes from a counter-keyed stream (`seeds.derive_rng`),
so a (seed, config) pair replays bit-identically; there is no hidden
global RNG state.  Config lives in a flat dataclass with a sectioned
key = value file format and string overrides for command lines.
"""

from __future__ import annotations

import configparser
import io
import logging
from dataclasses import dataclass, replace

import numpy as np

from .articulation import DeformationField, DensityWeightNet, VertexIndex
from .body import ArticulatedBody, BodyParams, PosedMesh, skin
from .conditioning import (
    Camera,
    SkeletonTopology,
    make_conditioning_map,
    render_silhouette,
)
from .field import RadianceField, backprop_render, generate_rays, render
from .guidance import (
    GuidanceError,
    NoiseSchedule,
    add_noise,
    make_schedule,
    sample_timestep,
    sds_gradient,
)
from .raycast import TriangleRaycaster
from .seeds import derive_rng

logger = logging.getLogger("skelfield.trainer")


class ConfigError(ValueError):
    """Invalid training configuration value, file, or override."""


class TrainingDiverged(RuntimeError):
    """Non-finite loss or gradient; carries the trailing iteration records."""

    def __init__(self, message: str, history=()):
        super().__init__(message)
        self.history = list(history)


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs besides the field/body themselves.

    Angle-valued ranges are radians.  Camera positions are sampled on a
    sphere around the body center: radius, elevation and azimuth each
    uniform in their interval, with zero-width intervals giving a fixed
    camera.  ``canonical_frac`` is the probability that a pose-sampling
    iteration uses the rest pose instead of a draw from the prior.
    """

    # run
    seed: int = 0
    init_iters: int = 1000
    static_iters: int = 2000
    anim_iters: int = 2000
    log_every: int = 50
    freeze_field_in_anim: bool = False
    # optimizer
    lr: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    # render
    resolution: int = 64
    n_samples: int = 32
    # camera
    radius_range: tuple = (1.8, 2.4)
    elevation_range: tuple = (-0.15, 0.5)
    azimuth_range: tuple = (0.0, 6.283185307179586)
    fov_range: tuple = (0.7, 0.9)
    # guidance
    diffusion_steps: int = 1000
    t_frac_range: tuple = (0.02, 0.98)
    weight_mode: str = "constant"
    # pose
    pose_mode: str = "bounded"
    canonical_frac: float = 0.2

    def __post_init__(self):
        for name in _PAIR_KEYS:
            pair = getattr(self, name)
            if len(pair) != 2:
                raise ConfigError(f"{name} must be two numbers, got {pair!r}")
            lo, hi = float(pair[0]), float(pair[1])
            if not lo <= hi:
                raise ConfigError(f"{name} interval inverted: {lo} > {hi}")
            object.__setattr__(self, name, (lo, hi))
        for name in ("init_iters", "static_iters", "anim_iters"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.log_every < 1:
            raise ConfigError("log_every must be >= 1")
        if not self.lr > 0.0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if not (0.0 <= self.beta1 < 1.0 and 0.0 <= self.beta2 < 1.0):
            raise ConfigError("adam betas must lie in [0, 1)")
        if not self.adam_eps > 0.0:
            raise ConfigError("adam_eps must be positive")
        if self.resolution < 1:
            raise ConfigError("resolution must be >= 1")
        if self.n_samples < 2:
            raise ConfigError("n_samples must be >= 2")
        if self.diffusion_steps < 1:
            raise ConfigError("diffusion_steps must be >= 1")
        if self.radius_range[0] <= 0.0:
            raise ConfigError("camera radius must be positive")
        if self.fov_range[0] <= 0.0 or self.fov_range[1] >= np.pi:
            raise ConfigError("fov must lie in (0, pi)")
        if abs(self.elevation_range[0]) > 1.4 or abs(self.elevation_range[1]) > 1.4:
            raise ConfigError("elevation must stay below the poles (|e| <= 1.4)")
        if self.t_frac_range[0] < 0.0 or self.t_frac_range[1] > 1.0:
            raise ConfigError("t_frac_range must lie within [0, 1]")
        if self.weight_mode not in ("constant", "sigma2"):
            raise ConfigError(f"unknown weight_mode {self.weight_mode!r}")
        if self.pose_mode not in ("canonical", "bounded", "library"):
            raise ConfigError(f"unknown pose_mode {self.pose_mode!r}")
        if not 0.0 <= self.canonical_frac <= 1.0:
            raise ConfigError("canonical_frac must lie in [0, 1]")


# Config file layout: every TrainConfig field appears in exactly one section.
_SECTIONS = {
    "run": ("seed", "init_iters", "static_iters", "anim_iters",
            "log_every", "freeze_field_in_anim"),
    "optimizer": ("lr", "beta1", "beta2", "adam_eps"),
    "render": ("resolution", "n_samples"),
    "camera": ("radius_range", "elevation_range", "azimuth_range", "fov_range"),
    "guidance": ("diffusion_steps", "t_frac_range", "weight_mode"),
    "pose": ("pose_mode", "canonical_frac"),
}
_PAIR_KEYS = ("radius_range", "elevation_range", "azimuth_range",
              "fov_range", "t_frac_range")
_INT_KEYS = ("seed", "init_iters", "static_iters", "anim_iters", "log_every",
             "resolution", "n_samples", "diffusion_steps")
_FLOAT_KEYS = ("lr", "beta1", "beta2", "adam_eps", "canonical_frac")
_BOOL_KEYS = ("freeze_field_in_anim",)
_SECTION_OF = {key: sec for sec, keys in _SECTIONS.items() for key in keys}


def _parse_value(key: str, text: str):
    text = text.strip()
    try:
        if key in _PAIR_KEYS:
            parts = [p for p in text.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise ValueError(f"expected two numbers, got {text!r}")
            return (float(parts[0]), float(parts[1]))
        if key in _BOOL_KEYS:
            low = text.lower()
            if low in ("true", "yes", "on", "1"):
                return True
            if low in ("false", "no", "off", "0"):
                return False
            raise ValueError(f"expected a boolean, got {text!r}")
        if key in _INT_KEYS:
            return int(text)
        if key in _FLOAT_KEYS:
            return float(text)
        return text
    except ValueError as err:
        raise ConfigError(f"bad value for {key}: {err}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def save_config(path, config: TrainConfig) -> None:
    """Write the sectioned key = value file (covers every config field)."""
    out = io.StringIO()
    for section, keys in _SECTIONS.items():
        out.write(f"[{section}]\n")
        for key in keys:
            out.write(f"{key} = {_format_value(getattr(config, key))}\n")
        out.write("\n")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(out.getvalue())


def load_config(path) -> TrainConfig:
    """Parse a config file; keys not present keep their defaults."""
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cp.read_file(fh)
    except configparser.Error as err:
        raise ConfigError(f"malformed config file: {err}") from None
    values = {}
    for section in cp.sections():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        for key, text in cp.items(section):
            if key not in _SECTIONS[section]:
                raise ConfigError(f"unknown config key {section}.{key}")
            values[key] = _parse_value(key, text)
    return TrainConfig(**values)


def apply_overrides(config: TrainConfig, assignments) -> TrainConfig:
    """Apply command-line style ``key=value`` / ``section.key=value`` strings."""
    values = {}
    for text in assignments:
        if "=" not in text:
            raise ConfigError(f"override {text!r} is not key=value")
        key, _, raw = text.partition("=")
        key = key.strip()
        if "." in key:
            section, _, key = key.partition(".")
            if _SECTION_OF.get(key) != section:
                raise ConfigError(f"unknown config key {section}.{key}")
        elif key not in _SECTION_OF:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw)
    return replace(config, **values)


# ---------------------------------------------------------------------------
# pose prior

@dataclass
class PosePrior:
    """Distribution over per-joint axis-angle vectors.

    modes: "canonical" always yields the rest pose; "bounded" draws each
    component uniformly from ``bounds`` (K, 3, 2); "library" picks a member
    of ``library`` (P, K, 3) uniformly.  ``canonical_frac`` mixes the rest
    pose into the non-canonical modes since the guidance model sees it far
    more often than any single sampled pose.
    """

    mode: str = "bounded"
    bounds: np.ndarray | None = None
    library: np.ndarray | None = None
    canonical_frac: float = 0.2
    joint_count: int = 24

    def __post_init__(self):
        if self.mode not in ("canonical", "bounded", "library"):
            raise ConfigError(f"unknown pose mode {self.mode!r}")
        if not 0.0 <= self.canonical_frac <= 1.0:
            raise ConfigError("canonical_frac must lie in [0, 1]")
        if self.mode == "bounded":
            if self.bounds is None:
                raise ConfigError("bounded mode needs per-joint bounds")
            self.bounds = np.asarray(self.bounds, dtype=np.float64)
            if self.bounds.ndim != 3 or self.bounds.shape[1:] != (3, 2):
                raise ConfigError(f"bounds must be (K, 3, 2), got {self.bounds.shape}")
            if np.any(self.bounds[..., 0] > self.bounds[..., 1]):
                raise ConfigError("pose bounds inverted (lo > hi)")
            self.joint_count = self.bounds.shape[0]
        if self.mode == "library":
            if self.library is None or len(self.library) == 0:
                raise ConfigError("library mode needs a non-empty pose library")
            self.library = np.asarray(self.library, dtype=np.float64)
            if self.library.ndim != 3 or self.library.shape[2] != 3:
                raise ConfigError(f"library must be (P, K, 3), got {self.library.shape}")
            self.joint_count = self.library.shape[1]


# Conservative joint limits (radians, axis-angle per component) for the
# built-in rig: enough articulation to exercise the skeleton conditioning
# without folding limbs through the torso.  Joints not listed stay fixed.
_POSE_BOUNDS_TABLE = {
    "hip_l":      ((-0.8, 0.4), (-0.2, 0.2), (-0.1, 0.5)),
    "hip_r":      ((-0.8, 0.4), (-0.2, 0.2), (-0.5, 0.1)),
    "knee_l":     ((0.0, 1.2), (0.0, 0.0), (0.0, 0.0)),
    "knee_r":     ((0.0, 1.2), (0.0, 0.0), (0.0, 0.0)),
    "ankle_l":    ((-0.3, 0.3), (0.0, 0.0), (0.0, 0.0)),
    "ankle_r":    ((-0.3, 0.3), (0.0, 0.0), (0.0, 0.0)),
    "spine_lower": ((-0.2, 0.2), (-0.3, 0.3), (-0.1, 0.1)),
    "spine_upper": ((-0.2, 0.2), (-0.3, 0.3), (-0.1, 0.1)),
    "chest":      ((-0.1, 0.1), (-0.2, 0.2), (-0.1, 0.1)),
    "neck":       ((-0.3, 0.3), (-0.4, 0.4), (-0.2, 0.2)),
    "head":       ((-0.3, 0.3), (-0.4, 0.4), (-0.2, 0.2)),
    "collar_l":   ((0.0, 0.0), (0.0, 0.0), (-0.1, 0.1)),
    "collar_r":   ((0.0, 0.0), (0.0, 0.0), (-0.1, 0.1)),
    "shoulder_l": ((-0.4, 0.4), (-0.6, 0.3), (-1.0, 0.3)),
    "shoulder_r": ((-0.4, 0.4), (-0.3, 0.6), (-0.3, 1.0)),
    "elbow_l":    ((0.0, 0.0), (-1.2, 0.0), (0.0, 0.0)),
    "elbow_r":    ((0.0, 0.0), (0.0, 1.2), (0.0, 0.0)),
    "wrist_l":    ((-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3)),
    "wrist_r":    ((-0.3, 0.3), (-0.3, 0.3), (-0.3, 0.3)),
}


def default_pose_bounds(joint_names) -> np.ndarray:
    """(K, 3, 2) bounds for the named joints; unknown names get zero width."""
    bounds = np.zeros((len(joint_names), 3, 2))
    for k, name in enumerate(joint_names):
        if name in _POSE_BOUNDS_TABLE:
            bounds[k] = np.asarray(_POSE_BOUNDS_TABLE[name])
    return bounds


def pose_prior_from_config(
    config: TrainConfig,
    body: ArticulatedBody,
    library: np.ndarray | None = None,
) -> PosePrior:
    if config.pose_mode == "canonical":
        return PosePrior(mode="canonical", canonical_frac=1.0,
                         joint_count=body.joint_count)
    if config.pose_mode == "library":
        return PosePrior(mode="library", library=library,
                         canonical_frac=config.canonical_frac)
    return PosePrior(mode="bounded",
                     bounds=default_pose_bounds(body.joint_names),
                     canonical_frac=config.canonical_frac)


def sample_pose(prior: PosePrior, rng: np.random.Generator) -> np.ndarray:
    """One (K, 3) axis-angle draw from the prior.

    The canonical-mixture coin is flipped first so the stream layout is
    stable regardless of mode.
    """
    if prior.mode == "canonical":
        return np.zeros((prior.joint_count, 3))
    if rng.random() < prior.canonical_frac:
        return np.zeros((prior.joint_count, 3))
    if prior.mode == "library":
        return prior.library[rng.integers(len(prior.library))].copy()
    lo = prior.bounds[..., 0]
    hi = prior.bounds[..., 1]
    return lo + rng.random(lo.shape) * (hi - lo)


# ---------------------------------------------------------------------------
# camera sampling

def frame_body(mesh: PosedMesh, margin: float = 1.25):
    """(center, bound) of the mesh: look-at point and a radius that
    encloses it with some slack, used to tighten the ray near/far range."""
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    center = 0.5 * (lo + hi)
    bound = 0.5 * float(np.linalg.norm(hi - lo)) * margin
    return center, bound


def sample_camera(
    config: TrainConfig,
    rng: np.random.Generator,
    center,
    bound: float,
) -> Camera:
    """Uniform draw on the configured viewing sphere, looking at ``center``.

    Draw order is fixed (radius, elevation, azimuth, fov).  near/far are
    tightened to the slab [radius - bound, radius + bound] so quadrature
    samples are spent on the body rather than empty space.
    """
    radius = rng.uniform(*config.radius_range)
    elevation = rng.uniform(*config.elevation_range)
    azimuth = rng.uniform(*config.azimuth_range)
    fov = rng.uniform(*config.fov_range)
    center = np.asarray(center, dtype=np.float64)
    offset = radius * np.array([
        np.cos(elevation) * np.sin(azimuth),
        np.sin(elevation),
        np.cos(elevation) * np.cos(azimuth),
    ])
    return Camera(
        position=center + offset,
        look_at=center,
        vertical_fov=fov,
        width=config.resolution,
        height=config.resolution,
        near=max(0.05, radius - bound),
        far=radius + bound,
    )


def eval_cameras(config: TrainConfig, center, bound: float, count: int = 4):
    """Held-out views drawn from a stream the training loops never touch."""
    return [
        sample_camera(config, derive_rng(config.seed, "eval-camera", k), center, bound)
        for k in range(count)
    ]


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    """First/second moment accumulators, kept in float64."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0


def init_adam(params: np.ndarray) -> AdamState:
    return AdamState(
        m=np.zeros(params.shape, dtype=np.float64),
        v=np.zeros(params.shape, dtype=np.float64),
        step=0,
    )


def adam_step(
    params: np.ndarray,
    grads: np.ndarray,
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One bias-corrected Adam update; mutates ``state``, returns new params.

    Args:
        params: current parameter vector (any float dtype).
        grads: gradient of the loss w.r.t. params, same shape.
        state: accumulators from `init_adam` (advanced in place).

    Returns:
        Updated parameters in the input dtype.  A zero gradient moves both
        moments and the parameters by exactly zero.
    """
    if grads.shape != params.shape:
        raise ValueError(f"gradient shape {grads.shape} != params {params.shape}")
    g = np.asarray(grads, dtype=np.float64)
    state.step += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * g * g
    m_hat = state.m / (1.0 - beta1 ** state.step)
    v_hat = state.v / (1.0 - beta2 ** state.step)
    update = lr * m_hat / (np.sqrt(v_hat) + eps)
    return (params.astype(np.float64) - update).astype(params.dtype)


# ---------------------------------------------------------------------------
# training loops

def _guard_finite(value, what: str, iteration: int, history) -> None:
    if not np.all(np.isfinite(value)):
        tail = history[-10:]
        for row in tail:
            logger.error("diverged trail: %s", row)
        raise TrainingDiverged(
            f"non-finite {what} at iteration {iteration}", tail
        )


def _log_row(stage: str, row: dict, total: int, every: int) -> None:
    i = row["iteration"]
    if i % every == 0 or i == total - 1:
        cam = row["camera"].position
        extra = f" t={row['timestep']}" if "timestep" in row else ""
        logger.info(
            "%s %d/%d loss %.5g%s cam (%.2f, %.2f, %.2f)",
            stage, i, total, row["loss"], extra, cam[0], cam[1], cam[2],
        )


def evaluate_mask_iou(
    field: RadianceField,
    mesh: PosedMesh,
    cameras,
    n_samples: int = 32,
    threshold: float = 0.5,
    raycaster: TriangleRaycaster | None = None,
    deformation=None,
) -> float:
    """Mean IoU between thresholded render opacity and the body silhouette."""
    if raycaster is None:
        raycaster = TriangleRaycaster(mesh.vertices, mesh.faces)
    ious = []
    for camera in cameras:
        mask = render_silhouette(mesh, camera, raycaster)
        out = render(field, generate_rays(camera), n_samples,
                     jitter_seed=None, deformation=deformation)
        pred = out.opacity.reshape(camera.height, camera.width) > threshold
        union = np.logical_or(pred, mask).sum()
        inter = np.logical_and(pred, mask).sum()
        ious.append(1.0 if union == 0 else inter / union)
    return float(np.mean(ious))


def pretrain_init(
    field: RadianceField,
    mesh: PosedMesh,
    config: TrainConfig,
    raycaster: TriangleRaycaster | None = None,
    camera_fn=None,
) -> list:
    """Regress the fresh field onto the body's silhouette.

    Per iteration: sample a camera, rasterize the mesh mask from it, render
    the field, and take one optimizer step on the summed MSE of (a) features
    against the mask broadcast to every channel and (b) opacity against the
    mask.  The opacity term supervises occupancy directly; the feature term
    forces occupied regions opaque enough to show their color.

    Mutates ``field.params``; returns the per-iteration history
    (iteration, loss, camera).  ``camera_fn(i) -> Camera`` overrides the
    built-in sampler when given.
    """
    if raycaster is None:
        raycaster = TriangleRaycaster(mesh.vertices, mesh.faces)
    center, bound = frame_body(mesh)
    state = init_adam(field.params)
    history = []
    for i in range(config.init_iters):
        if camera_fn is not None:
            camera = camera_fn(i)
        else:
            camera = sample_camera(
                config, derive_rng(config.seed, "init-camera", i), center, bound)
        mask = render_silhouette(mesh, camera, raycaster).astype(np.float64)
        mask = mask.reshape(-1)
        out = render(field, generate_rays(camera), config.n_samples,
                     jitter_seed=(config.seed, "init-render", i), keep_cache=True)
        diff_feat = out.features.astype(np.float64) - mask[:, None]
        diff_op = out.opacity.astype(np.float64) - mask
        loss = float((diff_feat ** 2).mean() + (diff_op ** 2).mean())
        _guard_finite(loss, "loss", i, history)
        grads = backprop_render(
            out.cache,
            2.0 * diff_feat / diff_feat.size,
            2.0 * diff_op / diff_op.size,
        )
        field.params = adam_step(field.params, grads.field, state,
                                 config.lr, config.beta1, config.beta2,
                                 config.adam_eps)
        row = {"iteration": i, "loss": loss, "camera": camera}
        history.append(row)
        _log_row("init", row, config.init_iters, config.log_every)
    if history:
        iou = evaluate_mask_iou(field, mesh, eval_cameras(config, center, bound),
                                config.n_samples, raycaster=raycaster)
        logger.info("init done: %d iterations, held-out mask IoU %.3f",
                    len(history), iou)
    return history


def _sds_iteration(
    field: RadianceField,
    backend,
    mesh: PosedMesh,
    topology: SkeletonTopology,
    camera: Camera,
    config: TrainConfig,
    schedule: NoiseSchedule,
    i: int,
    raycaster: TriangleRaycaster,
    deformation=None,
):
    """One score-distillation step; returns (render grads, history row).

    The conditioning map and the render share ``camera``: supervision is
    aligned with the exact viewpoint being rendered.
    """
    cond = make_conditioning_map(topology, mesh, camera, raycaster)
    out = render(field, generate_rays(camera), config.n_samples,
                 jitter_seed=(config.seed, "sds-render", i),
                 deformation=deformation, keep_cache=True)
    x = out.features.astype(np.float64).reshape(
        camera.height, camera.width, field.config.channels)
    t = sample_timestep(derive_rng(config.seed, "sds-t", i),
                        schedule, config.t_frac_range)
    eps = derive_rng(config.seed, "sds-eps", i).standard_normal(x.shape)
    z_t = add_noise(x, eps, t, schedule)
    try:
        eps_hat = backend.predict_noise(z_t, t, conditioning=cond.image,
                                        x=x, eps=eps)
    except GuidanceError as err:
        raise type(err)(f"iteration {i}: {err}") from err
    g = sds_gradient(eps_hat, eps, t, schedule, config.weight_mode)
    grad_feat = g.per_pixel.reshape(-1, field.config.channels)
    grads = backprop_render(out.cache, grad_feat)
    row = {
        "iteration": i,
        "loss": float(np.abs(grad_feat).mean()),  # gradient scale proxy
        "timestep": t,
        "camera": camera,
    }
    return grads, row


def train_static(
    field: RadianceField,
    backend,
    mesh: PosedMesh,
    topology: SkeletonTopology,
    config: TrainConfig,
    schedule: NoiseSchedule | None = None,
    raycaster: TriangleRaycaster | None = None,
) -> list:
    """Score-guided optimization of the field in the body's rest pose.

    Per iteration: sample a camera; build the occlusion-culled skeleton map
    and the render from that same camera; noise the render at a sampled
    timestep; feed the backend; push the weighted noise residual back
    through the renderer; one optimizer step.  Mutates ``field.params``;
    returns the history (loss column is the mean |gradient| proxy).
    """
    if schedule is None:
        schedule = make_schedule(config.diffusion_steps)
    if raycaster is None:
        raycaster = TriangleRaycaster(mesh.vertices, mesh.faces)
    center, bound = frame_body(mesh)
    state = init_adam(field.params)
    history = []
    for i in range(config.static_iters):
        camera = sample_camera(
            config, derive_rng(config.seed, "sds-camera", i), center, bound)
        grads, row = _sds_iteration(field, backend, mesh, topology, camera,
                                    config, schedule, i, raycaster)
        _guard_finite(grads.field, "gradient", i, history)
        field.params = adam_step(field.params, grads.field, state,
                                 config.lr, config.beta1, config.beta2,
                                 config.adam_eps)
        history.append(row)
        _log_row("static", row, config.static_iters, config.log_every)
    return history


def train_animatable(
    field: RadianceField,
    drn: DensityWeightNet | None,
    backend,
    body: ArticulatedBody,
    prior: PosePrior,
    config: TrainConfig,
    base_params: BodyParams | None = None,
    topology: SkeletonTopology | None = None,
    schedule: NoiseSchedule | None = None,
):
    """Pose-sampled refinement: learn to render the avatar in any pose.

    Per iteration: draw a pose from the prior, skin the body, and run one
    score-distillation step with rays bent into the canonical frame via
    nearest-vertex articulation; densities are scaled by the weighting net
    when one is given.  The net always trains; the field trains too unless
    ``config.freeze_field_in_anim``.

    Returns (field, drn, history).  Note the pose refresh rebuilds the
    mesh's spatial indexes every iteration; canonical draws reuse cached
    rest-pose indexes.
    """
    if topology is None:
        raise ConfigError("train_animatable needs a skeleton topology")
    if schedule is None:
        schedule = make_schedule(config.diffusion_steps)
    if base_params is None:
        base_params = BodyParams.identity(body)
    if prior.joint_count != body.joint_count:
        raise ConfigError(
            f"prior has {prior.joint_count} joints, body has {body.joint_count}")
    field_state = init_adam(field.params)
    drn_state = init_adam(drn.params) if drn is not None else None
    rest = skin(body, base_params.with_pose(np.zeros((body.joint_count, 3))))
    rest_rc = TriangleRaycaster(rest.vertices, rest.faces)
    rest_index = VertexIndex(rest.vertices)
    history = []
    for i in range(config.anim_iters):
        pose = sample_pose(prior, derive_rng(config.seed, "pose", i))
        if np.any(pose):
            mesh = skin(body, base_params.with_pose(pose))
            raycaster = TriangleRaycaster(mesh.vertices, mesh.faces)
            index = VertexIndex(mesh.vertices)
        else:
            mesh, raycaster, index = rest, rest_rc, rest_index
        center, bound = frame_body(mesh)
        camera = sample_camera(
            config, derive_rng(config.seed, "sds-camera", i), center, bound)
        hook = DeformationField(mesh, drn, index)
        grads, row = _sds_iteration(field, backend, mesh, topology, camera,
                                    config, schedule, i, raycaster,
                                    deformation=hook)
        _guard_finite(grads.field, "gradient", i, history)
        if not config.freeze_field_in_anim:
            field.params = adam_step(field.params, grads.field, field_state,
                                     config.lr, config.beta1, config.beta2,
                                     config.adam_eps)
        if drn is not None:
            _guard_finite(grads.deformation, "deformation gradient", i, history)
            drn.params = adam_step(drn.params, grads.deformation, drn_state,
                                   config.lr, config.beta1, config.beta2,
                                   config.adam_eps)
        row["pose_norm"] = float(np.abs(pose).max())
        history.append(row)
        _log_row("anim", row, config.anim_iters, config.log_every)
    return field, drn, history
