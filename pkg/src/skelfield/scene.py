"""Animation and scene composition for trained avatars.

A trained avatar is a (body, field, weighting net) triple; animating it is
pure inference: skin the body at each frame's parameters, bend camera rays
into the canonical frame through the articulation hook, render.  No
parameter buffer is ever written, so checkpoints are byte-identical before
and after any amount of rendering.

Scenes place multiple items (avatars and static triangle meshes) into one
world with rigid+scale placements and march shared rays through all of
them: per sample, each item is queried in its own local frame, densities
add, and features blend weighted by density.  Frame sequences go to
numbered PPM files next to a manifest that captures every pose and camera,
so a sequence can be replayed bit-exactly from the manifest alone.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.spatial import cKDTree

from .articulation import (
    DeformationField,
    DensityWeightNet,
    VertexIndex,
    deform_sample,
)
from .body import ArticulatedBody, BodyParams, load_body_archive, skin
from .conditioning import Camera
from .field import (
    RadianceField,
    RenderOutput,
    generate_rays,
    load_checkpoint,
    render,
    sample_along_rays,
)
from .ppm import encode_ppm, to_rgb8

MOTION_MAGIC = "SKLF-MOTION v1"
SCENE_MAGIC = "SKLF-SCENE v1"
MANIFEST_MAGIC = "SKLF-MANIFEST v1"


class MotionError(ValueError):
    """Malformed motion clip file or clip/body mismatch."""


class SceneError(ValueError):
    """Malformed scene description or inconsistent scene items."""


# ---------------------------------------------------------------------------
# avatars and motion clips

@dataclass
class Avatar:
    """A trained avatar: parametric body plus its learned appearance."""

    body: ArticulatedBody
    field: RadianceField
    net: DensityWeightNet | None = None

    @classmethod
    def load(cls, checkpoint_path, body_path) -> "Avatar":
        body = load_body_archive(body_path)
        field, net = load_checkpoint(checkpoint_path)
        return cls(body=body, field=field, net=net)


@dataclass
class MotionClip:
    """A pose sequence: one BodyParams per frame at a fixed frame rate."""

    frames: list
    fps: float = 30.0

    def __post_init__(self):
        if len(self.frames) < 1:
            raise MotionError("motion clip needs at least one frame")
        if self.fps <= 0.0:
            raise MotionError(f"fps must be positive, got {self.fps}")
        k = self.frames[0].pose.shape[0]
        s = self.frames[0].shape.shape[0]
        for i, f in enumerate(self.frames):
            if f.pose.shape != (k, 3):
                raise MotionError(f"frame {i} has {f.pose.shape[0]} joints, "
                                  f"frame 0 has {k}")
            if f.shape.shape != (s,):
                raise MotionError(f"frame {i} shape coefficients differ from frame 0")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def joint_count(self) -> int:
        return self.frames[0].pose.shape[0]


def save_motion(path, clip: MotionClip) -> None:
    """Text format: header (fps, joints, frames, shared shape), then one
    line per frame: global scale, translation, K axis-angle triples.

    Shape coefficients describe the body, not the motion, so the format
    stores one shared vector; clips whose frames disagree cannot be saved.
    """
    k = clip.joint_count
    shape = clip.frames[0].shape
    for i, f in enumerate(clip.frames):
        if not np.array_equal(f.shape, shape):
            raise MotionError(f"frame {i} shape coefficients differ from "
                              "frame 0; the file format stores one shared vector")
    lines = [
        MOTION_MAGIC,
        f"fps {clip.fps!r}",
        f"joints {k}",
        f"frames {len(clip)}",
        "shape " + " ".join(f"{v:.17g}" for v in shape),
    ]
    for f in clip.frames:
        vals = np.concatenate([
            [f.global_scale], f.global_translation, f.pose.reshape(-1)])
        lines.append("frame " + " ".join(f"{v:.17g}" for v in vals))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_motion(path, body: ArticulatedBody | None = None) -> MotionClip:
    """Parse a motion file; with ``body`` given, frames are validated
    against it (a clip saved without shape coefficients gets zeros)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0] != MOTION_MAGIC:
        raise MotionError(f"not a motion file: expected {MOTION_MAGIC!r} header")
    header = {"fps": 30.0, "joints": None, "frames": None, "shape": np.zeros(0)}
    rows = []
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        try:
            if key == "fps":
                header["fps"] = float(rest)
            elif key == "joints":
                header["joints"] = int(rest)
            elif key == "frames":
                header["frames"] = int(rest)
            elif key == "shape":
                header["shape"] = np.array([float(v) for v in rest.split()])
            elif key == "frame":
                rows.append(np.array([float(v) for v in rest.split()]))
            else:
                raise MotionError(f"unknown motion record {key!r}")
        except ValueError as err:
            raise MotionError(f"bad {key} record: {err}") from None
    k = header["joints"]
    if k is None or header["frames"] is None:
        raise MotionError("missing joints/frames header")
    if len(rows) != header["frames"]:
        raise MotionError(f"header says {header['frames']} frames, "
                          f"file has {len(rows)}")
    shape = header["shape"]
    if body is not None:
        if k != body.joint_count:
            raise MotionError(f"clip has {k} joints, body has {body.joint_count}")
        if shape.size == 0:
            shape = np.zeros(body.shape_dim)
        elif shape.size != body.shape_dim:
            raise MotionError(f"clip has {shape.size} shape coefficients, "
                              f"body has {body.shape_dim}")
    frames = []
    for i, row in enumerate(rows):
        if row.size != 4 + 3 * k:
            raise MotionError(f"frame {i}: expected {4 + 3 * k} values, "
                              f"got {row.size}")
        if row[0] <= 0.0:
            raise MotionError(f"frame {i}: global scale must be positive")
        frames.append(BodyParams(
            shape=shape.copy(),
            pose=row[4:].reshape(k, 3),
            global_scale=float(row[0]),
            global_translation=row[1:4],
        ))
    return MotionClip(frames=frames, fps=header["fps"])


# ---------------------------------------------------------------------------
# posed rendering (single avatar, no placement)

def render_posed(
    avatar: Avatar,
    pose: BodyParams,
    camera: Camera,
    n_samples: int = 64,
    background: np.ndarray | None = None,
) -> RenderOutput:
    """Render the avatar in an arbitrary pose, no retraining involved.

    Skins the body, then marches deterministic (unjittered) rays whose
    sample positions are pulled back to the canonical frame by the
    nearest-vertex articulation hook; the weighting net, when present,
    suppresses density away from the body.  Rays march the camera's own
    near/far slab, so any render with the same camera samples the same
    world positions (this is what makes composed and solo renders of the
    same content agree).
    """
    mesh = skin(avatar.body, pose)
    rays = generate_rays(camera)
    hook = DeformationField(mesh, avatar.net)
    return render(avatar.field, rays, n_samples, None, hook, background)


def frame_rgb(out: RenderOutput, camera: Camera) -> np.ndarray:
    """Preview image: first three feature channels as (H, W, 3) uint8."""
    img = np.asarray(out.features, dtype=np.float64)
    return to_rgb8(img.reshape(camera.height, camera.width, -1))


def orbit_cameras(
    center,
    radius: float,
    count: int,
    elevation: float = 0.3,
    vertical_fov: float = 0.8,
    resolution: int = 256,
    start_azimuth: float = 0.0,
    bound: float | None = None,
) -> list:
    """``count`` cameras on a circle around ``center``, equal azimuth steps.

    ``bound`` is the content radius around ``center``; it sets a tight
    near/far slab (rays are marched between the camera's near and far, so a
    tight slab spends samples where the content is).  Default: the full
    orbit radius.
    """
    if count < 1:
        raise SceneError("orbit needs at least one camera")
    center = np.asarray(center, dtype=np.float64)
    if bound is None:
        bound = radius
    cams = []
    for i in range(count):
        a = start_azimuth + 2.0 * np.pi * i / count
        offset = radius * np.array([
            np.cos(elevation) * np.sin(a),
            np.sin(elevation),
            np.cos(elevation) * np.cos(a),
        ])
        cams.append(Camera(
            position=center + offset,
            look_at=center,
            vertical_fov=vertical_fov,
            width=resolution,
            height=resolution,
            near=max(0.05, radius - bound),
            far=radius + bound,
        ))
    return cams


# ---------------------------------------------------------------------------
# scene model

@dataclass
class Placement:
    """Rigid+uniform-scale transform: world = scale * R @ local + t."""

    rotation: np.ndarray = dc_field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = dc_field(default_factory=lambda: np.zeros(3))
    scale: float = 1.0

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64)
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.rotation.shape != (3, 3):
            raise SceneError(f"rotation must be (3, 3), got {self.rotation.shape}")
        if self.translation.shape != (3,):
            raise SceneError(f"translation must be (3,), got {self.translation.shape}")
        err = np.abs(self.rotation @ self.rotation.T - np.eye(3)).max()
        if err > 1e-6 or abs(np.linalg.det(self.rotation) - 1.0) > 1e-6:
            raise SceneError("rotation must be orthonormal with det +1")
        if not self.scale > 0.0:
            raise SceneError(f"scale must be positive, got {self.scale}")

    def is_identity(self) -> bool:
        return (self.scale == 1.0
                and np.array_equal(self.rotation, np.eye(3))
                and not self.translation.any())

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return self.scale * points @ self.rotation.T + self.translation

    def to_local(self, points: np.ndarray) -> np.ndarray:
        return (points - self.translation) @ self.rotation / self.scale


@dataclass
class AvatarItem:
    """An avatar in the scene, optionally animated by a clip."""

    avatar: Avatar
    placement: Placement = dc_field(default_factory=Placement)
    pose: BodyParams | None = None  # None = rest pose
    clip: MotionClip | None = None

    def pose_at(self, frame: int) -> BodyParams:
        if self.clip is not None:
            return self.clip.frames[min(frame, len(self.clip) - 1)]
        if self.pose is not None:
            return self.pose
        return BodyParams.identity(self.avatar.body)


@dataclass
class MeshItem:
    """A static triangle mesh rendered as a constant-density surface shell.

    Any sample within ``shell_width`` of the mesh (vertex distance, so
    assets should be tessellated finer than the shell) contributes
    ``density`` with a constant feature vector.
    """

    vertices: np.ndarray
    faces: np.ndarray
    feature: np.ndarray
    placement: Placement = dc_field(default_factory=Placement)
    shell_width: float = 0.02
    density: float = 80.0

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces)
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise SceneError(f"vertices must be (N, 3), got {self.vertices.shape}")
        if self.shell_width <= 0.0 or self.density <= 0.0:
            raise SceneError("shell_width and density must be positive")
        self._tree = None

    def tree(self) -> cKDTree:
        if self._tree is None:
            self._tree = cKDTree(self.vertices)
        return self._tree


@dataclass
class Scene:
    items: list

    def __post_init__(self):
        if len(self.items) < 1:
            raise SceneError("scene needs at least one item")


# ---------------------------------------------------------------------------
# composition

def _composite(tau, feat, delta, background, m, n):
    """Emission-absorption quadrature (same math as the field renderer)."""
    s = tau * delta
    trans = np.exp(-np.concatenate(
        [np.zeros((m, 1)), np.cumsum(s, axis=1)], axis=1))
    alpha = -np.expm1(-s)
    weights = trans[:, :n] * alpha
    out = np.einsum("mn,mnc->mc", weights, feat)
    opacity = 1.0 - trans[:, n]
    if background is not None:
        out = out + trans[:, n:] * np.asarray(background, dtype=np.float64)
    return RenderOutput(features=out, opacity=opacity, cache=None)


def _render_items(items, poses, camera, n_samples, background) -> RenderOutput:
    """Shared ray march through every (item, pose) pair.

    Single avatar at identity placement short-circuits to the plain posed
    render so composition is exactly transparent in that case.
    """
    if len(items) == 1 and isinstance(items[0], AvatarItem) \
            and items[0].placement.is_identity():
        return render_posed(items[0].avatar, poses[0], camera,
                            n_samples, background)

    channels = None
    for item in items:
        if isinstance(item, AvatarItem):
            c = item.avatar.field.config.channels
        else:
            c = item.feature.shape[0]
        if channels is None:
            channels = c
        elif c != channels:
            raise SceneError(f"item feature dims disagree: {c} != {channels}")

    rays = generate_rays(camera)
    t, delta = sample_along_rays(rays, n_samples, None)
    m, n = t.shape
    positions = rays.origins[:, None, :] + t[..., None] * rays.directions[:, None, :]
    flat = positions.reshape(m * n, 3)

    tau_total = np.zeros(m * n)
    feat_acc = np.zeros((m * n, channels))
    for item, pose in zip(items, poses):
        local = item.placement.to_local(flat)
        if isinstance(item, AvatarItem):
            mesh = skin(item.avatar.body, pose)
            index = VertexIndex(mesh.vertices)
            tau_i, feat_i = deform_sample(local, mesh, item.avatar.field,
                                          item.avatar.net, index)
        else:
            dist, _ = item.tree().query(local)
            tau_i = np.where(dist <= item.shell_width, item.density, 0.0)
            feat_i = np.broadcast_to(item.feature, (m * n, channels))
        # densities are per local unit length; rays march in world units
        tau_w = np.asarray(tau_i, dtype=np.float64) / item.placement.scale
        tau_total = tau_total + tau_w
        feat_acc = feat_acc + tau_w[:, None] * np.asarray(feat_i, dtype=np.float64)

    safe = np.where(tau_total > 0.0, tau_total, 1.0)
    feat = (feat_acc / safe[:, None]).reshape(m, n, channels)
    return _composite(tau_total.reshape(m, n), feat, delta, background, m, n)


def render_composed(
    scene: Scene,
    camera: Camera,
    n_samples: int = 64,
    background: np.ndarray | None = None,
    frame: int = 0,
) -> RenderOutput:
    """Render every scene item into one frame along shared rays."""
    poses = [item.pose_at(frame) if isinstance(item, AvatarItem) else None
             for item in scene.items]
    return _render_items(scene.items, poses, camera, n_samples, background)


def frame_scene(scene: Scene, margin: float = 1.25):
    """(center, bound) covering every item's world extent at frame 0."""
    points = []
    for item in scene.items:
        if isinstance(item, AvatarItem):
            mesh = skin(item.avatar.body, item.pose_at(0))
            points.append(item.placement.to_world(mesh.vertices))
        else:
            points.append(item.placement.to_world(item.vertices))
    pts = np.concatenate(points)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = 0.5 * (lo + hi)
    bound = max(0.5 * float(np.linalg.norm(hi - lo)) * margin, 1e-3)
    return center, bound


# ---------------------------------------------------------------------------
# frame sequences and the replay manifest

def _sequence_length(scene: Scene, cameras) -> int:
    if len(cameras) < 1:
        raise SceneError("camera path is empty")
    clip_len = max((len(item.clip) for item in scene.items
                    if isinstance(item, AvatarItem) and item.clip is not None),
                   default=1)
    if len(cameras) == 1:
        return clip_len
    if clip_len in (1, len(cameras)):
        return len(cameras)
    raise SceneError(
        f"camera path length {len(cameras)} != clip length {clip_len}")


def _fmt(values) -> str:
    return " ".join(f"{float(v):.17g}" for v in np.asarray(values).reshape(-1))


def _camera_line(camera: Camera) -> str:
    return (f"camera {_fmt(camera.position)} {_fmt(camera.look_at)} "
            f"{_fmt(camera.up)} {camera.vertical_fov:.17g} "
            f"{camera.width} {camera.height} "
            f"{camera.near:.17g} {camera.far:.17g}")


def _parse_camera_line(tokens) -> Camera:
    vals = [float(v) for v in tokens]
    if len(vals) != 14:
        raise SceneError(f"camera record needs 14 values, got {len(vals)}")
    return Camera(
        position=np.array(vals[0:3]), look_at=np.array(vals[3:6]),
        up=np.array(vals[6:9]), vertical_fov=vals[9],
        width=int(vals[10]), height=int(vals[11]),
        near=vals[12], far=vals[13])


def render_sequence(
    scene: Scene,
    cameras,
    out_dir,
    n_samples: int = 64,
    background: np.ndarray | None = None,
    workers: int = 1,
) -> list:
    """Render numbered PPM frames plus a manifest that replays them.

    One camera renders every clip frame; a camera path matching the clip
    length (or a static one-frame scene) renders one frame per camera.
    Returns the frame paths.  The manifest records n_samples, background,
    and each frame's camera and per-item body parameters, which is all the
    non-asset state a render consumes: `replay_manifest` reproduces the
    frames byte-exactly from it.

    Frames are independent; ``workers`` > 1 renders them on a thread pool
    (output is identical either way).
    """
    total = _sequence_length(scene, cameras)
    os.makedirs(out_dir, exist_ok=True)
    frame_cameras = [cameras[min(f, len(cameras) - 1)] for f in range(total)]
    frame_poses = [
        [item.pose_at(f) if isinstance(item, AvatarItem) else None
         for item in scene.items]
        for f in range(total)
    ]

    def render_frame(f: int) -> bytes:
        out = _render_items(scene.items, frame_poses[f], frame_cameras[f],
                            n_samples, background)
        img = np.asarray(out.features, dtype=np.float64)
        shape = (frame_cameras[f].height, frame_cameras[f].width, -1)
        return encode_ppm(to_rgb8(img.reshape(shape)))

    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            encoded = list(pool.map(render_frame, range(total)))
    else:
        encoded = [render_frame(f) for f in range(total)]

    lines = [MANIFEST_MAGIC, f"frames {total}", f"n_samples {n_samples}",
             "background " + ("none" if background is None else _fmt(background))]
    paths = []
    for f in range(total):
        path = os.path.join(out_dir, f"frame_{f:06d}.ppm")
        with open(path, "wb") as fh:
            fh.write(encoded[f])
        paths.append(path)
        lines.append(f"frame {f}")
        lines.append(_camera_line(frame_cameras[f]))
        for i, pose in enumerate(frame_poses[f]):
            if pose is not None:
                lines.append(f"pose {i} {pose.global_scale:.17g} "
                             f"{_fmt(pose.global_translation)} "
                             f"{_fmt(pose.shape)} {_fmt(pose.pose)}")
    with open(os.path.join(out_dir, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")
    return paths


def replay_manifest(manifest_path, scene: Scene, out_dir=None) -> list:
    """Re-render a sequence from its manifest.

    Poses and cameras come from the manifest; fields, bodies, placements
    and mesh assets come from ``scene``.  Returns the encoded PPM bytes per
    frame; with ``out_dir`` the frames are also written.
    """
    with open(manifest_path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or lines[0] != MANIFEST_MAGIC:
        raise SceneError(f"not a manifest: expected {MANIFEST_MAGIC!r} header")
    n_samples = None
    background = None
    frames = []  # (camera, {item_index: BodyParams})
    for ln in lines[1:]:
        key, _, rest = ln.partition(" ")
        tokens = rest.split()
        if key == "frames":
            continue
        if key == "n_samples":
            n_samples = int(rest)
        elif key == "background":
            background = None if rest == "none" else np.array(
                [float(v) for v in tokens])
        elif key == "frame":
            frames.append([None, {}])
        elif key == "camera":
            frames[-1][0] = _parse_camera_line(tokens)
        elif key == "pose":
            idx = int(tokens[0])
            vals = np.array([float(v) for v in tokens[1:]])
            item = scene.items[idx]
            if not isinstance(item, AvatarItem):
                raise SceneError(f"pose record for non-avatar item {idx}")
            s = item.avatar.body.shape_dim
            k = item.avatar.body.joint_count
            if vals.size != 4 + s + 3 * k:
                raise SceneError(f"pose record for item {idx}: expected "
                                 f"{4 + s + 3 * k} values, got {vals.size}")
            frames[-1][1][idx] = BodyParams(
                shape=vals[4:4 + s],
                pose=vals[4 + s:].reshape(k, 3),
                global_scale=float(vals[0]),
                global_translation=vals[1:4])
        else:
            raise SceneError(f"unknown manifest record {key!r}")
    if n_samples is None:
        raise SceneError("manifest missing n_samples")
    encoded = []
    for f, (camera, pose_map) in enumerate(frames):
        if camera is None:
            raise SceneError(f"manifest frame {f} has no camera")
        poses = []
        for i, item in enumerate(scene.items):
            if isinstance(item, AvatarItem):
                poses.append(pose_map.get(i, item.pose_at(f)))
            else:
                poses.append(None)
        out = _render_items(scene.items, poses, camera, n_samples, background)
        data = encode_ppm(to_rgb8(np.asarray(out.features, dtype=np.float64)
                                  .reshape(camera.height, camera.width, -1)))
        encoded.append(data)
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, f"frame_{f:06d}.ppm"), "wb") as fh:
                fh.write(data)
    return encoded


# ---------------------------------------------------------------------------
# scene and mesh files

def load_obj(path):
    """Minimal OBJ reader: v/f records, polygons fan-triangulated.

    Face indices may carry /vt/vn suffixes (ignored); negative indices are
    relative to the vertices seen so far, as in the OBJ spec.
    """
    vertices = []
    faces = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, 1):
            parts = raw.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                if len(parts) < 4:
                    raise SceneError(f"{path}:{line_no}: short vertex record")
                vertices.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    head = tok.split("/")[0]
                    i = int(head)
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                if len(idx) < 3:
                    raise SceneError(f"{path}:{line_no}: face needs 3+ vertices")
                for a, b in zip(idx[1:-1], idx[2:]):
                    faces.append([idx[0], a, b])
    v = np.asarray(vertices, dtype=np.float64)
    f = np.asarray(faces, dtype=np.int32).reshape(-1, 3)
    if len(v) == 0:
        raise SceneError(f"{path}: no vertices")
    if f.size and (f.min() < 0 or f.max() >= len(v)):
        raise SceneError(f"{path}: face index out of range")
    return v, f


def _parse_floats(text: str, n: int, what: str) -> np.ndarray:
    vals = [float(v) for v in text.split(",")]
    if len(vals) != n:
        raise SceneError(f"{what} needs {n} comma-separated values, got {len(vals)}")
    return np.array(vals)


def load_scene(path) -> Scene:
    """Scene description: one item per line, key=value options.

        avatar checkpoint=a.ckpt body=b.sklf [clip=walk.motion]
               [rotation=r00,...,r22] [translation=x,y,z] [scale=s]
        mesh obj=ground.obj feature=v0,v1,... [shell=w] [density=d]
               [rotation=...] [translation=...] [scale=...]

    Relative paths resolve against the scene file's directory.
    """
    base = os.path.dirname(os.path.abspath(path))

    def resolve(p):
        return p if os.path.isabs(p) else os.path.join(base, p)

    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0] != SCENE_MAGIC:
        raise SceneError(f"not a scene file: expected {SCENE_MAGIC!r} header")
    items = []
    for ln in lines[1:]:
        kind, _, rest = ln.partition(" ")
        opts = {}
        for tok in rest.split():
            if "=" not in tok:
                raise SceneError(f"scene option {tok!r} is not key=value")
            k, _, v = tok.partition("=")
            opts[k] = v
        placement = Placement(
            rotation=_parse_floats(opts.pop("rotation"), 9, "rotation").reshape(3, 3)
            if "rotation" in opts else np.eye(3),
            translation=_parse_floats(opts.pop("translation"), 3, "translation")
            if "translation" in opts else np.zeros(3),
            scale=float(opts.pop("scale", 1.0)),
        )
        if kind == "avatar":
            try:
                ckpt = resolve(opts.pop("checkpoint"))
                body_path = resolve(opts.pop("body"))
            except KeyError as err:
                raise SceneError(f"avatar item missing {err.args[0]}") from None
            avatar = Avatar.load(ckpt, body_path)
            clip = None
            if "clip" in opts:
                clip = load_motion(resolve(opts.pop("clip")), avatar.body)
            if opts:
                raise SceneError(f"unknown avatar options {sorted(opts)}")
            items.append(AvatarItem(avatar=avatar, placement=placement, clip=clip))
        elif kind == "mesh":
            try:
                obj = resolve(opts.pop("obj"))
                feature = np.array([float(v) for v in opts.pop("feature").split(",")])
            except KeyError as err:
                raise SceneError(f"mesh item missing {err.args[0]}") from None
            vertices, faces = load_obj(obj)
            item = MeshItem(
                vertices=vertices, faces=faces, feature=feature,
                placement=placement,
                shell_width=float(opts.pop("shell", 0.02)),
                density=float(opts.pop("density", 80.0)),
            )
            if opts:
                raise SceneError(f"unknown mesh options {sorted(opts)}")
            items.append(item)
        else:
            raise SceneError(f"unknown scene item kind {kind!r}")
    return Scene(items=items)
